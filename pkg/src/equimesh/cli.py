"""Command-line interface.

Exit codes: 0 success, 2 validation/format error, 3 numerical failure.
Config files are JSON with optional ``monitor``, ``adapt`` and ``train``
blocks; sensible defaults apply when the file or a block is missing.
"""

from __future__ import annotations

import functools
import json
import sys

import click

from .errors import EquimeshError, FormatError
from .fem import HELMHOLTZ_SUITE, POISSON_TABLE_SUITE, error_reduction, get_problem, solve
from .mesh import load_mesh, save_mesh, tangling_ratio
from .neural import DeformModel, load_model, save_model
from .pipeline import (
    AdaptConfig,
    MonitorConfig,
    adapt,
    gen_training_corpus,
    run_table1,
)
from .render import render_svg
from .training import PatchCorpus, TrainConfig, train


def _guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except EquimeshError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(exc.exit_code)

    return wrapper


def _load_config(path):
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}")
    except OSError as exc:
        raise FormatError(f"{path}: {exc}")


def _adapt_config(config, mover):
    block = dict(config.get("adapt", {}))
    block["mover"] = mover
    block["monitor"] = config.get("monitor", {})
    return AdaptConfig.from_dict(block)


@click.group()
def main():
    """Patch-local mesh movement for triangular meshes."""


@main.command("gen-data")
@click.option("--scale", type=click.Choice(["desk", "paper"]), default="desk")
@click.option("--seed", type=int, default=0)
@click.option("--out", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@_guarded
def gen_data_cmd(scale, seed, out, config_path):
    """Generate the four-field training corpus."""
    config = _load_config(config_path)
    monitor = MonitorConfig.from_dict(config.get("monitor", {}))
    corpus = gen_training_corpus(scale=scale, seed=seed, out=out, monitor=monitor)
    click.echo(
        f"wrote {out}: {len(corpus.instances)} instances, "
        f"{corpus.n_nodes} nodes, {len(corpus.samples)} samples"
    )


@main.command("train")
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--out-model", required=True, type=click.Path())
@click.option("--out-history", type=click.Path(), default=None)
@_guarded
def train_cmd(corpus_path, config_path, out_model, out_history):
    """Train the patch mover on a corpus."""
    config = _load_config(config_path)
    block = dict(config.get("train", {}))
    arch = {
        "hidden": block.pop("hidden", 64),
        "blocks": block.pop("blocks", 2),
        "heads": block.pop("heads", 2),
    }
    tconf = TrainConfig(**block)
    corpus = PatchCorpus.from_json(corpus_path)
    model = DeformModel.create(seed=tconf.seed, **arch)
    model, history = train(model, corpus, tconf)
    save_model(model, out_model)
    history_path = out_history or out_model + ".history.json"
    with open(history_path, "w", encoding="utf-8") as fh:
        json.dump(history, fh)
        fh.write("\n")
    click.echo(
        f"trained {len(history['train']) - 1} epochs: "
        f"train {history['train'][0]:.6g} -> {history['train'][-1]:.6g}; "
        f"model {out_model}, history {history_path}"
    )


@main.command("adapt")
@click.option("--mesh", "mesh_path", required=True, type=click.Path(exists=True))
@click.option("--field", required=True)
@click.option("--mover", type=click.Choice(["direct", "neural"]), default="direct")
@click.option("--model", "model_path", type=click.Path(exists=True), default=None)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--out-mesh", required=True, type=click.Path())
@click.option("--report", "report_path", type=click.Path(), default=None)
@_guarded
def adapt_cmd(mesh_path, field, mover, model_path, config_path, out_mesh, report_path):
    """Adapt a mesh toward equidistribution of the named field's monitor."""
    mesh = load_mesh(mesh_path)
    config = _adapt_config(_load_config(config_path), mover)
    model = load_model(model_path) if model_path else None
    adapted, report = adapt(mesh, field, config, model)
    save_mesh(adapted, out_mesh)
    if report_path:
        report.write_csv(report_path)
    click.echo(
        f"adapted in {report.termination_epoch} epochs (best epoch "
        f"{report.best_epoch}): uniformity {report.uniformity_initial:.6g} -> "
        f"{report.uniformity_final:.6g}, TR {report.final_tangling_ratio:.4f}"
    )


@main.command("solve")
@click.option("--problem", required=True)
@click.option("--mesh", "mesh_path", required=True, type=click.Path(exists=True))
@click.option("--out-field", required=True, type=click.Path())
@_guarded
def solve_cmd(problem, mesh_path, out_field):
    """Solve a registered problem; writes the mesh with the solution field 'u'."""
    mesh = load_mesh(mesh_path)
    u = solve(problem, mesh)
    save_mesh(mesh.with_field("u", u), out_field)
    click.echo(f"solved {problem} on {mesh.n_elements} elements -> {out_field}")


@main.command("eval")
@click.option("--problem", required=True)
@click.option("--coarse", "coarse_path", required=True, type=click.Path(exists=True))
@click.option("--adapted", "adapted_path", required=True, type=click.Path(exists=True))
@_guarded
def eval_cmd(problem, coarse_path, adapted_path):
    """Error reduction of the adapted mesh against the coarse one."""
    coarse = load_mesh(coarse_path)
    adapted = load_mesh(adapted_path)
    er = error_reduction(problem, coarse, adapted)
    click.echo(f"ER = {er:.4f}% (problem {get_problem(problem).solution_text}, "
               f"TR = {tangling_ratio(adapted):.4f})")


@main.command("table1")
@click.option("--suite", type=click.Choice(["helmholtz", "poisson", "all"]),
              default="helmholtz")
@click.option("--mover", type=click.Choice(["direct", "neural", "none"]),
              default="direct")
@click.option("--model", "model_path", type=click.Path(exists=True), default=None)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--out", required=True, type=click.Path())
@_guarded
def table1_cmd(suite, mover, model_path, config_path, out):
    """Run the steady-state experiment suite and write a CSV of ER/TR rows."""
    problems = {
        "helmholtz": HELMHOLTZ_SUITE,
        "poisson": POISSON_TABLE_SUITE,
        "all": POISSON_TABLE_SUITE + HELMHOLTZ_SUITE,
    }[suite]
    model = load_model(model_path) if model_path else None
    config = None
    raw = _load_config(config_path)
    if raw and mover != "none":
        config = _adapt_config(raw, mover)
    rows = run_table1(problems, mover=mover, out=out, model=model, config=config)
    for row in rows:
        click.echo(
            f"{row['problem']:10s} {row['solution']:40s} "
            f"ER {row['ER_percent']:8.3f}%  TR {row['TR']:.4f}"
        )
    click.echo(f"wrote {out}")


@main.command("plot")
@click.option("--mesh", "mesh_path", required=True, type=click.Path(exists=True))
@click.option("--field", default=None)
@click.option("--out", required=True, type=click.Path())
@_guarded
def plot_cmd(mesh_path, field, out):
    """Render a mesh (optionally colored by a nodal field) to SVG."""
    mesh = load_mesh(mesh_path)
    render_svg(mesh, field=field, out=out)
    click.echo(f"wrote {out}")


if __name__ == "__main__":
    main()
