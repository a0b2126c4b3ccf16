import json

import numpy as np
import pytest
from click.testing import CliRunner

from equimesh import generate_unit_square_mesh, load_mesh, save_mesh, solve
from equimesh.cli import main


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def solved_mesh_path(tmp_path):
    mesh = generate_unit_square_mesh(0.15)
    mesh = mesh.with_field("u", solve("helmholtz-cos2piy", mesh))
    path = tmp_path / "mesh.json"
    save_mesh(mesh, path)
    return path


def test_gen_data_and_train_and_adapt(runner, tmp_path, solved_mesh_path):
    corpus = tmp_path / "corpus.json"
    result = runner.invoke(main, ["gen-data", "--scale", "desk", "--seed", "3", "--out", str(corpus)])
    assert result.exit_code == 0, result.output
    assert corpus.exists()

    config = tmp_path / "config.json"
    config.write_text(json.dumps({
        "train": {"hidden": 8, "blocks": 1, "heads": 1, "max_epochs": 2, "seed": 1},
        "adapt": {"max_epochs": 3},
        "monitor": {"alpha": 5.0},
    }))
    model = tmp_path / "model.bin"
    result = runner.invoke(main, [
        "train", "--corpus", str(corpus), "--config", str(config),
        "--out-model", str(model),
    ])
    assert result.exit_code == 0, result.output
    assert model.exists()
    history = json.loads((tmp_path / "model.bin.history.json").read_text())
    assert len(history["train"]) == 3

    out_mesh = tmp_path / "adapted.json"
    report = tmp_path / "report.csv"
    result = runner.invoke(main, [
        "adapt", "--mesh", str(solved_mesh_path), "--field", "u",
        "--mover", "neural", "--model", str(model), "--config", str(config),
        "--out-mesh", str(out_mesh), "--report", str(report),
    ])
    assert result.exit_code == 0, result.output
    assert out_mesh.exists() and report.exists()


def test_adapt_direct_and_eval(runner, tmp_path, solved_mesh_path):
    out_mesh = tmp_path / "adapted.json"
    result = runner.invoke(main, [
        "adapt", "--mesh", str(solved_mesh_path), "--field", "u",
        "--mover", "direct", "--out-mesh", str(out_mesh),
    ])
    assert result.exit_code == 0, result.output

    coarse = tmp_path / "coarse.json"
    save_mesh(generate_unit_square_mesh(0.15), coarse)
    result = runner.invoke(main, [
        "eval", "--problem", "helmholtz-cos2piy",
        "--coarse", str(coarse), "--adapted", str(out_mesh),
    ])
    assert result.exit_code == 0, result.output
    assert "ER =" in result.output


def test_solve_writes_field(runner, tmp_path):
    mesh_path = tmp_path / "m.json"
    save_mesh(generate_unit_square_mesh(0.2), mesh_path)
    out = tmp_path / "solved.json"
    result = runner.invoke(main, [
        "solve", "--problem", "poisson-sinpix-sinpiy",
        "--mesh", str(mesh_path), "--out-field", str(out),
    ])
    assert result.exit_code == 0, result.output
    solved = load_mesh(out)
    assert "u" in solved.fields


def test_plot(runner, tmp_path):
    mesh_path = tmp_path / "m.json"
    save_mesh(generate_unit_square_mesh(0.3), mesh_path)
    out = tmp_path / "m.svg"
    result = runner.invoke(main, ["plot", "--mesh", str(mesh_path), "--out", str(out)])
    assert result.exit_code == 0, result.output
    assert out.read_text().startswith("<svg")


def test_validation_failure_exit_code(runner, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"nodes": [[0, 0], [1, 0]], "elements": [[0, 1, 7]]}))
    result = runner.invoke(main, [
        "solve", "--problem", "poisson-sinpix-sinpiy",
        "--mesh", str(bad), "--out-field", str(tmp_path / "o.json"),
    ])
    assert result.exit_code == 2
    assert "error:" in result.output


def test_unknown_problem_exit_code(runner, tmp_path):
    mesh_path = tmp_path / "m.json"
    save_mesh(generate_unit_square_mesh(0.3), mesh_path)
    result = runner.invoke(main, [
        "solve", "--problem", "poisson-unknown",
        "--mesh", str(mesh_path), "--out-field", str(tmp_path / "o.json"),
    ])
    assert result.exit_code == 2


def test_table1_noop(runner, tmp_path):
    out = tmp_path / "rows.csv"
    result = runner.invoke(main, ["table1", "--suite", "helmholtz", "--mover", "none", "--out", str(out)])
    assert result.exit_code == 0, result.output
    lines = out.read_text().strip().splitlines()
    assert len(lines) == 6  # header + 5 problems


def test_numerical_failure_exit_code(runner):
    import click

    from equimesh.cli import _guarded
    from equimesh.errors import SolverError

    @click.command()
    @_guarded
    def boom():
        raise SolverError("synthetic numerical failure")

    result = runner.invoke(boom, [])
    assert result.exit_code == 3
