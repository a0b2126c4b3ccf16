"""End-to-end adaptation loop, training-data generation and experiment runner.

One adaptation epoch: build the monitor, move every interior node (direct
descent or the learned model, boundary nodes never move), reject the epoch if
it tangled, then carry the monitor's raw derivative norms to the moved nodes
by PL interpolation and re-normalize them into the next epoch's density. The
loop stops when the whole-mesh uniformity metric stops decreasing (or at the
epoch cap) and returns the best mesh seen, which also covers the case where
later epochs degrade the mesh.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field as _field

import numpy as np
import torch

from .direct import DirectMoveConfig, direct_move
from .errors import AdaptationError, ValidationError
from .fem import error_reduction, get_problem, solve
from .interp import LinearInterpolant, delaunay
from .mesh import (
    build_interior_patches,
    generate_unit_square_mesh,
    perturb_nodes,
    tangling_ratio,
)
from .metric import global_uniformity
from .monitor import build_monitor, monitor_from_raw
from .training import CorpusInstance, PatchCorpus, _Encoding, _make_record

MOVERS = ("direct", "neural", "none")

SCALE_EDGE_LENGTH = {"desk": 0.1, "paper": 0.04}
_AUGMENT_COPIES = 2  # perturbed copies per field, on top of the base mesh
_PERTURB_FRACTION = 0.3

TRAINING_FIELDS = {
    "u1": lambda x, y: 10.0 * np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y),
    "u2": lambda x, y: -(5.0 / np.pi) * np.sin(np.pi * x) * np.sin(np.pi * y),
    "u3": lambda x, y: 10.0
    * (np.sin(5 * x) ** 10 + np.cos(10 + 25 * x * y) * np.cos(5 * x)),
    "u4": lambda x, y: 10.0 * (1.0 - np.exp(x) * np.cos(4 * np.pi * y)),
}


@dataclass
class MonitorConfig:
    alpha: float = 5.0
    variant: str = "hessian"
    log_transform: bool = False

    @classmethod
    def from_dict(cls, data):
        unknown = set(data) - {"alpha", "variant", "log_transform"}
        if unknown:
            raise ValidationError(f"unknown monitor config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class AdaptConfig:
    max_epochs: int = 10
    mover: str = "direct"
    monitor: MonitorConfig = _field(default_factory=MonitorConfig)
    rollback_on_tangle: bool = True
    direct: DirectMoveConfig = _field(default_factory=DirectMoveConfig)

    def __post_init__(self):
        if self.max_epochs < 1:
            raise ValidationError("max_epochs must be >= 1")
        if self.mover not in ("direct", "neural"):
            raise ValidationError("mover must be 'direct' or 'neural'")

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        monitor = MonitorConfig.from_dict(data.pop("monitor", {}))
        direct_keys = {"step_size", "inner_iters", "max_step_fraction"}
        direct = DirectMoveConfig(**{k: data.pop(k) for k in list(data) if k in direct_keys})
        unknown = set(data) - {"max_epochs", "mover", "rollback_on_tangle"}
        if unknown:
            raise ValidationError(f"unknown adapt config keys: {sorted(unknown)}")
        return cls(monitor=monitor, direct=direct, **data)


@dataclass
class AdaptReport:
    uniformity_initial: float
    uniformity_per_epoch: list
    wall_ms_per_epoch: list
    termination_epoch: int
    best_epoch: int
    uniformity_final: float
    final_tangling_ratio: float
    error_reduction: dict = _field(default_factory=dict)

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "global_uniformity", "wall_ms"])
            writer.writerow([0, repr(self.uniformity_initial), repr(0.0)])
            for e, (u, ms) in enumerate(
                zip(self.uniformity_per_epoch, self.wall_ms_per_epoch), start=1
            ):
                writer.writerow([e, repr(u), repr(ms)])


def _neural_epoch(mesh, mon, model):
    patches = build_interior_patches(mesh)
    records = [_make_record(mesh, mon.density, p, 0) for p in patches]
    enc = _Encoding(records, {0: None})
    with torch.no_grad():
        out01 = model.forward_batch(
            enc.node_feat, enc.edge_src, enc.edge_dst, enc.edge_vec, enc.n_patches
        )
        centers = enc.lo + out01 * (enc.hi - enc.lo)
    nodes = mesh.nodes.copy()
    nodes[mesh.interior_nodes] = centers.numpy()
    return mesh.with_nodes(nodes)


def adapt(mesh, field, config=None, model=None):
    """Iteratively move interior nodes toward equidistribution of the monitor.

    Returns the best mesh seen (by whole-mesh uniformity) together with an
    :class:`AdaptReport`. With ``rollback_on_tangle`` a tangled candidate ends
    the loop at the last valid epoch instead of raising.
    """
    config = config or AdaptConfig()
    if config.mover == "neural" and model is None:
        raise ValidationError("neural mover requires a model")
    mesh.field(field)
    if tangling_ratio(mesh) > 0.0:
        raise ValidationError("adapt requires a valid (untangled) input mesh")

    mon = build_monitor(
        mesh,
        field,
        alpha=config.monitor.alpha,
        variant=config.monitor.variant,
        log_transform=config.monitor.log_transform,
    )
    raw = mon.raw_norm
    current = mesh
    uniformity_initial = global_uniformity(mesh, mon)
    best_mesh, best_u, best_epoch = mesh, uniformity_initial, 0
    previous = uniformity_initial
    per_epoch, walls = [], []
    termination_epoch = 0

    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        if config.mover == "direct":
            candidate = direct_move(current, mon, config.direct)
        else:
            candidate = _neural_epoch(current, mon, model)
        if tangling_ratio(candidate) > 0.0:
            if not config.rollback_on_tangle:
                raise AdaptationError(f"epoch {epoch} produced a tangled mesh")
            break  # revert to the last valid epoch and stop
        interpolant = LinearInterpolant(delaunay(current.nodes), raw)
        raw = interpolant(candidate.nodes)
        mon = monitor_from_raw(
            raw, config.monitor.alpha, config.monitor.variant, config.monitor.log_transform
        )
        uniformity = global_uniformity(candidate, mon)
        per_epoch.append(uniformity)
        walls.append((time.perf_counter() - t0) * 1e3)
        termination_epoch = epoch
        current = candidate
        if uniformity < best_u:
            best_mesh, best_u, best_epoch = candidate, uniformity, epoch
        if uniformity >= previous:
            break
        previous = uniformity

    report = AdaptReport(
        uniformity_initial=uniformity_initial,
        uniformity_per_epoch=per_epoch,
        wall_ms_per_epoch=walls,
        termination_epoch=termination_epoch,
        best_epoch=best_epoch,
        uniformity_final=best_u,
        final_tangling_ratio=tangling_ratio(best_mesh),
    )
    return best_mesh, report


def gen_training_corpus(scale="desk", seed=0, out=None, monitor=None):
    """Build the four-field training corpus with perturbation augmentation.

    Every field is evaluated on a base quasi-uniform mesh plus perturbed
    copies; each instance stores the field, its derivative norms and density,
    and every interior node becomes a training sample. Deterministic for a
    fixed seed.
    """
    if scale not in SCALE_EDGE_LENGTH:
        raise ValidationError(f"scale must be one of {sorted(SCALE_EDGE_LENGTH)}")
    monitor = monitor or MonitorConfig()
    edge = SCALE_EDGE_LENGTH[scale]
    base = generate_unit_square_mesh(edge)
    seed_rng = np.random.default_rng(seed)
    perturb_seeds = seed_rng.integers(0, 2**63 - 1, size=len(TRAINING_FIELDS) * _AUGMENT_COPIES)

    instances = []
    samples = []
    k = 0
    for name, fn in TRAINING_FIELDS.items():
        for copy in range(_AUGMENT_COPIES + 1):
            if copy == 0:
                m = base
            else:
                m = perturb_nodes(base, _PERTURB_FRACTION * edge, int(perturb_seeds[k]))
                k += 1
            values = fn(m.nodes[:, 0], m.nodes[:, 1])
            m = m.with_field(name, values)
            mon = build_monitor(
                m, name, alpha=monitor.alpha, variant=monitor.variant,
                log_transform=monitor.log_transform,
            )
            idx = len(instances)
            instances.append(
                CorpusInstance(m, name, values, mon.raw_norm, mon.density)
            )
            samples.extend((idx, int(n)) for n in m.interior_nodes)

    corpus = PatchCorpus(
        instances,
        np.asarray(samples, dtype=np.int64),
        {
            "alpha": monitor.alpha,
            "variant": monitor.variant,
            "log_transform": monitor.log_transform,
        },
        scale,
        seed,
    )
    if out is not None:
        corpus.to_json(out)
    return corpus


def run_table1(problems, mover="direct", out=None, model=None, config=None,
               edge_length=0.04):
    """Solve / adapt / re-solve each manufactured problem and tabulate ER and TR.

    ``mover="none"`` skips adaptation (a debugging baseline whose error
    reduction is exactly zero).
    """
    if mover not in MOVERS:
        raise ValidationError(f"mover must be one of {MOVERS}")
    coarse = generate_unit_square_mesh(edge_length)
    rows = []
    for key in problems:
        problem = get_problem(key)
        t0 = time.perf_counter()
        u_coarse = solve(problem, coarse)
        meshed = coarse.with_field("u", u_coarse)
        if mover == "none":
            mon = build_monitor(meshed, "u")
            u0 = global_uniformity(meshed, mon)
            adapted, report = meshed, None
            er = 0.0
            epochs, u_final = 0, u0
        else:
            cfg = config or AdaptConfig()
            if cfg.mover != mover:
                cfg = AdaptConfig(
                    max_epochs=cfg.max_epochs,
                    mover=mover,
                    monitor=cfg.monitor,
                    rollback_on_tangle=cfg.rollback_on_tangle,
                    direct=cfg.direct,
                )
            adapted, report = adapt(meshed, "u", cfg, model)
            er = error_reduction(problem, coarse, adapted)
            report.error_reduction[problem.key] = er
            epochs, u0, u_final = (
                report.termination_epoch,
                report.uniformity_initial,
                report.uniformity_final,
            )
        wall_ms = (time.perf_counter() - t0) * 1e3
        rows.append(
            {
                "problem": problem.kind,
                "solution": problem.solution_text,
                "mover": mover,
                "ER_percent": er,
                "TR": tangling_ratio(adapted),
                "epochs": epochs,
                "uniformity_initial": u0,
                "uniformity_final": u_final,
                "wall_ms": wall_ms,
            }
        )
    if out is not None:
        with open(out, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(
                fh,
                fieldnames=[
                    "problem", "solution", "mover", "ER_percent", "TR", "epochs",
                    "uniformity_initial", "uniformity_final", "wall_ms",
                ],
            )
            writer.writeheader()
            for row in rows:
                writer.writerow(
                    {
                        k: (repr(v) if isinstance(v, float) else v)
                        for k, v in row.items()
                    }
                )
    return rows
