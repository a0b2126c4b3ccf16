"""Unsupervised training of the patch mover on the equidistribution objective.

Each training sample is one interior node patch. The model proposes a center
position in the normalized square; after denormalization the incident-element
loads are recomputed with the moved center, the center density coming from
the PL interpolant of the sample's source mesh. The loss is the scaled mean
patch variance, and gradients flow through the decoder/blocks/encoders, the
denormalization map, the signed-area terms, and the interpolant's facet
gradients.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as _field

import numpy as np
import torch

from .errors import TrainingDivergedError, ValidationError
from .mesh import Mesh, build_patch, normalize_patch
from .metric import _rotated_incident
from .monitor import MonitorField, density_interpolant

LAMBDA_DEFAULT = 100.0


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 128
    max_epochs: int = 200
    lam: float = LAMBDA_DEFAULT
    seed: int = 0
    patience: int = 25

    def __post_init__(self):
        if min(self.learning_rate, self.batch_size, self.max_epochs, self.lam) <= 0:
            raise ValidationError("TrainConfig fields must be positive")
        if self.patience < 1:
            raise ValidationError("patience must be >= 1")


@dataclass
class CorpusInstance:
    """One (mesh, field, monitor) snapshot contributing patches to the corpus."""

    mesh: Mesh
    field_name: str
    field_values: np.ndarray
    raw_norm: np.ndarray
    density: np.ndarray


@dataclass
class PatchCorpus:
    instances: list
    samples: np.ndarray  # (S, 2) rows of (instance index, node index)
    monitor: dict = _field(
        default_factory=lambda: {"alpha": 5.0, "variant": "hessian", "log_transform": False}
    )
    scale: str = "desk"
    seed: int = 0

    @property
    def n_nodes(self):
        return int(sum(inst.mesh.n_nodes for inst in self.instances))

    def to_json(self, path):
        doc = {
            "version": 1,
            "scale": self.scale,
            "seed": int(self.seed),
            "monitor": self.monitor,
            "instances": [
                {
                    "field": inst.field_name,
                    "nodes": [[float(x), float(y)] for x, y in inst.mesh.nodes],
                    "elements": [[int(a), int(b), int(c)] for a, b, c in inst.mesh.elements],
                    "field_values": [float(v) for v in inst.field_values],
                    "raw_norm": [float(v) for v in inst.raw_norm],
                    "density": [float(v) for v in inst.density],
                }
                for inst in self.instances
            ],
            "samples": [[int(i), int(n)] for i, n in self.samples],
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh)
            fh.write("\n")

    @classmethod
    def from_json(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        instances = [
            CorpusInstance(
                Mesh(np.asarray(entry["nodes"]), np.asarray(entry["elements"])),
                entry["field"],
                np.asarray(entry["field_values"], dtype=float),
                np.asarray(entry["raw_norm"], dtype=float),
                np.asarray(entry["density"], dtype=float),
            )
            for entry in doc["instances"]
        ]
        samples = np.asarray(doc["samples"], dtype=np.int64).reshape(-1, 2)
        return cls(instances, samples, doc["monitor"], doc["scale"], doc["seed"])


@dataclass
class _SampleRecord:
    instance: int
    coords01: np.ndarray  # (1 + k, 2), center first
    density: np.ndarray  # (1 + k,)
    lo: np.ndarray  # (2,) transform window lows
    hi: np.ndarray  # (2,)
    v1_pos: np.ndarray  # (l, 2) second vertices of incident elements
    v2_pos: np.ndarray  # (l, 2)
    m12: np.ndarray  # (l,) density sum of the two fixed vertices


def _make_record(mesh, density, patch, instance):
    coords01 = normalize_patch(patch, mesh)
    t = patch.transform
    rot = _rotated_incident(mesh, patch)
    return _SampleRecord(
        instance=instance,
        coords01=coords01,
        density=density[patch.node_ids],
        lo=np.array([t[0, 0], t[1, 0]]),
        hi=np.array([t[0, 1], t[1, 1]]),
        v1_pos=mesh.nodes[rot[:, 1]],
        v2_pos=mesh.nodes[rot[:, 2]],
        m12=density[rot[:, 1]] + density[rot[:, 2]],
    )


class _Encoding:
    """Flat tensors for a batch of patch records."""

    def __init__(self, records, interpolants):
        n_patches = len(records)
        nb_counts = [r.coords01.shape[0] - 1 for r in records]
        total_nb = sum(nb_counts)
        feat = np.empty((n_patches + total_nb, 3))
        edge_vec_half = np.empty((total_nb, 2))
        nb_patch = np.empty(total_nb, dtype=np.int64)
        row = 0
        for p, rec in enumerate(records):
            feat[p, :2] = rec.coords01[0]
            feat[p, 2] = rec.density[0]
            k = nb_counts[p]
            feat[n_patches + row : n_patches + row + k, :2] = rec.coords01[1:]
            feat[n_patches + row : n_patches + row + k, 2] = rec.density[1:]
            edge_vec_half[row : row + k] = rec.coords01[1:] - rec.coords01[0]
            nb_patch[row : row + k] = p
            row += k
        nb_rows = np.arange(n_patches, n_patches + total_nb, dtype=np.int64)
        self.n_patches = n_patches
        self.node_feat = torch.from_numpy(feat)
        self.edge_src = torch.from_numpy(np.concatenate([nb_rows, nb_patch]))
        self.edge_dst = torch.from_numpy(np.concatenate([nb_patch, nb_rows]))
        self.edge_vec = torch.from_numpy(np.concatenate([edge_vec_half, edge_vec_half]))
        self.lo = torch.from_numpy(np.stack([r.lo for r in records]))
        self.hi = torch.from_numpy(np.stack([r.hi for r in records]))
        self.r_patch = torch.from_numpy(
            np.repeat(
                np.arange(n_patches, dtype=np.int64),
                [r.v1_pos.shape[0] for r in records],
            )
        )
        self.v1_pos = torch.from_numpy(np.concatenate([r.v1_pos for r in records]))
        self.v2_pos = torch.from_numpy(np.concatenate([r.v2_pos for r in records]))
        self.m12 = torch.from_numpy(np.concatenate([r.m12 for r in records]))
        groups = {}
        for p, rec in enumerate(records):
            groups.setdefault(rec.instance, []).append(p)
        self.groups = [
            (interpolants[inst], np.asarray(rows, dtype=np.int64))
            for inst, rows in sorted(groups.items())
        ]


class _InterpolantValue(torch.autograd.Function):
    """PL interpolant evaluation with the facet gradient as the backward map."""

    @staticmethod
    def forward(ctx, queries, groups):
        q = queries.detach().numpy()
        vals = np.empty(q.shape[0])
        grads = np.zeros((q.shape[0], 2))
        for interp, idx in groups:
            v, g = interp.value_and_gradient(q[idx])
            vals[idx] = v
            grads[idx] = g
        ctx.save_for_backward(torch.from_numpy(grads))
        return torch.from_numpy(vals)

    @staticmethod
    def backward(ctx, grad_out):
        (grads,) = ctx.saved_tensors
        return grad_out[:, None] * grads, None


def _encoding_loss(model, enc, lam):
    out01 = model.forward_batch(
        enc.node_feat, enc.edge_src, enc.edge_dst, enc.edge_vec, enc.n_patches
    )
    centers = enc.lo + out01 * (enc.hi - enc.lo)
    m_center = _InterpolantValue.apply(centers, enc.groups)
    c = centers[enc.r_patch]
    d1 = enc.v1_pos - c
    d2 = enc.v2_pos - c
    areas = 0.5 * (d1[:, 0] * d2[:, 1] - d2[:, 0] * d1[:, 1])
    m_K = (m_center[enc.r_patch] + enc.m12) / 3.0
    loads = m_K * torch.abs(areas)
    counts = torch.zeros(enc.n_patches, dtype=loads.dtype).index_add_(
        0, enc.r_patch, torch.ones_like(loads)
    )
    means = (
        torch.zeros(enc.n_patches, dtype=loads.dtype).index_add_(0, enc.r_patch, loads)
        / counts
    )
    dev = loads - means[enc.r_patch]
    variances = (
        torch.zeros(enc.n_patches, dtype=loads.dtype).index_add_(0, enc.r_patch, dev * dev)
        / counts
    )
    return lam * variances.mean()


def _records_for_patches(mesh, mon, patches):
    interp = density_interpolant(mesh, mon)
    records = [_make_record(mesh, mon.density, p, 0) for p in patches]
    return records, {0: interp}


def loss_and_gradient(model, patches, mesh, mon, lam=LAMBDA_DEFAULT):
    """Scaled mean patch variance at the model's proposed centers, and its
    gradient with respect to every model parameter (reverse mode)."""
    if not patches:
        raise ValidationError("batch is empty")
    records, interpolants = _records_for_patches(mesh, mon, patches)
    enc = _Encoding(records, interpolants)
    model.zero_grad(set_to_none=True)
    loss = _encoding_loss(model, enc, lam)
    loss.backward()
    grads = {
        name: (
            p.grad.detach().numpy().copy()
            if p.grad is not None
            else np.zeros(p.shape)
        )
        for name, p in model.named_parameters()
    }
    model.zero_grad(set_to_none=True)
    return float(loss.detach()), grads


class _CorpusTable:
    """Precollated per-sample records and per-instance interpolants."""

    def __init__(self, corpus):
        self.interpolants = {}
        self.records = []
        for inst_id, node in corpus.samples:
            inst = corpus.instances[inst_id]
            if inst_id not in self.interpolants:
                mon = MonitorField(
                    inst.density,
                    inst.raw_norm,
                    corpus.monitor["alpha"],
                    corpus.monitor["variant"],
                    corpus.monitor["log_transform"],
                )
                self.interpolants[inst_id] = density_interpolant(inst.mesh, mon)
            patch = build_patch(inst.mesh, int(node))
            self.records.append(
                _make_record(inst.mesh, inst.density, patch, int(inst_id))
            )

    def encode(self, sample_ids):
        return _Encoding([self.records[i] for i in sample_ids], self.interpolants)


def _dataset_loss(model, table, sample_ids, lam, batch_size):
    total = 0.0
    with torch.no_grad():
        for lo in range(0, len(sample_ids), batch_size):
            chunk = sample_ids[lo : lo + batch_size]
            loss = _encoding_loss(model, table.encode(chunk), lam)
            total += float(loss) * len(chunk)
    return total / len(sample_ids)


def split_samples(n_samples, seed):
    """8:1:1 train/val/test split of sample indices, deterministic per seed."""
    order = np.random.default_rng(seed).permutation(n_samples)
    n_train = int(round(0.8 * n_samples))
    n_val = int(round(0.1 * n_samples))
    return order[:n_train], order[n_train : n_train + n_val], order[n_train + n_val :]


def train(model, corpus, config=None):
    """Mini-batch optimization of the patch mover on a corpus.

    Adaptive-moment updates with a Nesterov correction, early stopping on the
    validation split (best-validation weights are restored), single-threaded
    so repeated runs with the same seed give identical loss histories.

    Returns the trained model and a history dict with per-epoch train and
    validation losses; entry 0 of each list is the pre-training loss.
    """
    config = config or TrainConfig()
    n_threads = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        table = _CorpusTable(corpus)
        n = len(table.records)
        if n < 10:
            raise ValidationError("corpus too small for an 8:1:1 split")
        train_ids, val_ids, _ = split_samples(n, config.seed)
        rng = np.random.default_rng(config.seed + 1)
        torch.manual_seed(config.seed)
        opt = torch.optim.NAdam(
            model.parameters(),
            lr=config.learning_rate,
            betas=(0.9, 0.999),
            eps=1e-8,
        )
        history = {
            "train": [_dataset_loss(model, table, train_ids, config.lam, config.batch_size)],
            "val": [_dataset_loss(model, table, val_ids, config.lam, config.batch_size)],
        }
        best_val = history["val"][0]
        best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        stale = 0
        for epoch in range(1, config.max_epochs + 1):
            order = rng.permutation(train_ids)
            running = 0.0
            for lo in range(0, len(order), config.batch_size):
                chunk = order[lo : lo + config.batch_size]
                loss = _encoding_loss(model, table.encode(chunk), config.lam)
                if not torch.isfinite(loss):
                    raise TrainingDivergedError(
                        f"non-finite loss at epoch {epoch}, batch {lo // config.batch_size}"
                    )
                opt.zero_grad(set_to_none=True)
                loss.backward()
                opt.step()
                running += float(loss.detach()) * len(chunk)
            for name, p in model.named_parameters():
                if not torch.isfinite(p).all():
                    raise TrainingDivergedError(
                        f"non-finite parameter '{name}' after epoch {epoch}"
                    )
            history["train"].append(running / len(order))
            val = _dataset_loss(model, table, val_ids, config.lam, config.batch_size)
            history["val"].append(val)
            if val < best_val:
                best_val = val
                best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
                stale = 0
            else:
                stale += 1
                if stale >= config.patience:
                    break
        model.load_state_dict(best_state)
        return model, history
    finally:
        torch.set_num_threads(n_threads)
