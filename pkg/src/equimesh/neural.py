"""Learned patch mover: star-graph attention network over normalized patches.

The model sees one node patch at a time: per-node features are the normalized
coordinates plus the monitor density (3 inputs), per-edge features are the
center-to-neighbour coordinate vectors. Node and edge MLP encoders feed a
stack of residual attention blocks in which the center and its neighbours
exchange messages along the star edges only (neighbours never attend to each
other), and an MLP decoder with layer normalization maps the center embedding
to a squashed position in the open unit square. Everything runs in float64 on
CPU so training and inference are reproducible bit for bit.
"""

from __future__ import annotations

import io
import struct

import numpy as np
import torch
from torch import nn

from .errors import FormatError, ValidationError

_MAGIC = b"EQDM"
_VERSION = 1


class _AttentionBlock(nn.Module):
    """Multi-head attention over directed star edges with a residual update."""

    def __init__(self, width, heads):
        super().__init__()
        self.width = width
        self.heads = heads
        self.head_dim = width // heads
        self.query = nn.Linear(width, width)
        self.key = nn.Linear(width, width)
        self.value = nn.Linear(width, width)
        self.edge_key = nn.Linear(width, width)
        self.edge_value = nn.Linear(width, width)
        self.out = nn.Linear(width, width)

    def forward(self, x, edge_src, edge_dst, edge_emb):
        n = x.shape[0]
        heads, dim = self.heads, self.head_dim
        q = self.query(x).view(n, heads, dim)
        k = (self.key(x)[edge_src] + self.edge_key(edge_emb)).view(-1, heads, dim)
        v = (self.value(x)[edge_src] + self.edge_value(edge_emb)).view(-1, heads, dim)
        scores = (q[edge_dst] * k).sum(-1) / dim**0.5
        # segment softmax over each destination node's in-edges
        smax = torch.full((n, heads), -torch.inf, dtype=x.dtype)
        smax = smax.scatter_reduce(
            0, edge_dst[:, None].expand(-1, heads), scores, reduce="amax"
        ).detach()
        ex = torch.exp(scores - smax[edge_dst])
        denom = torch.zeros((n, heads), dtype=x.dtype).index_add_(0, edge_dst, ex)
        alpha = ex / denom[edge_dst]
        agg = torch.zeros((n, heads, dim), dtype=x.dtype).index_add_(
            0, edge_dst, alpha.unsqueeze(-1) * v
        )
        return torch.relu(x + self.out(agg.reshape(n, self.width)))


class DeformModel(nn.Module):
    """Patch deformation network; ``hidden`` must be divisible by ``heads``."""

    def __init__(self, hidden=64, blocks=2, heads=2):
        super().__init__()
        if hidden < 2 or blocks < 1 or heads < 1 or hidden % heads:
            raise ValidationError(
                f"bad architecture: hidden={hidden} blocks={blocks} heads={heads}"
            )
        self.hidden = hidden
        self.n_blocks = blocks
        self.n_heads = heads
        self.node_encoder = nn.Sequential(
            nn.Linear(3, hidden), nn.ReLU(), nn.Linear(hidden, hidden)
        )
        self.edge_encoder = nn.Sequential(
            nn.Linear(2, hidden), nn.ReLU(), nn.Linear(hidden, hidden)
        )
        self.blocks = nn.ModuleList(
            _AttentionBlock(hidden, heads) for _ in range(blocks)
        )
        self.decoder = nn.Sequential(
            nn.LayerNorm(hidden),
            nn.Linear(hidden, hidden // 2),
            nn.ReLU(),
            nn.Linear(hidden // 2, 2),
        )
        self.double()

    @classmethod
    def create(cls, hidden=64, blocks=2, heads=2, seed=0):
        """Deterministically initialized model (global RNG state untouched)."""
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            return cls(hidden, blocks, heads)

    def forward_batch(self, node_feat, edge_src, edge_dst, edge_vec, n_centers):
        """Squashed unit-square positions for the first ``n_centers`` node rows."""
        x = self.node_encoder(node_feat)
        e = self.edge_encoder(edge_vec)
        for block in self.blocks:
            x = block(x, edge_src, edge_dst, e)
        logits = self.decoder(x[:n_centers])
        # sigmoid saturates to exactly 0/1 in float64 past |x| ~ 37; clamp so
        # the output stays strictly inside the unit square
        return torch.sigmoid(logits.clamp(-36.0, 36.0))


def _single_patch_tensors(coords01, density):
    coords01 = np.asarray(coords01, dtype=np.float64)
    density = np.asarray(density, dtype=np.float64)
    n = coords01.shape[0]
    if n < 2:
        raise ValidationError("patch needs a center and at least one neighbour")
    feat = torch.from_numpy(np.column_stack([coords01, density]))
    nb = torch.arange(1, n, dtype=torch.long)
    center = torch.zeros(n - 1, dtype=torch.long)
    edge_src = torch.cat([nb, center])
    edge_dst = torch.cat([center, nb])
    vec = torch.from_numpy(coords01[1:] - coords01[0])
    edge_vec = torch.cat([vec, vec])
    return feat, edge_src, edge_dst, edge_vec


def forward(model, coords01, density):
    """Predicted center position in (0,1)^2 for one normalized patch.

    ``coords01`` holds the normalized patch coordinates with the center in
    row 0; ``density`` the matching monitor values. The output is invariant
    (to rounding) under any permutation of the neighbour rows.
    """
    feat, edge_src, edge_dst, edge_vec = _single_patch_tensors(coords01, density)
    with torch.no_grad():
        out = model.forward_batch(feat, edge_src, edge_dst, edge_vec, 1)
    return out[0].numpy().copy()


# ---------------------------------------------------------------------------
# Serialization: header (magic, version, hidden, blocks, heads) + named
# float64 little-endian tensors with explicit shapes.
# ---------------------------------------------------------------------------

def save_model(model, path):
    state = model.state_dict()
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(
        struct.pack(
            "<BIII", _VERSION, model.hidden, model.n_blocks, model.n_heads
        )
    )
    names = sorted(state)
    buf.write(struct.pack("<I", len(names)))
    for name in names:
        tensor = state[name].detach().cpu().numpy().astype("<f8")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", tensor.ndim))
        for d in tensor.shape:
            buf.write(struct.pack("<I", d))
        buf.write(tensor.tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_model(path):
    """Load a model saved by :func:`save_model`; bit-exact round trip."""
    with open(path, "rb") as fh:
        data = fh.read()
    view = memoryview(data)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise FormatError(f"{path}: truncated model file")
        out = view[pos : pos + n]
        pos += n
        return out

    if bytes(take(4)) != _MAGIC:
        raise FormatError(f"{path}: not a model file (bad magic)")
    version, hidden, blocks, heads = struct.unpack("<BIII", take(13))
    if version != _VERSION:
        raise FormatError(f"{path}: unsupported model version {version}")
    try:
        model = DeformModel.create(hidden, blocks, heads, seed=0)
    except ValidationError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    expected = model.state_dict()
    (count,) = struct.unpack("<I", take(4))
    loaded = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = bytes(take(name_len)).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(take(8 * size), dtype="<f8").reshape(shape)
        loaded[name] = torch.from_numpy(arr.copy())
    if pos != len(view):
        raise FormatError(f"{path}: trailing bytes after tensor data")
    if set(loaded) != set(expected):
        raise FormatError(f"{path}: tensor names do not match the header architecture")
    for name, tensor in loaded.items():
        if tuple(tensor.shape) != tuple(expected[name].shape):
            raise FormatError(
                f"{path}: tensor '{name}' has shape {tuple(tensor.shape)}, "
                f"expected {tuple(expected[name].shape)}"
            )
    model.load_state_dict(loaded)
    return model
