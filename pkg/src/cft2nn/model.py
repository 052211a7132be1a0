"""Tensor transformation layer, topological CNN branch, graph convolution
branch and classifier head, plus training and gradient checking."""
from __future__ import annotations

import copy
import os
import dataclasses
import json
import math
import string
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import CacheVersionError, FormatError, TrainingError
from .graph import Graph, normalized_adjacency

LOWRANK_MODES = ("dense", "cp", "tucker", "tt")


@dataclass(frozen=True)
class ModelConfig:
    use_ttl: bool = True
    ttl_lowrank: str = "tucker"
    ttl_widths: tuple = (32,)  # spatial output width of each TTL layer
    ttl_ranks: Optional[tuple] = None  # None -> per-mode default
    cnn_channels: tuple = (16, 32)
    cnn_kernels: tuple = (3, 3)
    gcl_layers: int = 3
    gcl_hidden: int = 32
    mlp_hidden: int = 32
    head_hidden: int = 32
    tau: int = 2
    literal_adjacency: bool = False
    dropout: float = 0.5
    lr: float = 1e-3
    epochs: int = 100
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.ttl_lowrank not in LOWRANK_MODES:
            raise ValueError(f"ttl_lowrank must be one of {LOWRANK_MODES}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.tau < 1:
            raise ValueError("tau must be >= 1")
        if len(self.cnn_channels) != len(self.cnn_kernels):
            raise ValueError("cnn_channels and cnn_kernels differ in length")
        widths = list(self.ttl_widths) + list(self.cnn_channels) + [self.gcl_hidden, self.mlp_hidden, self.head_hidden]
        if any(int(w) < 1 for w in widths) or self.gcl_layers < 1:
            raise ValueError("layer widths must be positive")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for k in ("ttl_widths", "ttl_ranks", "cnn_channels", "cnn_kernels"):
            if d.get(k) is not None:
                d[k] = tuple(d[k])
        return cls(**d)

    def to_dict(self):
        return dataclasses.asdict(self)


# -- tensor transformation layer --------------------------------------------

_LETTERS = string.ascii_letters


def _uniform(gen, shape, bound):
    return (torch.rand(shape, generator=gen, dtype=torch.float64) * 2 - 1) * bound


def _orthonormal(gen, rows, cols):
    q, _ = torch.linalg.qr(_uniform(gen, (rows, cols), 1.0))
    return q


class TTLLayer(nn.Module):
    """One affine tensor layer: ``out[j] = <W[j], h> + B[j]``.

    ``W`` has shape ``out_shape + in_shape`` and is stored densely or as CP,
    Tucker or TT factors; the low-rank forms contract ``h`` through the
    factors without building ``W``.
    """

    def __init__(self, in_shape, out_shape, mode="tucker", ranks=None, gen=None):
        super().__init__()
        self.in_shape, self.out_shape, self.mode = tuple(in_shape), tuple(out_shape), mode
        gen = gen or torch.Generator().manual_seed(0)
        dims = self.out_shape + self.in_shape
        m = len(self.in_shape)
        fan_in = math.prod(self.in_shape)
        self.bias = nn.Parameter(_uniform(gen, self.out_shape, 1 / math.sqrt(fan_in)))
        if mode == "dense":
            self.weight = nn.Parameter(_uniform(gen, dims, 1 / math.sqrt(fan_in)))
        elif mode == "tucker":
            ranks = tuple(ranks or [math.ceil(d / 2) for d in dims])
            self.ranks = ranks
            self.factors = nn.ParameterList(_orthonormal(gen, d, r) for d, r in zip(dims, ranks))
            core_fan_in = math.prod(ranks[len(self.out_shape):])
            self.core = nn.Parameter(_uniform(gen, ranks, math.sqrt(3.0 / core_fan_in)))
        elif mode == "cp":
            r = int(ranks[0]) if ranks else 16
            self.ranks = (r,)
            cols = [_uniform(gen, (d, r), 1.0) for d in dims]
            self.factors = nn.ParameterList(c / c.norm(dim=0) for c in cols)
            scale = math.sqrt(3.0 * math.prod(self.out_shape) / r)
            self.weights = nn.Parameter(_uniform(gen, (r,), scale))
        elif mode == "tt":
            n = len(dims)
            bonds = list(ranks) if ranks else [8] * (n - 1)
            if len(bonds) != n - 1:
                raise ValueError(f"TT needs {n - 1} bond ranks, got {len(bonds)}")
            # cap bonds by what the unfoldings can support
            for i in range(n - 1):
                left, right = math.prod(dims[: i + 1]), math.prod(dims[i + 1:])
                bonds[i] = max(1, min(bonds[i], left, right))
            full = [1] + bonds + [1]
            self.ranks = tuple(bonds)
            cores = []
            for i, d in enumerate(dims):
                # output cores expand, input cores contract over (rank, mode)
                bound = math.sqrt(3.0 / full[i]) if i < len(self.out_shape) else math.sqrt(3.0 / (full[i] * d))
                cores.append(_uniform(gen, (full[i], d, full[i + 1]), bound))
            self.cores = nn.ParameterList(cores)
        else:
            raise ValueError(f"unknown low-rank mode {mode!r}")
        self._m = m

    def forward(self, h):
        m, mo = self._m, len(self.out_shape)
        if self.mode == "dense":
            out = torch.tensordot(h, self.weight, dims=(list(range(1, m + 1)), list(range(mo, mo + m))))
        elif self.mode == "tucker":
            g = h
            for u in self.factors[mo:]:
                g = torch.tensordot(g, u, dims=([1], [0]))
            g = torch.tensordot(g, self.core, dims=(list(range(1, m + 1)), list(range(mo, mo + m))))
            for u in self.factors[:mo]:
                g = torch.tensordot(g, u, dims=([1], [1]))
            out = g
        elif self.mode == "cp":
            ins = _LETTERS[:m]
            s = torch.einsum(f"z{ins}," + ",".join(f"{c}r" for c in ins) + "->zr", h, *self.factors[mo:])
            outs = _LETTERS[m:m + mo]
            out = torch.einsum("zr,r," + ",".join(f"{c}r" for c in outs) + f"->z{outs}",
                               s, self.weights, *self.factors[:mo])
        else:
            # contract the input cores with h from the left, leaving the bond
            # between the output and input halves
            g = torch.einsum("aib,zi...->zab...", self.cores[mo], h)
            for core in self.cores[mo + 1:]:
                g = torch.einsum("zabi...,bic->zac...", g, core)
            v = g[:, :, 0]  # (batch, bond)
            out = torch.einsum("aib,zb->zai", self.cores[mo - 1], v)
            for core in reversed(self.cores[:mo - 1]):
                out = torch.einsum("aib,zb...->zai...", core, out)
            out = out[:, 0]
        return out + self.bias

    def dense_weight(self):
        """Materialize ``W`` (for tests on small shapes)."""
        eye = torch.eye(math.prod(self.in_shape), dtype=self.bias.dtype).reshape(-1, *self.in_shape)
        cols = self.forward(eye) - self.bias
        return cols.reshape(*self.in_shape, *self.out_shape).permute(
            *range(len(self.in_shape), len(self.in_shape) + len(self.out_shape)), *range(len(self.in_shape))
        )


class TTL(nn.Module):
    """Stack of TTL layers with ReLU between them, none after the last."""

    def __init__(self, in_shape, widths, mode, ranks=None, gen=None):
        super().__init__()
        shapes = [tuple(in_shape)]
        for w in widths:
            shapes.append(tuple(in_shape[:-2]) + (w, w))
        self.layers = nn.ModuleList(
            TTLLayer(a, b, mode, ranks, gen) for a, b in zip(shapes[:-1], shapes[1:])
        )
        self.out_shape = shapes[-1]

    def forward(self, h):
        for i, layer in enumerate(self.layers):
            if i:
                h = F.relu(h)
            h = layer(h)
        return h


# -- topological CNN branch --------------------------------------------------

class MVTCL(nn.Module):
    def __init__(self, in_shape, channels=(16, 32), kernels=(3, 3)):
        super().__init__()
        c_in = in_shape[0] * in_shape[1]
        convs = []
        for c, k in zip(channels, kernels):
            convs.append(nn.Conv2d(c_in, c, k, padding=k // 2))
            c_in = c
        self.convs = nn.ModuleList(convs)
        self.out_dim = c_in

    def forward(self, z):
        h = z.reshape(z.shape[0], -1, *z.shape[-2:])
        for conv in self.convs:
            h = F.relu(conv(h))
        return h.mean(dim=(2, 3))


# -- graph convolution branch ------------------------------------------------

class GCLBlock(nn.Module):
    def __init__(self, f_in, hidden, mlp_hidden):
        super().__init__()
        self.theta = nn.Linear(f_in, hidden, bias=False)
        self.mlp = nn.Sequential(
            nn.Linear(hidden, mlp_hidden), nn.BatchNorm1d(mlp_hidden), nn.ReLU(),
            nn.Linear(mlp_hidden, mlp_hidden), nn.BatchNorm1d(mlp_hidden), nn.ReLU(),
        )

    def forward(self, a_tau, h):
        return self.mlp(F.relu(a_tau @ self.theta(h)))


class GCL(nn.Module):
    def __init__(self, f_in, layers=3, hidden=32, mlp_hidden=32):
        super().__init__()
        blocks = []
        for _ in range(layers):
            blocks.append(GCLBlock(f_in, hidden, mlp_hidden))
            f_in = mlp_hidden
        self.blocks = nn.ModuleList(blocks)
        self.out_dim = mlp_hidden

    def forward(self, a_tau, x, graph_index, num_graphs):
        h = x
        for block in self.blocks:
            h = block(a_tau, h)
        # mean readout per graph
        sums = torch.zeros(num_graphs, h.shape[1], dtype=h.dtype).index_add_(0, graph_index, h)
        counts = torch.bincount(graph_index, minlength=num_graphs).clamp(min=1).to(h.dtype)
        return sums / counts[:, None]


# -- full model --------------------------------------------------------------

@dataclass
class Sample:
    """Model inputs for one graph."""

    pi: np.ndarray  # (K, Q, P, P)
    x: np.ndarray  # (N, F)
    a_tau: np.ndarray  # (N, N)
    y: int = -1


@dataclass
class GraphBatch:
    pi: torch.Tensor
    x: torch.Tensor
    a_tau: torch.Tensor
    graph_index: torch.Tensor
    y: torch.Tensor

    @property
    def num_graphs(self):
        return self.pi.shape[0]


def make_sample(g: Graph, pi: np.ndarray, y: int = -1, tau: int = 2, literal: bool = False) -> Sample:
    a = normalized_adjacency(g, literal=literal)
    return Sample(np.asarray(pi, float), np.asarray(g.node_features, float), np.linalg.matrix_power(a, tau), y)


def collate(samples: Sequence[Sample], dtype=torch.float32) -> GraphBatch:
    pi = torch.as_tensor(np.stack([s.pi for s in samples]), dtype=dtype)
    x = torch.as_tensor(np.concatenate([s.x for s in samples]), dtype=dtype)
    a = torch.block_diag(*[torch.as_tensor(s.a_tau, dtype=dtype) for s in samples])
    gi = torch.as_tensor(np.repeat(np.arange(len(samples)), [len(s.x) for s in samples]), dtype=torch.long)
    y = torch.as_tensor([s.y for s in samples], dtype=torch.long)
    return GraphBatch(pi, x, a, gi, y)


@dataclass
class GraphEmbedding:
    z_pit: np.ndarray
    z_g: np.ndarray

    @property
    def z(self):
        return np.concatenate([self.z_pit, self.z_g])


class CFT2NN(nn.Module):
    def __init__(self, config: ModelConfig, pi_shape, feat_dim: int, num_classes: int):
        super().__init__()
        self.config = config
        self.pi_shape, self.feat_dim, self.num_classes = tuple(pi_shape), int(feat_dim), int(num_classes)
        torch.manual_seed(config.seed)
        gen = torch.Generator().manual_seed(config.seed)
        if config.use_ttl:
            self.ttl = TTL(pi_shape, config.ttl_widths, config.ttl_lowrank, config.ttl_ranks, gen)
            cnn_in = self.ttl.out_shape
        else:
            self.ttl = nn.Identity()
            cnn_in = self.pi_shape
        self.mvtcl = MVTCL(cnn_in, config.cnn_channels, config.cnn_kernels)
        self.gcl = GCL(feat_dim, config.gcl_layers, config.gcl_hidden, config.mlp_hidden)
        emb = self.mvtcl.out_dim + self.gcl.out_dim
        self.head = nn.Sequential(
            nn.Dropout(config.dropout), nn.Linear(emb, config.head_hidden), nn.ReLU(),
            nn.Dropout(config.dropout), nn.Linear(config.head_hidden, num_classes),
        )
        self.float()

    @property
    def embedding_dim(self):
        return self.mvtcl.out_dim + self.gcl.out_dim

    def branches(self, batch: GraphBatch):
        z_pit = self.mvtcl(self.ttl(batch.pi))
        z_g = self.gcl(batch.a_tau, batch.x, batch.graph_index, batch.num_graphs)
        return z_pit, z_g

    def forward(self, batch: GraphBatch):
        z_pit, z_g = self.branches(batch)
        return self.head(torch.cat([z_pit, z_g], dim=1))


def _dtype(model):
    return next(model.parameters()).dtype


def ttl_forward(model: CFT2NN, x) -> torch.Tensor:
    return model.ttl(torch.as_tensor(x, dtype=_dtype(model)))


def mvtcl_forward(model: CFT2NN, pi) -> np.ndarray:
    pi = torch.as_tensor(np.asarray(pi)[None], dtype=_dtype(model))
    with torch.no_grad():
        return model.mvtcl(model.ttl(pi))[0].numpy()


def _single(model, g, pi):
    return collate([make_sample(g, pi, 0, model.config.tau, model.config.literal_adjacency)], _dtype(model))


@torch.no_grad()
def gcl_forward(model: CFT2NN, g: Graph) -> np.ndarray:
    model.eval()
    s = make_sample(g, np.zeros(model.pi_shape), 0, model.config.tau, model.config.literal_adjacency)
    b = collate([s], _dtype(model))
    return model.gcl(b.a_tau, b.x, b.graph_index, 1)[0].numpy()


@torch.no_grad()
def predict_proba(model: CFT2NN, samples: Sequence[Sample], batch_size: int = 256) -> np.ndarray:
    model.eval()
    out = []
    for i in range(0, len(samples), batch_size):
        logits = model(collate(samples[i:i + batch_size], _dtype(model)))
        out.append(torch.softmax(logits.double(), dim=1).numpy())
    return np.concatenate(out) if out else np.zeros((0, model.num_classes))


def classify(model: CFT2NN, g: Graph, pi) -> np.ndarray:
    return predict_proba(model, [make_sample(g, pi, 0, model.config.tau, model.config.literal_adjacency)])[0]


@torch.no_grad()
def embed_samples(model: CFT2NN, samples: Sequence[Sample], batch_size: int = 256) -> list:
    model.eval()
    out = []
    for i in range(0, len(samples), batch_size):
        zp, zg = model.branches(collate(samples[i:i + batch_size], _dtype(model)))
        out.extend(GraphEmbedding(a.double().numpy(), b.double().numpy()) for a, b in zip(zp, zg))
    return out


def embed(model: CFT2NN, g: Graph, pi) -> GraphEmbedding:
    return embed_samples(model, [make_sample(g, pi, 0, model.config.tau, model.config.literal_adjacency)])[0]


# -- training ----------------------------------------------------------------

@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    train_acc: float
    valid_loss: float
    valid_acc: float


def _evaluate(model, samples, dtype):
    model.eval()
    with torch.no_grad():
        b = collate(samples, dtype)
        logits = model(b)
        loss = F.cross_entropy(logits, b.y).item()
        acc = (logits.argmax(1) == b.y).double().mean().item()
    return loss, acc


def train(
    train_samples: Sequence[Sample],
    valid_samples: Sequence[Sample],
    config: ModelConfig,
    num_classes: int,
    log=None,
):
    """Adam on cross-entropy; returns the model at its best validation loss.

    ``log`` is called with an ``EpochLog`` after every epoch.
    """
    if not train_samples or not valid_samples:
        raise TrainingError("train and valid subsets must be nonempty")
    torch.manual_seed(config.seed)
    model = CFT2NN(config, train_samples[0].pi.shape, train_samples[0].x.shape[1], num_classes)
    opt = torch.optim.Adam(model.parameters(), lr=config.lr, betas=(0.9, 0.999), eps=1e-8)
    rng = np.random.default_rng(config.seed)
    dtype = torch.float32
    best, best_loss, history = None, math.inf, []
    for epoch in range(config.epochs):
        model.train()
        order = rng.permutation(len(train_samples))
        for bi, start in enumerate(range(0, len(order), config.batch_size)):
            idx = order[start:start + config.batch_size]
            if len(idx) < 2 and len(order) > 1:
                continue  # batch norm needs more than one graph
            batch = collate([train_samples[i] for i in idx], dtype)
            loss = F.cross_entropy(model(batch), batch.y)
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {bi}")
            opt.zero_grad()
            loss.backward()
            opt.step()
        tl, ta = _evaluate(model, train_samples, dtype)
        vl, va = _evaluate(model, valid_samples, dtype)
        if not math.isfinite(tl):
            raise TrainingError(f"non-finite loss at epoch {epoch}, batch end-of-epoch")
        entry = EpochLog(epoch, tl, ta, vl, va)
        history.append(entry)
        if log:
            log(entry)
        if vl < best_loss:
            best_loss, best = vl, copy.deepcopy(model.state_dict())
    model.load_state_dict(best)
    model.eval()
    return model, history


# -- gradient check ----------------------------------------------------------

def gradient_check(model: CFT2NN, samples: Sequence[Sample], step: float = 1e-5,
                   entries_per_param: int = 6, seed: int = 0) -> float:
    """Max relative error between autograd and central differences.

    Runs a double-precision copy in inference mode (dropout off, frozen batch
    norm). Checks ``entries_per_param`` random entries of every trainable parameter.
    The denominator is floored at 1e-6: below that, central differences at
    step 1e-5 are dominated by rounding (~1e-11 absolute).
    """
    m = copy.deepcopy(model).double().eval()
    batch = collate(samples, torch.float64)

    def loss_fn():
        return F.cross_entropy(m(batch), batch.y)

    m.zero_grad()
    loss_fn().backward()
    rng = np.random.default_rng(seed)
    worst = 0.0
    with torch.no_grad():
        for p in m.parameters():
            if not p.requires_grad or p.grad is None:
                continue
            picks = rng.choice(p.numel(), size=min(entries_per_param, p.numel()), replace=False)
            for i in picks:
                idx = np.unravel_index(i, p.shape)
                orig = p[idx].item()
                p[idx] = orig + step
                up = loss_fn().item()
                p[idx] = orig - step
                down = loss_fn().item()
                p[idx] = orig
                fd = (up - down) / (2 * step)
                an = p.grad[idx].item()
                err = abs(an - fd) / max(abs(an), abs(fd), 1e-6)
                if os.environ.get("CFT2NN_DEBUG_GRAD"):
                    print(p.shape, idx, an, fd, err)
                worst = max(worst, err)
    return worst


# -- checkpoint --------------------------------------------------------------

CKPT_MAGIC = b"CFT2NNCK"
CKPT_VERSION = 1


def save_checkpoint(path, model: CFT2NN, cache_hash: str = "", extra: Optional[dict] = None):
    state = model.state_dict()
    index, chunks, offset = [], [], 0
    for name, t in state.items():
        arr = t.detach().cpu().numpy()
        arr = np.ascontiguousarray(arr.astype(arr.dtype.newbyteorder("<")))
        raw = arr.tobytes()
        index.append({"name": name, "shape": list(arr.shape), "dtype": arr.dtype.str, "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = {
        "format": "cft2nn-checkpoint",
        "config": model.config.to_dict(),
        "pi_shape": list(model.pi_shape),
        "feat_dim": model.feat_dim,
        "num_classes": model.num_classes,
        "cache_hash": cache_hash,
        "tensors": index,
        "extra": extra or {},
    }
    hb = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC + bytes([CKPT_VERSION]) + struct.pack("<Q", len(hb)) + hb)
        for c in chunks:
            fh.write(c)


def load_checkpoint(path):
    """Returns ``(model, header)``."""
    data = Path(path).read_bytes()
    if data[:8] != CKPT_MAGIC:
        raise FormatError(f"{path} is not a checkpoint file")
    if data[8] != CKPT_VERSION:
        raise CacheVersionError(f"checkpoint version {data[8]} != {CKPT_VERSION}")
    (hlen,) = struct.unpack("<Q", data[9:17])
    header = json.loads(data[17:17 + hlen])
    body = data[17 + hlen:]
    cfg = ModelConfig.from_dict(header["config"])
    model = CFT2NN(cfg, header["pi_shape"], header["feat_dim"], header["num_classes"])
    state = {}
    for e in header["tensors"]:
        arr = np.frombuffer(body, dtype=np.dtype(e["dtype"]), count=int(np.prod(e["shape"], dtype=np.int64)),
                            offset=e["offset"]).reshape(e["shape"])
        state[e["name"]] = torch.from_numpy(arr.copy())
    model.load_state_dict(state)
    model.eval()
    return model, header
