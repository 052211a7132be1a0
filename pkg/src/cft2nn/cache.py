"""Binary feature cache: diagrams, grid ranges and persistence-image tensors.

Layout: 8-byte magic, 1 version byte, little-endian u64 header length, a
sorted-key JSON header, then raw little-endian arrays at header offsets.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .errors import CacheVersionError, FormatError, StateError
from .persistence import DIMS, GraphTopology, GridRange, PersistenceDiagram

MAGIC = b"CFT2NNFC"
VERSION = 1
CACHE_ENV = "CFT2NN_CACHE_DIR"


def cache_dir(default) -> Path:
    return Path(os.environ.get(CACHE_ENV) or default)


def cache_path(directory, dataset: str, feature_hash: str) -> Path:
    return Path(directory) / f"{dataset}-{feature_hash[:16]}.cache"


def write_container(path, header: dict, arrays: dict):
    index, chunks, offset = {}, [], 0
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])
        arr = np.ascontiguousarray(arr.astype(arr.dtype.newbyteorder("<")))
        raw = arr.tobytes()
        index[name] = {"shape": list(arr.shape), "dtype": arr.dtype.str, "offset": offset}
        chunks.append(raw)
        offset += len(raw)
    blob = json.dumps({**header, "arrays": index}, sort_keys=True, separators=(",", ":")).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC + bytes([VERSION]) + struct.pack("<Q", len(blob)) + blob)
        for c in chunks:
            fh.write(c)
    os.replace(tmp, path)


def read_header(path) -> tuple:
    path = Path(path)
    if not path.exists():
        raise StateError(f"feature cache {path} not found; run `cft2nn featurize` first")
    data = path.read_bytes()
    if data[:8] != MAGIC:
        raise FormatError(f"{path} is not a feature cache")
    if data[8] != VERSION:
        raise CacheVersionError(f"{path}: cache version {data[8]}, expected {VERSION}; rerun featurize")
    (hlen,) = struct.unpack("<Q", data[9:17])
    return json.loads(data[17:17 + hlen]), memoryview(data)[17 + hlen:]


def read_container(path) -> tuple:
    header, body = read_header(path)
    arrays = {}
    for name, e in header.pop("arrays").items():
        count = int(np.prod(e["shape"], dtype=np.int64))
        arrays[name] = np.frombuffer(body, np.dtype(e["dtype"]), count, e["offset"]).reshape(e["shape"]).copy()
    return header, arrays


@dataclass
class FeatureCache:
    feature_hash: str
    dataset: str
    filtrations: tuple
    labels: np.ndarray
    splits: dict  # name -> index array
    topologies: list
    grids: dict  # (kind, dim) -> GridRange
    pis: np.ndarray  # (n, K, Q, P, P), unscaled
    pi_scale: np.ndarray  # (K, Q), max pixel over the training split

    @property
    def scaled_pis(self) -> np.ndarray:
        s = np.where(self.pi_scale > 0, self.pi_scale, 1.0)
        return self.pis / s[None, :, :, None, None]

    def save(self, path):
        arrays = {"labels": self.labels.astype(np.int64), "pis": self.pis, "pi_scale": self.pi_scale}
        for name, idx in self.splits.items():
            arrays[f"split/{name}"] = np.asarray(idx, np.int64)
        ess = np.array([[t.essential_death[k] for k in self.filtrations] for t in self.topologies])
        arrays["essential_death"] = ess.reshape(len(self.topologies), len(self.filtrations))
        for kind in self.filtrations:
            for dim in DIMS:
                dgs = [t.diagrams[(kind, dim)].points for t in self.topologies]
                arrays[f"dg/{kind}/{dim}/points"] = np.concatenate(dgs) if dgs else np.zeros((0, 2))
                arrays[f"dg/{kind}/{dim}/offsets"] = np.cumsum([0] + [len(d) for d in dgs])
                arrays[f"grid/{kind}/{dim}"] = np.array(self.grids[(kind, dim)].as_tuple())
        header = {
            "format": "cft2nn-features",
            "artifact_version": __version__,
            "feature_hash": self.feature_hash,
            "dataset": self.dataset,
            "filtrations": list(self.filtrations),
        }
        write_container(path, header, arrays)

    @classmethod
    def load(cls, path) -> "FeatureCache":
        header, a = read_container(path)
        kinds = tuple(header["filtrations"])
        n = len(a["labels"])
        diagrams = [{} for _ in range(n)]
        grids = {}
        for kind in kinds:
            for dim in DIMS:
                pts, off = a[f"dg/{kind}/{dim}/points"], a[f"dg/{kind}/{dim}/offsets"]
                for i in range(n):
                    diagrams[i][(kind, dim)] = PersistenceDiagram(dim, pts[off[i]:off[i + 1]])
                grids[(kind, dim)] = GridRange(*a[f"grid/{kind}/{dim}"].tolist())
        ess = a["essential_death"]
        topos = [GraphTopology(diagrams[i], {k: float(ess[i, j]) for j, k in enumerate(kinds)}) for i in range(n)]
        splits = {k.split("/", 1)[1]: v for k, v in a.items() if k.startswith("split/")}
        return cls(header["feature_hash"], header["dataset"], kinds, a["labels"], splits, topos, grids,
                   a["pis"], a["pi_scale"])
