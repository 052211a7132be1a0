"""Dense tensor helpers and CP / Tucker / tensor-train decompositions.

Tensors are plain row-major numpy arrays. Mode indices are 0-based.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

RIDGE = 1e-8


def inner_product(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.dot(a.ravel(), b.ravel()))


def unfold(t: np.ndarray, mode: int) -> np.ndarray:
    """Mode-``mode`` matricization, rows indexed by that mode."""
    return np.moveaxis(t, mode, 0).reshape(t.shape[mode], -1)


def fold(mat: np.ndarray, mode: int, shape: Sequence[int]) -> np.ndarray:
    shape = list(shape)
    lead = [shape[mode]] + shape[:mode] + shape[mode + 1:]
    return np.moveaxis(mat.reshape(lead), 0, mode)


def mode_product(t: np.ndarray, mode: int, u: np.ndarray) -> np.ndarray:
    """``t x_mode u``: contracts axis ``mode`` of ``t`` with the columns of ``u``."""
    t, u = np.asarray(t, float), np.asarray(u, float)
    if u.ndim != 2 or u.shape[1] != t.shape[mode]:
        raise ValueError(f"matrix of shape {u.shape} cannot act on mode {mode} of size {t.shape[mode]}")
    return np.moveaxis(np.tensordot(u, t, axes=(1, mode)), 0, mode)


def multi_mode_product(t, mats, skip=None, transpose=False):
    for m, u in enumerate(mats):
        if m != skip:
            t = mode_product(t, m, u.T if transpose else u)
    return t


def svd_fixed_sign(mat: np.ndarray):
    """Thin SVD with each left singular vector's largest-|.| entry made positive."""
    u, s, vt = np.linalg.svd(mat, full_matrices=False)
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[idx, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return u * signs, s, vt * signs[:, None]


def khatri_rao(mats: Sequence[np.ndarray]) -> np.ndarray:
    """Column-wise Kronecker product; the first matrix varies slowest."""
    out = mats[0]
    for m in mats[1:]:
        out = (out[:, None, :] * m[None, :, :]).reshape(-1, m.shape[1])
    return out


def _rel_error(t, approx, tnorm):
    return float(np.linalg.norm(t - approx) / tnorm) if tnorm > 0 else 0.0


# -- CP ----------------------------------------------------------------------

@dataclass(eq=False)
class CPDecomp:
    weights: np.ndarray
    factors: list
    errors: list = field(default_factory=list)  # relative error after every sweep

    @property
    def rank(self):
        return len(self.weights)

    @property
    def shape(self):
        return tuple(f.shape[0] for f in self.factors)

    def reconstruct(self):
        full = khatri_rao(self.factors) @ self.weights
        return full.reshape(self.shape)


def _cp_init(t, rank):
    factors = []
    fill = np.random.default_rng(0)
    for m in range(t.ndim):
        u, _, _ = svd_fixed_sign(unfold(t, m))
        cols = u[:, :rank]
        if cols.shape[1] < rank:
            extra = fill.standard_normal((t.shape[m], rank - cols.shape[1]))
            cols = np.concatenate([cols, extra], axis=1)
        factors.append(cols / np.linalg.norm(cols, axis=0))
    return factors


def _spd_solve(gram, rhs):
    """Solve ``gram x = rhs`` for symmetric PSD ``gram``; ridge if ill-posed."""
    if np.linalg.cond(gram) < 1e12:
        try:
            return scipy.linalg.solve(gram, rhs, assume_a="pos")
        except np.linalg.LinAlgError:
            pass
    return scipy.linalg.solve(gram + RIDGE * np.eye(len(gram)), rhs, assume_a="pos")


def cp_als(t: np.ndarray, rank: int, max_iters: int = 200, tol: float = 1e-8) -> CPDecomp:
    """Rank-``rank`` CP decomposition by alternating least squares.

    Factors are initialized from the leading left singular vectors of each
    unfolding (columns beyond a mode's size come from a fixed-seed draw), so
    runs are deterministic. Columns are unit-norm with magnitudes in
    ``weights``; components are ordered by descending ``|weight|``.
    """
    t = np.asarray(t, float)
    if rank < 1:
        raise ValueError("rank must be >= 1")
    tnorm = np.linalg.norm(t)
    factors = _cp_init(t, rank)
    if tnorm == 0:
        return CPDecomp(np.zeros(rank), factors, [0.0])
    weights = np.ones(rank)
    errors = []
    for _ in range(max_iters):
        for m in range(t.ndim):
            others = [f for k, f in enumerate(factors) if k != m]
            gram = np.ones((rank, rank))
            for f in others:
                gram *= f.T @ f
            mttkrp = unfold(t, m) @ khatri_rao(others)
            new = _spd_solve(gram, mttkrp.T).T
            norms = np.linalg.norm(new, axis=0)
            norms[norms == 0] = 1.0
            factors[m] = new / norms
            weights = norms
        err = _rel_error(t, CPDecomp(weights, factors).reconstruct(), tnorm)
        errors.append(err)
        if len(errors) > 1 and abs(errors[-2] - err) < tol:
            break
        if err < 1e-14:
            break
    order = np.argsort(-np.abs(weights), kind="stable")
    return CPDecomp(weights[order], [f[:, order] for f in factors], errors)


# -- Tucker ------------------------------------------------------------------

@dataclass(eq=False)
class TuckerDecomp:
    core: np.ndarray
    factors: list
    errors: list = field(default_factory=list)

    @property
    def ranks(self):
        return self.core.shape

    def reconstruct(self):
        return multi_mode_product(self.core, self.factors)


def tucker_hooi(t: np.ndarray, ranks: Sequence[int], max_iters: int = 200, tol: float = 1e-8) -> TuckerDecomp:
    """Tucker decomposition: truncated HOSVD start, then HOOI sweeps."""
    t = np.asarray(t, float)
    ranks = tuple(int(r) for r in ranks)
    if len(ranks) != t.ndim or any(not 1 <= r <= d for r, d in zip(ranks, t.shape)):
        raise ValueError(f"ranks {ranks} incompatible with shape {t.shape}")
    tnorm = np.linalg.norm(t)
    factors = [svd_fixed_sign(unfold(t, m))[0][:, :r] for m, r in enumerate(ranks)]
    # HOSVD may give fewer columns than requested if a mode is rank deficient
    factors = [_complete_basis(f, r) for f, r in zip(factors, ranks)]
    errors = []

    def error_of(core):
        # orthonormal factors: ||t - recon||^2 = ||t||^2 - ||core||^2
        if tnorm == 0:
            return 0.0
        return float(np.sqrt(max(tnorm**2 - np.sum(core**2), 0.0)) / tnorm)

    core = multi_mode_product(t, factors, transpose=True)
    errors.append(error_of(core))
    for _ in range(max_iters):
        for m in range(t.ndim):
            y = multi_mode_product(t, factors, skip=m, transpose=True)
            factors[m] = _complete_basis(svd_fixed_sign(unfold(y, m))[0][:, :ranks[m]], ranks[m])
        core = multi_mode_product(t, factors, transpose=True)
        errors.append(error_of(core))
        if abs(errors[-2] - errors[-1]) < tol:
            break
    return TuckerDecomp(core, factors, errors)


def _complete_basis(u, r):
    if u.shape[1] >= r:
        return u
    q, _ = np.linalg.qr(np.concatenate([u, np.eye(u.shape[0])], axis=1))
    return q[:, :r] * np.sign(np.diag(q[:r, :r]) + (np.diag(q[:r, :r]) == 0))


# -- tensor train ------------------------------------------------------------

@dataclass(eq=False)
class TTDecomp:
    cores: list  # core i has shape (R_{i-1}, D_i, R_i), R_0 = R_M = 1

    @property
    def ranks(self):
        return tuple(c.shape[2] for c in self.cores[:-1])

    @property
    def shape(self):
        return tuple(c.shape[1] for c in self.cores)

    def element(self, index: Sequence[int]) -> float:
        """One entry as the chained product of core slices."""
        row = self.cores[0][:, index[0], :]
        for core, i in zip(self.cores[1:], index[1:]):
            row = row @ core[:, i, :]
        return float(row[0, 0])

    def reconstruct(self):
        out = self.cores[0].reshape(self.cores[0].shape[1], -1)
        for core in self.cores[1:]:
            r0, d, r1 = core.shape
            out = (out @ core.reshape(r0, d * r1)).reshape(-1, r1)
        return out.reshape(self.shape)


def tt_svd(t: np.ndarray, max_ranks=None, tol: Optional[float] = None) -> TTDecomp:
    """Left-to-right sequential SVD.

    ``max_ranks`` (int or one per bond) caps the ranks; ``tol`` is a relative
    Frobenius error target split evenly across the bonds. With neither, the
    decomposition is exact.
    """
    t = np.asarray(t, float)
    dims = t.shape
    nd = len(dims)
    if isinstance(max_ranks, (int, np.integer)):
        max_ranks = [int(max_ranks)] * (nd - 1)
    if max_ranks is not None and any(r < 1 for r in max_ranks):
        raise ValueError("TT ranks must be positive")
    delta = (tol / np.sqrt(max(nd - 1, 1))) * np.linalg.norm(t) if tol else 0.0
    cores = []
    rest = t.reshape(1, -1)
    r_prev = 1
    for k in range(nd - 1):
        mat = rest.reshape(r_prev * dims[k], -1)
        u, s, vt = svd_fixed_sign(mat)
        r = len(s)
        if delta > 0:
            # smallest r whose discarded tail is within delta
            tail = np.sqrt(np.cumsum(s[::-1] ** 2))[::-1]
            keep = np.nonzero(np.append(tail[1:], 0.0) <= delta)[0]
            r = int(keep[0]) + 1 if len(keep) else r
        if max_ranks is not None:
            r = min(r, max_ranks[k])
        cores.append(u[:, :r].reshape(r_prev, dims[k], r))
        rest = s[:r, None] * vt[:r]
        r_prev = r
    cores.append(rest.reshape(r_prev, dims[-1], 1))
    return TTDecomp(cores)


def reconstruct(d) -> np.ndarray:
    return d.reconstruct()
