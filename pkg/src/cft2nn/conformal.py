"""Split conformal prediction sets, marginal and locally calibrated.

Scores are ``1 - p_y``. A candidate label's p-value counts calibration scores
at least as large as its own score, so ties favour inclusion.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy import stats

from .errors import ConfigError, StateError
from .persistence import GraphTopology, graph_similarity

MEASURES = ("topological", "embedding")


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")
    return alpha


def nonconformity_score(probs, y: int) -> float:
    probs = np.asarray(probs, dtype=float)
    if not 0 <= y < len(probs):
        raise ValueError(f"label {y} out of range for {len(probs)} classes")
    return float(1.0 - probs[y])


def _sorted_scores(calib_scores) -> np.ndarray:
    s = np.sort(np.asarray(calib_scores, dtype=float).ravel())
    if s.size == 0:
        raise StateError("calibration set is empty")
    return s


def conformal_pvalue(calib_scores, s: float) -> float:
    """(#{s_j >= s} + 1) / (m + 1)."""
    ref = _sorted_scores(calib_scores)
    count = ref.size - np.searchsorted(ref, s, side="left")
    return (int(count) + 1) / (ref.size + 1)


def _pvalues(sorted_ref: np.ndarray, scores: np.ndarray) -> np.ndarray:
    counts = sorted_ref.size - np.searchsorted(sorted_ref, scores, side="left")
    return (counts + 1) / (sorted_ref.size + 1)


@dataclass(frozen=True)
class PredictionSet:
    labels: tuple
    p_values: tuple
    alpha: float
    neighbors: tuple = ()

    @property
    def size(self) -> int:
        return len(self.labels)

    def __contains__(self, y) -> bool:
        return int(y) in self.labels


def prediction_set(probs, calib_scores, alpha: float, neighbors: Sequence[int] = ()) -> PredictionSet:
    """Keep every label whose p-value is at least ``alpha``."""
    alpha = _check_alpha(alpha)
    probs = np.asarray(probs, dtype=float)
    pv = _pvalues(_sorted_scores(calib_scores), 1.0 - probs)
    labels = tuple(int(y) for y in np.flatnonzero(pv >= alpha))
    return PredictionSet(labels, tuple(float(p) for p in pv), alpha, tuple(int(i) for i in neighbors))


@dataclass(frozen=True)
class CalibrationRecord:
    index: int
    score: float
    topology: Optional[GraphTopology] = None
    embedding: Optional[np.ndarray] = None


@dataclass(frozen=True)
class GraphFeatures:
    """Cached features of a target graph, for neighbour search."""

    topology: Optional[GraphTopology] = None
    embedding: Optional[np.ndarray] = None


def calibration_records(probs, labels, indices=None, topologies=None, embeddings=None) -> list:
    probs = np.asarray(probs, dtype=float)
    n = len(probs)
    indices = range(n) if indices is None else indices
    topologies = topologies if topologies is not None else [None] * n
    embeddings = embeddings if embeddings is not None else [None] * n
    return [CalibrationRecord(int(i), nonconformity_score(p, int(y)), t, e)
            for i, p, y, t, e in zip(indices, probs, labels, topologies, embeddings)]


def _feature(obj, measure):
    return obj.topology if measure == "topological" else obj.embedding


def local_calibration_set(target, calib: Sequence[CalibrationRecord], k_nn: int,
                          measure: str = "topological", **kw) -> list:
    """The ``k_nn`` calibration records closest to ``target``.

    ``k_nn`` is clamped to the calibration size, in which case the whole set
    comes back in its original order. Equal distances go to the lower index.
    """
    if not calib:
        raise StateError("calibration set is empty")
    if measure not in MEASURES:
        raise ConfigError(f"unknown similarity measure {measure!r}")
    if k_nn < 1:
        raise ConfigError("k_nn must be positive")
    if k_nn >= len(calib):
        return list(calib)
    ref = _feature(target, measure)
    dist = np.array([graph_similarity(ref, _feature(r, measure), measure, **kw) for r in calib])
    idx = np.array([r.index for r in calib])
    order = np.lexsort((idx, dist))[:k_nn]
    return [calib[i] for i in order]


def conditional_prediction_set(probs, target, calib: Sequence[CalibrationRecord], k_nn: int,
                               measure: str, alpha: float, **kw) -> PredictionSet:
    local = local_calibration_set(target, calib, k_nn, measure, **kw)
    neighbors = [r.index for r in local] if k_nn < len(calib) else ()
    return prediction_set(probs, [r.score for r in local], alpha, neighbors)


@dataclass(frozen=True)
class SetMetrics:
    coverage: float
    avg_size: float
    size_sd: float
    n: int

    def as_dict(self) -> dict:
        return {"coverage": self.coverage, "avg_size": self.avg_size, "size_sd": self.size_sd, "n": self.n}


def evaluate_sets(results) -> SetMetrics:
    """Coverage and mean +- sample sd of set sizes over (set, label) pairs."""
    results = list(results)
    if not results:
        raise ValueError("no results to evaluate")
    covered = [y in s for s, y in results]
    sizes = np.array([s.size for s, _ in results], dtype=float)
    sd = float(sizes.std(ddof=1)) if len(sizes) > 1 else 0.0
    return SetMetrics(float(np.mean(covered)), float(sizes.mean()), sd, len(results))


# -- Monte Carlo verification --------------------------------------------------

def _dirichlet_scores(rng, n, k=3):
    probs = rng.dirichlet(np.ones(k), size=n)
    y = (rng.random(n)[:, None] > np.cumsum(probs, axis=1)).sum(axis=1)
    return 1.0 - probs[np.arange(n), np.minimum(y, k - 1)]


GENERATORS: dict = {
    "uniform": lambda rng, n: rng.random(n),
    "dirichlet": _dirichlet_scores,
    "discrete": lambda rng, n: rng.integers(0, 5, n) / 4.0,
    "constant": lambda rng, n: np.full(n, 0.5),
}


@dataclass
class CoverageReport:
    alpha: float
    m: int
    trials: int
    coverage: float
    ci_low: float
    ci_high: float
    half_width: float
    lower_bound: float
    upper_bound: Optional[float]
    tie_fraction: float
    passed: bool
    notes: list = field(default_factory=list)
    p_values: np.ndarray = field(default=None, repr=False)

    def summary(self) -> str:
        up = "n/a" if self.upper_bound is None else f"{self.upper_bound:.4f}"
        lines = [
            f"alpha={self.alpha} m={self.m} trials={self.trials}",
            f"coverage={self.coverage:.4f} ci95=[{self.ci_low:.4f}, {self.ci_high:.4f}] half_width={self.half_width:.4f}",
            f"bounds: lower={self.lower_bound:.4f} upper={up}",
        ]
        lines += [f"note: {n}" for n in self.notes]
        lines.append("PASS" if self.passed else "FAIL")
        return "\n".join(lines)


def monte_carlo_coverage(generator: Union[str, Callable] = "uniform", m: int = 19, alpha: float = 0.1,
                         trials: int = 10000, seed: int = 0) -> CoverageReport:
    """Empirical coverage of the conformal set over fresh i.i.d. draws.

    ``generator(rng, n)`` returns ``n`` true-label scores. Each trial draws
    ``m`` calibration scores and one test score from its own RNG stream.
    """
    alpha = _check_alpha(alpha)
    if trials < 1000:
        raise ConfigError("need at least 1000 trials")
    if m < 1:
        raise ConfigError("calibration size must be positive")
    gen = GENERATORS[generator] if isinstance(generator, str) else generator
    streams = np.random.SeedSequence(seed).spawn(trials)
    draws = np.stack([np.asarray(gen(np.random.default_rng(s), m + 1), dtype=float) for s in streams])
    calib, test = draws[:, :m], draws[:, m]
    counts = (calib >= test[:, None]).sum(axis=1)
    pv = (counts + 1) / (m + 1)
    hits = int(np.count_nonzero(pv >= alpha))
    cov = hits / trials
    ci = stats.binomtest(hits, trials).proportion_ci(0.95, method="exact")
    hw = max(cov - ci.low, ci.high - cov)

    srt = np.sort(draws, axis=1)
    tie_fraction = float(np.mean(np.any(srt[:, 1:] == srt[:, :-1], axis=1)))
    notes = []
    if np.all(srt[:, 0] == srt[:, -1]):
        warnings.warn("generator produced constant scores; coverage is trivially 1", RuntimeWarning)
        notes.append("constant scores (degenerate generator)")
    if tie_fraction > 0.5:
        notes.append(f"tie-heavy regime: {tie_fraction:.0%} of trials have tied scores; upper bound not checked")
    if (m + 1) * alpha <= 1:
        notes.append("no exclusion possible: (m+1)*alpha <= 1")

    slack = 1e-12
    lower = 1 - alpha
    upper = None if tie_fraction > 0.5 else 1 - alpha + 1 / (m + 1)
    ok = cov >= lower - hw - slack
    if upper is not None:
        ok = ok and cov <= upper + hw + slack
    return CoverageReport(alpha, m, trials, cov, float(ci.low), float(ci.high), float(hw), lower, upper,
                          tie_fraction, bool(ok), notes, pv)


def exact_marginal_coverage(m: int, alpha: float) -> float:
    """Coverage of the set for continuous, exchangeable scores.

    The test score ranks uniformly among m+1 values; it is kept when at least
    ``ceil(alpha (m+1)) - 1`` calibration scores are no smaller.
    """
    need = max(math.ceil(alpha * (m + 1) - 1e-12) - 1, 0)
    return (m + 1 - need) / (m + 1)
