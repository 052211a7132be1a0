import itertools

import numpy as np
import pytest

from cft2nn.tensor import (
    CPDecomp,
    TTDecomp,
    TuckerDecomp,
    cp_als,
    inner_product,
    mode_product,
    reconstruct,
    tt_svd,
    tucker_hooi,
)


def rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


def unit(v):
    return v / np.linalg.norm(v)


def orthonormal(rng, n, r):
    q, _ = np.linalg.qr(rng.normal(size=(n, r)))
    return q


def test_inner_product():
    assert inner_product(np.ones((2, 3)), np.ones((2, 3))) == 6
    assert inner_product(np.ones((2, 3)), np.zeros((2, 3))) == 0
    assert inner_product([[1, 2], [3, 4]], [[5, 6], [7, 8]]) == 70
    with pytest.raises(ValueError):
        inner_product(np.ones(3), np.ones(4))


def test_mode_product(rng):
    t = rng.normal(size=(2, 3))
    np.testing.assert_array_equal(mode_product(t, 1, np.eye(3)), t)
    v, u = rng.normal(size=4), rng.normal(size=(5, 4))
    np.testing.assert_allclose(mode_product(v, 0, u), u @ v)
    u = rng.normal(size=(4, 3))
    # mode-1 (0-based) product of a matrix is t @ u.T, entry by entry
    want = np.array([[sum(t[i, k] * u[j, k] for k in range(3)) for j in range(4)] for i in range(2)])
    np.testing.assert_allclose(mode_product(t, 1, u), want)
    t3 = rng.normal(size=(2, 3, 4))
    u = rng.normal(size=(5, 3))
    np.testing.assert_allclose(mode_product(t3, 1, u), np.einsum("ijk,aj->iak", t3, u))
    with pytest.raises(ValueError):
        mode_product(t3, 1, rng.normal(size=(5, 4)))


def test_cp_rank_one_recovery(rng):
    u, v, w = (unit(rng.normal(size=n)) for n in (4, 3, 5))
    t = 2.0 * np.einsum("i,j,k->ijk", u, v, w)
    d = cp_als(t, 1)
    assert rel(d.reconstruct(), t) <= 1e-8
    assert abs(d.weights[0]) == pytest.approx(2.0, abs=1e-8)
    for f in d.factors:
        np.testing.assert_allclose(np.linalg.norm(f, axis=0), 1.0, atol=1e-9)


def test_cp_zero_tensor():
    d = cp_als(np.zeros((2, 3, 4)), 3)
    assert np.all(d.weights == 0)
    assert np.all(reconstruct(d) == 0)


def test_cp_overcomplete_rank(rng):
    t = rng.normal(size=(3, 3, 3))
    d = cp_als(t, 27)
    assert rel(d.reconstruct(), t) <= 1e-6


def test_cp_properties(rng):
    t = rng.normal(size=(4, 5, 3))
    d = cp_als(t, 3, max_iters=300)
    errs = np.array(d.errors)
    assert np.all(np.diff(errs) <= 1e-10)
    assert np.all(np.diff(np.abs(d.weights)) <= 0)
    again = cp_als(t, 3, max_iters=300)
    np.testing.assert_array_equal(again.weights, d.weights)


def test_tucker_full_rank(rng):
    t = rng.normal(size=(4, 3, 5))
    d = tucker_hooi(t, t.shape)
    assert rel(d.reconstruct(), t) <= 1e-10


def test_tucker_construct_then_recover(rng):
    core = rng.normal(size=(2, 2, 2))
    us = [orthonormal(rng, n, 2) for n in (4, 5, 3)]
    t = np.einsum("abc,ia,jb,kc->ijk", core, *us)
    d = tucker_hooi(t, (2, 2, 2))
    assert rel(d.reconstruct(), t) <= 1e-8
    for u in d.factors:
        np.testing.assert_allclose(u.T @ u, np.eye(2), atol=1e-8)


def test_tucker_rank_one(rng):
    t = np.einsum("i,j,k->ijk", *(rng.normal(size=n) for n in (3, 4, 2)))
    d = tucker_hooi(t, (1, 1, 1))
    assert rel(d.reconstruct(), t) <= 1e-8


def test_tucker_pythagoras_and_monotone(rng):
    t = rng.normal(size=(5, 4, 6))
    d = tucker_hooi(t, (2, 3, 2))
    resid = t - d.reconstruct()
    assert np.sum(t**2) == pytest.approx(np.sum(d.core**2) + np.sum(resid**2), abs=1e-6)
    assert np.all(np.diff(d.errors) <= 1e-12)


def test_tucker_identity_factors_embed_core(rng):
    core = rng.normal(size=(2, 3))
    d = TuckerDecomp(core, [np.eye(2), np.eye(3)])
    np.testing.assert_array_equal(reconstruct(d), core)


def chain_entry(cores, idx):
    """Entry by explicit summation over every bond index."""
    total = 0.0
    ranges = [range(c.shape[2]) for c in cores[:-1]]
    for bonds in itertools.product(*ranges):
        full = (0,) + bonds + (0,)
        term = 1.0
        for m, c in enumerate(cores):
            term *= c[full[m], idx[m], full[m + 1]]
        total += term
    return total


def test_tt_exact(rng):
    t = rng.normal(size=(4, 3, 5))
    d = tt_svd(t)
    assert rel(d.reconstruct(), t) <= 1e-10
    assert d.cores[0].shape[0] == 1 and d.cores[-1].shape[2] == 1


def test_tt_rank_one(rng):
    t = np.einsum("i,j,k->ijk", *(rng.normal(size=n) for n in (3, 4, 2)))
    d = tt_svd(t, max_ranks=(1, 1))
    assert d.ranks == (1, 1)
    assert rel(d.reconstruct(), t) <= 1e-9


def test_tt_elements_match_chain_product(rng):
    t = rng.normal(size=(2, 4, 2, 4))
    d = tt_svd(t, max_ranks=3)
    full = d.reconstruct()
    for idx in itertools.product(*map(range, t.shape)):
        assert d.element(idx) == pytest.approx(full[idx], abs=1e-12)
        assert chain_entry(d.cores, idx) == pytest.approx(full[idx], abs=1e-12)


def test_tt_random_cores_reconstruct(rng):
    cores = [rng.normal(size=s) for s in [(1, 3, 2), (2, 4, 3), (3, 2, 2), (2, 3, 1)]]
    d = TTDecomp(cores)
    full = reconstruct(d)
    for _ in range(20):
        idx = tuple(int(rng.integers(n)) for n in d.shape)
        assert full[idx] == pytest.approx(chain_entry(cores, idx), abs=1e-12)


def test_tt_tolerance_truncation(rng):
    t = rng.normal(size=(4, 4, 4))
    d = tt_svd(t, tol=0.3)
    assert rel(d.reconstruct(), t) <= 0.3 + 1e-12
    assert max(d.ranks) <= 4


def test_cp_reconstruct_zero_weights(rng):
    d = CPDecomp(np.zeros(2), [rng.normal(size=(3, 2)), rng.normal(size=(4, 2))])
    assert np.all(reconstruct(d) == 0)
