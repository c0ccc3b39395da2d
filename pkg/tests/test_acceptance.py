"""Acceptance criteria 1-10 at their stated tolerances.

Each test carries ``@pytest.mark.criterion(k)``; the terminal summary prints
one PASS/FAIL line per criterion. Criteria 5-7 share the exhaustive order 5
and 6 sweep, cached under ``tests/.sweep_cache`` (override the path with
``HYPERCUBE_SWEEP_CACHE``); a cold run takes about an hour on one core.
"""

import time
import warnings

import numpy as np
import pytest

from conftest import random_latin
from hypercube.algebra import assoc_report, cayley_tensor, group_table
from hypercube.diagnostics import DEFAULT_C, structure_report, unfolding_rank
from hypercube.enumeration import enumerate_loops_upto_iso, enumerate_reduced_latin
from hypercube.matrix_kernel import numerical_rank, random_unitary
from hypercube.model import (
    FactorSet,
    apply_gauge,
    base_term_B,
    contract,
    gram_triple,
    kappa_values,
    misalignment_matrices,
    misalignment_R,
    objective_H,
    permute_factors,
    regular_rep_factors,
    unitarity_distance,
)
from hypercube.optimizer import analytic_grad, init_random, penalty_loss
from hypercube.sweep import fit_scaling
from test_enumeration import fill_all_grids

FIXTURE_GROUPS = ["Zn:2", "Zn:3", "Zn:4", "Zn:5", "Zn:6", "Zn:7", "Zn:8",
                  "Z2xZ2", "Z2xZ4", "Z2^3", "S3", "D4", "Q8"]
PUBLISHED_ORDER6_COUNT = 106


def _random_instance(rng, sizes):
    n = int(rng.choice(sizes))
    return random_latin(n, rng), init_random(n, int(rng.integers(2**31)))


# --- 1 ------------------------------------------------------------------------


@pytest.mark.criterion(1)
def test_certificate_exactness():
    tables = [group_table(s) for s in FIXTURE_GROUPS]
    start = time.perf_counter()
    for t in tables:
        n = t.n
        theta = regular_rep_factors(t)
        assert np.abs(contract(theta) - cayley_tensor(t)).max() < 1e-12, t.label
        assert abs(objective_H(theta) - 3 * n * n) <= 1e-9, t.label
        R, _ = misalignment_R(theta, t)
        assert R < 1e-15, t.label
    assert time.perf_counter() - start < 1.0


# --- 2 ------------------------------------------------------------------------


@pytest.mark.criterion(2)
def test_decomposition_identity():
    rng = np.random.default_rng(20)
    for _ in range(200):
        t, theta = _random_instance(rng, [2, 3, 4, 5, 6])
        n = t.n
        H = objective_H(theta)
        B, _ = base_term_B(theta, t)
        R, _ = misalignment_R(theta, t)
        assert abs(H - B - R) <= 1e-9 * max(1.0, H)
        assert R >= 0
        DA, _, _ = misalignment_matrices(theta, t)
        a = np.repeat(np.arange(n), n)
        inner = np.einsum("kij,kij->k", np.conj(theta.A[a]), DA) / n
        assert np.abs(inner).max() < 1e-10


# --- 3 ------------------------------------------------------------------------


def _fd_grad(f, X, h=1e-5):
    g = np.zeros(X.shape, dtype=complex)
    for idx in np.ndindex(X.shape):
        for unit in (1.0, 1j):
            Xp, Xm = X.copy(), X.copy()
            Xp[idx] += h * unit
            Xm[idx] -= h * unit
            g[idx] += unit * (f(Xp) - f(Xm)) / (2 * h)
    return g


@pytest.mark.criterion(3)
def test_gradient_oracle():
    rng = np.random.default_rng(30)
    for _ in range(50):
        t, theta = _random_instance(rng, [2, 3, 4])
        mu = float(rng.uniform(0.5, 50.0))
        g = analytic_grad(theta, t, mu)
        for k in range(3):
            def f(X, k=k):
                stacks = list(theta.stacks())
                stacks[k] = X
                return penalty_loss(FactorSet(*stacks), t, mu)

            num = _fd_grad(f, theta.stacks()[k])
            rel = np.linalg.norm(num - g.stacks()[k]) / np.linalg.norm(num)
            assert rel < 1e-4


# --- 4 ------------------------------------------------------------------------


@pytest.mark.criterion(4)
@pytest.mark.parametrize("spec", ["Zn:5", "S3"])
def test_group_optimum(group_runs, spec):
    t, best, runs = group_runs[spec]
    n2 = t.n**2
    assert len(runs) == 8
    assert sum(r.converged for r in runs) >= 1
    assert best.converged
    assert 2.99 <= best.H / n2 <= 3.05
    assert best.R / n2 < 1e-3
    assert unitarity_distance(best.theta) < 0.05
    report = structure_report(best.theta, t)
    assert report.character_residual is not None, report.flags
    assert report.character_residual < 0.05 * t.n


# --- 5 ------------------------------------------------------------------------


@pytest.mark.criterion(5)
def test_strict_gap(sweep_records):
    order5 = [r for r in sweep_records if r.order == 5]
    assert len(order5) == 6
    nongroup = [r for r in order5 if r.n_v_norm > 0]
    assert len(nongroup) == 5
    for r in nongroup:
        assert r.converged, f"loop {r.loop_id} has no converged restart"
        assert r.H_norm >= 3.05, f"loop {r.loop_id}: H/n^2 = {r.H_norm:.5f}"


# --- 6 ------------------------------------------------------------------------


@pytest.mark.criterion(6)
@pytest.mark.slow
def test_scaling_laws(sweep_records):
    fit = fit_scaling(sweep_records, fixed_intercepts=True)
    summary = (
        f"c_R={fit.c_R:.4f} c_B={fit.c_B:.4f} c_H={fit.c_H:.4f} "
        f"ratio={fit.c_ratio:.4f} points={fit.n_points} quarantined={len(fit.quarantine)}"
    )
    print(summary)
    assert abs(fit.c_R - 0.50) <= 0.10, summary
    assert abs(fit.c_B - 0.14) <= 0.06, summary
    assert abs(fit.c_H - 0.36) <= 0.12, summary
    assert fit.c_ratio < 1, summary


# --- 7 ------------------------------------------------------------------------


@pytest.mark.criterion(7)
def test_per_instance_dominance(sweep_records):
    c = DEFAULT_C
    assert c == 0.28
    converged = [r for r in sweep_records if r.converged]
    assert converged
    worst = min(converged, key=lambda r: r.B_norm - (3 - c * r.R_norm))
    for r in converged:
        assert r.B_norm >= 3 - c * r.R_norm - 0.02, (
            f"order {r.order} loop {r.loop_id}: B/n^2={r.B_norm:.5f} R/n^2={r.R_norm:.5f}"
        )
    print(f"smallest margin {worst.B_norm - (3 - c * worst.R_norm):+.5f} (order {worst.order} loop {worst.loop_id})")


# --- 8 ------------------------------------------------------------------------


def _invariants(theta, t):
    B, _ = base_term_B(theta, t)
    R, _ = misalignment_R(theta, t)
    feas = float(np.abs(contract(theta) - cayley_tensor(t)).max())
    return np.array([objective_H(theta), B, R, feas])


@pytest.mark.criterion(8)
def test_gauge_invariance():
    rng = np.random.default_rng(80)
    for trial in range(100):
        t, theta = _random_instance(rng, [2, 3, 4, 5, 6])
        n = t.n
        U, V, W = (random_unitary(n, 3 * trial + k) for k in range(3))
        before = _invariants(theta, t)
        after = _invariants(apply_gauge(theta, U, V, W), t)
        assert np.all(np.abs(after - before) <= 1e-8 * np.maximum(1.0, np.abs(before)))


@pytest.mark.criterion(8)
def test_permutation_equivariance():
    rng = np.random.default_rng(81)
    for _ in range(100):
        n = int(rng.integers(2, 9))
        theta = init_random(n, int(rng.integers(2**31)))
        phi, psi, chi = (rng.permutation(n) for _ in range(3))
        T = contract(theta)
        np.testing.assert_array_equal(contract(permute_factors(theta, phi, psi, chi)), T[np.ix_(phi, psi, chi)])


@pytest.mark.criterion(8)
def test_kappa_rescaling_invariance():
    rng = np.random.default_rng(82)
    for _ in range(100):
        t, theta = _random_instance(rng, [2, 3, 4, 5, 6])
        n = t.n
        s = rng.uniform(0.1, 10, size=(3, n)) * np.exp(1j * rng.uniform(0, 2 * np.pi, size=(3, n)))
        scaled = FactorSet(*(X * w[:, None, None] for X, w in zip(theta.stacks(), s)))
        k0, k1 = kappa_values(theta, t), kappa_values(scaled, t)
        assert np.all(np.abs(k1 - k0) <= 1e-10 * np.maximum(1.0, k0))


# --- 9 ------------------------------------------------------------------------


@pytest.mark.criterion(9)
def test_unfolding_rank_of_all_enumerated_tables():
    checked = 0
    for n in range(1, 7):
        for t in enumerate_reduced_latin(n):
            assert unfolding_rank(cayley_tensor(t)) == n
            checked += 1
    assert checked == 1 + 1 + 1 + 4 + 56 + 9408


@pytest.mark.criterion(9)
@pytest.mark.parametrize("spec", ["Zn:5", "S3"])
def test_gram_rank_and_kappa_on_group_optimum(group_runs, spec):
    t, _, runs = group_runs[spec]
    converged = [r for r in runs if r.converged]
    assert converged
    for r in converged:
        X = gram_triple(r.theta, t).X
        assert numerical_rank(X, tol=1e-6) == t.n
        kappa_mean = float(kappa_values(r.theta, t).mean())
        # upper end allows for rounding of a value that is 1 in exact arithmetic
        assert 0.95 <= kappa_mean <= 1.0 + 1e-12


# --- 10 -----------------------------------------------------------------------


@pytest.mark.criterion(10)
def test_enumeration_oracle():
    order5 = enumerate_loops_upto_iso(5)
    assert len(order5) == 6
    assert sum(assoc_report(t).is_group for t in order5) == 1

    got = {tuple(map(tuple, t.tolist())) for t in enumerate_reduced_latin(4)}
    assert got == fill_all_grids(4)

    count6 = len(enumerate_loops_upto_iso(6))
    # independently confirmed by orbit counting in test_enumeration
    assert count6 == 109
    message = f"order-6 loop classes: {count6}, published count {PUBLISHED_ORDER6_COUNT}"
    if count6 != PUBLISHED_ORDER6_COUNT:
        message += f" (discrepancy {count6 - PUBLISHED_ORDER6_COUNT:+d})"
        warnings.warn(message, stacklevel=1)
    print(message)
