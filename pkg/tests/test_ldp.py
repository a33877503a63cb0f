import math

import numpy as np
import pytest

from pmflab.experiments import drift_only_family
from pmflab.ldp import (
    AtomicMeasure,
    LDConfig,
    LDPError,
    H_m,
    build_kernels,
    expm_series,
    kernel_gap,
    lambda_cesaro,
    lambda_value,
    legendre_probe,
    matrix_exponential_apply,
    q_quantities,
    tail_slope,
    wilson_interval,
)
from pmflab.network import build_coefficients
from pmflab.noise import DriftDensity, JumpPart, LevySpec, NoiseModel
from pmflab.simulate import SimConfig
from pmflab.sparse import SparseMatrix

BROWNIAN = LevySpec(brownian_var=1.0)


def drift_only(n, m, blocks):
    return build_coefficients(n, m, blocks)


def flat_noise(n, m):
    return NoiseModel(L_specs=tuple(LevySpec() for _ in range(n)),
                      M_specs=tuple(BROWNIAN for _ in range(m)),
                      b_specs=tuple(DriftDensity() for _ in range(m)))


def two_particle_kernels(K=32, gamma0=1.0, c=0.5, d_cols=0.3, a_zero=True):
    """n = 2 drift-only config with one-directional coupling.

    With ``a_zero`` the nilpotent structure (particle 0 listens to 1, no
    feedback, zero self-drift) makes both response kernels exactly
    constant: every power of the drift beyond the first annihilates the
    loading matrices.
    """
    if a_zero:
        blocks = [
            ("aP", SparseMatrix.from_entries(2, 2, [(0, 1, c)])),
            ("rC", SparseMatrix.identity(2)),
            ("rP", SparseMatrix.from_entries(2, 2, [(0, 1, d_cols)])),
        ]
    else:
        blocks = [
            ("aP", SparseMatrix.from_entries(2, 2, [(0, 1, c), (1, 0, c)])),
            ("rC", SparseMatrix.identity(2)),
            ("rP", SparseMatrix.from_entries(2, 2, [(0, 1, d_cols), (1, 0, d_cols)])),
            ("aC", SparseMatrix.diagonal([-0.4, -0.7])),
        ]
    coeffs = drift_only(2, 2, blocks)
    ld = LDConfig(dominating=BROWNIAN, gamma_of_N=lambda N: int(gamma0))
    return build_kernels(coeffs, None, ld, 1, np.linspace(0, 1, K + 1), d=2), ld


# ------------------------------------------------------ matrix exponential


def test_expm_apply_zero_matrix():
    V = np.arange(6.0).reshape(3, 2)
    out = matrix_exponential_apply(SparseMatrix.zeros(3, 3), 1.7, V)
    assert np.allclose(out, V)


def test_expm_apply_diagonal():
    out = matrix_exponential_apply(SparseMatrix.diagonal([-1.0, -1.0]), 1.0, np.eye(2))
    assert np.allclose(out, np.diag([math.exp(-1)] * 2), rtol=1e-12)


def test_expm_apply_nilpotent_terminates():
    A = SparseMatrix.from_entries(2, 2, [(0, 1, 1.0)])
    out = matrix_exponential_apply(A, 1.0, np.eye(2))
    assert np.allclose(out, np.array([[1.0, 1.0], [0.0, 1.0]]), atol=1e-15)


def test_expm_apply_matches_series_oracle():
    rng = np.random.default_rng(0)
    for _ in range(30):
        n = int(rng.integers(1, 7))
        A = SparseMatrix.from_dense(rng.normal(0, 0.8, (n, n)))
        t = rng.uniform(0.1, 2.0)
        got = matrix_exponential_apply(A, t, np.eye(n))
        want = expm_series(A.to_dense() * t)
        assert np.allclose(got, want, rtol=1e-10, atol=1e-12)


# ----------------------------------------------------------------- kernels


def test_kernels_zero_periphery_drift_gives_zero_G():
    coeffs = drift_only(2, 2, [("rC", SparseMatrix.identity(2)),
                               ("rP", SparseMatrix.from_entries(2, 2, [(0, 1, 0.2), (1, 0, 0.2)]))])
    ks = build_kernels(coeffs, None, LDConfig(dominating=BROWNIAN), 4,
                       np.linspace(0, 1, 9), d=2)
    assert not ks.G_vals.any()
    assert ks.R_vals.any()


def test_kernels_zero_periphery_loading_gives_zero_R():
    coeffs = drift_only(2, 2, [("aP", SparseMatrix.from_entries(2, 2, [(0, 1, 0.5), (1, 0, 0.5)])),
                               ("rC", SparseMatrix.identity(2))])
    ks = build_kernels(coeffs, None, LDConfig(dominating=BROWNIAN), 4,
                       np.linspace(0, 1, 9), d=2)
    assert not ks.R_vals.any()
    assert ks.G_vals.any()


def test_kernels_constant_for_nilpotent_drift():
    ks, _ = two_particle_kernels(K=8, gamma0=3.0, c=0.5)
    want = 3.0 * np.array([[0.0, 0.5], [0.0, 0.0]])
    for it in range(ks.G_vals.shape[0]):
        for isv in range(ks.G_vals.shape[1]):
            assert np.allclose(ks.G_vals[it, isv], want, atol=1e-13)
    assert np.allclose(ks.G_rows(0.37, 0.81), want, atol=1e-13)
    assert np.allclose(ks.R_rows(0.61), 3.0 * np.array([[0.0, 0.3], [0.0, 0.0]]), atol=1e-13)


def test_kernels_reject_volatility():
    coeffs = build_coefficients(2, 2, [("sC", SparseMatrix.identity(2))])
    with pytest.raises(LDPError):
        build_kernels(coeffs, None, LDConfig(dominating=BROWNIAN), 2, np.linspace(0, 1, 5))


def test_kernel_gap_decreases_along_family():
    ld = LDConfig(dominating=BROWNIAN)
    gaps = []
    grid = np.linspace(0, 1, 17)
    for N in (8, 16, 32):
        a, _ = drift_only_family(N)
        b, _ = drift_only_family(2 * N)
        ka = build_kernels(a, None, ld, N, grid, d=2)
        kb = build_kernels(b, None, ld, 2 * N, grid, d=2)
        gaps.append(kernel_gap(ka, kb))
    assert gaps[2] < gaps[1] < gaps[0]


# --------------------------------------------------------------- q values


def test_q_zero_cases():
    ld = LDConfig(dominating=BROWNIAN)
    diag_core = drift_only(3, 3, [
        ("aC", SparseMatrix.diagonal([-1.0, -0.5, -0.2])),
        ("aP", SparseMatrix.from_entries(3, 3, [(0, 1, 0.3), (1, 2, 0.4)])),
        ("rC", SparseMatrix.identity(3))])
    q1, q2 = q_quantities(diag_core, ld, 5)
    assert q1 == 0.0 and q2 > 0.0
    empty = drift_only(3, 3, [("aC", SparseMatrix.diagonal([-1.0] * 3))])
    assert q_quantities(empty, ld, 5) == (0.0, 0.0)


def test_q_matches_dense_triple_sum():
    rng = np.random.default_rng(7)
    ld = LDConfig(dominating=BROWNIAN, gamma_of_N=lambda N: 2 * N)
    for _ in range(20):
        aC = rng.normal(0, 1, (3, 3)) * (rng.random((3, 3)) < 0.7)
        aP = rng.normal(0, 1, (3, 3)) * (rng.random((3, 3)) < 0.7)
        np.fill_diagonal(aP, 0.0)
        rC = rng.normal(0, 1, (3, 4)) * (rng.random((3, 4)) < 0.7)
        coeffs = drift_only(3, 4, [("aC", SparseMatrix.from_dense(aC)),
                                   ("aP", SparseMatrix.from_dense(aP)),
                                   ("rC", SparseMatrix.from_dense(rC))])
        q1, q2 = q_quantities(coeffs, ld, 6)
        gamma = 12.0
        want1 = gamma * max(
            sum(abs(aP[i, j] * aC[j, k]) for j in range(3) for k in range(3) if k != j)
            for i in range(3))
        want2 = gamma * max(
            sum(abs(aP[i, j] * rC[j, k]) for j in range(3))
            for i in range(3) for k in range(4))
        assert q1 == pytest.approx(want1, rel=1e-12)
        assert q2 == pytest.approx(want2, rel=1e-12)


# ------------------------------------------------------------ H functional


def test_H_zero_measure():
    ks, _ = two_particle_kernels()
    theta = AtomicMeasure.zero(2, 1.0)
    assert H_m(ks, theta, 0, 0.0) == 0.0


def test_H_single_atom_constant_R():
    # G = 0 and R constant 1 in every observed entry
    coeffs = drift_only(2, 2, [("rP", SparseMatrix.from_dense(np.ones((2, 2))))])
    ks = build_kernels(coeffs, None, LDConfig(dominating=BROWNIAN, gamma_of_N=lambda N: 1),
                       1, np.linspace(0, 1, 9), d=2)
    w = 0.7
    theta = AtomicMeasure.from_lists([[(1.0, w)], [(1.0, w)]], 1.0)
    for r in (0.0, 0.25, 0.8):
        assert H_m(ks, theta, 0, r) == pytest.approx(2 * w)


def test_H_linear_in_measure():
    ks, _ = two_particle_kernels(K=16, a_zero=False)
    rng = np.random.default_rng(3)
    grid = np.linspace(0, 1, 17)
    for _ in range(20):
        atoms1 = [[(float(rng.choice(grid)), float(rng.normal()))] for _ in range(2)]
        atoms2 = [[(float(rng.choice(grid)), float(rng.normal()))] for _ in range(2)]
        t1 = AtomicMeasure.from_lists(atoms1, 1.0)
        t2 = AtomicMeasure.from_lists(atoms2, 1.0)
        r = float(rng.choice(grid[:-1]))
        lhs = H_m(ks, t1.add(t2), 1, r)
        rhs = H_m(ks, t1, 1, r) + H_m(ks, t2, 1, r)
        assert lhs == pytest.approx(rhs, abs=1e-12)


# ---------------------------------------------------------------- Lambda


def test_lambda_zero_measure_is_zero():
    ks, ld = two_particle_kernels()
    specs = (BROWNIAN, BROWNIAN)
    out = lambda_cesaro(ks, specs, AtomicMeasure.zero(2, 1.0), [1, 2], ld)
    assert out["lambda"] == 0.0


def test_lambda_homogeneous_columns_constant_in_depth():
    # every noise column couples identically: the Cesàro averages form a
    # constant sequence whatever the averaging depth
    coeffs = drift_only(2, 3, [("rP", SparseMatrix.from_dense(np.ones((2, 3))))])
    ld = LDConfig(dominating=BROWNIAN, gamma_of_N=lambda N: N)
    ks = build_kernels(coeffs, None, ld, 3, np.linspace(0, 1, 17), d=2)
    specs = (BROWNIAN, BROWNIAN, BROWNIAN)
    theta = AtomicMeasure.from_lists([[(1.0, 0.5)], [(0.5, -0.3)]], 1.0)
    out = lambda_cesaro(ks, specs, theta, [1, 2, 3], ld)
    assert out["averages"][0] == pytest.approx(out["averages"][1], rel=1e-12)
    assert out["averages"][1] == pytest.approx(out["averages"][2], rel=1e-12)
    assert out["cauchy_diff"] == pytest.approx(0.0, abs=1e-15)
    assert out["lambda"] > 0.0


def test_lambda_brownian_one_atom_against_independent_quadrature():
    gamma0, c, d_cols = 2.0, 0.5, 0.3
    K = 1200
    ks, ld = two_particle_kernels(K=K, gamma0=gamma0, c=c, d_cols=d_cols)
    w = (0.8, -0.6)
    theta = AtomicMeasure.from_lists([[(1.0, w[0])], [(1.0, w[1])]], 1.0)
    specs = (BROWNIAN, BROWNIAN)
    got = lambda_cesaro(ks, specs, theta, [1, 2], ld)["lambda"]

    # independent oracle: the nilpotent kernels in closed form, 10x finer grid
    G = gamma0 * np.array([[0.0, c], [0.0, 0.0]])
    R = gamma0 * np.array([[0.0, d_cols], [0.0, 0.0]])
    r_fine = np.linspace(0.0, 1.0, 10 * K + 1)
    total = 0.0
    for m in range(2):
        alpha = sum(w[i] * G[i, m] for i in range(2))
        beta = sum(w[i] * R[i, m] for i in range(2))
        H = alpha * (1.0 - r_fine) + beta
        total += np.trapezoid(0.5 * H ** 2, r_fine)
    want = total / 2
    assert got == pytest.approx(want, rel=1e-6)

    # closed form as an extra cross-check
    closed = 0.0
    for m in range(2):
        alpha = sum(w[i] * G[i, m] for i in range(2))
        beta = sum(w[i] * R[i, m] for i in range(2))
        closed += 0.5 * (alpha ** 2 / 3 + alpha * beta + beta ** 2)
    closed /= 2
    assert got == pytest.approx(closed, rel=1e-6)


def test_lambda_convex_and_nonnegative():
    ks, _ = two_particle_kernels(K=24, a_zero=False)
    ld = LDConfig(dominating=LevySpec(brownian_var=2.0,
                                      jumps=JumpPart(rate=2.0, atoms=((0.5, 0.5), (-0.5, 0.5)))))
    specs = (LevySpec(brownian_var=1.0),
             LevySpec(brownian_var=0.5, jumps=JumpPart(rate=1.0, atoms=((0.5, 0.5), (-0.5, 0.5)))))
    rng = np.random.default_rng(5)
    sites = [0.25, 0.75, 1.0]
    for _ in range(40):
        wa = rng.normal(0, 1, (2, 3))
        wb = rng.normal(0, 1, (2, 3))
        t = rng.uniform(0, 1)
        mk = lambda w: AtomicMeasure.from_lists(
            [[(s, w[i, j]) for j, s in enumerate(sites)] for i in range(2)], 1.0)
        la = lambda_value(ks, specs, mk(wa), ld)
        lb = lambda_value(ks, specs, mk(wb), ld)
        lmix = lambda_value(ks, specs, mk(t * wa + (1 - t) * wb), ld)
        assert lmix <= t * la + (1 - t) * lb + 1e-9
        assert la >= 0.0 and lb >= 0.0


def test_lambda_domination_enforced():
    ks, _ = two_particle_kernels(K=8)
    ld = LDConfig(dominating=LevySpec(brownian_var=0.5))
    theta = AtomicMeasure.from_lists([[(1.0, 1.0)], []], 1.0)
    with pytest.raises(LDPError, match="dominat"):
        lambda_cesaro(ks, (BROWNIAN, BROWNIAN), theta, [1, 2], ld)


def test_lambda_quadrature_richardson():
    # atom times sit on every lattice so the integrand is panel-smooth
    theta_lists = [[(1.0, 0.8)], [(0.5, -0.4)]]
    specs = (BROWNIAN, BROWNIAN)
    vals = {}
    for K in (24, 48, 96):
        ks, ld = two_particle_kernels(K=K, a_zero=False)
        vals[K] = lambda_value(ks, specs, AtomicMeasure.from_lists(theta_lists, 1.0), ld)
    d1 = abs(vals[24] - vals[48])
    d2 = abs(vals[48] - vals[96])
    assert d2 < d1
    assert d1 < 4 * (4 * d2)


def test_legendre_probe_nonnegative_at_origin():
    ks, ld = two_particle_kernels(K=8)
    specs = (BROWNIAN, BROWNIAN)
    val = legendre_probe(ks, specs, ld, np.zeros((2, 2)), [0.5, 1.0], iterations=5)
    assert val >= 0.0


# -------------------------------------------------------------- tail probe


def test_wilson_interval_contains_p_hat():
    lo, hi = wilson_interval(7, 100)
    assert lo < 0.07 < hi


def test_tail_zero_periphery_family_never_exceeds():
    coeffs = drift_only(3, 3, [("aC", SparseMatrix.diagonal([-1.0] * 3)),
                               ("rC", SparseMatrix.identity(3))])
    noise = flat_noise(3, 3)
    ld = LDConfig(dominating=BROWNIAN)
    pts = tail_slope([(3, coeffs, noise)], ld, 0.05,
                     SimConfig(T=1.0, steps=20, n_paths=50, seed=0))
    assert pts[0].n_exceed == 0 and not pts[0].estimable


def test_tail_zero_level_probability_one():
    coeffs, noise = drift_only_family(6, coupling=4.0)
    ld = LDConfig(dominating=BROWNIAN)
    pts = tail_slope([(6, coeffs, noise)], ld, 0.0,
                     SimConfig(T=1.0, steps=30, n_paths=200, seed=1))
    assert pts[0].p_hat == 1.0
    assert pts[0].normalized_log == 0.0


def test_tail_trend_decreasing():
    # deep-tail level: the quadratic decay dominates the entropy prefactor
    ld = LDConfig(dominating=BROWNIAN)
    family = [(N, *drift_only_family(N, coupling=1.0)) for N in (3, 6, 12)]
    pts = tail_slope(family, ld, 0.4, SimConfig(T=1.0, steps=60, n_paths=30000, seed=2))
    logs = [p.normalized_log for p in pts if p.estimable]
    assert len(logs) >= 2
    assert all(b <= a + 1e-12 for a, b in zip(logs, logs[1:]))
