"""Paired Euler integration of a network and its partial mean-field twin.

Both systems are advanced on the same noise realisation.  The original
system updates

    X += (aC + aP) X dt + ((sC + sP) X) . dL + (fC + fP) b(t) dt
         + (rC + rP) dM,

while the mean-field twin replaces every periphery contact by its
expectation and drops the periphery martingale term:

    Xb += (aC Xb + aP m(t)) dt + ((sC Xb + sP m(t))) . dL
          + (fC b(t) + fP E[b](t)) dt + rC dM,

with m(t) the deterministic mean curve.  The ``.`` product is entrywise
per particle.  Term grouping is identical in both updates, so zero
periphery matrices make the two trajectories bitwise equal.

Monte Carlo runs are split into fixed-size chunks of consecutive path
indices; chunk boundaries depend only on the workload, never on the
worker count, and per-chunk results are reduced in chunk order.  Results
are therefore byte-stable across thread counts.
"""

from __future__ import annotations

import concurrent.futures
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .network import CoefficientSet, NetworkError
from .noise import NoiseModel, sample_path
from .sparse import SparseMatrix

_DENSE_FRACTION = 0.05   # above this fill ratio a matrix is applied densely
_MAX_CHUNK_DOUBLES = 24_000_000   # noise-buffer budget per chunk (~190 MB)


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimConfig:
    """Monte Carlo run settings."""

    T: float
    steps: int
    n_paths: int
    seed: int
    record_stride: int = 1
    threads: int = 1

    def __post_init__(self):
        if self.steps < 1 or self.n_paths < 1:
            raise ValueError("steps and n_paths must be at least 1")
        if self.T <= 0:
            raise ValueError("horizon T must be positive")

    def grid(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.steps + 1)


@dataclass(frozen=True)
class PairTrajectory:
    """Recorded states of one path; X and Xbar share X(0) exactly."""

    grid: np.ndarray
    X: np.ndarray          # (K+1, n)
    Xbar: np.ndarray       # (K+1, n)
    mean_curve: np.ndarray  # (K+1, n)


@dataclass(frozen=True)
class ErrorEstimate:
    """Monte Carlo estimate of the worst-particle running-max L2 gap."""

    delta_hat: float
    std_err: float
    per_particle: np.ndarray
    n_paths: int
    n_flagged: int

    def __post_init__(self):
        if self.per_particle.size:
            assert self.delta_hat == float(self.per_particle.max())


# ------------------------------------------------------------- mean curve


def solve_mean_curve(coeffs: CoefficientSet, noise: NoiseModel, grid: np.ndarray) -> np.ndarray:
    """Classical fourth-order Runge-Kutta solve of the mean dynamics.

    The mean of both systems obeys m'(t) = (aC+aP) m(t) + (fC+fP) E[b](t)
    with m(0) the initial mean, because the volatility and martingale
    terms average to zero.
    """
    grid = np.asarray(grid, dtype=float)
    A = coeffs.drift.to_dense()
    F = coeffs.fC.add(coeffs.fP).to_dense()

    def rhs(t: float, y: np.ndarray) -> np.ndarray:
        return A @ y + F @ noise.mean_drift_density(t)

    out = np.empty((len(grid), coeffs.n))
    out[0] = noise.x0_mean
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(len(grid) - 1):
            t, h = grid[k], grid[k + 1] - grid[k]
            y = out[k]
            k1 = rhs(t, y)
            k2 = rhs(t + h / 2, y + h / 2 * k1)
            k3 = rhs(t + h / 2, y + h / 2 * k2)
            k4 = rhs(t + h, y + h * k3)
            out[k + 1] = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return out


# ------------------------------------------------------------ single steps


class _Applier:
    """Applies one coefficient matrix to a (n, B) state block.

    Dense matmul beyond a fill threshold, CSR product below it, and a
    no-op for zero matrices.  The choice depends only on the matrix, so
    results do not vary with the execution context.
    """

    def __init__(self, mat: SparseMatrix):
        self.is_zero = mat.is_zero()
        size = max(1, mat.n_rows * mat.n_cols)
        self.use_dense = (not self.is_zero) and mat.nnz / size > _DENSE_FRACTION
        self.dense = mat.to_dense() if self.use_dense else None
        self.csr = None if self.use_dense or self.is_zero else mat.tocsr()
        self.out_rows = mat.n_rows

    def __call__(self, block: np.ndarray) -> np.ndarray | None:
        if self.is_zero:
            return None
        if self.use_dense:
            return self.dense @ block
        return self.csr @ block


class _StepKernel:
    """Precompiled per-step updates for the paired systems."""

    def __init__(self, coeffs: CoefficientSet):
        self.coeffs = coeffs
        self.aC = _Applier(coeffs.aC)
        self.aP = _Applier(coeffs.aP)
        self.sC = _Applier(coeffs.sC)
        self.sP = _Applier(coeffs.sP)
        self.fC = _Applier(coeffs.fC)
        self.fP = _Applier(coeffs.fP)
        self.rC = _Applier(coeffs.rC)
        self.rP = _Applier(coeffs.rP)

    @staticmethod
    def _acc(target, term):
        if term is None:
            return target
        return term if target is None else target + term

    def ips_increment(self, X, dL, dM, b, dt):
        drift = self._acc(self._acc(None, self.aC(X)), self.aP(X))
        vol = self._acc(self._acc(None, self.sC(X)), self.sP(X))
        fdrift = self._acc(self._acc(None, self.fC(b)), self.fP(b))
        mart = self._acc(self._acc(None, self.rC(dM)), self.rP(dM))
        inc = 0.0
        if drift is not None:
            inc = inc + drift * dt
        if vol is not None:
            inc = inc + vol * dL
        if fdrift is not None:
            inc = inc + fdrift * dt
        if mart is not None:
            inc = inc + mart
        return inc

    def pmfs_increment(self, Xb, mean_val, dL, dM, b, b_mean, dt):
        drift = self._acc(self._acc(None, self.aC(Xb)), self.aP(mean_val))
        vol = self._acc(self._acc(None, self.sC(Xb)), self.sP(mean_val))
        fdrift = self._acc(self._acc(None, self.fC(b)), self.fP(b_mean))
        mart = self._acc(None, self.rC(dM))
        inc = 0.0
        if drift is not None:
            inc = inc + drift * dt
        if vol is not None:
            inc = inc + vol * dL
        if fdrift is not None:
            inc = inc + fdrift * dt
        if mart is not None:
            inc = inc + mart
        return inc


def _unpack_increments(coeffs, noise_increments):
    if len(noise_increments) == 3:
        dL, dM, b = noise_increments
        b_mean = b
    else:
        dL, dM, b, b_mean = noise_increments
    return (
        np.asarray(dL, dtype=float).reshape(coeffs.n, -1),
        np.asarray(dM, dtype=float).reshape(coeffs.m, -1),
        np.asarray(b, dtype=float).reshape(coeffs.m, -1),
        np.asarray(b_mean, dtype=float).reshape(coeffs.m, -1),
    )


def step_ips(state, coeffs: CoefficientSet, noise_increments, dt: float):
    """One Euler step of the original system.

    ``noise_increments`` is (dL, dM, b) with arrays shaped like the
    state's particle/noise axes (an optional fourth element, the density
    mean, is ignored here).  Accepts (n,) vectors or (n, B) blocks.
    """
    dL, dM, b, _ = _unpack_increments(coeffs, noise_increments)
    kern = _StepKernel(coeffs)
    state = np.asarray(state, dtype=float)
    squeeze = state.ndim == 1
    X = state[:, None] if squeeze else state
    inc = kern.ips_increment(X, dL, dM, b, dt)
    out = X + inc
    return out[:, 0] if squeeze else out


def step_pmfs(state, mean_curve_value, coeffs: CoefficientSet, noise_increments, dt: float):
    """One Euler step of the mean-field twin, on the same increments.

    Pass the identical ``noise_increments`` object as the paired
    :func:`step_ips` call.  When the drift density is randomised, supply a
    fourth element with its deterministic mean; it defaults to the
    realised values (exact for deterministic densities).
    """
    dL, dM, b, b_mean = _unpack_increments(coeffs, noise_increments)
    kern = _StepKernel(coeffs)
    state = np.asarray(state, dtype=float)
    squeeze = state.ndim == 1
    Xb = state[:, None] if squeeze else state
    inc = kern.pmfs_increment(
        Xb,
        np.asarray(mean_curve_value, dtype=float).reshape(coeffs.n, -1),
        dL, dM, b, b_mean, dt,
    )
    out = Xb + inc
    return out[:, 0] if squeeze else out


# ------------------------------------------------------------ path engine


def _chunk_bounds(n_paths: int, per_path_doubles: int) -> list[tuple[int, int]]:
    chunk = max(16, min(n_paths, _MAX_CHUNK_DOUBLES // max(1, per_path_doubles)))
    return [(lo, min(lo + chunk, n_paths)) for lo in range(0, n_paths, chunk)]


def _simulate_chunk(
    coeffs: CoefficientSet,
    noise: NoiseModel,
    sim: SimConfig,
    mean_curve: np.ndarray,
    lo: int,
    hi: int,
    observe: int | None,
):
    """Evolve paths [lo, hi); return per-path running-max gaps and extras.

    Only the noise blocks the coefficient set actually consumes are drawn;
    each block reads its own stream, so the skipping never changes the
    realised values of the blocks that are drawn.
    """
    from .noise import _COMP_B, _COMP_L, _COMP_M, _COMP_X0, _draw_levy_increments, stream

    grid = sim.grid()
    dts = np.diff(grid)
    K = sim.steps
    n, m = coeffs.n, coeffs.m
    B = hi - lo
    kern = _StepKernel(coeffs)
    need_L = coeffs.has_volatility()
    need_M = not (coeffs.rC.is_zero() and coeffs.rP.is_zero())
    need_b = bool(noise.b_white_vars().any()) and not (
        coeffs.fC.is_zero() and coeffs.fP.is_zero())

    dL = np.zeros((B, K, n)) if need_L else None
    dM = np.zeros((B, K, m)) if need_M else None
    bv = np.zeros((B, K, m)) if need_b else None
    X0 = np.zeros((B, n))
    b_mean = noise.mean_drift_density(grid[:-1])    # (K, m)
    white_sd = np.sqrt(noise.b_white_vars())
    Lfac = noise._brownian_factor()
    Xfac = noise._x0_factor()
    for p in range(lo, hi):
        z0 = stream(sim.seed, p, _COMP_X0).standard_normal(n)
        X0[p - lo] = noise.x0_mean + (Xfac * z0 if Xfac.ndim == 1 else Xfac @ z0)
        if need_L:
            dL[p - lo] = _draw_levy_increments(
                stream(sim.seed, p, _COMP_L), noise.L_specs, dts, Lfac)
        if need_M:
            dM[p - lo] = _draw_levy_increments(
                stream(sim.seed, p, _COMP_M), noise.M_specs, dts, None)
        if need_b:
            xi = stream(sim.seed, p, _COMP_B).standard_normal((K, m))
            bv[p - lo] = b_mean + xi * white_sd[None, :]

    X = np.ascontiguousarray(X0.T)
    Xb = X.copy()
    runmax = np.zeros((n, B))
    obsmax = np.zeros(B) if observe is not None else None
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(K):
            dt = dts[k]
            dLk = np.ascontiguousarray(dL[:, k, :].T) if need_L else None
            dMk = np.ascontiguousarray(dM[:, k, :].T) if need_M else None
            bmk = b_mean[k][:, None]
            bk = np.ascontiguousarray(bv[:, k, :].T) if need_b else bmk
            mk = mean_curve[k][:, None]
            X = X + kern.ips_increment(X, dLk, dMk, bk, dt)
            Xb = Xb + kern.pmfs_increment(Xb, mk, dLk, dMk, bk, bmk, dt)
            gap = np.abs(X - Xb)
            np.maximum(runmax, gap, out=runmax)
            if obsmax is not None and observe:
                np.maximum(obsmax, gap[:observe].max(axis=0), out=obsmax)
    finite = np.isfinite(runmax).all(axis=0) & np.isfinite(X).all(axis=0) & np.isfinite(Xb).all(axis=0)
    return {
        "sq_runmax": (runmax.T) ** 2,           # (B, n)
        "finite": finite,
        "xbar_T": Xb.T.copy(),                  # (B, n)
        "obs_max": obsmax,
    }


def run_paths(
    coeffs: CoefficientSet,
    noise: NoiseModel,
    sim: SimConfig,
    *,
    observe: int | None = None,
    mean_curve: np.ndarray | None = None,
) -> dict:
    """Simulate all paths; chunked, order-fixed, optionally threaded.

    Returns per-path squared running maxima (n_paths, n), the finite-path
    mask, the terminal mean-field states, and (if ``observe``) the running
    max over the first ``observe`` coordinates per path.
    """
    grid = sim.grid()
    if mean_curve is None:
        mean_curve = solve_mean_curve(coeffs, noise, grid)
    need_L = coeffs.has_volatility()
    need_M = not (coeffs.rC.is_zero() and coeffs.rP.is_zero())
    need_b = bool(noise.b_white_vars().any()) and not (
        coeffs.fC.is_zero() and coeffs.fP.is_zero())
    per_path = (coeffs.n * need_L + coeffs.m * (need_M + need_b)) * sim.steps + 4 * coeffs.n
    bounds = _chunk_bounds(sim.n_paths, per_path)

    def work(span):
        return _simulate_chunk(coeffs, noise, sim, mean_curve, span[0], span[1], observe)

    if sim.threads > 1 and len(bounds) > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=sim.threads) as pool:
            results = list(pool.map(work, bounds))
    else:
        results = [work(span) for span in bounds]

    sq = np.concatenate([r["sq_runmax"] for r in results], axis=0)
    finite = np.concatenate([r["finite"] for r in results])
    xbar_T = np.concatenate([r["xbar_T"] for r in results], axis=0)
    obs = None
    if observe is not None:
        obs = np.concatenate([r["obs_max"] for r in results])
    return {"sq_runmax": sq, "finite": finite, "xbar_T": xbar_T, "obs_max": obs,
            "mean_curve": mean_curve, "grid": grid}


def estimate_error(coeffs: CoefficientSet, noise: NoiseModel, sim: SimConfig) -> ErrorEstimate:
    """Estimate the worst-particle L2 norm of the running-max gap.

    Per particle: sqrt of the path average of the squared running maximum
    of |X_i - Xbar_i| over the grid.  The headline number is the max over
    particles; its standard error comes from a delete-one jackknife over
    paths.  Non-finite paths are excluded; more than 1% of them aborts.
    """
    res = run_paths(coeffs, noise, sim)
    sq = res["sq_runmax"]
    finite = res["finite"]
    n_bad = int((~finite).sum())
    if n_bad > 0.01 * sim.n_paths:
        raise SimulationError(
            f"{n_bad} of {sim.n_paths} paths overflowed (>1%); "
            "the network is too stiff for this step size")
    sq = sq[finite]
    P = sq.shape[0]
    if P == 0:
        raise SimulationError("no finite paths")
    mean_sq = sq.mean(axis=0)
    per_particle = np.sqrt(mean_sq)
    delta_hat = float(per_particle.max()) if per_particle.size else 0.0
    if P > 1:
        total = sq.sum(axis=0)
        loo = np.sqrt(np.clip((total[None, :] - sq) / (P - 1), 0.0, None))
        loo_max = loo.max(axis=1)
        std_err = float(np.sqrt((P - 1) / P * ((loo_max - loo_max.mean()) ** 2).sum()))
    else:
        std_err = float("nan")
    return ErrorEstimate(
        delta_hat=delta_hat,
        std_err=std_err,
        per_particle=per_particle,
        n_paths=P,
        n_flagged=n_bad,
    )


def record_trajectory(coeffs: CoefficientSet, noise: NoiseModel, sim: SimConfig,
                      path_index: int = 0) -> PairTrajectory:
    """Full recorded trajectory of one path (for traces and plots)."""
    grid = sim.grid()
    mean_curve = solve_mean_curve(coeffs, noise, grid)
    pth = sample_path(noise, grid, sim.seed, path_index)
    kern = _StepKernel(coeffs)
    b_mean = noise.mean_drift_density(grid[:-1])
    n = coeffs.n
    X = np.empty((sim.steps + 1, n))
    Xb = np.empty((sim.steps + 1, n))
    X[0] = pth.X0
    Xb[0] = pth.X0
    x = pth.X0[:, None].copy()
    xb = pth.X0[:, None].copy()
    for k in range(sim.steps):
        dt = grid[k + 1] - grid[k]
        x = x + kern.ips_increment(x, pth.dL[k][:, None], pth.dM[k][:, None],
                                   pth.b_vals[k][:, None], dt)
        xb = xb + kern.pmfs_increment(xb, mean_curve[k][:, None], pth.dL[k][:, None],
                                      pth.dM[k][:, None], pth.b_vals[k][:, None],
                                      b_mean[k][:, None], dt)
        X[k + 1] = x[:, 0]
        Xb[k + 1] = xb[:, 0]
    return PairTrajectory(grid=grid, X=X, Xbar=Xb, mean_curve=mean_curve)
