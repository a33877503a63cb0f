"""Desk-scale large-deviation machinery: kernels, cumulants, tail probes.

For drift-only networks (zero volatility) the gap between the network and
its mean-field twin is an explicit double convolution of two kernels
against the martingale noise:

    G(t, s) = gamma * exp(a t) aP exp(aC s) rhoC,
    R(t)    = gamma * exp(a t) rhoP.

Pairing an atomic signed measure theta with the response gives the scalar
functional H_m(theta, r) per noise column m; the scaled cumulant of the
gap is the Cesàro average over columns of the integrated cumulant
exponents,

    Lambda(theta) = lim (1/gamma(N)) sum_{m<=gamma(N)} int_0^T
                    Psi_m(H_m(theta, r)) dr.

Only atomic test measures are supported: the outer measure integrals are
then finite sums, and the remaining one-dimensional integrals are
composite trapezoid sums on the kernel lattice.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from .network import CoefficientSet, NetworkError
from .noise import LevySpec, NoiseModel, dominates, psi_array
from .sparse import SparseMatrix


class LDPError(ValueError):
    pass


# ------------------------------------------------------ matrix exponential


def matrix_exponential_apply(A: SparseMatrix, t: float, V: np.ndarray) -> np.ndarray:
    """Apply exp(A t) to the columns of V (scaling-and-squaring backend)."""
    dense = A.to_dense() * float(t)
    if not np.all(np.isfinite(dense)):
        raise LDPError("non-finite matrix in exponential")
    E = scipy.linalg.expm(dense)
    if not np.all(np.isfinite(E)):
        raise LDPError("matrix exponential overflowed")
    return E @ np.asarray(V, dtype=float)


def expm_series(A: np.ndarray, terms: int = 60) -> np.ndarray:
    """Plain truncated Taylor series of exp(A); small-matrix oracle only."""
    out = np.eye(A.shape[0])
    term = np.eye(A.shape[0])
    for k in range(1, terms + 1):
        term = term @ A / k
        out = out + term
    return out


# ----------------------------------------------------------- configuration


@dataclass(frozen=True)
class LDConfig:
    """Column-count scaling and the dominating noise component.

    ``gamma_of_N`` maps the family index to the number of loaded noise
    columns (identity by default); ``Gamma_of_N`` bounds the drift column
    count and may grow at most exponentially in gamma.
    """

    dominating: LevySpec
    gamma_of_N: Callable[[int], int] = staticmethod(lambda N: N)
    Gamma_of_N: Callable[[int], int] | None = None

    def check_growth(self, n_grid: Sequence[int]) -> bool:
        grid = sorted(int(N) for N in n_grid)
        gammas = [self.gamma_of_N(N) for N in grid]
        if any(g2 < g1 for g1, g2 in zip(gammas, gammas[1:])):
            return False
        if self.Gamma_of_N is not None:
            for N, g in zip(grid, gammas):
                if self.Gamma_of_N(N) > math.exp(g) + 1e-9:
                    return False
        return True


# ----------------------------------------------------------------- kernels


@dataclass
class KernelSet:
    """Tabulated response kernels plus an exact off-lattice evaluator."""

    d: int
    n_columns: int
    gamma_N: float
    grid: np.ndarray                 # lattice 0..T, K+1 points
    G_vals: np.ndarray               # (K+1, K+1, d, m): G(t_i, s_j) rows
    R_vals: np.ndarray               # (K+1, d, m): R(t_i) rows
    is_limit: bool = False
    _left: dict = field(default_factory=dict, repr=False)    # u -> (d, n) rows of e^{a u} @ aP
    _rightC: dict = field(default_factory=dict, repr=False)  # v -> (n, m) e^{aC v} @ rhoC
    _rowsP: dict = field(default_factory=dict, repr=False)   # u -> (d, m) rows of e^{a u} @ rhoP
    _mats: tuple = field(default=None, repr=False)

    @property
    def T(self) -> float:
        return float(self.grid[-1])

    @property
    def h(self) -> float:
        return float(self.grid[1] - self.grid[0])

    def _expms(self, which: str, t: float) -> np.ndarray:
        a_dense, aC_dense, _, _, _ = self._mats
        mat = a_dense if which == "a" else aC_dense
        return scipy.linalg.expm(mat * t)

    def G_rows(self, u: float, v: float) -> np.ndarray:
        """Exact G(u, v) for the observed rows, shape (d, m)."""
        a_dense, aC_dense, aP_dense, rhoC_dense, rhoP_dense = self._mats
        ku = round(float(u), 12)
        kv = round(float(v), 12)
        if ku not in self._left:
            self._left[ku] = (self._expms("a", ku)[: self.d, :] @ aP_dense)
        if kv not in self._rightC:
            self._rightC[kv] = self._expms("aC", kv) @ rhoC_dense
        return self.gamma_N * (self._left[ku] @ self._rightC[kv])

    def R_rows(self, u: float) -> np.ndarray:
        """Exact R(u) for the observed rows, shape (d, m)."""
        a_dense, aC_dense, aP_dense, rhoC_dense, rhoP_dense = self._mats
        ku = round(float(u), 12)
        if ku not in self._rowsP:
            self._rowsP[ku] = self._expms("a", ku)[: self.d, :] @ rhoP_dense
        return self.gamma_N * self._rowsP[ku]


def build_kernels(coeffs: CoefficientSet, layout, ld: LDConfig, N: int,
                  grid: np.ndarray, d: int | None = None) -> KernelSet:
    """Tabulate the response kernels of a drift-only network.

    Raises when the network carries volatility; the exponential-moment
    machinery requires a purely drift/martingale system.  ``layout`` is
    accepted for interface symmetry and may be None.
    """
    if coeffs.has_volatility():
        raise LDPError("kernels are defined for zero-volatility networks only")
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or len(grid) < 2:
        raise LDPError("kernel grid needs at least two points")
    steps = np.diff(grid)
    if np.any(steps <= 0) or np.abs(steps - steps[0]).max() > 1e-12 * steps[0]:
        raise LDPError("kernel grid must be uniform and increasing")
    if d is None:
        d = min(coeffs.n, 4)
    gamma_N = float(ld.gamma_of_N(int(N)))
    a_dense = coeffs.drift.to_dense()
    aC_dense = coeffs.aC.to_dense()
    aP_dense = coeffs.aP.to_dense()
    rhoC_dense = coeffs.rC.to_dense()
    rhoP_dense = coeffs.rP.to_dense()
    K = len(grid) - 1
    h = float(grid[1] - grid[0])
    Ea = scipy.linalg.expm(a_dense * h)
    EaC = scipy.linalg.expm(aC_dense * h)
    left = np.empty((K + 1, d, coeffs.n))
    rightC = np.empty((K + 1, coeffs.n, coeffs.m))
    rowsP = np.empty((K + 1, d, coeffs.m))
    cur = np.eye(coeffs.n)
    curC = np.eye(coeffs.n)
    for k in range(K + 1):
        left[k] = cur[:d, :] @ aP_dense
        rightC[k] = curC @ rhoC_dense
        rowsP[k] = cur[:d, :] @ rhoP_dense
        if k < K:
            cur = cur @ Ea
            curC = curC @ EaC
    G_vals = gamma_N * np.einsum("tdn,snm->tsdm", left, rightC)
    R_vals = gamma_N * rowsP
    ks = KernelSet(d=d, n_columns=coeffs.m, gamma_N=gamma_N, grid=grid,
                   G_vals=G_vals, R_vals=R_vals)
    ks._mats = (a_dense, aC_dense, aP_dense, rhoC_dense, rhoP_dense)
    for k in range(K + 1):
        t = round(float(grid[k]), 12)
        ks._left[t] = left[k]
        ks._rightC[t] = rightC[k]
        ks._rowsP[t] = rowsP[k]
    return ks


def kernel_gap(a: KernelSet, b: KernelSet) -> float:
    """Sup-norm distance of two tabulations on their shared lattice."""
    if a.G_vals.shape[:2] != b.G_vals.shape[:2] or a.d != b.d:
        raise LDPError("kernel sets tabulated on different lattices")
    mcols = min(a.G_vals.shape[3], b.G_vals.shape[3])
    gap_G = np.abs(a.G_vals[..., :mcols] - b.G_vals[..., :mcols]).max() if mcols else 0.0
    gap_R = np.abs(a.R_vals[..., :mcols] - b.R_vals[..., :mcols]).max() if mcols else 0.0
    return float(max(gap_G, gap_R))


# ---------------------------------------------------------------- measures


@dataclass(frozen=True)
class AtomicMeasure:
    """Signed atomic measure, one atom list (time, weight) per coordinate."""

    atoms: tuple[tuple[tuple[float, float], ...], ...]
    T: float

    def __post_init__(self):
        for coord in self.atoms:
            for t, _ in coord:
                if not (0.0 <= t <= self.T + 1e-12):
                    raise LDPError(f"atom time {t} outside [0, {self.T}]")

    @classmethod
    def from_lists(cls, atom_lists, T: float) -> "AtomicMeasure":
        return cls(tuple(tuple((float(t), float(w)) for t, w in coord)
                         for coord in atom_lists), float(T))

    @classmethod
    def zero(cls, d: int, T: float) -> "AtomicMeasure":
        return cls(tuple(() for _ in range(d)), float(T))

    @property
    def d(self) -> int:
        return len(self.atoms)

    def total_variation(self) -> float:
        return sum(abs(w) for coord in self.atoms for _, w in coord)

    def scale(self, factor: float) -> "AtomicMeasure":
        return AtomicMeasure(
            tuple(tuple((t, w * factor) for t, w in coord) for coord in self.atoms), self.T)

    def add(self, other: "AtomicMeasure") -> "AtomicMeasure":
        if self.d != other.d or self.T != other.T:
            raise LDPError("measure dimensions disagree")
        merged = []
        for mine, theirs in zip(self.atoms, other.atoms):
            acc: dict[float, float] = {}
            for t, w in mine + theirs:
                acc[t] = acc.get(t, 0.0) + w
            merged.append(tuple(sorted(acc.items())))
        return AtomicMeasure(tuple(merged), self.T)


# ------------------------------------------------------------ H functional


def _H_all(kernels: KernelSet, theta: AtomicMeasure, r: float) -> np.ndarray:
    """H_m(theta, r) for every column m at once, shape (m,).

    Per atom (t_a, w) in coordinate i with t_a >= r the contribution is
    w * [ int_r^{t_a} G_i(t_a - s, s - r) ds + R_i(t_a - r) ]; the
    s-integral is a composite trapezoid on the kernel lattice with a
    shortened last panel ending exactly at t_a.
    """
    if theta.d > kernels.d:
        raise LDPError(f"measure has {theta.d} coordinates, kernels observe {kernels.d}")
    h = kernels.h
    out = np.zeros(kernels.n_columns)
    for i, coord in enumerate(theta.atoms):
        for t_a, w in coord:
            if w == 0.0 or t_a < r - 1e-12:
                continue
            span = t_a - r
            out += w * kernels.R_rows(span)[i]
            if span <= 1e-14:
                continue
            n_panels = int(span / h)
            nodes = [r + q * h for q in range(n_panels + 1)]
            if t_a - nodes[-1] > 1e-12 * max(1.0, h):
                nodes.append(t_a)
            else:
                nodes[-1] = t_a
            vals = [kernels.G_rows(t_a - s, s - r)[i] for s in nodes]
            acc = np.zeros(kernels.n_columns)
            for q in range(len(nodes) - 1):
                acc += 0.5 * (nodes[q + 1] - nodes[q]) * (vals[q] + vals[q + 1])
            out += w * acc
    return out


def H_m(kernels: KernelSet, theta: AtomicMeasure, m: int, r: float) -> float:
    """The pairing functional for noise column ``m`` at inner time ``r``."""
    if not (0.0 <= r <= kernels.T + 1e-12):
        raise LDPError("r must lie in [0, T]")
    if not (0 <= m < kernels.n_columns):
        raise LDPError("column index out of range")
    return float(_H_all(kernels, theta, r)[m])


# ----------------------------------------------------------------- Lambda


def lambda_cesaro(kernels: KernelSet, specs: Sequence[LevySpec], theta: AtomicMeasure,
                  N_grid: Sequence[int], ld: LDConfig) -> dict:
    """Cesàro averages of the per-column integrated cumulants.

    Per grid entry N the average runs over the first gamma(N) columns;
    the reported limit is the deepest average, with the difference to the
    previous depth as a Cauchy diagnostic (never a claimed true limit).
    """
    for idx, spec in enumerate(specs):
        if not dominates(ld.dominating, spec):
            raise LDPError(
                f"column {idx} is not dominated by the configured dominating component")
    n_grid = sorted(int(N) for N in N_grid)
    gammas = [int(ld.gamma_of_N(N)) for N in n_grid]
    top = gammas[-1]
    if top > len(specs) or top > kernels.n_columns:
        raise LDPError("grid demands more columns than specs/kernels provide")
    r_nodes = kernels.grid
    H_table = np.stack([_H_all(kernels, theta, float(r)) for r in r_nodes])  # (K+1, m)
    integrals = np.empty(top)
    for mcol in range(top):
        vals = psi_array(specs[mcol], H_table[:, mcol])
        integrals[mcol] = float(np.trapezoid(vals, r_nodes))
    csum = np.cumsum(integrals)
    averages = [float(csum[g - 1] / g) for g in gammas]
    lam = averages[-1]
    diagnostic = abs(averages[-1] - averages[-2]) if len(averages) > 1 else float("nan")
    return {"n_grid": n_grid, "gammas": gammas, "averages": averages,
            "lambda": lam, "cauchy_diff": diagnostic}


def lambda_value(kernels: KernelSet, specs: Sequence[LevySpec], theta: AtomicMeasure,
                 ld: LDConfig, n_columns: int | None = None) -> float:
    """Single-depth Cesàro average over the first ``n_columns`` columns."""
    m = n_columns if n_columns is not None else min(len(specs), kernels.n_columns)
    r_nodes = kernels.grid
    H_table = np.stack([_H_all(kernels, theta, float(r)) for r in r_nodes])
    total = 0.0
    for mcol in range(m):
        total += float(np.trapezoid(psi_array(specs[mcol], H_table[:, mcol]), r_nodes))
    return total / m


def legendre_probe(kernels: KernelSet, specs: Sequence[LevySpec], ld: LDConfig,
                   x_values: np.ndarray, atom_times: Sequence[float],
                   iterations: int = 40, step: float = 0.5) -> float:
    """Coordinate-ascent lower bound on the convex conjugate at a target path.

    Maximises pairing(theta, x) - Lambda(theta) over atom weights at fixed
    atom locations; a lower bound on the true conjugate by construction.
    """
    d = kernels.d
    times = list(atom_times)
    weights = np.zeros((d, len(times)))
    x_at = np.asarray(x_values, dtype=float)   # (d, len(times)) target values

    def objective(wts: np.ndarray) -> float:
        theta = AtomicMeasure.from_lists(
            [[(t, wts[i, j]) for j, t in enumerate(times)] for i in range(d)], kernels.T)
        pairing = float((wts * x_at).sum())
        return pairing - lambda_value(kernels, specs, theta, ld)

    best = objective(weights)
    for _ in range(iterations):
        improved = False
        for i in range(d):
            for j in range(len(times)):
                for delta in (step, -step):
                    trial = weights.copy()
                    trial[i, j] += delta
                    val = objective(trial)
                    if val > best + 1e-12:
                        best, weights, improved = val, trial, True
        if not improved:
            step *= 0.5
            if step < 1e-4:
                break
    return best


# -------------------------------------------------------------- q summaries


def q_quantities(coeffs: CoefficientSet, ld: LDConfig, N: int) -> tuple[float, float]:
    """Scaled drift/loading overlap summaries of one family member.

    q1 scales the worst-row total of |aP| against off-diagonal |aC| rows;
    q2 scales the largest entry of |aP| @ |rhoC|.
    """
    gamma_N = float(ld.gamma_of_N(int(N)))
    n = coeffs.n
    offdiag_rowsum = np.zeros(n)
    for r_, c_, v_ in coeffs.aC.entries:
        if r_ != c_:
            offdiag_rowsum[r_] += abs(v_)
    q1_rows = np.zeros(n)
    for r_, c_, v_ in coeffs.aP.entries:
        q1_rows[r_] += abs(v_) * offdiag_rowsum[c_]
    q1 = gamma_N * float(q1_rows.max()) if n else 0.0
    prod = (coeffs.aP.abs().tocsr() @ coeffs.rC.abs().tocsr())
    q2 = gamma_N * float(np.abs(prod.toarray()).max()) if prod.nnz else 0.0
    return q1, q2


# ---------------------------------------------------------------- tail probe


@dataclass(frozen=True)
class TailPoint:
    N: int
    gamma_N: float
    n_paths: int
    n_exceed: int
    p_hat: float
    wilson_low: float
    wilson_high: float
    normalized_log: float
    estimable: bool


def wilson_interval(k: int, n: int, z: float = 1.959963984540054) -> tuple[float, float]:
    if n == 0:
        return (0.0, 1.0)
    p = k / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return (max(0.0, center - half), min(1.0, center + half))


def tail_slope(family, ld: LDConfig, level_eps: float, sim) -> list[TailPoint]:
    """Normalised log exceedance probabilities along a network family.

    ``family`` is a sequence of (N, coefficient set, noise model); per
    member the probability that the observed coordinates' running-max gap
    exceeds ``level_eps`` is estimated by Monte Carlo.  Members with fewer
    than 10 exceedances are flagged unestimable instead of erroring.
    """
    from .simulate import run_paths

    out = []
    for N, coeffs, noise in family:
        if level_eps < 0:
            raise LDPError("exceedance level must be nonnegative")
        d = min(coeffs.n, 4)
        res = run_paths(coeffs, noise, sim, observe=d)
        obs = res["obs_max"][res["finite"]]
        n_paths = int(obs.size)
        k = int((obs > level_eps).sum())
        gamma_N = float(ld.gamma_of_N(int(N)))
        p_hat = k / n_paths if n_paths else 0.0
        lo, hi = wilson_interval(k, n_paths)
        estimable = k >= 10
        norm_log = math.log(p_hat) / gamma_N if (estimable and p_hat > 0) else float("nan")
        out.append(TailPoint(N=int(N), gamma_N=gamma_N, n_paths=n_paths, n_exceed=k,
                             p_hat=p_hat, wilson_low=lo, wilson_high=hi,
                             normalized_log=norm_log, estimable=estimable))
    return out
