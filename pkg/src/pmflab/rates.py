"""Explicit error rates, constants, and the certified mean-field bound.

Twelve scalar rates control the worst-particle L2 distance between a
network and its partial mean-field twin.  Each rate is the square root of
the largest diagonal entry of a small sandwich product (periphery matrix,
a covariance kernel, periphery matrix transposed), or a row-sum of a
product with the off-diagonal core drift.  Together with the Gronwall
constants they assemble the certified bound

    sup_i || running-max gap of particle i ||_L2  <=  K * sum_i K_i * r_i.

Everything here is a pure function of the coefficient set, the noise
model's second moments, and the horizon.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .network import (
    CoefficientSet,
    CorePeripheryLayout,
    NetworkError,
    VQuantities,
    compute_v_quantities,
)
from .noise import NoiseModel
from .sparse import (
    SparseMatrix,
    max_row_l2,
    max_row_sum,
    max_sandwich_diagonal,
    sparse_product,
    weighted_gram,
)

VACUOUS_FACTOR = 1e6   # bound > VACUOUS_FACTOR * v_X is reported as vacuous


@dataclass(frozen=True)
class RateReport:
    """The twelve rates, the constants, and the assembled bound."""

    r: np.ndarray          # 12 rates
    v: VQuantities
    K: float
    K_iota: np.ndarray     # 12 companion constants
    E_T: float
    V_T: float
    bound: float
    T: float
    vacuous: bool

    def as_dict(self) -> dict:
        return {
            "r": [float(x) for x in self.r],
            "v": self.v.as_dict(),
            "K": self.K,
            "K_iota": [float(x) for x in self.K_iota],
            "E_T": self.E_T,
            "V_T": self.V_T,
            "bound": self.bound,
            "T": self.T,
            "vacuous": self.vacuous,
        }


@dataclass(frozen=True)
class ChaosRates:
    """Row-wise Euclidean summaries of the periphery matrices."""

    r_a: float
    r_sigma: float
    r_f: float
    r_rhoM: float


@dataclass(frozen=True)
class SparsityReport:
    """Support counts and scale factors of a laid-out network."""

    p_L: int
    p_A1: int
    p_Sigma: int
    p_A2: int
    p_f: int
    p_rho: int
    R_A: float
    R_Sigma: float
    phi_sup: float
    psi_sup: float

    def as_dict(self) -> dict:
        return {k: getattr(self, k)
                for k in ("p_L", "p_A1", "p_Sigma", "p_A2", "p_f", "p_rho",
                          "R_A", "R_Sigma", "phi_sup", "psi_sup")}


# ------------------------------------------------------------------- rates


def _density_cov(noise: NoiseModel) -> np.ndarray:
    """Equal-time covariance of the drift density (diagonal, constant)."""
    return noise.b_white_vars()


def compute_rates(coeffs: CoefficientSet, noise: NoiseModel, T: float) -> np.ndarray:
    """Evaluate the twelve rates over horizon ``T``.

    Constant coefficients make the time suprema exact: time enters only
    through the (constant) equal-time covariance of the drift density.
    """
    if T <= 0:
        raise NetworkError("horizon T must be positive")
    AP = coeffs.aP.abs()
    SP = coeffs.sP.abs()
    ACx = coeffs.aC.abs().zero_diagonal()
    cov_X0 = noise.x0_cov.abs()
    cov_L = noise.L_cov.abs()
    m_var = noise.M_variances()
    b_var = _density_cov(noise)

    def sq(x: float) -> float:
        return math.sqrt(max(x, 0.0))

    r = np.zeros(12)
    r[0] = sq(max_sandwich_diagonal(AP, cov_X0))
    r[1] = sq(max_sandwich_diagonal(SP, cov_X0))
    r[2] = sq(max_sandwich_diagonal(AP, cov_L))
    r[3] = sq(max_sandwich_diagonal(SP, cov_L))
    r[4] = sq(max_sandwich_diagonal(coeffs.fP, SparseMatrix.diagonal(b_var))
              if b_var.size else 0.0)
    r[5] = sq(max_sandwich_diagonal(coeffs.rP, SparseMatrix.diagonal(m_var))
              if m_var.size else 0.0)
    r[6] = max_row_sum(sparse_product(AP, ACx))
    r[7] = max_row_sum(sparse_product(SP, ACx))
    mid_f = weighted_gram(coeffs.fC, b_var).abs() if b_var.size else SparseMatrix.zeros(coeffs.n, coeffs.n)
    r[8] = sq(max_sandwich_diagonal(AP, mid_f))
    r[9] = sq(max_sandwich_diagonal(SP, mid_f))
    mid_r = weighted_gram(coeffs.rC, m_var).abs() if m_var.size else SparseMatrix.zeros(coeffs.n, coeffs.n)
    r[10] = sq(max_sandwich_diagonal(AP, mid_r))
    r[11] = sq(max_sandwich_diagonal(SP, mid_r))
    return r


def compute_rates_dense(coeffs: CoefficientSet, noise: NoiseModel, T: float) -> np.ndarray:
    """Direct dense transcription of the twelve rate formulas.

    Independent of the sparse kernels; used to cross-check them on small
    networks.
    """
    AP = np.abs(coeffs.aP.to_dense())
    SP = np.abs(coeffs.sP.to_dense())
    AC = np.abs(coeffs.aC.to_dense())
    ACx = AC.copy()
    np.fill_diagonal(ACx, 0.0)
    fC = coeffs.fC.to_dense()
    fP = coeffs.fP.to_dense()
    rC = coeffs.rC.to_dense()
    rP = coeffs.rP.to_dense()
    covX = np.abs(noise.x0_cov.to_dense())
    covL = np.abs(noise.L_cov.to_dense())
    c = np.diag(noise.M_variances()) if coeffs.m else np.zeros((0, 0))
    covb = np.diag(_density_cov(noise)) if coeffs.m else np.zeros((0, 0))

    def dmax(mat: np.ndarray) -> float:
        return float(np.diag(mat).max()) if mat.size else 0.0

    def rows(mat: np.ndarray) -> float:
        return float(np.abs(mat).sum(axis=1).max()) if mat.size else 0.0

    r = np.zeros(12)
    r[0] = math.sqrt(max(dmax(AP @ covX @ AP.T), 0.0))
    r[1] = math.sqrt(max(dmax(SP @ covX @ SP.T), 0.0))
    r[2] = math.sqrt(max(dmax(AP @ covL @ AP.T), 0.0))
    r[3] = math.sqrt(max(dmax(SP @ covL @ SP.T), 0.0))
    r[4] = math.sqrt(max(dmax(fP @ covb @ fP.T), 0.0))
    r[5] = math.sqrt(max(dmax(rP @ c @ rP.T), 0.0))
    r[6] = rows(AP @ ACx)
    r[7] = rows(SP @ ACx)
    r[8] = math.sqrt(max(dmax(AP @ np.abs(fC @ covb @ fC.T) @ AP.T), 0.0))
    r[9] = math.sqrt(max(dmax(SP @ np.abs(fC @ covb @ fC.T) @ SP.T), 0.0))
    r[10] = math.sqrt(max(dmax(AP @ np.abs(rC @ c @ rC.T) @ AP.T), 0.0))
    r[11] = math.sqrt(max(dmax(SP @ np.abs(rC @ c @ rC.T) @ SP.T), 0.0))
    return r


# --------------------------------------------------------------- constants


def compute_constants(v: VQuantities, T: float) -> tuple[float, np.ndarray, float, float]:
    """Gronwall constants (K, the twelve companions, E, V) for a horizon.

    On overflow the affected constants become +inf; the caller flags the
    bound as vacuous rather than failing.
    """
    sqT = math.sqrt(T)
    with np.errstate(over="ignore"):
        growth = (sqT * v.v_a + 2.0 * v.v_sigma * v.v_L) ** 2 * T
        K = math.sqrt(2.0) * _safe_exp(growth)
        E = _safe_exp(v.v_a_d)
        V = (math.sqrt(2.0) * _safe_exp((v.v_a * sqT + 2.0 * v.v_L * v.v_sigma) ** 2 * T)
             * (v.v_X + v.v_f * v.v_b * T + 2.0 * v.v_rho_M * sqT))
    Ki = np.array([
        E * T,
        2.0 * v.v_L * E * sqT,
        (2.0 / 3.0) * E * v.v_sigma * V * T ** 1.5,
        math.sqrt(2.0) * v.v_L * E * v.v_sigma * V * T,
        T,
        2.0 * sqT,
        0.5 * E * V * T ** 2,
        (2.0 / math.sqrt(3.0)) * v.v_L * E * V,
        0.5 * E * T ** 2,
        (2.0 / math.sqrt(3.0)) * v.v_L * E * T ** 1.5,
        (2.0 / 3.0) * E * T ** 1.5,
        math.sqrt(2.0) * v.v_L * E * T,
    ])
    return K, Ki, E, V


def _safe_exp(x: float) -> float:
    if x > 700.0:
        return float("inf")
    return math.exp(x)


def theorem_bound(coeffs: CoefficientSet, noise: NoiseModel, T: float) -> RateReport:
    """Assemble the certified bound for one network and horizon."""
    v = compute_v_quantities(coeffs, noise, T)
    r = compute_rates(coeffs, noise, T)
    K, Ki, E, V = compute_constants(v, T)
    bound = K * float(np.dot(Ki, r))
    vacuous = (not np.isfinite(bound)) or bound > VACUOUS_FACTOR * v.v_X
    return RateReport(r=r, v=v, K=K, K_iota=Ki, E_T=E, V_T=V,
                      bound=float(bound), T=float(T), vacuous=bool(vacuous))


# ------------------------------------------------- decoupling-regime rates


def chaos_rates(coeffs: CoefficientSet, noise: NoiseModel, T: float) -> ChaosRates:
    """Largest row Euclidean norms of the periphery matrices.

    ``r_rhoM`` weights the martingale loadings by the per-column
    variances.
    """
    m_var = noise.M_variances()
    return ChaosRates(
        r_a=max_row_l2(coeffs.aP.abs()),
        r_sigma=max_row_l2(coeffs.sP.abs()),
        r_f=max_row_l2(coeffs.fP),
        r_rhoM=max_row_l2(coeffs.rP, col_weights=m_var if m_var.size else None),
    )


@dataclass(frozen=True)
class ChaosInequality:
    index: int           # 1-based rate index
    lhs: float
    rhs: float
    relation: str        # "<=" or "=="
    holds: bool


def chaos_inequalities(coeffs: CoefficientSet, noise: NoiseModel, T: float,
                       tol: float = 1e-9) -> list[ChaosInequality]:
    """Check the twelve decoupling bounds of the diagonal-core regime.

    Requires diagonal core matrices and independent noises; violating the
    precondition raises.  In this regime the cross rates vanish exactly
    and every remaining rate is controlled by a row-norm summary times a
    magnitude bound.
    """
    for role in ("aC", "sC", "fC", "rC"):
        if not coeffs.role(role).is_diagonal():
            raise NetworkError(f"chaos inequalities require a diagonal {role}")
    if not noise.has_independent_noises():
        raise NetworkError("chaos inequalities require independent noises")
    v = compute_v_quantities(coeffs, noise, T)
    r = compute_rates(coeffs, noise, T)
    c = chaos_rates(coeffs, noise, T)
    plan = [
        (1, v.v_X * c.r_a, "<="),
        (2, v.v_X * c.r_sigma, "<="),
        (3, v.v_L * c.r_a, "<="),
        (4, v.v_L * c.r_sigma, "<="),
        (5, v.v_b * c.r_f, "<="),
        (6, c.r_rhoM, "=="),
        (7, 0.0, "=="),
        (8, 0.0, "=="),
        (9, v.v_b * v.v_f * c.r_a, "<="),
        (10, v.v_b * v.v_f * c.r_sigma, "<="),
        (11, v.v_rho_M * c.r_a, "<="),
        (12, v.v_rho_M * c.r_sigma, "<="),
    ]
    out = []
    for idx, rhs, rel in plan:
        lhs = float(r[idx - 1])
        scale = max(1.0, abs(lhs), abs(rhs))
        if rel == "==":
            holds = abs(lhs - rhs) <= tol * scale
        else:
            holds = lhs <= rhs + tol * scale
        out.append(ChaosInequality(index=idx, lhs=lhs, rhs=float(rhs),
                                   relation=rel, holds=holds))
    return out


# ------------------------------------------------------- sparsity counting


def sparsity_report(coeffs: CoefficientSet, layout: CorePeripheryLayout,
                    noise: NoiseModel, R_A: float, R_Sigma: float) -> SparsityReport:
    """Exact support counts behind the sparse-network sufficient conditions.

    * ``p_L``    — periphery particle pairs with correlated drivers
      (self-pairs included);
    * ``p_A1``/``p_Sigma`` — largest per-row periphery support of the
      periphery drift/volatility;
    * ``p_A2``   — largest number of periphery rows loading one core
      column of the core drift;
    * ``p_f``/``p_rho`` — largest number of periphery rows loading one
      systematic column of the core loadings;
    * ``phi_sup``/``psi_sup`` — largest periphery entry scaled back by
      R_A / R_Sigma.
    """
    from .network import validate_layout

    violations = validate_layout(coeffs, layout)
    if violations:
        raise NetworkError("layout violations: " + "; ".join(str(v) for v in violations[:3]))
    periphery = set(layout.periphery_particles())
    var_L = noise.L_variances()
    p_L = 0
    for r_, c_, v_ in noise.L_cov.entries:
        if v_ != 0.0 and r_ in periphery and c_ in periphery:
            p_L += 1
    row_support: dict[int, int] = {}
    for r_, c_, _ in coeffs.aP.entries:
        if c_ in periphery:
            row_support[r_] = row_support.get(r_, 0) + 1
    p_A1 = max(row_support.values(), default=0)
    row_support = {}
    for r_, c_, _ in coeffs.sP.entries:
        if c_ in periphery:
            row_support[r_] = row_support.get(r_, 0) + 1
    p_Sigma = max(row_support.values(), default=0)
    col_support: dict[int, int] = {}
    for r_, c_, _ in coeffs.aC.entries:
        if c_ < layout.n0 and r_ in periphery:
            col_support[c_] = col_support.get(c_, 0) + 1
    p_A2 = max(col_support.values(), default=0)

    def systematic_col_count(mat) -> int:
        support: dict[int, int] = {}
        for r_, c_, _ in mat.entries:
            if c_ < layout.n00 and r_ in periphery:
                support[c_] = support.get(c_, 0) + 1
        return max(support.values(), default=0)

    p_f = systematic_col_count(coeffs.fC)
    p_rho = systematic_col_count(coeffs.rC)
    phi_sup = max((abs(v_) for _, _, v_ in coeffs.aP.entries), default=0.0) * R_A
    psi_sup = max((abs(v_) for _, _, v_ in coeffs.sP.entries), default=0.0) * R_Sigma
    return SparsityReport(p_L=p_L, p_A1=p_A1, p_Sigma=p_Sigma, p_A2=p_A2,
                          p_f=p_f, p_rho=p_rho, R_A=float(R_A), R_Sigma=float(R_Sigma),
                          phi_sup=float(phi_sup), psi_sup=float(psi_sup))
