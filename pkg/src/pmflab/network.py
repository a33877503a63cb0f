"""Finite coefficient networks for linear interacting-SDE systems.

A system of n particles driven by m noise columns is described by eight
constant matrices: the drift pair (aC, aP), the volatility pair (sC, sP),
the drift-density loadings (fC, fP) and the martingale loadings (rC, rP).
The C/P split separates links that persist when the network grows (core)
from links whose aggregate influence vanishes (periphery).  Diagonal drift
and volatility entries always belong to the core matrices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sparse import SparseMatrix, max_abs_diagonal, max_row_sum

MATRIX_ROLES = ("aC", "aP", "sC", "sP", "fC", "fP", "rC", "rP")
_SQUARE_ROLES = ("aC", "aP", "sC", "sP")
_NOISE_ROLES = ("fC", "fP", "rC", "rP")


class NetworkError(ValueError):
    pass


@dataclass(frozen=True)
class CoefficientSet:
    """The eight constant coefficient matrices of one network.

    aC/aP/sC/sP are n x n; fC/fP/rC/rP are n x m.  Periphery drift and
    volatility matrices carry no diagonal entries.
    """

    n: int
    m: int
    aC: SparseMatrix
    aP: SparseMatrix
    sC: SparseMatrix
    sP: SparseMatrix
    fC: SparseMatrix
    fP: SparseMatrix
    rC: SparseMatrix
    rP: SparseMatrix

    def role(self, name: str) -> SparseMatrix:
        if name not in MATRIX_ROLES:
            raise NetworkError(f"unknown matrix role {name!r}")
        return getattr(self, name)

    def replace_role(self, name: str, mat: SparseMatrix) -> "CoefficientSet":
        blocks = [(r, self.role(r)) for r in MATRIX_ROLES if r != name]
        blocks.append((name, mat))
        return build_coefficients(self.n, self.m, blocks)

    @property
    def drift(self) -> SparseMatrix:
        return self.aC.add(self.aP)

    @property
    def volatility(self) -> SparseMatrix:
        return self.sC.add(self.sP)

    def has_volatility(self) -> bool:
        return not (self.sC.is_zero() and self.sP.is_zero())


def build_coefficients(
    n: int,
    m: int,
    blocks: list[tuple[str, SparseMatrix]] | tuple = (),
) -> CoefficientSet:
    """Assemble a :class:`CoefficientSet` from per-role matrices.

    Missing roles default to zero matrices.  Raises :class:`NetworkError`
    on dimension mismatches, a role supplied twice, or diagonal entries in
    aP/sP (diagonals belong to the core matrices).
    """
    if n < 1 or m < 0:
        raise NetworkError("need at least one particle and nonnegative noise count")
    mats: dict[str, SparseMatrix] = {}
    for role, mat in blocks:
        if role not in MATRIX_ROLES:
            raise NetworkError(f"unknown matrix role {role!r}")
        if role in mats:
            raise NetworkError(f"matrix role {role!r} supplied twice")
        want = (n, n) if role in _SQUARE_ROLES else (n, m)
        if mat.shape != want:
            raise NetworkError(
                f"role {role!r} has shape {mat.shape}, expected {want}"
            )
        mats[role] = mat
    for role in MATRIX_ROLES:
        if role not in mats:
            want = (n, n) if role in _SQUARE_ROLES else (n, m)
            mats[role] = SparseMatrix.zeros(*want)
    for role in ("aP", "sP"):
        for r, c, _ in mats[role].entries:
            if r == c:
                raise NetworkError(
                    f"{role}[{r},{c}] is a diagonal entry; diagonals belong to the core matrices"
                )
    return CoefficientSet(n=n, m=m, **mats)


@dataclass(frozen=True)
class CorePeripheryLayout:
    """Particle and noise-column bookkeeping for the core/periphery split.

    Particles 0..n0-1 are core, the rest periphery.  Noise columns
    0..n00-1 are systematic; column n00+i is particle i's idiosyncratic
    noise.
    """

    n0: int
    n_periphery: int
    n00: int

    @property
    def n(self) -> int:
        return self.n0 + self.n_periphery

    @property
    def m(self) -> int:
        return self.n00 + self.n

    def core_particles(self) -> range:
        return range(self.n0)

    def periphery_particles(self) -> range:
        return range(self.n0, self.n)

    def idiosyncratic_column(self, particle: int) -> int:
        return self.n00 + particle


@dataclass(frozen=True)
class LayoutViolation:
    role: str
    row: int
    col: int
    rule: str

    def __str__(self) -> str:
        return f"{self.role}[{self.row},{self.col}]: {self.rule}"


def validate_layout(coeffs: CoefficientSet, layout: CorePeripheryLayout) -> list[LayoutViolation]:
    """Check the block-support pattern of a core/periphery particle layout.

    Rules:
      * aP/sP columns vanish on core particles (core links live in aC/sC);
      * aC/sC columns on periphery particles are diagonal-only;
      * fC/rC rows load only systematic columns plus the row's own
        idiosyncratic column;
      * fP/rP rows load only other particles' idiosyncratic columns.

    Returns the list of violations; empty means the layout is respected.
    """
    out: list[LayoutViolation] = []
    if layout.n != coeffs.n:
        out.append(LayoutViolation("layout", -1, -1,
                                   f"layout covers {layout.n} particles, set has {coeffs.n}"))
        return out
    if layout.m != coeffs.m:
        out.append(LayoutViolation("layout", -1, -1,
                                   f"layout implies {layout.m} noise columns, set has {coeffs.m}"))
        return out
    n0 = layout.n0
    for role in ("aP", "sP"):
        for r, c, _ in coeffs.role(role).entries:
            if c < n0:
                out.append(LayoutViolation(role, r, c, "periphery matrix loads a core column"))
    for role in ("aC", "sC"):
        for r, c, _ in coeffs.role(role).entries:
            if c >= n0 and r != c:
                out.append(LayoutViolation(
                    role, r, c, "core matrix off-diagonal entry in a periphery column"))
    for role in ("fC", "rC"):
        for r, c, _ in coeffs.role(role).entries:
            if c >= layout.n00 and c != layout.idiosyncratic_column(r):
                out.append(LayoutViolation(
                    role, r, c, "core loading outside systematic and own idiosyncratic columns"))
    for role in ("fP", "rP"):
        for r, c, _ in coeffs.role(role).entries:
            if c < layout.n00 or c == layout.idiosyncratic_column(r):
                out.append(LayoutViolation(
                    role, r, c, "periphery loading on a systematic or own idiosyncratic column"))
    return out


@dataclass(frozen=True)
class VQuantities:
    """Scalar magnitude summaries of one network over a horizon.

    All downstream constants depend on the model only through these eight
    numbers: combined drift/volatility row-sum bounds, the core drift
    diagonal bound, noise second-moment bounds and the initial-condition
    bound.
    """

    v_a: float
    v_a_d: float
    v_sigma: float
    v_L: float
    v_b: float
    v_X: float
    v_f: float
    v_rho_M: float
    T: float

    def __post_init__(self):
        for name in ("v_a", "v_a_d", "v_sigma", "v_L", "v_b", "v_X", "v_f", "v_rho_M"):
            val = getattr(self, name)
            if not np.isfinite(val) or val < 0:
                raise NetworkError(f"{name} must be finite and nonnegative, got {val}")
        if self.v_a_d > self.v_a + 1e-12:
            raise NetworkError("core diagonal bound exceeds the combined row-sum bound")

    def as_dict(self) -> dict:
        return {
            "v_a": self.v_a, "v_a_d": self.v_a_d, "v_sigma": self.v_sigma,
            "v_L": self.v_L, "v_b": self.v_b, "v_X": self.v_X,
            "v_f": self.v_f, "v_rho_M": self.v_rho_M, "T": self.T,
        }


def compute_v_quantities(coeffs: CoefficientSet, noise, T: float) -> VQuantities:
    """Evaluate the eight magnitude summaries for constant coefficients.

    ``noise`` is a :class:`pmflab.noise.NoiseModel`.  T must be positive;
    a degenerate horizon would make every bound vacuously zero.
    """
    if T <= 0:
        raise NetworkError("horizon T must be positive")
    if noise.n_particles != coeffs.n or noise.n_columns != coeffs.m:
        raise NetworkError("noise model dimensions do not match the coefficient set")
    v_a = max_row_sum(coeffs.aC.abs().add(coeffs.aP.abs()))
    v_a_d = max_abs_diagonal(coeffs.aC)
    v_sigma = max_row_sum(coeffs.sC.abs().add(coeffs.sP.abs()))
    v_L = float(np.sqrt(noise.L_variances().max())) if coeffs.n else 0.0
    v_b = noise.max_drift_density_l2(T)
    v_X = float(np.sqrt((noise.x0_mean**2 + noise.x0_variances()).max()))
    v_f = max_row_sum(coeffs.fC.abs().add(coeffs.fP.abs()))
    m_var = noise.M_variances()
    rho_sq = np.zeros(coeffs.n)
    for mat in (coeffs.rC, coeffs.rP):
        for r, c, v in mat.entries:
            rho_sq[r] += v * v * m_var[c]
    v_rho_M = float(np.sqrt(rho_sq.max())) if coeffs.n else 0.0
    return VQuantities(
        v_a=v_a, v_a_d=v_a_d, v_sigma=v_sigma, v_L=v_L, v_b=v_b,
        v_X=v_X, v_f=v_f, v_rho_M=v_rho_M, T=float(T),
    )
