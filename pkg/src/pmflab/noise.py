"""Driving randomness: Lévy components, drift densities, initial conditions.

Every random source is specified exactly (Brownian variance plus a finite
jump-atom list), so cumulants, variances and domination checks are closed
form, and sampling needs no small-jump truncation.

Sampling is stream-based: component ``comp`` of path ``path_index`` under
master seed ``s`` always reads from the generator seeded by
``SeedSequence(s, spawn_key=(path_index, comp))``.  Draw order within a
component is fixed, so identical (seed, path_index) pairs give bitwise
identical paths no matter how paths are scheduled across workers, and
skipping an unused component never shifts another component's draws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

_COMP_X0 = 0
_COMP_L = 1
_COMP_M = 2
_COMP_B = 3


class NoiseError(ValueError):
    pass


def stream(master_seed: int, path_index: int, component: int) -> np.random.Generator:
    """Independent generator for one (path, component) pair."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(path_index), int(component)))
    return np.random.Generator(np.random.PCG64(ss))


# --------------------------------------------------------------- Lévy specs


@dataclass(frozen=True)
class JumpPart:
    """Compound-Poisson component: total rate and a finite atom list.

    ``atoms`` holds (size, probability) pairs; probabilities sum to 1.
    The process is compensated, so its increments have mean zero.
    """

    rate: float
    atoms: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if self.rate < 0:
            raise NoiseError("jump rate must be nonnegative")
        if self.rate > 0:
            total = sum(p for _, p in self.atoms)
            if not math.isclose(total, 1.0, rel_tol=0, abs_tol=1e-9):
                raise NoiseError(f"atom probabilities sum to {total}, expected 1")
            if any(p < 0 for _, p in self.atoms):
                raise NoiseError("atom probabilities must be nonnegative")

    @property
    def mean_jump(self) -> float:
        return sum(z * p for z, p in self.atoms)

    @property
    def variance(self) -> float:
        # compensated compound Poisson: Var = rate * E[z^2]
        return self.rate * sum(z * z * p for z, p in self.atoms)

    def intensity(self, size: float) -> float:
        """Arrival rate of jumps of exactly this size."""
        return self.rate * sum(p for z, p in self.atoms if z == size)


@dataclass(frozen=True)
class LevySpec:
    """Mean-zero Lévy component: Brownian variance plus optional jumps."""

    brownian_var: float = 0.0
    jumps: JumpPart | None = None

    def __post_init__(self):
        if self.brownian_var < 0:
            raise NoiseError("brownian_var must be nonnegative")

    @property
    def variance(self) -> float:
        return self.brownian_var + (self.jumps.variance if self.jumps else 0.0)

    def jump_sizes(self) -> tuple[float, ...]:
        if self.jumps is None or self.jumps.rate == 0:
            return ()
        return tuple(z for z, p in self.jumps.atoms if p > 0)


def psi(spec: LevySpec, u: float) -> float:
    """Cumulant (log-Laplace) exponent of the component at argument u.

    Equals ``brownian_var * u^2 / 2`` plus the compensated jump sum
    ``rate * sum_k p_k (exp(u z_k) - 1 - u z_k)``.  Convex, nonnegative,
    and zero at u = 0.
    """
    u = float(u)
    out = 0.5 * spec.brownian_var * u * u
    if spec.jumps is not None and spec.jumps.rate > 0:
        acc = 0.0
        for z, p in spec.jumps.atoms:
            acc += p * (math.exp(u * z) - 1.0 - u * z)
        out += spec.jumps.rate * acc
    return out


def psi_array(spec: LevySpec, u: np.ndarray) -> np.ndarray:
    """Vectorised :func:`psi`."""
    u = np.asarray(u, dtype=float)
    out = 0.5 * spec.brownian_var * u * u
    if spec.jumps is not None and spec.jumps.rate > 0:
        acc = np.zeros_like(u)
        for z, p in spec.jumps.atoms:
            acc += p * (np.exp(u * z) - 1.0 - u * z)
        out = out + spec.jumps.rate * acc
    return out


def dominating_spec(specs: Sequence[LevySpec]) -> LevySpec:
    """Smallest spec of the supported family that dominates every input.

    Brownian variance is the max; each jump size gets the max arrival
    intensity seen across inputs.  The result dominates componentwise in
    both characteristics.
    """
    if not specs:
        raise NoiseError("need at least one spec to dominate")
    c0 = max(s.brownian_var for s in specs)
    sizes = sorted({z for s in specs for z in s.jump_sizes()})
    weights = {z: max(s.jumps.intensity(z) if s.jumps else 0.0 for s in specs) for z in sizes}
    total = sum(weights.values())
    if total == 0:
        return LevySpec(brownian_var=c0)
    atoms = tuple((z, weights[z] / total) for z in sizes)
    return LevySpec(brownian_var=c0, jumps=JumpPart(rate=total, atoms=atoms))


def dominates(candidate: LevySpec, spec: LevySpec, tol: float = 1e-12) -> bool:
    """True if ``candidate`` dominates ``spec`` in both characteristics."""
    if candidate.brownian_var + tol < spec.brownian_var:
        return False
    for z in spec.jump_sizes():
        cand = candidate.jumps.intensity(z) if candidate.jumps else 0.0
        if cand + tol < (spec.jumps.intensity(z) if spec.jumps else 0.0):
            return False
    return True


# ----------------------------------------------------------- drift density


@dataclass(frozen=True)
class DriftDensity:
    """One column of the finite-variation drift density.

    The deterministic part is ``offset + amplitude * sin(omega t + phase)``
    (set amplitude = 0 for a constant).  ``white_var`` adds per-step
    independent N(0, white_var) perturbations around the deterministic
    part, which is what makes the density-covariance rates non-trivial.
    """

    offset: float = 0.0
    amplitude: float = 0.0
    omega: float = 0.0
    phase: float = 0.0
    white_var: float = 0.0

    def __post_init__(self):
        if self.white_var < 0:
            raise NoiseError("white_var must be nonnegative")

    def mean(self, t) -> np.ndarray | float:
        t = np.asarray(t, dtype=float)
        val = self.offset + self.amplitude * np.sin(self.omega * t + self.phase)
        return val if val.ndim else float(val)

    def sup_abs_mean(self, T: float) -> float:
        """Exact sup of |mean| over [0, T]."""
        cands = [abs(self.mean(0.0)), abs(self.mean(T))]
        if self.amplitude != 0.0 and self.omega != 0.0:
            # stationary points: omega t + phase = pi/2 + k pi
            k0 = math.ceil((self.phase - math.pi / 2) / math.pi)
            k = k0
            while True:
                t = (math.pi / 2 + k * math.pi - self.phase) / self.omega
                if t > T:
                    break
                if t >= 0:
                    cands.append(abs(self.mean(t)))
                k += 1
        elif self.amplitude != 0.0:
            cands.append(abs(self.offset + self.amplitude * math.sin(self.phase)))
        return max(cands)

    def sup_l2(self, T: float) -> float:
        s = self.sup_abs_mean(T)
        return math.sqrt(s * s + self.white_var)


# ------------------------------------------------------------- noise model


def _check_psd(dense: np.ndarray, what: str) -> None:
    sym_err = np.abs(dense - dense.T).max() if dense.size else 0.0
    if sym_err > 1e-10:
        raise NoiseError(f"{what} is not symmetric")
    if dense.size:
        w = np.linalg.eigvalsh(0.5 * (dense + dense.T))
        if w.min() < -1e-10 * max(1.0, abs(w.max())):
            raise NoiseError(f"{what} is not positive semidefinite")


@dataclass(frozen=True)
class NoiseModel:
    """Immutable description of all random inputs of one network.

    * ``L_specs``  — one Lévy spec per particle (volatility driver);
    * ``M_specs``  — one Lévy spec per noise column, mutually independent;
    * ``b_specs``  — one drift density per noise column;
    * ``L_cov``    — covariance of the time-1 volatility drivers; defaults
      to the diagonal implied by the specs.  Off-diagonal covariance is
      carried by the Brownian parts, so ``L_cov - diag(jump vars)`` must be
      positive semidefinite;
    * ``x0_mean``/``x0_cov`` — initial condition (Gaussian).
    """

    L_specs: tuple[LevySpec, ...]
    M_specs: tuple[LevySpec, ...]
    b_specs: tuple[DriftDensity, ...]
    L_cov: "object" = None      # SparseMatrix | None
    x0_mean: np.ndarray = None
    x0_cov: "object" = None     # SparseMatrix | None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        from .sparse import SparseMatrix

        n = len(self.L_specs)
        m = len(self.M_specs)
        if len(self.b_specs) != m:
            raise NoiseError("need one drift density per noise column")
        if self.x0_mean is None:
            object.__setattr__(self, "x0_mean", np.zeros(n))
        else:
            object.__setattr__(self, "x0_mean", np.asarray(self.x0_mean, dtype=float))
        if self.x0_mean.shape != (n,):
            raise NoiseError("x0_mean length must equal the particle count")
        if self.L_cov is None:
            object.__setattr__(
                self, "L_cov", SparseMatrix.diagonal([s.variance for s in self.L_specs]))
        if self.x0_cov is None:
            object.__setattr__(self, "x0_cov", SparseMatrix.zeros(n, n))
        if self.L_cov.shape != (n, n):
            raise NoiseError("L_cov must be n x n")
        if self.x0_cov.shape != (n, n):
            raise NoiseError("x0_cov must be n x n")
        diag = self.L_cov.diagonal_values()
        want = np.array([s.variance for s in self.L_specs])
        if n and np.abs(diag - want).max() > 1e-9 * max(1.0, want.max()):
            raise NoiseError("L_cov diagonal must match the per-particle variances")
        _check_psd(self.L_cov.to_dense(), "L_cov")
        _check_psd(self.x0_cov.to_dense(), "x0_cov")
        jump_var = np.array([s.jumps.variance if s.jumps else 0.0 for s in self.L_specs])
        brown = self.L_cov.to_dense() - np.diag(jump_var)
        _check_psd(brown, "Brownian part of L_cov")

    # dimensions ------------------------------------------------------

    @property
    def n_particles(self) -> int:
        return len(self.L_specs)

    @property
    def n_columns(self) -> int:
        return len(self.M_specs)

    # second moments --------------------------------------------------

    def L_variances(self) -> np.ndarray:
        return np.array([s.variance for s in self.L_specs]) if self.L_specs else np.zeros(0)

    def M_variances(self) -> np.ndarray:
        return np.array([s.variance for s in self.M_specs]) if self.M_specs else np.zeros(0)

    def b_white_vars(self) -> np.ndarray:
        return np.array([b.white_var for b in self.b_specs]) if self.b_specs else np.zeros(0)

    def x0_variances(self) -> np.ndarray:
        return self.x0_cov.diagonal_values() if self.n_particles else np.zeros(0)

    def max_drift_density_l2(self, T: float) -> float:
        if not self.b_specs:
            return 0.0
        return max(b.sup_l2(T) for b in self.b_specs)

    def mean_drift_density(self, t) -> np.ndarray:
        """Deterministic part of the density at time(s) t, shape (m,) or (len(t), m)."""
        t = np.asarray(t, dtype=float)
        if t.ndim == 0:
            return np.array([b.mean(float(t)) for b in self.b_specs])
        if not self.b_specs:
            return np.zeros((len(t), 0))
        return np.stack([np.asarray(b.mean(t)) for b in self.b_specs], axis=-1)

    def has_independent_noises(self, tol: float = 0.0) -> bool:
        """Diagonal L and initial covariances (M columns are independent by construction)."""
        off_L = any(r != c and abs(v) > tol for r, c, v in self.L_cov.entries)
        off_X = any(r != c and abs(v) > tol for r, c, v in self.x0_cov.entries)
        return not (off_L or off_X)

    # sampling helpers -------------------------------------------------

    def _brownian_factor(self) -> np.ndarray:
        """Lower-triangular factor of the Brownian block of L_cov."""
        if "Lfac" not in self._cache:
            jump_var = np.array([s.jumps.variance if s.jumps else 0.0 for s in self.L_specs])
            brown = self.L_cov.to_dense() - np.diag(jump_var)
            self._cache["Ldiag"] = bool(np.allclose(brown, np.diag(np.diag(brown))))
            if self._cache["Ldiag"]:
                self._cache["Lfac"] = np.sqrt(np.clip(np.diag(brown), 0.0, None))
            else:
                w, v = np.linalg.eigh(0.5 * (brown + brown.T))
                w = np.clip(w, 0.0, None)
                self._cache["Lfac"] = v @ np.diag(np.sqrt(w))
        return self._cache["Lfac"]

    def _x0_factor(self) -> np.ndarray:
        if "Xfac" not in self._cache:
            cov = self.x0_cov.to_dense()
            self._cache["Xdiag"] = bool(np.allclose(cov, np.diag(np.diag(cov))))
            if self._cache["Xdiag"]:
                self._cache["Xfac"] = np.sqrt(np.clip(np.diag(cov), 0.0, None))
            else:
                w, v = np.linalg.eigh(0.5 * (cov + cov.T))
                w = np.clip(w, 0.0, None)
                self._cache["Xfac"] = v @ np.diag(np.sqrt(w))
        return self._cache["Xfac"]


# ------------------------------------------------------------------- paths


@dataclass(frozen=True)
class NoisePath:
    """One realisation of every random input on a fixed grid.

    ``dL`` has shape (K, n), ``dM`` shape (K, m): increments over the K
    grid steps.  ``b_vals`` holds the realised drift density per step
    (deterministic part plus white perturbation); it is shared between the
    network and its mean-field twin, which is what keeps the two systems
    coupled on the same randomness.
    """

    grid: np.ndarray
    dL: np.ndarray
    dM: np.ndarray
    b_vals: np.ndarray
    X0: np.ndarray


def _draw_levy_increments(
    rng: np.random.Generator,
    specs: Sequence[LevySpec],
    dts: np.ndarray,
    brownian_factor: np.ndarray | None,
) -> np.ndarray:
    """Increments for a vector of Lévy components, shape (K, len(specs)).

    Draw order is fixed: one normal block, then Poisson counts per
    jump-carrying component in index order.
    """
    K = len(dts)
    n = len(specs)
    out = np.zeros((K, n))
    if n == 0:
        return out
    if brownian_factor is None:
        scale = np.sqrt(np.array([s.brownian_var for s in specs]))
        if scale.any():
            z = rng.standard_normal((K, n))
            out += z * (scale[None, :] * np.sqrt(dts)[:, None])
    else:
        if brownian_factor.ndim == 1:
            if brownian_factor.any():
                z = rng.standard_normal((K, n))
                out += z * (brownian_factor[None, :] * np.sqrt(dts)[:, None])
        else:
            z = rng.standard_normal((K, n))
            out += (z @ brownian_factor.T) * np.sqrt(dts)[:, None]
    for j, s in enumerate(specs):
        if s.jumps is None or s.jumps.rate == 0:
            continue
        drift = s.jumps.rate * s.jumps.mean_jump
        for z_k, p_k in s.jumps.atoms:
            lam = s.jumps.rate * p_k
            counts = rng.poisson(lam * dts)
            out[:, j] += counts * z_k
        out[:, j] -= drift * dts
    return out


def sample_path(
    model: NoiseModel,
    grid: np.ndarray,
    seed: int,
    path_index: int,
    *,
    need_L: bool = True,
    need_M: bool = True,
    need_b: bool = True,
) -> NoisePath:
    """Realise all random inputs of one path on ``grid``.

    The ``need_*`` switches skip generating unused blocks; because each
    component owns its own stream, skipping one block never changes the
    values of another.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or len(grid) < 2 or np.any(np.diff(grid) <= 0):
        raise NoiseError("grid must be strictly increasing with at least two points")
    dts = np.diff(grid)
    K = len(dts)
    n, m = model.n_particles, model.n_columns

    rng0 = stream(seed, path_index, _COMP_X0)
    z0 = rng0.standard_normal(n)
    fac = model._x0_factor()
    X0 = model.x0_mean + (fac * z0 if fac.ndim == 1 else fac @ z0)

    if need_L:
        dL = _draw_levy_increments(
            stream(seed, path_index, _COMP_L), model.L_specs, dts, model._brownian_factor())
    else:
        dL = np.zeros((K, n))

    if need_M:
        dM = _draw_levy_increments(
            stream(seed, path_index, _COMP_M), model.M_specs, dts, None)
    else:
        dM = np.zeros((K, m))

    b_vals = model.mean_drift_density(grid[:-1])
    if need_b:
        white = model.b_white_vars()
        if white.any():
            rngb = stream(seed, path_index, _COMP_B)
            xi = rngb.standard_normal((K, m))
            b_vals = b_vals + xi * np.sqrt(white)[None, :]
    return NoisePath(grid=grid, dL=dL, dM=dM, b_vals=b_vals, X0=X0)


def dump_path_csv(path: NoisePath, fileobj) -> None:
    """Audit dump: one row per (step, index) with the dL/dM increments."""
    fileobj.write("step,index,dL,dM\n")
    K, n = path.dL.shape
    m = path.dM.shape[1]
    for k in range(K):
        for i in range(max(n, m)):
            dl = repr(path.dL[k, i]) if i < n else ""
            dm = repr(path.dM[k, i]) if i < m else ""
            fileobj.write(f"{k},{i},{dl},{dm}\n")
