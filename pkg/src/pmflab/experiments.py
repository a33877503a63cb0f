"""Experiment orchestration: reference families, runner, result envelopes.

Every experiment kind is a pure function of (configuration, master seed,
tool version); payloads are serialised canonically so reruns compare
byte-for-byte.  Worker parallelism never changes chunk boundaries or
reduction order, so the payload is independent of the thread count.
"""

from __future__ import annotations

import datetime as _dt
import json
import math
import os
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from . import __version__
from .configio import ConfigError, load_config
from .graphgen import (
    PAGraph,
    PAParams,
    fit_exponent,
    max_degree_sweep,
    normalizers,
    pa_generate,
)
from .ldp import KernelSet, LDConfig, build_kernels, lambda_cesaro, tail_slope
from .network import CoefficientSet, CorePeripheryLayout, build_coefficients
from .noise import DriftDensity, JumpPart, LevySpec, NoiseModel
from .rates import chaos_inequalities, compute_rates, theorem_bound
from .simulate import SimConfig, estimate_error
from .sparse import SparseMatrix

EXPERIMENT_KINDS = (
    "simulate", "rates", "certify", "chaos-sweep", "pagen", "pafit",
    "ldp-lambda", "ldp-tail", "mckean-sweep",
)


# ===================================================== reference families


def mckean_config(N: int, x0_var: float = 1.0, m_var: float = 1.0) -> tuple[CoefficientSet, NoiseModel]:
    """All-to-all network with 1/(N-1) couplings and own-noise martingales.

    Drift sends every particle toward the running average of the others;
    the core part is the -1 self-relaxation, the periphery part the
    1/(N-1) couplings.  Each particle carries its own Brownian martingale
    column.
    """
    if N < 2:
        raise ValueError("the averaging network needs at least two particles")
    w = 1.0 / (N - 1)
    aP = SparseMatrix.from_entries(
        N, N, ((i, j, w) for i in range(N) for j in range(N) if i != j))
    aC = SparseMatrix.identity(N, -1.0)
    rC = SparseMatrix.identity(N)
    coeffs = build_coefficients(N, N, [("aP", aP), ("aC", aC), ("rC", rC)])
    noise = NoiseModel(
        L_specs=tuple(LevySpec() for _ in range(N)),
        M_specs=tuple(LevySpec(brownian_var=m_var) for _ in range(N)),
        b_specs=tuple(DriftDensity() for _ in range(N)),
        x0_cov=SparseMatrix.diagonal([x0_var] * N),
    )
    return coeffs, noise


def classex_config(N: int, seed: int) -> tuple[CoefficientSet, NoiseModel]:
    """Diagonal-core network with order-1/N pair couplings, random weights."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([11, seed, N])))
    n = N
    m = N
    aP_entries = []
    sP_entries = []
    for i in range(n):
        for j in range(n):
            if i != j:
                aP_entries.append((i, j, rng.uniform(0.2, 1.0) / N))
                if rng.random() < 0.5:
                    sP_entries.append((i, j, rng.uniform(0.1, 0.5) / N))
    coeffs = build_coefficients(n, m, [
        ("aP", SparseMatrix.from_entries(n, n, aP_entries)),
        ("sP", SparseMatrix.from_entries(n, n, sP_entries)),
        ("aC", SparseMatrix.diagonal(rng.uniform(-1.0, -0.2, n))),
        ("sC", SparseMatrix.diagonal(rng.uniform(0.0, 0.3, n))),
        ("fC", SparseMatrix.from_entries(n, m, ((i, i, rng.uniform(0.2, 1.0)) for i in range(n)))),
        ("rC", SparseMatrix.from_entries(n, m, ((i, i, rng.uniform(0.2, 1.0)) for i in range(n)))),
    ])
    noise = NoiseModel(
        L_specs=tuple(LevySpec(brownian_var=rng.uniform(0.3, 1.0)) for _ in range(n)),
        M_specs=tuple(LevySpec(brownian_var=rng.uniform(0.3, 1.0)) for _ in range(m)),
        b_specs=tuple(DriftDensity(offset=rng.uniform(-0.5, 0.5),
                                   white_var=rng.uniform(0.0, 0.3)) for _ in range(m)),
        x0_mean=rng.uniform(-1, 1, n),
        x0_cov=SparseMatrix.diagonal(rng.uniform(0.2, 1.0, n)),
    )
    return coeffs, noise


def sparse_family_member(N: int, N0: int = 2, N00: int = 2,
                         k_row: int = 3) -> tuple[CoefficientSet, NoiseModel, CorePeripheryLayout]:
    """Deterministic sparse-network family member with R_A = R_Sigma = N.

    Periphery rows carry ``k_row`` entries of size O(1/N) at stride-spread
    periphery columns, core columns are loaded with O(1) weights, and
    loadings split into a few systematic columns plus own idiosyncratic
    columns.  Every rate of the family decays like 1/N.
    """
    n = N0 + N
    m = N00 + n
    layout = CorePeripheryLayout(n0=N0, n_periphery=N, n00=N00)
    aP: dict[tuple[int, int], float] = {}
    sP: dict[tuple[int, int], float] = {}
    aC: dict[tuple[int, int], float] = {}
    sC: dict[tuple[int, int], float] = {}
    for i in range(n):
        aC[(i, i)] = -0.5
        sC[(i, i)] = 0.05
        for l in range(k_row):
            j = N0 + ((i * 7 + l * 13) % N)
            if j != i and (i, j) not in aP:
                aP[(i, j)] = (0.6 + 0.3 * ((i + l) % 2)) / N
            j2 = N0 + ((i * 5 + l * 17) % N)
            if j2 != i and (i, j2) not in sP:
                sP[(i, j2)] = (0.3 + 0.2 * ((i + l) % 2)) / N
    for i in range(N0, n):
        aC[(i, i % N0)] = 0.2
    fC: dict[tuple[int, int], float] = {}
    rC: dict[tuple[int, int], float] = {}
    fP: dict[tuple[int, int], float] = {}
    rP: dict[tuple[int, int], float] = {}
    for i in range(n):
        fC[(i, i % N00)] = 0.4
        fC[(i, N00 + i)] = 0.5
        rC[(i, (i + 1) % N00)] = 0.3
        rC[(i, N00 + i)] = 0.6
        for l in range(2):
            q = (i + 1 + l * 5) % n
            if q == i:
                q = (q + 1) % n
            fP[(i, N00 + q)] = fP.get((i, N00 + q), 0.0) or 0.5 / N
            rP[(i, N00 + q)] = rP.get((i, N00 + q), 0.0) or 0.4 / N
    coeffs = build_coefficients(n, m, [
        ("aC", SparseMatrix.from_entries(n, n, ((r, c, v) for (r, c), v in aC.items()))),
        ("aP", SparseMatrix.from_entries(n, n, ((r, c, v) for (r, c), v in aP.items()))),
        ("sC", SparseMatrix.from_entries(n, n, ((r, c, v) for (r, c), v in sC.items()))),
        ("sP", SparseMatrix.from_entries(n, n, ((r, c, v) for (r, c), v in sP.items()))),
        ("fC", SparseMatrix.from_entries(n, m, ((r, c, v) for (r, c), v in fC.items()))),
        ("fP", SparseMatrix.from_entries(n, m, ((r, c, v) for (r, c), v in fP.items()))),
        ("rC", SparseMatrix.from_entries(n, m, ((r, c, v) for (r, c), v in rC.items()))),
        ("rP", SparseMatrix.from_entries(n, m, ((r, c, v) for (r, c), v in rP.items()))),
    ])
    noise = NoiseModel(
        L_specs=tuple(LevySpec(brownian_var=1.0) for _ in range(n)),
        M_specs=tuple(LevySpec(brownian_var=1.0) for _ in range(m)),
        b_specs=tuple(DriftDensity(offset=0.25, white_var=0.09) for _ in range(m)),
        x0_mean=np.full(n, 0.3),
        x0_cov=SparseMatrix.diagonal([0.5] * n),
    )
    return coeffs, noise, layout


def random_admissible_config(index: int, max_n: int = 30
                             ) -> tuple[CoefficientSet, NoiseModel, CorePeripheryLayout]:
    """Seeded random laid-out network with a certifiable (non-vacuous) bound.

    Magnitudes are kept moderate so the exponential constants stay far
    from overflow; the bound is loose but informative.
    """
    for attempt in range(20):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([23, index, attempt])))
        N0 = int(rng.integers(0, 3))
        N00 = int(rng.integers(0, 3))
        N = int(rng.integers(4, max_n - N0 + 1))
        n = N0 + N
        m = N00 + n
        layout = CorePeripheryLayout(n0=N0, n_periphery=N, n00=N00)
        aC: dict[tuple[int, int], float] = {(i, i): rng.uniform(-0.6, -0.1) for i in range(n)}
        for j in range(N0):
            for i in range(n):
                if i != j and rng.random() < 0.4:
                    aC[(i, j)] = rng.uniform(-0.2, 0.2) / max(1, N0)
        sC = {(i, i): rng.uniform(0.0, 0.15) for i in range(n)}
        aP: dict[tuple[int, int], float] = {}
        sP: dict[tuple[int, int], float] = {}
        for i in range(n):
            for _ in range(int(rng.integers(1, 4))):
                j = N0 + int(rng.integers(0, N))
                if j != i:
                    aP[(i, j)] = rng.uniform(0.2, 1.0) / N
            for _ in range(int(rng.integers(0, 3))):
                j = N0 + int(rng.integers(0, N))
                if j != i:
                    sP[(i, j)] = rng.uniform(0.1, 0.4) / N
        fC: dict[tuple[int, int], float] = {}
        rC: dict[tuple[int, int], float] = {}
        fP: dict[tuple[int, int], float] = {}
        rP: dict[tuple[int, int], float] = {}
        for i in range(n):
            for j in range(N00):
                if rng.random() < 0.6:
                    fC[(i, j)] = rng.uniform(-0.5, 0.5)
                if rng.random() < 0.6:
                    rC[(i, j)] = rng.uniform(-0.5, 0.5)
            fC[(i, N00 + i)] = rng.uniform(0.2, 0.8)
            rC[(i, N00 + i)] = rng.uniform(0.2, 0.8)
            for _ in range(int(rng.integers(0, 3))):
                q = int(rng.integers(0, n))
                if q != i:
                    fP[(i, N00 + q)] = rng.uniform(0.2, 0.8) / N
                    rP[(i, N00 + q)] = rng.uniform(0.2, 0.8) / N
        coeffs = build_coefficients(n, m, [
            ("aC", SparseMatrix.from_entries(n, n, ((r, c, v) for (r, c), v in aC.items()))),
            ("aP", SparseMatrix.from_entries(n, n, ((r, c, v) for (r, c), v in aP.items()))),
            ("sC", SparseMatrix.from_entries(n, n, ((r, c, v) for (r, c), v in sC.items()))),
            ("sP", SparseMatrix.from_entries(n, n, ((r, c, v) for (r, c), v in sP.items()))),
            ("fC", SparseMatrix.from_entries(n, m, ((r, c, v) for (r, c), v in fC.items()))),
            ("fP", SparseMatrix.from_entries(n, m, ((r, c, v) for (r, c), v in fP.items()))),
            ("rC", SparseMatrix.from_entries(n, m, ((r, c, v) for (r, c), v in rC.items()))),
            ("rP", SparseMatrix.from_entries(n, m, ((r, c, v) for (r, c), v in rP.items()))),
        ])
        brown = rng.uniform(0.2, 1.0, n)
        jump_var = np.zeros(n)
        L_specs = []
        for i in range(n):
            jumps = None
            if rng.random() < 0.3:
                z = rng.uniform(0.2, 0.6)
                jumps = JumpPart(rate=float(rng.uniform(0.5, 2.0)),
                                 atoms=((z, 0.5), (-z, 0.5)))
                jump_var[i] = jumps.variance
            L_specs.append(LevySpec(brownian_var=float(brown[i]), jumps=jumps))
        cov_entries = {(i, i): float(brown[i] + jump_var[i]) for i in range(n)}
        periphery = list(range(N0, n))
        rng.shuffle(periphery)
        for a, b in zip(periphery[::2], periphery[1::2]):
            if rng.random() < 0.3:
                c = 0.3 * math.sqrt(brown[a] * brown[b])
                cov_entries[(a, b)] = c
                cov_entries[(b, a)] = c
        noise = NoiseModel(
            L_specs=tuple(L_specs),
            M_specs=tuple(LevySpec(brownian_var=float(rng.uniform(0.3, 1.0))) for _ in range(m)),
            b_specs=tuple(DriftDensity(offset=float(rng.uniform(-0.5, 0.5)),
                                       amplitude=float(rng.uniform(0.0, 0.3)),
                                       omega=float(rng.uniform(0.5, 4.0)),
                                       white_var=float(rng.uniform(0.0, 0.2)))
                          for _ in range(m)),
            L_cov=SparseMatrix.from_entries(n, n, ((r, c, v) for (r, c), v in cov_entries.items())),
            x0_mean=rng.uniform(-1, 1, n),
            x0_cov=SparseMatrix.diagonal(rng.uniform(0.2, 1.0, n)),
        )
        report = theorem_bound(coeffs, noise, 1.0)
        if not report.vacuous:
            return coeffs, noise, layout
    raise RuntimeError(f"could not draw a non-vacuous config for index {index}")


def zero_periphery_config(index: int, max_n: int = 20) -> tuple[CoefficientSet, NoiseModel]:
    """Seeded random network whose periphery matrices are all zero."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([31, index])))
    n = int(rng.integers(1, max_n + 1))
    m = n
    aC = {(i, j): rng.uniform(-0.5, 0.5) for i in range(n) for j in range(n)
          if rng.random() < 0.3 or i == j}
    sC = {(i, i): rng.uniform(0.0, 0.3) for i in range(n)}
    fC = {(i, i): rng.uniform(-0.8, 0.8) for i in range(n)}
    rC = {(i, i): rng.uniform(-0.8, 0.8) for i in range(n)}
    coeffs = build_coefficients(n, m, [
        ("aC", SparseMatrix.from_entries(n, n, ((r, c, v) for (r, c), v in aC.items()))),
        ("sC", SparseMatrix.from_entries(n, n, ((r, c, v) for (r, c), v in sC.items()))),
        ("fC", SparseMatrix.from_entries(n, m, ((r, c, v) for (r, c), v in fC.items()))),
        ("rC", SparseMatrix.from_entries(n, m, ((r, c, v) for (r, c), v in rC.items()))),
    ])
    jumps = JumpPart(rate=1.0, atoms=((0.3, 0.5), (-0.3, 0.5))) if rng.random() < 0.5 else None
    noise = NoiseModel(
        L_specs=tuple(LevySpec(brownian_var=float(rng.uniform(0.1, 1.0)), jumps=jumps)
                      for _ in range(n)),
        M_specs=tuple(LevySpec(brownian_var=float(rng.uniform(0.1, 1.0))) for _ in range(m)),
        b_specs=tuple(DriftDensity(offset=float(rng.uniform(-0.5, 0.5)),
                                   white_var=float(rng.uniform(0.0, 0.3))) for _ in range(m)),
        x0_mean=rng.uniform(-1, 1, n),
        x0_cov=SparseMatrix.diagonal(rng.uniform(0.1, 1.0, n)),
    )
    return coeffs, noise


def drift_only_family(N: int, coupling: float = 1.0,
                      m_var: float = 1.0) -> tuple[CoefficientSet, NoiseModel]:
    """Zero-volatility averaging family for the tail and cumulant probes."""
    coeffs, noise = mckean_config(N, x0_var=0.0, m_var=m_var)
    if coupling != 1.0:
        coeffs = coeffs.replace_role("aP", coeffs.aP.scale(coupling))
    noise = NoiseModel(
        L_specs=noise.L_specs, M_specs=noise.M_specs, b_specs=noise.b_specs,
        x0_mean=np.zeros(N), x0_cov=SparseMatrix.zeros(N, N))
    return coeffs, noise


# ============================================================== envelopes


def jsonable(obj: Any) -> Any:
    """Convert payload values to strict-JSON-safe python objects."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    return obj


@dataclass
class ExperimentSpec:
    """What to run: kind plus the knobs every kind understands."""

    kind: str
    config_path: str | None = None
    config: dict | None = None
    n_grid: tuple[int, ...] | None = None
    seeds: tuple[int, ...] | None = None
    seed: int | None = None
    out_dir: str | None = None
    n_paths: int | None = None
    steps: int | None = None
    threads: int = 1

    @property
    def master_seed(self) -> int:
        return 0 if self.seed is None else int(self.seed)

    def __post_init__(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}; "
                              f"choose one of {', '.join(EXPERIMENT_KINDS)}")
        if self.n_grid is not None:
            grid = tuple(int(x) for x in self.n_grid)
            if any(b <= a for a, b in zip(grid, grid[1:])):
                raise ConfigError("N grid must be strictly increasing")
            self.n_grid = grid

    def echo(self) -> dict:
        return {
            "kind": self.kind,
            "config_path": self.config_path,
            "n_grid": list(self.n_grid) if self.n_grid else None,
            "seeds": list(self.seeds) if self.seeds else None,
            "seed": self.seed,
            "n_paths": self.n_paths,
            "steps": self.steps,
        }


@dataclass
class ResultEnvelope:
    spec: dict
    tool_version: str
    master_seed: int
    created_utc: str
    payload: dict

    def payload_bytes(self) -> bytes:
        return json.dumps(jsonable(self.payload), sort_keys=True,
                          separators=(",", ":"), allow_nan=False).encode()

    def to_json(self) -> str:
        return json.dumps({
            "spec": jsonable(self.spec),
            "tool_version": self.tool_version,
            "master_seed": self.master_seed,
            "created_utc": self.created_utc,
            "payload": jsonable(self.payload),
        }, sort_keys=True, indent=2, allow_nan=False)


# ================================================================= runner


def _sim_from(spec: ExperimentSpec, parsed_sim: SimConfig | None,
              default_paths: int, default_steps: int, T: float = 1.0) -> SimConfig:
    base = parsed_sim or SimConfig(T=T, steps=default_steps, n_paths=default_paths,
                                   seed=spec.master_seed)
    return SimConfig(
        T=base.T,
        steps=spec.steps or base.steps,
        n_paths=spec.n_paths or base.n_paths,
        seed=spec.seed if spec.seed is not None else base.seed,
        record_stride=base.record_stride,
        threads=spec.threads,
    )


def _load(spec: ExperimentSpec) -> dict:
    if spec.config is not None:
        from .configio import parse_document
        return parse_document(spec.config)
    if spec.config_path is None:
        raise ConfigError(f"experiment kind {spec.kind!r} needs --config")
    return load_config(spec.config_path)


def run(spec: ExperimentSpec) -> ResultEnvelope:
    """Execute one experiment and (optionally) persist its outputs."""
    handler = {
        "simulate": _run_simulate,
        "rates": _run_rates,
        "certify": _run_certify,
        "chaos-sweep": _run_chaos_sweep,
        "pagen": _run_pagen,
        "pafit": _run_pafit,
        "ldp-lambda": _run_ldp_lambda,
        "ldp-tail": _run_ldp_tail,
        "mckean-sweep": _run_mckean_sweep,
    }[spec.kind]
    payload = handler(spec)
    env = ResultEnvelope(
        spec=spec.echo(),
        tool_version=__version__,
        master_seed=spec.master_seed,
        created_utc=_dt.datetime.now(_dt.timezone.utc).isoformat(),
        payload=payload,
    )
    if spec.out_dir:
        os.makedirs(spec.out_dir, exist_ok=True)
        with open(os.path.join(spec.out_dir, "result.json"), "w", encoding="utf-8") as fh:
            fh.write(env.to_json())
            fh.write("\n")
        with open(os.path.join(spec.out_dir, "payload.json"), "wb") as fh:
            fh.write(env.payload_bytes())
        emit_plotdata(env, spec.out_dir)
    return env


def _run_simulate(spec: ExperimentSpec) -> dict:
    parsed = _load(spec)
    sim = _sim_from(spec, parsed["sim"], default_paths=1000, default_steps=100)
    est = estimate_error(parsed["coeffs"], parsed["noise"], sim)
    return {
        "kind": "simulate",
        "delta_hat": est.delta_hat,
        "std_err": est.std_err,
        "per_particle": list(est.per_particle),
        "n_paths": est.n_paths,
        "n_flagged": est.n_flagged,
        "T": sim.T, "steps": sim.steps,
    }


def _run_rates(spec: ExperimentSpec) -> dict:
    parsed = _load(spec)
    T = parsed["sim"].T if parsed["sim"] else 1.0
    report = theorem_bound(parsed["coeffs"], parsed["noise"], T)
    return {"kind": "rates", **report.as_dict()}


def _run_certify(spec: ExperimentSpec, margin: float = 3.0) -> dict:
    parsed = _load(spec)
    sim = _sim_from(spec, parsed["sim"], default_paths=1000, default_steps=100)
    report = theorem_bound(parsed["coeffs"], parsed["noise"], sim.T)
    est = estimate_error(parsed["coeffs"], parsed["noise"], sim)
    slack = margin * est.std_err if math.isfinite(est.std_err) else 0.0
    ok = (not report.vacuous) and est.delta_hat <= report.bound + slack
    return {
        "kind": "certify",
        "delta_hat": est.delta_hat,
        "std_err": est.std_err,
        "bound": report.bound,
        "vacuous": report.vacuous,
        "margin_sigmas": margin,
        "pass": bool(ok),
    }


def _run_mckean_sweep(spec: ExperimentSpec) -> dict:
    grid = spec.n_grid or (20, 40, 80, 160, 320)
    rows = []
    for N in grid:
        coeffs, noise = mckean_config(N)
        sim = SimConfig(T=1.0, steps=spec.steps or 200, n_paths=spec.n_paths or 20000,
                        seed=spec.master_seed, threads=spec.threads)
        est = estimate_error(coeffs, noise, sim)
        report = theorem_bound(coeffs, noise, sim.T)
        rows.append({"N": N, "delta_hat": est.delta_hat, "std_err": est.std_err,
                     "bound": report.bound})
    logN = np.log([row["N"] for row in rows])
    logd = np.log([row["delta_hat"] for row in rows])
    slope = float(np.polyfit(logN, logd, 1)[0])
    return {"kind": "mckean-sweep", "N_grid": list(grid), "rows": rows, "loglog_slope": slope}


def _run_chaos_sweep(spec: ExperimentSpec) -> dict:
    grid = spec.n_grid or (25, 50, 100, 200)
    classex_rows = []
    for N in grid:
        coeffs, noise = classex_config(N, seed=spec.master_seed)
        checks = chaos_inequalities(coeffs, noise, 1.0)
        classex_rows.append({
            "N": N,
            "all_hold": all(c.holds for c in checks),
            "items": [{"index": c.index, "lhs": c.lhs, "rhs": c.rhs,
                       "relation": c.relation, "holds": c.holds} for c in checks],
        })
    family_rows = []
    for N in grid:
        coeffs, noise, _ = sparse_family_member(N)
        family_rows.append({"N": N, "rates": list(compute_rates(coeffs, noise, 1.0))})
    rates_mat = np.array([row["rates"] for row in family_rows])
    logN = np.log(np.array(grid, dtype=float))
    slopes = []
    decreasing = True
    for j in range(12):
        col = rates_mat[:, j]
        if np.any(col <= 0):
            slopes.append(None)
            decreasing = False
            continue
        slopes.append(float(np.polyfit(logN, np.log(col), 1)[0]))
        if np.any(np.diff(col) >= 0):
            decreasing = False
    return {"kind": "chaos-sweep",
            "classex": {"N_grid": list(grid), "rows": classex_rows},
            "sparse_family": {"N_grid": list(grid),
                              "rates_per_N": [row["rates"] for row in family_rows],
                              "slopes": slopes,
                              "strictly_decreasing": decreasing}}


def _pa_params_from(config: dict) -> PAParams:
    try:
        return PAParams(
            alpha=float(config.get("alpha", 0.3)),
            beta=float(config.get("beta", 0.4)),
            gamma=float(config.get("gamma", 0.3)),
            delta_in=float(config.get("delta_in", 1.0)),
            delta_out=float(config.get("delta_out", 1.0)),
            nu0=int(config.get("nu0", 1)),
            n0_active=int(config.get("n0_active", 1)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc), "pagen")


def _run_pagen(spec: ExperimentSpec) -> dict:
    config = {}
    if spec.config_path or spec.config:
        if spec.config is not None:
            config = spec.config
        else:
            with open(spec.config_path) as fh:
                config = json.load(fh)
    params = _pa_params_from(config)
    N = int(config.get("N", 10000))
    seeds = spec.seeds or tuple(config.get("seeds", [spec.master_seed]))
    rows = []
    histories = {}
    edges = {}
    for sd in seeds:
        g = pa_generate(params, N, sd)
        c_in = normalizers(params, g.history_n_active, 1.0, "in").values
        c_out = normalizers(params, g.history_n_active, 1.0, "out").values
        rows.append({
            "seed": sd, "N": N, "n_active": g.n_active,
            "max_in": g.max_in, "max_out": g.max_out,
            "c_in_final": float(c_in[-1]), "c_out_final": float(c_out[-1]),
            "active_fraction": (g.n_active - params.n0_active) / N if N else 0.0,
        })
        histories[sd] = (g.history_max_in, g.history_max_out, g.history_n_active, c_in, c_out)
        edges[sd] = (g.src, g.dst)
    payload = {"kind": "pagen",
               "params": {"alpha": params.alpha, "beta": params.beta, "gamma": params.gamma,
                          "delta_in": params.delta_in, "delta_out": params.delta_out,
                          "nu0": params.nu0, "n0_active": params.n0_active},
               "N": N, "seeds": list(seeds), "rows": rows}
    if spec.out_dir:
        os.makedirs(spec.out_dir, exist_ok=True)
        for sd in seeds:
            hin, hout, hn, c_in, c_out = histories[sd]
            with open(os.path.join(spec.out_dir, f"history_seed{sd}.csv"), "w") as fh:
                fh.write("N,M_in,M_out,n,c_in,c_out\n")
                for k in range(len(hin)):
                    fh.write(f"{k},{hin[k]},{hout[k]},{hn[k]},{c_in[k]!r},{c_out[k]!r}\n")
            src, dst = edges[sd]
            with open(os.path.join(spec.out_dir, f"edges_seed{sd}.csv"), "w") as fh:
                fh.write("step,src,dst\n")
                for k, (s, d) in enumerate(zip(src, dst)):
                    fh.write(f"{k},{s},{d}\n")
    return payload


def _run_pafit(spec: ExperimentSpec) -> dict:
    """Fit degree-growth exponents from history CSVs written by pagen."""
    if spec.config is not None:
        config = spec.config
    else:
        with open(spec.config_path) as fh:
            config = json.load(fh)
    paths = config["histories"]
    n_grid = config.get("n_grid")
    per_seed_in = []
    per_seed_out = []
    for path in paths:
        data = np.genfromtxt(path, delimiter=",", names=True)
        if n_grid is None:
            top = int(data["N"][-1])
            n_grid = [top // 8, top // 4, top // 2, top]
        per_seed_in.append([float(data["M_in"][int(N)]) for N in n_grid])
        per_seed_out.append([float(data["M_out"][int(N)]) for N in n_grid])
    logN = np.log(np.array(n_grid, dtype=float))
    slope_in, ci_in = fit_exponent(logN, np.log(np.array(per_seed_in)))
    slope_out, ci_out = fit_exponent(logN, np.log(np.array(per_seed_out)))
    return {"kind": "pafit", "n_grid": [int(N) for N in n_grid],
            "in": {"slope": slope_in, "ci": list(ci_in)},
            "out": {"slope": slope_out, "ci": list(ci_out)}}


def _theta_from(config: dict, d: int, T: float):
    from .ldp import AtomicMeasure

    node = config.get("theta")
    if node is None:
        return AtomicMeasure.from_lists([[(T, 1.0)] for _ in range(d)], T)
    return AtomicMeasure.from_lists(
        [[(float(t), float(w)) for t, w in coord] for coord in node], T)


def _run_ldp_lambda(spec: ExperimentSpec) -> dict:
    config = {}
    if spec.config_path or spec.config:
        if spec.config is not None:
            config = spec.config
        else:
            with open(spec.config_path) as fh:
                config = json.load(fh)
    grid_N = spec.n_grid or tuple(config.get("N_grid", (8, 16, 32, 64)))
    T = float(config.get("T", 1.0))
    K = int(config.get("K", 64))
    d = int(config.get("d", 2))
    N_top = grid_N[-1]
    coeffs, _ = drift_only_family(N_top)
    specs = tuple(LevySpec(brownian_var=1.0) for _ in range(N_top))
    ld = LDConfig(dominating=LevySpec(brownian_var=1.0))
    kernels = build_kernels(coeffs, None, ld, N_top, np.linspace(0.0, T, K + 1), d=d)
    theta = _theta_from(config, d, T)
    table = lambda_cesaro(kernels, specs, theta, grid_N, ld)
    return {"kind": "ldp-lambda", "N_grid": list(table["n_grid"]),
            "gammas": list(table["gammas"]), "averages": list(table["averages"]),
            "lambda": table["lambda"], "cauchy_diff": table["cauchy_diff"]}


def _run_ldp_tail(spec: ExperimentSpec) -> dict:
    config = {}
    if spec.config_path or spec.config:
        if spec.config is not None:
            config = spec.config
        else:
            with open(spec.config_path) as fh:
                config = json.load(fh)
    grid_N = spec.n_grid or tuple(config.get("N_grid", (8, 16, 32)))
    eps = float(config.get("eps", 0.1))
    coupling = float(config.get("coupling", 4.0))
    family = [(N, *drift_only_family(N, coupling=coupling)) for N in grid_N]
    ld = LDConfig(dominating=LevySpec(brownian_var=1.0))
    sim = SimConfig(T=1.0, steps=spec.steps or 100, n_paths=spec.n_paths or 4000,
                    seed=spec.master_seed, threads=spec.threads)
    points = tail_slope(family, ld, eps, sim)
    return {"kind": "ldp-tail", "eps": eps,
            "rows": [{"N": p.N, "gamma": p.gamma_N, "n_paths": p.n_paths,
                      "n_exceed": p.n_exceed, "p_hat": p.p_hat,
                      "wilson_low": p.wilson_low, "wilson_high": p.wilson_high,
                      "normalized_log": p.normalized_log if p.estimable else None,
                      "estimable": p.estimable} for p in points]}


# =============================================================== plot data


def _write_csv(path: str, header: list[str], rows: list[list], about: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join("" if v is None else repr(v) if isinstance(v, float) else str(v)
                              for v in row) + "\n")
    with open(path + ".about.txt", "w", encoding="utf-8") as fh:
        fh.write(about.rstrip() + "\n")


def emit_plotdata(env: ResultEnvelope, out_dir: str) -> list[str]:
    """Write figure-ready CSV files for an envelope; returns the paths."""
    payload = env.payload
    kind = payload.get("kind")
    os.makedirs(out_dir, exist_ok=True)
    written: list[str] = []

    def emit(name, header, rows, about):
        path = os.path.join(out_dir, name)
        _write_csv(path, header, rows, about)
        written.append(path)

    if kind in ("mckean-sweep",):
        emit("error_vs_N.csv", ["N", "delta_hat", "std_err", "bound"],
             [[r["N"], r["delta_hat"], r["std_err"], r["bound"]] for r in payload["rows"]],
             "Worst-particle running-max L2 gap and certified bound per network size N.")
    elif kind == "chaos-sweep":
        fam = payload["sparse_family"]
        emit("rate_vs_N.csv", ["N"] + [f"r{j}" for j in range(1, 13)],
             [[N] + list(rates) for N, rates in zip(fam["N_grid"], fam["rates_per_N"])],
             "The twelve error rates of the sparse family per network size N.")
    elif kind == "pagen":
        emit("degree_vs_N.csv", ["seed", "N", "max_in", "max_out", "n_active"],
             [[r["seed"], r["N"], r["max_in"], r["max_out"], r["n_active"]]
              for r in payload["rows"]],
             "Final degree maxima and active-vertex counts per seed.")
    elif kind == "ldp-lambda":
        emit("cesaro_vs_N.csv", ["N", "gamma", "average"],
             [[N, g, a] for N, g, a in zip(payload["N_grid"], payload["gammas"],
                                           payload["averages"])],
             "Cesàro averages of the integrated cumulants per averaging depth.")
    elif kind == "ldp-tail":
        emit("tail_vs_N.csv", ["N", "gamma", "n_paths", "n_exceed", "p_hat", "normalized_log"],
             [[r["N"], r["gamma"], r["n_paths"], r["n_exceed"], r["p_hat"],
               r["normalized_log"]] for r in payload["rows"]],
             "Exceedance frequencies and (1/gamma) log p per network size N.")
    elif kind == "simulate":
        emit("per_particle.csv", ["particle", "l2_runmax_gap"],
             [[i, v] for i, v in enumerate(payload["per_particle"])],
             "Per-particle running-max L2 gap estimates.")
    elif kind in ("rates", "certify"):
        if "r" in payload:
            emit("rates.csv", ["iota", "r", "K_iota"],
                 [[j + 1, payload["r"][j], payload["K_iota"][j]] for j in range(12)],
                 "Rates and companion constants by index.")
    return written
