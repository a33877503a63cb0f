"""Directed preferential-attachment multigraphs and their degree asymptotics.

One growth step appends exactly one edge.  With probability ``alpha`` a
fresh vertex shoots an edge at an existing vertex chosen proportionally to
in-degree + delta_in; with probability ``beta`` both endpoints are
existing vertices drawn independently (out-weights for the source,
in-weights for the target, loops allowed); with probability ``gamma`` an
existing vertex chosen by out-weights points at a fresh vertex.

Degree-proportional selection uses the uniform-edge-endpoint identity:
picking a uniform edge and reading off its head (tail) is exactly an
in-degree (out-degree) proportional draw, and the additive shift delta is
a uniform draw over active vertices.  One uniform variate decides between
the two urns, so each draw is O(1).

The normaliser sequences c(N, k) rescale the running degree maxima into
convergent trajectories; their recursion uses the running edge and
active-vertex counts only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .network import CoefficientSet, CorePeripheryLayout, build_coefficients
from .sparse import SparseMatrix


class GraphGenError(ValueError):
    pass


@dataclass(frozen=True)
class PAParams:
    """Branch probabilities and degree shifts of the growth process."""

    alpha: float
    beta: float
    gamma: float
    delta_in: float = 0.0
    delta_out: float = 0.0
    nu0: int = 1          # edges in the initial graph
    n0_active: int = 1    # non-isolated vertices in the initial graph

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise GraphGenError("branch probabilities must be nonnegative")
        if abs(self.alpha + self.beta + self.gamma - 1.0) > 1e-12:
            raise GraphGenError("branch probabilities must sum to 1")
        # alpha + gamma = 0 (pure-beta growth) is degenerate but well defined:
        # no vertex ever joins, every edge lands on the seed vertices.
        if self.delta_in < 0 or self.delta_out < 0:
            raise GraphGenError("degree shifts must be nonnegative")
        if self.nu0 < 1 or self.n0_active < 1:
            raise GraphGenError("initial graph needs at least one edge and one active vertex")

    def s_exponent(self, kind: str) -> float:
        """Branch mass feeding the in- (out-) degree of existing vertices."""
        if kind == "in":
            return self.alpha + self.beta
        if kind == "out":
            return self.beta + self.gamma
        raise GraphGenError("kind must be 'in' or 'out'")

    def degree_exponent(self, kind: str) -> float:
        """Growth exponent of the maximal in-/out-degree (zero-shift limit)."""
        return self.s_exponent(kind) / (1.0 + (self.delta_in if kind == "in" else self.delta_out)
                                        * (self.alpha + self.gamma))


def initial_edges(params: PAParams) -> list[tuple[int, int]]:
    """Default seed graph: ``nu0`` self-loops spread over the active vertices."""
    return [(i % params.n0_active, i % params.n0_active) for i in range(params.nu0)]


@dataclass
class PAGraph:
    """Mutable growth state: edge list, degree tallies, step history."""

    params: PAParams
    src: list[int] = field(default_factory=list)
    dst: list[int] = field(default_factory=list)
    in_deg: list[int] = field(default_factory=list)
    out_deg: list[int] = field(default_factory=list)
    n_active: int = 0
    steps_done: int = 0
    max_in: int = 0
    max_out: int = 0
    history_max_in: list[int] = field(default_factory=list)
    history_max_out: list[int] = field(default_factory=list)
    history_n_active: list[int] = field(default_factory=list)

    @classmethod
    def seed_graph(cls, params: PAParams, edges: list[tuple[int, int]] | None = None) -> "PAGraph":
        g = cls(params=params)
        g.n_active = params.n0_active
        g.in_deg = [0] * params.n0_active
        g.out_deg = [0] * params.n0_active
        for s, d in (edges if edges is not None else initial_edges(params)):
            if not (0 <= s < params.n0_active and 0 <= d < params.n0_active):
                raise GraphGenError("seed edges must live on the active vertices")
            g.src.append(s)
            g.dst.append(d)
            g.out_deg[s] += 1
            g.in_deg[d] += 1
        g.max_in = max(g.in_deg)
        g.max_out = max(g.out_deg)
        if len(g.src) != params.nu0:
            raise GraphGenError("seed edge count must equal nu0")
        g._record()
        return g

    def _record(self):
        self.history_max_in.append(self.max_in)
        self.history_max_out.append(self.max_out)
        self.history_n_active.append(self.n_active)

    @property
    def n_edges(self) -> int:
        return len(self.src)

    def edges(self) -> list[tuple[int, int]]:
        return list(zip(self.src, self.dst))

    # ------------------------------------------------------------ sampling

    def _draw_in(self, rng: np.random.Generator) -> int:
        total_edges = self.n_edges
        u = rng.random() * (total_edges + self.params.delta_in * self.n_active)
        if u < total_edges:
            return self.dst[int(u)]
        return min(int((u - total_edges) / self.params.delta_in), self.n_active - 1)

    def _draw_out(self, rng: np.random.Generator) -> int:
        total_edges = self.n_edges
        u = rng.random() * (total_edges + self.params.delta_out * self.n_active)
        if u < total_edges:
            return self.src[int(u)]
        return min(int((u - total_edges) / self.params.delta_out), self.n_active - 1)

    def in_mass_function(self) -> np.ndarray:
        """Exact target-selection law over active vertices (oracle use)."""
        w = np.array(self.in_deg[: self.n_active], dtype=float) + self.params.delta_in
        return w / w.sum()

    def out_mass_function(self) -> np.ndarray:
        w = np.array(self.out_deg[: self.n_active], dtype=float) + self.params.delta_out
        return w / w.sum()

    def _new_vertex(self) -> int:
        v = self.n_active
        self.n_active += 1
        self.in_deg.append(0)
        self.out_deg.append(0)
        return v

    def _append_edge(self, s: int, d: int):
        self.src.append(s)
        self.dst.append(d)
        self.out_deg[s] += 1
        self.in_deg[d] += 1
        if self.out_deg[s] > self.max_out:
            self.max_out = self.out_deg[s]
        if self.in_deg[d] > self.max_in:
            self.max_in = self.in_deg[d]


def pa_step(graph: PAGraph, params: PAParams, rng: np.random.Generator) -> PAGraph:
    """Advance the growth process by one edge (in place; returns the graph)."""
    if graph.n_active < 1:
        raise GraphGenError("growth needs at least one active vertex")
    u = rng.random()
    if u < params.alpha:
        w = graph._draw_in(rng)
        v = graph._new_vertex()
        graph._append_edge(v, w)
    elif u < params.alpha + params.beta:
        v = graph._draw_out(rng)
        w = graph._draw_in(rng)
        graph._append_edge(v, w)
    else:
        v = graph._draw_out(rng)
        w = graph._new_vertex()
        graph._append_edge(v, w)
    graph.steps_done += 1
    graph._record()
    return graph


def pa_generate(params: PAParams, N: int, seed: int,
                edges: list[tuple[int, int]] | None = None) -> PAGraph:
    """Grow a graph by N steps from the seed graph, deterministically in seed."""
    if N < 0:
        raise GraphGenError("step count must be nonnegative")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    graph = PAGraph.seed_graph(params, edges)
    for _ in range(N):
        pa_step(graph, params, rng)
    return graph


# ---------------------------------------------------------------- analysis


@dataclass(frozen=True)
class NormalizerSeq:
    """Rescaling sequence c(0..N, k) for one degree direction."""

    values: np.ndarray
    kind: str
    k: float

    def __post_init__(self):
        if self.values[0] != 1.0:
            raise GraphGenError("normaliser sequences start at 1")
        if np.any(np.diff(self.values) > 1e-15):
            raise GraphGenError("normaliser sequences never increase")


def normalizers(params: PAParams, n_active_history, k: float, kind: str = "in") -> NormalizerSeq:
    """Run the rescaling recursion along a recorded active-vertex history.

    c(0, k) = 1 and c(N+1, k) = c(N, k) * S(N) / (S(N) + s k) with
    S(N) = nu0 + N + delta * n(N) and s the branch mass of the chosen
    degree direction.
    """
    n_hist = np.asarray(n_active_history, dtype=float)
    delta = params.delta_in if kind == "in" else params.delta_out
    s = params.s_exponent(kind)
    N = len(n_hist) - 1
    S = params.nu0 + np.arange(N) + delta * n_hist[:-1]
    ratios = S / (S + s * k)
    values = np.concatenate([[1.0], np.cumprod(ratios)])
    return NormalizerSeq(values=values, kind=kind, k=float(k))


def fit_exponent(log_sizes: np.ndarray, log_maxima: np.ndarray,
                 n_boot: int = 200, boot_seed: int = 0) -> tuple[float, tuple[float, float]]:
    """Average per-seed log-log slope with a seed-bootstrap interval.

    ``log_maxima`` has one row per seed.  Degenerate (constant) histories
    fit slope 0 with a zero-width interval.
    """
    log_sizes = np.asarray(log_sizes, dtype=float)
    log_maxima = np.atleast_2d(np.asarray(log_maxima, dtype=float))
    if log_sizes.size < 3:
        raise GraphGenError("need at least three grid points to fit")
    if log_maxima.shape[1] != log_sizes.size:
        raise GraphGenError("grid and history shapes disagree")
    x = log_sizes - log_sizes.mean()
    denom = float((x ** 2).sum())
    slopes = (log_maxima - log_maxima.mean(axis=1, keepdims=True)) @ x / denom
    point = float(slopes.mean())
    if np.allclose(slopes, slopes[0]):
        return point, (point, point)
    rng = np.random.Generator(np.random.PCG64(boot_seed))
    n_seeds = slopes.size
    boots = np.empty(n_boot)
    for b in range(n_boot):
        pick = rng.integers(0, n_seeds, n_seeds)
        boots[b] = slopes[pick].mean()
    lo, hi = np.percentile(boots, [2.5, 97.5])
    return point, (float(lo), float(hi))


def max_degree_sweep(params: PAParams, n_grid, seeds,
                     kind: str = "out") -> tuple[np.ndarray, np.ndarray]:
    """Maximal degrees at the grid sizes for each seed, shape (seeds, grid)."""
    sizes, both = max_degree_sweep_both(params, n_grid, seeds)
    return sizes, both[kind]


def max_degree_sweep_both(params: PAParams, n_grid, seeds) -> tuple[np.ndarray, dict]:
    """One generation pass per seed, recording both degree directions."""
    n_grid = sorted(int(N) for N in n_grid)
    seeds = list(seeds)
    out = {"in": np.zeros((len(seeds), len(n_grid))),
           "out": np.zeros((len(seeds), len(n_grid)))}
    for row, seed in enumerate(seeds):
        graph = pa_generate(params, n_grid[-1], seed)
        for col, N in enumerate(n_grid):
            out["in"][row, col] = graph.history_max_in[N]
            out["out"][row, col] = graph.history_max_out[N]
    return np.array(n_grid, dtype=float), out


def convergence_probe(params: PAParams, n_grid, seeds, kind: str = "in") -> dict:
    """Rescaled degree-maximum trajectories c(N,1)*(M(N)+delta) per seed.

    The diagnostic is the relative fluctuation of each trajectory over the
    top half of the grid; small values indicate stabilisation.
    """
    n_grid = sorted(int(N) for N in n_grid)
    delta = params.delta_in if kind == "in" else params.delta_out
    trajectories = []
    diagnostics = []
    for seed in seeds:
        graph = pa_generate(params, n_grid[-1], seed)
        hist = np.asarray(graph.history_max_in if kind == "in" else graph.history_max_out)
        c = normalizers(params, graph.history_n_active, 1.0, kind).values
        m = c * (hist + delta)
        traj = np.array([m[N] for N in n_grid])
        trajectories.append(traj)
        top = traj[len(traj) // 2:]
        mid = top.mean()
        diagnostics.append(float((top.max() - top.min()) / mid) if mid > 0 else 0.0)
    return {"n_grid": np.array(n_grid, dtype=float),
            "trajectories": np.array(trajectories),
            "rel_fluctuation": np.array(diagnostics)}


# ----------------------------------------------- graph -> coefficient sets


def graph_to_coefficients(graph: PAGraph, layout: CorePeripheryLayout,
                          weight_rule: float, R_A: float) -> CoefficientSet:
    """Turn edge multiplicities into a drift coefficient set.

    Edge i -> j contributes weight ``multiplicity * weight_rule / R_A``.
    Entries in periphery columns land in the periphery drift; diagonal
    entries and core columns land in the core drift.
    """
    if R_A <= 0:
        raise GraphGenError("R_A must be positive")
    if graph.n_active > layout.n:
        raise GraphGenError(
            f"graph has {graph.n_active} vertices but the layout holds {layout.n} particles")
    mult: dict[tuple[int, int], int] = {}
    for s, d in zip(graph.src, graph.dst):
        mult[(s, d)] = mult.get((s, d), 0) + 1
    scale = weight_rule / R_A
    aP_entries = []
    aC_entries = []
    for (s, d), count in mult.items():
        value = count * scale
        if s == d or d < layout.n0:
            aC_entries.append((s, d, value))
        else:
            aP_entries.append((s, d, value))
    n = layout.n
    return build_coefficients(n, layout.m, [
        ("aP", SparseMatrix.from_entries(n, n, aP_entries)),
        ("aC", SparseMatrix.from_entries(n, n, aC_entries)),
    ])
