"""Load and save network descriptions as structured JSON text.

Top-level document keys (all optional except ``n`` and ``m``):

* ``n``, ``m``              — particle and noise-column counts;
* ``coefficients``          — map from role (aC, aP, sC, sP, fC, fP, rC,
  rP) to an entry list ``[[row, col, value], ...]``; missing roles are
  zero matrices;
* ``layout``                — ``{"n0": .., "n00": ..}`` core/periphery
  bookkeeping;
* ``noise``                 — per-particle Lévy specs ``L``, per-column
  specs ``M``, per-column drift densities ``b``, optional ``L_cov`` /
  ``x0_cov`` entry lists, and ``x0_mean`` / ``x0_var`` vectors;
* ``sim``                   — horizon, step count, path count, seed.

Per-index lists may be written either as plain JSON arrays of the right
length or as ``{"default": spec, "overrides": {"3": spec}}``.  Numbers
are parsed as 64-bit floats; serialisation uses shortest round-trip
representations, so save/load is lossless.
"""

from __future__ import annotations

import json
from typing import Any

import numpy as np

from .network import (
    CoefficientSet,
    CorePeripheryLayout,
    MATRIX_ROLES,
    build_coefficients,
)
from .noise import DriftDensity, JumpPart, LevySpec, NoiseModel
from .simulate import SimConfig
from .sparse import SparseMatrix


class ConfigError(ValueError):
    """Malformed configuration document."""

    def __init__(self, message: str, where: str = ""):
        self.where = where
        super().__init__(f"{where}: {message}" if where else message)


def _expand(node: Any, count: int, where: str) -> list:
    """Expand a plain list or a default/overrides object to ``count`` items."""
    if isinstance(node, list):
        if len(node) != count:
            raise ConfigError(f"expected {count} items, found {len(node)}", where)
        return list(node)
    if isinstance(node, dict) and "default" in node:
        out = [node["default"]] * count
        for key, val in node.get("overrides", {}).items():
            idx = int(key)
            if not 0 <= idx < count:
                raise ConfigError(f"override index {idx} out of range", where)
            out[idx] = val
        return out
    raise ConfigError("expected a list or a {default, overrides} object", where)


def _parse_levy(node: Any, where: str) -> LevySpec:
    if not isinstance(node, dict):
        raise ConfigError("Lévy spec must be an object", where)
    jumps = None
    if node.get("jumps"):
        j = node["jumps"]
        try:
            jumps = JumpPart(rate=float(j["rate"]),
                             atoms=tuple((float(z), float(p)) for z, p in j["atoms"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad jump part ({exc})", where)
    try:
        return LevySpec(brownian_var=float(node.get("brownian_var", 0.0)), jumps=jumps)
    except ValueError as exc:
        raise ConfigError(str(exc), where)


def _parse_density(node: Any, where: str) -> DriftDensity:
    if not isinstance(node, dict):
        raise ConfigError("drift density must be an object", where)
    try:
        return DriftDensity(
            offset=float(node.get("offset", 0.0)),
            amplitude=float(node.get("amplitude", 0.0)),
            omega=float(node.get("omega", 0.0)),
            phase=float(node.get("phase", 0.0)),
            white_var=float(node.get("white_var", 0.0)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc), where)


def _parse_entries(node: Any, n_rows: int, n_cols: int, where: str) -> SparseMatrix:
    if not isinstance(node, list):
        raise ConfigError("expected an entry list [[row, col, value], ...]", where)
    try:
        return SparseMatrix.from_entries(
            n_rows, n_cols, ((int(r), int(c), float(v)) for r, c, v in node))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), where)


def parse_document(doc: dict) -> dict:
    """Parse a loaded JSON document into model objects.

    Returns a dict with ``coeffs``, ``noise``, optional ``layout`` and
    optional ``sim`` entries.
    """
    if not isinstance(doc, dict):
        raise ConfigError("top level must be an object")
    try:
        n = int(doc["n"])
        m = int(doc["m"])
    except (KeyError, TypeError, ValueError):
        raise ConfigError("document needs integer fields 'n' and 'm'")
    blocks = []
    for role, node in doc.get("coefficients", {}).items():
        if role not in MATRIX_ROLES:
            raise ConfigError(f"unknown matrix role {role!r}", "coefficients")
        shape = (n, n) if role in ("aC", "aP", "sC", "sP") else (n, m)
        blocks.append((role, _parse_entries(node, *shape, where=f"coefficients.{role}")))
    try:
        coeffs = build_coefficients(n, m, blocks)
    except ValueError as exc:
        raise ConfigError(str(exc), "coefficients")

    layout = None
    if "layout" in doc:
        node = doc["layout"]
        try:
            layout = CorePeripheryLayout(
                n0=int(node["n0"]), n_periphery=n - int(node["n0"]), n00=int(node["n00"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad layout ({exc})", "layout")

    nz = doc.get("noise", {})
    L_specs = tuple(_parse_levy(x, f"noise.L[{i}]")
                    for i, x in enumerate(_expand(nz.get("L", {"default": {}}), n, "noise.L")))
    M_specs = tuple(_parse_levy(x, f"noise.M[{i}]")
                    for i, x in enumerate(_expand(nz.get("M", {"default": {}}), m, "noise.M")))
    b_specs = tuple(_parse_density(x, f"noise.b[{i}]")
                    for i, x in enumerate(_expand(nz.get("b", {"default": {}}), m, "noise.b")))
    L_cov = _parse_entries(nz["L_cov"], n, n, "noise.L_cov") if "L_cov" in nz else None
    x0_mean = np.array([float(v) for v in _expand(
        nz.get("x0_mean", {"default": 0.0}), n, "noise.x0_mean")])
    if "x0_cov" in nz:
        x0_cov = _parse_entries(nz["x0_cov"], n, n, "noise.x0_cov")
    else:
        var = [float(v) for v in _expand(nz.get("x0_var", {"default": 0.0}), n, "noise.x0_var")]
        x0_cov = SparseMatrix.diagonal(var)
    try:
        noise = NoiseModel(L_specs=L_specs, M_specs=M_specs, b_specs=b_specs,
                           L_cov=L_cov, x0_mean=x0_mean, x0_cov=x0_cov)
    except ValueError as exc:
        raise ConfigError(str(exc), "noise")

    sim = None
    if "sim" in doc:
        node = doc["sim"]
        try:
            sim = SimConfig(
                T=float(node.get("T", 1.0)),
                steps=int(node.get("steps", 100)),
                n_paths=int(node.get("n_paths", 1000)),
                seed=int(node.get("seed", 0)),
                record_stride=int(node.get("record_stride", 1)),
                threads=int(node.get("threads", 1)),
            )
        except ValueError as exc:
            raise ConfigError(str(exc), "sim")
    return {"coeffs": coeffs, "noise": noise, "layout": layout, "sim": sim}


def load_config(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}",
                              path)
    try:
        return parse_document(doc)
    except ConfigError as exc:
        raise ConfigError(str(exc), path)


# ------------------------------------------------------------- serialising


def _levy_node(spec: LevySpec) -> dict:
    node: dict = {"brownian_var": spec.brownian_var}
    if spec.jumps is not None and spec.jumps.rate > 0:
        node["jumps"] = {"rate": spec.jumps.rate,
                         "atoms": [[z, p] for z, p in spec.jumps.atoms]}
    return node


def _density_node(b: DriftDensity) -> dict:
    return {"offset": b.offset, "amplitude": b.amplitude, "omega": b.omega,
            "phase": b.phase, "white_var": b.white_var}


def document_from(coeffs: CoefficientSet, noise: NoiseModel,
                  layout: CorePeripheryLayout | None = None,
                  sim: SimConfig | None = None) -> dict:
    doc: dict = {"n": coeffs.n, "m": coeffs.m, "coefficients": {}}
    for role in MATRIX_ROLES:
        mat = coeffs.role(role)
        if not mat.is_zero():
            doc["coefficients"][role] = [[r, c, v] for r, c, v in mat.entries]
    if layout is not None:
        doc["layout"] = {"n0": layout.n0, "n00": layout.n00}
    doc["noise"] = {
        "L": [_levy_node(s) for s in noise.L_specs],
        "M": [_levy_node(s) for s in noise.M_specs],
        "b": [_density_node(b) for b in noise.b_specs],
        "L_cov": [[r, c, v] for r, c, v in noise.L_cov.entries],
        "x0_mean": [float(v) for v in noise.x0_mean],
        "x0_cov": [[r, c, v] for r, c, v in noise.x0_cov.entries],
    }
    if sim is not None:
        doc["sim"] = {"T": sim.T, "steps": sim.steps, "n_paths": sim.n_paths,
                      "seed": sim.seed, "record_stride": sim.record_stride,
                      "threads": sim.threads}
    return doc


def save_config(path: str, coeffs: CoefficientSet, noise: NoiseModel,
                layout: CorePeripheryLayout | None = None,
                sim: SimConfig | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(document_from(coeffs, noise, layout, sim), fh, indent=2)
        fh.write("\n")
