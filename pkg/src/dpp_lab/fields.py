"""Scalar and vector field specifications for scenario data (f, g, direction fields).

Fields are declared in configs as constants, numpy expressions, box
indicators, or tables on grid nodes; they evaluate vectorized on point
arrays of shape (..., N). Expressions see the coordinates as ``x0..x{N-1}``
(aliases ``x, y`` for the first two), ``r = |x|``, ``theta = atan2(x1, x0)``
and a numpy subset.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

__all__ = ["FieldSpec", "VectorField"]

_EXPR_NS = {
    "abs": np.abs,
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "hypot": np.hypot,
    "atan2": np.arctan2,
    "arctan2": np.arctan2,
    "sign": np.sign,
    "maximum": np.maximum,
    "minimum": np.minimum,
    "where": np.where,
    "clip": np.clip,
    "pi": np.pi,
}

_COMPILED: dict[str, object] = {}


def _compiled(expr: str):
    code = _COMPILED.get(expr)
    if code is None:
        code = compile(expr, "<field>", "eval")
        _COMPILED[expr] = code
    return code


def eval_expr(expr: str, pts: np.ndarray) -> np.ndarray:
    p = np.asarray(pts, dtype=float)
    ns = dict(_EXPR_NS)
    dim = p.shape[-1]
    for d in range(dim):
        ns[f"x{d}"] = p[..., d]
    ns["x"] = p[..., 0]
    if dim > 1:
        ns["y"] = p[..., 1]
    ns["r"] = np.sqrt(np.einsum("...i,...i->...", p, p))
    if dim > 1:
        ns["theta"] = np.arctan2(p[..., 1], p[..., 0])
    out = eval(_compiled(expr), {"__builtins__": {}}, ns)
    return np.broadcast_to(np.asarray(out, dtype=float), p.shape[:-1]).copy()


@dataclass(frozen=True)
class FieldSpec:
    """Scalar field: constant, formula, box indicator, or node table."""

    kind: str  # "constant" | "formula" | "box-indicator" | "tabulated"
    value: float = 0.0
    expr: str = ""
    boxes: tuple = ()  # ((lo, hi), ...) pairs of coordinate tuples
    table: Optional[tuple] = None  # (idx_lo, h, values ndarray)

    @staticmethod
    def constant(c: float) -> "FieldSpec":
        return FieldSpec("constant", value=float(c))

    @staticmethod
    def formula(expr: str) -> "FieldSpec":
        return FieldSpec("formula", expr=expr)

    @staticmethod
    def box_indicator(boxes, value: float = 1.0) -> "FieldSpec":
        canon = tuple(
            (tuple(float(v) for v in np.atleast_1d(lo)), tuple(float(v) for v in np.atleast_1d(hi)))
            for lo, hi in boxes
        )
        return FieldSpec("box-indicator", value=float(value), boxes=canon)

    def __call__(self, pts) -> np.ndarray:
        p = np.asarray(pts, dtype=float)
        if self.kind == "constant":
            return np.full(p.shape[:-1], self.value, dtype=float)
        if self.kind == "formula":
            return eval_expr(self.expr, p)
        if self.kind == "box-indicator":
            inside = np.zeros(p.shape[:-1], dtype=bool)
            for lo, hi in self.boxes:
                lo_a, hi_a = np.asarray(lo), np.asarray(hi)
                inside |= np.all((p > lo_a) & (p < hi_a), axis=-1)
            return np.where(inside, self.value, 0.0)
        if self.kind == "tabulated":
            from .interp import multilinear

            idx_lo, h, values = self.table
            return multilinear(values, np.asarray(idx_lo), h, p)
        raise ValueError(f"unknown field kind {self.kind!r}")

    def sup_norm(self) -> Optional[float]:
        """Exact sup norm when structurally known, else None."""
        if self.kind in ("constant", "box-indicator"):
            return abs(self.value)
        if self.kind == "tabulated":
            return float(np.max(np.abs(self.table[2])))
        return None

    def lN_norm(self, dim: int) -> Optional[float]:
        """Exact L^N norm for indicator-type fields (None when unknown)."""
        if self.kind == "constant" and self.value == 0.0:
            return 0.0
        if self.kind == "box-indicator":
            vol = 0.0
            for lo, hi in self.boxes:
                vol += float(np.prod(np.asarray(hi) - np.asarray(lo)))
            return abs(self.value) * vol ** (1.0 / dim)
        return None

    def to_json(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "constant":
            d["value"] = self.value
        elif self.kind == "formula":
            d["expr"] = self.expr
        elif self.kind == "box-indicator":
            d["value"] = self.value
            d["boxes"] = [[list(lo), list(hi)] for lo, hi in self.boxes]
        else:
            idx_lo, h, values = self.table
            d["idx_lo"] = list(map(int, idx_lo))
            d["h"] = h
            d["values"] = np.asarray(values).tolist()
        return d

    @staticmethod
    def from_json(d) -> "FieldSpec":
        if isinstance(d, (int, float)):
            return FieldSpec.constant(d)
        if isinstance(d, str):
            return FieldSpec.formula(d)
        kind = d["kind"]
        if kind == "constant":
            return FieldSpec.constant(d["value"])
        if kind == "formula":
            return FieldSpec.formula(d["expr"])
        if kind == "box-indicator":
            return FieldSpec.box_indicator([(b[0], b[1]) for b in d["boxes"]], d.get("value", 1.0))
        if kind == "tabulated":
            return FieldSpec(
                "tabulated",
                table=(np.asarray(d["idx_lo"], dtype=int), float(d["h"]), np.asarray(d["values"], dtype=float)),
            )
        raise ValueError(f"unknown field kind {kind!r}")


@dataclass(frozen=True)
class VectorField:
    """Vector-valued field for measure directions; bounded measurable, no
    continuity assumed (tables use nearest-node lookup)."""

    kind: str  # "constant" | "formula" | "tabulated"
    vector: tuple = ()
    exprs: tuple = ()
    table: Optional[tuple] = None  # (idx_lo, h, vectors ndarray shape (*grid, N))

    @staticmethod
    def constant(v) -> "VectorField":
        return VectorField("constant", vector=tuple(float(c) for c in np.atleast_1d(v)))

    @staticmethod
    def formula(exprs) -> "VectorField":
        if isinstance(exprs, str):
            exprs = (exprs,)
        return VectorField("formula", exprs=tuple(exprs))

    @property
    def position_independent(self) -> bool:
        return self.kind == "constant"

    def __call__(self, pts) -> np.ndarray:
        p = np.asarray(pts, dtype=float)
        if self.kind == "constant":
            v = np.asarray(self.vector, dtype=float)
            return np.broadcast_to(v, p.shape).copy()
        if self.kind == "formula":
            comps = [eval_expr(e, p) for e in self.exprs]
            return np.stack(comps, axis=-1)
        if self.kind == "tabulated":
            idx_lo, h, vectors = self.table
            idx = np.rint(p / h).astype(np.int64) - np.asarray(idx_lo)
            shape = vectors.shape[:-1]
            idx = np.clip(idx, 0, np.asarray(shape) - 1)
            return vectors[tuple(np.moveaxis(idx, -1, 0))]
        raise ValueError(f"unknown vector field kind {self.kind!r}")

    def to_json(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "constant":
            d["vector"] = list(self.vector)
        elif self.kind == "formula":
            d["exprs"] = list(self.exprs)
        else:
            idx_lo, h, vectors = self.table
            d["idx_lo"] = list(map(int, idx_lo))
            d["h"] = h
            d["vectors"] = np.asarray(vectors).tolist()
        return d

    @staticmethod
    def from_json(d) -> "VectorField":
        kind = d["kind"]
        if kind == "constant":
            return VectorField.constant(d["vector"])
        if kind == "formula":
            return VectorField.formula(d["exprs"])
        if kind == "tabulated":
            return VectorField(
                "tabulated",
                table=(np.asarray(d["idx_lo"], dtype=int), float(d["h"]), np.asarray(d["vectors"], dtype=float)),
            )
        raise ValueError(f"unknown vector field kind {kind!r}")
