"""Domains, collars, cubes, dyadic decomposition and lattice grids.

All geometry values are immutable after construction and safe to share
across workers. Domains are open sets (strict membership); points on a
cube face belong to no cube of a tiling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

__all__ = [
    "Domain",
    "Collar",
    "Cube",
    "Grid",
    "Region",
    "make_collar",
    "eps_cover",
    "dyadic_split",
    "dyadic_pre",
    "build_grid",
    "INTERIOR",
    "COLLAR",
    "EXTERIOR",
]

INTERIOR, COLLAR, EXTERIOR = 0, 1, 2


def _as_point(x) -> np.ndarray:
    p = np.asarray(x, dtype=float)
    if p.ndim == 0:
        p = p.reshape(1)
    return p


@dataclass(frozen=True)
class Domain:
    """Bounded open domain: an axis-aligned box or a ball.

    ``extent`` holds the per-axis half-widths for a box and the single
    radius for a ball.
    """

    kind: str  # "box" | "ball"
    center: np.ndarray
    extent: np.ndarray
    dim: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "center", _as_point(self.center))
        object.__setattr__(self, "extent", np.atleast_1d(np.asarray(self.extent, dtype=float)))
        object.__setattr__(self, "dim", self.center.size)
        if self.kind not in ("box", "ball"):
            raise ValueError(f"unknown domain kind {self.kind!r}")
        if self.kind == "box" and self.extent.size != self.dim:
            raise ValueError("box needs one half-width per axis")
        if self.kind == "ball" and self.extent.size != 1:
            raise ValueError("ball takes a single radius")
        if not np.all(np.isfinite(self.extent)) or np.any(self.extent <= 0):
            raise ValueError("extents must be finite and positive")
        self.center.setflags(write=False)
        self.extent.setflags(write=False)

    @staticmethod
    def box(lo, hi) -> "Domain":
        lo, hi = _as_point(lo), _as_point(hi)
        return Domain("box", (lo + hi) / 2.0, (hi - lo) / 2.0)

    @staticmethod
    def ball(center, radius: float) -> "Domain":
        return Domain("ball", _as_point(center), np.asarray([radius], dtype=float))

    def contains(self, pts) -> np.ndarray:
        """Strict (open-set) membership; vectorized over leading axes."""
        p = np.asarray(pts, dtype=float)
        d = p - self.center
        if self.kind == "box":
            return np.all(np.abs(d) < self.extent, axis=-1)
        return np.einsum("...i,...i->...", d, d) < self.extent[0] ** 2

    def distance(self, pts) -> np.ndarray:
        """Euclidean distance to the closure (0 inside)."""
        p = np.asarray(pts, dtype=float)
        d = np.abs(p - self.center)
        if self.kind == "box":
            out = np.maximum(d - self.extent, 0.0)
            return np.sqrt(np.einsum("...i,...i->...", out, out))
        return np.maximum(np.sqrt(np.einsum("...i,...i->...", d, d)) - self.extent[0], 0.0)

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        if self.kind == "box":
            return self.center - self.extent, self.center + self.extent
        r = self.extent[0]
        return self.center - r, self.center + r

    @property
    def diameter(self) -> float:
        if self.kind == "box":
            return float(2.0 * np.linalg.norm(self.extent))
        return float(2.0 * self.extent[0])

    @property
    def volume(self) -> float:
        if self.kind == "box":
            return float(np.prod(2.0 * self.extent))
        n, r = self.dim, self.extent[0]
        return float(np.pi ** (n / 2) / math.gamma(n / 2 + 1) * r**n)


@dataclass(frozen=True)
class Collar:
    """Margin neighborhood of a domain: {x : dist(x, base) < margin} ∪ base."""

    base: Domain
    margin: float

    def __post_init__(self):
        if self.margin <= 0:
            raise ValueError("collar margin must be positive")

    def contains(self, pts) -> np.ndarray:
        return self.base.contains(pts) | (self.base.distance(pts) < self.margin)

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.base.bounding_box()
        return lo - self.margin, hi + self.margin


def make_collar(domain: Domain, lambda_eps: float) -> Collar:
    """Extended region containing every ball of radius ``lambda_eps`` around the domain."""
    if lambda_eps <= 0:
        raise ValueError("non-positive collar margin")
    return Collar(domain, float(lambda_eps))


@dataclass(frozen=True)
class Region:
    """Finite union of domains with exact membership, used for hitting sets."""

    parts: tuple[Domain, ...]

    def contains(self, pts) -> np.ndarray:
        p = np.asarray(pts, dtype=float)
        out = np.zeros(p.shape[:-1], dtype=bool)
        for part in self.parts:
            out |= part.contains(p)
        return out

    def distance(self, pts) -> np.ndarray:
        return np.min([part.distance(pts) for part in self.parts], axis=0)

    def bounding_box(self):
        boxes = [p.bounding_box() for p in self.parts]
        return (
            np.min([b[0] for b in boxes], axis=0),
            np.max([b[1] for b in boxes], axis=0),
        )

    @property
    def diameter(self) -> float:
        lo, hi = self.bounding_box()
        return float(np.linalg.norm(hi - lo))


@dataclass(frozen=True)
class Cube:
    """Open axis-aligned cube; ℓ-scaling keeps the center fixed."""

    center: np.ndarray
    side: float
    generation: int = 0
    parent: Optional["Cube"] = None

    def __post_init__(self):
        object.__setattr__(self, "center", _as_point(self.center))
        if self.side <= 0:
            raise ValueError("cube side must be positive")
        self.center.setflags(write=False)

    def scaled(self, ell: float) -> "Cube":
        return Cube(self.center, ell * self.side, self.generation, self.parent)

    def contains(self, pts) -> np.ndarray:
        p = np.asarray(pts, dtype=float)
        return np.all(np.abs(p - self.center) < self.side / 2.0, axis=-1)

    def closure_contains(self, pts, atol: float = 0.0) -> np.ndarray:
        p = np.asarray(pts, dtype=float)
        return np.all(np.abs(p - self.center) <= self.side / 2.0 + atol, axis=-1)

    @property
    def volume(self) -> float:
        return float(self.side ** self.center.size)

    @property
    def dim(self) -> int:
        return self.center.size


def dyadic_split(q: Cube) -> list[Cube]:
    """The 2^N open dyadic children of ``q``; closures tile the closure of ``q``."""
    n = q.dim
    half = q.side / 2.0
    kids = []
    for signs in np.ndindex(*(2,) * n):
        offset = (np.asarray(signs, dtype=float) - 0.5) * half
        kids.append(Cube(q.center + offset, half, q.generation + 1, parent=q))
    return kids


def dyadic_pre(q: Cube) -> Cube:
    """The unique dyadic cube one generation up containing ``q``."""
    if q.generation < 1:
        raise ValueError("generation-0 cube has no predecessor")
    if q.parent is None:
        raise ValueError("cube carries no parent link")
    return q.parent


def eps_cover(region, eps: float) -> list[Cube]:
    """Axis-aligned cover of ``region`` by disjoint open cubes of diameter eps/4.

    Cubes have side eps/(4 sqrt(N)) and are centered on the fixed lattice
    (eps/(4 sqrt(N)))·Z^N; a cube is included iff its closure meets the
    region. ``region`` is a Domain, Region, or an array of points.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")

    if isinstance(region, (Domain, Collar, Region)):
        n = region.parts[0].dim if isinstance(region, Region) else (
            region.base.dim if isinstance(region, Collar) else region.dim
        )
        s = eps / (4.0 * np.sqrt(n))
        lo, hi = region.bounding_box()
        klo = np.floor(lo / s - 0.5).astype(int)
        khi = np.ceil(hi / s + 0.5).astype(int)
        out = []
        for idx in np.ndindex(*(khi - klo + 1)):
            k = np.asarray(idx) + klo
            c = Cube(k * s, s)
            # closure ∩ open region nonempty <=> nearest point of the closed
            # cube to the region interior lies strictly inside it
            if _closure_meets_open(c, region):
                out.append(c)
        return out

    pts = np.atleast_2d(np.asarray(region, dtype=float))
    if pts.size == 0:
        return []
    n = pts.shape[-1]
    s = eps / (4.0 * np.sqrt(n))
    keys = set()
    for p in pts:
        lo = np.ceil(p / s - 0.5 - 1e-12).astype(int)
        hi = np.floor(p / s + 0.5 + 1e-12).astype(int)
        for idx in np.ndindex(*(hi - lo + 1)):
            k = tuple(np.asarray(idx) + lo)
            cand = np.asarray(k) * s
            if np.all(np.abs(p - cand) <= s / 2.0 + 1e-12 * max(1.0, s)):
                keys.add(k)
    return [Cube(np.asarray(k) * s, s) for k in sorted(keys)]


def _closure_meets_open(cube: Cube, region) -> bool:
    """Does the closed cube intersect the open region?"""
    half = cube.side / 2.0
    if isinstance(region, Region):
        return any(_closure_meets_open(cube, p) for p in region.parts)
    base = region.base if isinstance(region, Collar) else region
    margin = region.margin if isinstance(region, Collar) else 0.0
    if base.kind == "box":
        if margin > 0.0:
            gap = np.maximum(np.abs(cube.center - base.center) - (half + base.extent), 0.0)
            return float(np.linalg.norm(gap)) < margin
        lo, hi = base.center - base.extent, base.center + base.extent
        return bool(np.all((cube.center - half) < hi) and np.all((cube.center + half) > lo))
    nearest = np.clip(base.center, cube.center - half, cube.center + half)
    dist = float(np.linalg.norm(nearest - base.center))
    return dist < base.extent[0] + margin


@dataclass(frozen=True)
class Grid:
    """Regular lattice h·Z^N restricted to a padded bounding box of the collar.

    Nodes are classified interior (in Ω), collar (within Λε+h of Ω, which
    covers every multilinear stencil of an evaluation x±εz with |z| ≤ Λ at
    interior x) or exterior. Node coordinates are ``(k + idx_lo)·h``.
    """

    domain: Domain
    collar: Collar
    h: float
    idx_lo: np.ndarray
    shape: tuple[int, ...]
    classification: np.ndarray  # int8 array, codes INTERIOR/COLLAR/EXTERIOR

    def __post_init__(self):
        self.idx_lo.setflags(write=False)
        self.classification.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.domain.dim

    def axes(self) -> list[np.ndarray]:
        return [
            (self.idx_lo[d] + np.arange(self.shape[d])) * self.h
            for d in range(self.dim)
        ]

    def nodes(self) -> np.ndarray:
        """All node coordinates, shape ``(*grid.shape, dim)``."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack(mesh, axis=-1)

    @property
    def interior_mask(self) -> np.ndarray:
        return self.classification == INTERIOR

    @property
    def collar_mask(self) -> np.ndarray:
        return self.classification == COLLAR

    def interior_points(self) -> np.ndarray:
        return self.nodes()[self.interior_mask]

    def n_interior(self) -> int:
        return int(np.count_nonzero(self.interior_mask))

    @property
    def origin(self) -> np.ndarray:
        return self.idx_lo * self.h

    def hull_lo(self) -> np.ndarray:
        return self.origin

    def hull_hi(self) -> np.ndarray:
        return (self.idx_lo + np.asarray(self.shape) - 1) * self.h


def build_grid(domain: Domain, h: float, lambda_eps: float) -> Grid:
    """Lattice grid over the domain plus a Λε collar (padded by one cell)."""
    if h <= 0:
        raise ValueError("h must be positive")
    collar = make_collar(domain, lambda_eps)
    lo, hi = collar.bounding_box()
    # one extra cell so every interpolation stencil at radius Λε has corners
    idx_lo = np.floor(lo / h).astype(int) - 1
    idx_hi = np.ceil(hi / h).astype(int) + 1
    shape = tuple((idx_hi - idx_lo + 1).tolist())
    mesh = np.meshgrid(*[(idx_lo[d] + np.arange(shape[d])) * h for d in range(domain.dim)], indexing="ij")
    pts = np.stack(mesh, axis=-1)
    cls = np.full(shape, EXTERIOR, dtype=np.int8)
    dist = domain.distance(pts)
    cls[dist < lambda_eps + h] = COLLAR
    cls[domain.contains(pts)] = INTERIOR
    if not np.any(cls == INTERIOR):
        raise ValueError("no interior node; spacing h is too coarse for the domain")
    return Grid(domain, collar, float(h), idx_lo, shape, cls)
