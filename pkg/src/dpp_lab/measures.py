"""Families of symmetric probability measures supported in the Λ-ball.

Each family maps a point x to a symmetric measure on increments z with
|z| ≤ Λ. Expectations use deterministic centrally-symmetric quadrature
(exact finite sums for atomic kinds), samplers take an explicit random
stream so concurrent paths can use disjoint streams. Borel measurability
of x ↦ ν_x is assumed for tabulated direction fields, not checked.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np

from .fields import FieldSpec, VectorField, eval_expr, _compiled

__all__ = [
    "MeasureFamily",
    "DirectionSet",
    "PushMap",
    "expect",
    "sample",
    "sample_n",
    "increment_quadrature",
    "pucci_extreme",
    "check_symmetry",
    "PucciValue",
    "SymmetryReport",
]

KINDS = (
    "uniform-ball",
    "dirac-pair",
    "ellipsoid-shell",
    "pushforward",
    "pucci-control",
    "finite-mixture",
)


@dataclass(frozen=True)
class PushMap:
    """Measurable map z = h(x, y) into the closed Λ-ball, y drawn uniformly in B_1.

    Expressions see the base point as ``x0, x1, ...`` and the draw as
    ``y0, y1, ...``; the image is radially clipped to |z| ≤ Λ when ``clip``.
    """

    exprs: tuple
    clip: bool = True

    def __call__(self, x: np.ndarray, ys: np.ndarray, lam: float) -> np.ndarray:
        ys = np.atleast_2d(np.asarray(ys, dtype=float))
        ns = {"pi": np.pi, "abs": np.abs, "sin": np.sin, "cos": np.cos, "exp": np.exp,
              "sqrt": np.sqrt, "sign": np.sign, "atan2": np.arctan2, "where": np.where}
        for d in range(ys.shape[-1]):
            ns[f"y{d}"] = ys[..., d]
            ns[f"x{d}"] = float(np.atleast_1d(x)[d]) if x is not None else 0.0
        comps = [eval(_compiled(e), {"__builtins__": {}}, dict(ns)) for e in self.exprs]
        z = np.stack([np.broadcast_to(np.asarray(c, dtype=float), ys.shape[:-1]) for c in comps], axis=-1)
        if self.clip:
            norms = np.sqrt(np.einsum("...i,...i->...", z, z))
            scale = np.where(norms > lam, lam / np.maximum(norms, 1e-300), 1.0)
            z = z * scale[..., None]
        return z

    @property
    def position_independent(self) -> bool:
        names = set()
        for e in self.exprs:
            names |= set(_compiled(e).co_names)
        return not any(n.startswith("x") and n[1:].isdigit() for n in names)


@dataclass(frozen=True)
class MeasureFamily:
    kind: str
    lam: float = 1.0
    dim: int = 1
    # uniform-ball
    radius: float = 1.0
    # dirac-pair
    direction: Optional[VectorField] = None
    # ellipsoid-shell: constant axis lengths, optional rotation-angle field (2D)
    axes: tuple = ()
    rotation: Optional[FieldSpec] = None
    # pushforward
    push: Optional[PushMap] = None
    # finite-mixture
    atoms: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None
    # pucci-control marker
    dirs: Optional["DirectionSet"] = None
    # quadrature resolution (documented node counts)
    q_angles: int = 16
    q_radial: int = 4
    q_push: int = 41

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown measure kind {self.kind!r}")
        if self.lam < 1.0:
            raise ValueError("Λ must be at least 1")
        if self.kind == "uniform-ball" and not (0.0 < self.radius <= self.lam):
            raise ValueError("uniform-ball radius must lie in (0, Λ]")
        if self.kind == "ellipsoid-shell":
            ax = np.asarray(self.axes, dtype=float)
            if ax.size != self.dim:
                raise ValueError("one axis length per dimension")
            if np.any(ax < 1.0) or np.any(ax > self.lam):
                raise ValueError("ellipsoid axes must satisfy B_1 ⊆ E ⊆ B_Λ")
            if float(np.max(ax)) <= 1.0:
                raise ValueError("degenerate ellipsoid shell (E = B_1)")
        if self.kind == "finite-mixture":
            atoms = np.atleast_2d(np.asarray(self.atoms, dtype=float))
            w = np.asarray(self.weights, dtype=float)
            object.__setattr__(self, "atoms", atoms)
            object.__setattr__(self, "weights", w)
            if atoms.shape[0] != w.size:
                raise ValueError("one weight per atom")
            if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
                raise ValueError("weights must be positive and sum to 1")
            if np.any(np.linalg.norm(atoms, axis=1) > self.lam + 1e-12):
                raise ValueError("atom outside the closed Λ-ball")
            if not _negation_closed(atoms, w):
                raise ValueError("atom set must be closed under negation with equal weights")

    # -- constructors -------------------------------------------------

    @staticmethod
    def uniform_ball(radius: float = 1.0, lam: float = 1.0, dim: int = 1) -> "MeasureFamily":
        return MeasureFamily("uniform-ball", lam=lam, dim=dim, radius=radius)

    @staticmethod
    def dirac_pair(direction, lam: float = 1.0, dim: Optional[int] = None) -> "MeasureFamily":
        if not isinstance(direction, VectorField):
            direction = VectorField.constant(direction)
        if dim is None:
            dim = len(direction.vector) if direction.kind == "constant" else 1
        return MeasureFamily("dirac-pair", lam=lam, dim=dim, direction=direction)

    @staticmethod
    def ellipsoid_shell(axes, rotation=None, lam: float = 1.0, q_angles: int = 16, q_radial: int = 4) -> "MeasureFamily":
        axes = tuple(float(a) for a in np.atleast_1d(axes))
        if rotation is not None and not isinstance(rotation, FieldSpec):
            rotation = FieldSpec.constant(float(rotation))
        return MeasureFamily(
            "ellipsoid-shell", lam=lam, dim=len(axes), axes=axes, rotation=rotation,
            q_angles=q_angles, q_radial=q_radial,
        )

    @staticmethod
    def pushforward(exprs, lam: float = 1.0, dim: int = 1, clip: bool = True, q_push: int = 41) -> "MeasureFamily":
        if isinstance(exprs, str):
            exprs = (exprs,)
        return MeasureFamily("pushforward", lam=lam, dim=dim, push=PushMap(tuple(exprs), clip), q_push=q_push)

    @staticmethod
    def mixture(atoms, weights, lam: float = 1.0) -> "MeasureFamily":
        atoms = np.atleast_2d(np.asarray(atoms, dtype=float))
        return MeasureFamily("finite-mixture", lam=lam, dim=atoms.shape[1], atoms=atoms,
                             weights=np.asarray(weights, dtype=float))

    @staticmethod
    def pucci_control(dirs: "DirectionSet") -> "MeasureFamily":
        return MeasureFamily("pucci-control", lam=dirs.lam, dim=dirs.dim, dirs=dirs)

    # -- structure ----------------------------------------------------

    @property
    def position_independent(self) -> bool:
        if self.kind in ("uniform-ball", "finite-mixture"):
            return True
        if self.kind == "dirac-pair":
            return self.direction.position_independent
        if self.kind == "ellipsoid-shell":
            return self.rotation is None or self.rotation.kind == "constant"
        if self.kind == "pushforward":
            return self.push.position_independent
        return False

    def ellipsoid_matrix(self, x) -> np.ndarray:
        """Linear map A with E_x = A(B_1); columns are the scaled principal axes."""
        ax = np.asarray(self.axes, dtype=float)
        if self.dim == 1:
            return ax.reshape(1, 1)
        theta = 0.0 if self.rotation is None else float(self.rotation(np.atleast_1d(np.asarray(x, dtype=float))))
        c, s = math.cos(theta), math.sin(theta)
        rot = np.array([[c, -s], [s, c]])
        return rot @ np.diag(ax)

    def to_json(self) -> dict:
        d = {"kind": self.kind, "lam": self.lam, "dim": self.dim}
        if self.kind == "uniform-ball":
            d["radius"] = self.radius
        elif self.kind == "dirac-pair":
            d["direction"] = self.direction.to_json()
        elif self.kind == "ellipsoid-shell":
            d["axes"] = list(self.axes)
            if self.rotation is not None:
                d["rotation"] = self.rotation.to_json()
            d["q_angles"], d["q_radial"] = self.q_angles, self.q_radial
        elif self.kind == "pushforward":
            d["exprs"] = list(self.push.exprs)
            d["clip"] = self.push.clip
        elif self.kind == "finite-mixture":
            d["atoms"] = self.atoms.tolist()
            d["weights"] = self.weights.tolist()
        elif self.kind == "pucci-control":
            d["m"] = self.dirs.m
        return d

    @staticmethod
    def from_json(d: dict) -> "MeasureFamily":
        kind = d["kind"]
        lam, dim = float(d.get("lam", 1.0)), int(d.get("dim", 1))
        if kind == "uniform-ball":
            return MeasureFamily.uniform_ball(float(d.get("radius", 1.0)), lam, dim)
        if kind == "dirac-pair":
            return MeasureFamily.dirac_pair(VectorField.from_json(d["direction"]), lam, dim)
        if kind == "ellipsoid-shell":
            rot = FieldSpec.from_json(d["rotation"]) if "rotation" in d else None
            return MeasureFamily.ellipsoid_shell(
                d["axes"], rot, lam, int(d.get("q_angles", 16)), int(d.get("q_radial", 4))
            )
        if kind == "pushforward":
            return MeasureFamily.pushforward(d["exprs"], lam, dim, bool(d.get("clip", True)))
        if kind == "finite-mixture":
            return MeasureFamily.mixture(d["atoms"], d["weights"], lam)
        if kind == "pucci-control":
            return MeasureFamily.pucci_control(DirectionSet.lattice(lam, dim, int(d.get("m", 8))))
        raise ValueError(f"unknown measure kind {kind!r}")


def _negation_closed(atoms: np.ndarray, weights: np.ndarray, tol: float = 1e-12) -> bool:
    for a, w in zip(atoms, weights):
        if np.linalg.norm(a) <= tol:
            continue
        match = np.all(np.abs(atoms + a) <= tol, axis=1)
        if not np.any(match):
            return False
        if abs(weights[np.argmax(match)] - w) > tol:
            return False
    return True


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------


def _gauss_legendre(n: int, a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
    t, w = np.polynomial.legendre.leggauss(n)
    return (a + b) / 2.0 + t * (b - a) / 2.0, w * (b - a) / 2.0


def _symmetric_angles(m: int) -> np.ndarray:
    if m % 2:
        m += 1
    return (np.arange(m) + 0.5) * (2.0 * np.pi / m)


def ball_quadrature(dim: int, radius: float, q_angles: int, q_radial: int) -> tuple[np.ndarray, np.ndarray]:
    """Centrally symmetric quadrature of the uniform measure on B_radius."""
    if dim == 1:
        t, w = _gauss_legendre(q_radial * 2, 0.0, radius)
        pts = np.concatenate([t, -t]).reshape(-1, 1)
        wts = np.concatenate([w, w])
    elif dim == 2:
        ang = _symmetric_angles(q_angles)
        t, w = _gauss_legendre(q_radial, 0.0, radius)
        pts = np.stack(
            [np.outer(np.cos(ang), t).ravel(), np.outer(np.sin(ang), t).ravel()], axis=-1
        )
        wts = np.tile(w * t, ang.size)
    else:
        rng = np.random.Generator(np.random.Philox(key=0x5EED_BA11))
        pts = _uniform_ball_points(rng, 4096, dim) * radius
        wts = np.ones(pts.shape[0])
    return pts, wts / wts.sum()


def shell_quadrature(fam: MeasureFamily, x) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature of the uniform measure on E_x \\ B_1."""
    A = fam.ellipsoid_matrix(x)
    return _shell_quadrature_for(A, fam.dim, fam.q_angles, fam.q_radial)


def _shell_quadrature_for(A: np.ndarray, dim: int, q_angles: int, q_radial: int):
    if dim == 1:
        a = float(A[0, 0])
        t, w = _gauss_legendre(max(q_radial, 2), 1.0, a)
        pts = np.concatenate([t, -t]).reshape(-1, 1)
        wts = np.concatenate([w, w])
        return pts, wts / wts.sum()
    if dim != 2:
        raise ValueError("ellipsoid-shell quadrature implemented for N ≤ 2")
    ang = _symmetric_angles(q_angles)
    dirs = np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    Ainv = np.linalg.inv(A)
    r_out = 1.0 / np.sqrt(np.einsum("ij,ij->i", dirs @ Ainv.T, dirs @ Ainv.T))
    keep = r_out > 1.0 + 1e-14
    if not np.any(keep):
        raise ValueError("degenerate ellipsoid shell (no volume outside B_1)")
    dirs, r_out = dirs[keep], r_out[keep]
    t01, w01 = np.polynomial.legendre.leggauss(q_radial)
    mid = (r_out[:, None] + 1.0) / 2.0
    halfspan = (r_out[:, None] - 1.0) / 2.0
    radii = mid + t01[None, :] * halfspan  # (angles, q_radial)
    wts = (w01[None, :] * halfspan) * radii
    pts = dirs[:, None, :] * radii[..., None]
    pts = pts.reshape(-1, 2)
    wts = wts.reshape(-1)
    return pts, wts / wts.sum()


def increment_quadrature(fam: MeasureFamily, x) -> tuple[np.ndarray, np.ndarray]:
    """Nodes z_k and weights of a symmetric quadrature of ν_x (in z-space)."""
    if fam.kind == "dirac-pair":
        d = fam.direction(np.atleast_1d(np.asarray(x, dtype=float)))
        d = np.asarray(d, dtype=float).reshape(-1)
        return np.stack([d, -d]), np.array([0.5, 0.5])
    if fam.kind == "finite-mixture":
        return fam.atoms, fam.weights
    if fam.kind == "uniform-ball":
        return ball_quadrature(fam.dim, fam.radius, fam.q_angles, fam.q_radial)
    if fam.kind == "ellipsoid-shell":
        return shell_quadrature(fam, x)
    if fam.kind == "pushforward":
        ys = _midpoint_ball(fam.dim, fam.q_push)
        z = fam.push(np.atleast_1d(np.asarray(x, dtype=float)) if x is not None else None, ys, fam.lam)
        return z, np.full(z.shape[0], 1.0 / z.shape[0])
    raise ValueError("pucci-control has no expectation; use pucci_extreme")


def _midpoint_ball(dim: int, q: int) -> np.ndarray:
    """Symmetric midpoint-rule nodes of the uniform measure on B_1."""
    if dim <= 2:
        axes = [(-1.0 + (np.arange(q) + 0.5) * 2.0 / q) for _ in range(dim)]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim)
        return mesh[np.einsum("ij,ij->i", mesh, mesh) < 1.0]
    rng = np.random.Generator(np.random.Philox(key=0x5EED_B0DE))
    return _uniform_ball_points(rng, 4096, dim)


def expect(fam: MeasureFamily, x, eps: float, phi: Callable) -> float:
    """∫ φ(x + εz) dν_x(z) by the family's symmetric quadrature."""
    z, w = increment_quadrature(fam, x)
    pts = np.atleast_1d(np.asarray(x, dtype=float)) + eps * z
    return float(np.dot(w, np.asarray(phi(pts), dtype=float)))


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def _uniform_ball_points(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    if dim == 1:
        return (2.0 * rng.random((n, 1)) - 1.0)
    g = rng.standard_normal((n, dim))
    norms = np.sqrt(np.einsum("ij,ij->i", g, g))
    norms[norms == 0.0] = 1.0
    radii = rng.random(n) ** (1.0 / dim)
    return g * (radii / norms)[:, None]


REJECTION_CAP = 10**6


def sample_n(fam: MeasureFamily, x, rng: np.random.Generator, n: int) -> np.ndarray:
    """Draw n independent increments from ν_x (vectorized, fixed draw order)."""
    if fam.kind == "dirac-pair":
        dirf = fam.direction
        if dirf.kind == "constant":
            d = np.asarray(dirf.vector, dtype=float)
        else:
            d = np.asarray(dirf(np.atleast_1d(np.asarray(x, dtype=float))), dtype=float).reshape(-1)
        signs = np.where(rng.random(n) < 0.5, 1.0, -1.0)
        return signs[:, None] * d
    if fam.kind == "finite-mixture":
        cum = np.cumsum(fam.weights)
        idx = np.searchsorted(cum, rng.random(n), side="right")
        return fam.atoms[np.minimum(idx, len(cum) - 1)]
    if fam.kind == "uniform-ball":
        return _uniform_ball_points(rng, n, fam.dim) * fam.radius
    if fam.kind == "ellipsoid-shell":
        A = fam.ellipsoid_matrix(x)
        out = np.empty((n, fam.dim))
        got, drawn = 0, 0
        while got < n:
            chunk = max(2 * (n - got), 64)
            drawn += chunk
            if drawn > REJECTION_CAP:
                raise RuntimeError("ellipsoid-shell rejection cap exceeded (degenerate shell)")
            v = _uniform_ball_points(rng, chunk, fam.dim) @ A.T
            keep = v[np.einsum("ij,ij->i", v, v) > 1.0]
            take = min(keep.shape[0], n - got)
            out[got : got + take] = keep[:take]
            got += take
        return out
    if fam.kind == "pushforward":
        ys = _uniform_ball_points(rng, n, fam.dim)
        return fam.push(np.atleast_1d(np.asarray(x, dtype=float)) if x is not None else None, ys, fam.lam)
    raise ValueError("pucci-control cannot be sampled; the controller chooses")


def sample(fam: MeasureFamily, x, rng: np.random.Generator) -> np.ndarray:
    """One increment z with |z| ≤ Λ distributed as ν_x."""
    return sample_n(fam, x, rng, 1)[0]


# ---------------------------------------------------------------------------
# Pucci direction sets and extremal second differences
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DirectionSet:
    """Finite negation-closed set of directions in the closed Λ-ball."""

    vectors: np.ndarray
    lam: float
    m: int = 0

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.vectors, dtype=float))
        object.__setattr__(self, "vectors", v)
        if v.shape[0] == 0:
            raise ValueError("empty direction set")
        if np.any(np.linalg.norm(v, axis=1) > self.lam + 1e-12):
            raise ValueError("direction outside the closed Λ-ball")
        if not _negation_closed(v, np.ones(v.shape[0])):
            raise ValueError("direction set must be closed under negation")
        v.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @staticmethod
    def lattice(lam: float, dim: int, m: int = 8) -> "DirectionSet":
        """All points of (Λ/m)·Z^N in the closed Λ-ball, lexicographic order."""
        rng = range(-m, m + 1)
        pts = np.stack(np.meshgrid(*[list(rng)] * dim, indexing="ij"), axis=-1).reshape(-1, dim)
        pts = pts[np.einsum("ij,ij->i", pts, pts) <= m * m]
        return DirectionSet(pts * (lam / m), lam, m)


class PucciValue(NamedTuple):
    value: float
    direction: np.ndarray
    index: int


def pucci_extreme(dirs: DirectionSet, x, eps: float, u: Callable, sign: str) -> PucciValue:
    """Extremal centered second difference (sup or inf of δu(x,εz)/2 over z).

    Ties resolve to the lowest direction index.
    """
    if sign not in ("max", "min"):
        raise ValueError("sign must be 'max' or 'min'")
    xx = np.atleast_1d(np.asarray(x, dtype=float))
    z = dirs.vectors
    up = np.asarray(u(xx + eps * z), dtype=float)
    dn = np.asarray(u(xx - eps * z), dtype=float)
    mid = float(np.asarray(u(xx.reshape(1, -1)), dtype=float)[0])
    vals = (up + dn) / 2.0 - mid
    k = int(np.argmax(vals) if sign == "max" else np.argmin(vals))
    return PucciValue(float(vals[k]), z[k], k)


# ---------------------------------------------------------------------------
# symmetry check
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SymmetryReport:
    kind: str
    structural: bool
    passed: bool
    max_deviation: float
    threshold: float
    n: int


def check_symmetry(fam: MeasureFamily, x, n: int = 10**4, seed: int = 0) -> SymmetryReport:
    """Structural PASS for symmetric-by-construction kinds; two-sample ECDF
    comparison of {z} against {-z} for pushforward families."""
    if n < 10**3:
        raise ValueError("need at least 10^3 samples")
    if fam.kind != "pushforward":
        return SymmetryReport(fam.kind, True, True, 0.0, 0.0, 0)
    rng = np.random.Generator(np.random.Philox(key=seed))
    z = sample_n(fam, x, rng, n)
    dev = 0.0
    for d in range(z.shape[1]):
        a = np.sort(z[:, d])
        b = np.sort(-z[:, d])
        grid = np.concatenate([a, b])
        fa = np.searchsorted(a, grid, side="right") / n
        fb = np.searchsorted(b, grid, side="right") / n
        dev = max(dev, float(np.max(np.abs(fa - fb))))
    thr = 4.0 / math.sqrt(n)
    return SymmetryReport(fam.kind, False, dev < thr, dev, thr, n)
