"""Discrete concave envelopes, contact sets and the eps-ABP bounds.

The envelope of u+ = max(u, sup exterior u) over the collar hull is the
exact upper convex hull of the node cloud (monotone chain in 1D, qhull on
lifted points in 2D), so domination, line concavity and idempotence hold
at machine precision and every node carries a supporting slope. The
pointwise bound for subsolutions is then checked against the cube-sum
right-hand side over a diameter-eps/4 cover of the contact set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dpp_core import GridFunction, Params, ball_rule, residual
from .geometry import Cube, EXTERIOR, INTERIOR, eps_cover
from .measures import MeasureFamily

__all__ = [
    "Envelope",
    "ContactSet",
    "AbpReport",
    "AbpMeasurableReport",
    "concave_envelope",
    "contact_set",
    "superdiff_bound",
    "verify_abp",
    "mollify_f",
    "verify_abp_measurable",
    "unit_ball_volume",
]


def unit_ball_volume(dim: int) -> float:
    return math.pi ** (dim / 2.0) / math.gamma(dim / 2.0 + 1.0)


@dataclass
class Envelope:
    base: GridFunction  # u+ on the grid
    gamma: GridFunction  # concave envelope, pinned to sup-exterior off the hull
    slopes: np.ndarray  # supporting slope per node, shape (*grid.shape, dim)
    hull_mask: np.ndarray
    sup_exterior: float

    def slope_at(self, x) -> np.ndarray:
        g = self.base.grid
        idx = tuple(int(round(c / g.h)) - int(lo) for c, lo in zip(np.atleast_1d(x), g.idx_lo))
        return self.slopes[idx]


def _upper_hull_1d(xs: np.ndarray, vals: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact concave majorant on sorted 1D nodes; returns (gamma, slopes)."""
    n = xs.size
    stack: list[int] = []
    for i in range(n):
        while len(stack) >= 2:
            a, b = stack[-2], stack[-1]
            # keep b only if it lies strictly above chord a..i
            lhs = (vals[b] - vals[a]) * (xs[i] - xs[a])
            rhs = (vals[i] - vals[a]) * (xs[b] - xs[a])
            if lhs > rhs:
                break
            stack.pop()
        stack.append(i)
    gamma = np.empty(n)
    slopes = np.empty(n)
    for k in range(len(stack) - 1):
        a, b = stack[k], stack[k + 1]
        sl = (vals[b] - vals[a]) / (xs[b] - xs[a])
        seg = slice(a, b + 1)
        gamma[seg] = vals[a] + sl * (xs[seg] - xs[a])
        slopes[seg] = sl
    if len(stack) == 1:
        gamma[:] = vals[stack[0]]
        slopes[:] = 0.0
    return gamma, slopes


def _upper_hull_2d(pts: np.ndarray, vals: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    from scipy.spatial import ConvexHull, QhullError

    lifted = np.column_stack([pts, vals])
    try:
        hull = ConvexHull(lifted)
    except QhullError:
        # affine data: the envelope is the function itself
        A = np.column_stack([pts, np.ones(len(pts))])
        coef, *_ = np.linalg.lstsq(A, vals, rcond=None)
        return vals.copy(), np.tile(coef[:2], (len(pts), 1))
    eqs = hull.equations  # n . p + d = 0, n outward
    upper = eqs[eqs[:, 2] > 1e-12]
    # facet plane: z = a.x + b with a = -n_xy/n_z, b = -d/n_z
    a = -upper[:, :2] / upper[:, 2:3]
    b = -upper[:, 3] / upper[:, 2]
    planes = pts @ a.T + b[None, :]
    kbest = np.argmin(planes, axis=1)
    gamma = planes[np.arange(len(pts)), kbest]
    slopes = a[kbest]
    return gamma, slopes


def concave_envelope(u: GridFunction) -> Envelope:
    """Least concave majorant of u+ over the collar-hull nodes."""
    grid = u.grid
    if grid.dim > 2:
        raise ValueError("envelope engine covers N ≤ 2")
    ext_mask = grid.classification != INTERIOR
    sup_ext = float(np.max(u.values[ext_mask]))
    uplus = np.maximum(u.values, sup_ext)
    hull_mask = grid.classification != EXTERIOR
    nodes = grid.nodes()
    slopes = np.zeros(grid.shape + (grid.dim,))
    gamma_vals = np.full(grid.shape, sup_ext)
    pts = nodes[hull_mask]
    vals = uplus[hull_mask]
    if grid.dim == 1:
        order = np.argsort(pts[:, 0], kind="stable")
        g_sorted, s_sorted = _upper_hull_1d(pts[order, 0], vals[order])
        g = np.empty_like(g_sorted)
        s = np.empty_like(s_sorted)
        g[order] = g_sorted
        s[order] = s_sorted
        gamma_vals[hull_mask] = g
        slopes[hull_mask] = s[:, None]
    else:
        g, s = _upper_hull_2d(pts, vals)
        gamma_vals[hull_mask] = g
        slopes[hull_mask] = s
    return Envelope(
        GridFunction(grid, uplus), GridFunction(grid, gamma_vals), slopes, hull_mask, sup_ext
    )


@dataclass
class ContactSet:
    mask: np.ndarray
    points: np.ndarray
    flat_indices: np.ndarray
    tol_contact: float

    @property
    def size(self) -> int:
        return int(self.points.shape[0])


def contact_set(env: Envelope, tol_contact: Optional[float] = None) -> ContactSet:
    """Nodes of the domain closure where u+ touches its envelope."""
    grid = env.base.grid
    if tol_contact is None:
        tol_contact = 1e-8 * max(env.base.oscillation(), 1e-300)
    nodes = grid.nodes()
    closure = (grid.classification == INTERIOR) | (grid.domain.distance(nodes) <= 1e-12)
    mask = closure & (env.base.values >= env.gamma.values - tol_contact)
    return ContactSet(mask, nodes[mask], np.flatnonzero(mask.ravel()), tol_contact)


_RING = 64


def _ball_node_offsets(h: float, r: float, dim: int) -> np.ndarray:
    kmax = int(math.ceil(r / h))
    mesh = np.stack(
        np.meshgrid(*[np.arange(-kmax, kmax + 1)] * dim, indexing="ij"), axis=-1
    ).reshape(-1, dim) * h
    return mesh[np.einsum("ij,ij->i", mesh, mesh) < r * r]


def superdiff_bound(env: Envelope, x, p: Params) -> float:
    """Oscillation bound rho for the superdifferential spread near a contact
    node: rho = (2/eps) * osc over the eps/2 ball of the supporting-plane gap.
    The gradient-image measure over the eps/4 ball is |B_1| rho^N."""
    xx = np.atleast_1d(np.asarray(x, dtype=float))
    grid = env.base.grid
    xi = env.slope_at(xx)
    r = p.eps / 2.0
    if grid.dim == 1:
        ring = np.array([[-r * (1 - 1e-9)], [r * (1 - 1e-9)]])
    else:
        ang = (np.arange(_RING) + 0.5) * (2 * np.pi / _RING)
        ring = r * (1 - 1e-9) * np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    ys = np.concatenate([_ball_node_offsets(grid.h, r, grid.dim), ring])
    ys = ys[np.einsum("ij,ij->i", ys, ys) < r * r]
    phi = float(env.gamma(xx)) - env.gamma(xx + ys) + ys @ xi
    osc = float(np.max(phi) - np.min(phi))
    return max(2.0 / p.eps * osc, 0.0)


@dataclass
class CubeTerm:
    cube: Cube
    sup_f_plus: float
    contact_rep: np.ndarray
    rho: Optional[float] = None


@dataclass
class AbpReport:
    lhs: float  # sup over the domain of u
    sup_exterior: float
    constant: float  # 2^{N+3}/beta
    diameter_factor: float  # diam + Λ eps
    cube_sum: float  # (sum (sup_Q f+)^N)^{1/N}
    eps: float
    rhs: float
    passed: bool
    cubes: list = field(default_factory=list)
    n_contact: int = 0

    def to_json(self) -> dict:
        return {
            "lhs": self.lhs,
            "sup_exterior": self.sup_exterior,
            "constant": self.constant,
            "diameter_factor": self.diameter_factor,
            "cube_sum": self.cube_sum,
            "eps": self.eps,
            "rhs": self.rhs,
            "passed": self.passed,
            "n_cubes": len(self.cubes),
            "n_contact": self.n_contact,
        }


def _sup_on_cube(f_spec, cube: Cube, samples: int = 17) -> float:
    axes = [np.linspace(c - cube.side / 2.0, c + cube.side / 2.0, samples) for c in cube.center]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, cube.dim)
    return float(np.max(np.maximum(f_spec(mesh), 0.0)))


def verify_abp(scn, u: GridFunction, tol_sub: float = 1e-7, with_rho: bool = False) -> AbpReport:
    """Check sup u <= sup-exterior + (2^{N+3}/beta)(diam+Λeps)(cube sum)·eps
    for a verified subsolution u with continuous f >= 0."""
    grid = u.grid
    if grid.dim > 2:
        raise ValueError("envelope engine covers N ≤ 2")
    if scn.f.kind not in ("constant", "formula"):
        raise ValueError("continuous-f verification needs a formula or constant source")
    p = scn.params
    f = GridFunction.from_callable(grid, scn.f)
    res = residual(u, scn.family, f, p, tol_sub, op=scn.transition())
    if res.classification not in ("subsolution", "solution"):
        raise ValueError(f"u is not a subsolution at tolerance {tol_sub} (got {res.classification})")
    env = concave_envelope(u)
    contact = contact_set(env)
    cubes = eps_cover(contact.points, p.eps)
    terms = []
    for q in cubes:
        inq = q.closure_contains(contact.points, atol=1e-12 * max(1.0, q.side))
        rep = contact.points[np.argmax(inq)]
        t = CubeTerm(q, _sup_on_cube(scn.f, q), rep)
        if with_rho:
            t.rho = superdiff_bound(env, rep, p)
        terms.append(t)
    n = grid.dim
    cube_sum = float(np.sum([t.sup_f_plus**n for t in terms])) ** (1.0 / n)
    const = 2.0 ** (n + 3) / p.beta
    diam_f = grid.domain.diameter + p.lam * p.eps
    rhs = env.sup_exterior + const * diam_f * cube_sum * p.eps
    lhs = float(np.max(u.values[grid.interior_mask]))
    return AbpReport(lhs, env.sup_exterior, const, diam_f, cube_sum, p.eps,
                     rhs, lhs <= rhs + 1e-9, terms, contact.size)


def mollify_f(f: GridFunction, eps: float) -> GridFunction:
    """Ball average of f with zero extension outside the domain; continuous
    with modulus eps-grid-Lipschitz * ||f||_inf."""
    grid = f.grid
    if eps >= 2.0 * grid.h:
        offs, w = ball_rule(grid.h, eps, grid.dim)
    else:
        from .dpp_core import _small_eps_stencil

        offs, w = _small_eps_stencil(grid.dim, eps)
    nodes = grid.nodes().reshape(-1, grid.dim)
    out = np.zeros(nodes.shape[0])
    for off, wk in zip(offs, w):
        pts = nodes + off
        inside = grid.domain.contains(pts)
        if not np.any(inside):
            continue
        vals = np.zeros(nodes.shape[0])
        vals[inside] = f(pts[inside])
        out += wk * vals
    return GridFunction(grid, out.reshape(grid.shape))


@dataclass
class AbpMeasurableReport:
    lhs: float
    lhs_se: float
    exit_time_mean: float
    exit_time_se: float
    sup_f: float
    lN_f: float
    ell: int
    constant: float  # 2^{N+3} * ell / |B_1|^{1/N}
    rhs: float
    slack: float
    passed: bool
    n_paths: int

    def to_json(self) -> dict:
        return dict(self.__dict__)


def measurable_abp_constant(dim: int) -> tuple[int, float]:
    """The odd overlap factor ell (ell-2 < 9 sqrt(N) <= ell) and the bound
    constant 2^{N+3} ell / |B_1|^{1/N}."""
    target = 9.0 * math.sqrt(dim)
    ell = int(math.ceil(target))
    if ell % 2 == 0:
        ell += 1
    while ell - 2 >= target:
        ell -= 2
    c = 2.0 ** (dim + 3) * ell / unit_ball_volume(dim) ** (1.0 / dim)
    return ell, c


def verify_abp_measurable(scn, x0=None, n_paths: Optional[int] = None,
                          seed: Optional[int] = None, workers=None) -> AbpMeasurableReport:
    """Monte Carlo check of the null-set-safe bound

        E[eps^2 sum f(X_i)] <= (eps^2 + alpha E[eps^2 tau]) ||f||_inf
                               + C (diam + Λ eps) ||f||_N.
    """
    import dataclasses as _dc

    from .fields import FieldSpec
    from .walker import estimate_value, exit_time_stats

    dim = scn.domain.dim
    sup_f = scn.f.sup_norm()
    lN = scn.f.lN_norm(dim)
    if "f_lN" in scn.extras:
        lN = float(scn.extras["f_lN"])
    if "f_sup" in scn.extras:
        sup_f = float(scn.extras["f_sup"])
    if sup_f is None or lN is None:
        raise ValueError("unknown ||f||_N: use a box-indicator source or provide norms in extras")
    x0 = np.atleast_1d(np.asarray(x0 if x0 is not None else scn.domain.center, dtype=float))
    scn_payoff = _dc.replace(scn, g=FieldSpec.constant(0.0))
    est = estimate_value(x0, scn_payoff, n_paths=n_paths, seed=seed, workers=workers)
    stats = exit_time_stats(x0, scn, n_paths=n_paths, seed=seed, workers=workers)
    p = scn.params
    ell, c = measurable_abp_constant(dim)
    rhs = (p.eps**2 + p.alpha * stats.exit_time_mean) * sup_f + c * (
        scn.domain.diameter + p.lam * p.eps
    ) * lN
    se = est.se + p.alpha * sup_f * stats.exit_time_se
    passed = est.mean <= rhs + 3.0 * se
    return AbpMeasurableReport(est.mean, est.se, stats.exit_time_mean, stats.exit_time_se,
                               sup_f, lN, ell, c, rhs, rhs - est.mean, passed, est.n_paths)
