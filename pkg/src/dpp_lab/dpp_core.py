"""Mean-value dynamic programming operators and their fixed-point solvers.

The drift operator at an interior node x is

    L u(x) = (alpha * E_nu[u(x + eps z)] + beta * ballavg(u, x, eps) - u(x)) / eps^2

and u solves the DPP when L u + f = 0 inside the domain with u = g on the
collar. Solvers iterate the Picard (Jacobi) map, which is monotone when
started from the quadratic subsolution; a sparse direct path solves the
same linear fixed point for large fixed-measure grids. Every returned
solution can be re-checked with :func:`residual`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import Grid, build_grid
from .interp import multilinear, stencil_weights
from .measures import DirectionSet, MeasureFamily, increment_quadrature

__all__ = [
    "Params",
    "GridFunction",
    "Residual",
    "SolveLog",
    "DivergenceError",
    "ball_average",
    "ball_rule",
    "apply_L",
    "apply_L_pucci",
    "residual",
    "initial_subsolution",
    "solve_dpp",
    "solve_pucci",
    "nonuniqueness_check",
    "assemble_transition",
    "boundary_values",
]


@dataclass(frozen=True)
class Params:
    """Step size and branch weights; alpha + beta = 1, beta > 0, Λ ≥ 1."""

    eps: float
    alpha: float
    beta: float
    lam: float = 1.0

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if abs(self.alpha + self.beta - 1.0) > 1e-12:
            raise ValueError("alpha + beta must equal 1")
        if not (0.0 <= self.alpha < 1.0) or not (0.0 < self.beta <= 1.0):
            raise ValueError("need alpha in [0,1) and beta in (0,1]")
        if self.lam < 1.0:
            raise ValueError("Λ must be at least 1")


@dataclass
class GridFunction:
    """Node values on a grid with multilinear off-grid evaluation."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError("values shape must match the grid")

    def __call__(self, pts) -> np.ndarray:
        return multilinear(self.values, self.grid.idx_lo, self.grid.h, pts)

    @staticmethod
    def from_callable(grid: Grid, fn) -> "GridFunction":
        return GridFunction(grid, np.asarray(fn(grid.nodes()), dtype=float))

    def copy(self) -> "GridFunction":
        return GridFunction(self.grid, self.values.copy())

    def interior(self) -> np.ndarray:
        return self.values[self.grid.interior_mask]

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def oscillation(self) -> float:
        return float(np.max(self.values) - np.min(self.values))


def boundary_values(grid: Grid, g_spec) -> GridFunction:
    """Grid function holding g at every node (interior values are
    placeholders to be overwritten by a solver)."""
    return GridFunction(grid, np.asarray(g_spec(grid.nodes()), dtype=float))


# ---------------------------------------------------------------------------
# ball average
# ---------------------------------------------------------------------------

_SUBSAMPLE = {1: 129, 2: 33, 3: 9}


@lru_cache(maxsize=64)
def ball_rule(h: float, eps: float, dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric quadrature of the uniform measure on B_eps about a node.

    Nodes are the centroids of lattice cells clipped to the ball, weights
    the clipped cell volumes (boundary cells resolved by symmetric midpoint
    subsampling). Reduces to plain node averaging away from the sphere and
    keeps the second moment within O((h_sub/eps)^2) of eps^2 N/(N+2).
    """
    sub = _SUBSAMPLE.get(dim, 5)
    kmax = int(math.ceil(eps / h)) + 1
    half = h / 2.0
    offs, wts = [], []
    sub_axis = (-half) + (np.arange(sub) + 0.5) * (h / sub)
    sub_mesh = np.stack(np.meshgrid(*[sub_axis] * dim, indexing="ij"), axis=-1).reshape(-1, dim)
    for k in np.ndindex(*(2 * kmax + 1,) * dim):
        kv = np.asarray(k) - kmax
        c = kv * h
        near = np.linalg.norm(np.maximum(np.abs(c) - half, 0.0))
        if near >= eps:
            continue
        far = np.linalg.norm(np.abs(c) + half)
        if far <= eps:
            offs.append(c)
            wts.append(1.0)
            continue
        pts = c + sub_mesh
        inside = np.einsum("ij,ij->i", pts, pts) < eps * eps
        cnt = int(np.count_nonzero(inside))
        if cnt == 0:
            continue
        offs.append(pts[inside].mean(axis=0))
        wts.append(cnt / float(sub_mesh.shape[0]))
    offs = np.asarray(offs)
    wts = np.asarray(wts)
    order = np.lexsort(offs.T[::-1])
    offs, wts = offs[order], wts[order]
    w = wts / wts.sum()
    offs.setflags(write=False)
    w.setflags(write=False)
    return offs, w


def _small_eps_stencil(dim: int, eps: float) -> tuple[np.ndarray, np.ndarray]:
    """2N+1 point stencil matching the ball's total mass and second moment."""
    offs = [np.zeros(dim)]
    wts = [2.0 / (dim + 2)]
    for d in range(dim):
        e = np.zeros(dim)
        e[d] = eps
        offs += [e, -e]
        wts += [0.5 / (dim + 2)] * 2
    return np.asarray(offs), np.asarray(wts)


def _on_lattice(x: np.ndarray, h: float, tol: float = 1e-9) -> bool:
    return bool(np.all(np.abs(x / h - np.rint(x / h)) < tol))


def ball_average(u: GridFunction, x, eps: float) -> float:
    """Average of u over B_eps(x) by a symmetric deterministic quadrature."""
    xx = np.atleast_1d(np.asarray(x, dtype=float))
    h = u.grid.h
    if eps >= 2.0 * h and _on_lattice(xx, h):
        offs, w = ball_rule(h, eps, u.grid.dim)
    else:
        offs, w = _small_eps_stencil(u.grid.dim, eps)
    return float(np.dot(w, u(xx + offs)))


# ---------------------------------------------------------------------------
# pointwise operators
# ---------------------------------------------------------------------------


def _require_interior(grid: Grid, x: np.ndarray):
    if not bool(grid.domain.contains(x)):
        raise ValueError("operator is defined at interior points only")


def apply_L(u: GridFunction, fam: MeasureFamily, p: Params, x, form: str = "dpp") -> float:
    """Drift operator L u(x); the rearranged DPP form and the symmetric
    second-difference form agree to rounding for symmetric quadrature."""
    xx = np.atleast_1d(np.asarray(x, dtype=float))
    _require_interior(u.grid, xx)
    if form == "dpp":
        z, w = increment_quadrature(fam, xx)
        e = float(np.dot(w, u(xx + p.eps * z)))
        return (p.alpha * e + p.beta * ball_average(u, xx, p.eps) - float(u(xx))) / p.eps**2
    if form != "second-difference":
        raise ValueError("form must be 'dpp' or 'second-difference'")
    z, w = increment_quadrature(fam, xx)
    mid = float(u(xx))
    d_alpha = float(np.dot(w, u(xx + p.eps * z) + u(xx - p.eps * z) - 2.0 * mid))
    h = u.grid.h
    if p.eps >= 2.0 * h and _on_lattice(xx, h):
        boffs, bw = ball_rule(h, p.eps, u.grid.dim)
    else:
        boffs, bw = _small_eps_stencil(u.grid.dim, p.eps)
    d_beta = float(np.dot(bw, u(xx + boffs) + u(xx - boffs) - 2.0 * mid))
    return (p.alpha * d_alpha + p.beta * d_beta) / (2.0 * p.eps**2)


def apply_L_pucci(u: GridFunction, dirs: DirectionSet, p: Params, x, sign: str) -> float:
    """Extremal drift operator: measure expectation replaced by the sup or
    inf of the centered second difference over the direction set."""
    from .measures import pucci_extreme

    xx = np.atleast_1d(np.asarray(x, dtype=float))
    _require_interior(u.grid, xx)
    ext = pucci_extreme(dirs, xx, p.eps, u, sign).value
    h = u.grid.h
    if p.eps >= 2.0 * h and _on_lattice(xx, h):
        boffs, bw = ball_rule(h, p.eps, u.grid.dim)
    else:
        boffs, bw = _small_eps_stencil(u.grid.dim, p.eps)
    mid = float(u(xx))
    d_beta = float(np.dot(bw, u(xx + boffs) + u(xx - boffs) - 2.0 * mid))
    return (p.alpha * ext + p.beta * d_beta / 2.0) / p.eps**2


# ---------------------------------------------------------------------------
# assembled transition operator
# ---------------------------------------------------------------------------


@dataclass
class TransitionOperator:
    """Sparse row-stochastic map: interior update of one Picard sweep."""

    grid: Grid
    params: Params
    W: sp.csr_matrix  # alpha*expectation + beta*ball average, interior rows
    ball: sp.csr_matrix  # ball-average part alone (unweighted)
    interior_flat: np.ndarray
    m2_ball: float  # second moment of the ball rule

    def sweep(self, flat_values: np.ndarray) -> np.ndarray:
        return self.W.dot(flat_values)


def _offset_table(grid: Grid, points: np.ndarray, weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Collapse (relative point, weight) quadrature into integer lattice
    offsets with interpolation weights; valid for on-lattice base nodes."""
    h = grid.h
    dim = grid.dim
    strides = np.ones(dim, dtype=np.int64)
    shape = grid.shape
    for d in range(dim - 2, -1, -1):
        strides[d] = strides[d + 1] * shape[d + 1]
    table: dict[int, float] = {}
    base = np.floor(points / h).astype(np.int64)
    frac = points / h - base
    import itertools

    for j, corner in enumerate(itertools.product((0, 1), repeat=dim)):
        w = weights.copy()
        off = np.zeros(points.shape[0], dtype=np.int64)
        for d, c in enumerate(corner):
            w = w * (frac[:, d] if c else (1.0 - frac[:, d]))
            off = off + (base[:, d] + c) * strides[d]
        for o, ww in zip(off, w):
            if ww != 0.0:
                table[int(o)] = table.get(int(o), 0.0) + float(ww)
    offs = np.array(sorted(table.keys()), dtype=np.int64)
    return offs, np.array([table[int(o)] for o in offs])


def _uniform_stencil_matrix(grid: Grid, interior_flat: np.ndarray, offs: np.ndarray, w: np.ndarray) -> sp.csr_matrix:
    m = interior_flat.size
    n = int(np.prod(grid.shape))
    indices = (interior_flat[:, None] + offs[None, :]).ravel()
    data = np.tile(w, m)
    indptr = np.arange(m + 1, dtype=np.int64) * offs.size
    return sp.csr_matrix((data, indices, indptr), shape=(m, n))


def _bulk_quadrature(fam: MeasureFamily, xs: np.ndarray):
    """Per-node quadrature (Z, W) of shapes (M,K,N), (M,K) for the families
    whose node dependence is a cheap transform; None when unavailable."""
    m = xs.shape[0]
    if fam.kind == "dirac-pair":
        d = np.asarray(fam.direction(xs), dtype=float)
        z = np.stack([d, -d], axis=1)
        w = np.full((m, 2), 0.5)
        return z, w
    if fam.kind == "ellipsoid-shell" and fam.dim == 2:
        from .measures import _shell_quadrature_for

        z0, w0 = _shell_quadrature_for(np.diag(fam.axes), 2, fam.q_angles, fam.q_radial)
        theta = np.zeros(m) if fam.rotation is None else np.asarray(fam.rotation(xs), dtype=float)
        c, s = np.cos(theta), np.sin(theta)
        zx = c[:, None] * z0[:, 0] - s[:, None] * z0[:, 1]
        zy = s[:, None] * z0[:, 0] + c[:, None] * z0[:, 1]
        return np.stack([zx, zy], axis=-1), np.broadcast_to(w0, (m, w0.size))
    return None


def _per_node_expect_matrix(grid: Grid, fam: MeasureFamily, eps: float, interior_flat: np.ndarray) -> sp.csr_matrix:
    """Expectation rows for position-dependent families, chunked."""
    n = int(np.prod(grid.shape))
    nodes = grid.nodes().reshape(-1, grid.dim)
    blocks = []
    chunk = 4096
    for lo in range(0, interior_flat.size, chunk):
        idx = interior_flat[lo : lo + chunk]
        xs = nodes[idx]
        bulk = _bulk_quadrature(fam, xs)
        if bulk is not None:
            z, w = bulk
            k = z.shape[1]
            pts = (xs[:, None, :] + eps * z).reshape(-1, grid.dim)
            flat, wts = stencil_weights(pts, grid.idx_lo, grid.h, grid.shape)
            contrib = (wts.reshape(idx.size, k, -1) * w[..., None]).reshape(idx.size, -1)
            rows = np.repeat(np.arange(idx.size, dtype=np.int64), flat.shape[1] * k)
            cols = flat.reshape(idx.size, -1).ravel()
            data = contrib.ravel()
        else:
            rows_l, cols_l, data_l = [], [], []
            for r, fi in enumerate(idx):
                x = nodes[fi]
                z, w = increment_quadrature(fam, x)
                flat, wts = stencil_weights(x + eps * z, grid.idx_lo, grid.h, grid.shape)
                contrib = wts * w[:, None]
                rows_l.append(np.full(flat.size, r, dtype=np.int64))
                cols_l.append(flat.ravel())
                data_l.append(contrib.ravel())
            rows = np.concatenate(rows_l)
            cols = np.concatenate(cols_l)
            data = np.concatenate(data_l)
        blk = sp.coo_matrix((data, (rows, cols)), shape=(idx.size, n))
        blk.sum_duplicates()
        blocks.append(blk.tocsr())
    return sp.vstack(blocks, format="csr")


def assemble_transition(grid: Grid, fam: MeasureFamily, p: Params) -> TransitionOperator:
    """One-sweep transition W = alpha*E + beta*ballavg as a sparse matrix."""
    interior_flat = np.flatnonzero(grid.interior_mask.ravel())
    boffs_p, bw = ball_rule(grid.h, p.eps, grid.dim)
    m2 = float(np.dot(bw, np.einsum("ij,ij->i", boffs_p, boffs_p)))
    boffs, bwts = _offset_table(grid, boffs_p, bw)
    ball = _uniform_stencil_matrix(grid, interior_flat, boffs, bwts)
    if fam.position_independent:
        x0 = grid.domain.center
        z, w = increment_quadrature(fam, x0)
        eoffs, ewts = _offset_table(grid, p.eps * z, w)
        exp_m = _uniform_stencil_matrix(grid, interior_flat, eoffs, ewts)
    else:
        exp_m = _per_node_expect_matrix(grid, fam, p.eps, interior_flat)
    W = (p.alpha * exp_m + p.beta * ball).tocsr()
    return TransitionOperator(grid, p, W, ball, interior_flat, m2)


def _pucci_stencils(grid: Grid, dirs: DirectionSet, eps: float, interior_flat: np.ndarray) -> list[sp.csr_matrix]:
    """One matrix per ± direction pair computing (u(x+εz)+u(x-εz))/2."""
    mats = []
    seen = set()
    for z in dirs.vectors:
        canon = tuple(np.round(z, 12))
        neg = tuple(np.round(-z, 12))
        if neg in seen and canon != neg:
            continue
        seen.add(canon)
        pts = np.stack([eps * z, -eps * z])
        offs, w = _offset_table(grid, pts, np.array([0.5, 0.5]))
        mats.append(_uniform_stencil_matrix(grid, interior_flat, offs, w))
    return mats


# ---------------------------------------------------------------------------
# residual and classification
# ---------------------------------------------------------------------------


@dataclass
class Residual:
    sup_norm: float
    values: np.ndarray  # signed residual at interior nodes
    interior_flat: np.ndarray
    classification: str
    tol: float

    @staticmethod
    def classify(values: np.ndarray, tol: float) -> str:
        lo, hi = float(np.min(values)), float(np.max(values))
        if lo >= -tol and hi <= tol:
            return "solution"
        if lo >= -tol:
            return "subsolution"
        if hi <= tol:
            return "supersolution"
        return "neither"


def residual(u: GridFunction, fam: MeasureFamily, f: GridFunction, p: Params, tol: float,
             op: Optional[TransitionOperator] = None) -> Residual:
    """Signed residual L u + f at every interior node with classification."""
    if f.grid is not u.grid and f.grid.shape != u.grid.shape:
        raise ValueError("u and f must share a grid")
    if op is None:
        op = assemble_transition(u.grid, fam, p)
    flat = u.values.ravel()
    r = (op.W.dot(flat) - flat[op.interior_flat]) / p.eps**2 + f.values.ravel()[op.interior_flat]
    return Residual(float(np.max(np.abs(r))), r, op.interior_flat, Residual.classify(r, tol), tol)


def residual_pucci(u: GridFunction, dirs: DirectionSet, f: GridFunction, p: Params, sign: str,
                   tol: float, alpha_vec: Optional[np.ndarray] = None) -> Residual:
    """Residual of the extremal DPP (sup for 'max', inf for 'min')."""
    grid = u.grid
    interior_flat = np.flatnonzero(grid.interior_mask.ravel())
    boffs_p, bw = ball_rule(grid.h, p.eps, grid.dim)
    boffs, bwts = _offset_table(grid, boffs_p, bw)
    ball = _uniform_stencil_matrix(grid, interior_flat, boffs, bwts)
    mats = _pucci_stencils(grid, dirs, p.eps, interior_flat)
    flat = u.values.ravel()
    stack = np.stack([m.dot(flat) for m in mats])
    ext = stack.max(axis=0) if sign == "max" else stack.min(axis=0)
    a = p.alpha if alpha_vec is None else alpha_vec
    b = p.beta if alpha_vec is None else 1.0 - alpha_vec
    tu = a * ext + b * ball.dot(flat)
    r = (tu - flat[interior_flat]) / p.eps**2 + f.values.ravel()[interior_flat]
    return Residual(float(np.max(np.abs(r))), r, interior_flat, Residual.classify(r, tol), tol)


# ---------------------------------------------------------------------------
# solvers
# ---------------------------------------------------------------------------


class DivergenceError(RuntimeError):
    def __init__(self, msg: str, last_increment: float, iterations: int):
        super().__init__(f"{msg} (last sup-increment {last_increment:.3e} after {iterations} sweeps)")
        self.last_increment = last_increment
        self.iterations = iterations


@dataclass
class SolveLog:
    iterations: int
    sup_increments: np.ndarray
    final_increment: float
    residual_sup: float
    method: str
    mode: str
    beta_min: Optional[float] = None

    def rows(self):
        for i, v in enumerate(self.sup_increments):
            yield i + 1, float(v)


def default_tol(grid: Grid, f: GridFunction, g_sup: float) -> float:
    scale = max(1.0, g_sup + grid.domain.diameter**2 * float(np.max(np.abs(f.values))))
    return 1e-10 * scale


def _default_max_iter(grid: Grid, p: Params, tol: float, scale: float) -> int:
    n_upper = (grid.domain.diameter + p.lam * p.eps + 1.0) ** 2 / (
        p.beta * grid.dim / (grid.dim + 2.0) * p.eps**2
    )
    return int(n_upper * max(10.0, math.log((scale + 1.0) / tol))) + 1000


def initial_subsolution(scn) -> GridFunction:
    """Quadratic subsolution K + L|x|^2 matching g outside the domain.

    L is sized from the actual ball-rule second moment so the discrete
    residual is provably nonnegative (the continuum choice is
    ||f||_inf (N+2)/(beta N)).
    """
    grid = scn.grid()
    p = scn.params
    f_vals = np.asarray(scn.f(grid.nodes()), dtype=float)
    g = boundary_values(grid, scn.g)
    boffs, bw = ball_rule(grid.h, p.eps, grid.dim)
    m2 = float(np.dot(bw, np.einsum("ij,ij->i", boffs, boffs)))
    f_sup = float(np.max(np.abs(f_vals[grid.interior_mask]))) if grid.n_interior() else 0.0
    L = 0.0 if f_sup == 0.0 else f_sup * p.eps**2 / (p.beta * m2)
    nodes = grid.nodes()
    sq = np.einsum("...i,...i->...", nodes, nodes)
    mask = ~grid.interior_mask
    K = float(np.min(g.values[mask] - L * sq[mask]))
    vals = g.values.copy()
    vals[grid.interior_mask] = K + L * sq[grid.interior_mask]
    return GridFunction(grid, vals)


def _picard(grid, p, f_int, g_vals, u0_int, interior_flat, sweep, tol, max_iter, monotone):
    flat = g_vals.ravel().copy()
    flat[interior_flat] = u0_int
    eps2f = p.eps**2 * f_int
    incs = []
    for it in range(1, max_iter + 1):
        new = sweep(flat) + eps2f
        inc = float(np.max(np.abs(new - flat[interior_flat])))
        if monotone and float(np.min(new - flat[interior_flat])) < -1e-12:
            raise RuntimeError(
                "monotone iteration decreased; symmetric-quadrature invariant broken"
            )
        flat[interior_flat] = new
        incs.append(inc)
        if inc <= tol:
            return flat, np.asarray(incs), True
    return flat, np.asarray(incs), False


def solve_dpp(scn, mode: str = "monotone", tol: Optional[float] = None,
              max_iter: Optional[int] = None, method: str = "picard"):
    """Solve the DPP fixed point on the scenario grid.

    mode 'monotone' starts from the quadratic subsolution and asserts
    nondecreasing sweeps; 'arbitrary-init' starts from zero. method
    'direct' solves the equivalent sparse linear system (fixed-measure
    families only) and is residual-verified like the Picard path.
    """
    grid = scn.grid()
    p = scn.params
    op = scn.transition()
    f = GridFunction.from_callable(grid, scn.f)
    g = boundary_values(grid, scn.g)
    f_int = f.values.ravel()[op.interior_flat]
    if tol is None:
        tol = default_tol(grid, f, float(np.max(np.abs(g.values))))
    scale = float(np.max(np.abs(g.values))) + grid.domain.diameter**2 * float(np.max(np.abs(f.values)))
    if max_iter is None:
        max_iter = _default_max_iter(grid, p, tol, scale)
    if method == "auto":
        sweep_cost = op.W.nnz * float(_default_max_iter(grid, p, tol, scale))
        method = "direct" if sweep_cost > 2e9 else "picard"

    if method == "direct":
        flat = g.values.ravel().copy()
        u_int = _direct_solve(op, f_int, flat, p, tol)
        flat[op.interior_flat] = u_int
        incs = np.asarray([float(np.max(np.abs(op.sweep(flat) + p.eps**2 * f_int - u_int)))])
        converged = incs[-1] <= tol
        if not converged:
            raise DivergenceError("direct solve did not reach tolerance", incs[-1], 1)
    else:
        if mode == "monotone":
            u0 = initial_subsolution(scn).values[grid.interior_mask]
        elif mode == "arbitrary-init":
            u0 = np.zeros(op.interior_flat.size)
        else:
            raise ValueError("mode must be 'monotone' or 'arbitrary-init'")
        flat, incs, converged = _picard(
            grid, p, f_int, g.values, u0, op.interior_flat, op.sweep, tol, max_iter,
            monotone=(mode == "monotone"),
        )
        if not converged:
            raise DivergenceError("Picard iteration hit max_iter", float(incs[-1]), len(incs))

    u = GridFunction(grid, flat.reshape(grid.shape))
    res = residual(u, scn.family, f, p, tol, op=op)
    log = SolveLog(len(incs), incs, float(incs[-1]), res.sup_norm * p.eps**2, method, mode)
    return u, log


def _direct_solve(op: TransitionOperator, f_int, g_flat, p: Params, tol: float) -> np.ndarray:
    n = op.W.shape[1]
    m = op.interior_flat.size
    sel = np.zeros(n, dtype=bool)
    sel[op.interior_flat] = True
    cols_int = np.flatnonzero(sel)
    W = op.W.tocsc()
    W_int = W[:, cols_int].tocsr()
    ext_flat = g_flat.copy()
    ext_flat[op.interior_flat] = 0.0
    b = op.W.dot(ext_flat) + p.eps**2 * f_int
    A = sp.eye(m, format="csr") - W_int
    atol = 0.25 * tol
    try:
        ilu = spla.spilu(A.tocsc(), drop_tol=1e-5, fill_factor=12.0)
        pre = spla.LinearOperator((m, m), ilu.solve)
        u, info = spla.bicgstab(A, b, rtol=0.0, atol=atol, maxiter=4000, M=pre)
        if info != 0:
            raise RuntimeError
        return u
    except Exception:
        return spla.spsolve(A.tocsc(), b)


def solve_pucci(scn, sign: str, tol: Optional[float] = None, max_iter: Optional[int] = None):
    """Solve the extremal (controlled) DPP u = alpha*ext_z + beta*ballavg + eps^2 f.

    Supports variable alpha(x), beta(x) scenarios; the clamping constant
    beta_min = inf beta(x) is surfaced in the log.
    """
    if sign not in ("max", "min"):
        raise ValueError("sign must be 'max' or 'min'")
    grid = scn.grid()
    p = scn.params
    dirs = scn.direction_set()
    interior_flat = np.flatnonzero(grid.interior_mask.ravel())
    boffs_p, bw = ball_rule(grid.h, p.eps, grid.dim)
    boffs, bwts = _offset_table(grid, boffs_p, bw)
    ball = _uniform_stencil_matrix(grid, interior_flat, boffs, bwts)
    mats = _pucci_stencils(grid, dirs, p.eps, interior_flat)
    f = GridFunction.from_callable(grid, scn.f)
    g = boundary_values(grid, scn.g)
    f_int = f.values.ravel()[interior_flat]
    if tol is None:
        tol = default_tol(grid, f, float(np.max(np.abs(g.values))))
    scale = float(np.max(np.abs(g.values))) + grid.domain.diameter**2 * float(np.max(np.abs(f.values)))
    if max_iter is None:
        max_iter = _default_max_iter(grid, p, tol, scale)

    alpha_vec = None
    beta_min = None
    if getattr(scn, "alpha_field", None) is not None:
        pts = grid.nodes().reshape(-1, grid.dim)[interior_flat]
        alpha_vec = np.asarray(scn.alpha_field(pts), dtype=float)
        beta_vec = 1.0 - alpha_vec
        beta_min = float(np.min(beta_vec))
        if beta_min <= 0.0:
            raise ValueError("variable beta(x) must stay positive")

    reducer = np.max if sign == "max" else np.min

    def sweep(flat):
        stack = np.stack([m.dot(flat) for m in mats])
        ext = reducer(stack, axis=0)
        if alpha_vec is None:
            return p.alpha * ext + p.beta * ball.dot(flat)
        return alpha_vec * ext + (1.0 - alpha_vec) * ball.dot(flat)

    u0 = initial_subsolution(scn).values[grid.interior_mask]
    flat, incs, converged = _picard(
        grid, p, f_int, g.values, u0, interior_flat, sweep, tol, max_iter, monotone=True
    )
    if not converged:
        raise DivergenceError("Pucci iteration hit max_iter", float(incs[-1]), len(incs))
    u = GridFunction(grid, flat.reshape(grid.shape))
    res = residual_pucci(u, dirs, f, p, sign, tol, alpha_vec=alpha_vec)
    log = SolveLog(len(incs), incs, float(incs[-1]), res.sup_norm * p.eps**2, "picard", f"pucci-{sign}",
                   beta_min=beta_min)
    return u, log


# ---------------------------------------------------------------------------
# exact-arithmetic non-uniqueness demonstration
# ---------------------------------------------------------------------------


@dataclass
class NonUniquenessReport:
    k_checked: int
    identities: list  # (k, alpha_term, value, exact_match)
    zero_solution_ok: bool
    unbounded_solution_ok: bool

    @property
    def uniqueness_fails(self) -> bool:
        return self.zero_solution_ok and self.unbounded_solution_ok


def nonuniqueness_check(k_max: int = 20) -> NonUniquenessReport:
    """Exact check that both u ≡ 0 and the unbounded v(1/2^k) = 4^k satisfy
    the same DPP (eps 1, alpha = beta = 1/2, Dirac offsets ±1/2^{k+1} at
    x = 1/2^k, ball term vanishing off a countable support).

    The ball-average term is identically zero in exact arithmetic because v
    is supported on a null set; that step is symbolic by design.
    """
    if k_max > 25:
        raise ValueError("k_max above the exact dyadic range (25)")

    def v(q: Fraction) -> Fraction:
        # v(1/2^k) = 4^k for integer k >= 1, else 0
        if q <= 0 or q > Fraction(1, 2):
            return Fraction(0)
        if q.numerator != 1:
            return Fraction(0)
        k = q.denominator.bit_length() - 1
        if Fraction(1, 2**k) != q:
            return Fraction(0)
        return Fraction(4**k)

    alpha = beta = Fraction(1, 2)
    rows = []
    ok_v = True
    for k in range(1, k_max + 1):
        x = Fraction(1, 2**k)
        z = Fraction(1, 2 ** (k + 1))
        alpha_term = alpha * (v(x + z) + v(x - z)) / 2
        ball_term = Fraction(0)  # v vanishes a.e.; symbolic
        rhs = alpha_term + beta * ball_term
        match = rhs == v(x)
        ok_v &= match
        rows.append((k, alpha_term, v(x), match))
    # u ≡ 0: both sides vanish identically
    zero_ok = all(
        alpha * (Fraction(0) + Fraction(0)) / 2 + beta * Fraction(0) == Fraction(0)
        for _ in range(1)
    )
    return NonUniquenessReport(k_max, rows, zero_ok, ok_v)
