"""Step-size-aware Calderon-Zygmund decomposition, oscillation profiles,
Hölder-exponent fitting and the De Giorgi oscillation probe.

Dyadic sets are unions of generation-L cells of the unit cube, so all
measures and density thresholds are exact rationals and the decomposition
inequality |A| <= delta |B| + delta~ is certified in exact arithmetic.
The decomposition refuses to descend below its depth parameter; cubes at
that bottom level are additionally selected when their density lies in
(delta~, delta], which is what controls the error of stopping at the
step-size scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from .dpp_core import GridFunction
from .geometry import Cube

__all__ = [
    "DyadicSet",
    "CzParams",
    "CzDecomposition",
    "CzCertificate",
    "cz_decompose",
    "cz_verify",
    "OscillationProfile",
    "HolderFit",
    "oscillation_profile",
    "fit_holder",
    "holder_certificate",
    "DeGiorgiParams",
    "DeGiorgiReport",
    "degiorgi_probe",
]


@dataclass(frozen=True)
class DyadicSet:
    """Union of generation-``depth`` dyadic cells of the unit cube Q_1.

    Cells are integer index tuples in [0, 2^depth)^dim; the measure is the
    exact rational count / 2^(depth*dim).
    """

    dim: int
    depth: int
    cells: frozenset

    def __post_init__(self):
        side = 1 << self.depth
        for c in self.cells:
            if len(c) != self.dim or any(not (0 <= v < side) for v in c):
                raise ValueError("cell index outside the unit cube")

    @property
    def measure(self) -> Fraction:
        return Fraction(len(self.cells), (1 << self.depth) ** self.dim)

    @staticmethod
    def random(rng: np.random.Generator, dim: int, depth: int, density: float) -> "DyadicSet":
        side = 1 << depth
        total = side**dim
        k = int(round(density * total))
        k = max(0, min(total, k))
        chosen = rng.choice(total, size=k, replace=False)
        cells = frozenset(tuple(int(v) for v in np.unravel_index(int(c), (side,) * dim)) for c in chosen)
        return DyadicSet(dim, depth, cells)

    def cube_geometry(self, gen: int, idx: tuple, base: Optional[Cube] = None) -> Cube:
        base = base or Cube(np.zeros(self.dim), 1.0)
        side = base.side / (1 << gen)
        corner = base.center - base.side / 2.0
        center = corner + (np.asarray(idx, dtype=float) + 0.5) * side
        return Cube(center, side, generation=gen)


@dataclass(frozen=True)
class CzParams:
    delta: Fraction
    delta_tilde: Fraction
    L: int

    def __post_init__(self):
        d, dt = Fraction(self.delta), Fraction(self.delta_tilde)
        object.__setattr__(self, "delta", d)
        object.__setattr__(self, "delta_tilde", dt)
        if not (0 < dt < d < 1):
            raise ValueError("need 0 < delta~ < delta < 1")
        if self.L < 1:
            raise ValueError("decomposition depth L must be >= 1")


@dataclass
class CzDecomposition:
    selected: list  # (generation, index tuple)
    b_measure: Fraction
    params: CzParams
    a: DyadicSet

    def cubes(self, base: Optional[Cube] = None) -> list[Cube]:
        return [self.a.cube_geometry(g, i, base) for g, i in self.selected]


def _child_counts(cells_arr: np.ndarray, shift: int, dim: int):
    """Partition cells by their generation prefix after >> shift."""
    if cells_arr.shape[0] == 0:
        return {}
    pref = cells_arr >> shift
    out: dict[tuple, np.ndarray] = {}
    order = np.lexsort(pref.T[::-1])
    pref_sorted = pref[order]
    cells_sorted = cells_arr[order]
    change = np.any(np.diff(pref_sorted, axis=0) != 0, axis=1)
    starts = np.concatenate([[0], np.flatnonzero(change) + 1, [pref_sorted.shape[0]]])
    for s, e in zip(starts[:-1], starts[1:]):
        out[tuple(int(v) for v in pref_sorted[s])] = cells_sorted[s:e]
    return out


def cz_decompose(A: DyadicSet, p: CzParams) -> CzDecomposition:
    """Dyadic stopping-time selection with the bottom-level density rule.

    Walking from the unit cube: whenever a child of the current cube has
    A-density above delta, the current cube (the child's predecessor) is
    selected and the subtree stops. At generation L the walk stops; cubes
    there with density in (delta~, delta] are selected as well.
    """
    if p.L > A.depth:
        raise ValueError("decomposition depth exceeds the set resolution")
    if A.measure > p.delta:
        raise ValueError("the construction assumes |A| <= delta")
    dim, L_set = A.dim, A.depth
    cells_arr = np.asarray(sorted(A.cells), dtype=np.int64).reshape(-1, dim)
    selected: list[tuple[int, tuple]] = []

    def density_exceeds(count: int, gen: int, thr: Fraction) -> bool:
        cap = (1 << (L_set - gen)) ** dim  # cells per generation-gen cube
        return count * thr.denominator > thr.numerator * cap

    def walk(idx: tuple, gen: int, cells: np.ndarray):
        kids = _child_counts(cells, L_set - (gen + 1), dim)
        if any(density_exceeds(v.shape[0], gen + 1, p.delta) for v in kids.values()):
            selected.append((gen, idx))
            return
        if gen + 1 == p.L:
            for cidx, ccells in kids.items():
                if density_exceeds(ccells.shape[0], gen + 1, p.delta_tilde):
                    selected.append((gen + 1, cidx))
            return
        for cidx, ccells in kids.items():
            walk(cidx, gen + 1, ccells)

    walk(tuple([0] * dim), 0, cells_arr)
    b = sum((Fraction(1, (1 << g) ** dim) for g, _ in selected), Fraction(0))
    return CzDecomposition(selected, b, p, A)


@dataclass
class CzCertificate:
    inequality_ok: bool
    disjoint_ok: bool
    densities_ok: bool
    uncovered_ok: bool
    a_measure: str
    b_measure: str
    bound: str  # delta*|B| + delta~ as an exact rational string

    @property
    def passed(self) -> bool:
        return self.inequality_ok and self.disjoint_ok and self.densities_ok and self.uncovered_ok


def _count_in(A_cells: np.ndarray, gen: int, idx: tuple, L_set: int, dim: int) -> int:
    if A_cells.shape[0] == 0:
        return 0
    pref = A_cells >> (L_set - gen)
    return int(np.count_nonzero(np.all(pref == np.asarray(idx, dtype=np.int64), axis=1)))


def cz_verify(A: DyadicSet, decomp: CzDecomposition, p: CzParams) -> CzCertificate:
    """Exact rational certificate of |A| <= delta|B| + delta~ and of every
    side condition of the selection."""
    dim, L_set = A.dim, A.depth
    cells_arr = np.asarray(sorted(A.cells), dtype=np.int64).reshape(-1, dim)

    # pairwise disjoint: selected cubes are prefix-free
    disjoint = True
    sel = decomp.selected
    for i in range(len(sel)):
        for j in range(len(sel)):
            if i == j:
                continue
            gi, ii = sel[i]
            gj, ij = sel[j]
            if gi <= gj and tuple(v >> (gj - gi) for v in ij) == ii:
                disjoint = False

    # selected densities: every selected cube has density <= delta; cubes
    # picked at the bottom level must sit strictly above delta~; cubes
    # above it must have a triggering child with density > delta
    densities = True
    for g, idx in sel:
        cnt = _count_in(cells_arr, g, idx, L_set, dim)
        cap = (1 << (L_set - g)) ** dim
        if cnt * p.delta.denominator > p.delta.numerator * cap:
            densities = False
        if g == p.L:
            if not cnt * p.delta_tilde.denominator > p.delta_tilde.numerator * cap:
                densities = False
        else:
            ccap = (1 << (L_set - g - 1)) ** dim
            trigger = False
            for child in np.ndindex(*(2,) * dim):
                cidx = tuple(2 * v + o for v, o in zip(idx, child))
                ccnt = _count_in(cells_arr, g + 1, cidx, L_set, dim)
                if ccnt * p.delta.denominator > p.delta.numerator * ccap:
                    trigger = True
                    break
            if not trigger:
                densities = False

    # generation-L cubes not inside B carry density <= delta~
    uncovered = True
    side = 1 << p.L
    covered = set()
    for g, idx in sel:
        if g > p.L:
            continue
        scale = 1 << (p.L - g)
        from itertools import product as _prod

        rng = [range(v * scale, (v + 1) * scale) for v in idx]
        for t in _prod(*rng):
            covered.add(t)
    for t in np.ndindex(*(side,) * dim):
        if tuple(t) in covered:
            continue
        cnt = _count_in(cells_arr, p.L, tuple(t), L_set, dim)
        cap = (1 << (L_set - p.L)) ** dim
        if cnt * p.delta_tilde.denominator > p.delta_tilde.numerator * cap:
            uncovered = False
            break

    bound = p.delta * decomp.b_measure + p.delta_tilde
    return CzCertificate(
        A.measure <= bound,
        disjoint,
        densities,
        uncovered,
        str(A.measure),
        str(decomp.b_measure),
        str(bound),
    )


# ---------------------------------------------------------------------------
# oscillation profiles and Hölder fits
# ---------------------------------------------------------------------------


@dataclass
class OscillationProfile:
    center: np.ndarray
    radii: np.ndarray
    omega: np.ndarray
    eps: float
    ladder: float
    eps0: float
    h: float

    def rows(self):
        for r, w in zip(self.radii, self.omega):
            yield float(r), float(w)


def oscillation_profile(u: GridFunction, center, r_max: float, eps: float,
                        ladder: float = 2.0, eps0: float = 0.5) -> OscillationProfile:
    """sup-inf of u over shrinking balls; radii stop at max(eps/eps0, 2h)."""
    if ladder <= 1.0:
        raise ValueError("ladder factor must exceed 1")
    grid = u.grid
    c = np.atleast_1d(np.asarray(center, dtype=float))
    cutoff = max(eps / eps0, 2.0 * grid.h)
    radii = []
    r = float(r_max)
    while r >= cutoff:
        radii.append(r)
        r /= ladder
    if not radii:
        raise ValueError("oscillation ladder is empty at this step size")
    nodes = grid.nodes()
    dist2 = np.einsum("...i,...i->...", nodes - c, nodes - c)
    omega = []
    for r in radii:
        mask = dist2 < r * r
        vals = u.values[mask]
        if vals.size == 0:
            raise ValueError("no nodes inside the smallest ladder ball")
        omega.append(float(np.max(vals) - np.min(vals)))
    return OscillationProfile(c, np.asarray(radii), np.asarray(omega), eps, ladder, eps0, grid.h)


@dataclass
class HolderFit:
    gamma: float
    C: float
    lam: float
    ls_slope: float
    n_levels: int
    radii: np.ndarray
    omega: np.ndarray

    def to_json(self) -> dict:
        return {
            "gamma": self.gamma,
            "C": self.C,
            "lam": self.lam,
            "ls_slope": self.ls_slope,
            "n_levels": self.n_levels,
            "radii": self.radii.tolist(),
            "omega": self.omega.tolist(),
        }


def fit_holder(profile: OscillationProfile, sup_u: Optional[float] = None,
               f_sup: float = 0.0) -> HolderFit:
    """Exponent from the median per-level decay ratio, with the log-log
    least-squares slope as a cross-check; C sized so the profile itself
    satisfies the asymptotic two-point bound."""
    r, w = profile.radii, profile.omega
    if r.size < 3:
        raise ValueError("need at least 3 ladder levels above the step cutoff")
    ok = w[:-1] > 0
    ratios = w[1:][ok] / w[:-1][ok]
    if ratios.size < 2:
        raise ValueError("oscillation vanishes; no decay ratio to fit")
    lam = float(np.median(ratios))
    lam = min(max(lam, 1e-12), 1.0)
    gamma = math.log(1.0 / lam) / math.log(profile.ladder)
    pos = w > 0
    if np.count_nonzero(pos) >= 2:
        slope, _ = np.polyfit(np.log(r[pos]), np.log(w[pos]), 1)
    else:
        slope = 0.0
    if sup_u is None:
        sup_u = float(np.max(np.abs(w)))
    R = float(r[0])
    scale = (sup_u + R**2 * f_sup) * (r**gamma + profile.eps**gamma) / R**gamma
    C = float(np.max(w / np.maximum(scale, 1e-300)))
    return HolderFit(gamma, C, lam, float(slope), int(r.size), r, w)


@dataclass
class CertificateReport:
    n_pairs: int
    violations: int
    max_ratio: float
    gamma: float
    C: float
    passed: bool


def holder_certificate(u: GridFunction, center, R: float, gamma: float, C: float,
                       eps: float, f_sup: float = 0.0, n_pairs: int = 10**4,
                       seed: int = 0, min_sep: Optional[float] = None,
                       calibrate: bool = False) -> CertificateReport:
    """Two-point bound |u(x)-u(z)| <= (C/R^γ)(sup|u| + R²f)(|x-z|^γ + eps^γ)
    on random node pairs in B_R(center); with ``calibrate`` the report's C is
    the smallest constant passing on this sample."""
    grid = u.grid
    c = np.atleast_1d(np.asarray(center, dtype=float))
    nodes = grid.nodes().reshape(-1, grid.dim)
    dist2 = np.einsum("ij,ij->i", nodes - c, nodes - c)
    inball = np.flatnonzero(dist2 < R * R)
    if inball.size < 2:
        raise ValueError("not enough nodes inside the certificate ball")
    rng = np.random.Generator(np.random.Philox(key=seed))
    ii = inball[rng.integers(0, inball.size, n_pairs)]
    jj = inball[rng.integers(0, inball.size, n_pairs)]
    sep = np.sqrt(np.einsum("ij,ij->i", nodes[ii] - nodes[jj], nodes[ii] - nodes[jj]))
    if min_sep is not None:
        keep = sep >= min_sep
        ii, jj, sep = ii[keep], jj[keep], sep[keep]
    flat = u.values.ravel()
    # sup over the doubled ball, as in the two-point estimate
    big = np.flatnonzero(dist2 < min(2 * R, R + grid.domain.diameter) ** 2)
    sup_u = float(np.max(np.abs(flat[big])))
    du = np.abs(flat[ii] - flat[jj])
    bound_unit = (sup_u + R**2 * f_sup) * (sep**gamma + eps**gamma) / R**gamma
    ratio = du / np.maximum(bound_unit, 1e-300)
    max_ratio = float(np.max(ratio)) if ratio.size else 0.0
    if calibrate:
        C = max_ratio
    viol = int(np.count_nonzero(ratio > C * (1 + 1e-12)))
    return CertificateReport(int(ii.size), viol, max_ratio, gamma, C, viol == 0)


# ---------------------------------------------------------------------------
# De Giorgi probe
# ---------------------------------------------------------------------------


@dataclass
class DeGiorgiParams:
    R: float
    theta: float
    k: Optional[float] = None  # dilation; default 2(5N + Λ eps0)
    eps0: float = 0.5
    level_m: Optional[float] = None
    bound_M: Optional[float] = None

    def dilation(self, dim: int, lam: float) -> float:
        if self.k is not None:
            if self.k <= 1:
                raise ValueError("dilation factor must exceed 1")
            return self.k
        return 2.0 * (5.0 * dim + lam * self.eps0)


@dataclass
class DeGiorgiReport:
    M: float
    m: float
    sup_inner: float
    theta_observed: float
    eta_observed: float
    k: float
    R: float
    n_inner_nodes: int
    hypothesis_met: bool

    def to_json(self) -> dict:
        return dict(self.__dict__)


def degiorgi_probe(scn, u: GridFunction, center, params: DeGiorgiParams) -> DeGiorgiReport:
    """Measure the oscillation-drop factor: with u <= M on the dilated ball
    and u <= m on a theta-fraction of B_R (by node counting), report the
    largest eta with sup_{B_R} u <= (1-eta)M + eta m (the source helper term
    is dropped, a conservative choice; batteries use f = 0)."""
    grid = u.grid
    c = np.atleast_1d(np.asarray(center, dtype=float))
    k = params.dilation(grid.dim, scn.params.lam)
    nodes = grid.nodes()
    dist2 = np.einsum("...i,...i->...", nodes - c, nodes - c)
    big_mask = dist2 < (k * params.R) ** 2
    if not np.any(big_mask):
        raise ValueError("dilated ball contains no nodes")
    inner_mask = dist2 < params.R**2
    n_inner = int(np.count_nonzero(inner_mask))
    if n_inner == 0:
        raise ValueError("probe ball contains no nodes")
    M = params.bound_M if params.bound_M is not None else float(np.max(u.values[big_mask]))
    inner = u.values[inner_mask]
    if params.level_m is None:
        m = float(np.quantile(inner, params.theta, method="inverted_cdf"))
    else:
        m = params.level_m
    n_below = int(np.count_nonzero(inner <= m))
    theta_obs = n_below / n_inner
    hypo = theta_obs >= params.theta and bool(np.all(u.values[big_mask] <= M + 1e-12))
    sup_inner = float(np.max(inner))
    if M - m <= 1e-14:
        eta = 1.0  # degenerate level: the drop inequality holds for every eta
    else:
        eta = (M - sup_inner) / (M - m)
    return DeGiorgiReport(M, m, sup_inner, theta_obs, eta, k, params.R, n_inner, hypo)
