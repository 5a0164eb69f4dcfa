"""Monte Carlo simulation of the generalized random walk.

Each step tosses a biased coin: with probability alpha the increment is
eps*z with z drawn from the point's measure, with probability beta the
next point is uniform in the eps-ball. Paths carry the running payoff
eps^2 * sum f(X_i) over the points they leave and stop at the first index
outside the domain.

Streams are counter-based: one Philox stream per (seed, path index) with a
fixed in-path draw order, so results are bit-identical for any worker
count. Aggregation always reduces full arrays in path order.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .fields import FieldSpec
from .geometry import Domain, Region
from .measures import MeasureFamily, _uniform_ball_points, sample, sample_n

__all__ = [
    "PathState",
    "PathSummary",
    "WalkReport",
    "DriftReport",
    "LnFailureReport",
    "step",
    "run_to_exit",
    "estimate_value",
    "exit_time_stats",
    "drift_check",
    "hitting_prob",
    "ln_abp_failure_demo",
    "path_stream",
    "worker_count",
]

_BLOCKS = (128, 128, 256, 512, 1024, 2048, 4096)


def worker_count(workers: Optional[int] = None) -> int:
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get("DPP_LAB_WORKERS", "1")
    try:
        return max(1, int(env))
    except ValueError:
        return 1


def path_stream(seed: int, path_index: int) -> np.random.Generator:
    """Philox stream keyed by (seed, path index); independent across paths."""
    ss = np.random.SeedSequence(entropy=(int(seed) & (2**64 - 1), int(path_index)))
    return np.random.Generator(np.random.Philox(ss))


def _block_size(i: int) -> int:
    return _BLOCKS[min(i, len(_BLOCKS) - 1)]


# ---------------------------------------------------------------------------
# single-step reference implementation
# ---------------------------------------------------------------------------


@dataclass
class PathState:
    position: np.ndarray
    k: int = 0
    payoff: float = 0.0
    alpha_steps: int = 0
    beta_steps: int = 0
    in_S: bool = False  # symbolic null-set membership for the failure demo


def step(state: PathState, fam: MeasureFamily, p, rng: np.random.Generator,
         f: Optional[FieldSpec] = None) -> PathState:
    """One transition; the running payoff charges f at the point being left."""
    x = np.asarray(state.position, dtype=float)
    payoff = state.payoff + (p.eps**2 * float(f(x)) if f is not None else 0.0)
    if rng.random() < p.alpha:
        z = sample(fam, x, rng)
        return PathState(x + p.eps * z, state.k + 1, payoff, state.alpha_steps + 1, state.beta_steps)
    z = _uniform_ball_points(rng, 1, x.size)[0]
    return PathState(x + p.eps * z, state.k + 1, payoff, state.alpha_steps, state.beta_steps + 1)


@dataclass
class PathSummary:
    tau: int
    exit_position: np.ndarray
    payoff: float
    capped: bool
    alpha_steps: int
    beta_steps: int


def run_to_exit(x0, scn, rng: np.random.Generator, step_cap: Optional[int] = None) -> PathSummary:
    """Iterate single steps until the position leaves the domain."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if not bool(scn.domain.contains(x0)):
        raise ValueError("starting point must lie inside the domain")
    cap = step_cap if step_cap is not None else default_step_cap(scn.params.eps)
    st = PathState(x0)
    while bool(scn.domain.contains(st.position)):
        if st.k >= cap:
            return PathSummary(st.k, st.position, st.payoff, True, st.alpha_steps, st.beta_steps)
        st = step(st, scn.family, scn.params, rng, f=scn.f)
    return PathSummary(st.k, st.position, st.payoff, False, st.alpha_steps, st.beta_steps)


def default_step_cap(eps: float) -> int:
    return int(1e8 / eps**2)


# ---------------------------------------------------------------------------
# batch engine
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _Job:
    domain: Domain
    fam: MeasureFamily
    eps: float
    alpha: float
    x0: np.ndarray
    f: Optional[FieldSpec]
    g: Optional[FieldSpec]
    hit_region: Optional[Region]
    drift: bool
    step_cap: int
    seed: int
    track_S: bool = False


@dataclass
class _Acc:
    tau: np.ndarray
    value: np.ndarray
    payoff: np.ndarray
    exit_pos: np.ndarray
    hit: np.ndarray
    capped: np.ndarray
    drift_sum: float = 0.0
    drift_sumsq: float = 0.0
    drift_n: int = 0
    s_sum: Optional[np.ndarray] = None
    alpha_steps: int = 0
    alpha_plus: int = 0


def _alpha_increments(fam: MeasureFamily, x, rng, n: int) -> np.ndarray:
    # fixed draw order per family kind; see module docstring
    return sample_n(fam, x, rng, n)


_COHORT = 16384


def _run_paths_fast(job: _Job, lo: int, hi: int) -> _Acc:
    """Position-independent families: cohorts of paths advance in lockstep
    blocks; each path still consumes only its own (seed, index) stream."""
    dim = job.x0.size
    n = hi - lo
    acc = _Acc(
        tau=np.zeros(n, dtype=np.int64),
        value=np.zeros(n),
        payoff=np.zeros(n),
        exit_pos=np.zeros((n, dim)),
        hit=np.zeros(n, dtype=bool),
        capped=np.zeros(n, dtype=bool),
        s_sum=np.zeros(n) if job.track_S else None,
    )
    for base in range(lo, hi, _COHORT):
        _run_cohort(job, base, min(base + _COHORT, hi), acc, lo)
    return acc


def _run_cohort(job: _Job, lo: int, hi: int, acc: _Acc, acc_base: int):
    dim = job.x0.size
    eps, alpha = job.eps, job.alpha
    n = hi - lo
    f_const = job.f.value if (job.f is not None and job.f.kind == "constant") else None
    streams = [path_stream(job.seed, pid) for pid in range(lo, hi)]
    active = np.arange(n)
    x = np.tile(job.x0, (n, 1))
    steps = np.zeros(n, dtype=np.int64)
    fsum = np.zeros(n)
    ssum = np.zeros(n)
    carried_S = np.ones(n) if job.track_S else np.zeros(n)
    hit = np.zeros(n, dtype=bool)
    if job.hit_region is not None:
        hit[:] = bool(job.hit_region.contains(job.x0))
    d2_prev = np.zeros(n)
    rnd = 0
    while active.size:
        m = active.size
        B = int(min(_block_size(rnd), max(job.step_cap - int(steps[active].min()), 1)))
        rnd += 1
        coins = np.empty((m, B), dtype=bool)
        za = np.empty((m, B, dim))
        zb = np.empty((m, B, dim))
        if alpha == 0.0:
            coins[:] = False
            for r, a in enumerate(active):
                zb[r] = _uniform_ball_points(streams[a], B, dim)
            incr = eps * zb
        else:
            for r, a in enumerate(active):
                rng = streams[a]
                coins[r] = rng.random(B) < alpha
                za[r] = _alpha_increments(job.fam, job.x0, rng, B)
                zb[r] = _uniform_ball_points(rng, B, dim)
            incr = eps * np.where(coins[..., None], za, zb)
        pos = x[active, None, :] + np.cumsum(incr, axis=1)
        outside = ~job.domain.contains(pos)
        has_out = outside.any(axis=1)
        j = np.where(has_out, np.argmax(outside, axis=1), B)
        rows = np.arange(m)

        if job.f is not None:
            if f_const is not None:
                fx = np.full(m, f_const)
                cumF = None
            else:
                fx = job.f(x[active])
                cumF = np.cumsum(job.f(pos), axis=1)
            nleft = np.where(has_out, j, B - 1)  # points left beyond the block start
            if f_const is not None:
                fsum[active] += fx + f_const * nleft
            else:
                pref = np.where(nleft > 0, cumF[rows, np.maximum(nleft - 1, 0)], 0.0)
                fsum[active] += fx + pref

        if job.track_S:
            flags = coins & (za[..., 0] > 0)
            cumS = np.cumsum(flags, axis=1)
            cumC = np.cumsum(coins, axis=1)
            nleft = np.where(has_out, j, B - 1)
            pref = np.where(nleft > 0, cumS[rows, np.maximum(nleft - 1, 0)], 0.0)
            ssum[active] += carried_S[active] + pref
            carried_S[active] = flags[:, -1]
            ntrans = np.where(has_out, j + 1, B)
            acc.alpha_steps += int(np.sum(cumC[rows, ntrans - 1]))
            acc.alpha_plus += int(np.sum(cumS[rows, ntrans - 1]))

        if job.hit_region is not None:
            inA = job.hit_region.contains(pos)
            cumA = np.cumsum(inA, axis=1) > 0
            eligible = np.where(has_out, j, B)  # X_k inside for k < tau
            newly = np.where(eligible > 0, cumA[rows, np.maximum(eligible - 1, 0)], False)
            hit[active] |= newly

        if job.drift:
            d2 = np.einsum("mbj,mbj->mb", pos - job.x0, pos - job.x0)
            inc = np.diff(d2, axis=1, prepend=d2_prev[active, None])
            cumI = np.cumsum(inc, axis=1)
            cumI2 = np.cumsum(inc * inc, axis=1)
            ntrans = np.where(has_out, j + 1, B)
            acc.drift_sum += float(np.sum(cumI[rows, ntrans - 1]))
            acc.drift_sumsq += float(np.sum(cumI2[rows, ntrans - 1]))
            acc.drift_n += int(np.sum(ntrans))
            d2_prev[active] = d2[:, -1]

        if np.any(has_out):
            er = rows[has_out]
            ea = active[has_out]
            jj = j[er]
            acc_idx = ea + (lo - acc_base)
            acc.tau[acc_idx] = steps[ea] + jj + 1
            epos = pos[er, jj]
            acc.exit_pos[acc_idx] = epos
            acc.payoff[acc_idx] = eps**2 * fsum[ea]
            val = eps**2 * fsum[ea]
            if job.g is not None:
                val = val + np.asarray(job.g(epos), dtype=float)
            acc.value[acc_idx] = val
            acc.hit[acc_idx] = hit[ea]
            if job.track_S:
                acc.s_sum[acc_idx] = eps**2 * ssum[ea]

        surv = ~has_out
        if np.any(surv):
            sa = active[surv]
            x[sa] = pos[rows[surv], -1]
            steps[sa] += B
            over = steps[sa] >= job.step_cap
            if np.any(over):
                oa = sa[over]
                acc_idx = oa + (lo - acc_base)
                acc.capped[acc_idx] = True
                acc.tau[acc_idx] = steps[oa]
                acc.exit_pos[acc_idx] = x[oa]
                acc.payoff[acc_idx] = eps**2 * fsum[oa]
                sa = sa[~over]
            active = sa
        else:
            active = active[:0]
    return acc


def _run_paths_generic(job: _Job, lo: int, hi: int) -> _Acc:
    """Position-dependent families: per-step loop (reference semantics)."""
    dim = job.x0.size
    n = hi - lo
    acc = _Acc(
        tau=np.zeros(n, dtype=np.int64),
        value=np.zeros(n),
        payoff=np.zeros(n),
        exit_pos=np.zeros((n, dim)),
        hit=np.zeros(n, dtype=bool),
        capped=np.zeros(n, dtype=bool),
        s_sum=np.zeros(n) if job.track_S else None,
    )
    for i in range(n):
        rng = path_stream(job.seed, lo + i)
        x = job.x0.copy()
        fsum = 0.0
        k = 0
        hit = bool(job.hit_region.contains(x)) if job.hit_region is not None else False
        d2_prev = 0.0
        while True:
            if job.f is not None:
                fsum += float(job.f(x.reshape(1, -1))[0])
            if k >= job.step_cap:
                acc.capped[i] = True
                break
            if rng.random() < job.alpha:
                z = sample_n(job.fam, x, rng, 1)[0]
            else:
                z = _uniform_ball_points(rng, 1, dim)[0]
            x = x + job.eps * z
            k += 1
            if job.drift:
                d2 = float(np.dot(x - job.x0, x - job.x0))
                inc = d2 - d2_prev
                acc.drift_sum += inc
                acc.drift_sumsq += inc * inc
                acc.drift_n += 1
                d2_prev = d2
            if not bool(job.domain.contains(x)):
                break
            if job.hit_region is not None and not hit:
                hit = bool(job.hit_region.contains(x))
        acc.tau[i] = k
        acc.exit_pos[i] = x
        acc.payoff[i] = job.eps**2 * fsum
        acc.value[i] = acc.payoff[i] + (float(job.g(x.reshape(1, -1))[0]) if job.g is not None else 0.0)
        acc.hit[i] = hit
    return acc


def _run_shard(args):
    job, lo, hi = args
    runner = _run_paths_fast if job.fam.position_independent else _run_paths_generic
    return runner(job, lo, hi)


def _simulate(job: _Job, n_paths: int, workers: Optional[int] = None) -> _Acc:
    w = worker_count(workers)
    if w <= 1 or n_paths < 4 * w:
        return _run_shard((job, 0, n_paths))
    bounds = np.linspace(0, n_paths, w + 1).astype(int)
    shards = [(job, int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    with ProcessPoolExecutor(max_workers=w) as pool:
        parts = list(pool.map(_run_shard, shards))
    out = _Acc(
        tau=np.concatenate([p.tau for p in parts]),
        value=np.concatenate([p.value for p in parts]),
        payoff=np.concatenate([p.payoff for p in parts]),
        exit_pos=np.concatenate([p.exit_pos for p in parts]),
        hit=np.concatenate([p.hit for p in parts]),
        capped=np.concatenate([p.capped for p in parts]),
        s_sum=np.concatenate([p.s_sum for p in parts]) if parts[0].s_sum is not None else None,
    )
    out.drift_sum = float(np.sum(np.asarray([p.drift_sum for p in parts])))
    out.drift_sumsq = float(np.sum(np.asarray([p.drift_sumsq for p in parts])))
    out.drift_n = int(np.sum(np.asarray([p.drift_n for p in parts])))
    out.alpha_steps = int(np.sum(np.asarray([p.alpha_steps for p in parts])))
    out.alpha_plus = int(np.sum(np.asarray([p.alpha_plus for p in parts])))
    return out


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    n = x.size
    m = float(np.mean(x)) if n else 0.0
    se = float(np.std(x, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return m, se


# ---------------------------------------------------------------------------
# public estimators
# ---------------------------------------------------------------------------


@dataclass
class ValueEstimate:
    mean: float
    se: float
    n_paths: int
    n_capped: int


def estimate_value(x0, scn, n_paths: Optional[int] = None, seed: Optional[int] = None,
                   workers: Optional[int] = None) -> ValueEstimate:
    """Monte Carlo mean of eps^2*sum f + g(X_tau); the solver's oracle twin."""
    n = n_paths if n_paths is not None else scn.n_paths
    if n < 10**3:
        raise ValueError("estimate_value needs at least 10^3 paths")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if not bool(scn.domain.contains(x0)):
        raise ValueError("starting point must lie inside the domain")
    f = None if (scn.f.kind == "constant" and scn.f.value == 0.0) else scn.f
    g = None if (scn.g.kind == "constant" and scn.g.value == 0.0) else scn.g
    job = _Job(scn.domain, scn.family, scn.params.eps, scn.params.alpha, x0,
               f, g, None, False, default_step_cap(scn.params.eps),
               scn.seed if seed is None else seed)
    acc = _simulate(job, n, workers)
    ok = ~acc.capped
    mean, se = _mean_se(acc.value[ok])
    return ValueEstimate(mean, se, int(np.count_nonzero(ok)), int(np.count_nonzero(acc.capped)))


@dataclass
class WalkReport:
    n_paths: int
    exit_time_mean: float
    exit_time_var: float
    exit_time_se: float
    exit_time_sq_mean: float
    exit_time_sq_se: float
    bound_lower: float
    bound_upper: float
    bounds_ok: bool
    tail_t: np.ndarray
    tail_p: np.ndarray
    tail_slope: float
    tail_r2: float
    n_capped: int
    value_mean: Optional[float] = None
    value_se: Optional[float] = None
    hit_prob: Optional[float] = None
    hit_se: Optional[float] = None
    drift_mean: Optional[float] = None
    drift_se: Optional[float] = None

    def to_json(self) -> dict:
        d = {}
        for k, v in self.__dict__.items():
            if isinstance(v, np.ndarray):
                d[k] = v.tolist()
            else:
                d[k] = v
        return d


def exit_time_bounds(scn, x0) -> tuple[float, float]:
    """Explicit interval for E[eps^2 tau] from the one-step drift constants."""
    p = scn.params
    n = scn.domain.dim
    m2 = n / (n + 2.0)
    c_upper = p.alpha * p.lam**2 + p.beta * m2
    c_lower = p.beta * m2
    dist = float(_dist_to_boundary(scn.domain, x0))
    lower = dist**2 / c_upper
    upper = (scn.domain.diameter + p.lam * p.eps) ** 2 / c_lower
    return lower, upper


def _dist_to_boundary(domain: Domain, x0) -> float:
    x = np.atleast_1d(np.asarray(x0, dtype=float))
    d = x - domain.center
    if domain.kind == "ball":
        return float(domain.extent[0] - np.linalg.norm(d))
    return float(np.min(domain.extent - np.abs(d)))


def _tail_curve(e2t: np.ndarray, k: int = 40):
    tmax = float(np.max(e2t)) if e2t.size else 1.0
    t = np.linspace(0.0, tmax, k + 1)
    p = np.array([float(np.mean(e2t >= tt)) for tt in t])
    return t, p


def _tail_fit(t: np.ndarray, p: np.ndarray, n: int):
    # genuine tail only: skip the initial plateau and the last noisy decade
    keep = (p >= max(10.0 / n, 1e-12)) & (p <= 0.5)
    if np.count_nonzero(keep) < 3:
        keep = (p >= max(10.0 / n, 1e-12)) & (p < 1.0)
    if np.count_nonzero(keep) < 3:
        return 0.0, 0.0
    x, y = t[keep], np.log(p[keep])
    slope, intercept = np.polyfit(x, y, 1)
    fit = slope * x + intercept
    ss_res = float(np.sum((y - fit) ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(r2)


def exit_time_stats(x0, scn, n_paths: Optional[int] = None, seed: Optional[int] = None,
                    workers: Optional[int] = None) -> WalkReport:
    """Exit-time moments with the explicit drift-constant bound check and
    the fitted exponential tail."""
    p = scn.params
    if not p.eps < 1.0 / p.lam:
        raise ValueError("exit-time estimates assume eps < 1/Λ")
    n = n_paths if n_paths is not None else scn.n_paths
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    job = _Job(scn.domain, scn.family, p.eps, p.alpha, x0, None, None, None, False,
               default_step_cap(p.eps), scn.seed if seed is None else seed)
    acc = _simulate(job, n, workers)
    e2t = p.eps**2 * acc.tau[~acc.capped].astype(float)
    mean, se = _mean_se(e2t)
    sq_mean, sq_se = _mean_se(e2t**2)
    lower, upper = exit_time_bounds(scn, x0)
    t, pr = _tail_curve(e2t)
    slope, r2 = _tail_fit(t, pr, e2t.size)
    return WalkReport(
        n_paths=int(e2t.size),
        exit_time_mean=mean,
        exit_time_var=float(np.var(e2t, ddof=1)) if e2t.size > 1 else 0.0,
        exit_time_se=se,
        exit_time_sq_mean=sq_mean,
        exit_time_sq_se=sq_se,
        bound_lower=lower,
        bound_upper=upper,
        bounds_ok=bool(lower - 4 * se <= mean <= upper + 4 * se),
        tail_t=t,
        tail_p=pr,
        tail_slope=slope,
        tail_r2=r2,
        n_capped=int(np.count_nonzero(acc.capped)),
    )


@dataclass
class DriftReport:
    mean: float
    se: float
    n_steps: int
    lower: float
    upper: float
    ok: bool


def drift_check(x0, scn, n_steps: int = 10**5, seed: Optional[int] = None) -> DriftReport:
    """One-step increments of |X - x0|^2 along paths, against the
    supermartingale/submartingale constants."""
    p = scn.params
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    job = _Job(scn.domain, scn.family, p.eps, p.alpha, x0, None, None, None, True,
               default_step_cap(p.eps), scn.seed if seed is None else seed)
    total_sum = total_sumsq = 0.0
    total_n = 0
    chunk = 256
    start = 0
    while total_n < n_steps:
        job_i = _Job(job.domain, job.fam, job.eps, job.alpha, job.x0, None, None, None, True,
                     job.step_cap, (job.seed << 1) + start)
        acc = _simulate(job_i, chunk)
        total_sum += acc.drift_sum
        total_sumsq += acc.drift_sumsq
        total_n += acc.drift_n
        start += 1
    mean = total_sum / total_n
    var = max(total_sumsq / total_n - mean**2, 0.0) * total_n / max(total_n - 1, 1)
    se = math.sqrt(var / total_n)
    n = scn.domain.dim
    m2 = n / (n + 2.0)
    lower = p.beta * m2 * p.eps**2
    upper = (p.alpha * p.lam**2 + p.beta * m2) * p.eps**2
    ok = (lower - 4 * se) <= mean <= (upper + 4 * se)
    return DriftReport(mean, se, total_n, lower, upper, ok)


@dataclass
class HitEstimate:
    prob: float
    se: float
    n_paths: int


def hitting_prob(x0, A: Region, stop, scn, n_paths: Optional[int] = None,
                 seed: Optional[int] = None, workers: Optional[int] = None) -> HitEstimate:
    """Fraction of paths entering A strictly before exiting the stop region."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if not bool(stop.contains(x0)):
        raise ValueError("starting point must lie inside the stop region")
    if isinstance(A, Domain):
        A = Region((A,))
    n = n_paths if n_paths is not None else scn.n_paths
    job = _Job(stop, scn.family, scn.params.eps, scn.params.alpha, x0, None, None, A,
               False, default_step_cap(scn.params.eps), scn.seed if seed is None else seed)
    acc = _simulate(job, n, workers)
    phat = float(np.mean(acc.hit))
    se = math.sqrt(max(phat * (1 - phat), 1e-300) / n)
    return HitEstimate(phat, se, n)


# ---------------------------------------------------------------------------
# null-set right-hand-side failure demo
# ---------------------------------------------------------------------------


@dataclass
class LnFailureReport:
    n_paths: int
    payoff_mean: float  # E[eps^2 sum 1_S(X_i)]
    payoff_se: float
    exit_time_mean: float
    lN_norm: float  # exactly zero: S is a null set
    alpha_hit_rate: float
    alpha_hit_se: float
    floor: float  # 0.9*(alpha/2)*E[eps^2 tau]
    passed: bool
    conclusion: str

    def to_json(self) -> dict:
        return dict(self.__dict__)


def ln_abp_failure_demo(n_paths: int = 10**5, seed: int = 20240798,
                        workers: Optional[int] = None) -> LnFailureReport:
    """Null-set running payoff reached half the time by the steered branch.

    The walk lives on (-2, 2) with eps = 1, alpha = beta = 1/2 and a Dirac
    pair steering its '+' target onto a measure-zero set S (membership is
    tracked symbolically: the start and every '+' alpha-target are in S,
    everything else is not). The L^N norm of 1_S is exactly zero while the
    expected payoff stays bounded below, so no inequality of the form
    payoff <= C*||1_S||_N can hold.
    """
    domain = Domain.ball([0.0], 2.0)
    fam = MeasureFamily.dirac_pair([1.0], lam=1.0)
    job = _Job(domain, fam, 1.0, 0.5, np.zeros(1), None, None, None, False,
               default_step_cap(1.0), seed, track_S=True)
    acc = _simulate(job, n_paths, workers)
    mean, se = _mean_se(acc.s_sum)
    e2t = acc.tau.astype(float)  # eps = 1
    et_mean = float(np.mean(e2t))
    rate = acc.alpha_plus / max(acc.alpha_steps, 1)
    rate_se = math.sqrt(max(rate * (1 - rate), 1e-300) / max(acc.alpha_steps, 1))
    floor = 0.9 * (0.5 / 2.0) * et_mean
    passed = mean >= floor and mean >= 0.1
    concl = (
        "classical L^N right-hand side is 0 but the expected null-set payoff "
        f"is {mean:.3f} >= {floor:.3f}; the L^N bound fails"
    )
    return LnFailureReport(n_paths, mean, se, et_mean, 0.0, rate, rate_se, floor, passed, concl)
