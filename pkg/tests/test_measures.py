import numpy as np
import pytest

from dpp_lab.dpp_core import GridFunction
from dpp_lab.fields import FieldSpec, VectorField
from dpp_lab.geometry import Domain, build_grid
from dpp_lab.measures import (
    DirectionSet,
    MeasureFamily,
    check_symmetry,
    expect,
    increment_quadrature,
    pucci_extreme,
    sample,
    sample_n,
)


def mc_oracle_second_moment(fam, x, n=10**5, seed=17):
    rng = np.random.Generator(np.random.Philox(key=seed))
    z = sample_n(fam, x, rng, n)
    v = np.einsum("ij,ij->i", z, z)
    return float(v.mean()), float(v.std(ddof=1) / np.sqrt(n))


def test_expect_dirac_linear_vanishes():
    fam = MeasureFamily.dirac_pair([1.0])
    val = expect(fam, [0.0], 0.3, lambda p: p[..., 0])
    assert val == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("dim", [1, 2])
def test_expect_uniform_ball_second_moment(dim):
    # closed form eps^2 N/(N+2), cross-checked by a Monte Carlo oracle
    fam = MeasureFamily.uniform_ball(1.0, lam=1.0, dim=dim)
    x = np.zeros(dim)
    eps = 0.7
    phi = lambda p: np.einsum("...i,...i->...", p - x, p - x)
    val = expect(fam, x, eps, phi)
    exact = eps**2 * dim / (dim + 2.0)
    assert val == pytest.approx(exact, rel=1e-6)
    mc, se = mc_oracle_second_moment(fam, x)
    assert abs(mc - dim / (dim + 2.0)) < 4 * se


def test_expect_mixture_by_hand():
    fam = MeasureFamily.mixture([[1.0], [-1.0]], [0.5, 0.5])
    x, eps = np.array([0.4]), 0.25
    phi = lambda p: (p[..., 0] - 0.4) ** 2
    assert expect(fam, x, eps, phi) == pytest.approx(eps**2, rel=1e-14)


def test_expect_rejects_pucci_control():
    fam = MeasureFamily.pucci_control(DirectionSet.lattice(1.0, 1, 4))
    with pytest.raises(ValueError, match="pucci"):
        expect(fam, [0.0], 0.1, lambda p: p[..., 0])


def test_sample_dirac_two_point():
    fam = MeasureFamily.dirac_pair([1.0, 0.0], lam=1.0)
    rng = np.random.Generator(np.random.Philox(key=3))
    z = sample_n(fam, [0.0, 0.0], rng, 10**5)
    assert np.all(np.isin(z[:, 0], [1.0, -1.0])) and np.all(z[:, 1] == 0.0)
    assert abs(z[:, 0].mean()) < 3.0 / np.sqrt(10**5)


def test_sample_ellipsoid_shell_support():
    fam = MeasureFamily.ellipsoid_shell((2.0, 2.0), lam=2.0)
    rng = np.random.Generator(np.random.Philox(key=5))
    z = sample_n(fam, [0.0, 0.0], rng, 5000)
    norms = np.linalg.norm(z, axis=1)
    assert np.all(norms >= 1.0) and np.all(norms <= 2.0 + 1e-12)


def test_sampler_expectation_agreement():
    # statistical invariant: MC mean of |z|^2 within 4 SE of the quadrature
    for fam in (
        MeasureFamily.uniform_ball(0.8, lam=1.0, dim=2),
        MeasureFamily.ellipsoid_shell((1.7, 1.2), rotation=0.4, lam=2.0),
        MeasureFamily.mixture([[0.5, 0.1], [-0.5, -0.1]], [0.5, 0.5]),
        MeasureFamily.pushforward(("y0", "y1"), lam=1.0, dim=2),
    ):
        x = np.zeros(2)
        val = expect(fam, x, 1.0, lambda p: np.einsum("...i,...i->...", p, p))
        mc, se = mc_oracle_second_moment(fam, x)
        assert abs(mc - val) < 4 * max(se, 1e-4), fam.kind


def test_support_invariant(rng):
    fams = [
        MeasureFamily.uniform_ball(1.0, lam=1.5, dim=2),
        MeasureFamily.dirac_pair([0.3, -0.4], lam=1.0),
        MeasureFamily.ellipsoid_shell((1.3, 1.1), rotation=FieldSpec.formula("theta"), lam=1.5),
        MeasureFamily.pushforward(("y0 + 0.2", "y1"), lam=1.0, dim=2),
        MeasureFamily.mixture([[1.0, 0.0], [-1.0, 0.0]], [0.5, 0.5], lam=1.0),
    ]
    for fam in fams:
        for _ in range(20):
            x = rng.uniform(-1, 1, size=2)
            g = np.random.Generator(np.random.Philox(key=int(rng.integers(0, 2**32))))
            z = sample_n(fam, x, g, 50)
            assert np.all(np.linalg.norm(z, axis=1) <= fam.lam + 1e-12), fam.kind


def test_quadrature_is_probability_and_kills_linear(rng):
    for fam in (
        MeasureFamily.uniform_ball(0.9, lam=1.0, dim=2),
        MeasureFamily.ellipsoid_shell((1.8, 1.3), rotation=0.7, lam=2.0),
        MeasureFamily.mixture([[0.5, 0.0], [-0.5, 0.0]], [0.5, 0.5]),
        MeasureFamily.dirac_pair([0.2, 0.9], lam=1.0),
        MeasureFamily.pushforward(("y0", "y1"), lam=1.0, dim=2),
    ):
        x = rng.uniform(-0.5, 0.5, size=2)
        one = expect(fam, x, 0.3, lambda p: np.ones(p.shape[:-1]))
        assert one == pytest.approx(1.0, abs=1e-12)
        lin = expect(fam, x, 0.3, lambda p: 2.0 * p[..., 0] - p[..., 1] + 0.5)
        expected = 2.0 * x[0] - x[1] + 0.5
        tol = 1e-10 if fam.kind != "pushforward" else 1e-10
        assert lin == pytest.approx(expected, abs=1e-9), fam.kind


def _quad_gridfun(h=0.025, lam=2.0, eps=0.1):
    grid = build_grid(Domain.box([-1.0, -1.0], [1.0, 1.0]), h, lam * eps)
    return GridFunction.from_callable(grid, lambda p: np.einsum("...i,...i->...", p, p))


def test_pucci_extreme_linear_zero():
    grid = build_grid(Domain.box([-1.0, -1.0], [1.0, 1.0]), 0.05, 0.2)
    u = GridFunction.from_callable(grid, lambda p: 3.0 * p[..., 0] - p[..., 1] + 1.0)
    dirs = DirectionSet.lattice(2.0, 2, 4)
    for sign in ("max", "min"):
        assert pucci_extreme(dirs, [0.0, 0.0], 0.1, u, sign).value == pytest.approx(0.0, abs=1e-10)


def test_pucci_extreme_quadratic():
    # delta u(x, eps z) = 2 eps^2 |z|^2 for u = |y|^2; max at |z| = lam
    u = _quad_gridfun(h=0.025, lam=2.0, eps=0.1)
    dirs = DirectionSet.lattice(2.0, 2, 8)
    mx = pucci_extreme(dirs, [0.0, 0.0], 0.1, u, "max")
    mn = pucci_extreme(dirs, [0.0, 0.0], 0.1, u, "min")
    assert mx.value == pytest.approx(0.1**2 * 2.0**2, abs=1e-10)
    assert np.linalg.norm(mx.direction) == pytest.approx(2.0, abs=1e-12)
    assert mn.value == pytest.approx(0.0, abs=1e-12)  # z = 0 is in the set
    assert np.all(mn.direction == 0.0)


def test_pucci_max_geq_min_random(rng):
    grid = build_grid(Domain.box([-1.0], [1.0]), 0.05, 0.2)
    dirs = DirectionSet.lattice(1.0, 1, 4)
    for _ in range(100):
        u = GridFunction(grid, rng.normal(size=grid.shape))
        mx = pucci_extreme(dirs, [0.0], 0.1, u, "max").value
        mn = pucci_extreme(dirs, [0.0], 0.1, u, "min").value
        assert mx >= mn


def test_pucci_dominates_mixture_expectation(rng):
    # sup of pair means >= any convex combination over atoms in the set
    grid = build_grid(Domain.box([-1.0], [1.0]), 0.05, 0.2)
    dirs = DirectionSet.lattice(1.0, 1, 4)
    fam = MeasureFamily.mixture([[0.5], [-0.5], [1.0], [-1.0]], [0.3, 0.3, 0.2, 0.2])
    for _ in range(50):
        u = GridFunction(grid, rng.normal(size=grid.shape))
        x = np.array([0.0])
        eps = 0.1
        mean_dd = expect(fam, x, eps, u) + expect(fam, x, -eps, u) - 2 * float(u(x))
        assert pucci_extreme(dirs, x, eps, u, "max").value >= mean_dd / 2.0 - 1e-12


def test_empty_direction_set():
    with pytest.raises(ValueError):
        DirectionSet(np.empty((0, 1)), 1.0)


def test_check_symmetry_structural_and_statistical():
    assert check_symmetry(MeasureFamily.dirac_pair([1.0]), [0.0], 10**3).passed
    ident = MeasureFamily.pushforward(("y0", "y1"), lam=1.0, dim=2)
    rep = check_symmetry(ident, [0.0, 0.0], 10**4)
    assert not rep.structural and rep.passed
    shifted = MeasureFamily.pushforward(("y0 + 0.3", "y1"), lam=1.0, dim=2)
    rep = check_symmetry(shifted, [0.0, 0.0], 10**4)
    assert not rep.passed  # mean 0.3 != 0 breaks z ~ -z


def test_mixture_validation():
    with pytest.raises(ValueError, match="negation"):
        MeasureFamily.mixture([[1.0], [0.5]], [0.5, 0.5])
    with pytest.raises(ValueError, match="sum"):
        MeasureFamily.mixture([[1.0], [-1.0]], [0.6, 0.5])
    with pytest.raises(ValueError, match="Λ-ball"):
        MeasureFamily.mixture([[2.0], [-2.0]], [0.5, 0.5], lam=1.0)
