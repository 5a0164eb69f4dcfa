import numpy as np
import pytest

from dpp_lab.geometry import (
    COLLAR,
    EXTERIOR,
    INTERIOR,
    Cube,
    Domain,
    build_grid,
    dyadic_pre,
    dyadic_split,
    eps_cover,
    make_collar,
)


def test_collar_interval_membership():
    dom = Domain.box([-1.0], [1.0])
    col = make_collar(dom, 0.1)
    assert bool(col.contains(np.array([1.05])))
    assert not bool(col.contains(np.array([1.15])))
    with pytest.raises(ValueError):
        make_collar(dom, 0.0)


def test_collar_of_ball_is_ball():
    col = make_collar(Domain.ball([0.0, 0.0], 1.0), 0.5)
    big = Domain.ball([0.0, 0.0], 1.5)
    pts = np.random.default_rng(0).uniform(-2, 2, size=(500, 2))
    assert np.array_equal(col.contains(pts), big.contains(pts))


def test_collar_corner_distance():
    # hand computation: dist((1.07,1.07), box) = sqrt(2)*0.07 ~ 0.099 < 0.1
    col = make_collar(Domain.box([0.0, 0.0], [1.0, 1.0]), 0.1)
    assert bool(col.contains(np.array([1.07, 1.07])))
    assert not bool(col.contains(np.array([1.071, 1.071])))


def test_collar_monotone_in_margin():
    dom = Domain.ball([0.5], 0.7)
    pts = np.random.default_rng(1).uniform(-2, 2, size=(400, 1))
    small = make_collar(dom, 0.2).contains(pts)
    big = make_collar(dom, 0.5).contains(pts)
    assert np.all(big[small])


def test_eps_cover_single_point():
    cubes = eps_cover(np.array([[0.1]]), 4.0)
    assert len(cubes) == 1
    assert cubes[0].side == pytest.approx(1.0)
    assert bool(cubes[0].closure_contains(np.array([0.1])))


def test_eps_cover_interval():
    # lattice cells of side 1 meeting [0, 2.5]; 3 or 4 depending on alignment
    cubes = eps_cover(Domain.box([0.0], [2.5]), 4.0)
    assert len(cubes) in (3, 4)
    centers = sorted(float(c.center[0]) for c in cubes)
    assert centers[0] == pytest.approx(0.0)
    # union of closures covers the region
    xs = np.linspace(0.001, 2.499, 997).reshape(-1, 1)
    covered = np.zeros(xs.shape[0], dtype=bool)
    for c in cubes:
        covered |= c.closure_contains(xs)
    assert covered.all()


def test_eps_cover_lattice_corner_point():
    # a point on a cube corner belongs to up to 4 closures in 2D
    eps = 4.0 * np.sqrt(2.0)  # side 1 cubes
    cubes = eps_cover(np.array([[0.5, 0.5]]), eps)
    assert 1 <= len(cubes) <= 4
    assert len(cubes) == 4  # exact corner of the side-1 lattice


def test_eps_cover_disjoint_and_covering(rng):
    dom = Domain.ball([0.2, -0.1], 0.8)
    eps = 0.9
    cubes = eps_cover(dom, eps)
    n = 2
    side = eps / (4.0 * np.sqrt(n))
    for c in cubes:
        assert c.side == pytest.approx(side)
        assert np.allclose(c.center / side, np.round(c.center / side), atol=1e-9)
    centers = np.array([c.center for c in cubes])
    keys = {tuple(np.round(c / side).astype(int)) for c in centers}
    assert len(keys) == len(cubes)  # disjoint lattice cells
    # 1000 random points of the region lie in some closure
    pts = rng.uniform(-1.1, 1.1, size=(4000, 2))
    pts = pts[dom.contains(pts)][:1000]
    for c_arr in [pts]:
        covered = np.zeros(c_arr.shape[0], dtype=bool)
        for c in cubes:
            covered |= c.closure_contains(c_arr)
        assert covered.all()


def test_eps_cover_empty():
    assert eps_cover(np.empty((0, 2)), 1.0) == []
    with pytest.raises(ValueError):
        eps_cover(np.array([[0.0]]), -1.0)


def test_dyadic_split_1d():
    q = Cube(np.array([0.0]), 1.0)
    kids = dyadic_split(q)
    assert len(kids) == 2
    assert sorted(float(k.center[0]) for k in kids) == [-0.25, 0.25]
    assert all(k.side == 0.5 and k.generation == 1 for k in kids)


def test_dyadic_split_2d_quadrants():
    q = Cube(np.array([0.0, 0.0]), 1.0)
    kids = dyadic_split(q)
    assert len(kids) == 4
    assert all(k.side == 0.5 for k in kids)
    # closures tile the parent
    pts = np.random.default_rng(3).uniform(-0.5, 0.5, size=(300, 2))
    counts = np.zeros(300, dtype=int)
    for k in kids:
        counts += k.closure_contains(pts)
    assert np.all(counts >= 1)


def test_dyadic_pre_roundtrip(rng):
    for _ in range(100):
        dim = int(rng.integers(1, 3))
        q = Cube(rng.uniform(-2, 2, size=dim), float(rng.uniform(0.1, 3.0)),
                 generation=int(rng.integers(0, 4)))
        for child in dyadic_split(q):
            assert dyadic_pre(child) is q


def test_dyadic_pre_generation_zero():
    with pytest.raises(ValueError):
        dyadic_pre(Cube(np.array([0.0]), 1.0, generation=0))


def test_build_grid_1d_example():
    grid = build_grid(Domain.box([-1.0], [1.0]), 0.5, 1.0)
    xs = grid.axes()[0]
    interior = sorted(xs[grid.interior_mask])
    assert interior == pytest.approx([-0.5, 0.0, 0.5])  # endpoints excluded (open set)
    collar = sorted(xs[grid.collar_mask])
    assert all(1.0 <= abs(x) <= 2.0 for x in collar)
    assert 1.0 in collar and -1.0 in collar  # boundary nodes classified collar


def test_build_grid_2d_ball():
    grid = build_grid(Domain.ball([0.0, 0.0], 1.0), 1.0, 1.0)
    ints = grid.interior_points()
    assert ints.shape == (1, 2)
    assert np.allclose(ints[0], [0.0, 0.0])


def test_build_grid_no_interior():
    with pytest.raises(ValueError, match="no interior node"):
        build_grid(Domain.box([0.3], [0.7]), 1.0, 1.0)
    with pytest.raises(ValueError):
        build_grid(Domain.box([-1.0], [1.0]), -0.1, 1.0)


def test_grid_stencil_coverage(rng):
    # every point x + eps*z (|z| <= lam) evaluated at an interior node has
    # its interpolation corners on classified (interior|collar) nodes
    lam, eps, h = 2.0, 0.3, 0.075
    grid = build_grid(Domain.ball([0.1, -0.2], 0.9), h, lam * eps)
    ints = grid.interior_points()
    cls = grid.classification
    for _ in range(300):
        x = ints[rng.integers(0, ints.shape[0])]
        z = rng.normal(size=2)
        z = z / np.linalg.norm(z) * lam * rng.random() ** 0.5
        p = x + eps * z
        base = np.floor(p / h).astype(int) - grid.idx_lo
        for corner in ((0, 0), (0, 1), (1, 0), (1, 1)):
            idx = tuple(base + np.array(corner))
            assert cls[idx] != EXTERIOR
