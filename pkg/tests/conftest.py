import numpy as np
import pytest

from dpp_lab.dpp_core import Params
from dpp_lab.fields import FieldSpec
from dpp_lab.geometry import Domain
from dpp_lab.measures import DirectionSet, MeasureFamily
from dpp_lab.scenarios import Scenario


def mixture_from_dirs(rng, dirs: DirectionSet, n_pairs: int = 3) -> MeasureFamily:
    """Random symmetric finite mixture whose atoms all lie in the direction set."""
    vecs = dirs.vectors
    nz = np.flatnonzero(np.einsum("ij,ij->i", vecs, vecs) > 1e-12)
    # one representative per antipodal pair so weights stay paired
    half = [i for i in nz if next(v for v in vecs[i] if v != 0.0) > 0]
    picks = rng.choice(half, size=min(n_pairs, len(half)), replace=False)
    n_pairs = len(picks)
    atoms, weights = [], []
    w = rng.random(n_pairs) + 0.1
    w = w / (2 * w.sum())
    for k, i in enumerate(picks):
        atoms += [vecs[i], -vecs[i]]
        weights += [w[k], w[k]]
    return MeasureFamily.mixture(np.asarray(atoms), np.asarray(weights), lam=dirs.lam)


def random_scenario(rng, dim: int = 1, eps: float = 0.2, lam: float = 1.0,
                    dirs_m: int = 4, f_const: float = None, g_expr: str = None) -> Scenario:
    """Small random scenario with mixture atoms inside the direction lattice."""
    dirs = DirectionSet.lattice(lam, dim, dirs_m)
    fam = mixture_from_dirs(rng, dirs, n_pairs=2 + int(rng.integers(0, 3)))
    dom = Domain.box([-1.0] * dim, [1.0] * dim) if dim == 1 else Domain.ball([0.0, 0.0], 1.0)
    alpha = float(rng.uniform(0.2, 0.8))
    fc = float(rng.uniform(0.0, 2.0)) if f_const is None else f_const
    g = FieldSpec.formula(g_expr) if g_expr else FieldSpec.constant(float(rng.uniform(-1, 1)))
    return Scenario(
        name=f"random-{dim}d",
        domain=dom,
        params=Params(eps, alpha, 1.0 - alpha, lam),
        h=eps / 4.0,
        family=fam,
        f=FieldSpec.constant(fc),
        g=g,
        seed=int(rng.integers(0, 2**31)),
        n_paths=2000,
        dirs_m=dirs_m,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240810)
