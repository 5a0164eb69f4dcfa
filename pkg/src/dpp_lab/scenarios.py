"""Scenario definitions: a complete problem description plus built-ins.

A scenario bundles the domain, step parameters, measure family, source and
boundary data, grid spacing, seed and path counts. Configs are JSON with
keys matching the field names; hashes are content hashes of the canonical
JSON used to key output directories.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dpp_core import Params, TransitionOperator, assemble_transition
from .fields import FieldSpec, VectorField
from .geometry import Domain, Grid, build_grid
from .measures import DirectionSet, MeasureFamily

__all__ = ["Scenario", "ScenarioError", "scenario_load", "scenario_list", "get_scenario"]


class ScenarioError(ValueError):
    pass


@dataclass
class Scenario:
    name: str
    domain: Domain
    params: Params
    h: float
    family: MeasureFamily
    f: FieldSpec = field(default_factory=lambda: FieldSpec.constant(0.0))
    g: FieldSpec = field(default_factory=lambda: FieldSpec.constant(0.0))
    seed: int = 1
    n_paths: int = 10_000
    tol: Optional[float] = None
    dirs_m: int = 8
    alpha_field: Optional[FieldSpec] = None
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        self._grid = None
        self._op = None
        self.validate()

    # -- validation ----------------------------------------------------

    def validate(self):
        p = self.params
        if self.h <= 0:
            raise ScenarioError("h: grid spacing must be positive")
        if self.h > p.eps / 4.0 + 1e-12:
            raise ScenarioError(
                f"h: ball quadrature needs h ≤ eps/4 (h={self.h}, eps={p.eps})"
            )
        if self.family.lam != p.lam:
            raise ScenarioError("family.lam: measure family and Params disagree on Λ")
        if self.family.kind != "pucci-control" and self.family.dim != self.domain.dim:
            raise ScenarioError("family.dim: measure family dimension must match the domain")
        if self.alpha_field is not None and self.family.kind != "pucci-control":
            raise ScenarioError("alpha_field: variable coefficients run through the extremal solver only")
        self.warnings = []
        size = float(np.min(2.0 * self.domain.extent)) if self.domain.kind == "box" else 2.0 * float(self.domain.extent[0])
        if p.eps >= 0.5 * size:
            self.warnings.append(
                f"eps: step {p.eps} is at least half the domain size {size}; asymptotic estimates unreliable"
            )

    # -- cached derived objects ----------------------------------------

    def grid(self) -> Grid:
        if self._grid is None:
            self._grid = build_grid(self.domain, self.h, self.params.lam * self.params.eps)
        return self._grid

    def transition(self) -> TransitionOperator:
        if self._op is None:
            self._op = assemble_transition(self.grid(), self.family, self.params)
        return self._op

    def direction_set(self) -> DirectionSet:
        if self.family.kind == "pucci-control" and self.family.dirs is not None:
            return self.family.dirs
        return DirectionSet.lattice(self.params.lam, self.domain.dim, self.dirs_m)

    def with_overrides(self, **kw) -> "Scenario":
        """Copy with replaced fields; eps/h/seed may be passed directly."""
        params = self.params
        if "eps" in kw:
            params = Params(kw.pop("eps"), params.alpha, params.beta, params.lam)
        if "params" in kw:
            params = kw.pop("params")
        return dataclasses.replace(self, params=params, **kw)

    # -- serialization ---------------------------------------------------

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "domain": {
                "kind": self.domain.kind,
                "center": self.domain.center.tolist(),
                "extent": self.domain.extent.tolist(),
            },
            "params": {
                "eps": self.params.eps,
                "alpha": self.params.alpha,
                "beta": self.params.beta,
                "lam": self.params.lam,
            },
            "h": self.h,
            "family": self.family.to_json(),
            "f": self.f.to_json(),
            "g": self.g.to_json(),
            "seed": self.seed,
            "n_paths": self.n_paths,
            "tol": self.tol,
            "dirs_m": self.dirs_m,
            "alpha_field": None if self.alpha_field is None else self.alpha_field.to_json(),
            "extras": self.extras,
        }

    @staticmethod
    def from_json(d: dict) -> "Scenario":
        try:
            dom = Domain(d["domain"]["kind"], d["domain"]["center"], d["domain"]["extent"])
            pp = d["params"]
            params = Params(float(pp["eps"]), float(pp["alpha"]), float(pp["beta"]), float(pp.get("lam", 1.0)))
            fam = MeasureFamily.from_json(d["family"])
            alpha_field = d.get("alpha_field")
            return Scenario(
                name=d.get("name", "unnamed"),
                domain=dom,
                params=params,
                h=float(d["h"]),
                family=fam,
                f=FieldSpec.from_json(d.get("f", 0.0)),
                g=FieldSpec.from_json(d.get("g", 0.0)),
                seed=int(d.get("seed", 1)),
                n_paths=int(d.get("n_paths", 10_000)),
                tol=d.get("tol"),
                dirs_m=int(d.get("dirs_m", 8)),
                alpha_field=None if alpha_field is None else FieldSpec.from_json(alpha_field),
                extras=d.get("extras", {}),
            )
        except ScenarioError:
            raise
        except (KeyError, TypeError, ValueError) as e:
            raise ScenarioError(f"scenario config invalid: {e}") from e

    def content_hash(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def scenario_load(path) -> Scenario:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as e:
            raise ScenarioError(f"scenario config does not parse: {e}") from e
    return Scenario.from_json(data)


# ---------------------------------------------------------------------------
# built-ins
# ---------------------------------------------------------------------------


def _linear_1d() -> Scenario:
    return Scenario(
        name="linear-1d",
        domain=Domain.box([-1.0], [1.0]),
        params=Params(0.1, 0.5, 0.5, 1.0),
        h=0.025,
        family=MeasureFamily.dirac_pair([1.0], lam=1.0),
        f=FieldSpec.constant(1.0),
        g=FieldSpec.constant(0.0),
        seed=20240790,
        n_paths=20_000,
    )


def _mixture_1d() -> Scenario:
    return Scenario(
        name="mixture-1d",
        domain=Domain.box([-1.0], [1.0]),
        params=Params(0.1, 0.5, 0.5, 1.0),
        h=0.025,
        family=MeasureFamily.mixture([[1.0], [-1.0], [0.5], [-0.5]], [0.25, 0.25, 0.25, 0.25], lam=1.0),
        f=FieldSpec.constant(1.0),
        g=FieldSpec.constant(0.0),
        seed=20240791,
        n_paths=20_000,
    )


def _uniform_2d() -> Scenario:
    return Scenario(
        name="uniform-2d",
        domain=Domain.ball([0.0, 0.0], 1.0),
        params=Params(0.1, 0.5, 0.5, 1.0),
        h=0.025,
        family=MeasureFamily.uniform_ball(1.0, lam=1.0, dim=2),
        f=FieldSpec.constant(1.0),
        g=FieldSpec.constant(0.0),
        seed=20240792,
        n_paths=20_000,
    )


def _exit_1d() -> Scenario:
    return Scenario(
        name="exit-1d",
        domain=Domain.box([-1.0], [1.0]),
        params=Params(0.1, 0.0, 1.0, 1.0),
        h=0.025,
        family=MeasureFamily.uniform_ball(1.0, lam=1.0, dim=1),
        f=FieldSpec.constant(0.0),
        g=FieldSpec.constant(0.0),
        seed=20240793,
        n_paths=100_000,
    )


def _ellipsoid_2d() -> Scenario:
    # rotating shell: long axis aligned with the position angle; the
    # branch weights match the ellipsoid volume (|E| = 2|B_1| for axes (1,2))
    return Scenario(
        name="ellipsoid-2d",
        domain=Domain.ball([0.0, 0.0], 0.6),
        params=Params(0.08, 0.5, 0.5, 2.0),
        h=0.02,
        family=MeasureFamily.ellipsoid_shell((2.0, 1.0), rotation=FieldSpec.formula("theta"), lam=2.0),
        f=FieldSpec.constant(0.0),
        g=FieldSpec.formula("abs(x0)"),
        seed=20240794,
        n_paths=20_000,
        extras={"profile": {"r_max": 0.45, "ladder": 1.5, "center": [0.0, 0.0]}},
    )


def _plaplace_2d() -> Scenario:
    # tug-of-war style direction field d = ∇v/|∇v| for the 2-harmonic
    # v = log r on a domain away from the singularity
    return Scenario(
        name="plaplace-2d",
        domain=Domain.ball([1.5, 0.0], 1.0),
        params=Params(0.1, 0.5, 0.5, 1.0),
        h=0.025,
        family=MeasureFamily.dirac_pair(VectorField.formula(("x0/r", "x1/r")), lam=1.0, dim=2),
        f=FieldSpec.constant(0.0),
        g=FieldSpec.formula("log(r)"),
        seed=20240795,
        n_paths=20_000,
    )


def _pxlaplace_2d() -> Scenario:
    # variable alpha(x), beta(x) exercised through the extremal solver;
    # beta_min = 0.5 is surfaced by the solve log
    return Scenario(
        name="pxlaplace-2d",
        domain=Domain.ball([0.0, 0.0], 1.0),
        params=Params(0.1, 0.5, 0.5, 1.0),
        h=0.025,
        family=MeasureFamily.pucci_control(DirectionSet.lattice(1.0, 2, 8)),
        f=FieldSpec.constant(0.0),
        g=FieldSpec.formula("x0*x1"),
        seed=20240796,
        n_paths=10_000,
        alpha_field=FieldSpec.formula("0.3 + 0.2*sin(3*theta)"),
    )


def _bump_1d() -> Scenario:
    return Scenario(
        name="bump-1d",
        domain=Domain.box([-1.0], [1.0]),
        params=Params(0.1, 0.5, 0.5, 1.0),
        h=0.025,
        family=MeasureFamily.dirac_pair([1.0], lam=1.0),
        f=FieldSpec.formula("1 + cos(pi*x)/2"),
        g=FieldSpec.constant(0.0),
        seed=20240797,
        n_paths=20_000,
    )


def _ln_failure_1d() -> Scenario:
    return Scenario(
        name="ln-failure-1d",
        domain=Domain.ball([0.0], 2.0),
        params=Params(1.0, 0.5, 0.5, 1.0),
        h=0.25,
        family=MeasureFamily.dirac_pair([1.0], lam=1.0),
        f=FieldSpec.constant(0.0),  # the running payoff is the symbolic null-set indicator
        g=FieldSpec.constant(0.0),
        seed=20240798,
        n_paths=100_000,
    )


_BUILTINS = {
    "linear-1d": _linear_1d,
    "mixture-1d": _mixture_1d,
    "uniform-2d": _uniform_2d,
    "exit-1d": _exit_1d,
    "ellipsoid-2d": _ellipsoid_2d,
    "plaplace-2d": _plaplace_2d,
    "pxlaplace-2d": _pxlaplace_2d,
    "bump-1d": _bump_1d,
    "ln-failure-1d": _ln_failure_1d,
}


def scenario_list() -> list[str]:
    return sorted(_BUILTINS)


def get_scenario(name: str, **overrides) -> Scenario:
    if name not in _BUILTINS:
        raise ScenarioError(f"unknown built-in scenario {name!r}; known: {', '.join(scenario_list())}")
    scn = _BUILTINS[name]()
    return scn.with_overrides(**overrides) if overrides else scn
