"""Linear-Gaussian additive structural causal models.

Every endogenous variable is a linear combination of its endogenous parents
plus one exogenous Gaussian source with unit loading.  Environments are
produced by shifting the mean and rescaling the standard deviation of the
exogenous sources; structural coefficients never change.

Sampling uses numpy's counter-based Philox4x64 bit generator keyed by
``SeedSequence(seed)``.  All exogenous draws for a call come from a single
``standard_normal((n, n_exogenous))`` block in declared exogenous order, so
output is a pure function of ``(spec, intervention, n, seed)`` and two
interventions sampled with the same seed share their standard-normal noise.

Sample variances follow the population convention (denominator ``n``)
throughout the package.
"""

from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    CyclicGraph,
    ParseError,
    SingularCovariance,
    UnknownName,
    ValidationError,
)

try:  # Python >= 3.11
    import tomllib as _toml_reader
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as _toml_reader

ROLES = ("observed", "hidden", "target")


@dataclass(frozen=True)
class ExogenousSpec:
    name: str
    mean: float = 0.0
    variance: float = 1.0

    def __post_init__(self):
        if not self.variance >= 0 or not math.isfinite(self.variance):
            raise ValidationError(f"variance must be finite and >= 0, got {self.variance}", key=self.name)
        if not math.isfinite(self.mean):
            raise ValidationError("mean must be finite", key=self.name)


@dataclass(frozen=True)
class StructuralEquation:
    """``target := sum(coef * parent) + exogenous_source``."""

    target: str
    parent_coefficients: Mapping[str, float]
    exogenous_source: str

    def __post_init__(self):
        object.__setattr__(self, "parent_coefficients", dict(self.parent_coefficients))
        if self.target in self.parent_coefficients:
            raise CyclicGraph(f"self-loop on {self.target!r}")


@dataclass(frozen=True)
class SCMSpec:
    equations: tuple[StructuralEquation, ...]
    exogenous: tuple[ExogenousSpec, ...]
    roles: Mapping[str, str]

    def __post_init__(self):
        object.__setattr__(self, "equations", tuple(self.equations))
        object.__setattr__(self, "exogenous", tuple(self.exogenous))
        object.__setattr__(self, "roles", dict(self.roles))
        names = [u.name for u in self.exogenous]
        if len(set(names)) != len(names):
            raise ValidationError("exogenous names must be unique")
        targets = [eq.target for eq in self.equations]
        if len(set(targets)) != len(targets):
            raise ValidationError("each endogenous variable needs exactly one equation")

    @property
    def endogenous(self) -> list[str]:
        return [eq.target for eq in self.equations]

    @property
    def exogenous_names(self) -> list[str]:
        return [u.name for u in self.exogenous]

    @property
    def observed(self) -> list[str]:
        return [k for k, r in self.roles.items() if r == "observed"]

    @property
    def target(self) -> str:
        (name,) = [k for k, r in self.roles.items() if r == "target"]
        return name

    def exogenous_spec(self, name: str) -> ExogenousSpec:
        for u in self.exogenous:
            if u.name == name:
                return u
        raise UnknownName(f"unknown exogenous variable {name!r}")

    def equation(self, target: str) -> StructuralEquation:
        for eq in self.equations:
            if eq.target == target:
                return eq
        raise UnknownName(f"unknown endogenous variable {target!r}")

    def descendants(self, exogenous_name: str) -> set[str]:
        """Endogenous variables whose value depends on ``exogenous_name``."""
        out = set()
        for v in validate_and_order(self):
            eq = self.equation(v)
            if eq.exogenous_source == exogenous_name or any(p in out for p in eq.parent_coefficients):
                out.add(v)
        return out


@dataclass(frozen=True)
class Intervention:
    """Mean shifts and standard-deviation multipliers for exogenous sources."""

    shifts: Mapping[str, float] = field(default_factory=dict)
    scales: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "shifts", dict(self.shifts))
        object.__setattr__(self, "scales", dict(self.scales))
        for k, s in self.scales.items():
            if not s > 0 or not math.isfinite(s):
                raise ValidationError(f"scale must be > 0, got {s}", key=k)

    def check_against(self, spec: SCMSpec) -> None:
        known = set(spec.exogenous_names)
        for k in (*self.shifts, *self.scales):
            if k not in known:
                raise UnknownName(f"intervention references unknown exogenous {k!r}")

    def exogenous_moments(self, spec: SCMSpec) -> tuple[np.ndarray, np.ndarray]:
        """(means, variances) of the exogenous sources under this intervention."""
        self.check_against(spec)
        mu = np.array([u.mean + self.shifts.get(u.name, 0.0) for u in spec.exogenous])
        var = np.array([u.variance * self.scales.get(u.name, 1.0) ** 2 for u in spec.exogenous])
        return mu, var


NO_INTERVENTION = Intervention()


@dataclass(frozen=True, eq=False)
class EnvironmentData:
    x: np.ndarray
    y: np.ndarray
    env_id: str
    feature_names: tuple[str, ...]

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if x.ndim != 2:
            raise ValidationError(f"x must be 2-D, got shape {x.shape}", key=self.env_id)
        if x.shape[0] != y.shape[0]:
            raise ValidationError(f"x has {x.shape[0]} rows but y has {y.shape[0]}", key=self.env_id)
        if x.shape[1] != len(self.feature_names):
            raise ValidationError("feature_names does not match x columns", key=self.env_id)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValidationError("non-finite entries", key=self.env_id)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    @property
    def n(self) -> int:
        return self.x.shape[0]

    def subset(self, idx, env_id=None) -> "EnvironmentData":
        return EnvironmentData(self.x[idx], self.y[idx], env_id or self.env_id, self.feature_names)


def validate_and_order(spec: SCMSpec) -> list[str]:
    """Topological order of the endogenous variables.

    Ties are broken by equation declaration order so the plan is stable.
    Raises :class:`UnknownName` for dangling references and
    :class:`CyclicGraph` if no order exists.
    """
    endo = spec.endogenous
    endo_set = set(endo)
    exo = set(spec.exogenous_names)
    for eq in spec.equations:
        for p in eq.parent_coefficients:
            if p not in endo_set:
                raise UnknownName(f"equation for {eq.target!r} references unknown parent {p!r}")
        if eq.exogenous_source not in exo:
            raise UnknownName(f"equation for {eq.target!r} references unknown exogenous {eq.exogenous_source!r}")
    for name, role in spec.roles.items():
        if name not in endo_set:
            raise UnknownName(f"role assigned to unknown variable {name!r}")
        if role not in ROLES:
            raise ValidationError(f"role must be one of {ROLES}, got {role!r}", key=name)
    if endo:
        n_targets = sum(r == "target" for r in spec.roles.values())
        if n_targets != 1:
            raise ValidationError(f"exactly one target variable required, found {n_targets}", key="roles")

    order: list[str] = []
    placed: set[str] = set()
    remaining = list(spec.equations)
    while remaining:
        for i, eq in enumerate(remaining):
            if all(p in placed for p in eq.parent_coefficients):
                order.append(eq.target)
                placed.add(eq.target)
                del remaining[i]
                break
        else:
            raise CyclicGraph("structural equations contain a cycle: " + ", ".join(eq.target for eq in remaining))
    return order


def intro_example_spec(confounded: bool = True, sigma2: float = 1.0) -> SCMSpec:
    """The four-variable example with hidden confounder H.

    X2 := -H + E_X2,  Y := X2 + 3H + E_Y,  X1 := Y + X2 + E_X1,  H := E_H.

    ``sigma2`` is the variance of E_X1 and E_X2; E_Y and E_H have variance 1.
    With ``confounded=False`` E_H has variance 0, so H is identically 0.
    The causal coefficients of (X1, X2) for Y are (0, 1).
    """
    return SCMSpec(
        equations=(
            StructuralEquation("H", {}, "E_H"),
            StructuralEquation("X2", {"H": -1.0}, "E_X2"),
            StructuralEquation("Y", {"X2": 1.0, "H": 3.0}, "E_Y"),
            StructuralEquation("X1", {"Y": 1.0, "X2": 1.0}, "E_X1"),
        ),
        exogenous=(
            ExogenousSpec("E_H", 0.0, 1.0 if confounded else 0.0),
            ExogenousSpec("E_X1", 0.0, sigma2),
            ExogenousSpec("E_X2", 0.0, sigma2),
            ExogenousSpec("E_Y", 0.0, 1.0),
        ),
        roles={"X1": "observed", "X2": "observed", "H": "hidden", "Y": "target"},
    )


INTRO_CAUSAL_COEFFICIENTS = (0.0, 1.0)


def variance_intervention(names: Sequence[str], variance_ratio: float) -> Intervention:
    """Scale the variance of each named exogenous source by ``variance_ratio``."""
    s = math.sqrt(variance_ratio)
    return Intervention(scales={k: s for k in names})


def mean_intervention(names: Sequence[str], shift: float) -> Intervention:
    return Intervention(shifts={k: shift for k in names})


def sample_all(spec: SCMSpec, iv: Intervention, n: int, seed: int) -> dict[str, np.ndarray]:
    """Sample every endogenous variable; returns name -> length-``n`` array."""
    if n < 1:
        raise ValidationError(f"n must be >= 1, got {n}", key="n")
    order = validate_and_order(spec)
    mu, var = iv.exogenous_moments(spec)
    rng = np.random.Generator(np.random.Philox(seed))
    z = rng.standard_normal((n, len(mu)))
    u = mu + z * np.sqrt(var)
    col = {name: j for j, name in enumerate(spec.exogenous_names)}
    values: dict[str, np.ndarray] = {}
    for v in order:
        eq = spec.equation(v)
        acc = u[:, col[eq.exogenous_source]].copy()
        for p, c in eq.parent_coefficients.items():
            acc += c * values[p]
        values[v] = acc
    return values


def sample(spec: SCMSpec, iv: Intervention, n: int, seed: int, env_id: str = "env") -> EnvironmentData:
    values = sample_all(spec, iv, n, seed)
    feats = spec.observed
    x = np.column_stack([values[f] for f in feats]) if feats else np.empty((n, 0))
    return EnvironmentData(x, values[spec.target], env_id, tuple(feats))


@dataclass(frozen=True, eq=False)
class Moments:
    """Mean vector and covariance matrix over named endogenous variables."""

    names: tuple[str, ...]
    mean: np.ndarray
    cov: np.ndarray

    def idx(self, names: Sequence[str]) -> list[int]:
        return [self.names.index(k) for k in names]

    def second_moment(self) -> np.ndarray:
        return self.cov + np.outer(self.mean, self.mean)


def loading_matrix(spec: SCMSpec) -> tuple[list[str], np.ndarray]:
    """Matrix B with endogenous = B @ exogenous, rows in topological order."""
    order = validate_and_order(spec)
    col = {name: j for j, name in enumerate(spec.exogenous_names)}
    rows: dict[str, np.ndarray] = {}
    for v in order:
        eq = spec.equation(v)
        r = np.zeros(len(col))
        r[col[eq.exogenous_source]] = 1.0
        for p, c in eq.parent_coefficients.items():
            r = r + c * rows[p]
        rows[v] = r
    return order, np.array([rows[v] for v in order]).reshape(len(order), len(col))


def analytic_moments(spec: SCMSpec, iv: Intervention = NO_INTERVENTION) -> Moments:
    """Exact moments of the endogenous variables by linear propagation."""
    order, B = loading_matrix(spec)
    mu, var = iv.exogenous_moments(spec)
    return Moments(tuple(order), B @ mu, (B * var) @ B.T)


def mixture_moments(spec: SCMSpec, ivs: Sequence[Intervention]) -> Moments:
    """Moments of the equal-weight mixture of the given environments."""
    parts = [analytic_moments(spec, iv) for iv in ivs]
    mean = np.mean([m.mean for m in parts], axis=0)
    second = np.mean([m.second_moment() for m in parts], axis=0)
    return Moments(parts[0].names, mean, second - np.outer(mean, mean))


def population_ols(spec: SCMSpec, iv: Intervention | Sequence[Intervention] = NO_INTERVENTION,
                   intercept: bool = False):
    """Population least-squares coefficients of the target on observed features.

    ``iv`` may be a list of interventions, in which case the regression is on
    their equal-weight mixture (the pooled training distribution).  With
    ``intercept=True`` returns ``(coefficients, intercept)``.
    """
    mom = mixture_moments(spec, iv) if isinstance(iv, (list, tuple)) else analytic_moments(spec, iv)
    xi = mom.idx(spec.observed)
    yi = mom.names.index(spec.target)
    cxx = mom.cov[np.ix_(xi, xi)]
    cxy = mom.cov[xi, yi]
    if cxx.size and (np.linalg.matrix_rank(cxx, tol=1e-10 * max(1.0, np.abs(cxx).max())) < len(xi)):
        raise SingularCovariance("Cov(X, X) is singular")
    coef = np.linalg.solve(cxx, cxy) if cxx.size else np.empty(0)
    if intercept:
        return coef, float(mom.mean[yi] - coef @ mom.mean[xi])
    return coef


# -- serialization ---------------------------------------------------------

def scm_to_dict(spec: SCMSpec) -> dict:
    return {
        "equation": [
            {"target": eq.target, "parents": dict(eq.parent_coefficients), "exogenous": eq.exogenous_source}
            for eq in spec.equations
        ],
        "exogenous": [{"name": u.name, "mean": u.mean, "variance": u.variance} for u in spec.exogenous],
        "roles": dict(spec.roles),
    }


def scm_from_dict(doc: Mapping) -> SCMSpec:
    try:
        spec = SCMSpec(
            equations=tuple(
                StructuralEquation(e["target"], {k: float(v) for k, v in e.get("parents", {}).items()}, e["exogenous"])
                for e in doc.get("equation", [])
            ),
            exogenous=tuple(
                ExogenousSpec(u["name"], float(u.get("mean", 0.0)), float(u.get("variance", 1.0)))
                for u in doc.get("exogenous", [])
            ),
            roles=dict(doc.get("roles", {})),
        )
    except KeyError as exc:
        raise ValidationError(f"missing key {exc.args[0]!r}", key="scm") from None
    validate_and_order(spec)
    return spec


def _toml_key(name: str) -> str:
    return name if re.fullmatch(r"[A-Za-z0-9_-]+", name) else json.dumps(name)


def _toml_value(v) -> str:
    # JSON strings and Python float reprs are valid TOML literals (values are finite)
    return repr(float(v)) if isinstance(v, (int, float)) else json.dumps(v)


def dump_scm_toml(spec: SCMSpec) -> str:
    """``[[equation]]`` and ``[[exogenous]]`` array-of-tables plus a ``[roles]`` table."""
    doc = scm_to_dict(spec)
    lines = []
    for eq in doc["equation"]:
        parents = ", ".join(f"{_toml_key(k)} = {_toml_value(v)}" for k, v in eq["parents"].items())
        lines += ["[[equation]]", f"target = {_toml_value(eq['target'])}",
                  f"parents = {{ {parents} }}" if parents else "parents = {}",
                  f"exogenous = {_toml_value(eq['exogenous'])}", ""]
    for u in doc["exogenous"]:
        lines += ["[[exogenous]]"] + [f"{k} = {_toml_value(v)}" for k, v in u.items()] + [""]
    lines.append("[roles]")
    lines += [f"{_toml_key(k)} = {_toml_value(v)}" for k, v in doc["roles"].items()]
    return "\n".join(lines) + "\n"


def load_scm_toml(text: str) -> SCMSpec:
    try:
        doc = _toml_reader.loads(text)
    except _toml_reader.TOMLDecodeError as exc:
        msg = getattr(exc, "msg", str(exc))
        raise ParseError(f"invalid TOML: {msg}", getattr(exc, "lineno", None), getattr(exc, "colno", None)) from None
    return scm_from_dict(doc)


def write_env_csv(env: EnvironmentData, path) -> Path:
    """Write ``env`` as CSV: header = feature names + ``y``, 17 significant digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([*env.feature_names, "y"])
        for row, yv in zip(env.x, env.y):
            w.writerow([f"{v:.17g}" for v in row] + [f"{yv:.17g}"])
    return path


def read_env_csv(path, env_id: str | None = None) -> EnvironmentData:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if not header or header[-1] != "y":
        raise ValidationError("last CSV column must be 'y'", key=str(path))
    data = np.array(body, dtype=float).reshape(len(body), len(header))
    return EnvironmentData(data[:, :-1], data[:, -1], env_id or path.stem, tuple(header[:-1]))
