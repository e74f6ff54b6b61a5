"""Run configuration: TOML parsing, validation and serialization.

Every default lives in ``defaults.toml`` next to this module; the dataclass
defaults below mirror it and a test keeps the two in sync.
"""

from __future__ import annotations

import dataclasses
import os
import re
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib
import tomli_w

from .errors import ParseError, ValidationError
from .objectives import ObjectiveSpec
from .scm import Intervention, SCMSpec, intro_example_spec, load_scm_toml
from .trainer import EarlyStop, TrainConfig

DEFAULTS_PATH = Path(__file__).with_name("defaults.toml")
SCM_PRESETS = {
    "intro_confounded": lambda: intro_example_spec(True),
    "intro_unconfounded": lambda: intro_example_spec(False),
}
EXPERIMENTS = ("fig1", "stability", "coeffs", "theorem1", "features")
SQRT2 = 2.0 ** 0.5

# TOML key -> dataclass attribute, where they differ
_OBJECTIVE_RENAMES = {"lambda": "lambda_final"}


@dataclass(frozen=True)
class ScmSource:
    preset: str | None = "intro_confounded"
    path: str | None = None

    def __post_init__(self):
        if (self.preset is None) == (self.path is None):
            raise ValidationError("exactly one of preset / path is required", key="scm")
        if self.preset is not None and self.preset not in SCM_PRESETS:
            raise ValidationError(f"unknown preset, expected one of {tuple(SCM_PRESETS)}", key="scm.preset")

    def load(self, base: Path | None = None) -> SCMSpec:
        if self.preset is not None:
            return SCM_PRESETS[self.preset]()
        p = Path(self.path)
        if base is not None and not p.is_absolute():
            p = base / p
        try:
            text = p.read_text()
        except OSError as exc:
            raise ParseError(f"cannot read SCM file {p}: {exc.strerror}") from None
        return load_scm_toml(text)


@dataclass(frozen=True)
class EnvSpec:
    """One training environment: an intervention plus a sample size."""

    id: str
    n: int = 10_000
    shift: Mapping[str, float] = field(default_factory=dict)
    scale: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.n < 1:
            raise ValidationError("must be >= 1", key=f"environment.{self.id}.n")
        object.__setattr__(self, "shift", {k: float(v) for k, v in self.shift.items()})
        object.__setattr__(self, "scale", {k: float(v) for k, v in self.scale.items()})

    @property
    def intervention(self) -> Intervention:
        return Intervention(self.shift, self.scale)


def _default_envs():
    return (
        EnvSpec("sigma2=1", 10_000),
        EnvSpec("sigma2=2", 10_000, scale={"E_X1": SQRT2, "E_X2": SQRT2}),
    )


@dataclass(frozen=True)
class ModelSpec:
    hidden: tuple[int, ...] = ()
    link: str = "identity"
    head_bias: bool = False

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if any(h < 1 for h in self.hidden):
            raise ValidationError("hidden widths must be >= 1", key="model.hidden")
        if self.link not in ("identity", "logistic"):
            raise ValidationError("must be 'identity' or 'logistic'", key="model.link")


@dataclass(frozen=True)
class ExperimentSpec:
    """Preset name plus optional grid overrides (``None`` keeps the preset's grid)."""

    name: str = "coeffs"
    lambdas: tuple[float, ...] | None = None
    magnitudes: tuple[float, ...] | None = None
    etas: tuple[float, ...] | None = None
    scenario: str = "confounded"
    shift_axis: str = "observed"
    target: str = "E_Y"
    max_shift: float = 5.0
    confounded: bool = True
    n_studies: int = 20
    pairs: int = 100
    top_k: int = 10
    trials: int = 1000
    n_envs: tuple[int, ...] = (2, 3, 4)

    def __post_init__(self):
        if self.name not in EXPERIMENTS:
            raise ValidationError(f"must be one of {EXPERIMENTS}", key="experiment.name")
        for key in ("lambdas", "magnitudes", "etas"):
            v = getattr(self, key)
            if v is not None:
                v = tuple(float(x) for x in v)
                object.__setattr__(self, key, v)
                if key != "magnitudes" and any(x < 0 for x in v):
                    raise ValidationError("values must be >= 0", key=f"experiment.{key}")
        object.__setattr__(self, "n_envs", tuple(int(k) for k in self.n_envs))


@dataclass(frozen=True)
class RunConfig:
    scm: ScmSource = ScmSource()
    environments: tuple[EnvSpec, ...] = field(default_factory=_default_envs)
    model: ModelSpec = ModelSpec()
    objective: ObjectiveSpec = ObjectiveSpec()
    train: TrainConfig = TrainConfig()
    experiment: ExperimentSpec = ExperimentSpec()
    out: str = "runs"
    seeds: tuple[int, ...] = (0,)

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "environments", tuple(self.environments))
        if not self.seeds:
            raise ValidationError("at least one seed required", key="seeds")
        ids = [e.id for e in self.environments]
        if len(set(ids)) != len(ids):
            raise ValidationError("environment ids must be unique", key="environment")
        if not _writable(Path(self.out)):
            raise ValidationError(f"output directory {self.out!r} is not writable", key="out")

    def with_seed(self, seed: int) -> "RunConfig":
        return dataclasses.replace(self, seeds=(int(seed),), train=dataclasses.replace(self.train, seed=int(seed)))


def _writable(path: Path) -> bool:
    p = path.resolve()
    while not p.exists():
        if p.parent == p:
            return False
        p = p.parent
    return p.is_dir() and os.access(p, os.W_OK)


# -- parsing -------------------------------------------------------------------

def _build(cls, table: Mapping[str, Any], prefix: str, renames: Mapping[str, str] | None = None, **extra):
    renames = renames or {}
    names = {f.name: f for f in fields(cls)}
    kwargs = dict(extra)
    for key, value in table.items():
        attr = renames.get(key, key)
        if attr not in names or attr in extra:
            raise ValidationError("unknown key", key=f"{prefix}.{key}")
        default = names[attr].default
        if isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        kwargs[attr] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ValidationError(str(exc), key=prefix) from None


def _table(doc, key) -> dict:
    v = doc.get(key, {})
    if not isinstance(v, dict):
        raise ValidationError("must be a table", key=key)
    return v


def config_from_dict(doc: Mapping[str, Any]) -> RunConfig:
    known = {"scm", "environment", "model", "objective", "train", "experiment", "out", "seeds"}
    for key in doc:
        if key not in known:
            raise ValidationError("unknown key", key=key)
    kwargs: dict[str, Any] = {}
    if "scm" in doc:
        scm = _table(doc, "scm")
        # naming only a path must not inherit the default preset
        kwargs["scm"] = _build(ScmSource, scm, "scm", **{k: None for k in ("preset", "path") if k not in scm})
    if "environment" in doc:
        envs = doc["environment"]
        if not isinstance(envs, list):
            raise ValidationError("must be an array of tables", key="environment")
        kwargs["environments"] = tuple(_build(EnvSpec, e, f"environment[{i}]") for i, e in enumerate(envs))
    if "model" in doc:
        kwargs["model"] = _build(ModelSpec, _table(doc, "model"), "model")
    if "objective" in doc:
        kwargs["objective"] = _build(ObjectiveSpec, _table(doc, "objective"), "objective", _OBJECTIVE_RENAMES)
    if "train" in doc:
        t = dict(_table(doc, "train"))
        es = t.pop("early_stop", None)
        extra = {}
        if es is not None:
            if not isinstance(es, dict):
                raise ValidationError("must be a table", key="train.early_stop")
            extra["early_stop"] = _build(EarlyStop, es, "train.early_stop")
        kwargs["train"] = _build(TrainConfig, t, "train", **extra)
    if "experiment" in doc:
        kwargs["experiment"] = _build(ExperimentSpec, _table(doc, "experiment"), "experiment")
    if "out" in doc:
        kwargs["out"] = str(doc["out"])
    if "seeds" in doc:
        seeds = doc["seeds"]
        kwargs["seeds"] = (seeds,) if isinstance(seeds, int) else tuple(seeds)
    return RunConfig(**kwargs)


_LOC = re.compile(r"\(at line (\d+), column (\d+)\)")


def parse_config(text: str) -> RunConfig:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = _LOC.search(str(exc))
        msg = _LOC.sub("", str(exc)).strip()
        raise ParseError(f"invalid TOML: {msg}", *(map(int, m.groups()) if m else ())) from None
    return config_from_dict(doc)


def load_config(path) -> RunConfig:
    """Parse and validate a TOML run configuration; missing keys take the documented defaults."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ParseError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text)


# -- serialization ---------------------------------------------------------------

def _plain(obj, renames=None):
    renames = {v: k for k, v in (renames or {}).items()}
    out = {}
    for f in fields(obj):
        v = getattr(obj, f.name)
        if v is None:
            continue
        if isinstance(v, tuple):
            v = list(v)
        elif isinstance(v, Mapping):
            v = dict(v)
        out[renames.get(f.name, f.name)] = v
    return out


def config_to_dict(cfg: RunConfig) -> dict:
    train = _plain(cfg.train)
    if cfg.train.early_stop is not None:
        train["early_stop"] = _plain(cfg.train.early_stop)
    return {
        "out": cfg.out,
        "seeds": list(cfg.seeds),
        "scm": _plain(cfg.scm),
        "environment": [_plain(e) for e in cfg.environments],
        "model": _plain(cfg.model),
        "objective": _plain(cfg.objective, _OBJECTIVE_RENAMES),
        "train": train,
        "experiment": _plain(cfg.experiment),
    }


def serialize(cfg: RunConfig) -> str:
    return tomli_w.dumps(config_to_dict(cfg))


def dump_config(cfg: RunConfig, path) -> Path:
    path = Path(path)
    path.write_text(serialize(cfg))
    return path
