"""Run configuration: one JSON document, parsed strictly."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .collision import ModelParams
from .errors import ConfigError, UnsupportedParameterError
from .kinematics import RTOL_INVERT


@dataclass(frozen=True)
class ModelSection:
    alpha: float = 0.5
    a_magnitude: float = 1.0
    lam: float = 1.0
    r: float = 0.2
    v0: tuple = (0.0, 0.0, 1.0)


@dataclass(frozen=True)
class RunSection:
    n_steps: int = 100_000
    burn_in: int = 1000
    n_replicas: int = 2000
    horizon_T: float | None = None
    grid_points: int = 101
    n_batches: int | None = None


@dataclass(frozen=True)
class Tolerances:
    rtol_invert: float = RTOL_INVERT
    p_threshold: float = 1e-3


@dataclass(frozen=True)
class RunConfig:
    model: ModelSection = field(default_factory=ModelSection)
    run: RunSection = field(default_factory=RunSection)
    seed: int = 0
    tolerances: Tolerances = field(default_factory=Tolerances)
    output_dir: str = "out"

    @property
    def params(self) -> ModelParams:
        m = self.model
        return ModelParams(alpha=m.alpha, a_magnitude=m.a_magnitude, lam=m.lam, r=m.r)

    @property
    def v0(self) -> np.ndarray:
        return np.array(self.model.v0, dtype=float)

    def with_overrides(self, seed=None, n_steps=None, output_dir=None) -> "RunConfig":
        cfg = self
        if seed is not None:
            cfg = replace(cfg, seed=seed)
        if n_steps is not None:
            cfg = replace(cfg, run=replace(cfg.run, n_steps=n_steps))
        if output_dir is not None:
            cfg = replace(cfg, output_dir=str(output_dir))
        return cfg.validated()

    def validated(self) -> "RunConfig":
        try:
            self.params
        except UnsupportedParameterError as exc:
            raise ConfigError(str(exc)) from exc
        v0 = self.model.v0
        if len(v0) != 3 or not all(_is_real(x) for x in v0):
            raise ConfigError("model.v0 must be three finite numbers")
        run = self.run
        if run.n_steps < 1:
            raise ConfigError(f"run.n_steps must be positive, got {run.n_steps}")
        if run.burn_in < 0:
            raise ConfigError(f"run.burn_in must be nonnegative, got {run.burn_in}")
        if run.n_replicas < 1:
            raise ConfigError(f"run.n_replicas must be positive, got {run.n_replicas}")
        if run.horizon_T is not None and not run.horizon_T > 0:
            raise ConfigError(f"run.horizon_T must be positive, got {run.horizon_T}")
        if run.grid_points < 5 or (run.grid_points - 1) % 4:
            raise ConfigError("run.grid_points must be 4k+1 (k >= 1) so the grid holds s = 0.25, 0.5, 1")
        if run.n_batches is not None and run.n_batches < 2:
            raise ConfigError(f"run.n_batches must be at least 2, got {run.n_batches}")
        if self.seed < 0:
            raise ConfigError(f"seed must be nonnegative, got {self.seed}")
        tol = self.tolerances
        # the kernels always invert to RTOL_INVERT; a looser request is met automatically
        if not RTOL_INVERT <= tol.rtol_invert < 1.0:
            raise ConfigError(f"tolerances.rtol_invert must lie in [{RTOL_INVERT}, 1)")
        if not 0.0 < tol.p_threshold < 1.0:
            raise ConfigError("tolerances.p_threshold must lie in (0, 1)")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"]["lambda"] = d["model"].pop("lam")
        d["model"]["v0"] = list(d["model"]["v0"])
        return d


def _is_real(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _section(cls, data, name, rename=None):
    if not isinstance(data, dict):
        raise ConfigError(f"{name} must be an object")
    rename = rename or {}
    known = {f.name: f for f in fields(cls)}
    out = {}
    for key, val in data.items():
        attr = rename.get(key, key)
        if attr not in known or key in rename.values():
            raise ConfigError(f"unknown field {name}.{key}")
        out[attr] = _coerce(val, known[attr].type, f"{name}.{key}")
    return cls(**out)


def _coerce(val, typ, where):
    typ = str(typ)
    if val is None and "None" in typ:
        return None
    if typ.startswith("int"):
        if isinstance(val, bool) or not isinstance(val, int):
            raise ConfigError(f"{where} must be an integer")
        return val
    if typ.startswith("float"):
        if not _is_real(val):
            raise ConfigError(f"{where} must be a finite number")
        return float(val)
    if typ == "tuple":
        if not isinstance(val, list):
            raise ConfigError(f"{where} must be a list")
        return tuple(float(x) if _is_real(x) else x for x in val)
    if typ == "str":
        if not isinstance(val, str):
            raise ConfigError(f"{where} must be a string")
        return val
    raise ConfigError(f"cannot parse {where}")


def config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    allowed = {"model", "run", "seed", "tolerances", "output_dir"}
    extra = set(data) - allowed
    if extra:
        raise ConfigError(f"unknown field(s): {', '.join(sorted(extra))}")
    kw = {}
    if "model" in data:
        kw["model"] = _section(ModelSection, data["model"], "model", {"lambda": "lam"})
    if "run" in data:
        kw["run"] = _section(RunSection, data["run"], "run")
    if "tolerances" in data:
        kw["tolerances"] = _section(Tolerances, data["tolerances"], "tolerances")
    if "seed" in data:
        kw["seed"] = _coerce(data["seed"], "int", "seed")
    if "output_dir" in data:
        kw["output_dir"] = _coerce(data["output_dir"], "str", "output_dir")
    return RunConfig(**kw).validated()


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    return config_from_dict(data)
