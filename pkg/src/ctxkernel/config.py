"""Run configuration: a flat JSON object keyed by dotted names.

Example::

    {"grid.rows": 8, "grid.cols": 10, "kernel.gamma": 1.0, "io.features": "train.ctxf"}

Unknown keys are rejected. Every key can be overridden on the command line
with a flag of the same name (``--kernel.gamma 0.5``).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .ctxlearn import LearnConfig
from .featio import MODES
from .grid import GridSpec

__all__ = ["SCHEMA", "ConfigError", "RunConfig"]


class ConfigError(ValueError):
    pass


def _bool(v):
    if isinstance(v, bool):
        return v
    if isinstance(v, str) and v.lower() in ("true", "1", "yes", "false", "0", "no"):
        return v.lower() in ("true", "1", "yes")
    raise ConfigError(f"expected a boolean, got {v!r}")


def _int(v):
    if isinstance(v, bool):
        raise ConfigError(f"expected an integer, got {v!r}")
    if isinstance(v, int):
        return v
    if isinstance(v, str):
        try:
            return int(v)
        except ValueError:
            pass
    if isinstance(v, float) and v.is_integer():
        return int(v)
    raise ConfigError(f"expected an integer, got {v!r}")


def _float(v):
    if isinstance(v, bool):
        raise ConfigError(f"expected a number, got {v!r}")
    try:
        return float(v)
    except (TypeError, ValueError):
        raise ConfigError(f"expected a number, got {v!r}") from None


def _costs(v):
    if v is None or v == "":
        return None
    if isinstance(v, str):
        v = [s for s in v.split(",") if s.strip()]
    if not isinstance(v, (list, tuple)):
        raise ConfigError(f"expected a list of costs, got {v!r}")
    return tuple(_float(x) for x in v)


# key -> (parser, default, range check or None, help)
SCHEMA = {
    "grid.rows": (_int, 8, lambda v: v >= 1, "cell rows"),
    "grid.cols": (_int, 10, lambda v: v >= 1, "cell columns"),
    "grid.radius": (_int, 1, lambda v: v >= 1, "neighborhood radius in cells"),
    "grid.sectors": (_int, 4, lambda v: v >= 1, "number of neighbor sectors"),
    "map.mode": (str, "linear", lambda v: v in MODES, "initial map: linear or hi"),
    "map.hi_levels": (_int, 16, lambda v: v >= 1, "quantization levels of the hi map"),
    "kernel.gamma": (_float, 1.0, lambda v: v >= 0, "context mixing ratio"),
    "kernel.depth": (_int, 3, lambda v: v >= 1, "number of context layers"),
    "learn.svm_cost": (_float, 1.0, lambda v: v > 0, "shared SVM cost"),
    "learn.costs": (_costs, None, lambda v: v is None or all(c > 0 for c in v), "per-concept SVM costs"),
    "learn.eta": (_float, 1e-3, lambda v: v >= 0, "context learning rate"),
    "learn.inner_steps": (_int, 10, lambda v: v >= 0, "context steps per outer iteration"),
    "learn.max_outer": (_int, 100, lambda v: v >= 1, "maximum outer iterations"),
    "learn.tol": (_float, 1e-4, lambda v: v > 0, "relative objective change for convergence"),
    "learn.bias": (_bool, False, None, "append a constant feature to pooled maps"),
    "io.features": (str, "", None, "training feature file"),
    "io.labels": (str, "", None, "training labels CSV"),
    "io.output_dir": (str, "out", lambda v: v != "", "directory receiving all outputs"),
    "io.seed": (_int, 0, lambda v: v >= 0, "random seed"),
    "synthetic.n_images": (_int, 40, lambda v: v >= 4 and v % 2 == 0, "synthetic images (even)"),
    "synthetic.d0": (_int, 4, lambda v: v >= 1, "synthetic feature dimension"),
    "synthetic.noise": (_float, 0.05, lambda v: v >= 0, "synthetic content noise"),
}


@dataclass(frozen=True)
class RunConfig:
    values: dict

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        unknown = sorted(set(raw) - set(SCHEMA))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        values = {}
        for key, (parse, default, check, _) in SCHEMA.items():
            v = parse(raw[key]) if key in raw and raw[key] is not None else default
            if check is not None and not check(v):
                raise ConfigError(f"{key}={v!r} is out of range")
            values[key] = v
        return cls(values)

    @classmethod
    def load(cls, path=None, overrides: dict | None = None) -> "RunConfig":
        raw = {}
        if path is not None:
            try:
                raw = json.loads(Path(path).read_text(encoding="utf-8"))
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON: {exc}") from None
            if not isinstance(raw, dict):
                raise ConfigError(f"{path}: config must be a JSON object")
        raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_dict(raw)

    def __getitem__(self, key):
        return self.values[key]

    def grid_spec(self) -> GridSpec:
        v = self.values
        return GridSpec(v["grid.rows"], v["grid.cols"], v["grid.radius"], v["grid.sectors"])

    def learn_config(self) -> LearnConfig:
        v = self.values
        return LearnConfig(
            gamma=v["kernel.gamma"],
            depth=v["kernel.depth"],
            svm_cost=v["learn.svm_cost"],
            costs=v["learn.costs"],
            eta=v["learn.eta"],
            inner_steps=v["learn.inner_steps"],
            max_outer=v["learn.max_outer"],
            tol=v["learn.tol"],
            bias=v["learn.bias"],
        )

    def to_json(self) -> str:
        doc = {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.values.items()}
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"
