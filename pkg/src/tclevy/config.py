"""Run configuration: JSON schema, defaults and conversion to model objects."""
from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass
from typing import Optional

import jsonschema

from .likelihood import ModelParams
from .quadrature import QuadConfig
from .timechange import WARMUP_TAIL

SCHEMA_VERSION = 1

_POS = {"type": "number", "exclusiveMinimum": 0}
_NUM = {"type": "number"}
_NONNEG = {"type": "number", "minimum": 0}


def _levy_branch(kind, props, required):
    return {"if": {"properties": {"kind": {"const": kind}}, "required": ["kind"]},
            "then": {"properties": dict(kind={"const": kind}, **props), "required": required,
                     "additionalProperties": False}}


LEVY_SCHEMA = {
    "type": "object",
    "required": ["kind"],
    "properties": {"kind": {"enum": ["zero", "cp_normal", "cp_double_exp", "gamma", "inverse_gaussian"]}},
    "allOf": [
        _levy_branch("zero", {}, []),
        _levy_branch("cp_normal", {"c": _POS, "m": _NUM, "s": _NONNEG}, ["c"]),
        _levy_branch("cp_double_exp", {"c": _POS, "p": {"type": "number", "minimum": 0, "maximum": 1},
                                       "eta_plus": _POS, "eta_minus": _POS},
                     ["c", "p", "eta_plus", "eta_minus"]),
        _levy_branch("gamma", {"a": _POS, "b": _POS}, ["a", "b"]),
        _levy_branch("inverse_gaussian", {"delta": _POS, "gamma": _POS}, ["delta", "gamma"]),
    ],
}

FACTOR_SCHEMA = {
    "type": "object",
    "required": ["mode"],
    "properties": {"mode": {"enum": ["independent", "common"]}},
    "allOf": [
        {"if": {"properties": {"mode": {"const": "independent"}}, "required": ["mode"]},
         "then": {"properties": {"mode": True, "lam": _POS, "a": _POS, "b": _POS},
                  "additionalProperties": False}},
        {"if": {"properties": {"mode": {"const": "common"}}, "required": ["mode"]},
         "then": {"properties": {"mode": True, "kappa": _NONNEG}, "additionalProperties": False}},
    ],
}

_GRID = {"type": "array", "items": _NUM, "minItems": 3, "maxItems": 3}
_COUNT = {"type": "integer", "minimum": 1}
_SEED = {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["model"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "seed": _SEED,
        "threads": _COUNT,
        "model": {
            "type": "object",
            "required": ["mu", "beta", "rho", "vol"],
            "additionalProperties": False,
            "properties": {
                "mu": _NUM, "beta": _NUM, "rho": _NUM, "delta": _POS,
                "levy1": LEVY_SCHEMA, "levy2": LEVY_SCHEMA,
                "vol": {
                    "type": "object",
                    "required": ["lam", "a", "b"],
                    "additionalProperties": False,
                    "properties": {"lam": _POS, "a": _POS, "b": _POS, "factor": FACTOR_SCHEMA,
                                   "s_max": {"anyOf": [_POS, {"type": "null"}]}},
                },
            },
        },
        "data": {
            "type": "object",
            "required": ["path"],
            "additionalProperties": False,
            "properties": {"path": {"type": "string"}, "column": {"type": ["string", "null"]},
                           "delta": _POS},
        },
        "quad": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "radius": {"anyOf": [_POS, {"type": "null"}]},
                "panel_width": {"anyOf": [_POS, {"type": "null"}]},
                "order": {"type": "integer", "minimum": 2},
                "tol": _POS, "y_tol": _POS, "max_evals": _COUNT, "max_radius": _POS, "pole_tol": _POS,
                "kde_bandwidth": {"anyOf": [_POS, {"type": "null"}]},
            },
        },
        "simulate": {
            "type": "object", "additionalProperties": False,
            "properties": {"n": _COUNT, "n_paths": _COUNT, "latents": {"type": "boolean"}},
        },
        "density": {
            "type": "object", "additionalProperties": False,
            "properties": {"grid": _GRID},
        },
        "loglik": {
            "type": "object", "additionalProperties": False,
            "properties": {"block": {"type": "integer", "minimum": 1, "maximum": 3}},
        },
        "fit": {
            "type": "object", "additionalProperties": False,
            "properties": {"free": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                           "block": {"type": "integer", "minimum": 1, "maximum": 3},
                           "max_iter": _COUNT},
        },
        "check": {
            "type": "object", "additionalProperties": False,
            "properties": {"n_paths": {"type": "integer", "minimum": 10_000}},
        },
    },
}

DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "seed": 0,
    "threads": 1,
    "quad": QuadConfig().to_dict(),
    "simulate": {"n": 1, "n_paths": 10_000, "latents": False},
    "density": {"grid": [-8.0, 8.0, 0.25]},
    "loglik": {"block": 2},
    "fit": {"free": ["mu", "beta"], "block": 2, "max_iter": 400},
    "check": {"n_paths": 200_000},
}


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
        self.message = message


@dataclass(frozen=True)
class RunConfig:
    raw: dict                        # effective config, JSON-ready
    params: ModelParams
    quad: QuadConfig

    @property
    def seed(self) -> int:
        return self.raw["seed"]

    @property
    def threads(self) -> int:
        return self.raw["threads"]

    def section(self, name: str) -> dict:
        return self.raw[name]

    @property
    def data(self) -> Optional[dict]:
        return self.raw.get("data")

    def to_json(self) -> str:
        return json.dumps(self.raw, indent=2, sort_keys=True)


def _error_path(err) -> str:
    path = ".".join(str(p) for p in err.absolute_path)
    if err.validator == "required":
        missing = err.message.split("'")[1]
        return f"{path}.{missing}" if path else missing
    if err.validator == "additionalProperties" and "'" in err.message:
        extra = err.message.split("'")[1]
        return f"{path}.{extra}" if path else extra
    return path


def _fill_defaults(cfg: dict) -> dict:
    out = copy.deepcopy(cfg)
    for key, val in DEFAULTS.items():
        if isinstance(val, dict):
            merged = copy.deepcopy(val)
            merged.update(out.get(key, {}))
            out[key] = merged
        else:
            out.setdefault(key, val)
    model = out["model"]
    model.setdefault("delta", 1.0)
    model.setdefault("levy1", {"kind": "zero"})
    model.setdefault("levy2", {"kind": "zero"})
    vol = model["vol"]
    # default second factor: an independent copy of the first
    fac = vol.setdefault("factor", {"mode": "independent"})
    if fac["mode"] == "independent":
        for k in ("lam", "a", "b"):
            fac.setdefault(k, vol[k])
        lams = (vol["lam"], fac["lam"])
    else:
        fac.setdefault("kappa", 0.0)
        lams = (vol["lam"],)
    if vol.get("s_max") is None:
        vol["s_max"] = math.log(1.0 / WARMUP_TAIL) / min(lams)
    if "data" in out:
        out["data"].setdefault("column", None)
        if "delta" in out["data"]:
            model["delta"] = out["data"]["delta"]
        else:
            out["data"]["delta"] = model["delta"]
    return out


def validate(cfg) -> None:
    if not isinstance(cfg, dict):
        raise ConfigError("", "config must be a JSON object")
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: (-len(e.absolute_path), e.path))
    if errors:
        err = jsonschema.exceptions.best_match(errors)
        raise ConfigError(_error_path(err), err.message)


def build(cfg: dict) -> RunConfig:
    """Validate a config dict, apply defaults and construct the model objects."""
    validate(cfg)
    eff = _fill_defaults(cfg)
    validate(eff)
    try:
        params = ModelParams.from_dict(eff["model"])
    except ValueError as exc:
        raise ConfigError("model", str(exc)) from exc
    try:
        quad = QuadConfig.from_dict(eff["quad"])
    except ValueError as exc:
        raise ConfigError("quad", str(exc)) from exc
    return RunConfig(eff, params, quad)


def parse_config(path) -> RunConfig:
    with open(path) as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("", f"invalid JSON: {exc}") from exc
    return build(cfg)
