"""Run configuration, schema validation and provenance-tagged CSV/JSON emission."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import tempfile
from datetime import datetime, timezone
from pathlib import Path

import jsonschema
import numpy as np

VERSION = "0.1.0"
TOOL = f"peumlab {VERSION}"
U64_MAX = 2 ** 64 - 1
COMMANDS = ("density", "sweep", "j", "sigma", "shadow", "modulus", "recurrence")


class ConfigError(ValueError):
    """Invalid configuration; maps to exit code 2."""

    def __init__(self, message: str, path: str = ""):
        super().__init__(message)
        self.path = path


_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_pos_int = {"type": "integer", "minimum": 1}
_table = {"type": "array", "minItems": 1,
          "items": {"type": "array", "minItems": 1, "items": _num}}

FAMILY_SCHEMA = {
    "oneOf": [
        {"type": "object", "required": ["kind"], "additionalProperties": False,
         "properties": {"kind": {"const": "tent"},
                        "t_range": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}}},
        {"type": "object", "additionalProperties": False,
         "required": ["kind", "c", "left", "right", "lambda", "t_range"],
         "properties": {"kind": {"const": "piecewise_poly"},
                        "c": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                        "left": _table, "right": _table,
                        "lambda": {"type": "number", "exclusiveMinimum": 1},
                        "t_range": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}}},
    ]
}

OBSERVABLE_SCHEMA = {
    "oneOf": [
        {"enum": ["x", "x-1/2"]},
        {"type": "object", "required": ["kind"],
         "properties": {"kind": {"enum": ["x", "x-1/2", "constant", "poly", "table"]},
                        "value": _num, "shift": _num,
                        "coefficients": {"type": "array", "items": _num, "minItems": 1},
                        "breakpoints": {"type": "array", "items": _num},
                        "values": {"type": "array", "items": _num}}},
    ]
}

_grid = {"oneOf": [
    {"type": "array", "items": _num, "minItems": 1},
    {"type": "object", "required": ["start", "stop", "num"], "additionalProperties": False,
     "properties": {"start": _num, "stop": _num, "num": _pos_int}},
]}

CONFIG_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "required": ["family"],
    "additionalProperties": False,
    "properties": {
        "command": {"enum": list(COMMANDS)},
        "family": FAMILY_SCHEMA,
        "observable": OBSERVABLE_SCHEMA,
        "t": _num,
        "t_grid": _grid,
        "N": {"type": "integer", "minimum": 4},
        "tol": _pos,
        "K": _pos_int,
        "method": {"enum": ["auto", "ulam", "exact"]},
        "seed": {"type": "integer", "minimum": 0, "maximum": U64_MAX},
        "threads": _pos_int,
        "cache_dir": {"type": ["string", "null"]},
        "out": {"type": "string"},
        "eps1": _pos,
        "h": {"oneOf": [_num, {"type": "array", "items": _num, "minItems": 1}]},
        "n": {"type": "integer", "minimum": 0},
        "budget": _pos_int,
        "s_grid_size": {"type": "integer", "minimum": 2},
        "pairs": {"type": "integer", "minimum": 0},
        "r_integral": {"type": "object", "additionalProperties": False,
                       "required": ["n_max"],
                       "properties": {"n_max": _pos_int, "samples": {"type": "integer", "minimum": 2}}},
        "clt": {"type": "object", "additionalProperties": False, "required": ["n", "samples"],
                "properties": {"n": _pos_int, "samples": {"type": "integer", "minimum": 2},
                               "shards": _pos_int}},
        "lil": {"type": "object", "additionalProperties": False, "required": ["n_max"],
                "properties": {"n_max": {"type": "integer", "minimum": 16}, "stride": _pos_int}},
        "h0": _pos,
        "r": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "steps": _pos_int,
        "negative": {"type": "boolean"},
        "constant": {"type": "boolean"},
        "audit_h": {"type": "array", "items": _pos},
        "m": {"type": "number", "exclusiveMinimum": 1},
    },
}


def load_config(path: str | os.PathLike) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    validate_config(cfg)
    return cfg


def validate_config(cfg) -> None:
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path)
        raise ConfigError(f"schema error at '{where}': {exc.message}", where) from None


def expand_grid(spec) -> np.ndarray:
    if isinstance(spec, dict):
        return np.linspace(spec["start"], spec["stop"], spec["num"])
    return np.asarray(spec, dtype=float)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_hash(cfg: dict) -> str:
    """sha256 of the resolved config without the fields that do not affect results."""
    core = {k: v for k, v in cfg.items() if k not in ("out", "threads", "cache_dir")}
    return hashlib.sha256(canonical_json(core).encode()).hexdigest()


def atomic_write(path: str | os.PathLike, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def fmt(v) -> str:
    """Shortest round-trip text for floats, blank for None, plain text otherwise."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def provenance(command: str, cfg_hash: str, timestamp: bool = False) -> list[str]:
    lines = [f"# {TOOL}", f"# command={command}", f"# config_sha256={cfg_hash}"]
    if timestamp:
        lines.append(f"# timestamp={datetime.now(timezone.utc).isoformat(timespec='seconds')}")
    return lines


def render_csv(header: list[str], rows, prelude: list[str] = (), footer: list[str] = ()) -> str:
    buf = io.StringIO()
    for line in prelude:
        buf.write(line + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    for line in footer:
        buf.write(line + "\n")
    return buf.getvalue()


def csv_body(text: str) -> str:
    """The lines of a CSV that are not provenance or footer comments."""
    return "\n".join(ln for ln in text.splitlines() if not ln.startswith("#"))


def read_csv(path: str | os.PathLike) -> tuple[list[str], list[list[str]]]:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
    rows = list(csv.reader(lines))
    return rows[0], rows[1:]


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def render_json(obj) -> str:
    return json.dumps(to_jsonable(obj), indent=2, sort_keys=True) + "\n"
