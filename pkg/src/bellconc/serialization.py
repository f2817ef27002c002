"""File formats: JSON records with 17-digit floats, CSV curves, config files.

The stdlib ``json`` encoder prints floats with ``repr``; records here use
``%.17g`` instead so every number has the same fixed precision.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from .quantum import Assemblage, PureState
from .scenario import Behaviour, BellFunctional, Scenario, flat_index, unflat_index


class ConfigError(ValueError):
    """Malformed or incomplete input file."""


def fmt_float(x: float) -> str:
    x = float(x)
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return format(x, ".17g")


def dumps(obj: Any) -> str:
    """Compact JSON with every float written as ``%.17g``."""
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {dumps(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(dumps(v) for v in obj) + "]"
    if isinstance(obj, np.ndarray):
        return dumps(obj.tolist())
    if isinstance(obj, (bool, np.bool_)) or obj is None:
        return json.dumps(None if obj is None else bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_jsonl(path: Path, records: Iterable[dict]):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(dumps(rec) + "\n")


def write_csv(path: Path, header: list[str], rows: Iterable[Iterable], comment: str | None = None):
    buf = io.StringIO()
    if comment:
        buf.write(f"# {comment}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt_float(x) if isinstance(x, (float, np.floating)) else x for x in row])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def _load_json(text: str, source: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        lines = text.splitlines()
        context = lines[exc.lineno - 1] if 0 < exc.lineno <= len(lines) else ""
        raise ConfigError(
            f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}\n    {context}"
        ) from None


# ---------------------------------------------------------------------------
# domain objects


def functional_to_dict(T: BellFunctional) -> dict:
    sc = T.scenario
    entries = []
    for idx in np.flatnonzero(T.coeffs):
        a, x = unflat_index(sc, int(idx))
        entries.append({"a": list(a), "x": list(x), "value": float(T.coeffs[idx])})
    return {
        "scenario": sc.to_dict(),
        "name": T.name,
        "coeff_cap": T.coeff_cap,
        "classical_lower": T.classical_lower,
        "classical_upper": T.classical_upper,
        "normalized": T.normalized,
        "entries": entries,
        "provenance": T.provenance,
    }


def functional_from_dict(data: dict, source: str = "<functional>") -> BellFunctional:
    for key in ("scenario", "entries"):
        if key not in data:
            raise ConfigError(f"{source}: missing required key {key!r}")
    try:
        sc = Scenario.from_dict(data["scenario"])
        coeffs = np.zeros(sc.size)
        for e in data["entries"]:
            coeffs[flat_index(sc, e["a"], e["x"])] += float(e["value"])
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise ConfigError(f"{source}: bad functional data: {exc}") from None
    return BellFunctional(
        sc, coeffs, data.get("coeff_cap"), data.get("classical_lower"),
        data.get("classical_upper"), data.get("name", ""), bool(data.get("normalized", False)),
        dict(data.get("provenance", {})),
    )


def load_functional(path) -> BellFunctional:
    path = Path(path)
    return functional_from_dict(_load_json(path.read_text(encoding="utf-8"), str(path)), str(path))


def behaviour_to_dict(p: Behaviour) -> dict:
    sc = p.scenario
    entries = []
    for idx, val in enumerate(p.probs):
        a, x = unflat_index(sc, idx)
        entries.append({"a": list(a), "x": list(x), "value": float(val)})
    return {"scenario": sc.to_dict(), "entries": entries}


def behaviour_from_dict(data: dict, source: str = "<behaviour>") -> Behaviour:
    """Behaviours are dense: every ``(a, x)`` entry must appear exactly once."""
    sc = Scenario.from_dict(data["scenario"])
    probs = np.full(sc.size, np.nan)
    for e in data["entries"]:
        idx = flat_index(sc, e["a"], e["x"])
        if not np.isnan(probs[idx]):
            raise ConfigError(f"{source}: duplicate behaviour entry a={e['a']} x={e['x']}")
        probs[idx] = float(e["value"])
    missing = np.flatnonzero(np.isnan(probs))
    if missing.size:
        a, x = unflat_index(sc, int(missing[0]))
        raise ConfigError(f"{source}: behaviour missing {missing.size} entries, first a={a} x={x}")
    return Behaviour(sc, probs)


def _pairs(arr: np.ndarray) -> np.ndarray:
    return np.stack([arr.real, arr.imag], axis=-1)


def _unpairs(data) -> np.ndarray:
    arr = np.asarray(data, dtype=float)
    return arr[..., 0] + 1j * arr[..., 1]


def assemblage_to_dict(A: Assemblage, seed=None) -> dict:
    """Operators as nested ``[re, im]`` pairs indexed ``[party][setting][outcome][row][col]``."""
    return {"scenario": A.scenario.to_dict(), "d": A.d, "seed": seed, "ops": _pairs(A.ops)}


def assemblage_from_dict(data: dict) -> Assemblage:
    return Assemblage(Scenario.from_dict(data["scenario"]), int(data["d"]), _unpairs(data["ops"]))


def state_to_dict(psi: PureState, seed=None) -> dict:
    return {"d": psi.d, "N": psi.N, "seed": seed, "amplitudes": _pairs(psi.amplitudes)}


def state_from_dict(data: dict) -> PureState:
    return PureState(int(data["d"]), int(data["N"]), _unpairs(data["amplitudes"]))


# ---------------------------------------------------------------------------
# configuration files


def _coerce(value: str) -> Any:
    low = value.lower()
    if low in ("true", "false"):
        return low == "true"
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            pass
    return value


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse flat ``key = value`` lines, or a JSON object if the text starts with ``{``.

    Blank lines and ``#`` comments are ignored.  Comma-separated values become
    lists.
    """
    if text.lstrip().startswith("{"):
        data = _load_json(text, source)
        if not isinstance(data, dict):
            raise ConfigError(f"{source}: top-level JSON value must be an object")
        return data
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value\n    {raw}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key\n    {raw}")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}\n    {raw}")
        if "," in value:
            out[key] = [_coerce(v.strip()) for v in value.split(",") if v.strip()]
        else:
            out[key] = _coerce(value)
    return out


def parse_config(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config_text(text, str(path))
