"""Run configuration parsing and deterministic report / CSV emission."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .models import PRESET_PARAMS, ModelError, ModelSpec, birth_death, make_preset
from .models import preset_bernoulli_laplace, preset_zero_range

CSV_HEADER = ("t", "entropy", "d_entropy", "d2_entropy")

# kind tags attached to every number in a report
CERTIFIED = "certified_lower_bound"
ESTIMATE = "numerical_upper_estimate"
EIGENVALUE = "exact_eigenvalue"
COMPUTED = "computed"
PARAMETER = "parameter"
TAGS = (CERTIFIED, ESTIMATE, EIGENVALUE, COMPUTED, PARAMETER)


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# schema

TOP_KEYS = {"seed", "output", "formats", "model", "tasks"}
MODEL_KEYS = {"preset", "params", "family", "a", "b", "offset", "c", "lambda", "N"}
TASK_KEYS = {
    "certify": {"samples"},
    "estimate": {"constant", "restarts"},
    "evolve": {"f0", "f0_scale", "t_max", "grid", "check", "constant"},
    "counterexample": {"c1", "eps"},
    "smooth": {"n0", "C1", "delta"},
    "sweep": {"parameter", "values", "task", "parallel"},
}
FORMATS = {"json", "csv"}


@dataclass
class RunConfig:
    model: dict[str, Any]
    tasks: list[dict[str, Any]]
    seed: int = 0
    output: str | None = None
    formats: tuple[str, ...] = ("json", "csv")
    source: str = field(default="", repr=False)

    def canonical(self) -> dict[str, Any]:
        return {"model": self.model, "tasks": self.tasks, "seed": self.seed,
                "formats": list(self.formats)}

    def digest(self) -> str:
        blob = json.dumps(_plain(self.canonical()), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _line_of(text: str, key: str, start: int = 0) -> int | None:
    """1-based line of the first assignment or table header for ``key`` at or after ``start``."""
    pat = re.compile(rf'(^|[\s{{,.\[])"?{re.escape(key)}"?\s*(=|\])')
    for i, line in enumerate(text.splitlines()[start:], start=start):
        body = line.split("#", 1)[0]
        if pat.search(body):
            return i + 1
    return None


def _unknown(text: str, where: str, keys, allowed) -> None:
    bad = sorted(set(keys) - set(allowed))
    if bad:
        line = _line_of(text, bad[0])
        at = f" (line {line})" if line else ""
        raise ConfigError(f"unknown key {bad[0]!r} in {where}{at}; allowed: {sorted(allowed)}")


def _require(text: str, where: str, table: dict, key: str):
    if key not in table:
        raise ConfigError(f"missing key {key!r} in {where}")
    return table[key]


def validate_task(task: dict[str, Any], text: str = "", where: str = "tasks") -> dict[str, Any]:
    if not isinstance(task, dict):
        raise ConfigError(f"{where} entries must be tables")
    kind = _require(text, where, task, "kind")
    if kind not in TASK_KEYS:
        line = _line_of(text, "kind")
        raise ConfigError(f"unknown task kind {kind!r} in {where}"
                          + (f" (line {line})" if line else "") + f"; choose from {sorted(TASK_KEYS)}")
    _unknown(text, f"{where} ({kind})", set(task) - {"kind"}, TASK_KEYS[kind])
    if kind == "estimate" and task.get("constant", "mlsi") not in ("lsi", "mlsi", "kappa", "gap"):
        raise ConfigError(f"estimate constant must be lsi, mlsi, kappa or gap, got {task['constant']!r}")
    if kind == "counterexample":
        for k in ("c1", "eps"):
            _require(text, where, task, k)
    if kind == "smooth":
        _require(text, where, task, "n0")
    if kind == "sweep":
        for k in ("parameter", "values", "task"):
            _require(text, where, task, k)
        inner = validate_task(task["task"], text, f"{where}.task")
        if inner["kind"] == "sweep":
            raise ConfigError("nested sweeps are not supported")
    return task


def validate_model(model: dict[str, Any], text: str = "") -> dict[str, Any]:
    if not isinstance(model, dict):
        raise ConfigError("model must be a table")
    _unknown(text, "model", model, MODEL_KEYS)
    if "preset" in model:
        extra = set(model) - {"preset", "params"}
        if extra:
            _unknown(text, "model (preset form)", extra, set())
        name = model["preset"]
        if name not in PRESET_PARAMS:
            raise ConfigError(f"unknown preset {name!r} (line {_line_of(text, 'preset')}); "
                              f"choose from {sorted(PRESET_PARAMS)}")
        required, optional = PRESET_PARAMS[name]
        params = model.get("params", {})
        _unknown(text, f"model.params ({name})", params, set(required) | set(optional))
    elif "family" not in model:
        raise ConfigError("model needs either 'preset' or 'family'")
    return model


def parse_config(text: str) -> RunConfig:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    _unknown(text, "top level", doc, TOP_KEYS)
    model = validate_model(_require(text, "top level", doc, "model"), text)
    tasks = _require(text, "top level", doc, "tasks")
    if not isinstance(tasks, list) or not tasks:
        raise ConfigError("config needs at least one [[tasks]] entry")
    tasks = [validate_task(t, text) for t in tasks]
    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError(f"seed must be a nonnegative integer (line {_line_of(text, 'seed')})")
    formats = tuple(doc.get("formats", ("json", "csv")))
    bad = set(formats) - FORMATS
    if bad:
        raise ConfigError(f"unknown format(s) {sorted(bad)} (line {_line_of(text, 'formats')})")
    return RunConfig(model, tasks, seed, doc.get("output"), formats, text)


def load_config(path: str | Path) -> RunConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def build_model(model: dict[str, Any]) -> ModelSpec:
    """ModelSpec from a validated model table."""
    try:
        if "preset" in model:
            return make_preset(model["preset"], **model.get("params", {}))
        family = model["family"]
        if family == "birth_death":
            return birth_death(model["a"], model["b"], offset=model.get("offset", 0))
        if family == "zero_range":
            return preset_zero_range(model["c"])
        if family == "bernoulli_laplace":
            return preset_bernoulli_laplace(model["lambda"], model["N"])
    except KeyError as exc:
        raise ConfigError(f"model is missing key {exc.args[0]!r}") from None
    except ModelError as exc:
        raise ConfigError(str(exc)) from None
    raise ConfigError(f"unknown family {model['family']!r}")


# ---------------------------------------------------------------------------
# reports


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, np.generic):
        return x.item()
    return x


def _is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _finite(x):
    # JSON has no inf / nan; keep them as strings
    if isinstance(x, float) and not math.isfinite(x):
        return "inf" if x > 0 else ("-inf" if x < 0 else "nan")
    return x


def _numeric_list(x) -> bool:
    return isinstance(x, list) and len(x) > 0 and all(
        _is_number(v) or _numeric_list(v) or v is None for v in x)


def tag(tree, kind: str):
    """Wrap every number (and numeric list) in ``tree`` as {"kind": kind, "value"/"values": ...}."""
    if kind not in TAGS:
        raise ValueError(f"unknown tag {kind!r}")
    tree = _plain(tree)
    if isinstance(tree, dict):
        if set(tree) in ({"kind", "value"}, {"kind", "values"}) and tree["kind"] in TAGS:
            return tree
        return {k: tag(v, kind) for k, v in tree.items()}
    if _numeric_list(tree):
        return {"kind": kind, "values": _deep_finite(tree)}
    if isinstance(tree, list):
        return [tag(v, kind) for v in tree]
    if _is_number(tree):
        return {"kind": kind, "value": _finite(tree)}
    return tree


def _deep_finite(x):
    return [_deep_finite(v) for v in x] if isinstance(x, list) else _finite(x)


def untagged_numbers(doc, path: str = "$") -> list[str]:
    """Paths of numbers in ``doc`` that are not inside a kind-tagged leaf."""
    if isinstance(doc, dict):
        if set(doc) in ({"kind", "value"}, {"kind", "values"}) and doc["kind"] in TAGS:
            return []
        out = []
        for k, v in doc.items():
            out += untagged_numbers(v, f"{path}.{k}")
        return out
    if isinstance(doc, list):
        out = []
        for i, v in enumerate(doc):
            out += untagged_numbers(v, f"{path}[{i}]")
        return out
    return [path] if _is_number(doc) else []


def dumps(doc) -> str:
    return json.dumps(doc, sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def write_json(doc, path: str | Path) -> None:
    Path(path).write_text(dumps(doc), encoding="utf-8", newline="\n")


# ---------------------------------------------------------------------------
# trajectories


def emit_trajectory_csv(traj, path: str | Path) -> None:
    """Columns t, entropy, d_entropy, d2_entropy with 17 significant digits and LF endings."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for row in zip(traj.times, traj.ent, traj.dent, traj.d2ent):
            w.writerow([f"{float(v):.17g}" for v in row])


def read_trajectory_csv(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if tuple(rows[0]) != CSV_HEADER:
        raise ValueError(f"unexpected header {rows[0]}")
    data = np.array([[float(v) for v in r] for r in rows[1:]]).reshape(-1, len(CSV_HEADER))
    return {name: data[:, i] for i, name in enumerate(CSV_HEADER)}
