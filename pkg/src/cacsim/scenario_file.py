"""Scenario files (YAML).

Top-level keys::

    n, t, k, algorithm, stack, proposers, byzantine, schedule, timers,
    max_steps, crypto, key_seeds, fault

``schedule`` is either a kind name or a mapping with ``kind``, ``seed``,
``delay_min``, ``delay_max``, ``default_delay``, ``rules``, ``delays`` and
``script`` (a YAML/JSON file holding ``rules``/``delays``, resolved relative
to the scenario file). ``timers`` holds ``delta_rc``, ``delta_cc`` and
``gc_delay``.

Every error names the file, line and key it concerns.
"""
from __future__ import annotations

import os

import yaml

from .core import ConfigurationError
from .sim import Scenario

TOP_KEYS = {
    "n": int,
    "t": int,
    "k": int,
    "algorithm": str,
    "stack": str,
    "proposers": dict,
    "byzantine": dict,
    "schedule": (dict, str),
    "timers": dict,
    "max_steps": int,
    "crypto": str,
    "key_seeds": dict,
    "fault": (str, type(None)),
}
SCHEDULE_KEYS = {
    "kind": str,
    "seed": int,
    "delay_min": int,
    "delay_max": int,
    "default_delay": int,
    "rules": list,
    "delays": list,
    "script": str,
}
TIMER_KEYS = {"delta_rc": int, "delta_cc": int, "gc_delay": (int, type(None))}
REQUIRED = ("n", "t")

# which key a semantic error from Scenario.validate most likely concerns
_HINTS = [
    ("algorithm", "algorithm"),
    ("stack", "stack"),
    ("Byzantine", "byzantine"),
    ("behavior", "byzantine"),
    ("process id", "proposers"),
    ("schedule", "schedule"),
    ("timer", "timers"),
    ("3t+k", "n"),
    ("4t", "n"),
    ("k >= 1", "k"),
]


class ScenarioError(ValueError):
    def __init__(self, source, line, key, message):
        self.source, self.line, self.key = source, line, key
        where = f"{source}:{line}" if line else source
        super().__init__(f"{where}: {key}: {message}" if key else f"{where}: {message}")


def _lines(node, prefix=""):
    """Dotted key path -> 1-based line, for every mapping key in the document."""
    out = {}
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            path = f"{prefix}{k.value}"
            out[path] = k.start_mark.line + 1
            out.update(_lines(v, path + "."))
    return out


def _typecheck(data, schema, lines, source, prefix=""):
    for key, val in data.items():
        path = f"{prefix}{key}"
        want = schema.get(key)
        if want is None:
            raise ScenarioError(source, lines.get(path), path, f"unknown key (expected one of {sorted(schema)})")
        if isinstance(val, bool) or not isinstance(val, want):
            names = want.__name__ if isinstance(want, type) else " or ".join(w.__name__ for w in want)
            raise ScenarioError(source, lines.get(path), path, f"expected {names}, got {type(val).__name__}")


def loads_scenario(text: str, source: str = "<string>", base_dir: str = ".") -> Scenario:
    try:
        root = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ScenarioError(source, mark.line + 1 if mark else None, None, f"not valid YAML ({exc.problem})")
    if not isinstance(data, dict):
        raise ScenarioError(source, 1, None, "top level must be a mapping")
    lines = _lines(root)
    data = {str(k): v for k, v in data.items()}
    _typecheck(data, TOP_KEYS, lines, source)
    for key in REQUIRED:
        if key not in data:
            raise ScenarioError(source, 1, key, "required key missing")
    sched = data.get("schedule")
    if isinstance(sched, dict):
        sched = {str(k): v for k, v in sched.items()}
        _typecheck(sched, SCHEDULE_KEYS, lines, source, "schedule.")
        script = sched.pop("script", None)
        if script is not None:
            sched.update(_load_script(script, lines.get("schedule.script"), source, base_dir))
        data["schedule"] = sched
    if isinstance(data.get("timers"), dict):
        _typecheck(data["timers"], TIMER_KEYS, lines, source, "timers.")
    for key in ("proposers", "byzantine", "key_seeds"):
        for pid in data.get(key) or {}:
            if not str(pid).isdigit():
                raise ScenarioError(source, lines.get(f"{key}.{pid}"), f"{key}.{pid}", "process ids must be integers")
    for pid, b in (data.get("byzantine") or {}).items():
        if not isinstance(b, (str, dict)) or (isinstance(b, dict) and "kind" not in b):
            raise ScenarioError(source, lines.get(f"byzantine.{pid}"), f"byzantine.{pid}", "needs a behavior kind")
    data["proposers"] = {p: str(v) for p, v in (data.get("proposers") or {}).items()}
    try:
        return Scenario.from_dict(data).validate()
    except ConfigurationError as exc:
        key = next((k for hint, k in _HINTS if hint in str(exc)), None)
        raise ScenarioError(source, lines.get(key) if key else None, key, str(exc))
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(source, None, None, f"cannot build scenario: {exc}")


def _load_script(path, line, source, base_dir):
    full = path if os.path.isabs(path) else os.path.join(base_dir, path)
    try:
        with open(full) as fh:
            doc = yaml.safe_load(fh)
    except (OSError, yaml.YAMLError) as exc:
        raise ScenarioError(source, line, "schedule.script", f"cannot read {path}: {exc}")
    if not isinstance(doc, dict) or not set(doc) <= {"rules", "delays", "default_delay"}:
        raise ScenarioError(source, line, "schedule.script", f"{path} must map rules/delays/default_delay")
    return doc


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        text = fh.read()
    return loads_scenario(text, str(path), os.path.dirname(os.path.abspath(path)))


def dumps_scenario(sc: Scenario) -> str:
    return yaml.safe_dump(sc.to_dict(), sort_keys=False)


def save_scenario(sc: Scenario, path):
    with open(path, "w") as fh:
        fh.write(dumps_scenario(sc))
