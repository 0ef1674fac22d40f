"""Per-run observables and sweep aggregates.

Round counts are message waves: a message sent while handling a wave-w
delivery is wave w + 1. For Cascading Consensus the decide rounds are
counted per layer (system-wide and Restrained Consensus).
"""
from __future__ import annotations

import statistics
from dataclasses import asdict, dataclass
from typing import Optional

from .checker import violations
from .sim import _main_instance

# CSV column order
FIELDS = (
    "seed",
    "first_accept",
    "all_accept",
    "messages",
    "d",
    "ell",
    "decide_sys",
    "decide_rc",
    "dropped",
    "quiescent",
    "violations",
    "verdict",
)
NUMERIC = ("first_accept", "all_accept", "messages", "d", "ell", "decide_sys", "decide_rc", "dropped", "violations")


@dataclass
class MetricsReport:
    seed: int
    first_accept: Optional[int]
    all_accept: Optional[int]
    messages: int
    d: int
    ell: int
    decide_sys: Optional[int]
    decide_rc: Optional[int]
    dropped: int
    quiescent: bool
    violations: int
    verdict: str

    def to_dict(self):
        return asdict(self)

    def row(self):
        return [getattr(self, f) for f in FIELDS]


def acceptance_waves(trace, scenario=None) -> dict:
    """Correct process -> wave of its first acceptance on the main instance
    (first registration for naming)."""
    scenario = scenario or trace.scenario
    correct = set(scenario.correct)
    main = _main_instance(scenario)
    ev = "register" if scenario.stack == "naming" else "accept"
    out = {}
    for rec in trace:
        if rec["ev"] == ev and rec["p"] in correct and (ev == "register" or rec["inst"] == main):
            out.setdefault(rec["p"], rec["wave"])
    return out


def measure(trace, stats, verdicts, scenario=None) -> MetricsReport:
    scenario = scenario or trace.scenario
    waves = acceptance_waves(trace, scenario)
    correct = set(scenario.correct)
    decides = [r for r in trace if r["ev"] == "decide" and r["p"] in correct]
    bad = violations(verdicts)
    return MetricsReport(
        seed=scenario.schedule.seed,
        first_accept=min(waves.values(), default=None),
        all_accept=max(waves.values()) if waves and set(waves) == correct else None,
        messages=stats.messages,
        d=stats.d,
        ell=stats.ell,
        decide_sys=max((r["sys"] for r in decides), default=None),
        decide_rc=max((r["rc"] for r in decides), default=None),
        dropped=stats.dropped,
        quiescent=stats.quiescent,
        violations=len(bad),
        verdict="ok" if not bad else ",".join(v.property for v in bad),
    )


def aggregate(reports) -> dict:
    """field -> {min, median, max} over the runs where the field is defined."""
    out = {"runs": len(reports), "violating_runs": sum(1 for r in reports if r.violations)}
    for f in NUMERIC:
        vals = [getattr(r, f) for r in reports if getattr(r, f) is not None]
        if vals:
            out[f] = {"min": min(vals), "median": statistics.median(vals), "max": max(vals)}
    return out
