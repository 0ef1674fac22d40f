"""Trace-level property verdicts and standalone brute-force oracles.

Verdicts carry event indices as witnesses. For safety properties the
witness prefix ``trace[:max(witness) + 1]`` (plus the end record) is enough
to reproduce the violation. Liveness is read as "holds at quiescence" and
is skipped when the run hit its step budget.
"""
from __future__ import annotations

import copy
import random
from dataclasses import dataclass, field
from itertools import combinations

from .core import Pair
from .sim import Trace


@dataclass
class Verdict:
    property: str
    holds: bool
    witness: list = field(default_factory=list)
    detail: str = ""
    skipped: bool = False

    def to_dict(self):
        return {
            "property": self.property,
            "holds": self.holds,
            "skipped": self.skipped,
            "witness": list(self.witness),
            "detail": self.detail,
        }


class TraceError(ValueError):
    pass


def _ok(name, skipped=False, detail=""):
    return Verdict(name, True, [], detail, skipped)


def _bad(name, witness, detail):
    return Verdict(name, False, sorted(set(witness)), detail)


def structural_check(trace) -> Verdict:
    try:
        if not trace or trace[0].get("ev") != "scenario":
            raise TraceError("missing scenario header")
        if trace[-1].get("ev") != "end":
            raise TraceError("missing end record (truncated trace?)")
        for pos, rec in enumerate(trace):
            if rec.get("i") != pos or "ev" not in rec or "tick" not in rec:
                raise TraceError(f"record {pos} is malformed")
        trace.scenario  # noqa: B018 - parse check
    except TraceError as exc:
        return _bad("trace-structure", [], str(exc))
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        return _bad("trace-structure", [], f"unreadable scenario: {exc}")
    return _ok("trace-structure")


def _quiescent(trace) -> bool:
    end = trace[-1]
    return bool(end.get("quiescent", False))


def instances_of(trace, prefix=None):
    seen = []
    for rec in trace:
        inst = rec.get("inst")
        if inst is not None and rec["ev"] in ("propose", "snapshot", "accept") and inst not in seen:
            if prefix is None or inst.startswith(prefix):
                seen.append(inst)
    return seen


def _slices(trace):
    """Per-instance sub-traces (header, the instance's records, end record),
    so checking many instances does not rescan the whole trace each time."""
    parts = {}
    for rec in trace:
        inst = rec.get("inst")
        if inst is not None and rec["ev"] in ("propose", "snapshot", "accept"):
            parts.setdefault(inst, Trace([trace[0]])).append(rec)
    for part in parts.values():
        part.append(trace[-1])
    return parts


def _cac_view(trace, inst, correct):
    proposals = {}  # (p, digest) -> index
    snaps = {p: [] for p in correct}
    accepts = {p: [] for p in correct}
    for rec in trace:
        if rec.get("inst") != inst:
            continue
        ev = rec["ev"]
        if ev == "propose":
            proposals.setdefault(tuple(rec["pair"]), rec["i"])
        elif ev == "snapshot" and rec["p"] in snaps:
            cand = None if rec["cand"] is None else frozenset(map(tuple, rec["cand"]))
            snaps[rec["p"]].append((rec["i"], cand, frozenset(map(tuple, rec["acc"]))))
        elif ev == "accept" and rec["p"] in accepts:
            accepts[rec["p"]].append(rec)
    return proposals, snaps, accepts


def check_cac(trace, scenario=None, inst=None, verify_proofs=True):
    """The five CAC properties plus single acceptance, fast-path exclusivity
    and proof validity for one instance."""
    st = structural_check(trace)
    if not st.holds:
        return [st]
    return _check_cac(trace, scenario or trace.scenario, inst, verify_proofs)


def _check_cac(trace, scenario, inst, verify_proofs=True):
    if inst is None:
        inst = {"cac": "cac", "cc": "cc/cac1"}.get(scenario.stack, "cac")
    tag = "" if inst == "cac" else f"@{inst}"
    correct = set(scenario.correct)
    proposals, snaps, accepts = _cac_view(trace, inst, correct)
    verdicts = []

    bad = []
    for p, rows in snaps.items():
        for i, cand, _ in rows:
            if cand is None:
                continue
            for j, dg in cand:
                if j in correct and (j, dg) not in proposals:
                    bad.append((i, f"p{p} holds candidate ({j},{dg}) never proposed by correct p{j}"))
    verdicts.append(_bad("validity" + tag, [bad[0][0]], bad[0][1]) if bad else _ok("validity" + tag))

    bad = []
    for p, rows in snaps.items():
        first_acc = {}
        for i, _, acc in rows:
            for pair in acc:
                first_acc.setdefault(pair, i)
        for i, cand, _ in rows:
            if cand is None:
                continue
            for pair, ai in first_acc.items():
                if pair not in cand:
                    bad.append(([i, ai], f"p{p} accepted {pair} outside candidates at event {i}"))
        if bad:
            break
    verdicts.append(_bad("prediction" + tag, bad[0][0], bad[0][1]) if bad else _ok("prediction" + tag))

    bad = []
    for p, rows in snaps.items():
        for i, cand, acc in rows:
            if acc and cand is None:
                bad.append((i, f"p{p} accepted with candidates still Top"))
    verdicts.append(_bad("non-triviality" + tag, [bad[0][0]], bad[0][1]) if bad else _ok("non-triviality" + tag))

    bad = []
    for p, recs in accepts.items():
        seen = {}
        for rec in recs:
            key = tuple(rec["pair"])
            if key in seen:
                bad.append(([seen[key], rec["i"]], f"p{p} accepted {key} twice"))
            seen[key] = rec["i"]
    verdicts.append(_bad("single-acceptance" + tag, bad[0][0], bad[0][1]) if bad else _ok("single-acceptance" + tag))

    fast = [rec for recs in accepts.values() for rec in recs if rec.get("fast")]
    bad = []
    if fast:
        f = fast[0]
        for recs in accepts.values():
            for rec in recs:
                if rec["pair"] != f["pair"]:
                    bad.append(([f["i"], rec["i"]], f"fast path on {f['pair']} but p{rec['p']} accepted {rec['pair']}"))
    verdicts.append(
        _bad("fast-path-exclusivity" + tag, bad[0][0], bad[0][1]) if bad else _ok("fast-path-exclusivity" + tag)
    )

    if verify_proofs and scenario.algorithm == "optimal":
        verdicts.append(_check_proofs(trace, scenario, inst, accepts, tag))

    final = {p: (rows[-1][2] if rows else frozenset()) for p, rows in snaps.items()}
    live = _quiescent(trace)
    if not live:
        verdicts.append(_ok("local-termination" + tag, skipped=True, detail="budget exhausted"))
        verdicts.append(_ok("global-termination" + tag, skipped=True, detail="budget exhausted"))
        return verdicts
    end = trace[-1]["i"]
    bad = []
    for (j, _), idx in proposals.items():
        if j in correct and not final.get(j):
            bad.append(([idx, end], f"correct proposer p{j} accepted nothing"))
    verdicts.append(_bad("local-termination" + tag, *bad[0]) if bad else _ok("local-termination" + tag))
    bad = []
    for a in sorted(final):
        for b in sorted(final):
            missing = final[a] - final[b]
            if missing:
                bad.append(([end], f"p{a} accepted {sorted(missing)} but p{b} did not"))
    verdicts.append(_bad("global-termination" + tag, *bad[0]) if bad else _ok("global-termination" + tag))
    return verdicts


def _check_proofs(trace, scenario, inst, accepts, tag):
    from .optimal import verify_acceptance
    from .sim import Keys, digest

    keys = Keys(scenario)
    cfg = _engine_config(scenario, keys, inst)
    values = _value_index(trace, inst)
    for recs in accepts.values():
        for rec in recs:
            proof = rec.get("proof")
            j, dg = rec["pair"]
            value = values.get((j, dg))
            if proof is None or value is None:
                return _bad("proof-of-acceptance" + tag, [rec["i"]], "acceptance without a checkable proof")
            if digest(value) != dg or not verify_acceptance(Pair(j, value), bytes.fromhex(proof), cfg):
                return _bad("proof-of-acceptance" + tag, [rec["i"]], f"proof for {rec['pair']} does not verify")
    return _ok("proof-of-acceptance" + tag)


def _engine_config(scenario, keys, inst):
    from .core import EngineConfig

    k = 1 if inst.startswith(("claim/", "commit/")) else scenario.k
    return EngineConfig(n=scenario.n, t=scenario.t, k=k, directory=keys.directory, provider=keys.provider,
                        instance=inst.encode())


def _value_index(trace, inst):
    """(proposer, digest) -> value bytes, recovered from proposals and proofs."""
    from .core import MSG_PROOF, decode_message
    from .sim import decode_value, digest

    out = {}
    for rec in trace:
        if rec.get("inst") != inst:
            continue
        if rec["ev"] == "propose" and "value" in rec:
            v = decode_value(rec["value"])
            out[(rec["pair"][0], digest(v))] = v
        elif rec["ev"] == "accept" and rec.get("proof") and tuple(rec["pair"]) not in out:
            try:
                kind, stmts = decode_message(bytes.fromhex(rec["proof"]))
            except ValueError:
                continue
            if kind != MSG_PROOF:
                continue
            for s in stmts:
                p = s.payload
                if isinstance(p, Pair):
                    out.setdefault((p.proposer, digest(p.value)), p.value)
    return out


def check_all(trace, scenario=None):
    """Every applicable property set for the trace's stack."""
    st = structural_check(trace)
    if not st.holds:
        return [st]
    scenario = scenario or trace.scenario
    if scenario.stack == "cac":
        return check_cac(trace, scenario)
    if scenario.stack == "cc":
        out = []
        for inst in ("cc/cac1", "cc/cac2"):
            out += check_cac(trace, scenario, inst)
        from .consensus import check_consensus, check_rc

        out += check_rc(trace, scenario)
        out += check_consensus(trace, scenario)
        return out
    from .naming import check_naming

    out = []
    for inst, part in _slices(trace).items():
        out += _check_cac(part, scenario, inst)
    out += check_naming(trace, scenario)
    return out


def violations(verdicts):
    return [v for v in verdicts if not v.holds]


def witness_prefix(trace, verdict):
    """The shortest trace prefix that still shows ``verdict``'s violation,
    closed with the original end record."""
    from .sim import Trace

    if not verdict.witness:
        return Trace(trace)
    cut = max(verdict.witness)
    if cut >= len(trace) - 1:
        return Trace(trace)
    end = dict(trace[-1])
    end["i"] = cut + 1
    end["quiescent"] = False
    return Trace(list(trace[: cut + 1]) + [end])


# -- standalone oracles -------------------------------------------------------


class PreconditionError(ValueError):
    pass


def pigeonhole_oracle(c: int, t: int, sets):
    """Return an element present in at least 2t+1 of the ``c`` sets, or None.

    Preconditions: c >= 3t+1, exactly c sets drawn from a universe of at most
    c elements, each of size >= c - t."""
    sets = [frozenset(s) for s in sets]
    if c < 3 * t + 1:
        raise PreconditionError(f"need c >= 3t+1 (c={c}, t={t})")
    if len(sets) != c:
        raise PreconditionError(f"expected {c} sets, got {len(sets)}")
    universe = frozenset().union(*sets)
    if len(universe) > c:
        raise PreconditionError(f"universe has {len(universe)} > c elements")
    for s in sets:
        if len(s) < c - t:
            raise PreconditionError(f"set of size {len(s)} < c - t = {c - t}")
    for x in sorted(universe):
        if sum(x in s for s in sets) >= 2 * t + 1:
            return x
    return None


def random_set_system(c: int, t: int, rng: random.Random):
    size_u = rng.randint(c - t, c)
    universe = list(range(size_u))
    out = []
    for _ in range(c):
        k = rng.randint(c - t, size_u)
        out.append(frozenset(rng.sample(universe, k)))
    return out


class BoundExceeded(RuntimeError):
    pass


def enumerate_small(scenario, bound: int = 200, state_budget: int = 200_000):
    """All reachable outcomes of a small CAC scenario over every delivery
    interleaving.

    The scenario must use the bare CAC stack with n <= 4. Byzantine processes
    may only be silent. Each outcome is a tuple, in process order over the
    correct processes, of (candidates or None, accepted pairs). Raises
    BoundExceeded when some interleaving delivers more than ``bound`` messages
    or the number of distinct states exceeds ``state_budget``."""
    from .sim import Keys

    scenario.validate()
    if scenario.n > 4 or scenario.stack != "cac":
        raise PreconditionError("enumerate_small handles bare CAC scenarios with n <= 4")
    if any(b.kind != "silent" for b in scenario.byzantine.values()):
        raise PreconditionError("only silent Byzantine processes are supported")
    keys = Keys(scenario)
    correct = scenario.correct
    engines = {}
    for p in correct:
        cfg = _engine_config(scenario, keys, "cac")
        cfg.k = scenario.k
        cfg.fault = scenario.fault
        if scenario.algorithm == "simple":
            from .simple import SimpleCac as cls
        else:
            from .optimal import OptimalCac as cls
        engines[p] = cls(cfg, p, keys.pairs[p])

    inflight = []
    for p in correct:
        v = scenario.proposers.get(p)
        if v is None:
            continue
        for ev in engines[p].propose(v):
            if hasattr(ev, "payload"):
                inflight.extend((p, q, ev.payload) for q in correct)

    shared = {id(e.cfg): e.cfg for e in engines.values()}

    def freeze(engs, msgs):
        parts = []
        for p in correct:
            e = engs[p]
            parts.append((frozenset(e.sigs.stmts), e._cand, frozenset(e._acc)))
        return tuple(parts), tuple(sorted(msgs))

    def clone(engs, p):
        # only the receiving engine changes; the others stay shared
        out = dict(engs)
        out[p] = copy.deepcopy(engs[p], dict(shared))
        return out

    outcomes = set()
    seen = set()
    stack = [(engines, tuple(inflight), 0)]
    while stack:
        engs, msgs, depth = stack.pop()
        key = freeze(engs, msgs)
        if key in seen:
            continue
        seen.add(key)
        if len(seen) > state_budget:
            raise BoundExceeded(f"more than {state_budget} states")
        if not msgs:
            outcomes.add(tuple((engs[p]._cand.pairs, frozenset(engs[p]._acc)) for p in correct))
            continue
        if depth >= bound:
            raise BoundExceeded(f"an interleaving needs more than {bound} deliveries")
        # deliveries to different processes commute, so branching over one
        # destination's queue reaches every terminal state
        dst0 = min(m[1] for m in msgs)
        for idx in range(len(msgs)):
            if msgs[idx][1] != dst0 or (idx > 0 and msgs[idx] == msgs[idx - 1]):
                continue
            src, dst, payload = msgs[idx]
            nxt = clone(engs, dst)
            rest = list(msgs[:idx] + msgs[idx + 1:])
            for ev in nxt[dst].handle(payload, src):
                if hasattr(ev, "payload"):
                    rest.extend((dst, q, ev.payload) for q in correct)
            stack.append((nxt, tuple(sorted(rest)), depth + 1))
    return outcomes
