"""Restrained Consensus and Cascading Consensus.

Cascading Consensus runs three instances per process: ``cc/cac1`` (optimal
CAC over proposals), ``cc/rc`` (Restrained Consensus among the conflicting
proposers) and ``cc/cac2`` (optimal CAC over justified sets of pairs). A
conflict left in ``cc/cac2`` goes to the simulator's global-consensus oracle.

Restrained Consensus wire format::

    RCONS-SIG      u8 1, u32 count endorse (u32 signer, pair set, u32 len + sig),
                   u32 count subsets (pair set), u32 count proofs (pair, u32 len + proof)
    RCONS-RETRACT  u8 2, u32 count (u32 signer, u32 len + sig)

Cascading value (the payload proposed on ``cc/cac2``)::

    pair set E, u32 count endorse (u32 signer, u32 len + sig),
    u32 count retract (u32 signer, u32 len + sig), u32 count proofs (pair, u32 len + proof)
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Optional

from .core import (
    Accepted,
    CodecError,
    ConfigurationError,
    Pair,
    Reader,
    choice,
    decode_pair_set,
    encode_pair_set,
    lp,
    u32,
)
from .optimal import trim_proof, verify_acceptance
from .sim import EngineHost, encode_value, pair_ref

RC_SIG = 1
RC_RETRACT = 2
ENDORSE_DOMAIN = b"cacsim/rc/endorse"
RETRACT_DOMAIN = b"cacsim/rc/retract"
RETRACT_TEXT = b"RETRACT"
MAX_C = 12

CAC1 = b"cc/cac1"
RC = b"cc/rc"
CAC2 = b"cc/cac2"


def powerset(pairs) -> frozenset:
    items = sorted(pairs)
    return frozenset(
        frozenset(combo) for r in range(len(items) + 1) for combo in combinations(items, r)
    )


def endorse_bytes(instance: bytes, subset) -> bytes:
    return ENDORSE_DOMAIN + lp(instance) + encode_pair_set(subset)


def retract_bytes(instance: bytes) -> bytes:
    return RETRACT_DOMAIN + lp(instance) + RETRACT_TEXT


def largest(family) -> Optional[frozenset]:
    """Largest non-empty element; ties go to the choice()-minimal one."""
    best = None
    for s in family:
        if not s:
            continue
        if best is None or len(s) > len(best) or (len(s) == len(best) and sorted(s) < sorted(best)):
            best = s
    return best


# -- codecs -------------------------------------------------------------------


def _enc_sigs(sigs: dict) -> bytes:
    return u32(len(sigs)) + b"".join(u32(q) + lp(sig) for q, sig in sorted(sigs.items()))


def _dec_sigs(r: Reader) -> dict:
    out = {}
    for _ in range(r.u32()):
        q = r.u32()
        sig = r.lp()
        if q in out:
            raise CodecError("duplicate signer")
        out[q] = sig
    return out


def _enc_proofs(proofs: dict) -> bytes:
    return u32(len(proofs)) + b"".join(p.encode() + lp(pr) for p, pr in sorted(proofs.items()))


def _dec_proofs(r: Reader) -> dict:
    out = {}
    for _ in range(r.u32()):
        p = Pair.read(r)
        out[p] = r.lp()
    return out


def encode_rc_sig(endorse: dict, power_c, proofs: dict) -> bytes:
    parts = [bytes([RC_SIG]), u32(len(endorse))]
    for (q, subset), sig in sorted(endorse.items(), key=lambda kv: (kv[0][0], sorted(kv[0][1]))):
        parts.append(u32(q) + encode_pair_set(subset) + lp(sig))
    fam = sorted(power_c, key=lambda s: (len(s), sorted(s)))
    parts.append(u32(len(fam)))
    parts.extend(encode_pair_set(s) for s in fam)
    parts.append(_enc_proofs(proofs))
    return b"".join(parts)


def encode_rc_retract(sigs: dict) -> bytes:
    return bytes([RC_RETRACT]) + _enc_sigs(sigs)


def decode_rc(data: bytes):
    """Returns (kind, fields). Raises CodecError."""
    r = Reader(data)
    kind = r.u8()
    if kind == RC_SIG:
        endorse = {}
        for _ in range(r.u32()):
            q = r.u32()
            subset = decode_pair_set(r)
            endorse[(q, subset)] = r.lp()
        family = frozenset(decode_pair_set(r) for _ in range(r.u32()))
        proofs = _dec_proofs(r)
        r.expect_end()
        return kind, (endorse, family, proofs)
    if kind == RC_RETRACT:
        sigs = _dec_sigs(r)
        r.expect_end()
        return kind, sigs
    raise CodecError(f"unknown RC message kind {kind}")


@dataclass(frozen=True)
class CcValue:
    E: frozenset
    endorse: dict = field(default_factory=dict, hash=False)
    retract: dict = field(default_factory=dict, hash=False)
    proofs: dict = field(default_factory=dict, hash=False)

    def encode(self) -> bytes:
        return (
            encode_pair_set(self.E)
            + _enc_sigs(self.endorse)
            + _enc_sigs(self.retract)
            + _enc_proofs(self.proofs)
        )

    @staticmethod
    def decode(data: bytes) -> "CcValue":
        r = Reader(data)
        E = decode_pair_set(r)
        endorse = _dec_sigs(r)
        retract = _dec_sigs(r)
        proofs = _dec_proofs(r)
        r.expect_end()
        return CcValue(E, endorse, retract, proofs)


# -- Restrained Consensus ---------------------------------------------------


@dataclass(frozen=True)
class RcBroadcast:
    payload: bytes
    kind: str


@dataclass(frozen=True)
class RcTimer:
    duration: int


@dataclass(frozen=True)
class RcDecide:
    E: frozenset
    endorse: dict = field(hash=False)
    retract: dict = field(hash=False)


@dataclass(frozen=True)
class RcNoDecision:
    reason: str = "timer"


class RestrainedConsensus:
    """Timer-bounded agreement among the processes whose pairs conflict.

    Only a process that rcons-proposed can decide; a process that answered
    with RCONS-RETRACT ends through its timer."""

    def __init__(self, me, kp, provider, directory, instance: bytes, delta_rc: int,
                 verify_proof: Callable[[Pair, bytes], bool]):
        self.me = me
        self.kp = kp
        self.provider = provider
        self.directory = directory
        self.instance = instance
        self.delta_rc = delta_rc
        self.verify_proof = verify_proof
        self.retract = False
        self.proposed = False
        self.power_c = frozenset()
        self.endorse: dict = {}  # (signer, subset) -> sig
        self.retract_sigs: dict = {}  # signer -> sig
        self.proofs: dict = {}  # pair -> proof
        self.timer_started = False
        self.outcome = None

    @property
    def timer_duration(self):
        return 2 * self.delta_rc

    def _verify(self, signer, msg, sig) -> bool:
        pk = self.directory.get(signer)
        return pk is not None and self.provider.verify(pk, msg, sig)

    def _start_timer(self, events):
        if not self.timer_started:
            self.timer_started = True
            events.append(RcTimer(self.timer_duration))

    def _no_decision(self, reason, events):
        if self.outcome is None:
            self.outcome = ("no_decision", reason)
            events.append(RcNoDecision(reason))
        return events

    def propose(self, C, pair: Pair, proof: bytes) -> list:
        C = frozenset(C)
        events = []
        if self.retract or self.proposed or pair not in C or pair.proposer != self.me:
            return events
        if not self.verify_proof(pair, proof):
            return events
        if len(C) > MAX_C:
            raise ConfigurationError(f"|C| = {len(C)} exceeds the powerset cap of {MAX_C}")
        self.proposed = True
        self.power_c = powerset(C)
        for subset in self.power_c:
            sig = self.provider.sign(self.kp, endorse_bytes(self.instance, subset))
            self.endorse[(self.me, subset)] = sig
        self.proofs = {pair: proof}
        mine = {k: v for k, v in self.endorse.items() if k[0] == self.me}
        events.append(RcBroadcast(encode_rc_sig(mine, self.power_c, self.proofs), "RCONS-SIG"))
        self._start_timer(events)
        return events

    def handle(self, data: bytes, sender: int) -> list:
        if self.outcome is not None:
            return []
        try:
            kind, body = decode_rc(data)
        except CodecError:
            return self._no_decision("malformed", [])
        if kind == RC_SIG:
            return self.on_sig(*body)
        return self.on_retract(body)

    def _sig_problem(self, endorse, family, proofs) -> str:
        C = frozenset().union(*family) if family else frozenset()
        for p, pr in proofs.items():
            if not self.verify_proof(p, pr):
                return "invalid-proof"
            if p not in C:
                return "proof-outside-C"
        proven = {p.proposer for p in proofs}
        for (q, subset), sig in endorse.items():
            if q not in proven:
                return "unproven-signer"
            if not self._verify(q, endorse_bytes(self.instance, subset), sig):
                return "bad-signature"
        return ""

    def on_sig(self, endorse, family, proofs) -> list:
        events = []
        problem = self._sig_problem(endorse, family, proofs)
        if problem:
            return self._no_decision(problem, events)
        self.proofs.update(proofs)
        self.endorse.update(endorse)
        if not self.proposed and not self.retract:
            self.retract = True
            self.power_c = family
            sig = self.provider.sign(self.kp, retract_bytes(self.instance))
            self.retract_sigs[self.me] = sig
            events.append(RcBroadcast(encode_rc_retract({self.me: sig}), "RCONS-RETRACT"))
            self._start_timer(events)
        self.power_c = self.power_c & family
        self._drop_retracted()
        return self.check_decision(events)

    def on_retract(self, sigs: dict) -> list:
        events = []
        msg = retract_bytes(self.instance)
        for q, sig in sigs.items():
            if self._verify(q, msg, sig):
                self.retract_sigs.setdefault(q, sig)
        self._drop_retracted()
        return self.check_decision(events)

    def _drop_retracted(self):
        gone = set(self.retract_sigs)
        if gone:
            self.power_c = frozenset(s for s in self.power_c if not any(p.proposer in gone for p in s))

    def check_decision(self, events) -> list:
        if self.outcome is not None or not self.proposed:
            return events
        E = largest(self.power_c)
        if E is None:
            return events
        signers = {p.proposer for p in E}
        if all((q, E) in self.endorse for q in signers):
            sigs = {q: self.endorse[(q, E)] for q in sorted(signers)}
            self.outcome = ("decide", E)
            events.append(RcDecide(E, sigs, dict(self.retract_sigs)))
        return events

    def on_timer(self) -> list:
        return self._no_decision("timer", [])


# -- Cascading Consensus ----------------------------------------------------


class GcProposal:
    """What a process hands to the global-consensus oracle: an accepted
    ``cc/cac2`` pair with its acceptance proof."""

    def __init__(self, pair: Pair, proof: bytes, check: Callable[["GcProposal"], bool]):
        self.pair = pair
        self.proof = proof
        self._check = check

    def value(self) -> CcValue:
        return CcValue.decode(self.pair.value)

    def admissible(self) -> bool:
        return self._check(self)

    def order_key(self):
        return self.pair

    def describe(self) -> dict:
        return {"pair": pair_ref(self.pair), "E": [pair_ref(p) for p in sorted(self.value().E)]}


class CcApp(EngineHost):
    """One process of Cascading Consensus."""

    def __init__(self, ctx, env):
        self._init_host(ctx, env)
        sc = env.scenario
        self.engines[CAC1] = env.make_engine(CAC1, "optimal")
        self.engines[CAC2] = env.make_engine(CAC2, "optimal", value_valid=self._pair_admissible)
        self.cfg1 = env.engine_config(CAC1)
        self.cfg2 = env.engine_config(CAC2)
        self.rc = RestrainedConsensus(
            ctx.pid, env.kp, env.provider, env.keys.directory, RC, sc.delta_rc, self._verify_cac1
        )
        self.pi: dict = {}
        self.decided = None
        self.tcc_started = False
        self.cac2_proposed = False
        self.gc_proposed = False
        self._admit_cache: dict = {}
        self._proof_cache: dict = {}

    # -- admission ------------------------------------------------------------

    def _verify_cac1(self, pair: Pair, proof: bytes) -> bool:
        key = (pair, proof)
        hit = self._proof_cache.get(key)
        if hit is None:
            hit = verify_acceptance(pair, proof, self.cfg1)
            self._proof_cache[key] = hit
        return hit

    def admissible(self, data: bytes) -> bool:
        hit = self._admit_cache.get(data)
        if hit is None:
            hit = self._admissible(data)
            self._admit_cache[data] = hit
        return hit

    def _admissible(self, data: bytes) -> bool:
        try:
            val = CcValue.decode(data)
        except CodecError:
            return False
        if not val.E:
            return False
        for p in val.E:
            proof = val.proofs.get(p)
            if proof is None or not self._verify_cac1(p, proof):
                return False
        prov, dirc = self.env.provider, self.env.keys.directory
        if val.endorse:
            msg = endorse_bytes(RC, val.E)
            for q in {p.proposer for p in val.E}:
                sig = val.endorse.get(q)
                if sig is None or q not in dirc or not prov.verify(dirc[q], msg, sig):
                    return False
        msg = retract_bytes(RC)
        for q, sig in val.retract.items():
            if q not in dirc or not prov.verify(dirc[q], msg, sig):
                return False
        return True

    def _pair_admissible(self, pair: Pair) -> bool:
        return self.admissible(pair.value)

    def _gc_check(self, prop: GcProposal) -> bool:
        return self.admissible(prop.pair.value) and verify_acceptance(prop.pair, prop.proof, self.cfg2)

    # -- plumbing -------------------------------------------------------------

    def start(self):
        v = self.env.scenario.proposers.get(self.ctx.pid)
        if v is not None:
            self.engine_propose(CAC1, v)

    def on_message(self, src, inst, payload):
        if inst == RC:
            self._rc_events(self.rc.handle(payload, src))
            return
        eng = self.engines.get(inst)
        if eng is None:
            return
        for ev in self.pump(inst, eng.handle(payload, src)):
            if isinstance(ev, Accepted):
                if inst == CAC1:
                    self.on_cac1_accept(ev.entry)
                else:
                    self.on_cac2_accept(ev.entry)

    def on_timer(self, name):
        if name == "T_RC":
            self._rc_events(self.rc.on_timer())
        elif name == "T_CC":
            self._cac2_fallback()

    def on_gc_decide(self, decision):
        self._decide(choice(decision.value().E), "gc")

    def _decide(self, pair: Pair, path: str):
        if self.decided is not None:
            return
        self.decided = pair.value
        self.ctx.note("decide", value=encode_value(pair.value), pair=pair_ref(pair), path=path)

    # -- handlers -------------------------------------------------------------

    def on_cac1_accept(self, entry):
        pair = entry.pair
        self.pi[pair] = trim_proof(pair, entry.proof)
        cand = self.engines[CAC1].candidates()
        uniform = len({p.value for p in cand.pairs}) == 1
        if (len(cand) == 1 or uniform) and self.decided is None:
            self._decide(pair, "cac1")
        elif pair.proposer == self.ctx.pid:
            was = self.rc.proposed
            events = self.rc.propose(cand.pairs, pair, self.pi[pair])
            if self.rc.proposed and not was:
                self.ctx.note("rc_propose", C=[pair_ref(p) for p in sorted(cand.pairs)], pair=pair_ref(pair))
            self._rc_events(events)
        elif not self.tcc_started:
            self.tcc_started = True
            self.ctx.set_timer("T_CC", 2 * self.env.scenario.delta_rc + self.env.scenario.delta_cc)

    def _rc_events(self, events):
        for ev in events:
            if isinstance(ev, RcBroadcast):
                self.ctx.broadcast(RC, ev.payload, ev.kind)
            elif isinstance(ev, RcTimer):
                self.ctx.set_timer("T_RC", ev.duration)
            elif isinstance(ev, RcDecide):
                self.ctx.note(
                    "rc_decide",
                    E=[pair_ref(p) for p in sorted(ev.E)],
                    endorsers=sorted(ev.endorse),
                    retractors=sorted(ev.retract),
                )
                self._cac2_from_rc(ev)
            elif isinstance(ev, RcNoDecision):
                self.ctx.note("rc_no_decision", reason=ev.reason)
                self._cac2_fallback()

    def _cac2_propose(self, value: bytes) -> bool:
        if self.cac2_proposed or not self.admissible(value):
            return False
        self.cac2_proposed = True
        self.engine_propose(CAC2, value)
        return True

    def _cac2_from_rc(self, ev: RcDecide):
        proofs = {}
        for p in ev.E:
            pr = self.pi.get(p) or self.rc.proofs.get(p)
            if pr is None:
                break
            proofs[p] = pr
        else:
            if self._cac2_propose(CcValue(ev.E, ev.endorse, ev.retract, proofs).encode()):
                return
        self._cac2_fallback()

    def _cac2_fallback(self):
        acc = self.engines[CAC1].accepted_pairs()
        if acc:
            self._cac2_propose(CcValue(acc, {}, {}, {p: self.pi[p] for p in acc}).encode())

    def on_cac2_accept(self, entry):
        E = CcValue.decode(entry.pair.value).E
        cand = self.engines[CAC2].candidates()
        uniform = len({p.value for p in cand.pairs}) == 1
        if (len(cand) == 1 or uniform) and self.decided is None:
            self._decide(choice(E), "cac2")
        elif self.decided is None and not self.gc_proposed:
            self.gc_proposed = True
            self.ctx.gc_propose(GcProposal(entry.pair, entry.proof, self._gc_check))


# -- properties -------------------------------------------------------------


def _rc_view(trace, scenario):
    correct = set(scenario.correct)
    proposed, members, outcomes = {}, set(), {}
    for rec in trace:
        ev = rec["ev"]
        if ev == "rc_propose" and rec["p"] in correct:
            proposed[rec["p"]] = rec["i"]
            members.add(rec["p"])
            members.update(ref[0] for ref in rec["C"])
        elif ev in ("rc_decide", "rc_no_decision") and rec["p"] in correct:
            outcomes.setdefault(rec["p"], []).append(rec)
    return proposed, members, outcomes


def rc_synchronous(trace, scenario, members) -> bool:
    """Every RC message between members arrived within delta_rc ticks."""
    sends = {}
    for rec in trace:
        if rec["ev"] == "send" and rec["inst"] == RC.decode():
            sends[rec["mid"]] = rec
        elif rec["ev"] == "deliver" and rec["mid"] in sends:
            s = sends[rec["mid"]]
            if s["src"] in members and s["dst"] in members and rec["tick"] - s["tick"] > scenario.delta_rc:
                return False
    return True


def check_rc(trace, scenario=None):
    from .checker import Verdict, _quiescent

    scenario = scenario or trace.scenario
    proposed, members, outcomes = _rc_view(trace, scenario)
    correct = set(scenario.correct)
    out = []

    bad = [recs for recs in outcomes.values() if len(recs) > 1]
    out.append(
        Verdict("rc-integrity", False, [r["i"] for r in bad[0]], "more than one RC outcome")
        if bad
        else Verdict("rc-integrity", True)
    )

    live = _quiescent(trace)
    missing = sorted(p for p in members & correct if p not in outcomes)
    if not live:
        out.append(Verdict("rc-termination", True, skipped=True, detail="run not quiescent"))
    elif missing:
        out.append(Verdict("rc-termination", False, [trace[-1]["i"]], f"members {missing} reached no RC outcome"))
    else:
        out.append(Verdict("rc-termination", True))

    weak = bool(proposed) and members <= correct and rc_synchronous(trace, scenario, members)
    decides = [r for recs in outcomes.values() for r in recs if r["ev"] == "rc_decide"]
    if not weak:
        out.append(Verdict("rc-weak-validity", True, skipped=True, detail="members not all correct or not synchronous"))
        out.append(Verdict("rc-weak-agreement", True, skipped=True, detail="members not all correct or not synchronous"))
        return out
    covering = [r for r in decides if members <= set(r["endorsers"]) | set(r["retractors"])]
    if not live:
        out.append(Verdict("rc-weak-validity", True, skipped=True, detail="run not quiescent"))
    elif not covering:
        out.append(Verdict("rc-weak-validity", False, [trace[-1]["i"]], f"no decision covers members {sorted(members)}"))
    else:
        out.append(Verdict("rc-weak-validity", True))
    kinds = {(tuple(map(tuple, r["E"])), tuple(r["endorsers"])) for r in decides}
    out.append(
        Verdict("rc-weak-agreement", False, [r["i"] for r in decides], "different RC decisions")
        if len(kinds) > 1
        else Verdict("rc-weak-agreement", True)
    )
    return out


def check_consensus(trace, scenario=None):
    from .checker import Verdict, _quiescent

    scenario = scenario or trace.scenario
    correct = set(scenario.correct)
    proposed = set()
    correct_proposed = False
    decides = {}
    for rec in trace:
        if rec["ev"] == "propose" and rec.get("inst") == CAC1.decode():
            proposed.add(tuple(rec["pair"]))
            correct_proposed |= rec["p"] in correct
        elif rec["ev"] == "decide" and rec["p"] in correct:
            decides.setdefault(rec["p"], []).append(rec)
    out = []

    # a Byzantine proposer may inject any value, so only pairs of correct
    # proposers must trace back to a proposal
    bad = [
        r
        for recs in decides.values()
        for r in recs
        if r["pair"][0] in correct and tuple(r["pair"]) not in proposed
    ]
    out.append(
        Verdict("c-validity", False, [bad[0]["i"]], f"p{bad[0]['p']} decided a value its proposer never proposed")
        if bad
        else Verdict("c-validity", True)
    )

    first = [recs[0] for recs in decides.values()]
    values = {r["value"] for r in first}
    out.append(
        Verdict("c-agreement", False, [r["i"] for r in first], f"decided values {sorted(values)}")
        if len(values) > 1
        else Verdict("c-agreement", True)
    )

    twice = [recs for recs in decides.values() if len(recs) > 1]
    out.append(
        Verdict("c-integrity", False, [r["i"] for r in twice[0]], "decided twice")
        if twice
        else Verdict("c-integrity", True)
    )

    if not _quiescent(trace):
        out.append(Verdict("c-termination", True, skipped=True, detail="run not quiescent"))
    elif correct_proposed and set(decides) != correct:
        missing = sorted(correct - set(decides))
        out.append(Verdict("c-termination", False, [trace[-1]["i"]], f"correct processes {missing} never decided"))
    else:
        out.append(Verdict("c-termination", True))
    return out
