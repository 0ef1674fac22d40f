"""Scripted Byzantine behaviors at the CAC engine level.

A Byzantine engine wraps an honest engine holding the attacker's own key and
adds crafted traffic on top of it. It never signs with a key it does not
own: forged statements carry random signature bytes.

Network-level behaviors (silent, selective-send, rc-silent, replay) live in
the simulator's send path instead.
"""
from __future__ import annotations

from .core import (
    MSG_BUNDLE,
    MSG_READY,
    MSG_WITNESS,
    READY,
    WIT,
    Broadcast,
    Pair,
    Statement,
    encode_message,
    make_statement,
)
from .optimal import OptimalCac


def _halves(n):
    first = tuple(range(1, n // 2 + 1))
    rest = tuple(range(n // 2 + 1, n + 1))
    return first, rest


def byz_step(spec, engine, trigger: str, rng):
    """Crafted messages for one step, as (targets or None, bytes) pairs.

    ``engine`` is the attacker's inner honest engine, used as its view of the
    run. ``trigger`` is "propose" or "handle"."""
    kind = spec.kind
    cfg, me, kp = engine.cfg, engine.me, engine.kp
    optimal = isinstance(engine, OptimalCac)
    msg_kind = MSG_WITNESS if optimal else MSG_BUNDLE
    state = engine.__dict__.setdefault("_byz", {"steps": 0})
    state["steps"] += 1
    out = []

    if kind == "silent":
        return out

    if kind == "equivocate-witness":
        if state.get("done"):
            return out
        state["done"] = True
        base = engine.proposed_value if engine.proposed_value is not None else b"byz-%d" % me
        a = Pair(me, base)
        b = Pair(me, base + b"'")
        wa = make_statement(cfg, kp, me, WIT, a, 0)
        wb = make_statement(cfg, kp, me, WIT, b, 0)
        engine.sigs.add(wa)
        engine.sigs.add(wb)
        if optimal:
            engine.sigcount = max(engine.sigcount, 1)
            engine.sent_any = True
        first, rest = _halves(cfg.n)
        out.append((first, encode_message(msg_kind, [wa])))
        out.append((rest, encode_message(msg_kind, [wb])))
        return out

    if kind == "double-ready":
        if optimal:
            fresh = False
            for pair in engine.sigs.wit_pairs():
                if pair not in engine.ready_sent_for:
                    engine._sign(READY, pair)
                    engine.ready_sent_for.add(pair)
                    fresh = True
            if fresh:
                engine.readymsg_sent = True
                engine.sent_any = True
                out.append((None, engine.sigs.encode(MSG_READY)))
        else:
            done = state.setdefault("ready_for", set())
            fresh = False
            for w in sorted(engine.sigs.wit_statements()):
                if w.wire not in done:
                    done.add(w.wire)
                    engine.sigs.add(make_statement(cfg, kp, me, READY, (w,)))
                    fresh = True
            if fresh:
                out.append((None, engine.sigs.encode(MSG_BUNDLE)))
        return out

    if kind == "forge-signature":
        if state["steps"] > int(spec.params.get("limit", 3)):
            return out
        forged = []
        targets = engine.sigs.wit_pairs() or [Pair(me, b"forged")]
        for q in range(1, cfg.n + 1):
            if q == me:
                continue
            fake_pair = Pair(q, b"forged-%d" % q)
            forged.append(_forge(WIT, q, fake_pair, rng))
            if optimal:
                for pair in targets:
                    forged.append(_forge(READY, q, pair, rng))
            else:
                wits = tuple(sorted(engine.sigs.wit_statements()))
                if wits:
                    forged.append(_forge(READY, q, wits, rng))
        out.append((None, encode_message(msg_kind, forged)))
        return out

    if kind == "hole-injector":
        if state["steps"] > int(spec.params.get("limit", 3)):
            return out
        if optimal:
            gap = engine.sigcount + 1
            extra = make_statement(cfg, kp, me, WIT, Pair(me, b"hole-%d" % gap), gap)
            out.append((None, encode_message(msg_kind, engine.sigs.all() + [extra])))
        else:
            victim = 1 if me != 1 else 2
            orphan = make_statement(cfg, kp, me, WIT, Pair(victim, b"orphan"))
            out.append((None, encode_message(msg_kind, engine.sigs.all() + [orphan])))
        return out

    raise ValueError(f"behavior {kind!r} is not an engine-level behavior")


def _forge(kind, signer, payload, rng) -> Statement:
    sig = bytes(rng.getrandbits(8) for _ in range(32))
    return Statement(kind, signer, 0, payload, sig)


class ByzantineEngine:
    """Engine wrapper with the same interface as the honest engines."""

    def __init__(self, spec, inner, rng):
        self.spec = spec
        self.inner = inner
        self.rng = rng

    def __getattr__(self, name):
        return getattr(self.inner, name)

    def _wrap(self, crafted, events):
        for targets, payload in crafted:
            events.append(Broadcast(payload, "BYZ", targets))
        return events

    def propose(self, value):
        if self.spec.kind == "silent":
            self.inner.proposed_value = value
            return []
        self.inner.proposed_value = value
        pre = []
        if self.spec.kind in ("equivocate-witness", "hole-injector"):
            pre = self._wrap(byz_step(self.spec, self.inner, "propose", self.rng), [])
        events = [] if self.spec.kind == "equivocate-witness" else self.inner.propose(value)
        return pre + events

    def handle(self, data, sender):
        if self.spec.kind == "silent":
            return []
        pre = []
        if self.spec.kind == "equivocate-witness":
            pre = self._wrap(byz_step(self.spec, self.inner, "handle", self.rng), [])
        events = self.inner.handle(data, sender)
        if self.spec.kind != "equivocate-witness":
            events = self._wrap(byz_step(self.spec, self.inner, "handle", self.rng), events)
        return pre + events
