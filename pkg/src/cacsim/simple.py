"""CAC for n > 4t with cumulative BUNDLE messages (witness phase, then a
READY over a frozen set of WIT statements)."""
from __future__ import annotations

from .core import (
    MSG_BUNDLE,
    READY,
    WIT,
    Broadcast,
    CacEngine,
    CandidateSet,
    CodecError,
    ConfigurationError,
    Pair,
    choice,
    decode_message,
    make_statement,
    verify_statement,
)

__all__ = ["SimpleCac", "choice"]


class SimpleCac(CacEngine):
    algorithm = "simple"

    def __init__(self, cfg, me, kp):
        if not cfg.n > 4 * cfg.t:
            raise ConfigurationError(f"simple CAC needs n > 4t (n={cfg.n}, t={cfg.t})")
        super().__init__(cfg, me, kp)
        self.my_M = None
        self._last_sent = None

    def _broadcast(self, events):
        # Only send when the store changed since our last send; the handler
        # would otherwise echo the same bundle forever.
        payload = self.sigs.encode(MSG_BUNDLE)
        if payload != self._last_sent:
            self._last_sent = payload
            events.append(Broadcast(payload, "BUNDLE"))

    def _has_own(self) -> bool:
        return self.sigs.has(self.me, WIT) or self.sigs.has(self.me, READY)

    def propose(self, value: bytes) -> list:
        self.proposed_value = value
        events = []
        pair = Pair(self.me, value)
        if self._has_own() or not self._value_ok(pair):
            return events
        self.sigs.add(make_statement(self.cfg, self.kp, self.me, WIT, pair))
        self._broadcast(events)
        return events

    def handle(self, data: bytes, sender: int) -> list:
        try:
            kind, stmts = decode_message(data)
        except CodecError:
            return self._drop("malformed")
        if kind != MSG_BUNDLE:
            return self._drop("malformed")
        return self.on_bundle(stmts, sender)

    def on_bundle(self, stmts, sender) -> list:
        cfg = self.cfg
        valid = []
        for s in stmts:
            if not verify_statement(cfg, s):
                continue
            pairs = [s.payload] if s.kind == WIT else [w.payload for w in s.payload]
            if not all(self._value_ok(p) for p in pairs):
                continue
            valid.append(s)

        # every pair backed in this message must carry its initiator's WIT
        wits = []
        for s in valid:
            if s.kind == WIT:
                wits.append(s)
            else:
                wits.extend(s.payload)
        backed = {}
        for w in wits:
            backed.setdefault(w.payload, set()).add(w.signer)
        for pair, signers in backed.items():
            if pair.proposer not in signers:
                return self._drop("missing-initiator-wit")

        for s in valid:
            self.sigs.add(s)
        events = []
        n, t = cfg.n, cfg.t

        if not self.sigs.has(self.me, WIT):
            eligible = [p for p, signers in self.sigs.wit.items() if p.proposer in signers]
            if eligible:
                pair = choice(eligible)
                self.sigs.add(make_statement(cfg, self.kp, self.me, WIT, pair))
                self._broadcast(events)

        if len(self.sigs.wit_signers) >= n - t and not self.sigs.has(self.me, READY):
            self.my_M = tuple(sorted(self.sigs.wit_statements()))
            self.sigs.add(make_statement(cfg, self.kp, self.me, READY, self.my_M))
            self._broadcast(events)

        if len(self.sigs.ready_signers) >= n - t:
            self._broadcast(events)
            if self._cand.is_top and cfg.fault != "no-candidates-gate":
                inside = set()
                for r in self.sigs.readies:
                    inside.update(w.payload for w in r.payload)
                self._set_candidates(CandidateSet(frozenset(inside)), events)
            support = {}
            for r in self.sigs.readies:
                for p in {w.payload for w in r.payload}:
                    support.setdefault(p, set()).add(r.signer)
            pool = support if self._cand.is_top else self._cand.pairs
            for pair in sorted(pool):
                if len(support.get(pair, ())) >= 2 * t + 1:
                    if pair in self._cand or cfg.fault == "no-candidates-gate":
                        self._accept(pair, None, events)
        return events
