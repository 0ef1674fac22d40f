"""Resilience-optimal CAC for n >= 3t + k: WITNESS/READY messages with
per-signer sequence numbers, a fast path when n > 5t, two unlocking rules
for stuck witness phases, and transferable acceptance proofs."""
from __future__ import annotations

from dataclasses import dataclass, field

from .core import (
    MSG_PROOF,
    MSG_READY,
    MSG_WITNESS,
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
    encode_message,
    make_statement,
    verify_statement,
)


@dataclass
class ValidationReport:
    verdict: str  # "accept" | "drop"
    reason: str = ""
    kind: int = 0
    statements: tuple = field(default=(), repr=False)

    @property
    def ok(self):
        return self.verdict == "accept"


class OptimalCac(CacEngine):
    algorithm = "optimal"

    def __init__(self, cfg, me, kp):
        if cfg.k < 1 or cfg.n < 3 * cfg.t + cfg.k:
            raise ConfigurationError(
                f"optimal CAC needs n >= 3t+k with k >= 1 (n={cfg.n}, t={cfg.t}, k={cfg.k})"
            )
        super().__init__(cfg, me, kp)
        self.sigcount = 0
        self.ready_sent_for: set = set()
        self.readymsg_sent = False
        self.sent_any = False

    # -- helpers ------------------------------------------------------------

    @property
    def fast_path_enabled(self) -> bool:
        return self.cfg.n > 5 * self.cfg.t

    def wit_count(self, pair: Pair) -> int:
        return self.sigs.wit_count(pair)

    def _sign(self, kind, pair):
        st = make_statement(self.cfg, self.kp, self.me, kind, pair, self.sigcount)
        self.sigcount += 1
        self.sigs.add(st)
        return st

    def _send(self, kind, events):
        self.sent_any = True
        if kind == MSG_READY:
            self.readymsg_sent = True
            events.append(Broadcast(self.sigs.encode(MSG_READY), "READY"))
        else:
            events.append(Broadcast(self.sigs.encode(MSG_WITNESS), "WITNESS"))

    def _proof(self) -> bytes:
        return self.sigs.encode(MSG_PROOF)

    # -- operations ---------------------------------------------------------

    def propose(self, value: bytes) -> list:
        self.proposed_value = value
        events = []
        pair = Pair(self.me, value)
        if self.sent_any or not self._value_ok(pair):
            return events
        self._sign(WIT, pair)
        self._send(MSG_WITNESS, events)
        return events

    def validate(self, data: bytes) -> ValidationReport:
        try:
            kind, stmts = decode_message(data)
        except CodecError:
            return ValidationReport("drop", "malformed")
        if kind not in (MSG_WITNESS, MSG_READY):
            return ValidationReport("drop", "malformed")
        cfg = self.cfg
        for s in stmts:
            if not isinstance(s.payload, Pair) or not 1 <= s.signer <= cfg.n:
                return ValidationReport("drop", "malformed")
        for s in stmts:
            if not verify_statement(cfg, s):
                return ValidationReport("drop", "bad-signature")
        for s in stmts:
            if not self._value_ok(s.payload):
                return ValidationReport("drop", "invalid-value")
        incoming = {}
        for s in stmts:
            incoming.setdefault(s.signer, set()).add(s.seqno)
        for signer, seqs in incoming.items():
            seen = seqs | self.sigs.seqnos.get(signer, set())
            if max(seen) + 1 != len(seen):
                return ValidationReport("drop", "seqno-hole")
        new_wit = {}
        for s in stmts:
            if s.kind == WIT:
                new_wit.setdefault(s.payload, set()).add(s.signer)
        for s in stmts:
            p = s.payload
            if p.proposer not in new_wit.get(p, ()) and not self.sigs.has(p.proposer, WIT, p):
                return ValidationReport("drop", "missing-initiator-wit")
        return ValidationReport("accept", "", kind, stmts)

    def handle(self, data: bytes, sender: int) -> list:
        rep = self.validate(data)
        if not rep.ok:
            return self._drop(rep.reason)
        if rep.kind == MSG_WITNESS:
            return self.on_witness(rep.statements)
        return self.on_ready(rep.statements)

    def on_witness(self, stmts) -> list:
        cfg = self.cfg
        n, t, k = cfg.n, cfg.t, cfg.k
        sigs = self.sigs
        events = []
        for s in stmts:
            sigs.add(s)

        if not sigs.has(self.me, WIT) and not sigs.has(self.me, READY) and sigs.wit:
            self._sign(WIT, choice(sigs.wit))
            self._send(MSG_WITNESS, events)

        if len(sigs.wit_signers) >= (n + t) // 2 + 1:
            for pair in sigs.wit_pairs():
                if sigs.wit_count(pair) >= 2 * t + k and pair not in self.ready_sent_for:
                    self._sign(READY, pair)
                    self.ready_sent_for.add(pair)
                    self._send(MSG_READY, events)
            if self.fast_path_enabled and len(sigs.wit) == 1:
                (pair,) = sigs.wit
                if sigs.wit_count(pair) >= n - t and pair not in self._acc:
                    self._set_candidates(self._cand.intersect({pair}), events)
                    if pair in self._cand:
                        self._accept(pair, self._proof(), events, fast=True)

        P = sigs.wit_signers
        if len(P) >= n - t and not self.readymsg_sent:
            strong = []
            if self.fast_path_enabled:
                strong = [p for p in sigs.wit_pairs() if sigs.wit_count(p) >= len(P) - 2 * t]
            if strong:
                best = min(strong, key=lambda p: (-sigs.wit_count(p), p))
                if not sigs.has(self.me, WIT, best):
                    self._sign(WIT, best)
                    self._send(MSG_WITNESS, events)
            else:
                seen = sigs.wit_pairs()
                threshold = max(n - (len(seen) + 1) * t, 1)
                for pair in seen:
                    if sigs.wit_count(pair) >= threshold and not sigs.has(self.me, WIT, pair):
                        self._sign(WIT, pair)
                        self._send(MSG_WITNESS, events)
        return events

    def on_ready(self, stmts) -> list:
        cfg = self.cfg
        n, t, k = cfg.n, cfg.t, cfg.k
        sigs = self.sigs
        quorum = 2 * t + k

        extra = {}
        for s in stmts:
            if s.kind == WIT:
                extra.setdefault(s.payload, set()).add(s.signer)
        reachable = any(len(v) >= quorum for v in sigs.wit.values()) or any(
            len(signers | sigs.wit.get(p, set())) >= quorum for p, signers in extra.items()
        )
        if not reachable:
            return self._drop("ready-guard")

        events = []
        for s in stmts:
            sigs.add(s)
        for pair in sigs.wit_pairs():
            if sigs.wit_count(pair) >= quorum and pair not in self.ready_sent_for:
                self._sign(READY, pair)
                self.ready_sent_for.add(pair)
                self._send(MSG_READY, events)

        if cfg.fault != "no-candidates-gate":
            backed = frozenset(p for p in sigs.wit if sigs.wit_count(p) >= k)
            # The first narrowing waits until a pair is about to be accepted.
            # Narrowing on an earlier READY can drop a pair whose witnesses
            # were still in flight from processes in the accepting quorum.
            due = not self._cand.is_top or any(
                sigs.ready_count(p) >= n - t for p in backed
            )
            if due:
                self._set_candidates(self._cand.intersect(backed), events)
            pool = sorted(self._cand.pairs) if due else []
        else:
            pool = sorted(sigs.ready)
        for pair in pool:
            if pair not in self._acc and sigs.ready_count(pair) >= n - t:
                self._accept(pair, self._proof(), events)
        return events


def verify_acceptance(pair: Pair, proof, cfg) -> bool:
    """A proof is a bundle of statements that must all verify. It proves
    acceptance of ``pair`` with READY statements from n - t distinct
    signers, or, when n > 5t, with WIT statements from n - t distinct signers
    (the certificate a fast-path acceptance produces)."""
    if not isinstance(proof, (bytes, bytearray)):
        return False
    try:
        kind, stmts = decode_message(bytes(proof))
    except CodecError:
        return False
    if kind != MSG_PROOF:
        return False
    readies, wits = set(), set()
    for s in stmts:
        if not isinstance(s.payload, Pair) or not verify_statement(cfg, s):
            return False
        if s.payload == pair:
            (readies if s.kind == READY else wits).add(s.signer)
    need = cfg.n - cfg.t
    if len(readies) >= need:
        return True
    return cfg.n > 5 * cfg.t and len(wits) >= need


def trim_proof(pair: Pair, proof: bytes) -> bytes:
    """Keep only the statements about ``pair``. A trimmed proof verifies
    whenever the full one does and is much smaller to forward."""
    kind, stmts = decode_message(bytes(proof))
    if kind != MSG_PROOF:
        raise CodecError("not a proof")
    return encode_message(MSG_PROOF, [s for s in stmts if s.payload == pair])
