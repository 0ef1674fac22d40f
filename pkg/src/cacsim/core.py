"""Shared vocabulary for the CAC engines: pairs, candidate sets with a
symbolic top element, signed statements and their byte codec, the signature
store, engine events and the engine base class.

Canonical statement body (all integers big-endian)::

    u8  kind            1 = WIT, 2 = READY
    u32 signer
    u64 seqno           0 for the simple engine
    u32 len + payload   0x00 u32 proposer, u32 len + value        (a pair)
                        0x01 u32 count, count * (u32 len + wire)  (a WIT set)

A statement on the wire is ``u32 len + body`` followed by ``u32 len + sig``.
The signed bytes are ``b"cacsim/stmt" + u32 len + instance + body`` so that
statements from one CAC instance never validate inside another.

A message is ``u8 kind`` + ``u32 count`` + ``count`` wire statements.
"""
from __future__ import annotations

import struct
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

WIT = 1
READY = 2

MSG_BUNDLE = 1
MSG_WITNESS = 2
MSG_READY = 3
MSG_PROOF = 4
MSG_KIND_NAMES = {MSG_BUNDLE: "BUNDLE", MSG_WITNESS: "WITNESS", MSG_READY: "READY", MSG_PROOF: "PROOF"}

STMT_DOMAIN = b"cacsim/stmt"

_U32 = struct.Struct(">I")
_U64 = struct.Struct(">Q")


class CodecError(ValueError):
    pass


class ConfigurationError(ValueError):
    pass


def u32(x: int) -> bytes:
    return _U32.pack(x)


def u64(x: int) -> bytes:
    return _U64.pack(x)


def lp(b: bytes) -> bytes:
    return _U32.pack(len(b)) + b


class Reader:
    __slots__ = ("buf", "pos")

    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        end = self.pos + n
        if n < 0 or end > len(self.buf):
            raise CodecError("truncated input")
        out = self.buf[self.pos:end]
        self.pos = end
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]

    def u64(self) -> int:
        return _U64.unpack(self.take(8))[0]

    def lp(self) -> bytes:
        return self.take(self.u32())

    def done(self) -> bool:
        return self.pos == len(self.buf)

    def expect_end(self):
        if not self.done():
            raise CodecError("trailing bytes")


@dataclass(frozen=True, order=True)
class Pair:
    """A value tagged with its proposer. Ordering is (proposer, value), which
    is also the deterministic choice() order."""

    proposer: int
    value: bytes

    def encode(self) -> bytes:
        return u32(self.proposer) + lp(self.value)

    @staticmethod
    def read(r: Reader) -> "Pair":
        return Pair(r.u32(), r.lp())

    def __repr__(self):
        return f"<{self.value!r},{self.proposer}>"


def choice(pairs) -> Pair:
    """Minimum under (proposer index, value)."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("choice() of an empty set")
    return min(pairs)


def encode_pair_set(pairs) -> bytes:
    items = sorted(pairs)
    return u32(len(items)) + b"".join(p.encode() for p in items)


def decode_pair_set(r: Reader) -> frozenset:
    count = r.u32()
    out = [Pair.read(r) for _ in range(count)]
    return frozenset(out)


@dataclass(frozen=True)
class CandidateSet:
    """Either Top (``pairs is None``) or a finite set of pairs."""

    pairs: Optional[frozenset] = None

    @property
    def is_top(self) -> bool:
        return self.pairs is None

    def intersect(self, other) -> "CandidateSet":
        if isinstance(other, CandidateSet):
            if other.is_top:
                return self
            other = other.pairs
        if self.is_top:
            return CandidateSet(frozenset(other))
        return CandidateSet(self.pairs & frozenset(other))

    def contains_all(self, pairs) -> bool:
        if self.is_top:
            return True
        return frozenset(pairs) <= self.pairs

    def __contains__(self, pair) -> bool:
        return self.is_top or pair in self.pairs

    def __len__(self):
        if self.is_top:
            raise TypeError("Top has no finite size")
        return len(self.pairs)

    def __repr__(self):
        if self.is_top:
            return "Top"
        return "{" + ", ".join(map(repr, sorted(self.pairs))) + "}"


TOP = CandidateSet()


class Statement:
    """A signed WIT or READY statement. Equality is on the wire bytes."""

    __slots__ = ("kind", "signer", "seqno", "payload", "sig", "body", "wire")

    def __init__(self, kind, signer, seqno, payload, sig, body=None, wire=None):
        self.kind = kind
        self.signer = signer
        self.seqno = seqno
        self.payload = payload
        self.sig = sig
        self.body = body if body is not None else encode_body(kind, signer, seqno, payload)
        self.wire = wire if wire is not None else lp(self.body) + lp(sig)

    @property
    def pair(self) -> Optional[Pair]:
        return self.payload if isinstance(self.payload, Pair) else None

    def __eq__(self, other):
        return isinstance(other, Statement) and self.wire == other.wire

    def __hash__(self):
        return hash(self.wire)

    def __lt__(self, other):
        return self.wire < other.wire

    def __repr__(self):
        k = "WIT" if self.kind == WIT else "READY"
        if isinstance(self.payload, Pair):
            p = repr(self.payload)
        else:
            p = "M[" + ",".join(repr(s.payload) + f"@{s.signer}" for s in self.payload) + "]"
        return f"{k}(p{self.signer}#{self.seqno} {p})"


def encode_body(kind: int, signer: int, seqno: int, payload) -> bytes:
    if isinstance(payload, Pair):
        pb = b"\x00" + payload.encode()
    else:
        items = sorted(payload)
        pb = b"\x01" + u32(len(items)) + b"".join(lp(s.wire) for s in items)
    return bytes([kind]) + u32(signer) + u64(seqno) + lp(pb)


def _decode_payload(pb: bytes):
    r = Reader(pb)
    tag = r.u8()
    if tag == 0:
        pair = Pair.read(r)
        r.expect_end()
        return pair
    if tag == 1:
        count = r.u32()
        items = tuple(sorted(decode_statement(r.lp()) for _ in range(count)))
        r.expect_end()
        for s in items:
            if s.kind != WIT or not isinstance(s.payload, Pair):
                raise CodecError("READY set may only hold pair WIT statements")
        if len(set(items)) != len(items):
            raise CodecError("duplicate statement in READY set")
        return items
    raise CodecError(f"unknown payload tag {tag}")


def decode_statement(wire: bytes) -> Statement:
    r = Reader(wire)
    body = r.lp()
    sig = r.lp()
    r.expect_end()
    b = Reader(body)
    kind = b.u8()
    if kind not in (WIT, READY):
        raise CodecError(f"unknown statement kind {kind}")
    signer = b.u32()
    seqno = b.u64()
    payload = _decode_payload(b.lp())
    b.expect_end()
    if kind == WIT and not isinstance(payload, Pair):
        raise CodecError("WIT must carry a pair")
    return Statement(kind, signer, seqno, payload, sig, body=body, wire=wire)


def encode_message(kind: int, statements) -> bytes:
    items = sorted(statements)
    return bytes([kind]) + u32(len(items)) + b"".join(s.wire for s in items)


@lru_cache(maxsize=1 << 15)
def decode_message(data: bytes):
    """Returns (kind, tuple of statements). Raises CodecError."""
    if not isinstance(data, (bytes, bytearray)):
        raise CodecError("message must be bytes")
    r = Reader(bytes(data))
    kind = r.u8()
    if kind not in MSG_KIND_NAMES:
        raise CodecError(f"unknown message kind {kind}")
    count = r.u32()
    out = []
    for _ in range(count):
        start = r.pos
        blen = r.u32()
        r.take(blen)
        slen = r.u32()
        r.take(slen)
        out.append(decode_statement(r.buf[start:r.pos]))
    r.expect_end()
    return kind, tuple(out)


@dataclass
class EngineConfig:
    n: int
    t: int
    directory: dict  # process id -> public key
    provider: object
    k: int = 1
    instance: bytes = b"cac"
    value_valid: Optional[Callable[[Pair], bool]] = None
    fault: Optional[str] = None

    def pk(self, pid: int) -> Optional[bytes]:
        return self.directory.get(pid)


def signed_bytes(instance: bytes, body: bytes) -> bytes:
    return STMT_DOMAIN + lp(instance) + body


def make_statement(cfg: EngineConfig, kp, signer: int, kind: int, payload, seqno: int = 0) -> Statement:
    body = encode_body(kind, signer, seqno, payload)
    sig = cfg.provider.sign(kp, signed_bytes(cfg.instance, body))
    return Statement(kind, signer, seqno, payload, sig, body=body)


_VERIFY_CACHE: dict = {}


def verify_statement(cfg: EngineConfig, st: Statement) -> bool:
    """Signature check, including every WIT nested in a simple-engine READY."""
    pk = cfg.directory.get(st.signer)
    if pk is None:
        return False
    key = (cfg.provider.name, cfg.instance, pk, st.wire)
    hit = _VERIFY_CACHE.get(key)
    if hit is not None:
        return hit
    ok = cfg.provider.verify(pk, signed_bytes(cfg.instance, st.body), st.sig)
    if ok and not isinstance(st.payload, Pair):
        ok = all(verify_statement(cfg, s) for s in st.payload)
    if len(_VERIFY_CACHE) > 400_000:
        _VERIFY_CACHE.clear()
    _VERIFY_CACHE[key] = ok
    return ok


class SigStore:
    """Verified statements, indexed for counting. Never shrinks."""

    def __init__(self):
        self.stmts: dict = {}
        self.wit: dict = {}
        self.ready: dict = {}
        self.wit_signers: set = set()
        self.ready_signers: set = set()
        self.readies: list = []
        self.seqnos: dict = {}
        self._encoded: dict = {}

    def __contains__(self, st) -> bool:
        return st.wire in self.stmts

    def __len__(self):
        return len(self.stmts)

    def add(self, st: Statement) -> bool:
        if st.wire in self.stmts:
            return False
        self.stmts[st.wire] = st
        self._encoded.clear()
        self.seqnos.setdefault(st.signer, set()).add(st.seqno)
        if st.kind == WIT:
            self.wit.setdefault(st.payload, set()).add(st.signer)
            self.wit_signers.add(st.signer)
        else:
            self.ready_signers.add(st.signer)
            self.readies.append(st)
            if isinstance(st.payload, Pair):
                self.ready.setdefault(st.payload, set()).add(st.signer)
        return True

    def wit_count(self, pair: Pair) -> int:
        return len(self.wit.get(pair, ()))

    def ready_count(self, pair: Pair) -> int:
        return len(self.ready.get(pair, ()))

    def has(self, signer: int, kind: int, pair: Optional[Pair] = None) -> bool:
        if kind == WIT:
            if pair is None:
                return signer in self.wit_signers
            return signer in self.wit.get(pair, ())
        if pair is None:
            return signer in self.ready_signers
        return signer in self.ready.get(pair, ())

    def wit_pairs(self):
        return sorted(self.wit)

    def wit_statements(self):
        return [s for s in self.stmts.values() if s.kind == WIT]

    def all(self):
        return list(self.stmts.values())

    def encode(self, kind: int) -> bytes:
        out = self._encoded.get(kind)
        if out is None:
            out = encode_message(kind, self.stmts.values())
            self._encoded[kind] = out
        return out


@dataclass(frozen=True)
class AcceptedEntry:
    pair: Pair
    proof: Optional[bytes] = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Broadcast:
    payload: bytes
    kind: str
    targets: Optional[tuple] = None


@dataclass(frozen=True)
class Accepted:
    entry: AcceptedEntry
    fast: bool = False


@dataclass(frozen=True)
class CandidatesChanged:
    candidates: CandidateSet


class CacEngine:
    """Base for both engines. Subclasses implement propose() and handle()."""

    algorithm = "abstract"

    def __init__(self, cfg: EngineConfig, me: int, kp):
        self.cfg = cfg
        self.me = me
        self.kp = kp
        self.sigs = SigStore()
        self._cand = TOP
        self._acc: dict = {}
        self.dropped = 0
        self.drop_reasons: Counter = Counter()
        self.proposed_value: Optional[bytes] = None

    def candidates(self) -> CandidateSet:
        return self._cand

    def accepted(self) -> frozenset:
        return frozenset(self._acc.values())

    def accepted_pairs(self) -> frozenset:
        return frozenset(self._acc)

    def accepted_entry(self, pair: Pair) -> Optional[AcceptedEntry]:
        return self._acc.get(pair)

    def _drop(self, reason: str):
        self.dropped += 1
        self.drop_reasons[reason] += 1
        return []

    def _set_candidates(self, new: CandidateSet, events: list):
        if new != self._cand:
            self._cand = new
            events.append(CandidatesChanged(new))

    def _accept(self, pair: Pair, proof, events: list, fast: bool = False):
        if pair in self._acc:
            return
        entry = AcceptedEntry(pair, proof)
        self._acc[pair] = entry
        events.append(Accepted(entry, fast))

    def _value_ok(self, pair: Pair) -> bool:
        hook = self.cfg.value_valid
        return hook is None or hook(pair)

    def propose(self, value: bytes) -> list:
        raise NotImplementedError

    def handle(self, data: bytes, sender: int) -> list:
        raise NotImplementedError


def snapshot(engine: CacEngine):
    """Value copy of (candidates, accepted pairs)."""
    return engine.candidates(), engine.accepted_pairs()
