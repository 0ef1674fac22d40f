"""Short naming on top of CAC.

Each name has a claim instance ``claim/<name>``; each (name, claimer) pair
has a commit instance ``commit/<name>/<j>``. All of them are optimal CAC
engines with k = 1, created on first use or on the first message.

The value proposed on both kinds of instance is ``lp(pk) + lp(proof)``.
Names are prefixes of the public key rendered in lowercase base-32.
"""
from __future__ import annotations

import base64
from dataclasses import dataclass
from typing import Optional

from .core import Accepted, CodecError, Pair, Reader, lp
from .sim import EngineHost

ALPHABET = "abcdefghijklmnopqrstuvwxyz234567"
CLAIM = b"claim/"
COMMIT = b"commit/"


def render(pk: bytes) -> str:
    return base64.b32encode(pk).decode("ascii").lower().rstrip("=")


def max_common_prefix(a: str, b: str) -> str:
    i = 0
    for x, y in zip(a, b):
        if x != y:
            break
        i += 1
    return a[:i]


def encode_claim(pk: bytes, proof: bytes) -> bytes:
    return lp(pk) + lp(proof)


def decode_claim(value: bytes):
    r = Reader(value)
    pk = r.lp()
    proof = r.lp()
    r.expect_end()
    return pk, proof


def claim_inst(name: str) -> bytes:
    return CLAIM + name.encode()


def commit_inst(name: str, j: int) -> bytes:
    return COMMIT + name.encode() + b"/" + str(j).encode()


def parse_inst(inst: bytes, n: int):
    """("claim", name, None) or ("commit", name, j); None if malformed."""
    try:
        s = inst.decode("ascii")
    except UnicodeDecodeError:
        return None
    if s.startswith("claim/"):
        name, j = s[6:], None
        kind = "claim"
    elif s.startswith("commit/"):
        name, _, js = s[7:].rpartition("/")
        if not js.isdigit() or not 1 <= int(js) <= n:
            return None
        kind, j = "commit", int(js)
    else:
        return None
    if not name or len(name) > 52 or any(c not in ALPHABET for c in name):
        return None
    return kind, name, j


@dataclass(frozen=True)
class NameRecord:
    name: str
    pk: bytes
    proof: bytes

    def to_dict(self):
        return {"name": self.name, "pk": render(self.pk)}


@dataclass(frozen=True)
class Claim:
    name: str
    pk: bytes
    proof: bytes
    ell: int


class NamingApp(EngineHost):
    """One process of the short-naming protocol. Claimants are the
    scenario's proposers; each claims with its own key."""

    def __init__(self, ctx, env):
        self._init_host(ctx, env)
        self.names: dict = {}  # name -> NameRecord
        self.prop: dict = {}  # name -> Claim
        self.deferred: dict = {}  # name -> [(pk, proof, j)]

    # -- engines ------------------------------------------------------------

    def _valid(self, name: str, value: bytes, j: Optional[int] = None, proposer: Optional[int] = None) -> bool:
        try:
            pk, proof = decode_claim(value)
        except CodecError:
            return False
        if j is not None and proposer != j:
            return False
        return render(pk).startswith(name) and self.env.provider.verify_knowledge(pk, proof)

    def engine(self, inst: bytes):
        eng = self.engines.get(inst)
        if eng is not None:
            return eng
        parsed = parse_inst(inst, self.env.scenario.n)
        if parsed is None:
            return None
        _, name, j = parsed
        eng = self.env.make_engine(
            inst, "optimal", k=1, value_valid=lambda p: self._valid(name, p.value, j, p.proposer)
        )
        self.engines[inst] = eng
        return eng

    # -- operations -----------------------------------------------------------

    def start(self):
        if self.ctx.pid in self.env.scenario.proposers:
            self.sn_claim(self.env.kp.public_key, self.env.provider.prove_knowledge(self.env.kp))

    def sn_claim(self, pk: bytes, proof: bytes):
        if not self.env.provider.verify_knowledge(pk, proof):
            return
        self.choose_name(1, pk, proof)

    def choose_name(self, ell: int, pk: bytes, proof: bytes):
        text = render(pk)
        while ell <= len(text) and text[:ell] in self.names:
            ell += 1
        if ell > len(text):
            self.ctx.note("claim_failed", pk=text, ell=ell)
            return
        name = text[:ell]
        self.prop[name] = Claim(name, pk, proof, ell)
        self.ctx.note("claim", name=name, ell=ell)
        inst = claim_inst(name)
        # the instance may have settled before we got here; its earlier
        # acceptances are then the answer to this claim
        done = sorted(self.engine(inst).accepted_pairs())
        for ev in self.engine_propose(inst, encode_claim(pk, proof)):
            if isinstance(ev, Accepted):
                self.on_claim_accept(name, ev.entry.pair)
        if done and name in self.prop:
            self.on_claim_accept(name, done[0])

    # -- handlers ---------------------------------------------------------------

    def on_message(self, src, inst, payload):
        eng = self.engine(inst)
        if eng is None:
            return
        kind, name, j = parse_inst(inst, self.env.scenario.n)
        for ev in self.pump(inst, eng.handle(payload, src)):
            if not isinstance(ev, Accepted):
                continue
            if kind == "claim":
                self.on_claim_accept(name, ev.entry.pair)
            else:
                self.on_commit_accept(name, ev.entry.pair, j)

    def on_claim_accept(self, name: str, pair: Pair):
        if not self._valid(name, pair.value):
            return
        pk, proof = decode_claim(pair.value)
        mine = self.prop.pop(name, None)
        if mine is not None:
            cand = self.engines[claim_inst(name)].candidates()
            if len(cand) == 1 and mine.proof == proof:
                inst = commit_inst(name, self.ctx.pid)
                self.engine(inst)
                self.ctx.note("name_commit", name=name, pk=render(mine.pk))
                for ev in self.engine_propose(inst, encode_claim(mine.pk, mine.proof)):
                    if isinstance(ev, Accepted):
                        self.on_commit_accept(name, ev.entry.pair, self.ctx.pid)
            else:
                self.choose_name(mine.ell + 1, mine.pk, mine.proof)
        for pk2, proof2, j in self.deferred.pop(name, []):
            self._register(name, pk2, proof2, j)

    def on_commit_accept(self, name: str, pair: Pair, j: int):
        if pair.proposer != j or not self._valid(name, pair.value):
            return
        pk, proof = decode_claim(pair.value)
        self._register(name, pk, proof, j)

    def _register(self, name, pk, proof, j):
        claim = self.engines.get(claim_inst(name))
        if claim is None or Pair(j, encode_claim(pk, proof)) not in claim.accepted_pairs():
            self.deferred.setdefault(name, []).append((pk, proof, j))
            return
        if name in self.names:
            return
        self.names[name] = NameRecord(name, pk, proof)
        self.ctx.note("register", name=name, pk=render(pk), owner=j)

    def on_timer(self, name):
        pass

    def on_gc_decide(self, decision):
        pass

    def registry(self) -> str:
        """Sorted ``name pk`` lines."""
        return "".join(f"{r.name} {render(r.pk)}\n" for r in sorted(self.names.values(), key=lambda r: r.name))


# -- properties -------------------------------------------------------------


def registries(trace, scenario=None):
    """Per correct process: name -> (pk rendering, owner), from register notes."""
    scenario = scenario or trace.scenario
    out = {p: {} for p in scenario.correct}
    first = {}
    for rec in trace:
        if rec["ev"] == "register" and rec["p"] in out:
            out[rec["p"]].setdefault(rec["name"], []).append((rec["pk"], rec["owner"]))
            first.setdefault((rec["p"], rec["name"]), rec["i"])
    return out, first


def check_naming(trace, scenario=None):
    from .checker import Verdict, _quiescent
    from .sim import Keys

    scenario = scenario or trace.scenario
    correct = set(scenario.correct)
    regs, first = registries(trace, scenario)
    keys = Keys(scenario)
    owner_of = {render(pk): p for p, pk in keys.directory.items()}
    out = []

    bad = [(p, name) for p, reg in regs.items() for name, recs in reg.items() if len(recs) > 1]
    out.append(
        Verdict("sn-unicity", False, [first[bad[0]]], f"p{bad[0][0]} registered {bad[0][1]!r} twice")
        if bad
        else Verdict("sn-unicity", True)
    )

    live = _quiescent(trace)
    end = trace[-1]["i"]
    final = {p: {name: recs[0][0] for name, recs in reg.items()} for p, reg in regs.items()}
    bad = []
    for p, reg in final.items():
        for name, pk in reg.items():
            if owner_of.get(pk) not in correct:
                continue
            for q in sorted(correct):
                got = final[q].get(name)
                if got is not None and got != pk:
                    bad.append(([first[(p, name)], first[(q, name)]], f"p{p} and p{q} disagree on {name!r}"))
                elif got is None and live:
                    bad.append(([first[(p, name)], end], f"p{q} never registered {name!r} held by p{p}"))
    out.append(Verdict("sn-agreement", False, *bad[0]) if bad else Verdict("sn-agreement", True))

    claimants = sorted(p for p in scenario.proposers if p in correct)
    texts = [render(keys.directory[p]) for p in scenario.proposers]
    if not live:
        out.append(Verdict("sn-termination", True, skipped=True, detail="run not quiescent"))
    elif len(set(texts)) != len(texts):
        out.append(Verdict("sn-termination", True, skipped=True, detail="renderings not distinct"))
    else:
        missing = [p for p in claimants if render(keys.directory[p]) not in final[p].values()]
        out.append(
            Verdict("sn-termination", False, [end], f"claimants {missing} hold no name")
            if missing
            else Verdict("sn-termination", True)
        )

    if scenario.byzantine or not live or len(set(texts)) != len(texts):
        out.append(Verdict("sn-short-names", True, skipped=True,
                           detail="needs an all-correct quiescent run with distinct keys"))
        return out
    bad = []
    for p, reg in final.items():
        for name, pk in reg.items():
            others = [max_common_prefix(pk, o) for n2, o in reg.items() if n2 != name and o != pk]
            mcp = max((len(x) for x in others), default=0)
            if mcp + 1 < len(name):
                bad.append(([first[(p, name)]], f"p{p}: name {name!r} longer than {mcp + 1}"))
    out.append(Verdict("sn-short-names", False, *bad[0]) if bad else Verdict("sn-short-names", True))
    return out
