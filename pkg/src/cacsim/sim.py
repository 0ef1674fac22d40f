"""Deterministic discrete-event simulator.

Processes are application objects (one per stack) driven through a
``ProcessContext``. Engines never see the network: the host turns their
Broadcast events into sends. Messages travel inside an envelope naming the
protocol instance they belong to.

Time is an integer tick. Simultaneous events are ordered by
(tick, class, sender, target, enqueue order), with deliveries before timer
fires before oracle decisions. A message sent while handling a wave-w
delivery belongs to wave w + 1; messages sent at start are wave 1.
"""
from __future__ import annotations

import hashlib
import heapq
import json
import random
from dataclasses import dataclass, field
from typing import Optional

from .core import (
    Accepted,
    Broadcast,
    CandidatesChanged,
    CodecError,
    ConfigurationError,
    EngineConfig,
    Reader,
    lp,
)
from .crypto import get_provider

ALGORITHMS = ("simple", "optimal")
STACKS = ("cac", "cc", "naming")
BEHAVIORS = (
    "silent",
    "equivocate-witness",
    "double-ready",
    "replay",
    "forge-signature",
    "hole-injector",
    "selective-send",
    "rc-silent",
)
NETWORK_BEHAVIORS = ("silent", "selective-send", "rc-silent", "replay")


def encode_value(v: bytes) -> str:
    try:
        s = v.decode("ascii")
        if s.isprintable() and not s.startswith("hex:"):
            return s
    except UnicodeDecodeError:
        pass
    return "hex:" + v.hex()


def decode_value(s) -> bytes:
    if isinstance(s, bytes):
        return s
    s = str(s)
    if s.startswith("hex:"):
        return bytes.fromhex(s[4:])
    return s.encode("ascii")


def digest(v: bytes) -> str:
    return hashlib.sha256(v).hexdigest()[:16]


def pair_ref(pair) -> list:
    return [pair.proposer, digest(pair.value)]


@dataclass
class BehaviorSpec:
    kind: str
    params: dict = field(default_factory=dict)

    def to_dict(self):
        return {"kind": self.kind, "params": dict(self.params)}


@dataclass
class Schedule:
    kind: str = "lockstep"  # lockstep | random | script
    seed: int = 0
    delay_min: int = 1
    delay_max: int = 4
    default_delay: int = 1
    rules: list = field(default_factory=list)
    delays: list = field(default_factory=list)

    def to_dict(self):
        d = {"kind": self.kind, "seed": self.seed}
        if self.kind == "random":
            d.update(delay_min=self.delay_min, delay_max=self.delay_max)
        if self.kind == "script":
            d.update(default_delay=self.default_delay, rules=list(self.rules), delays=list(self.delays))
        return d


@dataclass
class Scenario:
    n: int
    t: int
    k: int = 1
    algorithm: str = "optimal"
    stack: str = "cac"
    proposers: dict = field(default_factory=dict)
    byzantine: dict = field(default_factory=dict)
    schedule: Schedule = field(default_factory=Schedule)
    delta_rc: int = 1
    delta_cc: int = 1
    gc_delay: Optional[int] = None
    max_steps: int = 200_000
    crypto: str = "hmac"
    key_seeds: dict = field(default_factory=dict)
    fault: Optional[str] = None

    def validate(self):
        if self.n < 1 or self.t < 0 or self.k < 1:
            raise ConfigurationError("need n >= 1, t >= 0, k >= 1")
        if self.algorithm not in ALGORITHMS:
            raise ConfigurationError(f"algorithm must be one of {ALGORITHMS}")
        if self.stack not in STACKS:
            raise ConfigurationError(f"stack must be one of {STACKS}")
        if len(self.byzantine) > self.t:
            raise ConfigurationError(f"{len(self.byzantine)} Byzantine processes exceed t={self.t}")
        for pid in list(self.proposers) + list(self.byzantine):
            if not 1 <= pid <= self.n:
                raise ConfigurationError(f"process id {pid} outside 1..{self.n}")
        for b in self.byzantine.values():
            if b.kind not in BEHAVIORS:
                raise ConfigurationError(f"unknown behavior {b.kind!r}")
        if self.algorithm == "simple":
            if not self.n > 4 * self.t:
                raise ConfigurationError("simple CAC needs n > 4t")
            if self.stack != "cac":
                raise ConfigurationError(f"stack {self.stack} runs on the optimal engine")
        elif self.n < 3 * self.t + self.k:
            raise ConfigurationError("optimal CAC needs n >= 3t+k")
        if self.schedule.kind not in ("lockstep", "random", "script"):
            raise ConfigurationError(f"unknown schedule kind {self.schedule.kind!r}")
        if self.schedule.kind == "random" and not 1 <= self.schedule.delay_min <= self.schedule.delay_max:
            raise ConfigurationError("random schedule needs 1 <= delay_min <= delay_max")
        if self.delta_rc < 1 or self.delta_cc < 1:
            raise ConfigurationError("timer bounds must be positive")
        return self

    @property
    def correct(self):
        return [p for p in range(1, self.n + 1) if p not in self.byzantine]

    def key_seed(self, pid: int) -> int:
        return self.key_seeds.get(pid, pid)

    def to_dict(self):
        return {
            "n": self.n,
            "t": self.t,
            "k": self.k,
            "algorithm": self.algorithm,
            "stack": self.stack,
            "proposers": {str(p): encode_value(v) for p, v in sorted(self.proposers.items())},
            "byzantine": {str(p): b.to_dict() for p, b in sorted(self.byzantine.items())},
            "schedule": self.schedule.to_dict(),
            "timers": {"delta_rc": self.delta_rc, "delta_cc": self.delta_cc, "gc_delay": self.gc_delay},
            "max_steps": self.max_steps,
            "crypto": self.crypto,
            "key_seeds": {str(p): s for p, s in sorted(self.key_seeds.items())},
            "fault": self.fault,
        }

    @staticmethod
    def from_dict(d: dict) -> "Scenario":
        sched = d.get("schedule") or {}
        if isinstance(sched, str):
            sched = {"kind": sched}
        timers = d.get("timers") or {}
        return Scenario(
            n=int(d["n"]),
            t=int(d["t"]),
            k=int(d.get("k", 1)),
            algorithm=d.get("algorithm", "optimal"),
            stack=d.get("stack", "cac"),
            proposers={int(p): decode_value(v) for p, v in (d.get("proposers") or {}).items()},
            byzantine={
                int(p): BehaviorSpec(b["kind"], dict(b.get("params") or {})) if isinstance(b, dict) else BehaviorSpec(str(b))
                for p, b in (d.get("byzantine") or {}).items()
            },
            schedule=Schedule(
                kind=sched.get("kind", "lockstep"),
                seed=int(sched.get("seed", 0)),
                delay_min=int(sched.get("delay_min", 1)),
                delay_max=int(sched.get("delay_max", 4)),
                default_delay=int(sched.get("default_delay", 1)),
                rules=list(sched.get("rules") or []),
                delays=[int(x) for x in (sched.get("delays") or [])],
            ),
            delta_rc=int(timers.get("delta_rc", 1)),
            delta_cc=int(timers.get("delta_cc", 1)),
            gc_delay=timers.get("gc_delay"),
            max_steps=int(d.get("max_steps", 200_000)),
            crypto=d.get("crypto", "hmac"),
            key_seeds={int(p): int(s) for p, s in (d.get("key_seeds") or {}).items()},
            fault=d.get("fault"),
        )

    def with_seed(self, seed: int) -> "Scenario":
        d = self.to_dict()
        d["schedule"]["kind"] = "random" if self.schedule.kind == "lockstep" else self.schedule.kind
        d["schedule"]["seed"] = seed
        d["schedule"].setdefault("delay_min", self.schedule.delay_min)
        d["schedule"].setdefault("delay_max", self.schedule.delay_max)
        return Scenario.from_dict(d)


def layer_of(inst: bytes) -> str:
    return "rc" if inst.endswith(b"/rc") else "sys"


def envelope(inst: bytes, payload: bytes) -> bytes:
    return lp(inst) + payload


def open_envelope(data: bytes):
    r = Reader(data)
    inst = r.lp()
    return inst, data[r.pos:]


class Keys:
    """Per-run key material and the public key directory."""

    def __init__(self, scenario: Scenario):
        self.provider = get_provider(scenario.crypto)
        self.pairs = {p: self.provider.keygen(scenario.key_seed(p)) for p in range(1, scenario.n + 1)}
        self.directory = {p: kp.public_key for p, kp in self.pairs.items()}


@dataclass
class RunStats:
    d: int = 0
    ell: int = 0
    rounds: int = 0
    messages: int = 0
    dropped: int = 0
    steps: int = 0
    ticks: int = 0
    quiescent: bool = True
    budget_exhausted: bool = False

    def to_dict(self):
        return dict(self.__dict__)


class Trace(list):
    """List of event records. ``dumps`` gives the line-delimited form."""

    def dumps(self) -> str:
        return "".join(json.dumps(r, separators=(",", ":")) + "\n" for r in self)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.dumps())

    @staticmethod
    def loads(text: str) -> "Trace":
        return Trace(json.loads(line) for line in text.splitlines() if line.strip())

    @staticmethod
    def load(path) -> "Trace":
        with open(path) as fh:
            return Trace.loads(fh.read())

    @property
    def scenario(self) -> Scenario:
        return Scenario.from_dict(self[0]["scenario"])


@dataclass
class _Msg:
    mid: int
    src: int
    dst: int
    inst: bytes
    payload: bytes
    wave: int
    sys: int
    rc: int


class ProcessContext:
    """What an application may do: send, set timers, record notes, and hand
    proposals to the global-consensus oracle."""

    def __init__(self, sim: "Simulator", pid: int):
        self.sim = sim
        self.pid = pid

    def broadcast(self, inst: bytes, payload: bytes, kind: str, targets=None):
        self.sim._send(self.pid, inst, payload, kind, targets)

    def set_timer(self, name: str, duration: int):
        self.sim._set_timer(self.pid, name, duration)

    def note(self, ev: str, **fields):
        self.sim._note(self.pid, ev, fields)

    def gc_propose(self, proposal):
        self.sim._gc_propose(self.pid, proposal)

    @property
    def now(self):
        return self.sim.tick


class EngineHost:
    """Mixin: runs engine events through the context, records proposals,
    acceptances and state snapshots (only when the state changed)."""

    def _init_host(self, ctx, env):
        self.ctx = ctx
        self.env = env
        self.engines = {}
        self._last_snap = {}

    def engine_propose(self, inst, value):
        eng = self.engines[inst]
        from .core import Pair

        self.ctx.note("propose", inst=inst.decode(), pair=pair_ref(Pair(self.ctx.pid, value)), value=encode_value(value))
        return self.pump(inst, eng.propose(value))

    def pump(self, inst, events):
        out = []
        for ev in events:
            if isinstance(ev, Broadcast):
                self.ctx.broadcast(inst, ev.payload, ev.kind, ev.targets)
            elif isinstance(ev, Accepted):
                e = ev.entry
                self.ctx.note(
                    "accept",
                    inst=inst.decode(),
                    pair=pair_ref(e.pair),
                    fast=ev.fast,
                    proof=e.proof.hex() if e.proof is not None else None,
                )
                out.append(ev)
            elif isinstance(ev, CandidatesChanged):
                out.append(ev)
        self.record_snapshot(inst)
        return out

    def record_snapshot(self, inst):
        eng = self.engines[inst]
        cand, acc = eng.candidates(), eng.accepted_pairs()
        key = (cand, acc)
        if self._last_snap.get(inst) != key:
            self._last_snap[inst] = key
            self.ctx.note(
                "snapshot",
                inst=inst.decode(),
                cand=None if cand.is_top else [pair_ref(p) for p in sorted(cand.pairs)],
                acc=[pair_ref(p) for p in sorted(acc)],
            )

    def dropped(self):
        return sum(e.dropped for e in self.engines.values())


class ProcessEnv:
    """Per-process construction kit handed to applications."""

    def __init__(self, sim: "Simulator", pid: int):
        self.sim = sim
        self.pid = pid
        self.scenario = sim.scenario
        self.keys = sim.keys
        self.kp = sim.keys.pairs[pid]
        self.provider = sim.keys.provider

    def engine_config(self, inst: bytes, k=None, value_valid=None) -> EngineConfig:
        sc = self.scenario
        return EngineConfig(
            n=sc.n,
            t=sc.t,
            k=sc.k if k is None else k,
            directory=self.keys.directory,
            provider=self.provider,
            instance=inst,
            value_valid=value_valid,
            fault=sc.fault,
        )

    def make_engine(self, inst: bytes, algorithm=None, k=None, value_valid=None):
        from .optimal import OptimalCac
        from .simple import SimpleCac

        cfg = self.engine_config(inst, k, value_valid)
        algorithm = algorithm or self.scenario.algorithm
        cls = SimpleCac if algorithm == "simple" else OptimalCac
        eng = cls(cfg, self.pid, self.kp)
        behavior = self.scenario.byzantine.get(self.pid)
        if behavior is not None and behavior.kind not in NETWORK_BEHAVIORS:
            from .byzantine import ByzantineEngine

            eng = ByzantineEngine(behavior, eng, self.sim.byz_rng(self.pid, inst))
        return eng


class CacApp(EngineHost):
    """A process running a single CAC instance."""

    INST = b"cac"

    def __init__(self, ctx, env):
        self._init_host(ctx, env)
        self.engines[self.INST] = env.make_engine(self.INST)

    def start(self):
        v = self.env.scenario.proposers.get(self.ctx.pid)
        if v is not None:
            self.engine_propose(self.INST, v)

    def on_message(self, src, inst, payload):
        eng = self.engines.get(inst)
        if eng is None:
            return
        self.pump(inst, eng.handle(payload, src))

    def on_timer(self, name):
        pass

    def on_gc_decide(self, decision):
        pass


def app_class(stack: str):
    if stack == "cac":
        return CacApp
    if stack == "cc":
        from .consensus import CcApp

        return CcApp
    if stack == "naming":
        from .naming import NamingApp

        return NamingApp
    raise ConfigurationError(f"unknown stack {stack!r}")


_DELIVER, _TIMER, _GC = 0, 1, 2


class Simulator:
    def __init__(self, scenario: Scenario):
        scenario.validate()
        self.scenario = scenario
        self.keys = Keys(scenario)
        self.trace = Trace()
        self.queue = []
        self.seq = 0
        self.tick = 0
        self.mid = 0
        self.sends = 0
        self.sched_rng = random.Random(f"sched/{scenario.schedule.seed}")
        self.ctx_wave, self.ctx_sys, self.ctx_rc, self.ctx_inst = 0, 0, 0, None
        self.max_wave = 0
        self.replayed = {}
        self.gc_proposals = []
        self.gc_scheduled = False
        self.gc_decision = None
        self.contexts = {p: ProcessContext(self, p) for p in range(1, scenario.n + 1)}
        self.apps = {}
        cls = app_class(scenario.stack)
        for p in range(1, scenario.n + 1):
            self.apps[p] = cls(self.contexts[p], ProcessEnv(self, p))

    def byz_rng(self, pid, inst):
        return random.Random(f"byz/{self.scenario.schedule.seed}/{pid}/{inst!r}")

    # -- recording ----------------------------------------------------------

    def _record(self, ev: str, fields: dict):
        rec = {"i": len(self.trace), "tick": self.tick, "ev": ev}
        rec.update(fields)
        self.trace.append(rec)
        return rec

    def _note(self, pid, ev, fields):
        rec = {"p": pid, "wave": self.ctx_wave, "sys": self.ctx_sys, "rc": self.ctx_rc}
        rec.update(fields)
        self._record(ev, rec)

    # -- network ------------------------------------------------------------

    def _delay(self, src, dst, inst) -> int:
        sch = self.scenario.schedule
        idx = self.sends
        self.sends += 1
        if sch.kind == "lockstep":
            return 1
        if sch.kind == "random":
            return self.sched_rng.randint(sch.delay_min, sch.delay_max)
        if idx < len(sch.delays):
            return max(1, sch.delays[idx])
        for rule in sch.rules:
            if _rule_matches(rule, src, dst, inst, self.tick):
                return max(1, int(rule["delay"]))
        return max(1, sch.default_delay)

    def _push(self, at, cls, a, b, item):
        heapq.heappush(self.queue, (at, cls, a, b, self.seq, item))
        self.seq += 1

    def _send(self, src, inst, payload, kind, targets=None):
        behavior = self.scenario.byzantine.get(src)
        n = self.scenario.n
        dsts = list(range(1, n + 1)) if targets is None else sorted(set(targets))
        if behavior is not None:
            if behavior.kind == "silent":
                return
            if behavior.kind == "rc-silent":
                quiet = behavior.params.get("insts")
                if (layer_of(inst) == "rc") if quiet is None else (inst.decode() in quiet):
                    return
            if behavior.kind == "selective-send":
                omit = behavior.params.get("omit")
                if omit is None:
                    omit = [q for q in range(n // 2 + 1, n + 1) if q != src]
                dsts = [q for q in dsts if q not in set(omit)]
        wave = self.ctx_wave + 1
        sys_r, rc_r = self.ctx_sys, self.ctx_rc
        if inst == self.ctx_inst:
            if layer_of(inst) == "rc":
                rc_r += 1
            else:
                sys_r += 1
        data = envelope(inst, payload)
        dg = digest(data)
        for dst in dsts:
            self.mid += 1
            m = _Msg(self.mid, src, dst, inst, data, wave, sys_r, rc_r)
            at = self.tick + self._delay(src, dst, inst)
            self._record(
                "send",
                {
                    "mid": m.mid,
                    "src": src,
                    "dst": dst,
                    "inst": inst.decode(),
                    "kind": kind,
                    "wave": wave,
                    "at": at,
                    "len": len(data),
                    "digest": dg,
                },
            )
            self._push(at, _DELIVER, src, dst, m)

    def _set_timer(self, pid, name, duration):
        if duration <= 0:
            raise ValueError("timer duration must be positive")
        at = self.tick + duration
        self._record("timer_set", {"p": pid, "name": name, "fire_at": at})
        self._push(at, _TIMER, pid, 0, (name, self.ctx_wave, self.ctx_sys, self.ctx_rc))

    def _gc_propose(self, pid, proposal):
        self.gc_proposals.append((pid, proposal))
        self._record("gc_propose", {"p": pid, "proposal": proposal.describe()})
        if not self.gc_scheduled:
            self.gc_scheduled = True
            delay = self.scenario.gc_delay or self.scenario.delta_cc
            self._push(self.tick + delay, _GC, 0, 0, (self.ctx_wave, self.ctx_sys, self.ctx_rc))

    # -- main loop ----------------------------------------------------------

    def run(self):
        sc = self.scenario
        self._record("scenario", {"scenario": sc.to_dict()})
        for p in range(1, sc.n + 1):
            self.ctx_wave, self.ctx_sys, self.ctx_rc, self.ctx_inst = 0, 0, 0, None
            self.apps[p].start()
        steps = 0
        exhausted = False
        while self.queue:
            if steps >= sc.max_steps:
                exhausted = True
                break
            at, cls, a, b, _, item = heapq.heappop(self.queue)
            self.tick = at
            steps += 1
            if cls == _DELIVER:
                self._deliver(item)
            elif cls == _TIMER:
                name, w, s, r = item
                self.ctx_wave, self.ctx_sys, self.ctx_rc, self.ctx_inst = w, s, r, None
                self._record("timer_fire", {"p": a, "name": name})
                self.apps[a].on_timer(name)
            else:
                self._gc_decide(item)
        stats = self._stats(steps, exhausted)
        self._record("end", {"steps": steps, "quiescent": not exhausted, "messages": stats.messages})
        return self.trace, stats

    def _deliver(self, m: _Msg):
        self._record("deliver", {"mid": m.mid, "src": m.src, "dst": m.dst, "wave": m.wave})
        self.max_wave = max(self.max_wave, m.wave)
        self.ctx_wave, self.ctx_sys, self.ctx_rc, self.ctx_inst = m.wave, m.sys, m.rc, m.inst
        behavior = self.scenario.byzantine.get(m.dst)
        if behavior is not None and behavior.kind == "replay":
            seen = self.replayed.setdefault(m.dst, set())
            if m.payload not in seen:
                seen.add(m.payload)
                self.ctx_inst = None
                self._send(m.dst, m.inst, m.payload[len(lp(m.inst)):], "REPLAY")
                self.ctx_inst = m.inst
        try:
            inst, payload = open_envelope(m.payload)
        except CodecError:
            return
        self.apps[m.dst].on_message(m.src, inst, payload)

    def _gc_decide(self, item):
        w, s, r = item
        self.ctx_wave, self.ctx_sys, self.ctx_rc, self.ctx_inst = w, s, r, None
        admissible = [prop for _, prop in self.gc_proposals if prop.admissible()]
        if not admissible:
            self.gc_scheduled = False
            return
        decision = min(admissible, key=lambda prop: prop.order_key())
        self.gc_decision = decision
        self._record("gc_decide", {"proposal": decision.describe()})
        for p in range(1, self.scenario.n + 1):
            self.apps[p].on_gc_decide(decision)

    def _stats(self, steps, exhausted) -> RunStats:
        sc = self.scenario
        main = _main_instance(sc)
        proposers = set()
        final_acc = {}
        for rec in self.trace:
            if rec.get("inst") != main:
                continue
            if rec["ev"] == "propose":
                proposers.add(rec["p"])
            elif rec["ev"] == "snapshot" and rec["p"] not in sc.byzantine:
                final_acc[rec["p"]] = len(rec["acc"])
        return RunStats(
            d=len(proposers),
            ell=max(final_acc.values(), default=0),
            rounds=self.max_wave,
            messages=self.mid,
            dropped=sum(app.dropped() for p, app in self.apps.items() if p not in sc.byzantine),
            steps=steps,
            ticks=self.tick,
            quiescent=not exhausted,
            budget_exhausted=exhausted,
        )


def _main_instance(sc: Scenario) -> str:
    return {"cac": "cac", "cc": "cc/cac1", "naming": ""}[sc.stack]


def _rule_matches(rule: dict, src, dst, inst: bytes, tick) -> bool:
    def hit(key, val):
        want = rule.get(key)
        if want is None:
            return True
        if isinstance(want, list):
            return val in want
        return val == want

    if not hit("src", src) or not hit("dst", dst):
        return False
    if "layer" in rule and rule["layer"] != layer_of(inst):
        return False
    if "inst" in rule and not inst.decode().startswith(rule["inst"]):
        return False
    if tick < int(rule.get("from_tick", 0)):
        return False
    if "to_tick" in rule and tick > int(rule["to_tick"]):
        return False
    return True


def run(scenario: Scenario):
    """Run one scenario to quiescence (or the step budget)."""
    return Simulator(scenario).run()
