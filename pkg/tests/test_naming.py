import base64
import os

import pytest
from hypothesis import given
from hypothesis import strategies as st

from cacsim.checker import check_all, violations
from cacsim.crypto import get_provider
from cacsim.naming import (
    ALPHABET,
    check_naming,
    commit_inst,
    decode_claim,
    encode_claim,
    max_common_prefix,
    parse_inst,
    render,
)
from cacsim.sim import Scenario, Schedule, Simulator, Trace, run

PROV = get_provider("hmac")
RENDER = {s: render(PROV.keygen(s).public_key) for s in range(1, 4000)}


def seed_where(pred, exclude=()):
    return next(s for s, r in RENDER.items() if pred(r) and s not in exclude)


def names_of(trace, p):
    return {r["name"]: r["pk"] for r in trace if r["ev"] == "register" and r["p"] == p}


def test_max_common_prefix_examples():
    assert max_common_prefix("abcdefg", "abcfed") == "abc"
    assert max_common_prefix("xyz", "xyz") == "xyz"
    assert max_common_prefix("a", "b") == ""


@given(st.text(alphabet="abc", max_size=8), st.text(alphabet="abc", max_size=8))
def test_max_common_prefix_oracle(a, b):
    assert max_common_prefix(a, b) == os.path.commonprefix([a, b])


@given(st.binary(min_size=32, max_size=32), st.binary(min_size=32, max_size=32))
def test_render_injective_and_lowercase(a, b):
    ra = render(a)
    assert set(ra) <= set(ALPHABET) and len(ra) == 52
    assert (ra == render(b)) == (a == b)
    assert base64.b32decode(ra.upper() + "====") == a


def test_claim_codec_and_instances():
    assert decode_claim(encode_claim(b"pk", b"pi")) == (b"pk", b"pi")
    assert parse_inst(b"claim/ab", 4) == ("claim", "ab", None)
    assert parse_inst(commit_inst("ab", 3), 4) == ("commit", "ab", 3)
    for bad in (b"claim/", b"claim/AB", b"commit/ab/9", b"commit/ab/x", b"other/ab", b"\xff"):
        assert parse_inst(bad, 4) is None


def test_sole_claimant_takes_first_letter():
    s = seed_where(lambda r: r.startswith("a"))
    trace, _ = run(Scenario(n=4, t=1, stack="naming", proposers={1: b"x"}, key_seeds={1: s}))
    for p in range(1, 5):
        assert names_of(trace, p) == {"a": RENDER[s]}
    assert violations(check_all(trace)) == []


def test_shared_two_letter_prefix_gives_three_letter_names():
    s1 = seed_where(lambda r: r.startswith("ab"))
    s2 = seed_where(lambda r: r.startswith("ab") and r[2] != RENDER[s1][2], exclude={s1})
    sc = Scenario(n=4, t=1, stack="naming", proposers={1: b"x", 2: b"x"}, key_seeds={1: s1, 2: s2},
                  schedule=Schedule("random", seed=1))
    trace, _ = run(sc)
    for p in range(1, 5):
        got = names_of(trace, p)
        assert sorted(got) == sorted([RENDER[s1][:3], RENDER[s2][:3]])
    assert violations(check_all(trace)) == []


def test_invalid_proof_is_ignored():
    sim = Simulator(Scenario(n=4, t=1, stack="naming"))
    app = sim.apps[1]
    app.sn_claim(app.env.kp.public_key, b"\x00" * 32)
    assert app.prop == {} and not [r for r in sim.trace if r["ev"] == "propose"]


def test_choose_name_skips_taken_prefix():
    sim = Simulator(Scenario(n=4, t=1, stack="naming"))
    app = sim.apps[1]
    pk = app.env.kp.public_key
    text = render(pk)
    app.names[text[:1]] = object()
    app.choose_name(1, pk, PROV.prove_knowledge(app.env.kp))
    assert list(app.prop) == [text[:2]]
    assert (b"claim/" + text[:2].encode()) in app.engines


def test_choose_name_exhausted():
    sim = Simulator(Scenario(n=4, t=1, stack="naming"))
    app = sim.apps[1]
    app.choose_name(53, app.env.kp.public_key, PROV.prove_knowledge(app.env.kp))
    assert app.prop == {}
    assert [r["ev"] for r in sim.trace] == ["claim_failed"]


def test_worked_example_back_off():
    # both renderings start with "a", then differ: claim "a", conflict, claim "ab"
    s1 = seed_where(lambda r: r.startswith("ab"))
    s2 = seed_where(lambda r: r.startswith("a") and r[1] != "b")
    sc = Scenario(n=4, t=1, stack="naming", proposers={1: b"x", 2: b"x"}, key_seeds={1: s1, 2: s2})
    trace, _ = run(sc)
    claims = [r["name"] for r in trace if r["ev"] == "claim" and r["p"] == 1]
    assert claims == ["a", "ab"]
    assert names_of(trace, 3) == {"ab": RENDER[s1], RENDER[s2][:2]: RENDER[s2]}


def test_commit_before_claim_is_held():
    rules = [{"dst": 4, "inst": "claim/", "delay": 9}]
    sc = Scenario(n=4, t=1, stack="naming", proposers={1: b"x"}, schedule=Schedule("script", rules=rules))
    trace, _ = run(sc)
    at4 = [r for r in trace if r.get("p") == 4 and r["ev"] in ("accept", "register")]
    kinds = [(r["ev"], r.get("inst", "")[:6]) for r in at4]
    assert kinds == [("accept", "commit"), ("accept", "claim/"), ("register", "")]


def test_second_commit_for_name_ignored():
    sim = Simulator(Scenario(n=4, t=1, stack="naming", proposers={1: b"x"}))
    trace, _ = sim.run()
    app = sim.apps[2]
    name, rec = next(iter(app.names.items()))
    other = PROV.keygen(99)
    app._register(name, other.public_key, PROV.prove_knowledge(other), 1)
    assert app.names[name] is rec
    assert app.registry() == f"{name} {render(rec.pk)}\n"


def test_unicity_checker_negative():
    trace, _ = run(Scenario(n=4, t=1, stack="naming", proposers={1: b"x"}))
    forged = Trace(dict(r) for r in trace)
    reg = next(r for r in forged if r["ev"] == "register")
    dup = dict(reg, pk="zz", i=len(forged) - 1)
    end = dict(forged[-1], i=len(forged))
    forged = Trace(list(forged[:-1]) + [dup, end])
    got = {v.property: v for v in check_naming(forged)}
    assert not got["sn-unicity"].holds
