import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qkdsim.auth import splitmix64
from qkdsim.harness import (
    AdversaryPolicy,
    AuthSettings,
    ConfigError,
    ScenarioConfig,
    ScenarioReport,
    derive_seed,
    replay_adversary,
    run_batch,
    run_scenario,
)
from qkdsim.transcript import ANNOUNCEMENT, AUTH_MESSAGE, QUANTUM_PASS, Channel, decode_state, encode_state, to_jsonl
from qkdsim.quantum import E0, StateVector


def cfg(protocol, kind="none", seed=42, **kw):
    params = kw.pop("params", {})
    return ScenarioConfig(protocol, AdversaryPolicy(kind, params), seed=seed, **kw)


def test_three_stage_honest_recovers_bits():
    rep = run_scenario(cfg("three_stage", message_bits="10110"))
    assert rep.recovered_bits == "10110" and not rep.aborted


def test_three_stage_mitm():
    rep = run_scenario(cfg("three_stage", "mitm", message_bits="10110", params={"fake_bits": "00000"}))
    assert rep.recovered_bits == "00000"
    assert rep.eve_bits == "10110"
    assert not rep.aborted


def test_auth_mitm_aborts():
    rep = run_scenario(cfg("three_stage_auth", "mitm", message_bits="10110"))
    assert rep.aborted and rep.abort_step in (2, 3)
    assert rep.recovered_bits is None


def test_adversary_must_match_protocol():
    with pytest.raises(ConfigError) as exc:
        run_scenario(cfg("bb84", "mitm"))
    assert "does not apply" in str(exc.value)


def test_config_error_lists_every_problem():
    bad = ScenarioConfig("three_stage_auth", seed=-1, message_bits="12",
                         auth=AuthSettings(window_millis=0, redundancy=0))
    assert len(bad.problems()) == 4


def test_report_invariants():
    with pytest.raises(ValueError):
        ScenarioReport("bb84", "none", 0, aborted=True)
    with pytest.raises(ValueError):
        ScenarioReport("bb84", "none", 0, aborted=True, abort_reason="x", recovered_bits="1")


# -- transcript -------------------------------------------------------------


def test_honest_auth_transcript_confinement():
    rep = run_scenario(cfg("three_stage_auth", message_bits="101"))
    auth = [e for e in rep.transcript if e.kind == AUTH_MESSAGE]
    assert [e.step for e in auth] == [1, 2, 3, 4]
    assert [e.pass_index for e in auth] == [1, 2, 2, 3]
    assert {e.pass_index for e in auth} == {1, 2, 3}
    assert not [e for e in rep.transcript if e.kind == QUANTUM_PASS]
    assert [(e.sender, e.receiver) for e in auth] == [
        ("alice", "bob"), ("bob", "kdc"), ("kdc", "alice"), ("alice", "bob")]


def test_direct_pass_two_transcript():
    c = cfg("three_stage_auth", message_bits="101", auth=AuthSettings(relay_via_kdc=False))
    rep = run_scenario(c)
    passes = sorted(e.pass_index for e in rep.transcript if e.pass_index is not None)
    assert passes == [1, 2, 3]
    assert rep.recovered_bits == "101"


@pytest.mark.parametrize("c", [
    cfg("three_stage", message_bits="1101"),
    cfg("three_stage", "mitm", message_bits="1101"),
    cfg("three_stage_auth", message_bits="1101"),
    cfg("three_stage_auth", "replay", message_bits="1101"),
    cfg("bb84", n_pulses=500),
])
def test_seq_strictly_increasing_and_unique(c):
    seqs = [e.seq for e in run_scenario(c).transcript]
    assert seqs == sorted(set(seqs)) and seqs[0] == 1


def test_three_stage_every_state_in_one_event():
    rep = run_scenario(cfg("three_stage", message_bits="10"))
    passes = [e for e in rep.transcript if e.kind == QUANTUM_PASS]
    assert [e.pass_index for e in passes] == [1, 2, 3]
    assert all(len(e.content["states"]) == 2 for e in passes)


@pytest.mark.parametrize("c", [
    cfg("three_stage_auth", "mitm", message_bits="10"),
    cfg("three_stage_auth", "replay", message_bits="10", params={"target_step": 4}),
    cfg("three_stage_auth", "replay", message_bits="10", params={"target_step": 2}),
    cfg("three_stage_auth", message_bits="10", auth=AuthSettings(kdc_available=False)),
    cfg("bb84", "intercept_resend", n_pulses=2000),
])
def test_abort_is_last_event(c):
    rep = run_scenario(c)
    assert rep.aborted
    last = rep.transcript[-1]
    assert last.kind == ANNOUNCEMENT and last.content["abort"] is True
    assert last.content["reason"] == rep.abort_reason
    assert sum(1 for e in rep.transcript if e.content.get("abort")) == 1


def test_abort_reason_reproducible_from_transcript():
    rep = run_scenario(cfg("three_stage_auth", "replay", message_bits="10", params={"target_step": 4}))
    abort = rep.transcript[-1]
    assert (abort.step, abort.content["reason"]) == (rep.abort_step, rep.abort_reason)
    replayed = [e for e in rep.transcript if e.injected]
    assert len(replayed) == 1 and replayed[0].step == 4
    original = next(e for e in rep.transcript if e.step == 4 and e.session == 0 and e.kind == AUTH_MESSAGE)
    assert replayed[0].content == original.content


def test_closed_channel_refuses_events():
    ch = Channel()
    ch.abort("bob", 1, "integrity")
    with pytest.raises(RuntimeError):
        ch.send("alice", "bob", ANNOUNCEMENT)


def test_state_encoding_round_trip():
    s = StateVector.random(np.random.default_rng(0))
    assert encode_state(E0) == "—"
    assert decode_state(encode_state(s)) == s


def test_transcript_jsonl_one_record_per_event():
    rep = run_scenario(cfg("three_stage_auth", message_bits="1"))
    lines = to_jsonl(rep.transcript).splitlines()
    assert len(lines) == len(rep.transcript)
    assert [json.loads(line)["seq"] for line in lines] == [e.seq for e in rep.transcript]


# -- replay -----------------------------------------------------------------


@pytest.mark.parametrize("params,reason,step", [
    ({"target_step": 4}, "replayed_nonce", 4),
    ({"target_step": 2}, "stale_timestamp", 2),
    ({"target_step": 1, "same_session": True}, "duplicate_event", 1),
    ({"target_step": 3, "same_session": True}, "duplicate_event", 3),
])
def test_replay_outcomes(params, reason, step):
    rep = run_scenario(cfg("three_stage_auth", "replay", message_bits="10", params=params))
    assert (rep.abort_reason, rep.abort_step) == (reason, step)


def test_replay_works_without_recorded_transcript():
    c = cfg("three_stage_auth", "replay", message_bits="10", params={"target_step": 4})
    rep = run_scenario(c, record_transcript=False)
    assert rep.abort_reason == "replayed_nonce" and rep.transcript == []


def test_replay_adversary_requires_captured_step():
    rep = run_scenario(cfg("three_stage", message_bits="1"))
    with pytest.raises(LookupError):
        replay_adversary(rep.transcript, 4)


def test_replay_adversary_marks_injection():
    rep = run_scenario(cfg("three_stage_auth", message_bits="1"))
    ev = replay_adversary(rep.transcript, 2)
    assert ev.injected and ev.step == 2


# -- determinism and batches ------------------------------------------------


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**64 - 1), st.sampled_from([
    ("bb84", "none"), ("bb84", "beam_splitting"), ("three_stage", "mitm"),
    ("three_stage_auth", "none"), ("three_stage_auth", "replay"), ("three_stage_auth", "mitm")]))
def test_same_seed_same_json(seed, pk):
    c = cfg(*pk, seed=seed, n_pulses=1000, mean_photon_number=0.5, message_length=6)
    assert run_scenario(c).to_json() == run_scenario(c).to_json()


def test_derive_seed_uses_splitmix():
    assert derive_seed(42, 3) == splitmix64(42, 3)
    assert len({derive_seed(42, i) for i in range(1000)}) == 1000


def test_batch_sift_rate():
    res = run_batch(cfg("bb84", n_pulses=100_000), 20)
    assert 0.49 <= res.metrics["sift_rate"].mean <= 0.51
    assert res.detections == 0 and len(res.rows) == 20


def test_batch_intercept_qber():
    res = run_batch(cfg("bb84", "intercept_resend", n_pulses=20_000), 10)
    assert 0.24 <= res.metrics["qber"].mean <= 0.26
    assert res.detections == 10


def test_batch_metrics_match_oracle():
    res = run_batch(cfg("bb84", n_pulses=2000), 8)
    vals = [r.sift_rate for r in res.rows]
    assert res.metrics["sift_rate"].mean == pytest.approx(float(np.mean(vals)), abs=1e-15)
    assert res.metrics["sift_rate"].stderr == pytest.approx(float(np.std(vals, ddof=1) / math.sqrt(8)), abs=1e-15)


def test_batch_parallel_matches_serial():
    c = cfg("three_stage_auth", "mitm", message_length=4)
    assert run_batch(c, 6, workers=2).to_json() == run_batch(c, 6).to_json()


def test_batch_trials_must_be_positive():
    with pytest.raises(ConfigError):
        run_batch(cfg("bb84"), 0)
