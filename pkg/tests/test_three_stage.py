import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qkdsim.auth.encoding import q_encode
from qkdsim.quantum import E0, E1, QuantumError, StateVector, apply, fidelity, identity, pauli, rotation
from qkdsim.three_stage import (
    MitmConfig,
    ProductOperator,
    ThreeStageSession,
    apply_secret,
    monolithic,
    pick_commuting_operator,
    run_honest,
    run_honest_multiphoton,
    run_mitm,
    secrets_commute_up_to_phase,
)

seeds = st.integers(0, 2**32 - 1)


def random_session(rng, n=1):
    payload = [StateVector.random(rng) for _ in range(n)]
    return ThreeStageSession(pick_commuting_operator(n, rng), pick_commuting_operator(n, rng), payload)


def test_identity_secrets_carry_payload_unchanged():
    x = [StateVector.random(np.random.default_rng(0))]
    recovered, passes = run_honest(ThreeStageSession(identity(), identity(), x))
    assert [p.pass_index for p in passes] == [1, 2, 3]
    for p in passes:
        assert p.in_flight_states[0].isclose(x[0], 1e-12)
    assert recovered[0].isclose(x[0], 1e-12)


def test_pass_two_matches_matrix_chain():
    x = StateVector.random(np.random.default_rng(1))
    ua, ub = rotation(math.pi / 6), rotation(math.pi / 4)
    recovered, passes = run_honest(ThreeStageSession(ua, ub, [x]))
    oracle = ub.matrix @ ua.matrix @ x.amplitudes
    assert np.max(np.abs(passes[1].in_flight_states[0].amplitudes - oracle)) < 1e-12
    # pass 3 carries U_B(X)
    assert np.max(np.abs(passes[2].in_flight_states[0].amplitudes - ub.matrix @ x.amplitudes)) < 1e-12
    assert fidelity(recovered[0], x) == pytest.approx(1, abs=1e-9)


def test_pass_senders_alternate():
    _, passes = run_honest(random_session(np.random.default_rng(2)))
    assert [(p.sender, p.receiver) for p in passes] == [("alice", "bob"), ("bob", "alice"), ("alice", "bob")]


def test_pauli_secrets_recover_up_to_phase():
    x = StateVector.random(np.random.default_rng(3))
    recovered, _ = run_honest(ThreeStageSession(pauli("X"), pauli("Y"), [x]))
    # XYX = -Y so Bob ends with -X: same state, global phase -1
    assert np.allclose(recovered[0].amplitudes, -x.amplitudes, atol=1e-12)
    assert fidelity(recovered[0], x) == pytest.approx(1, abs=1e-12)


def test_non_commuting_secrets_rejected():
    with pytest.raises(ValueError):
        ThreeStageSession(pauli("X"), rotation(0.3), [E0])


def test_session_dimension_mismatch():
    u = pick_commuting_operator(2, np.random.default_rng(0))
    with pytest.raises((ValueError, QuantumError)):
        apply_secret(u, [E0, E1, E0])


@settings(max_examples=50, deadline=None)
@given(seeds, st.integers(1, 6))
def test_round_trip_multi_qubit(seed, n):
    rng = np.random.default_rng(seed)
    s = random_session(rng, n)
    recovered, _ = run_honest(s)
    assert min(fidelity(r, x) for r, x in zip(recovered, s.payload)) >= 1 - 1e-9


def test_round_trip_1000_sessions():
    rng = np.random.default_rng(1234)
    worst = min(
        fidelity(run_honest(s)[0][0], s.payload[0])
        for s in (random_session(rng) for _ in range(1000))
    )
    assert worst >= 1 - 1e-9


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_pass_algebra_order_independent(seed):
    rng = np.random.default_rng(seed)
    s = random_session(rng, 2)
    ab = apply_secret(s.u_b, apply_secret(s.u_a, s.payload))
    ba = apply_secret(s.u_a, apply_secret(s.u_b, s.payload))
    assert all(fidelity(p, q) == pytest.approx(1, abs=1e-12) for p, q in zip(ab, ba))
    assert secrets_commute_up_to_phase(s.u_a, s.u_b, 2) == (True, 1)


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_factored_matches_monolithic(seed):
    rng = np.random.default_rng(seed)
    s = random_session(rng, 3)
    factored = monolithic(apply_secret(s.u_a, s.payload))
    joint = apply(s.u_a.full(), monolithic(s.payload))
    assert np.max(np.abs(factored.amplitudes - joint.amplitudes)) < 1e-12


@given(st.floats(0.1, math.pi - 0.1))
def test_transit_state_differs_from_message(theta):
    _, passes = run_honest(ThreeStageSession(rotation(theta), rotation(0.7), [E0]))
    assert fidelity(passes[0].in_flight_states[0], E0) == pytest.approx(math.cos(theta) ** 2, abs=1e-12)
    assert fidelity(passes[0].in_flight_states[0], E0) < 1


def test_multiphoton_split_copy_never_bare():
    s = ThreeStageSession(rotation(math.pi / 4), rotation(0.4), [E0])
    res = run_honest_multiphoton(s, 3)
    assert fidelity(res.passes[0].in_flight_states[0], E0) == pytest.approx(0.5, abs=1e-12)
    assert fidelity(res.passes[0].in_flight_states[0], E0) < 1 - 1e-6


@settings(max_examples=20, deadline=None)
@given(seeds, st.integers(1, 5))
def test_multiphoton_copies_identical(seed, k):
    s = random_session(np.random.default_rng(seed), 2)
    res = run_honest_multiphoton(s, k)
    for p in res.passes:
        for unit in range(2):
            copies = p.in_flight_states[unit * k:(unit + 1) * k]
            assert all(c == copies[0] for c in copies)
    assert all(all(a == b for a, b in zip(c, res.recovered)) for c in res.recovered_copies)


def test_multiphoton_single_copy_reduces_to_honest():
    s = random_session(np.random.default_rng(8), 2)
    res = run_honest_multiphoton(s, 1)
    recovered, passes = run_honest(s)
    assert res.recovered == recovered
    assert [p.in_flight_states for p in res.passes] == [p.in_flight_states for p in passes]


def test_multiphoton_needs_a_photon():
    with pytest.raises(ValueError):
        run_honest_multiphoton(random_session(np.random.default_rng(0)), 0)


def test_mitm_eve_learns_x_bob_gets_y():
    rng = np.random.default_rng(9)
    x = q_encode([1, 0, 1, 1, 0])
    y = q_encode([0, 0, 0, 0, 0])
    s = ThreeStageSession(pick_commuting_operator(5, rng), pick_commuting_operator(5, rng), x)
    res = run_mitm(s, MitmConfig(pick_commuting_operator(5, rng), pick_commuting_operator(5, rng), y))
    assert all(fidelity(e, a) == pytest.approx(1, abs=1e-9) for e, a in zip(res.eve_recovered, x))
    assert all(fidelity(b, c) == pytest.approx(1, abs=1e-9) for b, c in zip(res.bob_received, y))
    # fidelity against X equals |⟨X|Y⟩|² per unit
    assert [round(fidelity(b, a), 9) for b, a in zip(res.bob_received, x)] == [0, 1, 0, 0, 1]
    assert res.detected_at_quantum_layer is False
    assert {p.receiver for p in res.alice_side} == {"eve", "alice"}


def test_mitm_with_y_equal_x_matches_honest():
    rng = np.random.default_rng(10)
    s = random_session(rng)
    res = run_mitm(s, MitmConfig(pick_commuting_operator(1, rng), pick_commuting_operator(1, rng), s.payload))
    assert fidelity(res.bob_received[0], run_honest(s)[0][0]) == pytest.approx(1, abs=1e-9)


def test_mitm_1000_random_configurations():
    rng = np.random.default_rng(11)
    worst = 1.0
    for _ in range(1000):
        s = random_session(rng)
        res = run_mitm(s, MitmConfig(pick_commuting_operator(1, rng), pick_commuting_operator(1, rng)))
        worst = min(worst, fidelity(res.eve_recovered[0], s.payload[0]))
    assert worst >= 1 - 1e-9


def test_product_operator_dagger_and_count():
    u = ProductOperator((rotation(0.1), rotation(0.2)))
    assert u.n_qubits == 2
    assert (u.dagger().full() @ u.full()).isclose(identity(2), 1e-12)
    with pytest.raises(ValueError):
        ProductOperator(())
