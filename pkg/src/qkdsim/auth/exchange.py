"""Driving the authenticated three-stage exchange between Alice, Bob and the KDC.

Quantum passes ride on the authentication messages: pass 1 on message 1,
pass 2 on messages 2 and 3 (relayed untouched by the KDC), pass 3 on
message 4. With ``relay_via_kdc=False`` pass 2 instead goes straight from Bob
to Alice and messages 2 and 3 carry no qubits.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..quantum import RandomStream, StateVector
from ..three_stage import Secret, ThreeStageSession, apply_secret, dagger
from ..transcript import AUTH_MESSAGE, QUANTUM_PASS, Channel, decode_states, encode_states
from .cipher import SymmetricKey
from .encoding import format_bits, q_decode
from .protocol import (
    ClockPolicy,
    KdcContext,
    PartyClock,
    Principal,
    Reason,
    Rejected,
    Verdict,
    WorldClock,
    build_message,
    kdc_issue_session,
    read_header,
    verify_message,
)
from .wire import AuthMessage, Step3, deserialize, pack

# (step, message as sent) -> messages actually delivered, in order
Tamper = Callable[[int, AuthMessage], Sequence[AuthMessage]]


def message_content(msg: AuthMessage) -> dict:
    return {
        "wire": msg.wire.hex(),
        "redundancy": msg.redundancy,
        "header": encode_states(msg.q_encoded_header),
        "payload": encode_states(msg.qubit_payload),
    }


def message_from_content(step: int, content: dict) -> AuthMessage:
    """Rebuild an :class:`AuthMessage` from a transcript record."""
    fields = deserialize(step, bytes.fromhex(content["wire"]))
    return AuthMessage(
        step,
        fields,
        tuple(decode_states(content["payload"])),
        tuple(decode_states(content["header"])),
        content["redundancy"],
    )


@dataclass
class AuthScenario:
    alice: Principal
    bob: Principal
    kdc: KdcContext
    world: WorldClock
    hop_latency_ms: int = 10
    relay_via_kdc: bool = True

    @property
    def kdc_available(self) -> bool:
        return self.kdc.available


def setup_parties(
    seed: int,
    *,
    alice_id: bytes = b"alice",
    bob_id: bytes = b"bob",
    window_ms: int = 30_000,
    alice_skew_ms: int = 0,
    bob_skew_ms: int = 0,
    kdc_skew_ms: int = 0,
    redundancy: int = 1,
    hop_latency_ms: int = 10,
    relay_via_kdc: bool = True,
    kdc_available: bool = True,
    start_ms: int = 1_000_000,
) -> AuthScenario:
    """Provision Alice, Bob and the KDC with pre-shared long-term keys."""
    if alice_id == bob_id:
        raise ValueError("party ids must be unique")
    seq = np.random.SeedSequence(seed)
    a_rng, b_rng, k_rng, key_rng = (np.random.default_rng(s) for s in seq.spawn(4))
    k_a = SymmetricKey.generate(key_rng)
    k_b = SymmetricKey.generate(key_rng)
    world = WorldClock(start_ms)
    policy = ClockPolicy(window_ms)
    alice = Principal(alice_id, k_a, PartyClock(world, alice_skew_ms), a_rng, policy,
                      redundancy=redundancy, peer_id=bob_id)
    bob = Principal(bob_id, k_b, PartyClock(world, bob_skew_ms), b_rng, policy,
                    redundancy=redundancy, peer_id=alice_id)
    kdc = KdcContext({alice_id: k_a, bob_id: k_b}, PartyClock(world, kdc_skew_ms), k_rng,
                     policy=policy, redundancy=redundancy, available=kdc_available)
    return AuthScenario(alice, bob, kdc, world, hop_latency_ms, relay_via_kdc)


@dataclass
class AuthReport:
    aborted: bool
    abort_step: int | None = None
    abort_reason: str | None = None
    abort_detail: str = ""
    recovered: list[StateVector] | None = None
    recovered_bits: str | None = None
    eve_bits: str | None = None
    kdc_payload_in: tuple[StateVector, ...] | None = None
    kdc_payload_out: tuple[StateVector, ...] | None = None
    messages: dict[int, AuthMessage] = field(default_factory=dict)


def _names(scn: AuthScenario) -> dict[str, str]:
    return {
        "alice": scn.alice.party_id.decode(),
        "bob": scn.bob.party_id.decode(),
        "kdc": scn.kdc.party_id.decode(),
    }


class _Abort(Exception):
    def __init__(self, step: int, verdict: Verdict):
        self.step = step
        self.verdict = verdict


def _deliver(
    channel: Channel,
    session: int,
    step: int,
    sender: str,
    receiver: str,
    msg: AuthMessage,
    verify: Callable[[AuthMessage], Verdict],
    tamper: Tamper | None,
    pass_index: int | None,
) -> AuthMessage:
    """Send ``msg`` (or what the adversary substitutes) and verify at the receiver."""
    delivered = list(tamper(step, msg)) if tamper else [msg]
    accepted = None
    for m in delivered:
        _, dup = channel.send(
            sender, receiver, AUTH_MESSAGE, message_content(m), session=session,
            step=step, pass_index=pass_index if m.qubit_payload else None, injected=m is not msg,
        )
        verdict = Verdict.reject(Reason.DUPLICATE_EVENT, "message already delivered") if dup else verify(m)
        if not verdict.accepted:
            raise _Abort(step, verdict)
        accepted = m
    if accepted is None:
        raise _Abort(step, Verdict.reject(Reason.OUT_OF_ORDER, "message suppressed"))
    return accepted


def run_authenticated_exchange(
    scn: AuthScenario,
    session: ThreeStageSession,
    *,
    channel: Channel | None = None,
    tamper: Tamper | None = None,
    session_index: int = 0,
    payload_redundancy: int = 1,
) -> AuthReport:
    """Run messages 1→4 with the three-stage passes; abort on the first rejection."""
    channel = channel or Channel()
    names = _names(scn)
    report = AuthReport(aborted=False)
    world = scn.world

    def hop():
        world.advance(scn.hop_latency_ms)

    try:
        # 1. A -> B
        pass1 = apply_secret(session.u_a, session.payload)
        msg1 = build_message(1, scn.alice, pass1)
        hop()
        got1 = _deliver(channel, session_index, 1, names["alice"], names["bob"], msg1,
                        lambda m: verify_message(1, m, scn.bob), tamper, 1)
        report.messages[1] = got1

        pass2 = apply_secret(session.u_b, got1.qubit_payload)
        if not scn.relay_via_kdc:
            hop()
            channel.send(names["bob"], names["alice"], QUANTUM_PASS,
                         {"states": encode_states(pass2)}, session=session_index, pass_index=2)
        carried = pass2 if scn.relay_via_kdc else []

        # 2. B -> KDC
        msg2 = build_message(2, scn.bob, carried)
        hop()
        if not scn.kdc.available:
            raise _Abort(2, Verdict.reject(Reason.KDC_UNREACHABLE, "no route to KDC"))
        issued: dict = {}

        def kdc_verify(m: AuthMessage) -> Verdict:
            try:
                issued["fields"], issued["key"] = kdc_issue_session(m, scn.kdc)
            except Rejected as rej:
                return rej.verdict
            return Verdict.accept()

        got2 = _deliver(channel, session_index, 2, names["bob"], names["kdc"], msg2,
                        kdc_verify, tamper, 2)
        report.messages[2] = got2
        report.kdc_payload_in = got2.qubit_payload

        # 3. KDC -> A; the KDC relays the qubits without touching them
        msg3 = AuthMessage.create(issued["fields"], got2.qubit_payload, scn.kdc.redundancy)
        report.kdc_payload_out = msg3.qubit_payload
        hop()
        got3 = _deliver(channel, session_index, 3, names["kdc"], names["alice"], msg3,
                        lambda m: verify_message(3, m, scn.alice), tamper, 2)
        report.messages[3] = got3
        at_alice = got3.qubit_payload if scn.relay_via_kdc else tuple(pass2)

        # 4. A -> B
        pass3 = apply_secret(dagger(session.u_a), at_alice)
        msg4 = build_message(4, scn.alice, pass3)
        hop()
        got4 = _deliver(channel, session_index, 4, names["alice"], names["bob"], msg4,
                        lambda m: verify_message(4, m, scn.bob), tamper, 3)
        report.messages[4] = got4
    except _Abort as ab:
        receiver = {1: "bob", 2: "kdc", 3: "alice", 4: "bob"}[ab.step]
        channel.abort(names[receiver], ab.step, ab.verdict.reason.value, ab.verdict.detail,
                      session=session_index)
        report.aborted = True
        report.abort_step = ab.step
        report.abort_reason = ab.verdict.reason.value
        report.abort_detail = ab.verdict.detail
        return report

    recovered = apply_secret(dagger(session.u_b), got4.qubit_payload)
    report.recovered = recovered
    report.recovered_bits = format_bits(q_decode(recovered, payload_redundancy, scn.bob.rng))
    return report


@dataclass
class EveAgent:
    """Channel-level attacker who holds no key shared with the KDC."""

    rng: RandomStream
    key: SymmetricKey
    u_c: Secret
    name: str = "eve"


MITM_STRATEGIES = ("via_kdc", "direct")


def run_authenticated_mitm(
    scn: AuthScenario,
    session: ThreeStageSession,
    eve: EveAgent,
    *,
    strategy: str = "random",
    channel: Channel | None = None,
    session_index: int = 0,
    payload_redundancy: int = 1,
) -> AuthReport:
    """Eve intercepts message 1 and tries to complete the exchange with Alice.

    ``via_kdc``: Eve poses as Bob toward the KDC with a forged E_Kb block.
    ``direct``: Eve skips the KDC and forges message 3 to Alice herself.
    """
    channel = channel or Channel()
    names = _names(scn)
    if strategy == "random":
        strategy = MITM_STRATEGIES[int(eve.rng.integers(0, len(MITM_STRATEGIES)))]
    if strategy not in MITM_STRATEGIES:
        raise ValueError(f"unknown MITM strategy {strategy!r}")
    report = AuthReport(aborted=False)
    world = scn.world
    impostor = Principal(scn.bob.party_id, eve.key, scn.bob.clock, eve.rng,
                         redundancy=scn.bob.redundancy)

    try:
        pass1 = apply_secret(session.u_a, session.payload)
        msg1 = build_message(1, scn.alice, pass1)
        world.advance(scn.hop_latency_ms)
        got1 = _deliver(channel, session_index, 1, names["alice"], eve.name, msg1,
                        lambda m: verify_message(1, m, impostor), None, 1)
        fake_pass2 = apply_secret(eve.u_c, got1.qubit_payload)

        world.advance(scn.hop_latency_ms)
        if strategy == "via_kdc":
            msg2 = build_message(2, impostor, fake_pass2)
            issued: dict = {}

            def kdc_verify(m: AuthMessage) -> Verdict:
                try:
                    issued["fields"], _ = kdc_issue_session(m, scn.kdc)
                except Rejected as rej:
                    return rej.verdict
                return Verdict.accept()

            got2 = _deliver(channel, session_index, 2, eve.name, names["kdc"], msg2,
                            kdc_verify, None, 2)
            msg3 = AuthMessage.create(issued["fields"], got2.qubit_payload, scn.kdc.redundancy)
            sender3 = names["kdc"]
        else:
            header = read_header(got1, eve.rng)
            t_fake = impostor.clock.now()
            fake_key = SymmetricKey.generate(eve.rng)
            for_alice = impostor.cipher.encrypt(
                eve.key, pack(scn.bob.party_id, header.n_a, fake_key.key_bytes, t_fake)
            )
            ticket = impostor.cipher.encrypt(
                eve.key, pack(scn.alice.party_id, fake_key.key_bytes, t_fake)
            )
            msg3 = AuthMessage.create(Step3(for_alice, ticket, impostor.new_nonce()), fake_pass2,
                                      scn.bob.redundancy)
            sender3 = eve.name

        world.advance(scn.hop_latency_ms)
        _deliver(channel, session_index, 3, sender3, names["alice"], msg3,
                 lambda m: verify_message(3, m, scn.alice), None, 2)

        # only reachable if a forged block passed its tag check
        pass3 = apply_secret(dagger(session.u_a), msg3.qubit_payload)
        msg4 = build_message(4, scn.alice, pass3)
        world.advance(scn.hop_latency_ms)
        channel.send(names["alice"], eve.name, AUTH_MESSAGE, message_content(msg4),
                     session=session_index, step=4, pass_index=3)
        x = apply_secret(dagger(eve.u_c), msg4.qubit_payload)
        report.eve_bits = format_bits(q_decode(x, payload_redundancy, eve.rng))
    except _Abort as ab:
        receiver = {1: eve.name, 2: names["kdc"], 3: names["alice"], 4: names["bob"]}[ab.step]
        channel.abort(receiver, ab.step, ab.verdict.reason.value, ab.verdict.detail,
                      session=session_index)
        report.aborted = True
        report.abort_step = ab.step
        report.abort_reason = ab.verdict.reason.value
        report.abort_detail = ab.verdict.detail
    return report
