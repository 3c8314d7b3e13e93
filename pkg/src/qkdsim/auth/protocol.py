"""Parties, freshness rules, and building/verifying the four protocol messages.

Message flow (A = Alice, B = Bob)::

    1. A -> B    Q(ID_A ‖ N_a)                                   ‖ U_A(X)
    2. B -> KDC  Q(ID_B ‖ N_b ‖ E_Kb[ID_A ‖ N_a ‖ T_b])           ‖ U_B U_A(X)
    3. KDC -> A  Q(E_Ka[ID_B ‖ N_a ‖ K_s ‖ T_b] ‖ E_Kb[ID_A ‖ K_s ‖ T_b] ‖ N_b) ‖ U_B U_A(X)
    4. A -> B    Q(E_Kb[ID_A ‖ K_s ‖ T_b] ‖ E_Ks[N_b])            ‖ U_B(X)

Receivers read the classical part only through ``Q⁻¹`` of the header.
A successful verification updates the verifier's context (peer nonces,
session key, nonce cache); a rejection leaves it untouched.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..quantum import StateVector
from .cipher import DEFAULT_CIPHER, Cipher, EncryptedBlock, IntegrityError, SymmetricKey
from .encoding import bits_to_bytes, q_decode
from .wire import (
    AuthMessage,
    MalformedMessage,
    Step1,
    Step2,
    Step3,
    Step4,
    deserialize,
    pack,
    unpack,
)

DEFAULT_WINDOW_MS = 30_000


class Reason(str, enum.Enum):
    MALFORMED = "malformed"
    INTEGRITY = "integrity"
    UNKNOWN_PARTY = "unknown_party"
    ID_MISMATCH = "id_mismatch"
    NONCE_MISMATCH = "nonce_mismatch"
    REPLAYED_NONCE = "replayed_nonce"
    STALE_TIMESTAMP = "stale_timestamp"
    TIMESTAMP_MISMATCH = "timestamp_mismatch"
    DUPLICATE_EVENT = "duplicate_event"
    KDC_UNREACHABLE = "kdc_unreachable"
    OUT_OF_ORDER = "out_of_order"


@dataclass(frozen=True)
class Verdict:
    accepted: bool
    reason: Reason | None = None
    detail: str = ""

    @classmethod
    def accept(cls) -> "Verdict":
        return cls(True)

    @classmethod
    def reject(cls, reason: Reason, detail: str = "") -> "Verdict":
        return cls(False, Reason(reason), detail)


class MissingContext(KeyError):
    """The party lacks state needed to build a message (e.g. no msg 1 seen yet)."""


class _Reject(Exception):
    def __init__(self, reason: Reason, detail: str = ""):
        super().__init__(detail)
        self.verdict = Verdict.reject(reason, detail)


class WorldClock:
    """Simulated global time in milliseconds; only ever moves forward."""

    def __init__(self, start_ms: int = 0):
        self.now_ms = start_ms

    def advance(self, ms: int) -> None:
        if ms < 0:
            raise ValueError("time does not run backwards")
        self.now_ms += ms


@dataclass
class PartyClock:
    world: WorldClock
    skew_ms: int = 0

    def now(self) -> int:
        return max(0, self.world.now_ms + self.skew_ms)


@dataclass(frozen=True)
class ClockPolicy:
    window_millis: int = DEFAULT_WINDOW_MS

    def __post_init__(self):
        if self.window_millis <= 0:
            raise ValueError("freshness window must be positive")

    def fresh(self, stamp: int, now: int) -> bool:
        return abs(now - stamp) <= self.window_millis


class NonceCache:
    """Permanent record of consumed ``(party, nonce)`` pairs."""

    def __init__(self):
        self.seen: set[tuple[bytes, int]] = set()

    def __contains__(self, item: tuple[bytes, int]) -> bool:
        return item in self.seen

    def add(self, party: bytes, nonce: int) -> None:
        self.seen.add((party, nonce))

    def __len__(self) -> int:
        return len(self.seen)


@dataclass
class Principal:
    """Alice or Bob: a long-term key shared with the KDC plus per-session state."""

    party_id: bytes
    key: SymmetricKey
    clock: PartyClock
    rng: np.random.Generator
    policy: ClockPolicy = field(default_factory=ClockPolicy)
    cache: NonceCache = field(default_factory=NonceCache)
    cipher: Cipher = DEFAULT_CIPHER
    redundancy: int = 1
    peer_id: bytes | None = None
    issued: set[int] = field(default_factory=set)
    # per-session
    my_nonce: int | None = None
    peer_nonce: int | None = None
    timestamp: int | None = None
    session_key: SymmetricKey | None = None
    ticket: EncryptedBlock | None = None

    def new_nonce(self) -> int:
        while True:
            n = int(self.rng.integers(0, 2**64, dtype=np.uint64))
            if n not in self.issued:
                self.issued.add(n)
                return n

    def reset_session(self) -> None:
        self.my_nonce = self.peer_nonce = self.timestamp = None
        self.session_key = self.ticket = None


@dataclass
class KdcContext:
    keys: dict[bytes, SymmetricKey]
    clock: PartyClock
    rng: np.random.Generator
    party_id: bytes = b"kdc"
    policy: ClockPolicy = field(default_factory=ClockPolicy)
    cache: NonceCache = field(default_factory=NonceCache)
    cipher: Cipher = DEFAULT_CIPHER
    redundancy: int = 1
    issued_keys: set[bytes] = field(default_factory=set)
    available: bool = True

    def new_session_key(self) -> SymmetricKey:
        while True:
            k = SymmetricKey.generate(self.rng)
            if k.key_bytes not in self.issued_keys:
                self.issued_keys.add(k.key_bytes)
                return k


def _need(value, what: str):
    if value is None:
        raise MissingContext(what)
    return value


def read_header(msg: AuthMessage, rng: np.random.Generator):
    """Recover the classical fields by measuring the Q-encoded header."""
    bits = q_decode(msg.q_encoded_header, msg.redundancy, rng)
    try:
        return deserialize(msg.step, bits_to_bytes(bits))
    except (MalformedMessage, ValueError) as exc:
        raise _Reject(Reason.MALFORMED, str(exc)) from None


def _open(cipher: Cipher, key: SymmetricKey, block: EncryptedBlock, kinds: Sequence[str], what: str):
    try:
        plain = cipher.decrypt(key, block)
    except IntegrityError:
        raise _Reject(Reason.INTEGRITY, f"{what} failed its tag check") from None
    try:
        return unpack(plain, kinds)
    except MalformedMessage as exc:
        raise _Reject(Reason.MALFORMED, f"{what}: {exc}") from None


# -- building ---------------------------------------------------------------


def build_message(
    step: int,
    ctx: Principal | KdcContext,
    payload: Sequence[StateVector] = (),
    *,
    msg2: AuthMessage | None = None,
) -> AuthMessage:
    """Build message ``step`` from the issuing party's context.

    Step 3 is built by the KDC and needs the incoming ``msg2``.
    Raises :class:`MissingContext` when the context lacks required state.
    """
    if step == 1:
        ctx.reset_session()
        ctx.my_nonce = ctx.new_nonce()
        fields = Step1(ctx.party_id, ctx.my_nonce)
    elif step == 2:
        peer = _need(ctx.peer_id, "peer id from message 1")
        n_a = _need(ctx.peer_nonce, "peer nonce from message 1")
        ctx.my_nonce = ctx.new_nonce()
        ctx.timestamp = ctx.clock.now()
        inner = pack(peer, n_a, ctx.timestamp)
        fields = Step2(ctx.party_id, ctx.my_nonce, ctx.cipher.encrypt(ctx.key, inner))
    elif step == 3:
        if not isinstance(ctx, KdcContext):
            raise MissingContext("message 3 is issued by the KDC")
        fields, _ = kdc_issue_session(_need(msg2, "message 2"), ctx)
    elif step == 4:
        ticket = _need(ctx.ticket, "ticket from message 3")
        k_s = _need(ctx.session_key, "session key from message 3")
        n_b = _need(ctx.peer_nonce, "peer nonce from message 3")
        fields = Step4(ticket, ctx.cipher.encrypt(k_s, pack(n_b)))
    else:
        raise ValueError(f"no protocol step {step}")
    return AuthMessage.create(fields, payload, ctx.redundancy)


def _kdc_check_step2(fields: Step2, kdc: KdcContext):
    k_b = kdc.keys.get(fields.id_b)
    if k_b is None:
        raise _Reject(Reason.UNKNOWN_PARTY, f"no key for {fields.id_b!r}")
    id_a, n_a, t_b = _open(kdc.cipher, k_b, fields.for_kdc, ("bytes", "u64", "u64"), "E_Kb block")
    if id_a not in kdc.keys:
        raise _Reject(Reason.UNKNOWN_PARTY, f"no key for {id_a!r}")
    if not kdc.policy.fresh(t_b, kdc.clock.now()):
        raise _Reject(Reason.STALE_TIMESTAMP, f"T_b={t_b} vs KDC clock {kdc.clock.now()}")
    if (fields.id_b, fields.n_b) in kdc.cache or (id_a, n_a) in kdc.cache:
        raise _Reject(Reason.REPLAYED_NONCE, "nonce already used with the KDC")
    return id_a, n_a, t_b


def kdc_issue_session(msg2: AuthMessage, kdc: KdcContext) -> tuple[Step3, SymmetricKey]:
    """Validate message 2 and issue a fresh session key to both parties.

    Raises :class:`Rejected` when message 2 fails any check.
    """
    try:
        fields = read_header(msg2, kdc.rng)
        id_a, n_a, t_b = _kdc_check_step2(fields, kdc)
    except _Reject as rej:
        raise Rejected(rej.verdict) from None
    kdc.cache.add(fields.id_b, fields.n_b)
    kdc.cache.add(id_a, n_a)
    k_s = kdc.new_session_key()
    for_alice = kdc.cipher.encrypt(kdc.keys[id_a], pack(fields.id_b, n_a, k_s.key_bytes, t_b))
    ticket = kdc.cipher.encrypt(kdc.keys[fields.id_b], pack(id_a, k_s.key_bytes, t_b))
    return Step3(for_alice, ticket, fields.n_b), k_s


class Rejected(Exception):
    def __init__(self, verdict: Verdict):
        super().__init__(f"{verdict.reason.value}: {verdict.detail}")
        self.verdict = verdict


# -- verifying --------------------------------------------------------------


def _verify_step1(msg: AuthMessage, bob: Principal) -> None:
    f: Step1 = read_header(msg, bob.rng)
    if bob.peer_id is not None and f.id_a != bob.peer_id:
        raise _Reject(Reason.ID_MISMATCH, f"expected {bob.peer_id!r}, got {f.id_a!r}")
    if (f.id_a, f.n_a) in bob.cache:
        raise _Reject(Reason.REPLAYED_NONCE, "N_a seen before")
    bob.reset_session()
    bob.cache.add(f.id_a, f.n_a)
    bob.peer_id, bob.peer_nonce = f.id_a, f.n_a


def _verify_step3(msg: AuthMessage, alice: Principal) -> None:
    f: Step3 = read_header(msg, alice.rng)
    id_b, n_a, k_s, t_b = _open(
        alice.cipher, alice.key, f.for_alice, ("bytes", "u64", "bytes", "u64"), "E_Ka block"
    )
    if alice.peer_id is not None and id_b != alice.peer_id:
        raise _Reject(Reason.ID_MISMATCH, f"expected {alice.peer_id!r}, got {id_b!r}")
    if alice.my_nonce is None or n_a != alice.my_nonce:
        raise _Reject(Reason.NONCE_MISMATCH, "N_a does not match the issued nonce")
    if (alice.party_id, n_a) in alice.cache:
        raise _Reject(Reason.REPLAYED_NONCE, "N_a already answered")
    if not alice.policy.fresh(t_b, alice.clock.now()):
        raise _Reject(Reason.STALE_TIMESTAMP, f"T_b={t_b} vs clock {alice.clock.now()}")
    try:
        session_key = SymmetricKey(k_s)
    except ValueError:
        raise _Reject(Reason.MALFORMED, "bad session key length") from None
    alice.cache.add(alice.party_id, n_a)
    alice.session_key, alice.ticket, alice.peer_nonce, alice.timestamp = session_key, f.ticket, f.n_b, t_b


def _verify_step4(msg: AuthMessage, bob: Principal) -> None:
    f: Step4 = read_header(msg, bob.rng)
    id_a, k_s, t_b = _open(bob.cipher, bob.key, f.ticket, ("bytes", "bytes", "u64"), "ticket")
    if bob.peer_id is not None and id_a != bob.peer_id:
        raise _Reject(Reason.ID_MISMATCH, f"expected {bob.peer_id!r}, got {id_a!r}")
    try:
        session_key = SymmetricKey(k_s)
    except ValueError:
        raise _Reject(Reason.MALFORMED, "bad session key length") from None
    (n_b,) = _open(bob.cipher, session_key, f.nonce_proof, ("u64",), "E_Ks block")
    if (bob.party_id, n_b) in bob.cache:
        raise _Reject(Reason.REPLAYED_NONCE, "N_b already consumed")
    if bob.my_nonce is None or n_b != bob.my_nonce:
        raise _Reject(Reason.NONCE_MISMATCH, "N_b does not match the issued nonce")
    if not bob.policy.fresh(t_b, bob.clock.now()):
        raise _Reject(Reason.STALE_TIMESTAMP, f"T_b={t_b} vs clock {bob.clock.now()}")
    if t_b != bob.timestamp:
        raise _Reject(Reason.TIMESTAMP_MISMATCH, "T_b differs from the stamped value")
    bob.cache.add(bob.party_id, n_b)
    bob.session_key = session_key


def verify_message(step: int, msg: AuthMessage, ctx: Principal | KdcContext) -> Verdict:
    """Check ``msg`` as step ``step`` at the receiving party; never raises on bad input."""
    if msg.step != step:
        return Verdict.reject(Reason.OUT_OF_ORDER, f"expected step {step}, got {msg.step}")
    try:
        if step == 1:
            _verify_step1(msg, ctx)
        elif step == 2:
            _kdc_check_step2(read_header(msg, ctx.rng), ctx)
        elif step == 3:
            _verify_step3(msg, ctx)
        elif step == 4:
            _verify_step4(msg, ctx)
        else:
            return Verdict.reject(Reason.MALFORMED, f"no protocol step {step}")
    except _Reject as rej:
        return rej.verdict
    return Verdict.accept()
