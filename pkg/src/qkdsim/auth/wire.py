"""Byte-exact wire format for the four authentication messages.

Every classical field is written as a 2-byte big-endian length followed by
its bytes, in protocol order. Nonces and timestamps are 8-byte big-endian
unsigned integers; encrypted blocks are ``ciphertext ‖ 8-byte tag``. The
plaintexts inside encrypted blocks use the same framing.

==== =================================================================
step fields
==== =================================================================
1    ID_A, N_a
2    ID_B, N_b, E_Kb[ID_A, N_a, T_b]
3    E_Ka[ID_B, N_a, K_s, T_b], E_Kb[ID_A, K_s, T_b], N_b
4    E_Kb[ID_A, K_s, T_b], E_Ks[N_b]
==== =================================================================
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields as dataclass_fields
from typing import ClassVar, Sequence, Union

from ..quantum import StateVector
from .cipher import EncryptedBlock
from .encoding import bytes_to_bits, q_encode

MAX_ID_BYTES = 32

Field = Union[bytes, int, EncryptedBlock]


class MalformedMessage(ValueError):
    pass


def pack(*fields: Field) -> bytes:
    out = bytearray()
    for f in fields:
        if isinstance(f, EncryptedBlock):
            raw = f.to_bytes()
        elif isinstance(f, int):
            raw = f.to_bytes(8, "big")
        else:
            raw = bytes(f)
        if len(raw) > 0xFFFF:
            raise ValueError("field longer than 65535 bytes")
        out += len(raw).to_bytes(2, "big") + raw
    return bytes(out)


def unpack(data: bytes, kinds: Sequence[str]) -> list[Field]:
    """Split ``data`` into fields of the given kinds (``bytes``, ``u64``, ``block``)."""
    out: list[Field] = []
    pos = 0
    for kind in kinds:
        if pos + 2 > len(data):
            raise MalformedMessage("truncated length prefix")
        n = int.from_bytes(data[pos : pos + 2], "big")
        raw = data[pos + 2 : pos + 2 + n]
        if len(raw) != n:
            raise MalformedMessage("truncated field")
        pos += 2 + n
        if kind == "u64":
            if n != 8:
                raise MalformedMessage("integer field is not 8 bytes")
            out.append(int.from_bytes(raw, "big"))
        elif kind == "block":
            try:
                out.append(EncryptedBlock.from_bytes(raw))
            except ValueError as exc:
                raise MalformedMessage(str(exc)) from None
        else:
            out.append(raw)
    if pos != len(data):
        raise MalformedMessage("trailing bytes")
    return out


def check_party_id(party_id: bytes) -> bytes:
    if not 1 <= len(party_id) <= MAX_ID_BYTES:
        raise ValueError(f"party ids are 1-{MAX_ID_BYTES} bytes, got {len(party_id)}")
    party_id.decode("utf-8")
    return party_id


@dataclass(frozen=True)
class Step1:
    id_a: bytes
    n_a: int
    KINDS: ClassVar = ("bytes", "u64")


@dataclass(frozen=True)
class Step2:
    id_b: bytes
    n_b: int
    for_kdc: EncryptedBlock  # E_Kb[ID_A, N_a, T_b]
    KINDS: ClassVar = ("bytes", "u64", "block")


@dataclass(frozen=True)
class Step3:
    for_alice: EncryptedBlock  # E_Ka[ID_B, N_a, K_s, T_b]
    ticket: EncryptedBlock  # E_Kb[ID_A, K_s, T_b]
    n_b: int
    KINDS: ClassVar = ("block", "block", "u64")


@dataclass(frozen=True)
class Step4:
    ticket: EncryptedBlock
    nonce_proof: EncryptedBlock  # E_Ks[N_b]
    KINDS: ClassVar = ("block", "block")


FIELDS_BY_STEP = {1: Step1, 2: Step2, 3: Step3, 4: Step4}
StepFields = Union[Step1, Step2, Step3, Step4]


def serialize(fields: StepFields) -> bytes:
    return pack(*(getattr(fields, f.name) for f in dataclass_fields(fields)))


def deserialize(step: int, data: bytes) -> StepFields:
    try:
        cls = FIELDS_BY_STEP[step]
    except KeyError:
        raise MalformedMessage(f"no protocol step {step}") from None
    return cls(*unpack(data, cls.KINDS))


@dataclass(frozen=True)
class AuthMessage:
    """One protocol message: Q-encoded classical header plus three-stage payload."""

    step: int
    classical_fields: StepFields
    qubit_payload: tuple[StateVector, ...]
    q_encoded_header: tuple[StateVector, ...] = field(repr=False)
    redundancy: int = 1

    @classmethod
    def create(
        cls, fields: StepFields, payload: Sequence[StateVector] = (), redundancy: int = 1
    ) -> "AuthMessage":
        step = next(k for k, v in FIELDS_BY_STEP.items() if isinstance(fields, v))
        header = q_encode(bytes_to_bits(serialize(fields)), redundancy)
        return cls(step, fields, tuple(payload), tuple(header), redundancy)

    @property
    def wire(self) -> bytes:
        return serialize(self.classical_fields)
