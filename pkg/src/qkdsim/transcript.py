"""Channel events, the recording channel, and their JSON encoding.

A transcript is exported as JSON Lines, one object per event, with keys
``seq, session, sender, receiver, kind, step, pass_index, injected, content``.

States inside ``content`` are encoded one entry per state: the BB84 symbol
(``"—" "|" "/" "\\"``) when the state is exactly one of the four prepared
polarization states, otherwise a list of ``[re, im]`` amplitude pairs.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np

from .quantum import SYMBOLS, StateVector, make_state, parse_symbol

QUANTUM_PASS = "quantum_pass"
AUTH_MESSAGE = "auth_message"
ANNOUNCEMENT = "classical_announcement"
EVENT_KINDS = (QUANTUM_PASS, AUTH_MESSAGE, ANNOUNCEMENT)

_SYMBOL_OF_AMPS = {make_state(bit, basis).amplitudes.tobytes(): sym for (basis, bit), sym in SYMBOLS.items()}


def encode_state(s: StateVector) -> str | list[list[float]]:
    sym = _SYMBOL_OF_AMPS.get(s.amplitudes.tobytes())
    if sym is not None:
        return sym
    return [[float(a.real), float(a.imag)] for a in s.amplitudes]


def decode_state(item) -> StateVector:
    if isinstance(item, str):
        basis, bit = parse_symbol(item)
        return make_state(bit, basis)
    return StateVector(np.array([complex(re, im) for re, im in item]), check=False)


def encode_states(states: Iterable[StateVector]) -> list:
    return [encode_state(s) for s in states]


def decode_states(items: Sequence) -> list[StateVector]:
    return [decode_state(i) for i in items]


@dataclass(frozen=True)
class ChannelEvent:
    seq: int
    session: int
    sender: str
    receiver: str
    kind: str
    content: dict[str, Any] = field(default_factory=dict)
    step: int | None = None
    pass_index: int | None = None
    injected: bool = False

    def to_record(self) -> dict[str, Any]:
        return asdict(self)

    def digest(self) -> str:
        body = json.dumps(self.content, sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(f"{self.kind}:{self.step}:{body}".encode()).hexdigest()


class Channel:
    """Sequential, reliable channel that records every delivery.

    ``record=False`` keeps only sequence bookkeeping (used for large batches).
    """

    def __init__(self, record: bool = True):
        self.record = record
        self.events: list[ChannelEvent] = []
        self._seq = 0
        self._seen: set[tuple[int, str, str]] = set()
        self.closed = False

    def send(
        self,
        sender: str,
        receiver: str,
        kind: str,
        content: dict[str, Any] | None = None,
        *,
        session: int = 0,
        step: int | None = None,
        pass_index: int | None = None,
        injected: bool = False,
    ) -> tuple[ChannelEvent, bool]:
        """Deliver one event; returns it and whether it repeats an earlier delivery
        to the same receiver within the session."""
        if self.closed:
            raise RuntimeError("channel closed after abort")
        if kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {kind!r}")
        self._seq += 1
        ev = ChannelEvent(
            self._seq, session, sender, receiver, kind, content or {}, step, pass_index, injected
        )
        key = (session, receiver, ev.digest()) if kind == AUTH_MESSAGE else None
        duplicate = key in self._seen
        if key is not None:
            self._seen.add(key)
        if self.record:
            self.events.append(ev)
        return ev, duplicate

    def abort(self, party: str, step: int, reason: str, detail: str = "", session: int = 0) -> ChannelEvent:
        ev, _ = self.send(
            party,
            "all",
            ANNOUNCEMENT,
            {"abort": True, "reason": reason, "detail": detail},
            session=session,
            step=step,
        )
        self.closed = True
        return ev


def to_jsonl(events: Iterable[ChannelEvent]) -> str:
    return "".join(
        json.dumps(e.to_record(), sort_keys=True, ensure_ascii=False) + "\n" for e in events
    )
