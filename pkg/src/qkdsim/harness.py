"""Scenario engine: configure parties and adversary, run a protocol, report.

Every scenario is fully determined by its :class:`ScenarioConfig`, seed
included. Batch trial ``i`` runs with seed ``splitmix64(master_seed, i)``.
"""

from __future__ import annotations

import dataclasses
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .auth import (
    EveAgent,
    SymmetricKey,
    format_bits,
    message_from_content,
    parse_bits,
    q_decode,
    q_encode,
    run_authenticated_exchange,
    run_authenticated_mitm,
    setup_parties,
    splitmix64,
)
from .auth.wire import AuthMessage
from .bb84 import Adversary as Bb84Adversary
from .bb84 import Bb84Config, PulseTrain, simulate_bb84
from .three_stage import MitmConfig, ThreeStageSession, pick_commuting_operator, run_honest, run_mitm
from .transcript import ANNOUNCEMENT, AUTH_MESSAGE, QUANTUM_PASS, Channel, ChannelEvent, encode_states

REPORT_SCHEMA_VERSION = 1

PROTOCOLS = ("bb84", "three_stage", "three_stage_auth")
ADVERSARIES = {
    "bb84": ("none", "intercept_resend", "beam_splitting"),
    "three_stage": ("none", "mitm"),
    "three_stage_auth": ("none", "mitm", "replay"),
}
ADVERSARY_DESCRIPTIONS = {
    "none": "honest channel",
    "intercept_resend": "BB84: Eve measures every pulse in a random basis and resends",
    "beam_splitting": "BB84: Eve keeps one photon of each multi-photon pulse, reads it after basis announcement",
    "mitm": "three-stage: Eve runs separate sessions with Alice (u_c) and Bob (u_d, fake payload Y)",
    "replay": "authenticated three-stage: Eve re-injects a captured message into a later session",
}


class ConfigError(ValueError):
    def __init__(self, problems: Sequence[str]):
        super().__init__("; ".join(problems))
        self.problems = list(problems)


@dataclass(frozen=True)
class AdversaryPolicy:
    kind: str = "none"
    params: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class AuthSettings:
    window_millis: int = 30_000
    relay_via_kdc: bool = True
    kdc_available: bool = True
    redundancy: int = 1
    hop_latency_ms: int = 10
    alice_skew_ms: int = 0
    bob_skew_ms: int = 0
    kdc_skew_ms: int = 0


@dataclass(frozen=True)
class ScenarioConfig:
    protocol: str
    adversary: AdversaryPolicy = field(default_factory=AdversaryPolicy)
    seed: int = 0
    message_bits: str | None = None
    message_length: int = 16
    n_pulses: int = 100_000
    mean_photon_number: float = 0.0
    sample_fraction: float = 0.5
    qber_abort_threshold: float = 0.11
    auth: AuthSettings = field(default_factory=AuthSettings)

    def problems(self) -> list[str]:
        out = []
        if self.protocol not in PROTOCOLS:
            out.append(f"protocol must be one of {', '.join(PROTOCOLS)} (got {self.protocol!r})")
        elif self.adversary.kind not in ADVERSARIES[self.protocol]:
            out.append(
                f"adversary {self.adversary.kind!r} does not apply to {self.protocol}; "
                f"choose from {', '.join(ADVERSARIES[self.protocol])}"
            )
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or not 0 <= self.seed < 2**64:
            out.append(f"seed must be a 64-bit unsigned integer (got {self.seed!r})")
        if self.message_bits is not None:
            if not self.message_bits or any(c not in "01" for c in self.message_bits):
                out.append(f"message_bits must be a non-empty bit string (got {self.message_bits!r})")
        elif not isinstance(self.message_length, int) or self.message_length < 1:
            out.append(f"message_length must be >= 1 (got {self.message_length!r})")
        if self.protocol == "bb84":
            try:
                self.bb84_config()
            except (ValueError, TypeError) as exc:
                out.extend(str(exc).removeprefix("invalid Bb84Config: ").split("; "))
        a = self.auth
        if a.window_millis <= 0:
            out.append("auth.window_millis must be > 0")
        if a.redundancy < 1:
            out.append("auth.redundancy must be >= 1")
        if a.hop_latency_ms < 0:
            out.append("auth.hop_latency_ms must be >= 0")
        p = self.adversary.params
        if self.adversary.kind == "replay":
            if p.get("target_step", 4) not in (1, 2, 3, 4):
                out.append("replay target_step must be 1-4")
        if self.adversary.kind == "mitm":
            fake = p.get("fake_bits")
            if fake is not None and (not fake or any(c not in "01" for c in str(fake))):
                out.append(f"mitm fake_bits must be a bit string (got {fake!r})")
            if p.get("strategy", "random") not in ("random", "via_kdc", "direct"):
                out.append("mitm strategy must be random, via_kdc or direct")
        return out

    def validate(self) -> "ScenarioConfig":
        problems = self.problems()
        if problems:
            raise ConfigError(problems)
        return self

    def bb84_config(self) -> Bb84Config:
        return Bb84Config(
            n_pulses=self.n_pulses,
            mean_photon_number=float(self.mean_photon_number),
            sample_fraction=float(self.sample_fraction),
            qber_abort_threshold=float(self.qber_abort_threshold),
            adversary=Bb84Adversary(self.adversary.kind),
            seed=self.seed,
        )

    def with_seed(self, seed: int) -> "ScenarioConfig":
        return dataclasses.replace(self, seed=seed)


@dataclass
class ScenarioReport:
    protocol: str
    adversary: str
    seed: int
    aborted: bool
    abort_step: int | None = None
    abort_reason: str | None = None
    qber: float | None = None
    sift_rate: float | None = None
    eve_known_fraction: float | None = None
    sifted_length: int | None = None
    recovered_bits: str | None = None
    sent_bits: str | None = None
    eve_bits: str | None = None
    transcript: list[ChannelEvent] = field(default_factory=list)

    def __post_init__(self):
        if self.aborted and self.abort_reason is None:
            raise ValueError("aborted report needs an abort reason")
        if self.recovered_bits is not None and self.aborted:
            raise ValueError("an aborted run recovers nothing")

    def summary(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        del d["transcript"]
        return d

    def to_dict(self) -> dict[str, Any]:
        d = self.summary()
        d["schema_version"] = REPORT_SCHEMA_VERSION
        d["transcript"] = [e.to_record() for e in self.transcript]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False, separators=(",", ":")) + "\n"


def _streams(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def _message(config: ScenarioConfig, rng: np.random.Generator) -> list[int]:
    if config.message_bits is not None:
        return parse_bits(config.message_bits)
    return [int(b) for b in rng.integers(0, 2, config.message_length)]


# -- BB84 -------------------------------------------------------------------


def _pulse_content(train: PulseTrain) -> dict:
    return {"symbols": train.symbols(), "photon_counts": train.photon_counts.tolist()}


def _run_bb84(config: ScenarioConfig, channel: Channel) -> ScenarioReport:
    run = simulate_bb84(config.bb84_config())
    rep = run.report
    kind = config.adversary.kind
    if kind == "none":
        channel.send("alice", "bob", QUANTUM_PASS, _pulse_content(run.delivered), pass_index=1)
    else:
        channel.send("alice", "eve", QUANTUM_PASS, _pulse_content(run.preparation.pulses), pass_index=1)
        channel.send("eve", "bob", QUANTUM_PASS, _pulse_content(run.delivered), pass_index=1)
    detected = np.flatnonzero(run.bob.detected).tolist()
    channel.send("bob", "alice", ANNOUNCEMENT,
                 {"detected": detected, "bases": "".join("+x"[b] for b in run.bob.bases[detected])})
    kept = run.sifted.kept_positions.tolist()
    channel.send("alice", "bob", ANNOUNCEMENT, {"kept": kept})
    sample = run.estimate.sample_positions.tolist()
    channel.send("alice", "bob", ANNOUNCEMENT,
                 {"sample": sample, "bits": format_bits(run.sifted.alice_key[sample])})
    channel.send("bob", "alice", ANNOUNCEMENT,
                 {"sample": sample, "bits": format_bits(run.sifted.bob_key[sample])})
    if rep.aborted:
        channel.abort("alice", 3, "qber_exceeded", f"qber {rep.qber:.4f} > {config.qber_abort_threshold}")
    return ScenarioReport(
        protocol="bb84",
        adversary=kind,
        seed=config.seed,
        aborted=rep.aborted,
        abort_step=3 if rep.aborted else None,
        abort_reason="qber_exceeded" if rep.aborted else None,
        qber=rep.qber,
        sift_rate=rep.sift_rate,
        eve_known_fraction=rep.eve_known_fraction,
        sifted_length=rep.sifted_length,
    )


# -- three-stage without authentication -------------------------------------


def _passes_to_channel(channel: Channel, passes, session: int = 0) -> None:
    for p in passes:
        channel.send(p.sender, p.receiver, QUANTUM_PASS, {"states": encode_states(p.in_flight_states)},
                     session=session, pass_index=p.pass_index)


def _run_three_stage(config: ScenarioConfig, channel: Channel) -> ScenarioReport:
    msg_rng, alice_rng, bob_rng, eve_rng = _streams(config.seed, 4)
    bits = _message(config, msg_rng)
    x = q_encode(bits)
    u_a = pick_commuting_operator(len(x), alice_rng)
    u_b = pick_commuting_operator(len(x), bob_rng)
    session = ThreeStageSession(u_a, u_b, x)
    eve_bits = None
    if config.adversary.kind == "mitm":
        fake = config.adversary.params.get("fake_bits")
        y_bits = parse_bits(str(fake)) if fake is not None else [int(b) for b in eve_rng.integers(0, 2, len(bits))]
        mitm = MitmConfig(
            pick_commuting_operator(len(x), eve_rng),
            pick_commuting_operator(len(y_bits), eve_rng),
            tuple(q_encode(y_bits)),
        )
        result = run_mitm(session, mitm)
        _passes_to_channel(channel, result.alice_side)
        _passes_to_channel(channel, result.bob_side)
        eve_bits = format_bits(q_decode(result.eve_recovered, 1, eve_rng))
        recovered = result.bob_received
    else:
        recovered, passes = run_honest(session)
        _passes_to_channel(channel, passes)
    return ScenarioReport(
        protocol="three_stage",
        adversary=config.adversary.kind,
        seed=config.seed,
        aborted=False,
        recovered_bits=format_bits(q_decode(recovered, 1, bob_rng)),
        sent_bits=format_bits(bits),
        eve_bits=eve_bits,
    )


# -- authenticated three-stage ----------------------------------------------


def replay_adversary(transcript_fragment: Sequence[ChannelEvent], target_step: int) -> ChannelEvent:
    """Pick the captured auth message for ``target_step`` and mark it for re-injection."""
    for ev in reversed(transcript_fragment):
        if ev.kind == AUTH_MESSAGE and ev.step == target_step:
            return dataclasses.replace(ev, injected=True)
    raise LookupError(f"no step-{target_step} message in the captured transcript")


def _auth_parties(config: ScenarioConfig, seed: int):
    a = config.auth
    return setup_parties(
        seed,
        window_ms=a.window_millis,
        alice_skew_ms=a.alice_skew_ms,
        bob_skew_ms=a.bob_skew_ms,
        kdc_skew_ms=a.kdc_skew_ms,
        redundancy=a.redundancy,
        hop_latency_ms=a.hop_latency_ms,
        relay_via_kdc=a.relay_via_kdc,
        kdc_available=a.kdc_available,
    )


def _auth_session(bits, rngs) -> ThreeStageSession:
    x = q_encode(bits)
    return ThreeStageSession(pick_commuting_operator(len(x), rngs[0]), pick_commuting_operator(len(x), rngs[1]), x)


def _run_three_stage_auth(config: ScenarioConfig, channel: Channel) -> ScenarioReport:
    msg_rng, party_seed_rng, alice_rng, bob_rng, eve_rng = _streams(config.seed, 5)
    party_seed = int(party_seed_rng.integers(0, 2**63))
    scn = _auth_parties(config, party_seed)
    bits = _message(config, msg_rng)
    kind = config.adversary.kind
    params = config.adversary.params
    base = dict(protocol="three_stage_auth", adversary=kind, seed=config.seed, sent_bits=format_bits(bits))

    if kind == "mitm":
        session = _auth_session(bits, (alice_rng, bob_rng))
        eve = EveAgent(eve_rng, SymmetricKey.generate(eve_rng), pick_commuting_operator(len(session.payload), eve_rng))
        rep = run_authenticated_mitm(scn, session, eve, strategy=params.get("strategy", "random"), channel=channel)
    elif kind == "replay":
        target = int(params.get("target_step", 4))
        same_session = bool(params.get("same_session", False))
        if same_session:
            def duplicate(step: int, msg: AuthMessage):
                return [msg, msg] if step == target else [msg]

            rep = run_authenticated_exchange(scn, _auth_session(bits, (alice_rng, bob_rng)),
                                             channel=channel, tamper=duplicate)
        else:
            # Eve records the first session even when the caller keeps no transcript
            tap = channel if channel.record else Channel()
            first = run_authenticated_exchange(scn, _auth_session(bits, (alice_rng, bob_rng)),
                                               channel=tap, session_index=0)
            if first.aborted:
                return ScenarioReport(**base, aborted=True, abort_step=first.abort_step,
                                      abort_reason=first.abort_reason)
            captured = replay_adversary(tap.events, target)
            default_delay = config.auth.window_millis + 1_000 if target == 2 else 1_000
            scn.world.advance(int(params.get("delay_ms", default_delay)))
            old = message_from_content(target, captured.content)

            def substitute(step: int, msg: AuthMessage):
                return [old] if step == target else [msg]

            rep = run_authenticated_exchange(scn, _auth_session(bits, (alice_rng, bob_rng)),
                                             channel=channel, tamper=substitute, session_index=1)
    else:
        rep = run_authenticated_exchange(scn, _auth_session(bits, (alice_rng, bob_rng)), channel=channel)

    return ScenarioReport(
        **base,
        aborted=rep.aborted,
        abort_step=rep.abort_step,
        abort_reason=rep.abort_reason,
        recovered_bits=rep.recovered_bits,
        eve_bits=rep.eve_bits,
    )


_RUNNERS = {"bb84": _run_bb84, "three_stage": _run_three_stage, "three_stage_auth": _run_three_stage_auth}


def run_scenario(config: ScenarioConfig, *, record_transcript: bool = True) -> ScenarioReport:
    """Run one scenario to completion or abort."""
    config.validate()
    channel = Channel(record=record_transcript)
    report = _RUNNERS[config.protocol](config, channel)
    report.transcript = channel.events
    return report


# -- batches ----------------------------------------------------------------


def derive_seed(master_seed: int, trial: int) -> int:
    return splitmix64(master_seed, trial)


@dataclass(frozen=True)
class TrialRow:
    trial: int
    seed: int
    protocol: str
    adversary: str
    aborted: bool
    abort_step: int | None
    abort_reason: str | None
    qber: float | None
    sift_rate: float | None
    eve_known_fraction: float | None
    recovered_bits: str | None
    eve_bits: str | None


CSV_HEADER = tuple(f.name for f in dataclasses.fields(TrialRow))


@dataclass(frozen=True)
class MetricSummary:
    n: int
    mean: float
    stderr: float


@dataclass
class BatchResult:
    protocol: str
    adversary: str
    master_seed: int
    trials: int
    detections: int
    rows: list[TrialRow]
    metrics: dict[str, MetricSummary]

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "protocol": self.protocol,
            "adversary": self.adversary,
            "master_seed": self.master_seed,
            "trials": self.trials,
            "detections": self.detections,
            "metrics": {k: dataclasses.asdict(v) for k, v in sorted(self.metrics.items())},
            "rows": [dataclasses.asdict(r) for r in self.rows],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"


def _trial(args: tuple[ScenarioConfig, int]) -> TrialRow:
    config, trial = args
    seed = derive_seed(config.seed, trial)
    r = run_scenario(config.with_seed(seed), record_transcript=False)
    return TrialRow(trial, seed, r.protocol, r.adversary, r.aborted, r.abort_step, r.abort_reason,
                    r.qber, r.sift_rate, r.eve_known_fraction, r.recovered_bits, r.eve_bits)


def _summarize(values: list[float]) -> MetricSummary:
    n = len(values)
    mean = math.fsum(values) / n
    if n < 2:
        return MetricSummary(n, mean, float("nan"))
    var = math.fsum((v - mean) ** 2 for v in values) / (n - 1)
    return MetricSummary(n, mean, math.sqrt(var / n))


def run_batch(config: ScenarioConfig, trials: int, *, workers: int = 1) -> BatchResult:
    """Run ``trials`` independent scenarios derived from ``config.seed``."""
    if trials < 1:
        raise ConfigError([f"trials must be >= 1 (got {trials})"])
    config.validate()
    jobs = [(config, i) for i in range(trials)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_trial, jobs))
    else:
        rows = [_trial(j) for j in jobs]
    rows.sort(key=lambda r: r.trial)
    metrics = {}
    for name in ("qber", "sift_rate", "eve_known_fraction"):
        vals = sorted(getattr(r, name) for r in rows if getattr(r, name) is not None)
        if vals:
            metrics[name] = _summarize(vals)
    return BatchResult(
        config.protocol, config.adversary.kind, config.seed, trials,
        sum(r.aborted for r in rows), rows, metrics,
    )
