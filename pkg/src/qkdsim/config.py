"""Scenario files: TOML key/value trees plus ``key=value`` overrides.

Schema (all keys optional except ``protocol``)::

    protocol = "bb84" | "three_stage" | "three_stage_auth"
    seed = 42
    message_bits = "10110"        # or message_length = 16
    [adversary]   kind = "...", plus kind-specific keys
                  (mitm: fake_bits, strategy; replay: target_step, delay_ms, same_session)
    [bb84]        n_pulses, mean_photon_number, sample_fraction, qber_abort_threshold
    [auth]        window_millis, relay_via_kdc, kdc_available, redundancy,
                  hop_latency_ms, alice_skew_ms, bob_skew_ms, kdc_skew_ms
    [batch]       trials, workers

Overrides use dotted keys (``bb84.n_pulses=1000``) and are applied after the
file is parsed; values are read as TOML literals, falling back to strings.
"""

from __future__ import annotations

import copy
import dataclasses
import os
import sys
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Sequence

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .harness import AdversaryPolicy, AuthSettings, ConfigError, ScenarioConfig

CONFIG_DIR_ENV = "QKDSIM_CONFIG_DIR"

_TOP_KEYS = {"protocol", "seed", "message_bits", "message_length", "adversary", "bb84", "auth", "batch"}
_BB84_KEYS = {"n_pulses", "mean_photon_number", "sample_fraction", "qber_abort_threshold"}
_AUTH_KEYS = {f.name for f in dataclasses.fields(AuthSettings)}
_BATCH_KEYS = {"trials", "workers"}
_ADVERSARY_KEYS = {"kind", "fake_bits", "strategy", "target_step", "delay_ms", "same_session"}


def preset_names() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("qkdsim.presets").iterdir() if p.name.endswith(".toml"))


def resolve_config_path(name: str) -> Path:
    """Find a scenario file: as given, then under $QKDSIM_CONFIG_DIR, then bundled presets."""
    candidates = [Path(name)]
    env_dir = os.environ.get(CONFIG_DIR_ENV)
    if env_dir:
        candidates.append(Path(env_dir) / name)
    stem = name[:-5] if name.endswith(".toml") else name
    if stem in preset_names():
        candidates.append(Path(str(resources.files("qkdsim.presets") / f"{stem}.toml")))
    for c in candidates:
        if c.is_file():
            return c
    raise FileNotFoundError(name)


def load_tree(path: Path) -> dict[str, Any]:
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _parse_value(text: str) -> Any:
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(tree: Mapping[str, Any], overrides: Sequence[str]) -> dict[str, Any]:
    out = copy.deepcopy(dict(tree))
    problems = []
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep or not key.strip():
            problems.append(f"override {item!r} is not key=value")
            continue
        *parents, leaf = key.strip().split(".")
        node = out
        for p in parents:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                problems.append(f"override {key!r}: {p!r} is not a table")
                break
        else:
            node[leaf] = _parse_value(raw.strip())
    if problems:
        raise ConfigError(problems)
    return out


def _unknown(section: str, table: Any, allowed: set[str]) -> list[str]:
    if not isinstance(table, dict):
        return [f"[{section}] must be a table"]
    return [f"unknown key {section}.{k}" if section else f"unknown key {k}" for k in sorted(set(table) - allowed)]


def scenario_from_tree(tree: Mapping[str, Any]) -> tuple[ScenarioConfig, dict[str, Any]]:
    """Build a validated :class:`ScenarioConfig`; also returns the ``[batch]`` table.

    Raises :class:`ConfigError` listing every problem found.
    """
    problems = _unknown("", tree, _TOP_KEYS)
    tables = {}
    for name, allowed in (("adversary", _ADVERSARY_KEYS), ("bb84", _BB84_KEYS),
                          ("auth", _AUTH_KEYS), ("batch", _BATCH_KEYS)):
        table = tree.get(name, {})
        problems += _unknown(name, table, allowed)
        tables[name] = {k: v for k, v in table.items() if k in allowed} if isinstance(table, dict) else {}
    if "protocol" not in tree:
        problems.append("missing key protocol")
    adv, batch = tables["adversary"], tables["batch"]
    kind = adv.pop("kind", "none")
    cfg = ScenarioConfig(
        protocol=tree.get("protocol", ""),
        adversary=AdversaryPolicy(kind, adv),
        seed=tree.get("seed", 0),
        message_bits=None if tree.get("message_bits") is None else str(tree["message_bits"]),
        message_length=tree.get("message_length", 16),
        auth=AuthSettings(**tables["auth"]),
        **tables["bb84"],
    )
    if "protocol" in tree:
        problems += cfg.problems()
    trials = batch.get("trials", 1)
    if not isinstance(trials, int) or trials < 1:
        problems.append(f"batch.trials must be >= 1 (got {trials!r})")
    workers = batch.get("workers", 1)
    if not isinstance(workers, int) or workers < 1:
        problems.append(f"batch.workers must be >= 1 (got {workers!r})")
    if problems:
        raise ConfigError(problems)
    return cfg, batch
