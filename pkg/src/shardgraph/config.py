"""Scenario configuration: a flat key = value text format plus validation.

The same keys are accepted from a config file and from --set overrides on
the command line, so sweep scripts can diff configs line by line.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

ADVERSARY_KINDS = ("none", "equivocator", "churn", "shard_failure")
TRIGGER_MODES = ("committee-fraction", "literal-s-over-2")


class ConfigError(Exception):
    pass


@dataclass
class ScenarioConfig:
    n: int = 8                     # node count
    s: int = 2                     # shard (committee) count
    seed: int = 1
    duration: int = 60             # scheduler ticks
    sync_interval: int = 1         # ticks between gossip rounds
    tx_rate: float = 8.0           # expected transactions injected per tick
    cross_ratio: float = 0.0       # fraction of cross-shard transactions
    batch_limit: int = 16          # txs per coordinator queue flush
    checkpoint_period: int = 4     # global finalized rounds between checkpoints
    inject_until: int = 0          # 0 = auto (leave a drain window)
    trigger_mode: str = "committee-fraction"
    min_committee_size: int = 4
    adversary_kind: str = "none"
    adversary_fraction: float = 0.0
    adversary_interval: int = 5
    adversary_committee: int = -1  # -1 = pick deterministically
    adversary_fail_at: int = -1    # -1 = duration // 3
    adversary_recover_delay: int = 20
    adversary_rejoin: bool = False

    def validate(self) -> None:
        if self.s < 1:
            raise ConfigError("s must be >= 1")
        if self.n < self.s:
            raise ConfigError("n must be >= s")
        if self.duration < 1:
            raise ConfigError("duration must be >= 1")
        if self.sync_interval < 1:
            raise ConfigError("sync_interval must be >= 1")
        if self.tx_rate < 0:
            raise ConfigError("tx_rate must be >= 0")
        if not 0.0 <= self.cross_ratio <= 1.0:
            raise ConfigError("cross_ratio must be in [0, 1]")
        if self.cross_ratio > 0 and self.s < 2:
            raise ConfigError("cross_ratio > 0 requires s >= 2")
        if self.batch_limit < 1:
            raise ConfigError("batch_limit must be >= 1")
        if self.checkpoint_period < 1:
            raise ConfigError("checkpoint_period must be >= 1")
        if self.trigger_mode not in TRIGGER_MODES:
            raise ConfigError(
                f"trigger_mode must be one of {TRIGGER_MODES}"
            )
        if self.adversary_kind not in ADVERSARY_KINDS:
            raise ConfigError(
                f"adversary.kind must be one of {ADVERSARY_KINDS}"
            )
        if not 0.0 <= self.adversary_fraction < 1.0:
            raise ConfigError("adversary.fraction must be in [0, 1)")
        if self.adversary_interval < 1:
            raise ConfigError("adversary.interval must be >= 1")

    def resolved_inject_until(self) -> int:
        if self.inject_until > 0:
            return min(self.inject_until, self.duration)
        return max(1, self.duration - max(8, self.duration // 4))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# Dotted config-file keys map onto flat dataclass attributes.
_KEY_MAP = {
    "adversary.kind": "adversary_kind",
    "adversary.fraction": "adversary_fraction",
    "adversary.interval": "adversary_interval",
    "adversary.committee": "adversary_committee",
    "adversary.fail_at": "adversary_fail_at",
    "adversary.recover_delay": "adversary_recover_delay",
    "adversary.rejoin": "adversary_rejoin",
}
_FIELDS = {f.name: f.type for f in dataclasses.fields(ScenarioConfig)}


def _cast(attr: str, value: str):
    kind = _FIELDS[attr]
    try:
        if kind == "bool":
            low = value.lower()
            if low in ("true", "yes", "1"):
                return True
            if low in ("false", "no", "0"):
                return False
            raise ValueError(value)
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
        return value
    except ValueError:
        raise ConfigError(
            f"bad value {value!r} for key '{attr}' (expected {kind})"
        ) from None


def apply_setting(config: ScenarioConfig, key: str, value: str) -> None:
    attr = _KEY_MAP.get(key, key)
    if attr not in _FIELDS:
        raise ConfigError(f"unknown config key '{key}'")
    setattr(config, attr, _cast(attr, value))


def parse_config(text: str) -> ScenarioConfig:
    config = ScenarioConfig()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(
                f"line {lineno}: expected 'key = value', got {raw.strip()!r}"
            )
        key, _, value = line.partition("=")
        try:
            apply_setting(config, key.strip(), value.strip())
        except ConfigError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from None
    return config


def load_config(path) -> ScenarioConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())
