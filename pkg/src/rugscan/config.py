"""Analyzer configuration and its JSON file format.

Example file::

    {
      "fee_divisors": [100, 1000, 10000],
      "owner_guard": "storage-or-constant",
      "max_states": 32,
      "rpc": {"retries": 3, "backoff": 0.5, "timeout": 10.0, "min_interval": 0.0}
    }
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from typing import Any

OWNER_GUARD_MODES = ("storage-only", "storage-or-constant")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RpcPolicy:
    retries: int = 3
    backoff: float = 0.5  # seconds before the first retry; doubles each attempt
    timeout: float = 10.0
    min_interval: float = 0.0  # minimum seconds between requests to one endpoint


@dataclass(frozen=True)
class Config:
    fee_divisors: tuple[int, ...] = (100, 1000, 10000)
    owner_guard: str = "storage-or-constant"
    max_states: int = 32
    max_stack: int = 32
    max_expr_depth: int = 16
    rpc: RpcPolicy = field(default_factory=RpcPolicy)

    def __post_init__(self) -> None:
        if self.owner_guard not in OWNER_GUARD_MODES:
            raise ConfigError(f"owner_guard must be one of {OWNER_GUARD_MODES}")
        if self.max_states < 1:
            raise ConfigError("max_states must be positive")
        if any(d <= 1 for d in self.fee_divisors):
            raise ConfigError("fee divisors must be greater than 1")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Config":
        known = {f.name for f in fields(cls)}
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        kwargs = dict(data)
        if "fee_divisors" in kwargs:
            kwargs["fee_divisors"] = tuple(int(d) for d in kwargs["fee_divisors"])
        if "rpc" in kwargs:
            rpc = kwargs["rpc"]
            rpc_known = {f.name for f in fields(RpcPolicy)}
            if not isinstance(rpc, dict) or set(rpc) - rpc_known:
                raise ConfigError(f"rpc must be an object with keys from {sorted(rpc_known)}")
            kwargs["rpc"] = RpcPolicy(**rpc)
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path: str) -> "Config":
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must contain a JSON object")
        return cls.from_dict(data)

    def with_overrides(self, **changes: Any) -> "Config":
        return replace(self, **changes)
