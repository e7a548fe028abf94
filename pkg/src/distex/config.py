"""TOML configuration for the exchange, trading clients and experiments.

Exchange keys::

    listen_address = "127.0.0.1:9001"        # or listen_addresses = [...]
    md_clients = ["127.0.0.1:9101", "127.0.0.1:9102"]
    injected_delay_ms = [0, 44]              # per md_client, by position
    symbol = "XYZ"
    tick_size = 0.01
    max_price = 1000
    min_publish_interval_ms = 100
    feed_mode = "unicast"                    # or "multicast"
    multicast_group = "239.192.0.1:9100"

Client keys::

    client_id = "CLNT1"
    exchange_address = "127.0.0.1:9001"
    feed_listen = "127.0.0.1:9101"
    seed = 1
    duration_s = 180
    interval_s = 30
    [[schedule]]   start_t, end_t, low, high, stepmode
    [[roster]]     strategy, side ("buyer"/"seller"), count

An experiment file adds ``repeats``, ``clients``, ``injected_delay_ms``
(one per client), ``runtime`` ("sim" or "live") and ``output_dir``.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields
from typing import Any, Dict, List, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .book import Side
from .scheduler import RosterEntry, Schedule, ScheduleError, ScheduleSegment, paper_roster, paper_schedule


class ConfigError(ValueError):
    pass


def read_toml(path: str) -> Dict[str, Any]:
    try:
        with open(path, "rb") as f:
            return tomllib.load(f)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


@dataclass
class ExchangeConfig:
    listen_addresses: List[str] = field(default_factory=lambda: ["127.0.0.1:9001"])
    md_clients: List[str] = field(default_factory=list)
    injected_delay_ms: List[float] = field(default_factory=list)
    symbol: str = "XYZ"
    tick_size: float = 0.01
    max_price: int = 1000
    min_publish_interval_ms: float = 100.0
    feed_mode: str = "unicast"
    multicast_group: str = "239.192.0.1:9100"
    duration_s: Optional[float] = None
    output_dir: Optional[str] = None

    def validate(self) -> "ExchangeConfig":
        if self.feed_mode not in ("unicast", "multicast"):
            raise ConfigError(f"feed_mode must be unicast or multicast, not {self.feed_mode!r}")
        if not self.listen_addresses:
            raise ConfigError("at least one listen address is required")
        for addr in list(self.listen_addresses) + list(self.md_clients):
            _check_address(addr)
        if len(self.injected_delay_ms) > len(self.md_clients):
            raise ConfigError("more injected delays than md_clients")
        if any(d < 0 for d in self.injected_delay_ms):
            raise ConfigError("injected delays must be >= 0")
        if self.max_price < 1:
            raise ConfigError("max_price must be >= 1")
        if self.min_publish_interval_ms < 0:
            raise ConfigError("min_publish_interval_ms must be >= 0")
        if len(self.symbol.encode()) > 8:
            raise ConfigError("symbol must fit in 8 bytes")
        return self


def _check_address(addr: str) -> None:
    host, _, port = str(addr).rpartition(":")
    if not host or not port.isdigit():
        raise ConfigError(f"expected host:port, got {addr!r}")


def _fill(cls, data: Dict[str, Any], aliases: Optional[Dict[str, str]] = None):
    data = dict(data)
    for old, new in (aliases or {}).items():
        if old in data:
            data[new] = data.pop(old)
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_exchange_config(path: Optional[str] = None, **overrides) -> ExchangeConfig:
    data = read_toml(path) if path else {}
    if "listen_address" in data:
        data["listen_addresses"] = [data.pop("listen_address")]
    data.update(overrides)
    return _fill(ExchangeConfig, data).validate()


def parse_side(text: str) -> Side:
    t = str(text).lower()
    if t in ("buyer", "bid", "buy", "demand"):
        return Side.BID
    if t in ("seller", "ask", "sell", "supply"):
        return Side.ASK
    raise ConfigError(f"unknown side {text!r}")


def parse_schedule(rows: Optional[List[Dict[str, Any]]]) -> Schedule:
    if not rows:
        return paper_schedule()
    try:
        return Schedule(ScheduleSegment(float(r["start_t"]), float(r["end_t"]), int(r["low"]), int(r["high"]),
                                        r.get("stepmode", "fixed")) for r in rows)
    except KeyError as exc:
        raise ConfigError(f"schedule row missing {exc}") from exc
    except ScheduleError as exc:
        raise ConfigError(str(exc)) from exc


def parse_roster(rows: Optional[List[Dict[str, Any]]]) -> List[RosterEntry]:
    if not rows:
        return paper_roster()
    try:
        return [RosterEntry(str(r["strategy"]).upper(), parse_side(r["side"]), int(r["count"])) for r in rows]
    except KeyError as exc:
        raise ConfigError(f"roster row missing {exc}") from exc


@dataclass
class ClientConfig:
    client_id: str = "CLNT1"
    exchange_address: str = "127.0.0.1:9001"
    exchange_comp_id: str = "EXCH"
    feed_listen: str = "127.0.0.1:9101"
    multicast_group: Optional[str] = None
    seed: int = 1
    duration_s: float = 180.0
    interval_s: float = 30.0
    start_at: Optional[float] = None
    max_price: int = 1000
    lurk_fraction: float = 0.2
    heartbeat_s: int = 30
    feed_timeout_s: float = 10.0
    output_dir: Optional[str] = None
    schedule: Schedule = field(default_factory=paper_schedule)
    roster: List[RosterEntry] = field(default_factory=paper_roster)


def load_client_config(path: Optional[str] = None, **overrides) -> ClientConfig:
    data = read_toml(path) if path else {}
    data.update(overrides)
    if not isinstance(data.get("schedule"), Schedule):
        data["schedule"] = parse_schedule(data.get("schedule"))
    if not isinstance(data.get("roster"), list) or (data["roster"] and isinstance(data["roster"][0], dict)):
        data["roster"] = parse_roster(data.get("roster"))
    cfg = _fill(ClientConfig, data)
    _check_address(cfg.exchange_address)
    _check_address(cfg.feed_listen)
    if cfg.interval_s <= 0:
        raise ConfigError("interval_s must be positive")
    if cfg.duration_s < 0:
        raise ConfigError("duration_s must be >= 0")
    return cfg
