"""Sequenced market-data snapshots: binary codec, UDP publisher, receiver.

Datagram layout (big-endian)::

    magic "DBMD" | version u8 | flags u8 | seq u64 | send_ts u64 |
    symbol 8s | n_bids u8 | n_asks u8 | (price u32, qty u32) * (n_bids + n_asks) |
    [last_price u32, last_time u64] | cum_volume u64

flags: bit0 bid present, bit1 ask present, bit2 last trade present.
"""

from __future__ import annotations

import logging
import socket
import struct
import time
from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, List, Optional, Sequence, Tuple

from .book import DepthSnapshot

log = logging.getLogger(__name__)

MAGIC = b"DBMD"
VERSION = 1
MAX_DEPTH = 5
MAX_DATAGRAM = 1200

FLAG_BID = 0x01
FLAG_ASK = 0x02
FLAG_LAST = 0x04

_HEAD = struct.Struct(">4sBBQQ8sBB")
_LEVEL = struct.Struct(">II")
_LAST = struct.Struct(">IQ")
_VOLUME = struct.Struct(">Q")

Level = Tuple[int, int]


class SnapshotError(ValueError):
    pass


@dataclass(frozen=True)
class MarketDataSnapshot:
    seq: int
    send_ts: int
    symbol: str
    bids: Tuple[Level, ...] = ()
    asks: Tuple[Level, ...] = ()
    last_trade: Optional[Tuple[int, int]] = None
    cum_volume: int = 0

    @property
    def best_bid(self) -> Optional[Level]:
        return self.bids[0] if self.bids else None

    @property
    def best_ask(self) -> Optional[Level]:
        return self.asks[0] if self.asks else None

    @classmethod
    def from_depth(cls, seq: int, send_ts: int, symbol: str, depth: DepthSnapshot) -> "MarketDataSnapshot":
        return cls(seq, send_ts, symbol, depth.bids[:MAX_DEPTH], depth.asks[:MAX_DEPTH],
                   depth.last_trade, depth.cum_volume)


def encode_snapshot(s: MarketDataSnapshot) -> bytes:
    if len(s.bids) > MAX_DEPTH or len(s.asks) > MAX_DEPTH:
        raise SnapshotError(f"depth exceeds {MAX_DEPTH} levels")
    symbol = s.symbol.encode("ascii")
    if len(symbol) > 8:
        raise SnapshotError(f"symbol {s.symbol!r} longer than 8 bytes")
    flags = (FLAG_BID if s.bids else 0) | (FLAG_ASK if s.asks else 0) | (FLAG_LAST if s.last_trade else 0)
    parts = [_HEAD.pack(MAGIC, VERSION, flags, s.seq, s.send_ts, symbol.ljust(8, b"\x00"),
                        len(s.bids), len(s.asks))]
    parts.extend(_LEVEL.pack(p, q) for p, q in s.bids)
    parts.extend(_LEVEL.pack(p, q) for p, q in s.asks)
    if s.last_trade is not None:
        parts.append(_LAST.pack(*s.last_trade))
    parts.append(_VOLUME.pack(s.cum_volume))
    return b"".join(parts)


def decode_snapshot(data: bytes) -> MarketDataSnapshot:
    if len(data) < _HEAD.size:
        raise SnapshotError("truncated header")
    magic, version, flags, seq, send_ts, symbol, n_bids, n_asks = _HEAD.unpack_from(data)
    if magic != MAGIC:
        raise SnapshotError(f"bad magic {magic!r}")
    if version != VERSION:
        raise SnapshotError(f"unsupported version {version}")
    if n_bids > MAX_DEPTH or n_asks > MAX_DEPTH:
        raise SnapshotError("depth count out of range")
    if bool(flags & FLAG_BID) != (n_bids > 0) or bool(flags & FLAG_ASK) != (n_asks > 0) or flags & ~0x07:
        raise SnapshotError(f"flags {flags:#x} inconsistent with depth counts")
    has_last = bool(flags & FLAG_LAST)
    need = _HEAD.size + _LEVEL.size * (n_bids + n_asks) + (_LAST.size if has_last else 0) + _VOLUME.size
    if len(data) != need:
        raise SnapshotError(f"datagram length {len(data)} != expected {need}")
    off = _HEAD.size
    levels = []
    for _ in range(n_bids + n_asks):
        levels.append(_LEVEL.unpack_from(data, off))
        off += _LEVEL.size
    last = None
    if has_last:
        last = _LAST.unpack_from(data, off)
        off += _LAST.size
    (cum_volume,) = _VOLUME.unpack_from(data, off)
    return MarketDataSnapshot(
        seq=seq,
        send_ts=send_ts,
        symbol=symbol.rstrip(b"\x00").decode("ascii", "replace"),
        bids=tuple(levels[:n_bids]),
        asks=tuple(levels[n_bids:]),
        last_trade=last,
        cum_volume=cum_volume,
    )


class SeqStatus(Enum):
    CONTINUOUS = "continuous"
    GAP = "gap"
    DUPLICATE = "duplicate"


@dataclass(frozen=True)
class SeqCheck:
    status: SeqStatus
    missed: int = 0


def check_gap(last_seq: int, incoming_seq: int) -> SeqCheck:
    if incoming_seq == last_seq + 1:
        return SeqCheck(SeqStatus.CONTINUOUS)
    if incoming_seq > last_seq + 1:
        return SeqCheck(SeqStatus.GAP, incoming_seq - last_seq - 1)
    return SeqCheck(SeqStatus.DUPLICATE)


@dataclass(frozen=True)
class FeedClient:
    address: Tuple[str, int]
    ordinal: int
    injected_delay_ms: float = 0.0
    name: str = ""


@dataclass(frozen=True)
class SendRecord:
    client: FeedClient
    send_initiated_ns: int


def epoch_us() -> int:
    return time.time_ns() // 1000


Sender = Callable[[FeedClient, bytes], None]
Deferrer = Callable[[float, Callable[[], None]], None]


class Publisher:
    """Sends each snapshot to every feed client in ordinal order.

    ``send`` performs one datagram transmission. ``defer(delay_s, fn)`` runs
    ``fn`` later and is only needed when a client has an injected delay.
    ``clock_us`` stamps ``send_ts``; ``clock_ns`` stamps send initiation.
    """

    def __init__(self, clients: Sequence[FeedClient], send: Sender, *,
                 defer: Optional[Deferrer] = None,
                 clock_us: Callable[[], int] = epoch_us,
                 clock_ns: Callable[[], int] = time.time_ns):
        ordinals = sorted(c.ordinal for c in clients)
        if ordinals != list(range(1, len(clients) + 1)):
            raise ValueError(f"feed client ordinals must be a permutation of 1..{len(clients)}")
        if defer is None and any(c.injected_delay_ms for c in clients):
            raise ValueError("injected delays need a defer function")
        self.clients = sorted(clients, key=lambda c: c.ordinal)
        self._send = send
        self._defer = defer
        self._clock_us = clock_us
        self._clock_ns = clock_ns
        self.seq = 0
        self.history: List[List[SendRecord]] = []
        self.keep_history = True

    def publish(self, snapshot: MarketDataSnapshot) -> List[SendRecord]:
        """Stamp, encode and send ``snapshot``; its ``seq`` must be the next one."""
        if snapshot.seq != self.seq + 1:
            raise ValueError(f"snapshot seq {snapshot.seq} is not {self.seq + 1}")
        if not self.clients:
            raise ValueError("no feed clients")
        self.seq = snapshot.seq
        stamped = replace(snapshot, send_ts=self._clock_us())
        datagram = encode_snapshot(stamped)
        records = []
        for client in self.clients:
            records.append(SendRecord(client, self._clock_ns()))
            if client.injected_delay_ms:
                self._defer(client.injected_delay_ms / 1000.0, lambda c=client: self._safe_send(c, datagram))
            else:
                self._safe_send(client, datagram)
        if self.keep_history:
            self.history.append(records)
        return records

    def publish_depth(self, symbol: str, depth: DepthSnapshot) -> List[SendRecord]:
        return self.publish(MarketDataSnapshot.from_depth(self.seq + 1, 0, symbol, depth))

    def _safe_send(self, client: FeedClient, datagram: bytes) -> None:
        try:
            self._send(client, datagram)
        except OSError as exc:
            log.warning("feed send to %s failed: %s", client.address, exc)


class FeedReceiver:
    """Receiver-side state: keeps the newest snapshot, discards stale ones."""

    def __init__(self) -> None:
        self.last_seq = 0
        self.latest: Optional[MarketDataSnapshot] = None
        self.gaps = 0
        self.missed = 0
        self.stale = 0
        self.rejected = 0

    def accept(self, datagram: bytes) -> Tuple[Optional[MarketDataSnapshot], Optional[SeqCheck]]:
        try:
            snap = decode_snapshot(datagram)
        except SnapshotError as exc:
            self.rejected += 1
            log.debug("dropping bad datagram: %s", exc)
            return None, None
        check = check_gap(self.last_seq, snap.seq)
        if check.status is SeqStatus.DUPLICATE:
            self.stale += 1
            return None, check
        if check.status is SeqStatus.GAP:
            self.gaps += 1
            self.missed += check.missed
        self.last_seq = snap.seq
        self.latest = snap
        return snap, check


def parse_address(text: str) -> Tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"expected host:port, got {text!r}")
    return host, int(port)


class UdpUnicastSender:
    def __init__(self) -> None:
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)

    def __call__(self, client: FeedClient, datagram: bytes) -> None:
        self.sock.sendto(datagram, client.address)

    def close(self) -> None:
        self.sock.close()


class UdpMulticastSender:
    """One datagram per publish to a multicast group; ``client`` is the group."""

    def __init__(self, ttl: int = 1, interface: str = "127.0.0.1") -> None:
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM, socket.IPPROTO_UDP)
        self.sock.setsockopt(socket.IPPROTO_IP, socket.IP_MULTICAST_TTL, ttl)
        self.sock.setsockopt(socket.IPPROTO_IP, socket.IP_MULTICAST_LOOP, 1)
        self.sock.setsockopt(socket.IPPROTO_IP, socket.IP_MULTICAST_IF, socket.inet_aton(interface))

    def __call__(self, client: FeedClient, datagram: bytes) -> None:
        self.sock.sendto(datagram, client.address)

    def close(self) -> None:
        self.sock.close()


def open_feed_socket(listen: Tuple[str, int], multicast_group: Optional[str] = None,
                     interface: str = "127.0.0.1") -> socket.socket:
    """Bound, non-blocking UDP socket for a feed receiver."""
    sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM, socket.IPPROTO_UDP)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    if multicast_group:
        sock.bind(("", listen[1]))
        group = multicast_group.rpartition(":")[0] or multicast_group
        mreq = socket.inet_aton(group) + socket.inet_aton(interface)
        sock.setsockopt(socket.IPPROTO_IP, socket.IP_ADD_MEMBERSHIP, mreq)
    else:
        sock.bind(listen)
    sock.setblocking(False)
    return sock
