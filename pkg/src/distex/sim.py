"""Deterministic virtual-time runtime for the exchange and its clients.

The same :class:`~distex.exchange.ExchangeCore`, :class:`~distex.marketdata.Publisher`
and :class:`~distex.client.ClientCore` used by the live processes are wired
together through a discrete-event loop. TCP links are FIFO per connection;
UDP datagrams may reorder. Every random draw comes from seeded generators,
so a run is a pure function of its inputs.
"""

from __future__ import annotations

import heapq
import itertools
import random
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

from .client import ClientCore, SessionResult
from .exchange import ExchangeCore, PublishThrottle
from .marketdata import FeedClient, Publisher

SIM_EPOCH_US = 1_546_300_800_000_000  # 2019-01-01T00:00:00Z


class EventLoop:
    def __init__(self) -> None:
        self.now = 0.0
        self._heap: list = []
        self._seq = itertools.count()

    def call_at(self, t: float, fn: Callable[[], None]) -> None:
        heapq.heappush(self._heap, (max(t, self.now), next(self._seq), fn))

    def call_later(self, delay: float, fn: Callable[[], None]) -> None:
        self.call_at(self.now + delay, fn)

    def run_until(self, t_end: float) -> None:
        while self._heap and self._heap[0][0] <= t_end:
            t, _, fn = heapq.heappop(self._heap)
            self.now = t
            fn()
        self.now = max(self.now, t_end)


class VirtualClock:
    def __init__(self, loop: EventLoop, epoch0_us: int = SIM_EPOCH_US):
        self.loop = loop
        self.epoch0_us = epoch0_us

    def now(self) -> float:
        return self.loop.now

    def epoch_us(self) -> int:
        return self.epoch0_us + int(round(self.loop.now * 1e6))


@dataclass(frozen=True)
class NetModel:
    """One-way latencies in microseconds; jitter is exponential with the given mean."""

    tcp_latency_us: float = 100.0
    udp_latency_us: float = 80.0
    jitter_us: float = 40.0
    send_cost_us: float = 20.0


class _Link:
    """FIFO one-way link with latency plus jitter."""

    def __init__(self, loop: EventLoop, latency_us: float, jitter_us: float, rng: random.Random):
        self.loop = loop
        self.latency = latency_us / 1e6
        self.jitter = jitter_us / 1e6
        self.rng = rng
        self.last_arrival = 0.0

    def send(self, deliver: Callable[[], None], extra: float = 0.0, fifo: bool = True) -> None:
        t = self.loop.now + extra + self.latency
        if self.jitter:
            t += self.rng.expovariate(1.0 / self.jitter)
        if fifo:
            t = max(t, self.last_arrival)
            self.last_arrival = t
        self.loop.call_at(t, deliver)


class SimMarket:
    """Exchange plus clients on one virtual clock."""

    def __init__(self, make_clients: Callable[[VirtualClock], Sequence[ClientCore]],
                 injected_delay_ms: Sequence[float], *, seed: int = 0, net: NetModel = NetModel(),
                 min_publish_interval_ms: float = 100.0, symbol: str = "XYZ", max_price: int = 1000):
        self.loop = EventLoop()
        self.clock = VirtualClock(self.loop)
        self.net = net
        rng = random.Random(f"{seed}/net")
        self.core = ExchangeCore(symbol, max_price, clock_us=self.clock.epoch_us)
        self.clients: List[ClientCore] = list(make_clients(self.clock))
        if len(injected_delay_ms) < len(self.clients):
            injected_delay_ms = list(injected_delay_ms) + [0.0] * (len(self.clients) - len(injected_delay_ms))
        self._up = [_Link(self.loop, net.tcp_latency_us, net.jitter_us, rng) for _ in self.clients]
        self._down = [_Link(self.loop, net.tcp_latency_us, net.jitter_us, rng) for _ in self.clients]
        self._feed = [_Link(self.loop, net.udp_latency_us, net.jitter_us, rng) for _ in self.clients]
        self._timer_gen: Dict[int, int] = {i: 0 for i in range(len(self.clients))}
        self._timer_at: Dict[int, Optional[float]] = {i: None for i in range(len(self.clients))}

        feed_clients = [FeedClient(("sim", i), i + 1, float(injected_delay_ms[i]), c.client_id)
                        for i, c in enumerate(self.clients)]
        self._send_offset = 0.0
        self._offset_at = -1.0
        self._last_ns = 0
        self.publisher = Publisher(feed_clients, self._udp_send, defer=self.loop.call_later,
                                   clock_us=self.clock.epoch_us, clock_ns=self._send_clock_ns)
        self.throttle = PublishThrottle(min_publish_interval_ms / 1000.0, lambda: self.loop.now,
                                        self.loop.call_at, self._publish)

    # -- exchange side ---------------------------------------------------

    def _publish(self) -> None:
        self.publisher.publish(self.core.market_snapshot(self.publisher.seq + 1))

    def _send_clock_ns(self) -> int:
        if self._offset_at != self.loop.now:
            self._offset_at, self._send_offset = self.loop.now, 0.0
        ns = (self.clock.epoch0_us * 1000) + int(round((self.loop.now + self._send_offset) * 1e9))
        # a deferred send costs no send time but reading the clock still takes a tick
        ns = max(ns, self._last_ns + 1)
        self._last_ns = ns
        return ns

    def _udp_send(self, client: FeedClient, datagram: bytes) -> None:
        if self._offset_at != self.loop.now:
            self._offset_at, self._send_offset = self.loop.now, 0.0
        self._send_offset += self.net.send_cost_us / 1e6
        i = client.address[1]
        self._feed[i].send(lambda: self._client_datagram(i, datagram), extra=self._send_offset, fifo=False)

    def _exchange_wire(self, i: int, wire: bytes) -> None:
        for out in self.core.on_wire(i, wire):
            j = out.conn_id
            self._down[j].send(lambda j=j, w=out.wire: self._client_wire(j, w))
        if self.core.take_dirty():
            self.throttle.changed()

    # -- client side -----------------------------------------------------

    def _transmit(self, i: int, wires: List[bytes]) -> None:
        for w in wires:
            self._up[i].send(lambda w=w: self._exchange_wire(i, w))
        self._rearm(i)

    def _client_wire(self, i: int, wire: bytes) -> None:
        self._transmit(i, self.clients[i].on_fix(wire))

    def _client_datagram(self, i: int, datagram: bytes) -> None:
        self._transmit(i, self.clients[i].on_datagram(datagram, self.clock.epoch_us()))

    def _client_timer(self, i: int, gen: int) -> None:
        if gen != self._timer_gen[i]:
            return
        self._timer_at[i] = None
        self._transmit(i, self.clients[i].on_timer())

    def _rearm(self, i: int) -> None:
        t = self.clients[i].next_timer()
        if t is None or t == self._timer_at[i]:
            return
        self._timer_gen[i] += 1
        self._timer_at[i] = t
        gen = self._timer_gen[i]
        self.loop.call_at(t, lambda: self._client_timer(i, gen))

    # -- driver ----------------------------------------------------------

    def run(self, duration_s: float, drain_s: float = 1.0) -> List[SessionResult]:
        for i, c in enumerate(self.clients):
            self._transmit(i, c.start())
        self.loop.run_until(duration_s)
        for i, c in enumerate(self.clients):
            self._transmit(i, c.stop())
        self.loop.run_until(duration_s + drain_s)
        return [c.result() for c in self.clients]
