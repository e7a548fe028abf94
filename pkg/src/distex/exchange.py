"""Exchange process: FIX client ports, single-consumer matching loop, feed trigger.

:class:`ExchangeCore` holds all exchange state and performs no I/O. Every
inbound wire message passes through :meth:`ExchangeCore.on_wire` in
admission order; the asyncio :class:`ExchangeServer` (and the virtual-time
runtime in :mod:`distex.sim`) provide the transport around it.
"""

from __future__ import annotations

import argparse
import asyncio
import csv
import itertools
import logging
import os
import signal
import sys
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Set, Tuple, Union

from . import fix
from .book import Book, Order, OrderNotFound, OrderRejected, OwnershipError, Side, Trade
from .config import ConfigError, ExchangeConfig, load_exchange_config
from .fix import ExecType, FixMessage, MsgType, OrdStatus, SessionState, Tag
from .marketdata import (FeedClient, MarketDataSnapshot, Publisher, UdpMulticastSender, UdpUnicastSender,
                         epoch_us, parse_address)

log = logging.getLogger(__name__)

FIX_SIDE = {"1": Side.BID, "2": Side.ASK}
SIDE_FIX = {Side.BID: "1", Side.ASK: "2"}


class ExchangeStartupError(RuntimeError):
    pass


@dataclass(frozen=True)
class NewOrder:
    admission_seq: int
    session: str
    cl_ord_id: str
    side: Side
    price: int
    qty: int
    trader_id: str


@dataclass(frozen=True)
class Cancel:
    admission_seq: int
    session: str
    cl_ord_id: str
    orig_cl_ord_id: Optional[str]
    order_id: Optional[int] = None


@dataclass(frozen=True)
class SessionClosed:
    admission_seq: int
    session: str


EngineEvent = Union[NewOrder, Cancel, SessionClosed]


@dataclass
class Outbound:
    conn_id: int
    wire: bytes
    close: bool = False


@dataclass
class ClientSession:
    comp_id: str
    conn_id: Optional[int]
    state: SessionState
    live_orders: Set[int] = field(default_factory=set)

    @property
    def active(self) -> bool:
        return self.conn_id is not None


@dataclass
class _OrderInfo:
    session: str
    cl_ord_id: str
    side: Side
    price: int
    qty: int
    cum_qty: int = 0
    notional: int = 0
    status: OrdStatus = OrdStatus.NEW


def trader_of(cl_ord_id: str) -> str:
    head, sep, _ = cl_ord_id.rpartition("-")
    return head if sep else cl_ord_id


class ExchangeCore:
    """Order book plus FIX session state for every client port."""

    def __init__(self, symbol: str = "XYZ", max_price: int = 1000, comp_id: str = "EXCH",
                 clock_us: Callable[[], int] = epoch_us, depth: int = 5):
        self.symbol = symbol
        self.comp_id = comp_id
        self.book = Book(symbol, max_price=max_price)
        self.clock_us = clock_us
        self.depth = depth
        self.sessions: Dict[str, ClientSession] = {}
        self.conns: Dict[int, str] = {}
        self.orders: Dict[int, _OrderInfo] = {}
        self.clord_index: Dict[Tuple[str, str], int] = {}
        self.event_log: List[EngineEvent] = []
        self.consumed: List[int] = []
        self.dirty = False
        self.crossed_observations = 0
        self._next_order_id = itertools.count(1)
        self._next_exec_id = itertools.count(1)
        self._admission = itertools.count(1)
        self._out: List[Outbound] = []

    # -- admission -------------------------------------------------------

    def stamp(self) -> int:
        return next(self._admission)

    def on_wire(self, conn_id: int, wire: bytes, admission_seq: Optional[int] = None) -> List[Outbound]:
        seq = self.stamp() if admission_seq is None else admission_seq
        self.consumed.append(seq)
        self._out = []
        try:
            msg = fix.parse(wire)
        except fix.FixError as exc:
            log.warning("conn %s: dropping garbled message (%s): %s", conn_id, exc, fix.render(wire))
            return []
        comp_id = self.conns.get(conn_id)
        if comp_id is None:
            self._on_first_message(conn_id, msg, seq)
        else:
            session = self.sessions[comp_id]
            try:
                session.state = fix.check_inbound(session.state, msg)
            except fix.SessionError as exc:
                self._disconnect_with_logout(session, str(exc), seq)
                return self._flush()
            for target, reply in self.handle_inbound(session, msg, seq):
                self._send(target, reply)
            if msg.kind is MsgType.LOGOUT:
                self.conns.pop(conn_id, None)
                session.conn_id = None
                self.apply(SessionClosed(seq, comp_id))
        return self._flush()

    def on_disconnect(self, conn_id: int, admission_seq: Optional[int] = None) -> List[Outbound]:
        comp_id = self.conns.pop(conn_id, None)
        if comp_id is not None:
            self.sessions[comp_id].conn_id = None
            seq = self.stamp() if admission_seq is None else admission_seq
            self.consumed.append(seq)
            self.apply(SessionClosed(seq, comp_id))
        return []

    def _flush(self) -> List[Outbound]:
        out, self._out = self._out, []
        return out

    def _on_first_message(self, conn_id: int, msg: FixMessage, seq: int) -> None:
        sender = msg.sender
        if msg.kind is not MsgType.LOGON or not sender:
            self._reject_raw(conn_id, sender or "UNKNOWN", "first message must be Logon")
            return
        if msg.target != self.comp_id:
            self._reject_raw(conn_id, sender, f"TargetCompID must be {self.comp_id}")
            return
        existing = self.sessions.get(sender)
        if existing is not None and existing.active:
            self._reject_raw(conn_id, sender, f"session {sender} already active")
            return
        hb = msg.get_int(Tag.HeartBtInt) or fix.DEFAULT_HEARTBEAT_S
        state = SessionState(sender=self.comp_id, target=sender, heartbeat_s=hb)
        try:
            state = fix.check_inbound(state, msg)
        except fix.SessionError as exc:
            self._reject_raw(conn_id, sender, str(exc))
            return
        if existing is None:
            existing = self.sessions[sender] = ClientSession(sender, conn_id, state)
        else:
            existing.conn_id, existing.state = conn_id, state
        self.conns[conn_id] = sender
        self._send(sender, fix.logon(hb))

    def _reject_raw(self, conn_id: int, target: str, text: str) -> None:
        log.warning("conn %s: %s", conn_id, text)
        state = SessionState(sender=self.comp_id, target=target, logged_on=True)
        wire, _ = fix.next_outbound(state, fix.logout(text), self.clock_us())
        self._out.append(Outbound(conn_id, wire, close=True))

    def _disconnect_with_logout(self, session: ClientSession, text: str, seq: int) -> None:
        log.warning("session %s: %s", session.comp_id, text)
        conn_id = session.conn_id
        self._send(session.comp_id, fix.logout(text))
        self._out[-1].close = True
        self.conns.pop(conn_id, None)
        session.conn_id = None
        self.apply(SessionClosed(seq, session.comp_id))

    def _send(self, comp_id: str, msg: FixMessage) -> None:
        session = self.sessions.get(comp_id)
        if session is None or not session.active:
            log.info("session %s offline; dropping %s", comp_id, msg.kind.name)
            return
        wire, session.state = fix.next_outbound(session.state, msg, self.clock_us())
        self._out.append(Outbound(session.conn_id, wire, close=msg.kind is MsgType.LOGOUT))

    # -- session dispatch ------------------------------------------------

    def handle_inbound(self, session: ClientSession, msg: FixMessage,
                       admission_seq: int = 0) -> List[Tuple[str, FixMessage]]:
        """Business handling of one sequence-checked message."""
        kind = msg.kind
        if kind is MsgType.HEARTBEAT:
            return []
        if kind is MsgType.LOGOUT:
            return [(session.comp_id, fix.logout())]
        if kind is MsgType.NEW_ORDER_SINGLE:
            try:
                event = self._new_order_event(session.comp_id, msg, admission_seq)
            except _BadOrder as exc:
                return [(session.comp_id, self._reject_report(msg, str(exc)))]
            return self.apply(event)
        if kind is MsgType.ORDER_CANCEL_REQUEST:
            orig = msg.orig_cl_ord_id
            oid = msg.get_str(Tag.OrderID)
            event = Cancel(admission_seq, session.comp_id, msg.cl_ord_id or "NONE", orig,
                           int(oid) if oid and oid.isdigit() else None)
            return self.apply(event)
        return [(session.comp_id, self._business_reject(msg))]

    def _new_order_event(self, comp_id: str, msg: FixMessage, seq: int) -> NewOrder:
        cl = msg.cl_ord_id
        if not cl:
            raise _BadOrder("missing ClOrdID(11)")
        if (comp_id, cl) in self.clord_index:
            raise _BadOrder(f"duplicate ClOrdID {cl}")
        side = FIX_SIDE.get(msg.side or "")
        if side is None:
            raise _BadOrder(f"unsupported Side {msg.side}")
        try:
            price, qty = msg.price, msg.order_qty
        except ValueError:
            raise _BadOrder("Price and OrderQty must be integers") from None
        if price is None or qty is None:
            raise _BadOrder("Price(44) and OrderQty(38) are required")
        sym = msg.symbol
        if sym is not None and sym != self.symbol:
            raise _BadOrder(f"unknown symbol {sym}")
        ord_type = msg.get_str(Tag.OrdType)
        if ord_type not in (None, "2"):
            raise _BadOrder("only limit orders (OrdType=2) are accepted")
        return NewOrder(seq, comp_id, cl, side, price, qty, trader_of(cl))

    def _reject_report(self, msg: FixMessage, text: str) -> FixMessage:
        return FixMessage.build(
            MsgType.EXECUTION_REPORT,
            (Tag.OrderID, "NONE"),
            (Tag.ClOrdID, msg.cl_ord_id or "NONE"),
            (Tag.ExecID, next(self._next_exec_id)),
            (Tag.ExecTransType, 0),
            (Tag.ExecType, ExecType.REJECTED),
            (Tag.OrdStatus, OrdStatus.REJECTED),
            (Tag.Symbol, self.symbol),
            (Tag.Side, msg.side or "1"),
            (Tag.LeavesQty, 0),
            (Tag.CumQty, 0),
            (Tag.AvgPx, 0),
            (Tag.Text, text),
        )

    def _business_reject(self, msg: FixMessage) -> FixMessage:
        return FixMessage.build(
            MsgType.ORDER_CANCEL_REJECT,
            (Tag.OrderID, msg.order_id or "NONE"),
            (Tag.ClOrdID, msg.cl_ord_id or "NONE"),
            (Tag.OrigClOrdID, msg.orig_cl_ord_id or "NONE"),
            (Tag.OrdStatus, OrdStatus.REJECTED),
            (Tag.CxlRejResponseTo, 2 if msg.msg_type == "G" else 1),
            (Tag.CxlRejReason, 99),
            (Tag.Text, f"unsupported MsgType {msg.msg_type}"),
        )

    # -- matching --------------------------------------------------------

    def apply(self, event: EngineEvent) -> List[Tuple[str, FixMessage]]:
        """Run one engine event; replaying the event log reproduces the tape."""
        self.event_log.append(event)
        if isinstance(event, NewOrder):
            out = self._apply_new(event)
        elif isinstance(event, Cancel):
            out = self._apply_cancel(event)
        else:
            # orders survive disconnects; nothing to do on the book
            out = []
        if self.book.is_crossed():
            self.crossed_observations += 1
        return out

    def _apply_new(self, ev: NewOrder) -> List[Tuple[str, FixMessage]]:
        order_id = next(self._next_order_id)
        order = Order(order_id, ev.session, ev.trader_id, ev.side, ev.price, ev.qty)
        info = _OrderInfo(ev.session, ev.cl_ord_id, ev.side, ev.price, ev.qty)
        try:
            trades, rest = self.book.add_order(order, self.clock_us())
        except OrderRejected as exc:
            info.status = OrdStatus.REJECTED
            self.orders[order_id] = info
            self.clord_index[(ev.session, ev.cl_ord_id)] = order_id
            return [(ev.session, self._report(order_id, info, ExecType.REJECTED, text=str(exc)))]
        self.orders[order_id] = info
        self.clord_index[(ev.session, ev.cl_ord_id)] = order_id
        out = [(ev.session, self._report(order_id, info, ExecType.NEW))]
        for trade in trades:
            out.extend(self._fill_reports(trade))
        if rest is not None:
            self.sessions[ev.session].live_orders.add(order_id)
        self.dirty = True
        return out

    def _fill_reports(self, trade: Trade) -> List[Tuple[str, FixMessage]]:
        out = []
        aggressor = trade.buy_order_id if trade.aggressor is Side.BID else trade.sell_order_id
        resting = trade.sell_order_id if trade.aggressor is Side.BID else trade.buy_order_id
        for oid in (aggressor, resting):
            info = self.orders[oid]
            info.cum_qty += trade.qty
            info.notional += trade.qty * trade.price
            done = info.cum_qty == info.qty
            info.status = OrdStatus.FILLED if done else OrdStatus.PARTIALLY_FILLED
            if done:
                session = self.sessions.get(info.session)
                if session is not None:
                    session.live_orders.discard(oid)
            kind = ExecType.FILL if done else ExecType.PARTIAL_FILL
            out.append((info.session, self._report(oid, info, kind, trade=trade)))
        return out

    def _apply_cancel(self, ev: Cancel) -> List[Tuple[str, FixMessage]]:
        oid = self.clord_index.get((ev.session, ev.orig_cl_ord_id)) if ev.orig_cl_ord_id else None
        if oid is None:
            oid = ev.order_id
        info = self.orders.get(oid) if oid is not None else None
        try:
            if oid is None:
                raise OrderNotFound("unknown order")
            self.book.cancel_order(oid, ev.session)
        except (OrderNotFound, OwnershipError) as exc:
            status = info.status if info is not None and isinstance(exc, OrderNotFound) else OrdStatus.REJECTED
            reject = FixMessage.build(
                MsgType.ORDER_CANCEL_REJECT,
                (Tag.OrderID, oid if oid is not None else "NONE"),
                (Tag.ClOrdID, ev.cl_ord_id),
                (Tag.OrigClOrdID, ev.orig_cl_ord_id or "NONE"),
                (Tag.OrdStatus, status),
                (Tag.CxlRejResponseTo, 1),
                (Tag.CxlRejReason, 1 if isinstance(exc, OrderNotFound) else 99),
                (Tag.Text, str(exc)),
            )
            return [(ev.session, reject)]
        info.status = OrdStatus.CANCELED
        self.sessions[ev.session].live_orders.discard(oid)
        self.dirty = True
        return [(ev.session, self._report(oid, info, ExecType.CANCELED, cl_ord_id=ev.cl_ord_id))]

    def _report(self, order_id: int, info: _OrderInfo, exec_type: ExecType, *,
                trade: Optional[Trade] = None, text: Optional[str] = None,
                cl_ord_id: Optional[str] = None) -> FixMessage:
        leaves = 0 if info.status in (OrdStatus.CANCELED, OrdStatus.REJECTED) else info.qty - info.cum_qty
        avg = info.notional / info.cum_qty if info.cum_qty else 0
        pairs = [
            (Tag.OrderID, order_id),
            (Tag.ClOrdID, cl_ord_id or info.cl_ord_id),
        ]
        if cl_ord_id:
            pairs.append((Tag.OrigClOrdID, info.cl_ord_id))
        pairs += [
            (Tag.ExecID, next(self._next_exec_id)),
            (Tag.ExecTransType, 0),
            (Tag.ExecType, exec_type),
            (Tag.OrdStatus, info.status),
            (Tag.Symbol, self.symbol),
            (Tag.Side, SIDE_FIX[info.side]),
            (Tag.OrderQty, info.qty),
            (Tag.Price, info.price),
        ]
        if trade is not None:
            pairs += [(Tag.LastQty, trade.qty), (Tag.LastPx, trade.price)]
        pairs += [
            (Tag.LeavesQty, leaves),
            (Tag.CumQty, info.cum_qty),
            (Tag.AvgPx, f"{avg:g}"),
            (Tag.TransactTime, fix.format_sending_time(trade.exec_time if trade else self.clock_us())),
        ]
        if text:
            pairs.append((Tag.Text, text))
        return FixMessage.build(MsgType.EXECUTION_REPORT, *pairs)

    # -- market data -----------------------------------------------------

    def take_dirty(self) -> bool:
        dirty, self.dirty = self.dirty, False
        return dirty

    def market_snapshot(self, seq: int) -> MarketDataSnapshot:
        return MarketDataSnapshot.from_depth(seq, 0, self.symbol, self.book.snapshot(self.depth))


class _BadOrder(Exception):
    pass


def replay(events: Iterable[EngineEvent], symbol: str = "XYZ", max_price: int = 1000) -> List[Trade]:
    """Re-run an admission-ordered event log on a fresh engine and return its tape."""
    core = ExchangeCore(symbol, max_price, clock_us=lambda: 0)
    for ev in events:
        if ev.session not in core.sessions:
            core.sessions[ev.session] = ClientSession(ev.session, None, SessionState(core.comp_id, ev.session))
        core.apply(ev)
    return core.book.tape


class PublishThrottle:
    """Publish after book changes, at most once per ``min_interval`` seconds."""

    def __init__(self, min_interval: float, now: Callable[[], float],
                 call_at: Callable[[float, Callable[[], None]], None], publish: Callable[[], None]):
        self.min_interval = min_interval
        self.now = now
        self.call_at = call_at
        self._publish = publish
        self.last: Optional[float] = None
        self.pending = False
        self.count = 0

    def changed(self) -> None:
        if self.pending:
            return
        t = self.now()
        if self.last is None or t - self.last >= self.min_interval:
            self._fire()
        else:
            self.pending = True
            self.call_at(self.last + self.min_interval, self._deferred)

    def _deferred(self) -> None:
        self.pending = False
        self._fire()

    def _fire(self) -> None:
        self.last = self.now()
        self.count += 1
        self._publish()


def feed_clients(config: ExchangeConfig) -> List[FeedClient]:
    if config.feed_mode == "multicast":
        return [FeedClient(parse_address(config.multicast_group), 1, 0.0, "multicast")]
    delays = config.injected_delay_ms or []
    return [FeedClient(parse_address(addr), i + 1, float(delays[i]) if i < len(delays) else 0.0, addr)
            for i, addr in enumerate(config.md_clients)]


class ExchangeServer:
    """asyncio transport around :class:`ExchangeCore`."""

    def __init__(self, config: ExchangeConfig):
        self.config = config
        self.core = ExchangeCore(config.symbol, config.max_price)
        self.queue: asyncio.Queue = asyncio.Queue()
        self.writers: Dict[int, asyncio.StreamWriter] = {}
        self.servers: List[asyncio.AbstractServer] = []
        self.publisher: Optional[Publisher] = None
        self.throttle: Optional[PublishThrottle] = None
        self._conn_ids = itertools.count(1)
        self._admission = itertools.count(1)
        self._sender = None
        self.bound: List[Tuple[str, int]] = []

    async def start(self) -> None:
        loop = asyncio.get_running_loop()
        clients = feed_clients(self.config)
        if clients:
            self._sender = UdpMulticastSender() if self.config.feed_mode == "multicast" else UdpUnicastSender()
            self.publisher = Publisher(clients, self._sender, defer=loop.call_later)
            self.throttle = PublishThrottle(self.config.min_publish_interval_ms / 1000.0, loop.time,
                                            loop.call_at, self._publish)
        for addr in self.config.listen_addresses:
            host, port = parse_address(addr)
            try:
                server = await asyncio.start_server(self._handle_conn, host, port)
            except OSError as exc:
                raise ExchangeStartupError(f"cannot bind {addr}: {exc}") from exc
            self.servers.append(server)
            self.bound.extend(s.getsockname()[:2] for s in server.sockets)
        self._consumer = asyncio.create_task(self._consume())
        log.info("exchange listening on %s, feed %s to %d client(s)", self.bound, self.config.feed_mode, len(clients))

    def _publish(self) -> None:
        self.publisher.publish(self.core.market_snapshot(self.publisher.seq + 1))

    async def _handle_conn(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        conn_id = next(self._conn_ids)
        self.writers[conn_id] = writer
        buf = fix.FixStreamBuffer()
        try:
            while True:
                data = await reader.read(65536)
                if not data:
                    break
                for wire in buf.feed(data):
                    self.queue.put_nowait((next(self._admission), conn_id, wire))
        except (ConnectionError, asyncio.CancelledError):
            pass
        finally:
            self.queue.put_nowait((next(self._admission), conn_id, None))

    async def _consume(self) -> None:
        while True:
            seq, conn_id, wire = await self.queue.get()
            if wire is None:
                self.core.on_disconnect(conn_id, seq)
                w = self.writers.pop(conn_id, None)
                if w is not None:
                    w.close()
                continue
            for out in self.core.on_wire(conn_id, wire, seq):
                w = self.writers.get(out.conn_id)
                if w is None:
                    continue
                w.write(out.wire)
                if out.close:
                    w.close()
                    self.writers.pop(out.conn_id, None)
            if self.core.take_dirty() and self.throttle is not None:
                self.throttle.changed()

    async def stop(self) -> None:
        for server in self.servers:
            server.close()
            await server.wait_closed()
        for w in list(self.writers.values()):
            w.close()
        # let already-admitted messages drain
        while not self.queue.empty():
            await asyncio.sleep(0.01)
        self._consumer.cancel()
        if self._sender is not None:
            self._sender.close()

    def write_outputs(self, out_dir: str) -> None:
        os.makedirs(out_dir, exist_ok=True)
        write_tape(os.path.join(out_dir, "tape.csv"), self.core.book.tape)
        if self.publisher is not None:
            write_publishes(os.path.join(out_dir, "publishes.csv"), self.publisher.history)
        write_stats(os.path.join(out_dir, "stats.csv"), self.core, self.publisher.seq if self.publisher else 0)


def write_tape(path: str, tape: Iterable[Trade]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["trade_id", "exec_time_us", "price", "qty", "buy_order_id", "sell_order_id",
                    "buyer", "seller", "buy_client", "sell_client", "aggressor"])
        for t in tape:
            w.writerow([t.trade_id, t.exec_time, t.price, t.qty, t.buy_order_id, t.sell_order_id,
                        t.buyer, t.seller, t.buy_client, t.sell_client, t.aggressor.value])


def write_stats(path: str, core: ExchangeCore, publishes: int) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["trades", "volume", "publishes", "crossed_observations", "events"])
        w.writerow([len(core.book.tape), core.book.cum_volume, publishes, core.crossed_observations,
                    len(core.event_log)])


def write_publishes(path: str, history) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["publish", "ordinal", "client", "send_initiated_ns"])
        for i, records in enumerate(history, 1):
            for r in records:
                w.writerow([i, r.client.ordinal, r.client.name, r.send_initiated_ns])


async def run_exchange(config: ExchangeConfig, stop: Optional[asyncio.Event] = None,
                       ready: Optional[Callable[[ExchangeServer], None]] = None) -> ExchangeServer:
    """Serve until ``stop`` is set (or SIGINT/SIGTERM when ``stop`` is None)."""
    server = ExchangeServer(config)
    await server.start()
    if stop is None:
        stop = asyncio.Event()
        loop = asyncio.get_running_loop()
        for sig in (signal.SIGINT, signal.SIGTERM):
            loop.add_signal_handler(sig, stop.set)
    if ready is not None:
        ready(server)
    if config.duration_s:
        try:
            await asyncio.wait_for(stop.wait(), config.duration_s)
        except asyncio.TimeoutError:
            pass
    else:
        await stop.wait()
    await server.stop()
    if config.output_dir:
        server.write_outputs(config.output_dir)
    log.info("exchange stopped: %d trades, %d publishes", len(server.core.book.tape),
             server.publisher.seq if server.publisher else 0)
    return server


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="distex-exchange", description="Run the exchange server.")
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--listen", action="append", help="host:port client port (repeatable)")
    p.add_argument("--md-client", action="append", dest="md_clients", help="feed destination host:port (repeatable)")
    p.add_argument("--delay-ms", action="append", type=float, dest="delays",
                   help="injected feed delay for the matching --md-client (repeatable)")
    p.add_argument("--symbol")
    p.add_argument("--max-price", type=int)
    p.add_argument("--min-publish-interval-ms", type=float)
    p.add_argument("--feed-mode", choices=["unicast", "multicast"])
    p.add_argument("--multicast-group")
    p.add_argument("--duration", type=float, help="stop after this many seconds")
    p.add_argument("--output-dir", help="write tape.csv and publishes.csv here on shutdown")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    overrides = {
        "listen_addresses": args.listen,
        "md_clients": args.md_clients,
        "injected_delay_ms": args.delays,
        "symbol": args.symbol,
        "max_price": args.max_price,
        "min_publish_interval_ms": args.min_publish_interval_ms,
        "feed_mode": args.feed_mode,
        "multicast_group": args.multicast_group,
        "duration_s": args.duration,
        "output_dir": args.output_dir,
    }
    try:
        config = load_exchange_config(args.config, **{k: v for k, v in overrides.items() if v is not None})
        asyncio.run(run_exchange(config))
    except (ConfigError, ExchangeStartupError) as exc:
        print(f"distex-exchange: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
