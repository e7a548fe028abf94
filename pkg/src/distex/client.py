"""Trading client: one FIX session, one feed receiver, many robot traders.

:class:`ClientCore` is transport-free; :func:`run_client` drives it with
asyncio over real TCP and UDP sockets.
"""

from __future__ import annotations

import argparse
import asyncio
import csv
import itertools
import logging
import os
import random
import sys
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Tuple

from . import fix
from .agents import AccountingError, MarketView, OrderProposal, Strategy, Trader, make_trader, price_is_sane
from .book import Side
from .config import ClientConfig, ConfigError, load_client_config
from .exchange import SIDE_FIX, trader_of
from .fix import ExecType, FixMessage, MsgType, SessionState, Tag
from .marketdata import FeedReceiver, MarketDataSnapshot, SeqStatus, open_feed_socket, parse_address
from .scheduler import Assignment, generate_assignments, trader_ids

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LatencySample:
    client_id: str
    seq: int
    send_ts: int
    recv_ts: int
    latency_ms: float
    skew: bool = False


def record_latency(client_id: str, snapshot: MarketDataSnapshot, recv_ts: int) -> LatencySample:
    """Latency of one accepted snapshot; negative values are kept and flagged."""
    latency = (recv_ts - snapshot.send_ts) / 1000.0
    return LatencySample(client_id, snapshot.seq, snapshot.send_ts, recv_ts, latency, latency < 0)


@dataclass(frozen=True)
class TradeRecord:
    client_id: str
    time_us: int
    trader_id: str
    strategy: str
    side: Side
    cl_ord_id: str
    price: int
    qty: int
    limit: int
    profit: int


@dataclass
class AgentResult:
    trader_id: str
    strategy: str
    side: Side
    profit: int
    n_trades: int


@dataclass
class SessionResult:
    client_id: str
    agents: List[AgentResult] = field(default_factory=list)
    latency: List[LatencySample] = field(default_factory=list)
    trades: List[TradeRecord] = field(default_factory=list)
    errors: List[str] = field(default_factory=list)
    feed_gaps: int = 0
    feed_missed: int = 0
    feed_stale: int = 0

    def profit_by_strategy(self) -> Dict[str, int]:
        out: Dict[str, int] = {}
        for a in self.agents:
            out[a.strategy] = out.get(a.strategy, 0) + a.profit
        return out

    @property
    def total_profit(self) -> int:
        return sum(a.profit for a in self.agents)

    def write(self, out_dir: str) -> None:
        os.makedirs(out_dir, exist_ok=True)
        write_trades(os.path.join(out_dir, "trades.csv"), self.trades)
        write_agent_profits(os.path.join(out_dir, "profits.csv"), self.client_id, self.agents)
        write_latency(os.path.join(out_dir, "latency.csv"), self.latency)


TRADES_COLUMNS = ["client_id", "time_us", "trader_id", "strategy", "side", "cl_ord_id",
                  "price", "qty", "limit", "profit"]
AGENT_PROFIT_COLUMNS = ["client_id", "trader_id", "strategy", "side", "profit", "n_trades"]
LATENCY_COLUMNS = ["client_id", "seq", "send_ts_us", "recv_ts_us", "latency_ms", "skew"]


def write_trades(path: str, trades: Iterable[TradeRecord], mode: str = "w") -> None:
    with open(path, mode, newline="") as f:
        w = csv.writer(f)
        if mode == "w":
            w.writerow(TRADES_COLUMNS)
        for t in trades:
            w.writerow([t.client_id, t.time_us, t.trader_id, t.strategy, t.side.value, t.cl_ord_id,
                        t.price, t.qty, t.limit, t.profit])


def write_agent_profits(path: str, client_id: str, agents: Iterable[AgentResult]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(AGENT_PROFIT_COLUMNS)
        for a in agents:
            w.writerow([client_id, a.trader_id, a.strategy, a.side.value, a.profit, a.n_trades])


def write_latency(path: str, samples: Iterable[LatencySample], mode: str = "w") -> None:
    with open(path, mode, newline="") as f:
        w = csv.writer(f)
        if mode == "w":
            w.writerow(LATENCY_COLUMNS)
        for s in samples:
            w.writerow([s.client_id, s.seq, s.send_ts, s.recv_ts, f"{s.latency_ms:.3f}", int(s.skew)])


def read_latency(path: str) -> Dict[str, List[float]]:
    """Latency values in ms grouped by client_id."""
    out: Dict[str, List[float]] = {}
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            out.setdefault(row["client_id"], []).append(float(row["latency_ms"]))
    return out


def read_session_result(out_dir: str, client_id: str) -> SessionResult:
    """Rebuild a :class:`SessionResult` from the CSV files a client wrote."""
    result = SessionResult(client_id)
    with open(os.path.join(out_dir, "profits.csv"), newline="") as f:
        for row in csv.DictReader(f):
            result.agents.append(AgentResult(row["trader_id"], row["strategy"], Side(row["side"]),
                                             int(row["profit"]), int(row["n_trades"])))
    with open(os.path.join(out_dir, "latency.csv"), newline="") as f:
        for row in csv.DictReader(f):
            result.latency.append(LatencySample(row["client_id"], int(row["seq"]), int(row["send_ts_us"]),
                                                int(row["recv_ts_us"]), float(row["latency_ms"]),
                                                bool(int(row["skew"]))))
    with open(os.path.join(out_dir, "trades.csv"), newline="") as f:
        for row in csv.DictReader(f):
            limit = row["limit"]
            result.trades.append(TradeRecord(row["client_id"], int(row["time_us"]), row["trader_id"],
                                             row["strategy"], Side(row["side"]), row["cl_ord_id"],
                                             int(row["price"]), int(row["qty"]),
                                             int(limit) if limit else None, int(row["profit"])))
    return result


class Clock:
    """Session-relative seconds for scheduling plus wall-clock epoch microseconds."""

    def __init__(self, t0: Optional[float] = None):
        self.t0 = time.monotonic() if t0 is None else t0

    def now(self) -> float:
        return time.monotonic() - self.t0

    def epoch_us(self) -> int:
        return time.time_ns() // 1000


def build_traders(config: ClientConfig, seed: Optional[int] = None) -> List[Trader]:
    seed = config.seed if seed is None else seed
    rng = random.Random(f"{seed}/traders")
    traders = []
    for tid, strategy, side in trader_ids(config.roster):
        kwargs = {"max_price": config.max_price}
        if Strategy(strategy) is Strategy.SNPR:
            kwargs["lurk_fraction"] = config.lurk_fraction
        traders.append(make_trader(strategy, tid, side, rng.randrange(2**32), **kwargs))
    return traders


class ClientCore:
    """Event handlers return the FIX wires to transmit, in order."""

    def __init__(self, client_id: str, traders: List[Trader], assignments: List[Assignment], clock,
                 exchange_comp_id: str = "EXCH", symbol: str = "XYZ", max_price: int = 1000,
                 heartbeat_s: int = fix.DEFAULT_HEARTBEAT_S, seed: int = 0):
        self.client_id = client_id
        self.traders = {t.trader_id: t for t in traders}
        self._order = list(self.traders)
        self.assignments = sorted(assignments, key=lambda a: (a.issue_time, a.trader_id))
        self._next_assignment = 0
        self.clock = clock
        self.symbol = symbol
        self.max_price = max_price
        self.session = SessionState(sender=client_id, target=exchange_comp_id, heartbeat_s=heartbeat_s)
        self.logon_acked = False
        self.logged_out = False
        self.feed = FeedReceiver()
        self.view = MarketView()
        self.rng = random.Random(f"{seed}/dispatch")
        self.latency: List[LatencySample] = []
        self.trades: List[TradeRecord] = []
        self.errors: List[str] = []
        self._counter = itertools.count(1)
        self._out: List[bytes] = []
        self._wakes: Dict[str, float] = {}
        self.last_send = 0.0

    # -- outbound --------------------------------------------------------

    def _send(self, msg: FixMessage) -> None:
        wire, self.session = fix.next_outbound(self.session, msg, self.clock.epoch_us())
        self._out.append(wire)
        self.last_send = self.clock.now()

    def _flush(self) -> List[bytes]:
        out, self._out = self._out, []
        return out

    def _cl_ord_id(self, trader_id: str) -> str:
        return f"{trader_id}-{next(self._counter)}"

    def start(self) -> List[bytes]:
        self._send(fix.logon(self.session.heartbeat_s))
        return self._flush()

    def stop(self) -> List[bytes]:
        if self.session.logged_on and not self.logged_out:
            self._send(fix.logout())
            self.logged_out = True
        return self._flush()

    def heartbeat(self) -> List[bytes]:
        if self.logon_acked and not self.logged_out:
            self._send(fix.heartbeat())
        return self._flush()

    # -- timer events ----------------------------------------------------

    def next_timer(self) -> Optional[float]:
        times = list(self._wakes.values())
        if self._next_assignment < len(self.assignments):
            times.append(self.assignments[self._next_assignment].issue_time)
        return min(times) if times else None

    def on_timer(self) -> List[bytes]:
        now = self.clock.now()
        while self._next_assignment < len(self.assignments) and \
                self.assignments[self._next_assignment].issue_time <= now:
            a = self.assignments[self._next_assignment]
            self._next_assignment += 1
            trader = self.traders[a.trader_id]
            cancel = trader.on_assignment(a)
            if not self.logon_acked:
                continue
            if cancel is not None:
                self._send_cancel(trader, cancel)
            else:
                self._quote(trader, now)
        due = [tid for tid, w in self._wakes.items() if w <= now]
        for tid in due:
            del self._wakes[tid]
            self._quote(self.traders[tid], now)
        for t in self.traders.values():
            w = t.next_wake(now)
            if w is not None:
                self._wakes[t.trader_id] = w
        return self._flush()

    # -- inbound FIX -----------------------------------------------------

    def on_fix(self, wire: bytes) -> List[bytes]:
        try:
            msg = fix.parse(wire)
            self.session = fix.check_inbound(self.session, msg)
        except fix.FixError as exc:
            self._error(f"inbound FIX rejected: {exc}")
            return []
        kind = msg.kind
        now = self.clock.now()
        if kind is MsgType.LOGON:
            self.logon_acked = True
            for trader in self._dispatch_order():
                if trader.assignment is not None:
                    self._quote(trader, now)
        elif kind is MsgType.LOGOUT:
            if not self.logged_out:
                log.warning("%s: exchange logged us out: %s", self.client_id, msg.get_str(Tag.Text))
                self.logged_out = True
            self.logon_acked = False
        elif kind is MsgType.EXECUTION_REPORT:
            self._on_exec_report(msg, now)
        elif kind is MsgType.ORDER_CANCEL_REJECT:
            orig = msg.orig_cl_ord_id
            trader = self.traders.get(trader_of(orig or ""))
            if trader is None:
                self._error(f"cancel reject for unknown order {orig}: {msg.get_str(Tag.Text)}")
            else:
                trader.on_cancel_rejected(orig)
                self._quote(trader, now)
        return self._flush()

    def _on_exec_report(self, msg: FixMessage, now: float) -> None:
        exec_type = msg.exec_type
        cl = msg.orig_cl_ord_id if exec_type == ExecType.CANCELED.value else msg.cl_ord_id
        trader = self.traders.get(trader_of(cl or ""))
        if trader is None:
            self._error(f"execution report for unknown order {cl}")
            return
        if exec_type == ExecType.NEW.value:
            return
        if exec_type in (ExecType.FILL.value, ExecType.PARTIAL_FILL.value):
            live = trader.live
            limit = live.assignment.limit if live is not None and live.cl_ord_id == cl else None
            try:
                gain = trader.on_fill(cl, msg.last_px, msg.last_qty)
            except AccountingError as exc:
                self._error(str(exc))
                return
            self.trades.append(TradeRecord(self.client_id, self.clock.epoch_us(), trader.trader_id,
                                           trader.strategy.value, trader.side, cl, msg.last_px,
                                           msg.last_qty, limit, gain))
            if trader.live is None:
                self._quote(trader, now)
        elif exec_type == ExecType.CANCELED.value:
            trader.on_cancelled(cl)
            self._quote(trader, now)
        elif exec_type == ExecType.REJECTED.value:
            self._error(f"order {cl} rejected: {msg.get_str(Tag.Text)}")
            trader.on_rejected(cl)

    # -- market data -----------------------------------------------------

    def on_datagram(self, data: bytes, recv_ts: Optional[int] = None) -> List[bytes]:
        recv_ts = self.clock.epoch_us() if recv_ts is None else recv_ts
        snap, check = self.feed.accept(data)
        if snap is None:
            return []
        self.latency.append(record_latency(self.client_id, snap, recv_ts))
        if check.status is SeqStatus.GAP:
            log.debug("%s: feed gap, %d missed", self.client_id, check.missed)
        self.view = MarketView(snap, self.clock.now())
        if self.logon_acked:
            now = self.clock.now()
            for trader in self._dispatch_order():
                if trader.assignment is not None and not trader.busy:
                    self._quote(trader, now)
        return self._flush()

    # -- agent plumbing --------------------------------------------------

    def _dispatch_order(self) -> List[Trader]:
        order = self._order[:]
        self.rng.shuffle(order)
        return [self.traders[t] for t in order]

    def _quote(self, trader: Trader, now: float) -> None:
        if not self.logon_acked or self.logged_out:
            return
        proposal = trader.quote(self.view, now)
        if proposal is None:
            return
        if trader.live is not None:
            cancel = trader.request_cancel()
            if cancel is not None:
                self._send_cancel(trader, cancel)
            return
        self._send_order(trader, proposal)

    def _send_order(self, trader: Trader, p: OrderProposal) -> None:
        limit = trader.assignment.limit
        if not price_is_sane(p.side, p.price, limit, trader.min_price, trader.max_price):
            self._error(f"{trader.trader_id}: refusing insane quote {p.price} (limit {limit})")
            return
        cl = self._cl_ord_id(trader.trader_id)
        trader.order_sent(cl, p)
        self._send(FixMessage.build(
            MsgType.NEW_ORDER_SINGLE,
            (Tag.ClOrdID, cl),
            (Tag.Symbol, self.symbol),
            (Tag.Side, SIDE_FIX[p.side]),
            (Tag.OrderQty, p.qty),
            (Tag.OrdType, 2),
            (Tag.Price, p.price),
            (Tag.TransactTime, fix.format_sending_time(self.clock.epoch_us())),
        ))

    def _send_cancel(self, trader: Trader, orig: str) -> None:
        self._send(FixMessage.build(
            MsgType.ORDER_CANCEL_REQUEST,
            (Tag.OrigClOrdID, orig),
            (Tag.ClOrdID, self._cl_ord_id(trader.trader_id)),
            (Tag.Symbol, self.symbol),
            (Tag.Side, SIDE_FIX[trader.side]),
            (Tag.TransactTime, fix.format_sending_time(self.clock.epoch_us())),
        ))

    def _error(self, text: str) -> None:
        log.error("%s: %s", self.client_id, text)
        self.errors.append(text)

    def result(self) -> SessionResult:
        agents = [AgentResult(t.trader_id, t.strategy.value, t.side, t.profit, t.n_trades)
                  for t in self.traders.values()]
        return SessionResult(self.client_id, agents, list(self.latency), list(self.trades), list(self.errors),
                             self.feed.gaps, self.feed.missed, self.feed.stale)


class ClientStartupError(RuntimeError):
    pass


class _LiveClient:
    """asyncio driver: TCP stream, UDP feed and timers feed one :class:`ClientCore`."""

    def __init__(self, config: ClientConfig, core: ClientCore, sock, reader: asyncio.StreamReader,
                 writer: asyncio.StreamWriter):
        self.config = config
        self.core = core
        self.sock = sock
        self.reader = reader
        self.writer = writer
        self.wake = asyncio.Event()
        self.logon = asyncio.Event()
        self.closed = asyncio.Event()
        self.last_datagram = time.monotonic()
        self.feed_silent = False

    def _write(self, wires: List[bytes]) -> None:
        if wires and not self.writer.is_closing():
            self.writer.write(b"".join(wires))
        self.wake.set()

    def on_readable(self) -> None:
        while True:
            try:
                data = self.sock.recv(65536)
            except (BlockingIOError, InterruptedError):
                return
            except OSError as exc:
                log.warning("%s: feed socket error: %s", self.core.client_id, exc)
                return
            recv_ts = self.core.clock.epoch_us()
            self.last_datagram = time.monotonic()
            if self.feed_silent:
                log.info("%s: feed resumed", self.core.client_id)
                self.feed_silent = False
            self._write(self.core.on_datagram(data, recv_ts))

    async def read_fix(self) -> None:
        buf = fix.FixStreamBuffer()
        try:
            while True:
                data = await self.reader.read(65536)
                if not data:
                    break
                for wire in buf.feed(data):
                    self._write(self.core.on_fix(wire))
                    if self.core.logon_acked:
                        self.logon.set()
                    if self.core.logged_out and not self.core.logon_acked:
                        self.closed.set()
        except (ConnectionError, fix.FixError) as exc:
            log.warning("%s: order connection lost: %s", self.core.client_id, exc)
        finally:
            self.closed.set()
            self.wake.set()

    async def timers(self, end: float) -> None:
        core = self.core
        hb = float(self.config.heartbeat_s)
        while not self.closed.is_set():
            now = core.clock.now()
            if now >= end:
                return
            nxt = core.next_timer()
            if nxt is not None and nxt <= now:
                self._write(core.on_timer())
                continue
            if now - core.last_send >= hb:
                self._write(core.heartbeat())
            silent = time.monotonic() - self.last_datagram
            if not self.feed_silent and silent > self.config.feed_timeout_s:
                log.warning("%s: no market data for %.1f s", core.client_id, silent)
                self.feed_silent = True
            deadline = min(t for t in (nxt, core.last_send + hb, end) if t is not None)
            self.wake.clear()
            try:
                await asyncio.wait_for(self.wake.wait(), max(0.0, min(deadline - now, 1.0)))
            except asyncio.TimeoutError:
                pass


async def run_client(config: ClientConfig, logon_timeout: float = 5.0) -> SessionResult:
    """Run one live trading session against the exchange and return its result."""
    host, port = parse_address(config.exchange_address)
    try:
        sock = open_feed_socket(parse_address(config.feed_listen), config.multicast_group)
    except OSError as exc:
        raise ClientStartupError(f"cannot bind feed socket {config.feed_listen}: {exc}") from exc
    try:
        try:
            reader, writer = await asyncio.open_connection(host, port)
        except OSError as exc:
            raise ClientStartupError(f"cannot connect to exchange {config.exchange_address}: {exc}") from exc
        if config.start_at is not None:
            await asyncio.sleep(max(0.0, config.start_at - time.time()))
        assignments = generate_assignments(config.schedule, config.roster, config.interval_s, config.seed,
                                           config.duration_s) if config.duration_s > 0 else []
        core = ClientCore(config.client_id, build_traders(config), assignments, Clock(),
                          config.exchange_comp_id, max_price=config.max_price,
                          heartbeat_s=config.heartbeat_s, seed=config.seed)
        live = _LiveClient(config, core, sock, reader, writer)
        loop = asyncio.get_running_loop()
        loop.add_reader(sock.fileno(), live.on_readable)
        fix_task = asyncio.create_task(live.read_fix())
        try:
            live._write(core.start())
            try:
                await asyncio.wait_for(live.logon.wait(), logon_timeout)
            except asyncio.TimeoutError:
                pass
            if not core.logon_acked:
                raise ClientStartupError(f"{config.client_id}: logon rejected or unanswered"
                                         + (f" ({core.errors[-1]})" if core.errors else ""))
            log.info("%s: logged on, %d agents, %d assignments", config.client_id, len(core.traders),
                     len(assignments))
            await live.timers(config.duration_s)
            live._write(core.stop())
            try:
                await asyncio.wait_for(live.closed.wait(), 2.0)
            except asyncio.TimeoutError:
                log.warning("%s: no Logout reply from exchange", config.client_id)
        finally:
            loop.remove_reader(sock.fileno())
            fix_task.cancel()
            writer.close()
            try:
                await writer.wait_closed()
            except (ConnectionError, OSError):
                pass
    finally:
        sock.close()
    result = core.result()
    if config.output_dir:
        result.write(config.output_dir)
    log.info("%s: session over, %d trades, profit %d, %d latency samples", config.client_id,
             len(result.trades), result.total_profit, len(result.latency))
    return result


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="distex-client", description="Run a trading client hosting robot traders.")
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--client-id")
    p.add_argument("--exchange", dest="exchange_address", help="exchange host:port")
    p.add_argument("--feed-listen", help="local host:port for the market data feed")
    p.add_argument("--multicast-group", help="join this multicast group instead of unicast")
    p.add_argument("--seed", type=int)
    p.add_argument("--duration", type=float, dest="duration_s", help="session length in seconds")
    p.add_argument("--start-at", type=float, dest="start_at", help="wall-clock epoch seconds to start trading")
    p.add_argument("--output-dir", help="write trades.csv, profits.csv and latency.csv here")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    overrides = {k: v for k, v in vars(args).items() if k not in ("config", "verbose") and v is not None}
    try:
        config = load_client_config(args.config, **overrides)
        result = asyncio.run(run_client(config))
    except (ConfigError, ClientStartupError) as exc:
        print(f"distex-client: {exc}", file=sys.stderr)
        return 2
    return 1 if result.errors else 0


if __name__ == "__main__":
    sys.exit(main())
