"""Experiment orchestration: repeated sessions, statistics and reports.

An experiment spec is a TOML file::

    name = "race"
    runtime = "live"                 # "live" (processes on loopback, default) or "sim" (virtual time)
    repeats = 10
    duration_s = 180
    interval_s = 30
    seed = 1                         # repeat r (0-based) uses seed + r
    clients = ["CLNT1", "CLNT2", "CLNT3", "CLNT4"]   # or a count
    injected_delay_ms = [0, 0, 44, 135]
    min_publish_interval_ms = 100
    output_dir = "out/race"
    [[schedule]]   start_t, end_t, low, high, stepmode   (tiled to cover duration_s)
    [[roster]]     strategy, side, count                 (per client)

``experiment run`` writes profits.csv, latency.csv, summary.csv, ratios.csv,
runs.csv and report.txt under ``output_dir``.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import signal
import socket
import subprocess
import sys
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import tomli_w

from .client import (LATENCY_COLUMNS, ClientCore, SessionResult, build_traders, read_latency,
                     read_session_result)
from .config import ClientConfig, ConfigError, parse_roster, parse_schedule, read_toml
from .scheduler import RosterEntry, Schedule, generate_assignments, tile_schedule
from .sim import SIM_EPOCH_US, NetModel, SimMarket
from .stats import SUMMARY_COLUMNS, ProfitReport, StatsError, format_ratio, profit_ratios, summarize

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_BAD_SPEC = 2
EXIT_LAUNCH = 3


class LaunchError(RuntimeError):
    pass


@dataclass
class ExperimentSpec:
    name: str = "experiment"
    runtime: str = "live"
    repeats: int = 1
    duration_s: float = 180.0
    interval_s: float = 30.0
    seed: int = 1
    clients: List[str] = field(default_factory=lambda: ["CLNT1"])
    injected_delay_ms: List[float] = field(default_factory=list)
    min_publish_interval_ms: float = 100.0
    max_price: int = 1000
    symbol: str = "XYZ"
    lurk_fraction: float = 0.2
    output_dir: str = "experiment-out"
    schedule: Optional[Schedule] = None
    roster: Optional[List[RosterEntry]] = None

    def __post_init__(self):
        if isinstance(self.clients, int):
            self.clients = [f"CLNT{i + 1}" for i in range(self.clients)]
        self.schedule = tile_schedule(self.schedule or parse_schedule(None), self.duration_s)
        if self.roster is None:
            self.roster = parse_roster(None)
        self.validate()

    def validate(self) -> None:
        if self.runtime not in ("sim", "live"):
            raise ConfigError(f"runtime must be sim or live, not {self.runtime!r}")
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if self.duration_s < 0 or self.interval_s <= 0:
            raise ConfigError("duration_s must be >= 0 and interval_s > 0")
        if not self.clients or len(set(self.clients)) != len(self.clients):
            raise ConfigError("clients must be a non-empty list of distinct ids")
        if len(self.injected_delay_ms) > len(self.clients):
            raise ConfigError("more injected delays than clients")
        if any(d < 0 for d in self.injected_delay_ms):
            raise ConfigError("injected delays must be >= 0")

    @property
    def delays(self) -> List[float]:
        d = [float(x) for x in self.injected_delay_ms]
        return d + [0.0] * (len(self.clients) - len(d))

    def repeat_seed(self, repeat: int) -> int:
        return self.seed + repeat

    def client_config(self, repeat: int, index: int, **extra) -> ClientConfig:
        return ClientConfig(client_id=self.clients[index], seed=client_seed(self.repeat_seed(repeat), index),
                            duration_s=self.duration_s, interval_s=self.interval_s, max_price=self.max_price,
                            lurk_fraction=self.lurk_fraction, schedule=self.schedule, roster=list(self.roster),
                            **extra)


def client_seed(repeat_seed: int, index: int) -> int:
    return repeat_seed * 1000 + index + 1


def load_spec(path: str, **overrides) -> ExperimentSpec:
    data: Dict[str, Any] = read_toml(path)
    data.update({k: v for k, v in overrides.items() if v is not None})
    data["schedule"] = parse_schedule(data.get("schedule"))
    data["roster"] = parse_roster(data.get("roster"))
    known = set(ExperimentSpec.__dataclass_fields__)
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown experiment keys: {sorted(unknown)}")
    try:
        return ExperimentSpec(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


@dataclass
class RepeatResult:
    repeat: int
    seed: int
    sessions: List[SessionResult]
    trades: int
    volume: int
    publishes: int
    crossed: int
    # send-initiation ns per publish, in ordinal order
    publish_stamps: List[List[int]] = field(default_factory=list)
    violations: List[str] = field(default_factory=list)
    # (seconds since session start, price, qty) per trade on the exchange tape
    tape: List[Tuple[float, int, int]] = field(default_factory=list)

    def profit_map(self) -> Dict[Tuple[str, str], int]:
        out: Dict[Tuple[str, str], int] = {}
        for s in self.sessions:
            for strategy, p in s.profit_by_strategy().items():
                out[(s.client_id, strategy)] = out.get((s.client_id, strategy), 0) + p
        return out

    def client_shares(self) -> Optional[Dict[str, float]]:
        total = sum(s.total_profit for s in self.sessions)
        if total <= 0:
            return None
        return {s.client_id: s.total_profit / total for s in self.sessions}


def ordering_violations(publish_stamps: Sequence[Sequence[int]]) -> int:
    """Publishes whose per-client send stamps are not strictly increasing."""
    return sum(1 for st in publish_stamps if any(b <= a for a, b in zip(st, st[1:])))


def check_invariants(r: RepeatResult) -> List[str]:
    out = []
    if r.crossed:
        out.append(f"book observed crossed {r.crossed} time(s)")
    bad = ordering_violations(r.publish_stamps)
    if bad:
        out.append(f"{bad} publish(es) not in ordinal send order")
    fills = 0
    for s in r.sessions:
        fills += sum(t.qty for t in s.trades)
        logged = sum(t.profit for t in s.trades)
        if logged != s.total_profit:
            out.append(f"{s.client_id}: agent profits {s.total_profit} != trade log sum {logged}")
        if s.errors:
            out.append(f"{s.client_id}: {len(s.errors)} session error(s), first: {s.errors[0]}")
    if fills > 2 * r.volume:
        out.append(f"clients report {fills} filled units but the tape has {r.volume}")
    return out


# -- runtimes -----------------------------------------------------------


def run_repeat_sim(spec: ExperimentSpec, repeat: int, net: NetModel = NetModel()) -> RepeatResult:
    seed = spec.repeat_seed(repeat)

    def make_clients(clock):
        cores = []
        for i in range(len(spec.clients)):
            cfg = spec.client_config(repeat, i)
            assignments = generate_assignments(cfg.schedule, cfg.roster, cfg.interval_s, cfg.seed, cfg.duration_s)
            cores.append(ClientCore(cfg.client_id, build_traders(cfg), assignments, clock, symbol=spec.symbol,
                                    max_price=spec.max_price, heartbeat_s=cfg.heartbeat_s, seed=cfg.seed))
        return cores

    market = SimMarket(make_clients, spec.delays, seed=seed, net=net,
                       min_publish_interval_ms=spec.min_publish_interval_ms, symbol=spec.symbol,
                       max_price=spec.max_price)
    sessions = market.run(spec.duration_s)
    book = market.core.book
    stamps = [[rec.send_initiated_ns for rec in records] for records in market.publisher.history]
    tape = [((t.exec_time - SIM_EPOCH_US) / 1e6, t.price, t.qty) for t in book.tape]
    return RepeatResult(repeat, seed, sessions, len(book.tape), book.cum_volume, market.publisher.seq,
                        market.core.crossed_observations, stamps, tape=tape)


def _free_port(kind: int) -> int:
    with socket.socket(socket.AF_INET, kind) as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def _wait_listening(port: int, proc: subprocess.Popen, timeout: float = 15.0) -> None:
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if proc.poll() is not None:
            raise LaunchError(f"exchange exited early with code {proc.returncode}")
        try:
            with socket.create_connection(("127.0.0.1", port), timeout=0.5):
                return
        except OSError:
            time.sleep(0.1)
    raise LaunchError(f"exchange did not start listening on port {port}")


def _client_toml(cfg: ClientConfig) -> Dict[str, Any]:
    data = {k: v for k, v in vars(cfg).items() if k not in ("schedule", "roster") and v is not None}
    data["schedule"] = [{"start_t": s.start_t, "end_t": s.end_t, "low": s.range_low, "high": s.range_high,
                         "stepmode": s.stepmode} for s in cfg.schedule.segments]
    data["roster"] = [{"strategy": r.strategy, "side": "buyer" if r.side.value == "Bid" else "seller",
                       "count": r.count} for r in cfg.roster]
    return data


def _read_publish_stamps(path: str) -> List[List[int]]:
    out: Dict[int, List[Tuple[int, int]]] = {}
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            out.setdefault(int(row["publish"]), []).append((int(row["ordinal"]), int(row["send_initiated_ns"])))
    return [[ns for _, ns in sorted(out[k])] for k in sorted(out)]


def run_repeat_live(spec: ExperimentSpec, repeat: int, start_delay_s: float = 2.0) -> RepeatResult:
    """One repeat as real processes: an exchange and one client per spec client."""
    seed = spec.repeat_seed(repeat)
    workdir = os.path.abspath(os.path.join(spec.output_dir, f"repeat_{repeat:02d}"))
    os.makedirs(workdir, exist_ok=True)
    order_port = _free_port(socket.SOCK_STREAM)
    feed_ports = [_free_port(socket.SOCK_DGRAM) for _ in spec.clients]
    exch_dir = os.path.join(workdir, "exchange")
    exch_cfg = {
        "listen_address": f"127.0.0.1:{order_port}",
        "md_clients": [f"127.0.0.1:{p}" for p in feed_ports],
        "injected_delay_ms": spec.delays,
        "symbol": spec.symbol,
        "max_price": spec.max_price,
        "min_publish_interval_ms": spec.min_publish_interval_ms,
        "output_dir": exch_dir,
    }
    exch_path = os.path.join(workdir, "exchange.toml")
    with open(exch_path, "wb") as f:
        tomli_w.dump(exch_cfg, f)
    logs = open(os.path.join(workdir, "processes.log"), "w")
    exchange = subprocess.Popen([sys.executable, "-m", "distex.exchange", "--config", exch_path],
                                stdout=logs, stderr=subprocess.STDOUT)
    clients: List[subprocess.Popen] = []
    try:
        _wait_listening(order_port, exchange)
        start_at = time.time() + start_delay_s
        for i, port in enumerate(feed_ports):
            cfg = spec.client_config(repeat, i, exchange_address=f"127.0.0.1:{order_port}",
                                     feed_listen=f"127.0.0.1:{port}", start_at=start_at,
                                     output_dir=os.path.join(workdir, spec.clients[i]))
            path = os.path.join(workdir, f"{cfg.client_id}.toml")
            with open(path, "wb") as f:
                tomli_w.dump(_client_toml(cfg), f)
            clients.append(subprocess.Popen([sys.executable, "-m", "distex.client", "--config", path],
                                            stdout=logs, stderr=subprocess.STDOUT))
        codes = [p.wait(timeout=spec.duration_s + start_delay_s + 60) for p in clients]
        exchange.send_signal(signal.SIGINT)
        exchange.wait(timeout=30)
    except (subprocess.TimeoutExpired, OSError) as exc:
        raise LaunchError(f"repeat {repeat}: {exc}") from exc
    finally:
        for p in clients + [exchange]:
            if p.poll() is None:
                p.kill()
                p.wait()
        logs.close()
    missing = [c for c, code in zip(spec.clients, codes) if code == 2]
    if missing:
        raise LaunchError(f"repeat {repeat}: client(s) {missing} failed to start; see {logs.name}")
    sessions = [read_session_result(os.path.join(workdir, c), c) for c in spec.clients]
    for s, code in zip(sessions, codes):
        if code != 0:
            s.errors.append(f"client process exited with code {code}")
    with open(os.path.join(exch_dir, "stats.csv"), newline="") as f:
        st = next(csv.DictReader(f))
    stamps = _read_publish_stamps(os.path.join(exch_dir, "publishes.csv"))
    with open(os.path.join(exch_dir, "tape.csv"), newline="") as f:
        tape = [(int(row["exec_time_us"]) / 1e6 - start_at, int(row["price"]), int(row["qty"]))
                for row in csv.DictReader(f)]
    return RepeatResult(repeat, seed, sessions, int(st["trades"]), int(st["volume"]), int(st["publishes"]),
                        int(st["crossed_observations"]), stamps, tape=tape)


# -- outputs ------------------------------------------------------------


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    repeats: List[RepeatResult]
    report: Optional[ProfitReport] = None
    aborted: Optional[str] = None

    @property
    def violations(self) -> List[str]:
        return [f"repeat {r.repeat}: {v}" for r in self.repeats for v in r.violations]

    @property
    def exit_code(self) -> int:
        if self.aborted:
            return EXIT_LAUNCH
        return EXIT_VIOLATION if self.violations else EXIT_OK

    def latency_by_client(self) -> Dict[str, List[float]]:
        out: Dict[str, List[float]] = {c: [] for c in self.spec.clients}
        for r in self.repeats:
            for s in r.sessions:
                out[s.client_id].extend(x.latency_ms for x in s.latency)
        return out


def write_profits(path: str, repeats: Sequence[RepeatResult]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["repeat", "seed", "client_id", "trader_id", "strategy", "side", "profit", "n_trades"])
        for r in repeats:
            for s in r.sessions:
                for a in s.agents:
                    w.writerow([r.repeat, r.seed, s.client_id, a.trader_id, a.strategy, a.side.value,
                                a.profit, a.n_trades])


def write_experiment_latency(path: str, repeats: Sequence[RepeatResult]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["repeat"] + LATENCY_COLUMNS)
        for r in repeats:
            for s in r.sessions:
                for x in s.latency:
                    w.writerow([r.repeat, x.client_id, x.seq, x.send_ts, x.recv_ts, f"{x.latency_ms:.3f}",
                                int(x.skew)])


def write_summary(path: str, latency: Dict[str, List[float]]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for client, xs in latency.items():
            if xs:
                w.writerow([client] + summarize(xs).row(3))


def write_ratios(path: str, report: ProfitReport) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["grouping", "client_id", "strategy", "mean_profit", "ratio"])
        totals = report.client_totals
        for client, total in totals.items():
            ratio = report.client_ratios.get(client) if report.client_ratios else None
            w.writerow(["client", client, "ALL", f"{total:.2f}", format_ratio(ratio)])
        for client, strategies in report.by_client.items():
            ratios = report.strategy_ratios.get(client)
            for strategy, mean in strategies.items():
                w.writerow(["strategy", client, strategy, f"{mean:.2f}",
                            format_ratio(ratios.get(strategy) if ratios else None)])


def write_runs(path: str, repeats: Sequence[RepeatResult]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["repeat", "seed", "trades", "volume", "publishes", "crossed_observations", "violations"])
        for r in repeats:
            w.writerow([r.repeat, r.seed, r.trades, r.volume, r.publishes, r.crossed, len(r.violations)])


def render_report(result: ExperimentResult) -> str:
    spec = result.spec
    lines = [f"experiment {spec.name}: runtime {spec.runtime}, {len(result.repeats)}/{spec.repeats} repeat(s) "
             f"of {spec.duration_s:g} s, clients {', '.join(spec.clients)}",
             "injected delays (ms): " + ", ".join(f"{c}={d:g}" for c, d in zip(spec.clients, spec.delays)), ""]
    lines.append("latency (ms)      n     min      q1  median      q3     max    mean     var      sd")
    for client, xs in result.latency_by_client().items():
        if xs:
            s = summarize(xs)
            lines.append(f"{client:<12}{s.n:>7}" + "".join(f"{v:>8.1f}" for v in
                         (s.min, s.q1, s.median, s.q3, s.max, s.mean, s.variance, s.sd)))
        else:
            lines.append(f"{client:<12}      0  (no samples)")
    lines.append("")
    rep = result.report
    if rep is not None:
        lines.append("mean profit per repeat ($) and share of all profit")
        for client, total in rep.client_totals.items():
            share = rep.client_ratios.get(client) if rep.client_ratios else None
            per = ", ".join(f"{k} {v / 100:.2f}" for k, v in sorted(rep.by_client[client].items()))
            lines.append(f"  {client}: {total / 100:.2f}  share {format_ratio(share)}  ({per})")
        lines.append("")
    pubs = [r.publishes for r in result.repeats]
    if pubs:
        lines.append(f"publishes per repeat: {', '.join(map(str, pubs))}")
        lines.append(f"trades per repeat: {', '.join(str(r.trades) for r in result.repeats)}")
    if result.aborted:
        lines.append(f"ABORTED: {result.aborted} (results above are partial)")
    violations = result.violations
    lines.append(f"invariant violations: {len(violations)}")
    lines.extend(f"  {v}" for v in violations[:20])
    return "\n".join(lines) + "\n"


def run_experiment(spec: ExperimentSpec, write: bool = True) -> ExperimentResult:
    runner = run_repeat_sim if spec.runtime == "sim" else run_repeat_live
    result = ExperimentResult(spec, [])
    for r in range(spec.repeats):
        try:
            rep = runner(spec, r)
        except LaunchError as exc:
            log.error("aborting: %s", exc)
            result.aborted = str(exc)
            break
        rep.violations = check_invariants(rep)
        result.repeats.append(rep)
        log.info("repeat %d (seed %d): %d trades, %d publishes, %d violation(s)", r, rep.seed, rep.trades,
                 rep.publishes, len(rep.violations))
    if result.repeats:
        result.report = profit_ratios([rep.profit_map() for rep in result.repeats])
    if write:
        write_outputs(result)
    return result


def write_outputs(result: ExperimentResult) -> None:
    out = result.spec.output_dir
    os.makedirs(out, exist_ok=True)
    write_profits(os.path.join(out, "profits.csv"), result.repeats)
    write_experiment_latency(os.path.join(out, "latency.csv"), result.repeats)
    write_summary(os.path.join(out, "summary.csv"), result.latency_by_client())
    write_runs(os.path.join(out, "runs.csv"), result.repeats)
    if result.report is not None:
        write_ratios(os.path.join(out, "ratios.csv"), result.report)
    with open(os.path.join(out, "report.txt"), "w") as f:
        f.write(render_report(result))


# -- CLI ----------------------------------------------------------------


def cmd_run(args) -> int:
    try:
        spec = load_spec(args.spec, runtime=args.runtime, repeats=args.repeats, output_dir=args.output_dir,
                         seed=args.seed)
    except ConfigError as exc:
        print(f"experiment: {exc}", file=sys.stderr)
        return EXIT_BAD_SPEC
    result = run_experiment(spec)
    sys.stdout.write(render_report(result))
    return result.exit_code


def cmd_stats(args) -> int:
    try:
        latency = read_latency(args.latency_csv)
    except (OSError, KeyError, ValueError) as exc:
        print(f"experiment: cannot read {args.latency_csv}: {exc}", file=sys.stderr)
        return EXIT_BAD_SPEC
    print(" ".join(f"{c:>8}" for c in SUMMARY_COLUMNS))
    for client, xs in latency.items():
        try:
            row = [client] + summarize(xs).row(1)
        except StatsError:
            continue
        print(" ".join(f"{c:>8}" for c in row))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="experiment", description="Run experiments and summarize latency samples.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment spec")
    run.add_argument("spec", help="experiment TOML file")
    run.add_argument("--runtime", choices=["sim", "live"])
    run.add_argument("--repeats", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--output-dir")
    run.set_defaults(func=cmd_run)
    stats = sub.add_parser("stats", help="five-number summary, mean and spread per client")
    stats.add_argument("latency_csv")
    stats.set_defaults(func=cmd_stats)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
