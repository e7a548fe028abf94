"""Supply/demand schedules and assignment generation.

Limit prices are spread evenly over the active range ("fixed" step mode);
issue times within each replenishment interval follow a Poisson process
squeezed into the interval ("drip-poisson").
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from fractions import Fraction
from math import floor
from typing import Iterable, List, Optional, Sequence, Tuple

from .book import Side


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class ScheduleSegment:
    start_t: float
    end_t: float
    range_low: int
    range_high: int
    stepmode: str = "fixed"

    def __post_init__(self):
        if self.range_low > self.range_high:
            raise ScheduleError(f"range_low {self.range_low} > range_high {self.range_high}")
        if self.end_t <= self.start_t:
            raise ScheduleError(f"segment [{self.start_t}, {self.end_t}) is empty")
        if self.stepmode != "fixed":
            raise ScheduleError(f"unsupported stepmode {self.stepmode!r}")


class Schedule:
    def __init__(self, segments: Iterable[ScheduleSegment]):
        self.segments = sorted(segments, key=lambda s: s.start_t)
        if not self.segments:
            raise ScheduleError("empty schedule")
        if self.segments[0].start_t != 0:
            raise ScheduleError("schedule must start at t=0")
        for a, b in zip(self.segments, self.segments[1:]):
            if a.end_t != b.start_t:
                raise ScheduleError(f"segments [{a.start_t},{a.end_t}) and [{b.start_t},{b.end_t}) "
                                    "overlap or leave a hole")

    @property
    def end_t(self) -> float:
        return self.segments[-1].end_t

    def active_segment(self, t: float) -> ScheduleSegment:
        return active_segment(self, t)


def active_segment(schedule: Schedule, t: float) -> ScheduleSegment:
    if not 0 <= t < schedule.end_t:
        raise ScheduleError(f"t={t} outside session [0, {schedule.end_t})")
    for seg in schedule.segments:
        if seg.start_t <= t < seg.end_t:
            return seg
    raise AssertionError("partition invariant violated")


def paper_schedule() -> Schedule:
    """Three one-minute segments: $1.00-2.00, $1.50-2.50, $1.00-2.00."""
    return Schedule([
        ScheduleSegment(0, 60, 100, 200),
        ScheduleSegment(60, 120, 150, 250),
        ScheduleSegment(120, 180, 100, 200),
    ])


def tile_schedule(schedule: Schedule, duration: float) -> Schedule:
    """Repeat ``schedule`` back to back until it covers ``duration`` seconds."""
    if duration <= schedule.end_t:
        return schedule
    segs = []
    offset = 0.0
    while offset < duration:
        for seg in schedule.segments:
            if offset + seg.start_t >= duration:
                break
            segs.append(ScheduleSegment(offset + seg.start_t, min(offset + seg.end_t, duration),
                                        seg.range_low, seg.range_high, seg.stepmode))
        offset += schedule.end_t
    return Schedule(segs)


def _round_half_up(x: Fraction) -> int:
    return floor(x + Fraction(1, 2))


def limit_prices(lo: int, hi: int, n: int, stepmode: str = "fixed") -> List[int]:
    if lo > hi:
        raise ScheduleError(f"range low {lo} > high {hi}")
    if n < 1:
        raise ScheduleError("need at least one price")
    if stepmode != "fixed":
        raise ScheduleError(f"unsupported stepmode {stepmode!r}")
    if n == 1:
        return [_round_half_up(Fraction(lo + hi, 2))]
    step = Fraction(hi - lo, n - 1)
    return [_round_half_up(lo + i * step) for i in range(n)]


@dataclass(frozen=True)
class Equilibrium:
    price: Optional[int]
    quantity: int

    @property
    def no_trade(self) -> bool:
        return self.quantity == 0


def equilibrium(supply_limits: Sequence[int], demand_limits: Sequence[int]) -> Equilibrium:
    """Crossing of the step supply and demand curves.

    When the curves overlap over a price interval the midpoint is used.
    ``price`` is None (NoTrade) when no buyer's limit reaches any seller's.
    """
    if not supply_limits or not demand_limits:
        raise ScheduleError("supply and demand must be non-empty")
    s = sorted(supply_limits)
    d = sorted(demand_limits, reverse=True)
    q = 0
    while q < min(len(s), len(d)) and d[q] >= s[q]:
        q += 1
    if q == 0:
        return Equilibrium(None, 0)
    lo = s[q - 1]
    hi = d[q - 1]
    if q < len(d):
        lo = max(lo, d[q])
    if q < len(s):
        hi = min(hi, s[q])
    return Equilibrium(_round_half_up(Fraction(lo + hi, 2)), q)


def exponential_gaps(n: int, mean: float, rng: random.Random) -> List[float]:
    return [rng.expovariate(1.0 / mean) for _ in range(n)]


def issue_times(interval_start: float, interval_len: float, n_traders: int,
                rng: random.Random, mode: str = "drip-poisson") -> List[float]:
    """``n_traders`` sorted times in ``[interval_start, interval_start + interval_len)``.

    One extra gap is drawn so the partial sums can be scaled to the interval
    without the last arrival landing on its closing edge.
    """
    if interval_len <= 0:
        raise ScheduleError("interval_len must be positive")
    if mode != "drip-poisson":
        raise ScheduleError(f"unsupported update mode {mode!r}")
    if n_traders <= 0:
        return []
    gaps = exponential_gaps(n_traders + 1, interval_len / n_traders, rng)
    total = sum(gaps)
    times, acc = [], 0.0
    for g in gaps[:-1]:
        acc += g
        times.append(interval_start + interval_len * acc / total)
    return times


@dataclass(frozen=True)
class Assignment:
    trader_id: str
    side: Side
    limit: int
    qty: int
    issue_time: float
    expires: float


@dataclass(frozen=True)
class RosterEntry:
    strategy: str
    side: Side
    count: int


def paper_roster(per_type_per_side: int = 5) -> List[RosterEntry]:
    """GVWY/SHVR/SNPR/ZIC on both sides: 40 traders per client at the default size."""
    return [RosterEntry(strat, side, per_type_per_side)
            for side in (Side.ASK, Side.BID)
            for strat in ("GVWY", "SHVR", "SNPR", "ZIC")]


def trader_ids(roster: Sequence[RosterEntry]) -> List[Tuple[str, str, Side]]:
    """(trader_id, strategy, side); buyers are B00.., sellers S00.."""
    out = []
    counters = {Side.BID: 0, Side.ASK: 0}
    for entry in roster:
        for _ in range(entry.count):
            prefix = "B" if entry.side is Side.BID else "S"
            out.append((f"{prefix}{counters[entry.side]:02d}", entry.strategy, entry.side))
            counters[entry.side] += 1
    return out


def generate_assignments(schedule: Schedule, roster: Sequence[RosterEntry], interval_s: float,
                         seed: int, session_end: Optional[float] = None, qty: int = 1) -> List[Assignment]:
    """Full assignment stream for one client, sorted by issue time.

    Every trader receives exactly one assignment per interval. Within an
    interval each side's limit ranks are shuffled across its traders.
    """
    end = schedule.end_t if session_end is None else min(session_end, schedule.end_t)
    rng = random.Random(seed)
    traders = trader_ids(roster)
    by_side = {side: [t for t, _, s in traders if s is side] for side in (Side.BID, Side.ASK)}
    out: List[Assignment] = []
    start = 0.0
    while start < end:
        length = min(interval_s, end - start)
        for side in (Side.ASK, Side.BID):
            ids = by_side[side]
            if not ids:
                continue
            times = issue_times(start, length, len(ids), rng)
            who = ids[:]
            rng.shuffle(who)
            ranks = list(range(len(ids)))
            rng.shuffle(ranks)
            for tid, t, rank in zip(who, times, ranks):
                seg = schedule.active_segment(t)
                limit = limit_prices(seg.range_low, seg.range_high, len(ids))[rank]
                out.append(Assignment(tid, side, limit, qty, t, min(t + interval_s, end)))
        start += interval_s
    out.sort(key=lambda a: (a.issue_time, a.trader_id))
    return out
