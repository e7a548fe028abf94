import random
from collections import Counter

import pytest
from scipy import stats as sps

from distex.book import Side
from distex.scheduler import (RosterEntry, Schedule, ScheduleError, ScheduleSegment, equilibrium, exponential_gaps,
                              generate_assignments, issue_times, limit_prices, paper_roster, paper_schedule,
                              tile_schedule, trader_ids)
from oracles import brute_equilibrium

ISSUE_TIMES_SEED42 = [7.496098018170678, 7.682231585489617, 10.045744349768865, 11.90191974394824,
                      21.70206735913573]


def test_limit_prices_examples():
    assert limit_prices(100, 200, 5) == [100, 125, 150, 175, 200]
    assert limit_prices(100, 200, 1) == [150]
    twenty = limit_prices(100, 200, 20)
    assert twenty[0] == 100 and twenty[-1] == 200 and len(twenty) == 20
    steps = {b - a for a, b in zip(twenty, twenty[1:])}
    assert steps <= {5, 6}
    assert equilibrium(twenty, twenty).price == 150
    with pytest.raises(ScheduleError):
        limit_prices(200, 100, 3)


def test_limit_prices_round_half_up():
    # step 2.5: 1, 3.5, 6 -> 1, 4, 6
    assert limit_prices(1, 6, 3) == [1, 4, 6]
    assert limit_prices(1, 2, 1) == [2]


def test_equilibrium_examples():
    a = limit_prices(100, 200, 20)
    assert equilibrium(a, a).price == 150
    b = limit_prices(150, 250, 20)
    assert equilibrium(b, b).price == 200
    none = equilibrium([300] * 3, [100] * 3)
    assert none.no_trade and none.price is None


def test_equilibrium_matches_brute_force():
    rng = random.Random(99)
    for _ in range(3000):
        s = [rng.randint(1, 30) for _ in range(rng.randint(1, 8))]
        d = [rng.randint(1, 30) for _ in range(rng.randint(1, 8))]
        eq = equilibrium(s, d)
        p0, q0 = brute_equilibrium(s, d)
        assert (eq.price, eq.quantity) == (p0, q0), (s, d)
        if p0 is not None:
            assert min(sum(x <= p0 for x in s), sum(x >= p0 for x in d)) == q0


def test_issue_times_golden_and_bounds():
    assert issue_times(0, 30, 5, random.Random(42)) == ISSUE_TIMES_SEED42
    one = issue_times(60, 30, 1, random.Random(1))
    assert len(one) == 1 and 60 <= one[0] < 90
    rng = random.Random(5)
    for _ in range(500):
        ts = issue_times(30, 30, 20, rng)
        assert ts == sorted(ts) and all(30 <= t < 60 for t in ts)
    with pytest.raises(ScheduleError):
        issue_times(0, 0, 3, rng)


def test_gaps_are_exponential():
    rng = random.Random(7)
    gaps = []
    for _ in range(10_000):
        gaps.extend(exponential_gaps(3, 30 / 3, rng))
    p = sps.kstest(gaps, "expon", args=(0, 10.0)).pvalue
    assert p > 0.001


def test_active_segment_examples():
    sch = paper_schedule()
    assert (sch.active_segment(0).range_low, sch.active_segment(0).range_high) == (100, 200)
    assert (sch.active_segment(70).range_low, sch.active_segment(70).range_high) == (150, 250)
    assert (sch.active_segment(130).range_low, sch.active_segment(130).range_high) == (100, 200)
    with pytest.raises(ScheduleError):
        sch.active_segment(180)
    with pytest.raises(ScheduleError):
        sch.active_segment(-1)


def test_schedule_must_partition():
    with pytest.raises(ScheduleError):
        Schedule([ScheduleSegment(0, 60, 1, 2), ScheduleSegment(70, 80, 1, 2)])
    with pytest.raises(ScheduleError):
        Schedule([ScheduleSegment(10, 60, 1, 2)])
    with pytest.raises(ScheduleError):
        ScheduleSegment(0, 10, 5, 4)


def test_tile_schedule():
    t = tile_schedule(paper_schedule(), 600)
    assert t.end_t == 600
    assert [s.start_t for s in t.segments][:4] == [0, 60, 120, 180]
    assert t.active_segment(250).range_low == 150


def test_roster_ids():
    ids = trader_ids(paper_roster())
    assert len(ids) == 40
    assert sum(1 for _, _, s in ids if s is Side.BID) == 20
    assert Counter(strat for _, strat, _ in ids) == {"GVWY": 10, "SHVR": 10, "SNPR": 10, "ZIC": 10}
    assert ids[0][0] == "S00" and ids[20][0] == "B00"


def test_assignments_cadence_and_limits():
    sch = paper_schedule()
    roster = paper_roster()
    out = generate_assignments(sch, roster, 30, seed=3)
    per_interval = Counter((a.trader_id, int(a.issue_time // 30)) for a in out)
    assert len(per_interval) == 40 * 6 and set(per_interval.values()) == {1}
    for a in out:
        seg = sch.active_segment(a.issue_time)
        assert seg.range_low <= a.limit <= seg.range_high
        assert a.qty == 1 and a.expires > a.issue_time
    assert out == sorted(out, key=lambda a: (a.issue_time, a.trader_id))
    # each side's limits in an interval are the fixed spread over the active range
    first = [a for a in out if a.issue_time < 30 and a.side is Side.BID]
    assert sorted(a.limit for a in first) == limit_prices(100, 200, 20)


def test_assignments_are_seeded():
    sch, roster = paper_schedule(), paper_roster()
    assert generate_assignments(sch, roster, 30, 1) == generate_assignments(sch, roster, 30, 1)
    assert generate_assignments(sch, roster, 30, 1) != generate_assignments(sch, roster, 30, 2)


def test_session_end_truncates():
    out = generate_assignments(paper_schedule(), [RosterEntry("GVWY", Side.BID, 2)], 30, 1, session_end=45)
    assert max(a.issue_time for a in out) < 45
    assert all(a.expires <= 45 for a in out)
