import random
import socket
import time

import pytest
from hypothesis import given, settings, strategies as st

from distex.marketdata import (FeedClient, FeedReceiver, MarketDataSnapshot, Publisher, SeqStatus, SnapshotError,
                               UdpUnicastSender, check_gap, decode_snapshot, encode_snapshot, open_feed_socket)
from oracles import read_snapshot_fields

# bid (150, 5) only, seq 1, send_ts 2019-01-01T00:00:00Z in microseconds
GOLDEN_BID_ONLY = bytes.fromhex(
    "44424d44" "01" "01" "0000000000000001" "00057e5a35e66000" "58595a0000000000" "01" "00"
    "00000096" "00000005" "0000000000000000")


def test_golden_bid_only_bytes():
    snap = MarketDataSnapshot(1, 1_546_300_800_000_000, "XYZ", bids=((150, 5),))
    data = encode_snapshot(snap)
    assert data == GOLDEN_BID_ONLY
    f = read_snapshot_fields(data)
    assert f["magic"] == b"DBMD" and f["version"] == 1 and f["flags"] == 0b001
    assert f["seq"] == 1 and f["send_ts"] == 1_546_300_800_000_000
    assert f["bids"] == [(150, 5)] and f["asks"] == [] and f["length"] == len(data)
    assert decode_snapshot(data) == snap


def test_empty_snapshot_roundtrip():
    snap = MarketDataSnapshot(1, 0, "XYZ")
    data = encode_snapshot(snap)
    f = read_snapshot_fields(data)
    assert f["flags"] == 0 and f["n_bids"] == 0 and f["n_asks"] == 0
    assert decode_snapshot(data) == snap


levels = st.lists(st.tuples(st.integers(1, 2**32 - 1), st.integers(1, 2**32 - 1)), max_size=5).map(tuple)


@settings(max_examples=300, deadline=None)
@given(st.integers(1, 2**64 - 1), st.integers(0, 2**64 - 1), st.text("ABCXYZ", min_size=1, max_size=8), levels, levels,
       st.one_of(st.none(), st.tuples(st.integers(1, 2**32 - 1), st.integers(0, 2**64 - 1))), st.integers(0, 2**64 - 1))
def test_roundtrip_property(seq, ts, sym, bids, asks, last, vol):
    snap = MarketDataSnapshot(seq, ts, sym, bids, asks, last, vol)
    data = encode_snapshot(snap)
    assert len(data) <= 1200
    assert decode_snapshot(data) == snap
    f = read_snapshot_fields(data)
    assert f["flags"] == (bool(bids) | bool(asks) << 1 | (last is not None) << 2)
    assert f["cum_volume"] == vol


def test_encode_rejects_deep_book():
    with pytest.raises(SnapshotError):
        encode_snapshot(MarketDataSnapshot(1, 0, "XYZ", bids=tuple((p, 1) for p in range(6, 0, -1))))


@pytest.mark.parametrize("mutate", [
    lambda d: b"XXXX" + d[4:],
    lambda d: d[:4] + b"\x02" + d[5:],
    lambda d: d[:-1],
    lambda d: d[:10],
    lambda d: b"",
    lambda d: d + b"\x00",
    lambda d: d[:5] + b"\x00" + d[6:],
])
def test_decode_rejects_bad_datagrams(mutate):
    with pytest.raises(SnapshotError):
        decode_snapshot(mutate(GOLDEN_BID_ONLY))


def test_decode_never_crashes_on_garbage():
    rng = random.Random(3)
    for _ in range(2000):
        data = bytes(rng.randrange(256) for _ in range(rng.randrange(60)))
        try:
            decode_snapshot(data)
        except SnapshotError:
            pass


@pytest.mark.parametrize("last,incoming,status,missed", [
    (5, 6, SeqStatus.CONTINUOUS, 0), (5, 9, SeqStatus.GAP, 3), (5, 5, SeqStatus.DUPLICATE, 0),
    (5, 2, SeqStatus.DUPLICATE, 0), (0, 1, SeqStatus.CONTINUOUS, 0)])
def test_check_gap(last, incoming, status, missed):
    c = check_gap(last, incoming)
    assert c.status is status and c.missed == missed


def test_receiver_never_rolls_back():
    rx = FeedReceiver()
    out = []
    for seq in [1, 2, 5, 3, 5, 6]:
        snap, _ = rx.accept(encode_snapshot(MarketDataSnapshot(seq, 0, "XYZ")))
        out.append(None if snap is None else snap.seq)
    assert out == [1, 2, 5, None, None, 6]
    assert rx.gaps == 1 and rx.missed == 2 and rx.stale == 2
    assert rx.latest.seq == 6


def _clients(n, delays=None):
    delays = delays or [0.0] * n
    return [FeedClient(("127.0.0.1", 1 + i), i + 1, delays[i], f"c{i + 1}") for i in range(n)]


def test_publisher_orders_sends_and_stamps_once():
    sent = []
    ticks = iter(range(100, 1000, 7))
    pub = Publisher(list(reversed(_clients(3))), lambda c, d: sent.append((c.ordinal, d)),
                    clock_us=lambda: 42, clock_ns=lambda: next(ticks))
    recs = pub.publish(MarketDataSnapshot(1, 0, "XYZ"))
    assert [r.client.ordinal for r in recs] == [1, 2, 3]
    stamps = [r.send_initiated_ns for r in recs]
    assert stamps == sorted(stamps) and len(set(stamps)) == 3
    assert [o for o, _ in sent] == [1, 2, 3]
    assert {decode_snapshot(d).send_ts for _, d in sent} == {42}
    with pytest.raises(ValueError):
        pub.publish(MarketDataSnapshot(3, 0, "XYZ"))


def test_publisher_defers_only_delayed_client():
    sent, deferred = [], []
    pub = Publisher(_clients(2, [0.0, 135.0]), lambda c, d: sent.append(c.ordinal),
                    defer=lambda delay, fn: deferred.append((delay, fn)))
    pub.publish(MarketDataSnapshot(1, 0, "XYZ"))
    assert sent == [1]
    assert [d for d, _ in deferred] == [0.135]
    deferred[0][1]()
    assert sent == [1, 2]


def test_publisher_survives_socket_error():
    sent = []

    def send(client, data):
        if client.ordinal == 1:
            raise OSError("unreachable")
        sent.append(client.ordinal)

    Publisher(_clients(3), send).publish(MarketDataSnapshot(1, 0, "XYZ"))
    assert sent == [2, 3]


def test_ordinals_must_be_permutation():
    with pytest.raises(ValueError):
        Publisher([FeedClient(("h", 1), 2)], lambda c, d: None)


def test_unicast_loopback_latency_is_small():
    rx = open_feed_socket(("127.0.0.1", 0))
    rx.setblocking(True)
    rx.settimeout(2.0)
    addr = rx.getsockname()
    sender = UdpUnicastSender()
    try:
        pub = Publisher([FeedClient(addr, 1)], sender)
        lat = []
        for _ in range(20):
            pub.publish(MarketDataSnapshot(pub.seq + 1, 0, "XYZ"))
            data = rx.recv(2048)
            recv = time.time_ns() // 1000
            lat.append((recv - decode_snapshot(data).send_ts) / 1000.0)
        assert sorted(lat)[10] < 5.0
    finally:
        sender.close()
        rx.close()
