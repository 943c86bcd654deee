from fractions import Fraction

import pytest

from availoracle.core import Datum, hash_datum
from availoracle.network import NetworkState, UnknownDatum, rng_for

NODES = [f"n{i}" for i in range(20)]


def net(**kw):
    kw.setdefault("epsilon", 0.05)
    kw.setdefault("lag_c", 3)
    kw.setdefault("seed", 1)
    return NetworkState(NODES, **kw)


def propagate(n, epochs):
    for _ in range(epochs):
        n.step_epoch()


def test_rng_for_streams_are_independent_and_stable():
    assert rng_for(1, "a", 2).random() == rng_for(1, "a", 2).random()
    assert rng_for(1, "a", 2).random() != rng_for(1, "a", 3).random()


def test_publish_fetch_roundtrip():
    n = net()
    d = Datum.from_payload(b"hello")
    assert n.publish("n0", d.payload) == d.id == hash_datum(b"hello")
    propagate(n, 3)
    fetcher = next(x for x in NODES[1:] if n.sees(x, d.id))
    assert n.fetch(fetcher, d.id) == d.payload
    assert n.holds(fetcher, d.id)


def test_publish_then_lag_is_publicly_available():
    n = net()
    x = n.publish("n0", b"p")
    assert not n.is_publicly_available(x).publicly_available
    propagate(n, 3)
    s = n.is_publicly_available(x)
    assert s.publicly_available and s.fraction_holding == Fraction(19, 20)


def test_closed_threshold_at_one_minus_epsilon():
    n = net()
    x = n.publish("n0", b"p")
    propagate(n, 3)
    assert n.is_publicly_available(x).fraction_holding == 1 - n.epsilon
    assert n.public_now(x)


def test_all_hold_and_none_hold():
    n = net(epsilon=0)
    x = n.publish("n0", b"p")
    for node in NODES:
        n._add_holder(node, x)
    assert n.is_publicly_available(x).fraction_holding == 1
    y = hash_datum(b"never")
    s = n.is_publicly_available(y)
    assert s.fraction_holding == 0 and not s.publicly_available


def test_identical_payload_is_idempotent():
    n = net()
    a = n.publish("n0", b"same")
    propagate(n, 1)
    flood = n.floods[a]
    assert n.publish("n0", b"same") == a
    assert n.holders[a] == {"n0"} and n.floods[a] is flood


def test_fetch_never_published_is_absent():
    n = net()
    assert n.fetch("n1", hash_datum(b"ghost")) is None


def test_fetch_requires_directory_availability():
    n = net()
    x = n.publish("n0", b"p")
    n.step_epoch()
    early = [node for node in NODES[1:] if n.sees(node, x)]
    assert early and not n.public_now(x)
    assert n.fetch(early[0], x) is None


def test_blind_minority_fails_while_majority_succeeds():
    n = net()
    x = n.publish("n0", b"p")
    propagate(n, 3)
    results = {node: n.fetch(node, x) is not None for node in NODES}
    ok = sum(results.values())
    assert ok >= (1 - n.epsilon) * len(NODES)
    blind = n.blind_set(x)
    assert len(blind) == int(n.epsilon * len(NODES))
    assert all(not results[b] for b in blind if b != "n0")


def test_step_without_uploads_keeps_holdings():
    n = net()
    x = n.publish("n0", b"p")
    propagate(n, 4)
    before = {k: set(v) for k, v in n.holders.items()}
    n.step_epoch()
    assert n.holders == before


def test_flood_completes_at_lag_boundary():
    n = net()
    x = n.publish("n0", b"p")
    fractions = []
    for _ in range(3):
        n.step_epoch()
        fractions.append(n._fraction_now(x))
    assert fractions[-1] >= 1 - n.epsilon
    assert fractions == sorted(fractions)


def test_withhold_before_any_fetch_drops_fraction():
    n = net()
    x = n.publish("n0", b"p")
    n.step_epoch()
    n.withhold(x)
    n.step_epoch()
    assert n.is_publicly_available(x).fraction_holding <= n.epsilon


def test_withhold_mid_propagation_leaves_it_unavailable():
    n = net()
    x = n.publish("n0", b"p")
    n.step_epoch()
    n.withhold(x)
    propagate(n, 3)
    assert not n.is_publicly_available(x).publicly_available


def test_withhold_after_miner_fetch_stays_available():
    n = net()
    x = n.publish("n0", b"p")
    propagate(n, 3)
    miner = next(node for node in NODES[1:] if n.sees(node, x))
    assert n.fetch(miner, x) is not None
    n.withhold(x)
    for _ in range(n.lag_c):
        n.step_epoch()
        assert n.is_publicly_available(x).publicly_available
    assert not n.holds("n0", x) and n.holds(miner, x)


def test_release_after_withhold_is_a_fresh_publish():
    n = net()
    x = n.publish("n0", b"p")
    propagate(n, 3)
    n.withhold(x)
    propagate(n, 2)
    n.release(x)
    assert n.floods[x].start == n.epoch
    assert not n.public_now(x)
    propagate(n, 3)
    assert n.public_now(x)


def test_scheduled_withhold_and_unknown_datum():
    n = net()
    x = n.publish("n0", b"p")
    n.withhold(x, from_epoch=2)
    n.step_epoch()
    assert n.holds("n0", x)
    n.step_epoch()
    assert not n.holds("n0", x)
    with pytest.raises(UnknownDatum):
        n.withhold(hash_datum(b"nope"))


def test_upload_failure_means_no_propagation():
    n = net(upload_failure_rate=1.0)
    x = n.publish("n0", b"p")
    propagate(n, 5)
    assert n.is_publicly_available(x).fraction_holding == Fraction(1, 20)


def test_chronic_blindness_counts_toward_quota():
    n = net()
    x = hash_datum(b"p")
    n.add_chronic_blindness("n5", [x])
    n.publish("n0", b"p")
    propagate(n, 3)
    assert n.blind_set(x) == {"n5"}
    assert not n.sees("n5", x)


def test_gap_property_and_split_violation():
    n = net()
    xs = [n.publish(f"n{i}", f"d{i}".encode()) for i in range(5)]
    propagate(n, 12)
    n.record()
    assert n.gap_violations() == []
    m = net()
    y = hash_datum(b"split")
    m.inject_split(y)
    m.publish("n0", b"split")
    propagate(m, 5)
    m.record()
    assert m.gap_violations()


def test_future_epoch_cannot_be_sampled():
    n = net()
    with pytest.raises(ValueError):
        n.is_publicly_available(hash_datum(b"p"), 3)


def test_bad_parameters():
    with pytest.raises(ValueError):
        NetworkState(["a", "a"])
    with pytest.raises(ValueError):
        NetworkState(NODES, epsilon=0.5)
    with pytest.raises(ValueError):
        net().publish("stranger", b"p")
