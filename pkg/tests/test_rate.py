import pytest
from hypothesis import given, settings, strategies as st

from availoracle import config_from_dict
from availoracle.chain import Outcome, fork_choice
from availoracle.core import RateBlock, RateInterval, rate_genesis_block
from availoracle.pow import MAX_TARGET, Difficulty, TargetSchedule
from availoracle.rate import (
    RateProcess,
    RateView,
    centered_interval,
    format_rate,
    interval_reward,
    parse_rate,
    precision_strategy_sweep,
    rate_validator,
    run_rate_chain,
    validate_rate_block,
)

EASY = Difficulty(MAX_TARGET)


def rate_block(lo, hi, prev=None, key="m", epoch=1):
    prev = prev or rate_genesis_block(0)
    return RateBlock(epoch, RateInterval(parse_rate(lo), parse_rate(hi)), key, 0, prev.header_hash)


def test_parse_and_format():
    assert parse_rate("675") == 6_750_000
    assert parse_rate("0.0001") == 1
    assert format_rate(parse_rate("-1.5")) == "-1.5000"
    with pytest.raises(ValueError):
        parse_rate("1.00001")
    with pytest.raises(ValueError):
        parse_rate("abc")


@pytest.mark.parametrize("lo,hi,obs,ok", [
    ("650", "700", "675", True),
    ("650", "700", "710", False),
    ("675", "675", "675", True),
    ("650", "700", "650", True),
    ("650", "700", "700", True),
])
def test_interval_validity(lo, hi, obs, ok):
    v = validate_rate_block(rate_block(lo, hi), parse_rate(obs), EASY)
    assert v.ok is ok
    if not ok:
        assert v.outcome is Outcome.INTERVAL_MISS


def test_invalid_pow_reported_first():
    assert validate_rate_block(rate_block("0", "1"), 5, Difficulty(1)).outcome is Outcome.INVALID_POW


def test_reward_formula_points():
    s = parse_rate("20")
    assert interval_reward(RateInterval(5, 5), 1000, s) == 1000
    assert interval_reward(RateInterval(0, s), 1001, s) == 1001 // 2
    with pytest.raises(ValueError):
        interval_reward(RateInterval(0, 1), 10, 0)


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 10**7), st.integers(0, 10**7), st.integers(1, 10**6), st.integers(1, 10**6))
def test_reward_monotone_in_width(a, b, base, scale):
    if a > b:
        a, b = b, a
    ra = interval_reward(RateInterval(0, a), base, scale)
    rb = interval_reward(RateInterval(0, b), base, scale)
    assert ra >= rb
    exact_a, exact_b = base * scale / (scale + a), base * scale / (scale + b)
    if a < b and exact_a - exact_b >= 1:
        assert ra > rb


def test_centered_interval():
    iv = centered_interval(100, 10)
    assert (iv.lo, iv.hi, iv.width) == (95, 105, 10) and iv.contains(100)


def test_rate_process_deterministic_and_bounded():
    p = RateProcess(3, 1000, 10, 5)
    q = RateProcess(3, 1000, 10, 5)
    assert [p.true_rate(t) for t in range(50)] == [q.true_rate(t) for t in range(50)]
    assert all(abs(p.true_rate(t + 1) - p.true_rate(t)) <= 10 for t in range(49))
    assert all(abs(p.observe("n", t) - p.true_rate(t)) <= 5 for t in range(50))
    s = RateProcess(0, 0, 0, 0, series=[7, 8, 9])
    assert [s.true_rate(t) for t in range(5)] == [7, 8, 9, 9, 9]


def test_rate_validator_in_fork_choice():
    g = rate_genesis_block(0)
    sched = TargetSchedule(EASY)
    view = RateView("v", {1: parse_rate("675"), 2: parse_rate("675")})
    good = [g, rate_block("650", "700", g, "a")]
    bad1 = rate_block("700", "710", g, "b")
    bad = [g, bad1, rate_block("650", "700", bad1, "b", epoch=2)]
    assert fork_choice([good, bad], rate_validator(view, sched), 3, sched) is good


def _cfg(**rate):
    base = {"noise": "5.0", "volatility": "1.0"}
    base.update(rate)
    return config_from_dict({"mode": "rate", "seed": 2, "epochs": 30, "miners": [{"count": 10}], "rate": base})


def test_full_range_width_has_no_orphans():
    m, chain = run_rate_chain(_cfg(width="1000"))
    assert m.aggregates["orphan_rate"] == 0.0
    assert len(chain) == 31 and [b.epoch for b in chain] == list(range(31))


def test_zero_width_with_noise_orphans_nearly_everything():
    m, _ = run_rate_chain(_cfg(width="0", noise="5.0"))
    assert m.aggregates["orphan_rate"] > 0.8


def test_sweep_has_interior_maximum_of_paid_reward():
    cfg = _cfg()
    rows = precision_strategy_sweep(cfg, ["2", "10", "20", "40", "80"])
    paid = [r["paid_per_mined"] for r in rows]
    best = paid.index(max(paid))
    assert 0 < best < len(paid) - 1
    with pytest.raises(ValueError):
        precision_strategy_sweep(cfg, ["2"])
