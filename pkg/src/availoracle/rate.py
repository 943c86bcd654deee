"""Exchange-rate interval mode.

Blocks carry a closed rate interval instead of availability reports. A block
is valid for a node iff its proof-of-work checks out and the node's own
observation of the rate falls inside the interval. Narrower intervals earn
more: ``floor(base * s / (s + width))``.

Rates are fixed-point integers in units of 1e-4.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from typing import Optional

from .chain import VALID, BlockTree, Outcome, Verdict, WindowIndex
from .core import RateBlock, RateInterval, rate_genesis_block
from .network import rng_for
from .pow import Difficulty, TargetSchedule, mine, verify_pow

SCALE = 10_000


def parse_rate(text: str) -> int:
    try:
        d = Decimal(str(text))
    except InvalidOperation as exc:
        raise ValueError(f"bad rate {text!r}") from exc
    q = d * SCALE
    if q != q.to_integral_value():
        raise ValueError(f"rate {text!r} has more than 4 decimal places")
    return int(q)


def format_rate(value: int) -> str:
    sign = "-" if value < 0 else ""
    value = abs(value)
    return f"{sign}{value // SCALE}.{value % SCALE:04d}"


@dataclass
class RateView:
    node: str
    observed_rate: dict = field(default_factory=dict)  # epoch -> fixed-point rate


def validate_rate_block(block: RateBlock, observed_rate: int, target: Difficulty) -> Verdict:
    if not verify_pow(block, target):
        return Verdict(Outcome.INVALID_POW)
    if not block.interval.contains(observed_rate):
        return Verdict(Outcome.INTERVAL_MISS)
    return VALID


def interval_reward(interval: RateInterval, base_reward: int, scale: int) -> int:
    if scale <= 0:
        raise ValueError("scale must be positive")
    return base_reward * scale // (scale + interval.width)


def centered_interval(observed: int, width: int) -> RateInterval:
    lo = observed - width // 2
    return RateInterval(lo, lo + width)


class RateProcess:
    """True rate per epoch (explicit series or seeded random walk) and noisy
    per-node observations, uniform within +-noise."""

    def __init__(self, seed: int, start: int, volatility: int, noise: int, series: Optional[list] = None):
        self.seed = seed
        self.start = start
        self.volatility = volatility
        self.noise = noise
        self.series = list(series or [])
        self._true = {0: series[0] if self.series else start}

    def true_rate(self, t: int) -> int:
        if self.series:
            return self.series[min(t, len(self.series) - 1)]
        while t not in self._true:
            k = max(self._true) + 1
            step = rng_for(self.seed, "rate", k).randint(-self.volatility, self.volatility)
            self._true[k] = self._true[k - 1] + step
        return self._true[t]

    def observe(self, node: str, t: int) -> int:
        return self.true_rate(t) + rng_for(self.seed, "obs", node, t).randint(-self.noise, self.noise)


@dataclass
class RateMiner:
    node: str
    tree: BlockTree
    width: int
    hashrate: float
    budget: int
    view: RateView
    nonce: int = 0
    adopted_epoch: int = -1
    _candidate: tuple = (None, None)

    def candidate(self, epoch: int) -> RateBlock:
        key = (self.tree.best, epoch)
        if self._candidate[0] != key:
            parent = self.tree.tip()
            interval = centered_interval(self.view.observed_rate[epoch], self.width)
            body = RateBlock(parent.epoch + 1, interval, self.node, 0, parent.header_hash)
            self._candidate = (key, body)
        return self._candidate[1]

    def receive(self, block: RateBlock, epoch: int, schedule: TargetSchedule, own: bool = False) -> Verdict:
        if block.prev_header_hash not in self.tree:
            return Verdict(Outcome.UNKNOWN_PARENT)
        parent = self.tree.blocks[block.prev_header_hash]
        if own:
            verdict = VALID
        elif block.epoch != parent.epoch + 1:
            verdict = Verdict(Outcome.UNKNOWN_PARENT)
        else:
            verdict = validate_rate_block(block, self.view.observed_rate[epoch], schedule.at(block.epoch))
        if self.tree.add(block, verdict):
            self.adopted_epoch = epoch
        return verdict


def rate_validator(view: RateView, schedule: TargetSchedule):
    """Adapter for :func:`availoracle.chain.fork_choice`; judges each block with
    the node's observation at the block's epoch."""

    def validate(block, parent_chain):
        if not parent_chain or block.prev_header_hash != parent_chain[-1].header_hash:
            return Verdict(Outcome.UNKNOWN_PARENT)
        return validate_rate_block(block, view.observed_rate[block.epoch], schedule.at(block.epoch))

    return validate


def run_rate_chain(cfg, width: Optional[int] = None):
    """Run the rate-mode chain described by ``cfg``; returns RunMetrics."""
    from .actors import mining_race
    from .metrics import RunMetrics

    seed, c = cfg.seed, cfg.lag_c
    r = cfg.rate
    width = parse_rate(r.width) if width is None else width
    scale = parse_rate(r.scale)
    process = RateProcess(
        seed, parse_rate(r.start_rate), parse_rate(r.volatility), parse_rate(r.noise),
        [parse_rate(v) for v in r.series],
    )
    schedule = TargetSchedule(
        Difficulty.from_hex(cfg.target),
        {k: Difficulty.from_hex(v) for k, v in cfg.target_overrides.items()},
    )
    genesis = rate_genesis_block(process.true_rate(0))
    index = WindowIndex(c)

    weights = []
    for g_i, g in enumerate(cfg.miners):
        for k in range(g.count):
            weights.append((f"{g.name or 'm'}{g_i}.{k}", g.hashrate))
    total_w = sum(w for _, w in weights)
    miners = []
    for node, w in weights:
        budget = max(1, round(cfg.nonces_per_round * w / total_w))
        m = RateMiner(node, BlockTree(genesis, c, schedule, index), width, w, budget, RateView(node))
        m.nonce = rng_for(seed, "nonce", node).getrandbits(64)
        miners.append(m)

    mined_by: dict[bytes, tuple[str, int]] = {}
    blocks: dict[bytes, RateBlock] = {genesis.header_hash: genesis}
    order: list[bytes] = []

    for t in range(1, cfg.epochs + 1):
        for m in miners:
            m.view.observed_rate[t] = process.observe(m.node, t)

        def mine_one(m):
            body = m.candidate(t)
            found = mine(body, schedule.at(body.epoch), m.nonce, m.budget)
            if found is None:
                m.nonce = (m.nonce + m.budget) % 2**64
                return None
            m.nonce = (found + 1) % 2**64
            return body.with_nonce(found)

        def broadcast(winner, block):
            h = block.header_hash
            blocks[h] = block
            mined_by[h] = (winner.node, t)
            order.append(h)
            for other in miners:
                other.receive(block, t, schedule, own=other is winner)

        def done():
            ahead = sum(m.hashrate for m in miners if m.tree.tip().epoch >= t)
            return 2 * ahead > total_w

        mining_race(
            t, seed, miners,
            participates=lambda m: m.adopted_epoch != t,
            mine_one=mine_one, broadcast=broadcast, done=done,
            max_rounds=cfg.max_rounds,
        )

    tip = _canonical_tip(miners, blocks, order)
    chain = miners[0].tree.chain(tip)
    canonical = {b.header_hash for b in chain}
    per_epoch = []
    by_epoch = {b.epoch: b for b in chain[1:]}
    total_reward = 0
    for t in range(1, cfg.epochs + 1):
        b = by_epoch.get(t)
        mined_t = sum(1 for h in order if mined_by[h][1] == t)
        orphans_t = sum(1 for h in order if mined_by[h][1] == t and h not in canonical)
        row = {
            "epoch": t,
            "true_rate": format_rate(process.true_rate(t)),
            "block_hash": b.header_hash.hex() if b else "",
            "miner": b.reward_key if b else "",
            "lo": format_rate(b.interval.lo) if b else "",
            "hi": format_rate(b.interval.hi) if b else "",
            "reward": interval_reward(b.interval, r.base_reward, scale) if b else 0,
            "mined": mined_t,
            "orphans": orphans_t,
        }
        total_reward += row["reward"]
        per_epoch.append(row)
    n_mined = len(order)
    n_orphan = sum(1 for h in order if h not in canonical)
    n_canon = len(chain) - 1
    aggregates = {
        "width": format_rate(width),
        "mined": n_mined,
        "orphans": n_orphan,
        "orphan_rate": n_orphan / n_mined if n_mined else 0.0,
        "canonical_blocks": n_canon,
        "total_reward": total_reward,
        "mean_reward_per_block": total_reward / n_canon if n_canon else 0.0,
        "paid_per_mined": total_reward / n_mined if n_mined else 0.0,
    }
    return RunMetrics(
        mode="rate", seed=seed, epochs=cfg.epochs, lag_c=c,
        final_tip=tip.hex(), final_height=chain[-1].epoch,
        aggregates=aggregates, per_epoch=per_epoch,
    ), chain


def _canonical_tip(miners, blocks, order) -> bytes:
    weight: dict[bytes, float] = {}
    for m in miners:
        weight[m.tree.best] = weight.get(m.tree.best, 0.0) + m.hashrate
    pos = {h: i for i, h in enumerate(order)}
    work = miners[0].tree.work

    def key(h):
        return (-weight[h], -work.get(h, 0), pos.get(h, -1), h)

    return min(weight, key=key)


def precision_strategy_sweep(cfg, widths) -> list[dict]:
    """Run the rate chain once per width under the same seed."""
    if len(widths) < 2:
        raise ValueError("need at least two widths")
    rows = []
    for w in widths:
        value = parse_rate(w) if isinstance(w, str) else int(w)
        metrics, _ = run_rate_chain(cfg, width=value)
        rows.append(dict(metrics.aggregates))
    return rows
