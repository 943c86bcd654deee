"""Deterministic scenario execution and ground-truth scoring."""
from __future__ import annotations

import copy
import itertools
import os
from dataclasses import dataclass, field
from typing import Optional

from . import core
from .actors import (
    Env,
    InvariantViolation,
    MinerState,
    Phase,
    PoolSettings,
    StorerAgent,
    StorerKind,
    StorerStrategy,
    Strategy,
    end_epoch,
    judge,
    mine_round,
    miner_bootstrap,
    mining_race,
    prepare_epoch,
    receive_block,
)
from .chain import BlockTree, FeeLedger, WindowIndex, settle_chain
from .config import ScenarioConfig, config_from_dict, set_path
from .core import Datum, genesis_block
from .metrics import CLASSES, RunMetrics, emit_metrics
from .network import NetworkState, rng_for
from .pow import Difficulty, TargetSchedule

_CLASS_OF = {
    Strategy.HONEST: "honest",
    Strategy.LAZY: "lazy",
    Strategy.POOL_MEMBER: "pool",
}


def make_payload(seed: int, label: str, size: int) -> bytes:
    """Deterministic payload: ``label\\0`` followed by seeded filler up to ``size`` bytes."""
    head = label.encode() + b"\0"
    fill = max(0, size - len(head))
    return head + rng_for(seed, "payload", label).randbytes(fill)


def target_schedule(cfg: ScenarioConfig) -> TargetSchedule:
    return TargetSchedule(
        Difficulty.from_hex(cfg.target),
        {int(k): Difficulty.from_hex(v) for k, v in cfg.target_overrides.items()},
    )


@dataclass
class MinedBlock:
    block: object
    node: str
    klass: str
    epoch: int  # clock epoch in which it was broadcast


class Scenario:
    """One availability-mode run. Internals stay inspectable after :meth:`run`."""

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        core.set_hash(cfg.hash)
        self.schedule = target_schedule(cfg)
        self.genesis = genesis_block()
        self.index = WindowIndex(cfg.lag_c)
        self.mined: list[MinedBlock] = []
        self.blocks = {self.genesis.header_hash: self.genesis}
        self.storage: dict[int, dict[str, int]] = {}
        self.miner_class: dict[str, str] = {}
        self._build()

    # -- setup -------------------------------------------------------------------

    def _build(self):
        cfg = self.cfg
        self.storers: list[StorerAgent] = []
        self.labels: dict = {}
        for s in cfg.expanded_storers():
            datum = Datum.from_payload(make_payload(cfg.seed, s.label, s.size))
            strategy = StorerStrategy(StorerKind(s.strategy), s.reveal_offset, s.hide_epoch)
            agent = StorerAgent(f"s:{s.label}", s.label, datum, strategy, s.duration, s.fee, s.register_epoch)
            self.storers.append(agent)
            self.labels[s.label] = datum.id
        self.label_of = {v: k for k, v in self.labels.items()}

        self.roster = []  # (node, group)
        self.group_of: dict[str, str] = {}
        for gi, g in enumerate(cfg.miners):
            prefix = g.name or f"m{gi}"
            for k in range(g.count):
                self.roster.append((f"{prefix}.{k}", g))
                self.group_of[f"{prefix}.{k}"] = prefix
        operators = [f"op:{p.name}" for p in cfg.pools]
        relays = [f"r{i}" for i in range(cfg.relay_nodes)]
        nodes = [n for n, _ in self.roster] + operators + [a.node for a in self.storers] + relays
        self.network = NetworkState(
            nodes, epsilon=cfg.epsilon, lag_c=cfg.lag_c, seed=cfg.seed,
            upload_failure_rate=cfg.upload_failure_rate,
        )
        for node, g in self.roster:
            if g.blind_to:
                self.network.add_chronic_blindness(node, [self.labels[x] for x in g.blind_to])
        for p, op in zip(cfg.pools, operators):
            if p.operator_blind_to:
                self.network.add_chronic_blindness(op, [self.labels[x] for x in p.operator_blind_to])
        for lab in cfg.consistency_violation:
            self.network.inject_split(self.labels[lab])

        self.env = Env(self.network, self.index, self.schedule, cfg.lag_c, seed=cfg.seed)
        self.env.sizes = {a.datum.id: a.datum.size_bytes for a in self.storers}
        for p, op in zip(cfg.pools, operators):
            self.env.pools[p.name] = PoolSettings(p.name, op, p.members_choose_reports)

        weight = sum(g.hashrate for _, g in self.roster)
        self.total_weight = weight
        self.pending_joins: dict[int, list] = {}
        for op in operators:
            st = MinerState(op, self._tree(), Strategy.POOL_OPERATOR, 0.0, 0, phase=Phase.MINING)
            self.env.miners[op] = st
        for node, g in self.roster:
            strategy = Strategy(g.strategy)
            budget = max(1, round(cfg.nonces_per_round * g.hashrate / weight))
            self.miner_class[node] = _CLASS_OF[strategy]
            if g.join_epoch == 0:
                st = MinerState(node, self._tree(), strategy, g.hashrate, budget, g.pool, Phase.MINING)
                st.nonce = rng_for(cfg.seed, "nonce", node).getrandbits(64)
                self.env.miners[node] = st
            else:
                self.pending_joins.setdefault(g.join_epoch, []).append((node, g, strategy, budget))
        self.adversary = {}
        for a in cfg.adversary:
            self.adversary.setdefault(a.epoch, []).append(a)

    def _tree(self) -> BlockTree:
        return BlockTree(self.genesis, self.cfg.lag_c, self.schedule, self.index)

    # -- helpers ------------------------------------------------------------------

    @property
    def miners(self) -> list[MinerState]:
        return list(self.env.miners.values())

    def _mining(self) -> list[MinerState]:
        return [m for m in self.env.miners.values() if m.phase is Phase.MINING and m.budget > 0]

    def _follows_operator(self, m: MinerState) -> bool:
        return m.strategy is Strategy.POOL_MEMBER and not self.env.pools[m.pool].members_choose_reports

    def effective_tip(self, m: MinerState) -> bytes:
        if self._follows_operator(m):
            return self.env.miners[self.env.pools[m.pool].operator].tree.best
        return m.tree.best

    def _adopted_now(self, m: MinerState, t: int) -> bool:
        if self._follows_operator(m):
            return self.env.miners[self.env.pools[m.pool].operator].adopted_epoch == t
        return m.adopted_epoch == t

    def _chooses_own_reports(self, m: MinerState) -> bool:
        return m.strategy is Strategy.HONEST or (
            m.strategy is Strategy.POOL_MEMBER and not self._follows_operator(m)
        )

    # -- main loop -------------------------------------------------------------------

    def run(self) -> RunMetrics:
        cfg = self.cfg
        env = self.env
        for t in range(1, cfg.epochs + 1):
            self.network.step_epoch()
            env.epoch = t
            for agent in self.storers:
                reg = agent.act(t, self.network)
                if reg is not None:
                    env.mempool.append(reg)
                    env.known_ids.add(reg.datum_id)
            for a in self.adversary.get(t, ()):
                datum_id = self.labels[a.datum]
                if datum_id in self.network.payloads:
                    getattr(self.network, a.action)(datum_id)
            for node, g, strategy, budget in self.pending_joins.get(t, ()):
                known = [self.blocks[mb.block.header_hash] for mb in self.mined]
                st = miner_bootstrap(
                    node, self.network, [self.genesis] + known, env,
                    strategy=strategy, hashrate=g.hashrate, budget=budget, pool=g.pool,
                )
                env.miners[node] = st
            # operators first so pool members read a fresh operator view
            for m in sorted(env.miners.values(), key=lambda m: m.strategy is not Strategy.POOL_OPERATOR):
                prepare_epoch(m, env)
            self._check_obligations(t)
            self._race(t)
            for m in env.miners.values():
                end_epoch(m)
            self.storage[t] = {
                m.node: sum(env.sizes.get(x, 0) for x in m.local_store)
                for m in env.miners.values() if m.budget > 0
            }
            self.network.record()
            bad = [v for v in self.network.gap_violations() if v[1] == t]
            if bad:
                datum_id, epoch, frac = bad[0]
                raise InvariantViolation(
                    "consistency-gap",
                    f"datum {self.label_of.get(datum_id, datum_id.hex())} at epoch {epoch}: "
                    f"fraction {float(frac):.3f} outside lag window",
                )
        return self.score()

    def _check_obligations(self, t: int) -> None:
        for mb in self.mined:
            if mb.epoch != t - 1:
                continue
            m = self.env.miners[mb.node]
            if not self._chooses_own_reports(m):
                continue
            missing = [r.datum_id for r in mb.block.reports if r.datum_id not in m.local_store]
            if missing:
                raise InvariantViolation(
                    "report-obligation",
                    f"{m.node} reported {self.label_of.get(missing[0])} at {t - 1} but does not hold it at {t}",
                )

    def _race(self, t: int) -> None:
        env = self.env
        mining = self._mining()
        total = sum(m.hashrate for m in mining)
        if total == 0:
            raise InvariantViolation("liveness", f"epoch {t}: no mining hashrate online")

        def participates(m):
            return not self._adopted_now(m, t)

        def broadcast(winner, block):
            h = block.header_hash
            if self._chooses_own_reports(winner) and not judge(winner, block, env).ok:
                raise InvariantViolation("honest-self-consistency", f"{winner.node} at epoch {t}")
            self.blocks[h] = block
            self.mined.append(MinedBlock(block, winner.node, self.miner_class[winner.node], t))
            winner.mined.append(h)
            if self._chooses_own_reports(winner):
                # a tip switch mid-epoch can add reports this miner has not fetched yet
                for x in sorted(block.report_ids - winner.local_store):
                    if self.network.fetch(winner.node, x) is not None:
                        winner.local_store.add(x)
                for r in block.reports:
                    winner.obligations[r.datum_id] = max(winner.obligations.get(r.datum_id, 0), t + 1)
            for m in env.miners.values():
                receive_block(m, block, env, own=m is winner)

        def done():
            ahead = sum(m.hashrate for m in mining if self.blocks[self.effective_tip(m)].epoch >= t)
            return 2 * ahead > total

        mining_race(
            t, self.cfg.seed, mining,
            participates=participates,
            mine_one=lambda m: mine_round(m, env),
            broadcast=broadcast, done=done, max_rounds=self.cfg.max_rounds,
        )

    # -- scoring ---------------------------------------------------------------------

    def canonical_tip(self) -> bytes:
        weight: dict[bytes, float] = {}
        for m in self._mining():
            h = self.effective_tip(m)
            weight[h] = weight.get(h, 0.0) + m.hashrate
        if not weight:
            return self.genesis.header_hash
        pos = {mb.block.header_hash: i for i, mb in enumerate(self.mined)}
        work = self.miners[0].tree.work

        def key(h):
            return (-weight[h], -work.get(h, 0), pos.get(h, -1), h)

        return min(weight, key=key)

    def canonical_chain(self) -> list:
        h = self.canonical_tip()
        out = []
        while True:
            b = self.blocks[h]
            out.append(b)
            if h == self.genesis.header_hash:
                break
            h = b.prev_header_hash
        return out[::-1]

    def available(self, datum_id, t: int) -> bool:
        return self.network.is_publicly_available(datum_id, t).publicly_available

    def score(self) -> RunMetrics:
        cfg, c = self.cfg, self.cfg.lag_c
        chain = self.canonical_chain()
        canonical = {b.header_hash for b in chain}
        height = chain[-1].epoch
        confirmed_height = height - c
        ledger = FeeLedger(c)
        lab = lambda x: self.label_of.get(x, x.hex())  # noqa: E731

        mined_at: dict[int, dict[str, int]] = {}
        orphans_at: dict[int, dict[str, int]] = {}
        for mb in self.mined:
            mined_at.setdefault(mb.epoch, {}).setdefault(mb.klass, 0)
            mined_at[mb.epoch][mb.klass] += 1
            if mb.block.header_hash not in canonical:
                orphans_at.setdefault(mb.epoch, {}).setdefault(mb.klass, 0)
                orphans_at[mb.epoch][mb.klass] += 1

        per_datum = {
            a.label: {
                "id": a.datum.id.hex(), "strategy": a.strategy.kind.value,
                "confirmed_reports": 0, "sound_reports": 0, "required": 0, "hits": 0,
                "epochs_available": 0,
            }
            for a in self.storers
        }
        rows = []
        ledger.apply(chain[0], 0)
        for t in range(1, cfg.epochs + 1):
            block = chain[t] if t < len(chain) else None
            confirmed = block is not None and t <= confirmed_height
            row = {
                "epoch": t, "block_hash": "", "miner": "", "miner_class": "", "confirmed": confirmed,
                "reports": [], "registered": [], "available": [],
                "sound": 0, "unsound": 0, "required": 0, "hits": 0,
                "mined": {k: mined_at.get(t, {}).get(k, 0) for k in CLASSES},
                "orphans": {k: orphans_at.get(t, {}).get(k, 0) for k in CLASSES},
                "payout": 0, "refund": 0,
                "storage_bytes": dict(sorted(self.storage.get(t, {}).items())),
            }
            for a in self.storers:
                if self.available(a.datum.id, t):
                    row["available"].append(a.label)
                    per_datum[a.label]["epochs_available"] += 1
            if block is not None:
                registered = sorted({w.datum_id for w in ledger.active(t)})
                delta = ledger.apply(block, cfg.block_reward)
                row.update(
                    block_hash=block.header_hash.hex(), miner=block.reward_key,
                    miner_class=self.miner_class.get(block.reward_key, ""),
                    reports=sorted(lab(x) for x in block.report_ids),
                    registered=sorted(lab(x) for x in registered),
                    payout=delta.total_paid(), refund=delta.total_refunded(),
                )
                if confirmed:
                    both = {x for x in registered if self.available(x, t) and self.available(x, t + 1)}
                    for x in block.report_ids:
                        ok = self.available(x, t) and self.available(x, t + 1)
                        row["sound" if ok else "unsound"] += 1
                        d = per_datum.get(lab(x))
                        if d is not None:
                            d["confirmed_reports"] += 1
                            d["sound_reports"] += int(ok)
                    for x in both:
                        row["required"] += 1
                        hit = x in block.report_ids
                        row["hits"] += int(hit)
                        d = per_datum.get(lab(x))
                        if d is not None:
                            d["required"] += 1
                            d["hits"] += int(hit)
            rows.append(row)

        by_group: dict[str, dict] = {}
        for mb in self.mined:
            g = by_group.setdefault(self.group_of[mb.node], {"mined": 0, "orphans": 0})
            g["mined"] += 1
            g["orphans"] += mb.block.header_hash not in canonical
        for g in by_group.values():
            g["orphan_rate"] = g["orphans"] / g["mined"]
        sound = sum(r["sound"] for r in rows)
        unsound = sum(r["unsound"] for r in rows)
        required = sum(r["required"] for r in rows)
        hits = sum(r["hits"] for r in rows)
        mined_tot = {k: sum(r["mined"][k] for r in rows) for k in CLASSES}
        orph_tot = {k: sum(r["orphans"][k] for r in rows) for k in CLASSES}
        regs = []
        for w in ledger.windows:
            regs.append({
                "label": lab(w.datum_id), "registered_at": w.registered_at,
                "obligation_start": w.obligation_start, "obligation_end": w.obligation_end,
                "fee": w.registration.fee, "paid": ledger.paid[w], "refunded": ledger.refunded[w],
                "escrow": ledger.escrow(w),
            })
        errors = ledger.conservation_errors()
        aggregates = {
            "soundness_rate": sound / (sound + unsound) if sound + unsound else 1.0,
            "completeness_rate": hits / required if required else 1.0,
            "confirmed_reports": sound + unsound,
            "sound_reports": sound,
            "required": required,
            "complete_hits": hits,
            "mined": mined_tot,
            "orphans": orph_tot,
            "orphan_rate": {k: orph_tot[k] / mined_tot[k] if mined_tot[k] else 0.0 for k in CLASSES},
            "by_group": dict(sorted(by_group.items())),
            "fee_conservation_ok": not errors,
            "fee_conservation_errors": errors,
            "total_fees": sum(r["fee"] for r in regs),
            "total_fees_paid": sum(r["paid"] for r in regs),
            "total_refunded": sum(r["refunded"] for r in regs),
            "escrow_remaining": sum(r["escrow"] for r in regs),
            "confirmed_height": max(confirmed_height, 0),
        }
        return RunMetrics(
            mode="availability", seed=cfg.seed, epochs=cfg.epochs, lag_c=c,
            final_tip=chain[-1].header_hash.hex(), final_height=height,
            aggregates=aggregates, per_epoch=rows, per_datum=per_datum,
            registrations=regs, payouts=dict(sorted(ledger.balances.items())),
        )

    def export_snapshot(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(core.encode_snapshot(self.canonical_chain()))


def run_scenario(cfg: ScenarioConfig) -> RunMetrics:
    if cfg.mode == "rate":
        from .rate import run_rate_chain

        core.set_hash(cfg.hash)
        return run_rate_chain(cfg)[0]
    return Scenario(cfg).run()


def replay_snapshot(blocks: list, cfg: ScenarioConfig) -> dict:
    """Re-verify an exported canonical chain and recompute its ledger."""
    from .chain import _check_linked
    from .pow import verify_pow

    core.set_hash(cfg.hash)
    if not blocks or blocks[0].header_hash != (
        genesis_block() if blocks[0].kind == core.KIND_AVAILABILITY else blocks[0]
    ).header_hash:
        raise ValueError("snapshot does not start at the genesis block")
    _check_linked(blocks)
    schedule = target_schedule(cfg)
    bad = [b.epoch for b in blocks[1:] if not verify_pow(b, schedule.at(b.epoch))]
    if bad:
        raise ValueError(f"proof-of-work fails at epochs {bad[:5]}")
    out = {"final_tip": blocks[-1].header_hash.hex(), "height": blocks[-1].epoch}
    if blocks[0].kind == core.KIND_AVAILABILITY:
        ledger = settle_chain(blocks, cfg.block_reward, cfg.lag_c)
        out["fee_conservation_ok"] = not ledger.conservation_errors()
        out["balances"] = dict(sorted(ledger.balances.items()))
    return out


def sweep(base: ScenarioConfig, grid: dict, seeds: Optional[list] = None) -> list[dict]:
    """Run every cell of ``grid`` (dotted path -> values) under each seed.

    Failing cells are reported with an ``error`` entry; the rest still run.
    """
    if not grid:
        raise ValueError("sweep grid must not be empty")
    seeds = list(seeds) if seeds else [base.seed]
    keys = sorted(grid)
    rows = []
    raw = base.to_dict()
    raw.pop("sweep", None)
    for values in itertools.product(*(grid[k] for k in keys)):
        for seed in seeds:
            data = copy.deepcopy(raw)
            for k, v in zip(keys, values):
                set_path(data, k, v)
            data["seed"] = seed
            row = {"seed": seed, **dict(zip(keys, values))}
            try:
                m = run_scenario(config_from_dict(data))
                row.update(_summary(m))
            except (InvariantViolation, ValueError) as exc:
                row["error"] = str(exc)
            rows.append(row)
    return rows


def _summary(m: RunMetrics) -> dict:
    a = m.aggregates
    if m.mode == "rate":
        return {k: a[k] for k in ("orphan_rate", "mean_reward_per_block", "paid_per_mined", "mined", "canonical_blocks")} | {
            "final_tip": m.final_tip
        }
    out = {
        "soundness_rate": a["soundness_rate"],
        "completeness_rate": a["completeness_rate"],
        "fee_conservation_ok": a["fee_conservation_ok"],
        "final_tip": m.final_tip,
    }
    for k in CLASSES:
        out[f"orphan_rate_{k}"] = a["orphan_rate"][k]
        out[f"mined_{k}"] = a["mined"][k]
    return out


def write_run(cfg: ScenarioConfig, out_dir: str, fmt: str) -> RunMetrics:
    """Run, then write metrics (json or csv) plus the canonical chain snapshot."""
    os.makedirs(out_dir, exist_ok=True)
    if cfg.mode == "rate":
        from .rate import run_rate_chain

        core.set_hash(cfg.hash)
        metrics, chain = run_rate_chain(cfg)
    else:
        sc = Scenario(cfg)
        metrics = sc.run()
        chain = sc.canonical_chain()
    emit_metrics(metrics, fmt, os.path.join(out_dir, f"metrics.{fmt}"))
    with open(os.path.join(out_dir, "chain.snapshot"), "wb") as fh:
        fh.write(core.encode_snapshot(chain))
    return metrics
