"""Miner and storer state machines driven by the scenario scheduler."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from .chain import VALID, BlockTree, Verdict, WindowIndex, check_block
from .core import Block, Datum, DatumId, Registration, Report, genesis_block
from .network import NetworkState, rng_for
from .pow import TargetSchedule, mine


class InvariantViolation(RuntimeError):
    """A model invariant failed at runtime. ``name`` identifies which one."""

    def __init__(self, name: str, detail: str = ""):
        super().__init__(f"{name}: {detail}" if detail else name)
        self.name = name


class Phase(enum.Enum):
    SYNCING = "Syncing"
    OBSERVING = "Observing"
    MINING = "Mining"


class Strategy(enum.Enum):
    HONEST = "honest"
    LAZY = "lazy"
    POOL_MEMBER = "pool_member"
    POOL_OPERATOR = "pool_operator"


@dataclass
class Env:
    """Everything the actors may read; owned by the scheduler."""

    network: NetworkState
    index: WindowIndex
    schedule: TargetSchedule
    c: int
    seed: int = 0
    epoch: int = 0
    mempool: list = field(default_factory=list)  # Registration, arrival order
    miners: dict = field(default_factory=dict)  # node -> MinerState
    pools: dict = field(default_factory=dict)  # name -> PoolSettings
    known_ids: set = field(default_factory=set)  # every registered datum id seen so far
    sizes: dict = field(default_factory=dict)  # datum id -> bytes
    bootstrap_epochs: Optional[int] = None


@dataclass
class PoolSettings:
    name: str
    operator: str
    members_choose_reports: bool = False


@dataclass
class MinerState:
    node: str
    tree: BlockTree
    strategy: Strategy = Strategy.HONEST
    hashrate: float = 1.0
    budget: int = 0
    pool: Optional[str] = None
    phase: Phase = Phase.SYNCING
    observe_left: int = 0
    local_store: set = field(default_factory=set)
    views: dict = field(default_factory=dict)  # epoch -> frozenset of visible ids
    nonce: int = 0
    adopted_epoch: int = -1  # last epoch in which the tip changed
    mined: list = field(default_factory=list)
    obligations: dict = field(default_factory=dict)  # datum id -> last epoch it must be served
    _candidate: tuple = (None, None)

    @property
    def tip(self):
        return self.tree.tip()

    def view(self, epoch: int) -> frozenset:
        return self.views.get(epoch, frozenset())


# -- storers ---------------------------------------------------------------------

class StorerKind(enum.Enum):
    HONEST_PUBLISH = "honest"
    NEVER_PUBLISH = "never"
    LATE_REVEAL = "late_reveal"
    PUBLISH_THEN_HIDE = "publish_then_hide"


@dataclass(frozen=True)
class StorerStrategy:
    kind: StorerKind = StorerKind.HONEST_PUBLISH
    reveal_offset: int = 0
    hide_epoch: Optional[int] = None

    def check(self, lag_c: int) -> None:
        if self.kind is StorerKind.LATE_REVEAL and not 0 <= self.reveal_offset < lag_c:
            raise ValueError("reveal_offset must lie in [0, lag_c)")
        if self.kind is StorerKind.PUBLISH_THEN_HIDE and self.hide_epoch is None:
            raise ValueError("publish_then_hide needs hide_epoch")


@dataclass
class StorerAgent:
    node: str
    label: str
    datum: Datum
    strategy: StorerStrategy
    duration: int
    fee: int
    register_epoch: int
    registration: Optional[Registration] = None

    def publish_epoch(self) -> Optional[int]:
        k = self.strategy.kind
        if k is StorerKind.NEVER_PUBLISH:
            return None
        if k is StorerKind.LATE_REVEAL:
            return self.register_epoch + self.strategy.reveal_offset
        return self.register_epoch

    def act(self, epoch: int, network: NetworkState) -> Optional[Registration]:
        return storer_run(self, network, epoch)


def storer_run(agent: StorerAgent, network: NetworkState, epoch: int) -> Optional[Registration]:
    """Storer actions for one epoch; returns a registration to broadcast, if any."""
    out = None
    if epoch == agent.register_epoch:
        agent.registration = Registration.signed(agent.datum.id, agent.duration, agent.fee, agent.node)
        out = agent.registration
    if epoch == agent.publish_epoch():
        network.publish(agent.node, agent.datum.payload)
    s = agent.strategy
    if s.kind is StorerKind.PUBLISH_THEN_HIDE and epoch == s.hide_epoch and agent.datum.id in network.payloads:
        network.withhold(agent.datum.id)
    return out


# -- miners ----------------------------------------------------------------------

def node_view(node: str, network: NetworkState, ids) -> frozenset:
    """Datum ids this node holds or could download right now."""
    return frozenset(
        x for x in ids
        if network.holds(node, x) or (network.public_now(x) and network.sees(node, x))
    )


def _retention_targets(state: MinerState, env: Env) -> set:
    """Ids registered on the adopted chain whose obligation (through end+1) is not over."""
    t = env.epoch
    want = {w.datum_id for w in env.index.windows(state.tree.best) if t <= w.obligation_end + 1}
    want.update(x for x, until in state.obligations.items() if until >= t)
    return want


def fetch_registered(state: MinerState, env: Env) -> None:
    """Download, store and serve every datum registered on the adopted chain;
    discard copies whose obligations have ended."""
    net = env.network
    want = _retention_targets(state, env)
    for x in sorted(want):
        if x not in state.local_store and net.fetch(state.node, x) is not None:
            state.local_store.add(x)
    for x in sorted(state.local_store - want):
        state.local_store.discard(x)
        net.drop(state.node, x)


def prepare_epoch(state: MinerState, env: Env) -> frozenset:
    """Per-epoch housekeeping before mining; freezes the node's view for the epoch."""
    if state.strategy in (Strategy.HONEST, Strategy.POOL_OPERATOR) or (
        state.strategy is Strategy.POOL_MEMBER and env.pools[state.pool].members_choose_reports
    ):
        fetch_registered(state, env)
    view = node_view(state.node, env.network, env.known_ids)
    state.views[env.epoch] = view
    return view


def miner_bootstrap(
    node: str,
    network: NetworkState,
    known_blocks: Sequence,
    env: Env,
    *,
    strategy: Strategy = Strategy.HONEST,
    hashrate: float = 1.0,
    budget: int = 0,
    pool: Optional[str] = None,
    genesis=None,
) -> MinerState:
    """Join: adopt the greatest-work chain, replay its registrations, fetch
    what is still registered, then observe silently for ``c`` epochs."""
    genesis = genesis if genesis is not None else (known_blocks[0] if known_blocks else genesis_block())
    tree = BlockTree(genesis, env.c, env.schedule, env.index)
    state = MinerState(node, tree, strategy, hashrate, budget, pool, Phase.SYNCING)
    for b in known_blocks:
        if b.header_hash != genesis.header_hash and b.prev_header_hash in tree:
            tree.add(b, VALID)
    state.nonce = rng_for(env.seed, "nonce", node).getrandbits(64)
    if strategy in (Strategy.HONEST, Strategy.POOL_OPERATOR):
        fetch_registered(state, env)
    state.views[env.epoch] = node_view(node, network, env.known_ids)
    state.phase = Phase.OBSERVING
    state.observe_left = env.c
    return state


def end_epoch(state: MinerState) -> None:
    if state.phase is Phase.OBSERVING:
        state.observe_left -= 1
        if state.observe_left <= 0:
            state.phase = Phase.MINING


def effective_tree(state: MinerState, env: Env) -> BlockTree:
    """Pool members without their own report choice follow the operator."""
    if state.strategy is Strategy.POOL_MEMBER and not env.pools[state.pool].members_choose_reports:
        return env.miners[env.pools[state.pool].operator].tree
    return state.tree


def _pending_registrations(tree: BlockTree, parent_hash: bytes, env: Env, epoch: int) -> tuple:
    windows = env.index.windows(parent_hash)
    seen = {w.registration for w in windows}
    latest = {}
    for w in windows:
        latest[w.datum_id] = max(latest.get(w.datum_id, -1), w.obligation_end)
    out = []
    for reg in env.mempool:
        if reg in seen:
            continue
        start = epoch + env.c
        if latest.get(reg.datum_id, -1) >= start:
            continue
        latest[reg.datum_id] = start + reg.duration_epochs - 1
        out.append(reg)
    return tuple(out)


def _body(state: MinerState, tree: BlockTree, reports: Callable[[Block, int], set], env: Env) -> Block:
    parent = tree.tip()
    epoch = parent.epoch + 1
    ids = reports(parent, epoch)
    regs = _pending_registrations(tree, parent.header_hash, env, epoch)
    return Block(epoch, tuple(Report(x) for x in ids), regs, state.node, 0, parent.header_hash)


def _view_reports(tree: BlockTree, view: frozenset, env: Env):
    def pick(parent, epoch):
        return {w.datum_id for w in env.index.active(parent.header_hash, epoch) if w.datum_id in view}
    return pick


def honest_candidate(state: MinerState, env: Env) -> Block:
    """Reports exactly the active registrations this miner could download."""
    return _body(state, state.tree, _view_reports(state.tree, state.view(env.epoch), env), env)


def lazy_candidate(state: MinerState, env: Env) -> Block:
    """Copies the adopted parent's report set; stores nothing."""
    return _body(state, state.tree, lambda parent, epoch: set(parent.report_ids), env)


def pool_member_candidate(state: MinerState, env: Env) -> Block:
    pool = env.pools[state.pool]
    if pool.members_choose_reports:
        return honest_candidate(state, env)
    op = env.miners[pool.operator]
    return _body(state, op.tree, _view_reports(op.tree, op.view(env.epoch), env), env)


_BUILDERS = {
    Strategy.HONEST: honest_candidate,
    Strategy.LAZY: lazy_candidate,
    Strategy.POOL_MEMBER: pool_member_candidate,
}


def build_candidate(state: MinerState, env: Env) -> Block:
    tree = effective_tree(state, env)
    key = (tree.best, env.epoch, len(env.mempool))
    if state._candidate[0] == key:
        return state._candidate[1]
    body = _BUILDERS[state.strategy](state, env)
    state._candidate = (key, body)
    return body


def mine_round(state: MinerState, env: Env) -> Optional[Block]:
    """Spend one round of this miner's nonce budget on its current candidate."""
    body = build_candidate(state, env)
    found = mine(body, env.schedule.at(body.epoch), state.nonce, state.budget)
    if found is None:
        state.nonce = (state.nonce + state.budget) % 2**64
        return None
    state.nonce = (found + 1) % 2**64
    return body.with_nonce(found)


def honest_miner_step(state: MinerState, env: Env) -> Optional[Block]:
    if state.phase is not Phase.MINING:
        raise ValueError("miner is not in the Mining phase")
    return mine_round(state, env)


def lazy_miner_step(state: MinerState, env: Env) -> Optional[Block]:
    if state.phase is not Phase.MINING:
        raise ValueError("miner is not in the Mining phase")
    return mine_round(state, env)


def pool_step(operator: MinerState, members: Sequence[MinerState], env: Env) -> list[Block]:
    """One round for every pool member, in order; returns the blocks found."""
    out = []
    for m in members:
        if m.pool is None or env.pools[m.pool].operator != operator.node:
            raise ValueError(f"{m.node} is not a member of {operator.node}'s pool")
        b = mine_round(m, env)
        if b is not None:
            out.append(b)
    return out


def judge(state: MinerState, block, env: Env) -> Verdict:
    parent = state.tree.blocks.get(block.prev_header_hash)
    windows = env.index.windows(block.prev_header_hash) if parent is not None else ()
    return check_block(
        block, state.view(env.epoch), parent, windows,
        env.schedule.at(block.epoch), env.c, env.bootstrap_epochs,
    )


def receive_block(state: MinerState, block, env: Env, own: bool = False) -> Verdict:
    """Validate with this node's view of the current epoch and update the tip.

    A miner trusts blocks it mined itself.
    """
    verdict = VALID if own else judge(state, block, env)
    if block.prev_header_hash not in state.tree:
        return verdict
    if state.tree.add(block, verdict):
        state.adopted_epoch = env.epoch
    return verdict


def mining_race(epoch, seed, miners, *, participates, mine_one, broadcast, done, max_rounds):
    """Rounds of mining until ``done()``.

    Each round visits the participating miners in a freshly shuffled order;
    the first one to find a nonce broadcasts and the round ends.
    """
    for rnd in range(max_rounds):
        if done():
            return
        parts = [m for m in miners if participates(m)]
        if not parts:
            raise InvariantViolation("liveness", f"epoch {epoch}: no miner left to extend the chain")
        rng_for(seed, "order", epoch, rnd).shuffle(parts)
        for m in parts:
            block = mine_one(m)
            if block is not None:
                broadcast(m, block)
                break
    if not done():
        raise InvariantViolation("liveness", f"epoch {epoch}: no majority progress in {max_rounds} rounds")
