"""Registration ledger, block validity, fork choice and fee settlement."""
from __future__ import annotations

import enum
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

from .core import Block, DatumId, Registration
from .pow import Difficulty, TargetSchedule, verify_pow


class ChainError(ValueError):
    """Malformed chain handed to a replay operation."""


@dataclass(frozen=True)
class RegistrationWindow:
    datum_id: DatumId
    registered_at: int
    obligation_start: int
    obligation_end: int
    registration: Registration = field(compare=True, repr=False)
    index: int = 0  # position inside the including block

    @classmethod
    def open(cls, reg: Registration, t0: int, c: int, index: int = 0) -> "RegistrationWindow":
        start = t0 + c
        return cls(reg.datum_id, t0, start, start + reg.duration_epochs - 1, reg, index)

    def covers(self, t: int) -> bool:
        return self.obligation_start <= t <= self.obligation_end

    def epochs(self) -> range:
        return range(self.obligation_start, self.obligation_end + 1)

    def share(self, t: int) -> int:
        """Fee share for obligation epoch ``t``; the remainder lands on the last epoch."""
        d = self.registration.duration_epochs
        base = self.registration.fee // d
        if t == self.obligation_end:
            return self.registration.fee - base * (d - 1)
        return base


class Outcome(enum.Enum):
    VALID = "Valid"
    INVALID_POW = "InvalidPow"
    INVALID_SIGNATURE = "InvalidSignature"
    INCOMPLETE_REPORTS = "IncompleteReports"
    SPURIOUS_REPORTS = "SpuriousReports"
    UNKNOWN_PARENT = "UnknownParent"
    DUPLICATE_REPORT = "DuplicateReport"
    INTERVAL_MISS = "IntervalMiss"  # rate mode only


@dataclass(frozen=True)
class Verdict:
    outcome: Outcome
    missing: frozenset = frozenset()
    extra: frozenset = frozenset()

    @property
    def ok(self) -> bool:
        return self.outcome is Outcome.VALID

    def __str__(self):
        return self.outcome.value


VALID = Verdict(Outcome.VALID)


def _check_linked(chain: Sequence) -> None:
    for i in range(1, len(chain)):
        if chain[i].prev_header_hash != chain[i - 1].header_hash:
            raise ChainError(f"block {i} does not link to block {i - 1}")
        if chain[i].epoch != chain[i - 1].epoch + 1:
            raise ChainError(f"block {i} epoch {chain[i].epoch} does not follow {chain[i - 1].epoch}")


def registration_windows(chain: Sequence, c: int) -> list[RegistrationWindow]:
    """Replay every registration from genesis, in block order."""
    _check_linked(chain)
    out = []
    for block in chain:
        for i, reg in enumerate(block.registrations):
            out.append(RegistrationWindow.open(reg, block.epoch, c, i))
    return out


def active_registrations(chain: Sequence, t: int, c: int) -> set[RegistrationWindow]:
    return {w for w in registration_windows(chain, c) if w.covers(t)}


def _as_predicate(view) -> Callable[[DatumId], bool]:
    if callable(view):
        return view
    return view.__contains__


def check_block(
    block: Block,
    view,
    parent: Optional[Block],
    windows: Iterable[RegistrationWindow],
    target: Difficulty,
    c: int,
    bootstrap_epochs: Optional[int] = None,
) -> Verdict:
    """Validity of ``block`` given its parent and the parent chain's windows."""
    if parent is None or block.prev_header_hash != parent.header_hash or block.epoch != parent.epoch + 1:
        return Verdict(Outcome.UNKNOWN_PARENT)
    if not verify_pow(block, target):
        return Verdict(Outcome.INVALID_POW)
    if not all(reg.signature_ok() for reg in block.registrations):
        return Verdict(Outcome.INVALID_SIGNATURE)

    ids = [r.datum_id for r in block.reports]
    if len(ids) != len(set(ids)):
        return Verdict(Outcome.DUPLICATE_REPORT)
    windows = list(windows)
    latest_end: dict[DatumId, int] = {}
    for w in windows:
        latest_end[w.datum_id] = max(latest_end.get(w.datum_id, -1), w.obligation_end)
    for reg in block.registrations:
        start = block.epoch + c
        if latest_end.get(reg.datum_id, -1) >= start:
            return Verdict(Outcome.DUPLICATE_REPORT)
        latest_end[reg.datum_id] = start + reg.duration_epochs - 1

    if bootstrap_epochs is None:
        bootstrap_epochs = c
    if block.epoch <= bootstrap_epochs:
        return VALID
    sees = _as_predicate(view)
    active = {w.datum_id for w in windows if w.covers(block.epoch)}
    expected = {x for x in active if sees(x)}
    reported = set(ids)
    missing = expected - reported
    if missing:
        return Verdict(Outcome.INCOMPLETE_REPORTS, missing=frozenset(missing))
    extra = reported - expected
    if extra:
        return Verdict(Outcome.SPURIOUS_REPORTS, extra=frozenset(extra))
    return VALID


def validate_block(
    block: Block,
    local_view,
    parent_chain: Sequence,
    target: Difficulty,
    c: int,
    bootstrap_epochs: Optional[int] = None,
) -> Verdict:
    """Judge ``block`` against its parent chain from one node's local view.

    ``local_view`` is a predicate ``DatumId -> bool`` or a container of the
    datum ids the node can currently download.
    """
    if not parent_chain:
        return Verdict(Outcome.UNKNOWN_PARENT)
    windows = registration_windows(parent_chain, c)
    return check_block(block, local_view, parent_chain[-1], windows, target, c, bootstrap_epochs)


def expected_reports(parent_chain: Sequence, epoch: int, c: int, local_view) -> frozenset[DatumId]:
    sees = _as_predicate(local_view)
    return frozenset(w.datum_id for w in active_registrations(parent_chain, epoch, c) if sees(w.datum_id))


# -- fork choice ---------------------------------------------------------------

Validator = Callable[[object, Sequence], Verdict]


def availability_validator(view_history, schedule: TargetSchedule, c: int, bootstrap_epochs=None) -> Validator:
    """Validator judging each block with the node's view at the block's epoch."""

    def validate(block, parent_chain):
        view = view_history.get(block.epoch, frozenset())
        return validate_block(block, view, parent_chain, schedule.at(block.epoch), c, bootstrap_epochs)

    return validate


def _work(chain: Sequence, schedule: TargetSchedule) -> int:
    return sum(schedule.at(b.epoch).work for b in chain)


def chain_is_eligible(chain: Sequence, validate: Validator, c: int) -> bool:
    """True iff the last ``min(c, height)`` blocks of ``chain`` validate."""
    height = len(chain) - 1
    for i in range(len(chain) - min(c, height), len(chain)):
        if not validate(chain[i], chain[:i]).ok:
            return False
    return True


def fork_choice(
    chains: Iterable[Sequence],
    validate: Validator,
    c: int,
    schedule: TargetSchedule,
    received: Optional[dict[bytes, int]] = None,
) -> Optional[Sequence]:
    """Greatest-work chain among those whose last ``c`` blocks validate.

    Ties go to the earliest-received tip, then the smallest header hash.
    Returns None when nothing is eligible (caller keeps its current chain).
    """
    received = received or {}
    best, best_key = None, None
    for chain in chains:
        if not chain_is_eligible(chain, validate, c):
            continue
        tip = chain[-1].header_hash
        key = (-_work(chain, schedule), received.get(tip, float("inf")), tip)
        if best_key is None or key < best_key:
            best, best_key = chain, key
    return best


class WindowIndex:
    """Registration windows per block, computed once and shared by all nodes."""

    def __init__(self, c: int):
        self.c = c
        self._by_hash: dict[bytes, tuple[RegistrationWindow, ...]] = {}

    def add(self, block, parent_hash: Optional[bytes]) -> tuple[RegistrationWindow, ...]:
        h = block.header_hash
        if h in self._by_hash:
            return self._by_hash[h]
        base = self._by_hash.get(parent_hash, ()) if parent_hash is not None else ()
        new = tuple(RegistrationWindow.open(r, block.epoch, self.c, i) for i, r in enumerate(block.registrations))
        self._by_hash[h] = base + new
        return self._by_hash[h]

    def windows(self, block_hash: bytes) -> tuple[RegistrationWindow, ...]:
        return self._by_hash[block_hash]

    def active(self, block_hash: bytes, t: int) -> list[RegistrationWindow]:
        return [w for w in self._by_hash[block_hash] if w.covers(t)]


class BlockTree:
    """One node's block tree with verdicts fixed at receipt.

    Verdicts never change after insertion, so eligibility and work are
    computed once and the best tip is maintained incrementally; the result
    always equals :func:`fork_choice` over every root-to-block chain.
    """

    def __init__(self, genesis, c: int, schedule: TargetSchedule, index: Optional[WindowIndex] = None):
        self.c = c
        self.schedule = schedule
        self.index = index or WindowIndex(c)
        self.genesis = genesis
        g = genesis.header_hash
        self.blocks = {g: genesis}
        self.verdicts: dict[bytes, Verdict] = {g: VALID}
        self.height = {g: 0}
        self.work = {g: schedule.at(genesis.epoch).work}
        self.order = {g: 0}
        self.eligible = {g: True}
        self.index.add(genesis, None)
        self.best = g

    def __contains__(self, h: bytes) -> bool:
        return h in self.blocks

    def __len__(self):
        return len(self.blocks)

    def _key(self, h: bytes):
        return (-self.work[h], self.order[h], h)

    def add(self, block, verdict: Verdict) -> bool:
        """Insert with a precomputed verdict. Returns True if the best tip changed."""
        h = block.header_hash
        if h in self.blocks:
            return False
        p = block.prev_header_hash
        if p not in self.blocks:
            raise ChainError("parent unknown to this tree")
        self.blocks[h] = block
        self.verdicts[h] = verdict
        self.height[h] = self.height[p] + 1
        self.work[h] = self.work[p] + self.schedule.at(block.epoch).work
        self.order[h] = len(self.order)
        self.index.add(block, p)
        ok, cur, depth = True, h, min(self.c, self.height[h])
        for _ in range(depth):
            if not self.verdicts[cur].ok:
                ok = False
                break
            cur = self.blocks[cur].prev_header_hash
        self.eligible[h] = ok
        if ok and self._key(h) < self._key(self.best):
            self.best = h
            return True
        return False

    def chain(self, h: Optional[bytes] = None) -> list:
        h = self.best if h is None else h
        out = []
        while True:
            b = self.blocks[h]
            out.append(b)
            if h == self.genesis.header_hash:
                break
            h = b.prev_header_hash
        out.reverse()
        return out

    def tip(self):
        return self.blocks[self.best]

    def all_chains(self) -> list[list]:
        return [self.chain(h) for h in self.blocks]


# -- settlement ---------------------------------------------------------------

@dataclass
class LedgerDelta:
    payouts: dict[str, int] = field(default_factory=dict)
    refunds: dict[str, int] = field(default_factory=dict)
    # per-registration breakdown: window -> (paid, refunded)
    by_registration: dict = field(default_factory=dict)

    def total_paid(self) -> int:
        return sum(self.payouts.values())

    def total_refunded(self) -> int:
        return sum(self.refunds.values())


class FeeLedger:
    """Escrowed reporting fees along one chain, replayed from genesis."""

    def __init__(self, c: int):
        self.c = c
        self.windows: list[RegistrationWindow] = []
        self.reported: set[tuple[RegistrationWindow, int]] = set()
        self.paid: dict[RegistrationWindow, int] = defaultdict(int)
        self.refunded: dict[RegistrationWindow, int] = defaultdict(int)
        self.balances: dict[str, int] = defaultdict(int)
        self.epoch = -1

    def active(self, t: int) -> list[RegistrationWindow]:
        return [w for w in self.windows if w.covers(t)]

    def apply(self, block, block_reward: int) -> LedgerDelta:
        delta = settle_epoch(block, self, block_reward)
        for w, (paid, refunded) in delta.by_registration.items():
            self.paid[w] += paid
            self.refunded[w] += refunded
            if paid:
                self.reported.add((w, block.epoch))
        for k, v in delta.payouts.items():
            self.balances[k] += v
        for k, v in delta.refunds.items():
            self.balances[k] += v
        for i, reg in enumerate(block.registrations):
            self.windows.append(RegistrationWindow.open(reg, block.epoch, self.c, i))
            self.balances[reg.storer_key] -= reg.fee
        self.epoch = block.epoch
        return delta

    def escrow(self, w: RegistrationWindow) -> int:
        return w.registration.fee - self.paid[w] - self.refunded[w]

    def conservation_errors(self) -> list[str]:
        """Registrations whose paid + refunded + escrow != fee, or whose window
        closed with escrow left over."""
        errs = []
        for w in self.windows:
            fee = w.registration.fee
            esc = self.escrow(w)
            if esc < 0 or self.paid[w] + self.refunded[w] + esc != fee:
                errs.append(f"{w.datum_id.hex()[:12]}@{w.registered_at}: negative escrow")
            elif w.obligation_end <= self.epoch and esc != 0:
                errs.append(f"{w.datum_id.hex()[:12]}@{w.registered_at}: {esc} left in escrow after window")
        return errs


def settle_epoch(block, ledger: FeeLedger, block_reward: int) -> LedgerDelta:
    """Payouts and refunds for one canonical block (ledger is read, not changed)."""
    delta = LedgerDelta()
    miner = block.reward_key
    delta.payouts[miner] = block_reward
    t = block.epoch
    reported = block.report_ids if hasattr(block, "report_ids") else frozenset()
    for w in ledger.active(t):
        paid = w.share(t) if w.datum_id in reported else 0
        refund = 0
        if t == w.obligation_end:
            refund = sum(
                w.share(e) for e in w.epochs()
                if e != t and (w, e) not in ledger.reported
            )
            if not paid:
                refund += w.share(t)
        if paid:
            delta.payouts[miner] += paid
        if refund:
            key = w.registration.storer_key
            delta.refunds[key] = delta.refunds.get(key, 0) + refund
        delta.by_registration[w] = (paid, refund)
    return delta


def settle_chain(chain: Sequence, block_reward: int, c: int) -> FeeLedger:
    """Recompute all ledger state from the chain alone (genesis pays nothing)."""
    _check_linked(chain)
    ledger = FeeLedger(c)
    for i, block in enumerate(chain):
        ledger.apply(block, 0 if i == 0 else block_reward)
    return ledger
