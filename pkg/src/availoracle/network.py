"""Discrete-epoch peer-to-peer model.

Visibility rules, evaluated per (node, datum, epoch):

* a node that stores the datum always sees it;
* otherwise it sees the datum iff some node is serving a copy, the current
  flood has reached the node, and the node is not in that epoch's blind set.

A flood starts whenever a datum goes from "no copy served anywhere" to
"served" (publish, release). Each node's arrival delay is drawn uniformly
from ``[1, lag_c]`` epochs. Blind sets hold exactly ``floor(epsilon * N)``
nodes per (datum, epoch), so once a flood has completed the visible fraction
is at least ``1 - epsilon``; with no copy served it is exactly 0.

Downloads go through the directory: ``fetch`` only succeeds for a datum that
is publicly available right now (and visible to the fetching node).
"""
from __future__ import annotations

import bisect
import hashlib
import random
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Optional

from .core import DatumId, hash_datum


def rng_for(seed: int, *labels) -> random.Random:
    """Independent deterministic stream for one (seed, labels) key."""
    text = repr((seed,) + tuple(labels)).encode()
    return random.Random(int.from_bytes(hashlib.sha256(text).digest()[:8], "big"))


def _draw(key: tuple, node: str, n: int) -> int:
    """Uniform integer in [0, n) for one node, independent of the roster."""
    digest = hashlib.sha256(repr(key + (node,)).encode()).digest()
    return int.from_bytes(digest[:8], "big") % n


class UnknownDatum(KeyError):
    pass


@dataclass(frozen=True)
class VisibilitySample:
    datum_id: DatumId
    epoch: int
    fraction_holding: Fraction
    publicly_available: bool


@dataclass
class _Flood:
    start: int
    arrival: dict  # node -> epoch the flood reaches it
    sorted_arrivals: list


class NetworkState:
    def __init__(
        self,
        nodes: Iterable[str],
        *,
        epsilon: float = 0.05,
        lag_c: int = 3,
        seed: int = 0,
        upload_failure_rate: float = 0.0,
        epoch: int = 0,
    ):
        self.nodes = list(nodes)
        if len(set(self.nodes)) != len(self.nodes):
            raise ValueError("duplicate node ids")
        self._node_set = set(self.nodes)
        self.epsilon = Fraction(str(epsilon)) if not isinstance(epsilon, Fraction) else epsilon
        if not 0 <= self.epsilon < Fraction(1, 2):
            raise ValueError("epsilon must lie in [0, 0.5)")
        if lag_c < 1:
            raise ValueError("lag_c must be positive")
        self.lag_c = lag_c
        self.rng_seed = seed
        self.upload_failure_rate = upload_failure_rate
        self.epoch = epoch
        self.blind_quota = int(self.epsilon * len(self.nodes))

        self.payloads: dict[DatumId, bytes] = {}
        self.holders: dict[DatumId, set[str]] = {}
        self.publishers: dict[DatumId, set[str]] = {}
        self.withheld: dict[DatumId, set[str]] = {}
        self.floods: dict[DatumId, _Flood] = {}
        self.lag_windows: dict[DatumId, list[tuple[int, int]]] = {}
        self.chronic_blind: dict[DatumId, set[str]] = {}
        self.split: set[DatumId] = set()
        self.scheduled: dict[int, list[tuple[str, DatumId]]] = {}
        self.trace: dict[tuple[DatumId, int], Fraction] = {}
        self._blind_cache: dict[tuple[DatumId, int], frozenset] = {}

    # -- configuration hooks ---------------------------------------------------

    def add_chronic_blindness(self, node: str, ids: Iterable[DatumId]) -> None:
        """Node permanently cannot download ``ids`` (counts toward the epsilon quota)."""
        self._require_node(node)
        for i in ids:
            self.chronic_blind.setdefault(i, set()).add(node)

    def inject_split(self, datum_id: DatumId) -> None:
        """Break the consistency axiom for one datum: half the nodes never see it."""
        self.split.add(datum_id)

    def _require_node(self, node: str):
        if node not in self._node_set:
            raise ValueError(f"unknown node {node!r}")

    # -- visibility --------------------------------------------------------------

    def blind_set(self, datum_id: DatumId, epoch: Optional[int] = None) -> frozenset:
        epoch = self.epoch if epoch is None else epoch
        key = (datum_id, epoch)
        hit = self._blind_cache.get(key)
        if hit is not None:
            return hit
        if datum_id in self.split:
            r = rng_for(self.rng_seed, "split", datum_id.digest)
            out = frozenset(r.sample(self.nodes, len(self.nodes) // 2))
        else:
            chronic = self.chronic_blind.get(datum_id, set())
            k = max(0, self.blind_quota - len(chronic))
            others = [n for n in self.nodes if n not in chronic]
            r = rng_for(self.rng_seed, "blind", datum_id.digest, epoch)
            out = frozenset(chronic) | frozenset(r.sample(others, min(k, len(others))))
        self._blind_cache[key] = out
        return out

    def serving(self, datum_id: DatumId) -> bool:
        return bool(self.holders.get(datum_id))

    def sees(self, node: str, datum_id: DatumId) -> bool:
        """Can ``node`` see the datum in the current epoch."""
        if node in self.holders.get(datum_id, ()):
            return True
        flood = self.floods.get(datum_id)
        if flood is None or not self.serving(datum_id):
            return False
        if flood.arrival.get(node, self.epoch + 1) > self.epoch:
            return False
        return node not in self.blind_set(datum_id)

    def _fraction_now(self, datum_id: DatumId) -> Fraction:
        n = len(self.nodes)
        holders = self.holders.get(datum_id, set())
        flood = self.floods.get(datum_id)
        if not holders:
            return Fraction(0)
        if flood is None:
            return Fraction(len(holders), n)
        arrived = bisect.bisect_right(flood.sorted_arrivals, self.epoch)
        arrived_holders = sum(1 for h in holders if flood.arrival.get(h, self.epoch + 1) <= self.epoch)
        blind = self.blind_set(datum_id)
        blind_arrived = sum(
            1 for b in blind
            if b not in holders and flood.arrival.get(b, self.epoch + 1) <= self.epoch
        )
        return Fraction(len(holders) + (arrived - arrived_holders) - blind_arrived, n)

    def _sample(self, datum_id: DatumId, epoch: int, fraction: Fraction) -> VisibilitySample:
        return VisibilitySample(datum_id, epoch, fraction, fraction >= 1 - self.epsilon)

    def is_publicly_available(self, datum_id: DatumId, epoch: Optional[int] = None) -> VisibilitySample:
        epoch = self.epoch if epoch is None else epoch
        if epoch > self.epoch:
            raise ValueError("cannot sample a future epoch")
        if epoch == self.epoch:
            return self._sample(datum_id, epoch, self._fraction_now(datum_id))
        return self._sample(datum_id, epoch, self.trace.get((datum_id, epoch), Fraction(0)))

    def public_now(self, datum_id: DatumId) -> bool:
        return self._fraction_now(datum_id) >= 1 - self.epsilon

    # -- actions -----------------------------------------------------------------

    def _start_flood(self, datum_id: DatumId) -> None:
        start = self.epoch
        r = rng_for(self.rng_seed, "upload", datum_id.digest, start)
        failed = self.upload_failure_rate > 0 and r.random() < self.upload_failure_rate
        arrival = {}
        if not failed:
            # keyed per node so paired runs with different rosters agree on shared nodes
            key = (self.rng_seed, "arrival", datum_id.digest, start)
            for node in self.nodes:
                arrival[node] = start + 1 + _draw(key, node, self.lag_c)
        self.floods[datum_id] = _Flood(start, arrival, sorted(arrival.values()))
        self.lag_windows.setdefault(datum_id, []).append((start, start + self.lag_c - 1))

    def _add_holder(self, node: str, datum_id: DatumId) -> None:
        was_serving = self.serving(datum_id)
        self.holders.setdefault(datum_id, set()).add(node)
        if not was_serving:
            self._start_flood(datum_id)

    def _remove_holder(self, node: str, datum_id: DatumId) -> None:
        h = self.holders.get(datum_id)
        if h is None:
            return
        h.discard(node)
        if not h:
            self.floods.pop(datum_id, None)

    def publish(self, node: str, payload: bytes) -> DatumId:
        self._require_node(node)
        datum_id = hash_datum(payload)
        self.payloads[datum_id] = bytes(payload)
        self.publishers.setdefault(datum_id, set()).add(node)
        self.withheld.get(datum_id, set()).discard(node)
        self._add_holder(node, datum_id)
        return datum_id

    def fetch(self, node: str, datum_id: DatumId) -> Optional[bytes]:
        self._require_node(node)
        if node in self.holders.get(datum_id, ()):
            return self.payloads[datum_id]
        if datum_id not in self.payloads or not self.public_now(datum_id):
            return None
        if not self.sees(node, datum_id):
            return None
        self._add_holder(node, datum_id)
        return self.payloads[datum_id]

    def holds(self, node: str, datum_id: DatumId) -> bool:
        return node in self.holders.get(datum_id, ())

    def drop(self, node: str, datum_id: DatumId) -> None:
        """Node discards its copy (e.g. registration expired)."""
        self._remove_holder(node, datum_id)

    def withhold(self, datum_id: DatumId, from_epoch: Optional[int] = None) -> None:
        """Publishers delete their copies and stop serving. Other holders keep theirs."""
        if datum_id not in self.payloads:
            raise UnknownDatum(datum_id)
        from_epoch = self.epoch if from_epoch is None else from_epoch
        if from_epoch > self.epoch:
            self.scheduled.setdefault(from_epoch, []).append(("withhold", datum_id))
            return
        for node in self.publishers.get(datum_id, ()):
            self.withheld.setdefault(datum_id, set()).add(node)
            self._remove_holder(node, datum_id)

    def release(self, datum_id: DatumId, from_epoch: Optional[int] = None) -> None:
        if datum_id not in self.payloads:
            raise UnknownDatum(datum_id)
        from_epoch = self.epoch if from_epoch is None else from_epoch
        if from_epoch > self.epoch:
            self.scheduled.setdefault(from_epoch, []).append(("release", datum_id))
            return
        for node in sorted(self.withheld.get(datum_id, ())):
            self.withheld[datum_id].discard(node)
            self._add_holder(node, datum_id)

    # -- time -----------------------------------------------------------------------

    def record(self) -> None:
        """Store the current epoch's fractions for every known datum."""
        for datum_id in self.payloads:
            self.trace[(datum_id, self.epoch)] = self._fraction_now(datum_id)

    def step_epoch(self) -> "NetworkState":
        self.record()
        self.epoch += 1
        self._blind_cache = {k: v for k, v in self._blind_cache.items() if k[1] >= self.epoch}
        for action, datum_id in self.scheduled.pop(self.epoch, []):
            if action == "withhold":
                self.withhold(datum_id)
            else:
                self.release(datum_id)
        return self

    # -- invariant checks ---------------------------------------------------------

    def in_lag_window(self, datum_id: DatumId, epoch: int) -> bool:
        return any(a <= epoch <= b for a, b in self.lag_windows.get(datum_id, ()))

    def gap_violations(self) -> list[tuple[DatumId, int, Fraction]]:
        """(datum, epoch, fraction) triples with an intermediate fraction outside any lag window."""
        lo, hi = self.epsilon, 1 - self.epsilon
        out = []
        for (datum_id, epoch), f in sorted(self.trace.items(), key=lambda kv: (kv[0][1], kv[0][0])):
            if lo < f < hi and not self.in_lag_window(datum_id, epoch):
                out.append((datum_id, epoch, f))
        return out
