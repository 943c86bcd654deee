"""Proof-of-work: nonce search, verification and chain work.

The nonce scan is the simulation's hot loop. A compiled kernel
(``availoracle._ext._powscan``) is used when it was built and the configured
hash is SHA-256; otherwise the pure-Python scan runs. Set
``AVAILORACLE_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from typing import Optional, Sequence

from . import core
from ._ext import _powscan_py

MAX_TARGET = 2**256 - 1

_compiled = None
if os.environ.get("AVAILORACLE_PURE_PYTHON") != "1":
    try:
        from ._ext import _powscan as _compiled
    except ImportError:  # extension not built
        _compiled = None

BACKEND = "cython" if _compiled is not None else "python"


def use_backend(name: str) -> None:
    """Switch the nonce-scan backend at runtime ("cython" or "python")."""
    global BACKEND
    if name == "cython" and _compiled is None:
        raise RuntimeError("compiled kernel not available")
    if name not in ("cython", "python"):
        raise ValueError(name)
    BACKEND = name


@dataclass(frozen=True)
class Difficulty:
    target: int

    def __post_init__(self):
        if not 0 < self.target <= MAX_TARGET:
            raise ValueError("target must be in (0, 2**256 - 1]")

    @classmethod
    def from_hex(cls, text: str) -> "Difficulty":
        return cls(int(text, 16))

    def to_hex(self) -> str:
        return f"0x{self.target:064x}"

    @property
    def work(self) -> int:
        return 2**256 // self.target


def _threshold_bytes(target: int) -> bytes:
    # hash < target, both read as 256-bit big-endian
    return target.to_bytes(32, "big") if target <= MAX_TARGET else b"\xff" * 32


def _scan(suffix: bytes, target: int, start: int, budget: int) -> int:
    thr = _threshold_bytes(target)
    if core.hash_name() == "sha256":
        scan = _compiled.scan_sha256 if BACKEND == "cython" else _powscan_py.scan_sha256
        return scan(suffix, thr, start & core.U64_MAX, budget)
    for i in range(budget):
        nonce = (start + i) & core.U64_MAX
        if core.hash_bytes(struct.pack(">Q", nonce) + suffix) < thr:
            return nonce
    return -1


def mine(body, target: Difficulty, nonce_start: int, nonce_budget: int) -> Optional[int]:
    """First nonce in the wrapping range ``[nonce_start, nonce_start + nonce_budget)``
    whose header hash is below ``target``, or None."""
    if nonce_budget < 0:
        raise ValueError("nonce_budget must be >= 0")
    if nonce_budget == 0:
        return None
    found = _scan(body.header_suffix(), target.target, nonce_start, nonce_budget)
    return None if found < 0 else found


def verify_pow(block, target: Difficulty) -> bool:
    return int.from_bytes(block.header_hash, "big") < target.target


def chain_work(blocks: Sequence, targets: Sequence[Difficulty]) -> int:
    if len(blocks) != len(targets):
        raise ValueError(f"{len(blocks)} blocks but {len(targets)} targets")
    return sum(t.work for t in targets)


class TargetSchedule:
    """Fixed default target with optional per-epoch overrides."""

    def __init__(self, default: Difficulty, overrides: dict[int, Difficulty] | None = None):
        self.default = default
        self.overrides = dict(overrides or {})

    def at(self, epoch: int) -> Difficulty:
        return self.overrides.get(epoch, self.default)

