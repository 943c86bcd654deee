"""Domain types, canonical byte encodings and content addressing.

Every integer on the wire is big-endian. See ``docs/FORMATS.md`` for the
exact layouts; the encoders below are the reference.
"""
from __future__ import annotations

import hashlib
import hmac
import struct
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable

DIGEST_SIZE = 32
U64_MAX = 2**64 - 1

KIND_AVAILABILITY = 0x01
KIND_RATE = 0x02

_hash_name = "sha256"


class EncodingError(ValueError):
    pass


def set_hash(name: str) -> None:
    """Select the hash used for datum ids, headers and signature stubs."""
    global _hash_name
    h = hashlib.new(name)
    if h.digest_size != DIGEST_SIZE:
        raise ValueError(f"hash {name!r} has a {h.digest_size}-byte digest, need {DIGEST_SIZE}")
    _hash_name = name


def hash_name() -> str:
    return _hash_name


def hash_bytes(data: bytes) -> bytes:
    if _hash_name == "sha256":
        return hashlib.sha256(data).digest()
    return hashlib.new(_hash_name, data).digest()


@dataclass(frozen=True, order=True)
class DatumId:
    digest: bytes

    def __post_init__(self):
        if len(self.digest) != DIGEST_SIZE:
            raise ValueError(f"datum id must be {DIGEST_SIZE} bytes, got {len(self.digest)}")

    def hex(self) -> str:
        return self.digest.hex()

    def __repr__(self):
        return f"DatumId({self.digest.hex()[:12]}..)"


def hash_datum(payload: bytes) -> DatumId:
    return DatumId(hash_bytes(payload))


@dataclass(frozen=True)
class Datum:
    id: DatumId
    payload: bytes
    size_bytes: int

    @classmethod
    def from_payload(cls, payload: bytes) -> "Datum":
        return cls(hash_datum(payload), bytes(payload), len(payload))


# -- signatures -------------------------------------------------------------
# Keyed-hash stub standing in for a real scheme:
#   sig = H(b"availoracle-sig-v1" || u16 len(key) || key || message)

_SIG_TAG = b"availoracle-sig-v1"


def sign(key: str, message: bytes) -> bytes:
    k = key.encode()
    return hash_bytes(_SIG_TAG + struct.pack(">H", len(k)) + k + message)


def verify(key: str, message: bytes, signature: bytes) -> bool:
    return hmac.compare_digest(sign(key, message), signature)


# -- registrations and reports ---------------------------------------------

@dataclass(frozen=True)
class Registration:
    datum_id: DatumId
    duration_epochs: int
    fee: int
    storer_key: str
    signature: bytes = b""

    def __post_init__(self):
        if self.duration_epochs < 1:
            raise ValueError("duration_epochs must be >= 1")
        if not 0 <= self.fee <= U64_MAX:
            raise ValueError("fee must fit an unsigned 64-bit integer")

    def message(self) -> bytes:
        return self.datum_id.digest + struct.pack(">QQ", self.duration_epochs, self.fee)

    def signature_ok(self) -> bool:
        return verify(self.storer_key, self.message(), self.signature)

    @classmethod
    def signed(cls, datum_id: DatumId, duration_epochs: int, fee: int, storer_key: str) -> "Registration":
        reg = cls(datum_id, duration_epochs, fee, storer_key)
        return replace(reg, signature=sign(storer_key, reg.message()))


@dataclass(frozen=True, order=True)
class Report:
    datum_id: DatumId


def _pack_str(s: str) -> bytes:
    b = s.encode()
    if len(b) > 0xFFFF:
        raise EncodingError("string too long")
    return struct.pack(">H", len(b)) + b


def _pack_bytes(b: bytes) -> bytes:
    if len(b) > 0xFFFF:
        raise EncodingError("byte field too long")
    return struct.pack(">H", len(b)) + b


def encode_registration(reg: Registration) -> bytes:
    return (
        reg.datum_id.digest
        + struct.pack(">QQ", reg.duration_epochs, reg.fee)
        + _pack_str(reg.storer_key)
        + _pack_bytes(reg.signature)
    )


class _Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise EncodingError("truncated input")
        out = bytes(self.data[self.pos:self.pos + n])
        self.pos += n
        return out

    def u16(self) -> int:
        return struct.unpack(">H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self.take(8))[0]

    def i64(self) -> int:
        return struct.unpack(">q", self.take(8))[0]

    def string(self) -> str:
        return self.take(self.u16()).decode()

    def blob(self) -> bytes:
        return self.take(self.u16())

    def done(self):
        if self.pos != len(self.data):
            raise EncodingError(f"{len(self.data) - self.pos} trailing bytes")


def _read_registration(r: _Reader) -> Registration:
    datum_id = DatumId(r.take(DIGEST_SIZE))
    duration, fee = r.u64(), r.u64()
    return Registration(datum_id, duration, fee, r.string(), r.blob())


def decode_registration(data: bytes) -> Registration:
    r = _Reader(data)
    reg = _read_registration(r)
    r.done()
    return reg


# -- blocks -----------------------------------------------------------------

GENESIS_PREV = bytes(DIGEST_SIZE)


@dataclass(frozen=True)
class Block:
    """Availability block. ``reports`` is kept sorted by datum id.

    Duplicate reports are preserved (not collapsed) so validation can see them.
    """

    epoch: int
    reports: tuple[Report, ...]
    registrations: tuple[Registration, ...]
    reward_key: str
    nonce: int
    prev_header_hash: bytes

    kind = KIND_AVAILABILITY

    def __post_init__(self):
        object.__setattr__(self, "reports", tuple(sorted(self.reports)))
        object.__setattr__(self, "registrations", tuple(self.registrations))
        if not 0 <= self.nonce <= U64_MAX:
            raise ValueError("nonce must fit 64 bits")
        if self.epoch < 0:
            raise ValueError("epoch must be non-negative")
        if len(self.prev_header_hash) != DIGEST_SIZE:
            raise ValueError("prev_header_hash must be 32 bytes")

    @property
    def report_ids(self) -> frozenset[DatumId]:
        return frozenset(r.datum_id for r in self.reports)

    def body_bytes(self) -> bytes:
        parts = [struct.pack(">I", len(self.reports))]
        parts.extend(r.datum_id.digest for r in self.reports)
        parts.append(struct.pack(">I", len(self.registrations)))
        parts.extend(encode_registration(g) for g in self.registrations)
        return b"".join(parts)

    def header_suffix(self) -> bytes:
        """Header preimage minus the leading 8-byte nonce."""
        return self.body_bytes() + _pack_str(self.reward_key) + self.prev_header_hash

    @cached_property
    def header_hash(self) -> bytes:
        return hash_bytes(struct.pack(">Q", self.nonce) + self.header_suffix())

    def with_nonce(self, nonce: int) -> "Block":
        return replace(self, nonce=nonce)


@dataclass(frozen=True)
class RateInterval:
    """Closed interval of fixed-point rates (integer units of 1e-4)."""

    lo: int
    hi: int

    def __post_init__(self):
        if self.lo > self.hi:
            raise ValueError(f"interval lo {self.lo} > hi {self.hi}")

    @property
    def width(self) -> int:
        return self.hi - self.lo

    def contains(self, rate: int) -> bool:
        return self.lo <= rate <= self.hi


@dataclass(frozen=True)
class RateBlock:
    epoch: int
    interval: RateInterval
    reward_key: str
    nonce: int
    prev_header_hash: bytes

    kind = KIND_RATE

    def __post_init__(self):
        if not 0 <= self.nonce <= U64_MAX:
            raise ValueError("nonce must fit 64 bits")
        if len(self.prev_header_hash) != DIGEST_SIZE:
            raise ValueError("prev_header_hash must be 32 bytes")

    # rate blocks carry no registrations; kept so chain replay code is uniform
    registrations: tuple = field(default=(), init=False, repr=False, compare=False)
    reports: tuple = field(default=(), init=False, repr=False, compare=False)

    def body_bytes(self) -> bytes:
        return struct.pack(">qq", self.interval.lo, self.interval.hi)

    def header_suffix(self) -> bytes:
        return self.body_bytes() + _pack_str(self.reward_key) + self.prev_header_hash

    @cached_property
    def header_hash(self) -> bytes:
        return hash_bytes(struct.pack(">Q", self.nonce) + self.header_suffix())

    def with_nonce(self, nonce: int) -> "RateBlock":
        return replace(self, nonce=nonce)


def block_header_hash(block) -> bytes:
    return hash_bytes(struct.pack(">Q", block.nonce) + block.header_suffix())


def serialize_block(block) -> bytes:
    """kind byte || u64 epoch || u64 nonce || header suffix."""
    return (
        bytes([block.kind])
        + struct.pack(">QQ", block.epoch, block.nonce)
        + block.header_suffix()
    )


def _read_block(r: _Reader):
    kind = r.take(1)[0]
    epoch, nonce = r.u64(), r.u64()
    if kind == KIND_AVAILABILITY:
        reports = [Report(DatumId(r.take(DIGEST_SIZE))) for _ in range(r.u32())]
        regs = [_read_registration(r) for _ in range(r.u32())]
        key = r.string()
        prev = r.take(DIGEST_SIZE)
        return Block(epoch, tuple(reports), tuple(regs), key, nonce, prev)
    if kind == KIND_RATE:
        lo, hi = r.i64(), r.i64()
        key = r.string()
        prev = r.take(DIGEST_SIZE)
        return RateBlock(epoch, RateInterval(lo, hi), key, nonce, prev)
    raise EncodingError(f"unknown block kind {kind:#x}")


def deserialize_block(data: bytes):
    r = _Reader(data)
    block = _read_block(r)
    r.done()
    return block


def genesis_block() -> Block:
    return Block(0, (), (), "genesis", 0, GENESIS_PREV)


def rate_genesis_block(rate: int = 0) -> RateBlock:
    return RateBlock(0, RateInterval(rate, rate), "genesis", 0, GENESIS_PREV)


# -- chain snapshots ---------------------------------------------------------
# b"AOCHAIN1" || u32 count || count * (u32 len || serialized block)

SNAPSHOT_MAGIC = b"AOCHAIN1"


def encode_snapshot(blocks: Iterable) -> bytes:
    blocks = list(blocks)
    parts = [SNAPSHOT_MAGIC, struct.pack(">I", len(blocks))]
    for b in blocks:
        raw = serialize_block(b)
        parts.append(struct.pack(">I", len(raw)))
        parts.append(raw)
    return b"".join(parts)


def decode_snapshot(data: bytes) -> list:
    r = _Reader(data)
    if r.take(len(SNAPSHOT_MAGIC)) != SNAPSHOT_MAGIC:
        raise EncodingError("not a chain snapshot")
    out = []
    for _ in range(r.u32()):
        out.append(deserialize_block(r.take(r.u32())))
    r.done()
    return out
