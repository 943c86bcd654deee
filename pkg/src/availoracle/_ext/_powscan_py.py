"""Pure-Python nonce scan; same contract as the compiled ``_powscan``."""
import hashlib

_MASK = 2**64 - 1


def scan_sha256(suffix: bytes, target: bytes, start: int, budget: int) -> int:
    if len(target) != 32:
        raise ValueError("target must be 32 bytes")
    sha = hashlib.sha256
    for i in range(budget):
        nonce = (start + i) & _MASK
        if sha(nonce.to_bytes(8, "big") + suffix).digest() < target:
            return nonce
    return -1
