# cython: language_level=3, boundscheck=False, wraparound=False
"""Nonce scan over SHA-256 headers, linked against libcrypto."""

from libc.string cimport memcpy, memcmp
from libc.stdlib cimport malloc, free
from libc.stdint cimport uint64_t


cdef extern from "openssl/sha.h" nogil:
    ctypedef struct SHA256_CTX:
        pass
    int SHA256_Init(SHA256_CTX *c)
    int SHA256_Update(SHA256_CTX *c, const void *data, size_t n)
    int SHA256_Final(unsigned char *md, SHA256_CTX *c)


def scan_sha256(bytes suffix, bytes target, uint64_t start, uint64_t budget):
    """Return the first nonce in ``start, start+1, ...`` (mod 2**64, ``budget``
    candidates) whose header digest is strictly below ``target``, else -1.

    ``target`` is the 32-byte big-endian threshold.
    """
    if len(target) != 32:
        raise ValueError("target must be 32 bytes")
    cdef Py_ssize_t n = len(suffix)
    cdef Py_ssize_t total = 8 + n
    cdef unsigned char *buf = <unsigned char *>malloc(total)
    if buf == NULL:
        raise MemoryError()
    cdef unsigned char md[32]
    cdef SHA256_CTX ctx
    cdef const unsigned char *tgt = target
    cdef const unsigned char *suf = suffix
    cdef uint64_t i, nonce
    cdef int k
    cdef long long found = -1
    cdef uint64_t hit = 0
    memcpy(buf + 8, suf, n)
    with nogil:
        for i in range(budget):
            nonce = start + i
            for k in range(8):
                buf[k] = <unsigned char>((nonce >> (56 - 8 * k)) & 0xFF)
            # the low-level API skips the per-call EVP fetch of the one-shot SHA256()
            SHA256_Init(&ctx)
            SHA256_Update(&ctx, buf, total)
            SHA256_Final(md, &ctx)
            if memcmp(md, tgt, 32) < 0:
                hit = nonce
                found = 1
                break
    free(buf)
    if found < 0:
        return -1
    return hit
