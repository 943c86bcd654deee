"""Nonce-scan throughput: compiled kernel vs pure-Python fallback.

    python benchmarks/bench_mining.py [--nonces N] [--repeat R]

Scans N nonces at an unreachable target (so the whole budget is hashed) and
reports hashes per second for each available backend, plus one end-to-end
scenario run per backend.
"""
import argparse
import time

from availoracle import config_from_dict, run_scenario
from availoracle import pow as powmod
from availoracle.core import Block, Report, genesis_block, hash_datum
from availoracle.pow import Difficulty, mine


def scan_rate(backend: str, nonces: int, repeat: int) -> float:
    powmod.use_backend(backend)
    g = genesis_block()
    body = Block(1, tuple(Report(hash_datum(bytes([i]))) for i in range(8)), (), "bench", 0, g.header_hash)
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        assert mine(body, Difficulty(1), 0, nonces) is None
        best = min(best, time.perf_counter() - t)
    return nonces / best


def scenario_time(backend: str) -> float:
    powmod.use_backend(backend)
    cfg = config_from_dict({
        "seed": 0, "epochs": 100, "miners": [{"count": 20}],
        "storers": [{"label": "d", "duration": 20, "register_epoch": 1, "every": 10, "repeat": 9}],
    })
    t = time.perf_counter()
    run_scenario(cfg)
    return time.perf_counter() - t


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nonces", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    backends = ["python"] + (["cython"] if powmod._compiled is not None else [])
    rates = {}
    for b in backends:
        rates[b] = scan_rate(b, args.nonces, args.repeat)
        print(f"{b:>7}: {rates[b] / 1e6:7.3f} Mhash/s   scenario (100 epochs, 20 miners): {scenario_time(b):6.2f} s")
    if len(rates) == 2:
        print(f"speedup: {rates['cython'] / rates['python']:.1f}x")
    else:
        print("compiled kernel not built; only the fallback was measured")


if __name__ == "__main__":
    main()
