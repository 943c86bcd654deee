import hashlib
import struct

import pytest
from hypothesis import given, settings, strategies as st

from availoracle import pow as powmod
from availoracle.core import U64_MAX, genesis_block
from availoracle.pow import MAX_TARGET, Difficulty, TargetSchedule, chain_work, mine, verify_pow

from conftest import child, datum

BACKENDS = ["python"] + (["cython"] if powmod._compiled is not None else [])


@pytest.fixture(params=BACKENDS)
def backend(request):
    before = powmod.BACKEND
    powmod.use_backend(request.param)
    yield request.param
    powmod.use_backend(before)


def body():
    return child(genesis_block(), [datum("a").id])


def brute_force(b, target, start, budget):
    for i in range(budget):
        n = (start + i) % 2**64
        h = hashlib.sha256(struct.pack(">Q", n) + b.header_suffix()).digest()
        if int.from_bytes(h, "big") < target:
            return n
    return None


def test_max_target_returns_start(backend):
    assert mine(body(), Difficulty(MAX_TARGET), 17, 10) == 17


def test_target_one_is_absent(backend):
    assert mine(body(), Difficulty(1), 0, 500) is None


def test_zero_budget(backend):
    assert mine(body(), Difficulty(MAX_TARGET), 0, 0) is None
    with pytest.raises(ValueError):
        mine(body(), Difficulty(MAX_TARGET), 0, -1)


@pytest.mark.parametrize("bits", [248, 250, 252, 254])
def test_mine_matches_brute_force(backend, bits):
    b = body()
    for start in (0, 1000, U64_MAX - 40):
        assert mine(b, Difficulty(2**bits), start, 300) == brute_force(b, 2**bits, start, 300)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, U64_MAX), st.integers(240, 255))
def test_backends_agree(start, bits):
    if len(BACKENDS) < 2:
        pytest.skip("compiled kernel not built")
    b = body()
    out = []
    for name in BACKENDS:
        powmod.use_backend(name)
        out.append(mine(b, Difficulty(2**bits), start, 256))
    powmod.use_backend(BACKENDS[-1])
    assert out[0] == out[1]


def test_non_sha256_hash_uses_generic_scan(backend):
    from availoracle import core

    core.set_hash("sha3_256")
    b = body()
    n = mine(b, Difficulty(2**252), 0, 200)
    expected = None
    for i in range(200):
        if int.from_bytes(hashlib.sha3_256(struct.pack(">Q", i) + b.header_suffix()).digest(), "big") < 2**252:
            expected = i
            break
    assert n == expected


def test_verify_pow():
    b = body()
    target = Difficulty(2**248)
    n = mine(b, target, 0, 20000)
    assert n is not None
    assert verify_pow(b.with_nonce(n), target)
    assert verify_pow(b.with_nonce(n + 1), target) == (
        int.from_bytes(b.with_nonce(n + 1).header_hash, "big") < 2**248
    )
    assert verify_pow(b, Difficulty(MAX_TARGET))


def test_difficulty_bounds_and_hex():
    with pytest.raises(ValueError):
        Difficulty(0)
    with pytest.raises(ValueError):
        Difficulty(2**256)
    d = Difficulty(2**244)
    assert Difficulty.from_hex(d.to_hex()) == d
    assert d.work == 2**12


def test_chain_work():
    assert chain_work([], []) == 0
    bs = [object()] * 5
    t = Difficulty(3 * 2**200)
    assert chain_work(bs, [t] * 5) == 5 * (2**256 // t.target)
    mixed = [Difficulty(2**250), Difficulty(7), Difficulty(MAX_TARGET)]
    ref = 0
    for d in mixed:
        ref += 2**256 // d.target
    assert chain_work(bs[:3], mixed) == ref
    with pytest.raises(ValueError):
        chain_work(bs, [t])


def test_target_schedule_overrides():
    s = TargetSchedule(Difficulty(2**244), {5: Difficulty(2**240)})
    assert s.at(4).target == 2**244 and s.at(5).target == 2**240


def test_pure_python_fallback_selected_at_import():
    import os
    import subprocess
    import sys

    env = dict(os.environ, AVAILORACLE_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import availoracle.pow as p; print(p.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
    with pytest.raises(ValueError):
        powmod.use_backend("fortran")
