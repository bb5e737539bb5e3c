import hashlib
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metachain._kernels import available_backends, leading_zero_bits, pow_scan, pure

BACKENDS = available_backends()


def oracle_lzb(data: bytes) -> int:
    bits = "".join(f"{b:08b}" for b in data)
    return bits.index("1") if "1" in bits else len(bits)


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_leading_zero_bits_against_bitstring_oracle(name):
    mod = BACKENDS[name]
    rnd = random.Random(1)
    cases = [b"", b"\x00", b"\x00\x00", b"\x80", b"\x01", b"\x00\x1f", bytes(32)]
    cases += [bytes(rnd.randrange(256) for _ in range(rnd.randrange(1, 40))) for _ in range(200)]
    for data in cases:
        assert mod.leading_zero_bits(data) == oracle_lzb(data), data.hex()


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_pow_scan_matches_exhaustive_hashlib_scan(name):
    mod = BACKENDS[name]
    header = b"fixed-header"
    bits = 8
    expected = None
    for n in range(1 << 16):
        d = hashlib.sha256(header + n.to_bytes(8, "big")).digest()
        if oracle_lzb(d) >= bits:
            expected = n
            break
    assert expected is not None
    assert mod.pow_scan(header, bits, 0, 1 << 16) == expected


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_pow_scan_window_and_miss(name):
    mod = BACKENDS[name]
    header = b"h" * 32
    assert mod.pow_scan(header, 0, 5, 10) == 5           # difficulty 0: first nonce
    assert mod.pow_scan(header, 0, 0, 0) == -1           # empty budget
    assert mod.pow_scan(header, 200, 0, 100) == -1       # unreachable difficulty


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled backend unavailable")
@settings(max_examples=60, deadline=None)
@given(
    header=st.binary(min_size=0, max_size=80),
    bits=st.integers(min_value=0, max_value=12),
    start=st.integers(min_value=0, max_value=1 << 20),
)
def test_backend_parity(header, bits, start):
    results = {name: mod.pow_scan(header, bits, start, 30_000) for name, mod in BACKENDS.items()}
    assert len(set(results.values())) == 1, results


@pytest.mark.skipif("compiled" not in BACKENDS, reason="compiled backend unavailable")
def test_compiled_sha256_matches_hashlib_across_padding_boundaries():
    mod = BACKENDS["compiled"]
    rnd = random.Random(2)
    for ln in list(range(0, 130)) + [200, 255, 256, 300, 511]:
        data = bytes(rnd.randrange(256) for _ in range(ln))
        assert mod.sha256(data) == hashlib.sha256(data).digest(), ln


def test_default_export_is_one_of_the_backends():
    assert pow_scan in {m.pow_scan for m in BACKENDS.values()}
    assert leading_zero_bits(b"\x00\xff") == 8
    assert pure.pow_scan(b"x", 4, 0, 4096) >= 0
