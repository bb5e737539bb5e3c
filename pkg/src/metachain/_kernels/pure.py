"""Pure-Python kernel, byte-for-byte equivalent to the compiled one."""

import hashlib


def leading_zero_bits(data: bytes) -> int:
    """Number of leading zero bits in `data`."""
    count = 0
    for b in data:
        if b == 0:
            count += 8
            continue
        count += 8 - b.bit_length()
        break
    return count


def pow_scan(header: bytes, difficulty_bits: int, start: int, max_iters: int) -> int:
    """Scan nonces start, start+1, ... for the first one whose
    SHA-256(header || nonce_be8) digest has >= difficulty_bits leading
    zero bits. Returns the nonce, or -1 after max_iters misses.
    """
    if max_iters <= 0:
        return -1
    sha = hashlib.sha256
    lzb = leading_zero_bits
    for n in range(start, start + max_iters):
        digest = sha(header + n.to_bytes(8, "big")).digest()
        if lzb(digest) >= difficulty_bits:
            return n
    return -1
