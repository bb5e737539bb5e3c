# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled SHA-256 nonce-scan kernel.

Carries its own FIPS 180-4 compression function: the scan hashes tens of
millions of ~40-byte messages and library one-shot APIs spend more time in
per-call dispatch than in compression. Parity with hashlib is pinned by the
kernel test suite.
"""

from cpython.bytes cimport PyBytes_AsStringAndSize
from libc.string cimport memcpy, memset


cdef extern from *:
    """
    #include <stdint.h>
    #include <string.h>

    static const uint32_t MC_K[64] = {
        0x428a2f98,0x71374491,0xb5c0fbcf,0xe9b5dba5,0x3956c25b,0x59f111f1,
        0x923f82a4,0xab1c5ed5,0xd807aa98,0x12835b01,0x243185be,0x550c7dc3,
        0x72be5d74,0x80deb1fe,0x9bdc06a7,0xc19bf174,0xe49b69c1,0xefbe4786,
        0x0fc19dc6,0x240ca1cc,0x2de92c6f,0x4a7484aa,0x5cb0a9dc,0x76f988da,
        0x983e5152,0xa831c66d,0xb00327c8,0xbf597fc7,0xc6e00bf3,0xd5a79147,
        0x06ca6351,0x14292967,0x27b70a85,0x2e1b2138,0x4d2c6dfc,0x53380d13,
        0x650a7354,0x766a0abb,0x81c2c92e,0x92722c85,0xa2bfe8a1,0xa81a664b,
        0xc24b8b70,0xc76c51a3,0xd192e819,0xd6990624,0xf40e3585,0x106aa070,
        0x19a4c116,0x1e376c08,0x2748774c,0x34b0bcb5,0x391c0cb3,0x4ed8aa4a,
        0x5b9cca4f,0x682e6ff3,0x748f82ee,0x78a5636f,0x84c87814,0x8cc70208,
        0x90befffa,0xa4506ceb,0xbef9a3f7,0xc67178f2
    };

    #define MC_ROTR(x, n) (((x) >> (n)) | ((x) << (32 - (n))))

    static void mc_compress(uint32_t h[8], const unsigned char block[64])
    {
        uint32_t w[64];
        uint32_t a, b, c, d, e, f, g, hh, t1, t2;
        int i;
        for (i = 0; i < 16; i++) {
            w[i] = ((uint32_t)block[4*i] << 24) | ((uint32_t)block[4*i+1] << 16)
                 | ((uint32_t)block[4*i+2] << 8) | (uint32_t)block[4*i+3];
        }
        for (i = 16; i < 64; i++) {
            uint32_t s0 = MC_ROTR(w[i-15], 7) ^ MC_ROTR(w[i-15], 18) ^ (w[i-15] >> 3);
            uint32_t s1 = MC_ROTR(w[i-2], 17) ^ MC_ROTR(w[i-2], 19) ^ (w[i-2] >> 10);
            w[i] = w[i-16] + s0 + w[i-7] + s1;
        }
        a = h[0]; b = h[1]; c = h[2]; d = h[3];
        e = h[4]; f = h[5]; g = h[6]; hh = h[7];
        for (i = 0; i < 64; i++) {
            uint32_t S1 = MC_ROTR(e, 6) ^ MC_ROTR(e, 11) ^ MC_ROTR(e, 25);
            uint32_t ch = (e & f) ^ ((~e) & g);
            uint32_t S0 = MC_ROTR(a, 2) ^ MC_ROTR(a, 13) ^ MC_ROTR(a, 22);
            uint32_t maj = (a & b) ^ (a & c) ^ (b & c);
            t1 = hh + S1 + ch + MC_K[i] + w[i];
            t2 = S0 + maj;
            hh = g; g = f; f = e; e = d + t1;
            d = c; c = b; b = a; a = t1 + t2;
        }
        h[0] += a; h[1] += b; h[2] += c; h[3] += d;
        h[4] += e; h[5] += f; h[6] += g; h[7] += hh;
    }

    static void mc_sha256(const unsigned char *data, size_t len, unsigned char out[32])
    {
        uint32_t h[8] = {
            0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a,
            0x510e527f, 0x9b05688c, 0x1f83d9ab, 0x5be0cd19
        };
        unsigned char tail[128];
        uint64_t bits = (uint64_t)len * 8;
        size_t full = len / 64;
        size_t rem = len - 64 * full;
        size_t tlen = (rem <= 55) ? 64 : 128;
        size_t i;
        for (i = 0; i < full; i++)
            mc_compress(h, data + 64 * i);
        memset(tail, 0, sizeof(tail));
        memcpy(tail, data + 64 * full, rem);
        tail[rem] = 0x80;
        for (i = 0; i < 8; i++)
            tail[tlen - 1 - i] = (unsigned char)(bits >> (8 * i));
        mc_compress(h, tail);
        if (tlen == 128)
            mc_compress(h, tail + 64);
        for (i = 0; i < 8; i++) {
            out[4*i]   = (unsigned char)(h[i] >> 24);
            out[4*i+1] = (unsigned char)(h[i] >> 16);
            out[4*i+2] = (unsigned char)(h[i] >> 8);
            out[4*i+3] = (unsigned char)(h[i]);
        }
    }

    /* Scan over a pre-padded single block; nonce lives at blk[noff..noff+8). */
    static long long mc_scan1(unsigned char blk[64], size_t noff, int bits,
                              uint64_t start, uint64_t end)
    {
        uint32_t h[8];
        uint64_t n;
        int i, count;
        for (n = start; n < end; n++) {
            blk[noff + 0] = (unsigned char)(n >> 56);
            blk[noff + 1] = (unsigned char)(n >> 48);
            blk[noff + 2] = (unsigned char)(n >> 40);
            blk[noff + 3] = (unsigned char)(n >> 32);
            blk[noff + 4] = (unsigned char)(n >> 24);
            blk[noff + 5] = (unsigned char)(n >> 16);
            blk[noff + 6] = (unsigned char)(n >> 8);
            blk[noff + 7] = (unsigned char)(n);
            h[0] = 0x6a09e667; h[1] = 0xbb67ae85; h[2] = 0x3c6ef372;
            h[3] = 0xa54ff53a; h[4] = 0x510e527f; h[5] = 0x9b05688c;
            h[6] = 0x1f83d9ab; h[7] = 0x5be0cd19;
            mc_compress(h, blk);
            count = 0;
            for (i = 0; i < 8; i++) {
                uint32_t x = h[i];
                if (x == 0) { count += 32; continue; }
                while (!(x & 0x80000000u)) { count++; x <<= 1; }
                break;
            }
            if (count >= bits)
                return (long long)n;
        }
        return -1;
    }
    """
    void mc_sha256(const unsigned char *data, size_t len, unsigned char *out) nogil
    long long mc_scan1(unsigned char *blk, size_t noff, int bits,
                       unsigned long long start, unsigned long long end) nogil


DEF MAX_HEADER = 512


cdef inline int _lzb(const unsigned char *d, int nbytes) nogil:
    cdef int count = 0
    cdef int i
    cdef unsigned char b
    for i in range(nbytes):
        b = d[i]
        if b == 0:
            count += 8
            continue
        while (b & 0x80) == 0:
            count += 1
            b = <unsigned char>(b << 1)
        break
    return count


def leading_zero_bits(data: bytes) -> int:
    """Number of leading zero bits in `data`."""
    cdef char *ptr
    cdef Py_ssize_t n
    PyBytes_AsStringAndSize(data, &ptr, &n)
    return _lzb(<const unsigned char *>ptr, <int>n)


def sha256(data: bytes) -> bytes:
    """SHA-256 digest (exposed for parity testing against hashlib)."""
    cdef char *ptr
    cdef Py_ssize_t n
    cdef unsigned char md[32]
    PyBytes_AsStringAndSize(data, &ptr, &n)
    mc_sha256(<const unsigned char *>ptr, <size_t>n, md)
    return md[:32]


def pow_scan(header: bytes, difficulty_bits: int, start: int, max_iters: int):
    """Scan nonces start, start+1, ... for the first one whose
    SHA-256(header || nonce_be8) digest has >= difficulty_bits leading
    zero bits. Returns the nonce, or -1 after max_iters misses.
    """
    cdef char *hptr
    cdef Py_ssize_t hlen
    cdef unsigned char buf[MAX_HEADER + 8]
    cdef unsigned char md[32]
    cdef unsigned long long n, end
    cdef int bits = difficulty_bits
    cdef int found = 0

    PyBytes_AsStringAndSize(header, &hptr, &hlen)
    if hlen > MAX_HEADER:
        raise ValueError("header longer than %d bytes" % MAX_HEADER)
    if max_iters <= 0:
        return -1
    memcpy(buf, hptr, hlen)

    n = start
    end = <unsigned long long>start + <unsigned long long>max_iters

    cdef unsigned char blk[64]
    cdef unsigned long long msgbits
    cdef long long hit
    if hlen + 8 <= 55:
        # message + 0x80 + 8-byte length fit one compression block
        memset(blk, 0, 64)
        memcpy(blk, hptr, hlen)
        blk[hlen + 8] = 0x80
        msgbits = <unsigned long long>(hlen + 8) * 8
        blk[56] = <unsigned char>((msgbits >> 56) & 0xFF)
        blk[57] = <unsigned char>((msgbits >> 48) & 0xFF)
        blk[58] = <unsigned char>((msgbits >> 40) & 0xFF)
        blk[59] = <unsigned char>((msgbits >> 32) & 0xFF)
        blk[60] = <unsigned char>((msgbits >> 24) & 0xFF)
        blk[61] = <unsigned char>((msgbits >> 16) & 0xFF)
        blk[62] = <unsigned char>((msgbits >> 8) & 0xFF)
        blk[63] = <unsigned char>(msgbits & 0xFF)
        with nogil:
            hit = mc_scan1(blk, hlen, bits, n, end)
        return hit

    with nogil:
        while n < end:
            buf[hlen + 0] = <unsigned char>((n >> 56) & 0xFF)
            buf[hlen + 1] = <unsigned char>((n >> 48) & 0xFF)
            buf[hlen + 2] = <unsigned char>((n >> 40) & 0xFF)
            buf[hlen + 3] = <unsigned char>((n >> 32) & 0xFF)
            buf[hlen + 4] = <unsigned char>((n >> 24) & 0xFF)
            buf[hlen + 5] = <unsigned char>((n >> 16) & 0xFF)
            buf[hlen + 6] = <unsigned char>((n >> 8) & 0xFF)
            buf[hlen + 7] = <unsigned char>(n & 0xFF)
            mc_sha256(buf, hlen + 8, md)
            if _lzb(md, 32) >= bits:
                found = 1
                break
            n += 1
    if found:
        return <long long>n
    return -1
