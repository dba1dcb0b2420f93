"""Pure-Python Philox4x64-10 used to cross-check numpy's bit generator."""

MASK = (1 << 64) - 1
M0 = 0xD2E7470EE14C6C93
M1 = 0xCA5A826395121157
W0 = 0x9E3779B97F4A7C15
W1 = 0xBB67AE8584CAA73B


def _mulhilo(a, b):
    p = a * b
    return p >> 64, p & MASK


def philox4x64(counter, key, rounds=10):
    """One block for a 256-bit ``counter`` and 128-bit ``key`` (little-endian words)."""
    x = [(counter >> (64 * i)) & MASK for i in range(4)]
    k0, k1 = key & MASK, (key >> 64) & MASK
    for r in range(rounds):
        if r:
            k0 = (k0 + W0) & MASK
            k1 = (k1 + W1) & MASK
        hi0, lo0 = _mulhilo(M0, x[0])
        hi1, lo1 = _mulhilo(M1, x[2])
        x = [hi1 ^ x[1] ^ k0, lo1, hi0 ^ x[3] ^ k1, lo0]
    return x


def stream(key, count):
    """First ``count`` words of a ``DeterministicRng(key)``.

    Word ``i`` is word ``i % 4`` of block ``i // 4``; numpy's generator
    increments its counter before producing a block, hence the ``+ 1``.
    """
    out = []
    for block in range((count + 3) // 4):
        out.extend(philox4x64(block + 1, key))
    return out[:count]
