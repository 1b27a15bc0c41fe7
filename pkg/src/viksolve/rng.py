"""Deterministic, portable random number generation for benches.

The bench harness must produce the same point sets on every platform, so it
does not rely on numpy's generator lineup.  Instead it uses a fixed, documented
pair of algorithms:

* ``SplitMix64`` expands a 64-bit seed into a stream of 64-bit words and is
  used both for seeding and for deriving independent per-trial seeds.
* ``Xoshiro256StarStar`` (xoshiro256**, an xorshift-family generator) produces
  the actual sample stream.  Its four state words are drawn from a SplitMix64
  seeded with the user seed.

Uniform doubles are produced from the top 53 bits of each 64-bit output
(``u = (word >> 11) * 2**-53``), giving values in [0, 1).
"""

from __future__ import annotations

_MASK = (1 << 64) - 1


class SplitMix64:
    """SplitMix64 stream; used for seed expansion and per-trial seed derivation."""

    def __init__(self, seed: int):
        self._state = seed & _MASK

    def next_u64(self) -> int:
        self._state = (self._state + 0x9E3779B97F4A7C15) & _MASK
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        return z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK


class Xoshiro256StarStar:
    """xoshiro256** generator seeded through SplitMix64."""

    def __init__(self, seed: int):
        sm = SplitMix64(seed)
        self._s = [sm.next_u64() for _ in range(4)]

    def next_u64(self) -> int:
        s = self._s
        result = (_rotl((s[1] * 5) & _MASK, 7) * 9) & _MASK
        t = (s[1] << 17) & _MASK
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        u = (self.next_u64() >> 11) * 2.0 ** -53
        return lo + u * (hi - lo)


def derive_seed(seed: int, index: int) -> int:
    """Seed for trial ``index`` of a bench run seeded with ``seed``.

    Defined as the ``index + 1``-th output of a SplitMix64 stream seeded with
    ``seed``; fixed here so that bench tables are portable golden data.
    """
    if index < 0:
        raise ValueError("index must be nonnegative")
    sm = SplitMix64(seed)
    value = sm.next_u64()
    for _ in range(index):
        value = sm.next_u64()
    return value
