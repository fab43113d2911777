"""Counter-based random number streams for reproducible parallel simulation.

Every photon owns an independent Philox-4x64-10 stream keyed by
``(seed, photon_index)``, so the random sequence a photon sees depends only
on that pair and never on thread scheduling or batch composition.

Two interchangeable front ends share the stream definition:

* :func:`philox_block` - a numba-compilable implementation of the
  Philox-4x64-10 block function, used inside the transport kernel.
* :class:`PhotonStream` - a thin wrapper over ``numpy.random.Philox`` with
  the same key layout, for reference implementations and tests.

Uniform doubles are built from raw 64-bit words as ``(word >> 11) * 2**-53``,
matching ``numpy.random.Generator.random``. Words are consumed in block
order ``out[0], out[1], out[2], out[3]``. numpy's Philox increments the
counter *before* each block, so visible block ``b`` of a stream is
``philox_block(b + 1, 0, 0, 0, seed, photon_index)``; kernels must start
their block counter at 1 to stay word-for-word identical with
:class:`PhotonStream`.
"""

from __future__ import annotations

import numba
import numpy as np
from numba import uint64

# Philox-4x64 round constants (multipliers and Weyl key increments).
PHILOX_M0 = np.uint64(0xD2E7470EE14C6C93)
PHILOX_M1 = np.uint64(0xCA5A826395121157)
PHILOX_W0 = np.uint64(0x9E3779B97F4A7C15)
PHILOX_W1 = np.uint64(0xBB67AE8584CAA73B)

_U53_SCALE = 2.0 ** -53
_MASK32 = np.uint64(0xFFFFFFFF)


@numba.njit(numba.types.UniTuple(uint64, 2)(uint64, uint64), cache=True, inline="always")
def _mulhilo64(a, b):
    """Full 64x64 -> 128 bit product as (high, low) words."""
    lo = a * b
    a_lo = a & _MASK32
    a_hi = a >> np.uint64(32)
    b_lo = b & _MASK32
    b_hi = b >> np.uint64(32)
    t = a_hi * b_lo + ((a_lo * b_lo) >> np.uint64(32))
    t_lo = t & _MASK32
    t_hi = t >> np.uint64(32)
    t_lo += a_lo * b_hi
    hi = a_hi * b_hi + t_hi + (t_lo >> np.uint64(32))
    return hi, lo


@numba.njit(
    numba.types.UniTuple(uint64, 4)(uint64, uint64, uint64, uint64, uint64, uint64),
    cache=True,
    inline="always",
)
def philox_block(c0, c1, c2, c3, k0, k1):
    """One Philox-4x64-10 block: 256-bit counter + 128-bit key -> 4 words."""
    x0, x1, x2, x3 = c0, c1, c2, c3
    for _ in range(10):
        hi0, lo0 = _mulhilo64(PHILOX_M0, x0)
        hi1, lo1 = _mulhilo64(PHILOX_M1, x2)
        x0 = hi1 ^ x1 ^ k0
        x1 = lo1
        x2 = hi0 ^ x3 ^ k1
        x3 = lo0
        k0 = k0 + PHILOX_W0
        k1 = k1 + PHILOX_W1
    return x0, x1, x2, x3


@numba.njit(cache=True, inline="always")
def u01(word):
    """Uniform double in [0, 1) from one raw 64-bit word (53-bit mantissa)."""
    return float(word >> np.uint64(11)) * _U53_SCALE


class PhotonStream:
    """Sequential view of the (seed, photon_index) substream.

    Backed by numpy's Philox bit generator with the same key layout the
    transport kernel uses, so scalar reference code can replay the exact
    random sequence any photon consumed.
    """

    def __init__(self, seed: int, photon_index: int):
        self._gen = np.random.Generator(np.random.Philox(key=[seed, photon_index]))

    def uniform(self) -> float:
        """Next uniform double in [0, 1)."""
        return self._gen.random()


def raw_block(seed: int, photon_index: int, block: int) -> tuple[int, ...]:
    """Raw words of visible block ``block`` of a stream, via numpy.

    Test/KAT helper: equals ``philox_block(block + 1, 0, 0, 0, seed,
    photon_index)`` (numpy pre-increments the counter per block).
    """
    bg = np.random.Philox(counter=[block, 0, 0, 0], key=[seed, photon_index])
    return tuple(int(w) for w in bg.random_raw(4))
