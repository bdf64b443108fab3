"""Counter-based random streams.

Every stochastic operation in the package draws from a :class:`RandomStream`.
The generator is Philox4x32-10 (Salmon et al., "Parallel random numbers: as
easy as 1, 2, 3", SC'11), keyed by a 64-bit seed. Output is reproducible on
any platform that implements the same arithmetic. The exact layout is:

* key words ``(k0, k1) = (seed & 0xffffffff, seed >> 32)``.
* counter words ``(c0, c1, c2, c3) = (block & 0xffffffff, block >> 32,
  stream & 0xffffffff, stream >> 32)``, where ``block`` is the 64-bit
  position inside the stream and ``stream`` is the 64-bit stream id.
* one block yields four 32-bit words ``w0..w3``. They become two uniforms on
  ``[0, 1)``: ``u1 = ((w1 << 32 | w0) >> 11) * 2**-53`` and likewise ``u2``
  from ``(w3, w2)``.
* normals come from the Marsaglia polar method. Set ``a = 2 u1 - 1`` and
  ``b = 2 u2 - 1``. A block is rejected unless ``0 < s = a**2 + b**2 < 1``.
  An accepted block emits ``a f`` and then ``b f``, with
  ``f = sqrt(-2 log(s) / s)``.
* ``standard_normal(count)`` consumes ``ceil(count / 2)`` accepted blocks and
  returns the first ``count`` values. When ``count`` is odd the final spare
  value is discarded. The block counter is the only state.

Independent chains use ``stream_id = chain index`` under a shared seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "RandomStream",
    "philox4x32",
    "uniform_pairs",
    "standard_normal_streams",
]

_MASK32 = 0xFFFFFFFF
_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = 0x9E3779B9
_W1 = 0xBB67AE85
_ROUNDS = 10
_SHIFT32 = np.uint64(32)
_SHIFT11 = np.uint64(11)
_TWO_M53 = 2.0**-53


def philox4x32(counter, key):
    """Apply the Philox4x32-10 bijection.

    Parameters
    ----------
    counter : sequence of four integer arrays (broadcastable), values < 2**32
    key : pair of python ints, each < 2**32

    Returns
    -------
    tuple of four uint64 arrays holding 32-bit words
    """
    # words live in uint64 so the 32x32 -> 64 bit products need no casts
    c0, c1, c2, c3 = (
        np.array(c, dtype=np.uint64)
        for c in np.broadcast_arrays(*(np.asarray(c, dtype=np.uint64) for c in counter))
    )
    k0, k1 = int(key[0]) & _MASK32, int(key[1]) & _MASK32
    mask = np.uint64(_MASK32)
    for r in range(_ROUNDS):
        if r:
            k0 = (k0 + _W0) & _MASK32
            k1 = (k1 + _W1) & _MASK32
        p0 = _M0 * c0
        p1 = _M1 * c2
        c1 ^= np.uint64(k0)
        c1 ^= p1 >> _SHIFT32
        c3 ^= np.uint64(k1)
        c3 ^= p0 >> _SHIFT32
        p0 &= mask
        p1 &= mask
        c0, c1, c2, c3 = c1, p1, c3, p0
    return c0, c1, c2, c3


def _split64(v):
    v = np.asarray(v, dtype=np.uint64)
    return v & np.uint64(_MASK32), v >> _SHIFT32


def uniform_pairs(seed, stream_ids, blocks):
    """Two uniforms on [0, 1) for each (stream, block) position."""
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    key = (seed & _MASK32, seed >> 32)
    blocks = np.asarray(blocks, dtype=np.uint64)
    stream_ids = np.broadcast_to(np.asarray(stream_ids, dtype=np.uint64), blocks.shape)
    b_lo, b_hi = _split64(blocks)
    s_lo, s_hi = _split64(stream_ids)
    w0, w1, w2, w3 = philox4x32((b_lo, b_hi, s_lo, s_hi), key)
    v1 = (w1 << _SHIFT32) | w0
    v2 = (w3 << _SHIFT32) | w2
    u1 = (v1 >> _SHIFT11).astype(np.float64) * _TWO_M53
    u2 = (v2 >> _SHIFT11).astype(np.float64) * _TWO_M53
    return u1, u2


def _candidate_width(pairs):
    # acceptance rate is pi/4; pad by ~4 sigma so refills are rare
    return int(pairs / 0.785 + 4.0 * math.sqrt(pairs) + 8)


def standard_normal_streams(seed, stream_ids, counters, count):
    """Draw ``count`` normals from each of several streams at once.

    Parameters
    ----------
    seed : int
        64-bit key shared by all streams.
    stream_ids, counters : 1-D integer arrays of equal length
        Stream identifiers and their current block positions.
    count : int
        Normals per stream.

    Returns
    -------
    normals : ndarray, shape (len(stream_ids), count)
    new_counters : ndarray of uint64
        Block positions just past the last consumed block of each stream.
    """
    stream_ids = np.atleast_1d(np.asarray(stream_ids, dtype=np.uint64))
    counters = np.atleast_1d(np.asarray(counters, dtype=np.uint64))
    n_streams = stream_ids.shape[0]
    if count < 0:
        raise ValueError("count must be nonnegative")
    if count == 0:
        return np.empty((n_streams, 0)), counters.copy()

    pairs = (count + 1) // 2
    width = _candidate_width(pairs)
    sids = stream_ids[:, None]
    a_parts, b_parts, m_parts = [], [], []
    start = 0
    accepted = np.zeros(n_streams, dtype=np.int64)
    while True:
        offs = np.arange(start, start + width, dtype=np.uint64)
        u1, u2 = uniform_pairs(seed, sids, counters[:, None] + offs[None, :])
        a = 2.0 * u1 - 1.0
        b = 2.0 * u2 - 1.0
        s = a * a + b * b
        ok = (s > 0.0) & (s < 1.0)
        a_parts.append(a)
        b_parts.append(b)
        m_parts.append(ok)
        accepted += ok.sum(axis=1)
        start += width
        if accepted.min() >= pairs:
            break
        width = _candidate_width(max(pairs - int(accepted.min()), 1))

    a = np.concatenate(a_parts, axis=1)
    b = np.concatenate(b_parts, axis=1)
    ok = np.concatenate(m_parts, axis=1)
    rank = np.cumsum(ok, axis=1)
    take = ok & (rank <= pairs)
    a = a[take].reshape(n_streams, pairs)
    b = b[take].reshape(n_streams, pairs)
    s = a * a + b * b
    f = np.sqrt(-2.0 * np.log(s) / s)
    out = np.empty((n_streams, 2 * pairs))
    out[:, 0::2] = a * f
    out[:, 1::2] = b * f
    last = np.argmax(take & (rank == pairs), axis=1).astype(np.uint64)
    return out[:, :count], counters + last + np.uint64(1)


@dataclass
class RandomStream:
    """One deterministic normal stream.

    ``(seed, stream_id, counter)`` fully determines every future draw, so a
    stream can be saved, copied and replayed.
    """

    seed: int = 0
    stream_id: int = 0
    counter: int = 0

    def __post_init__(self):
        for name in ("seed", "stream_id", "counter"):
            v = int(getattr(self, name))
            if not 0 <= v < 2**64:
                raise ValueError(f"{name} must fit in 64 unsigned bits, got {v}")
            setattr(self, name, v)

    def standard_normal(self, count):
        """Return the next ``count`` standard normal draws and advance."""
        normals, counters = standard_normal_streams(
            self.seed, [self.stream_id], [self.counter], int(count)
        )
        self.counter = int(counters[0])
        return normals[0]

    def spawn(self, stream_id):
        """A fresh stream under the same seed."""
        return RandomStream(self.seed, stream_id, 0)

    def copy(self):
        return RandomStream(self.seed, self.stream_id, self.counter)
