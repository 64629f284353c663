"""Portable seeded random numbers.

Every random draw in the package (parameter init, synthetic scenes, triplet
mining) goes through :class:`Rng`, a xoshiro256** generator whose state is
filled from a splitmix64 stream.  The generator runs ``LANES`` independent
xoshiro states side by side so that bulk draws are vectorized with numpy
uint64 arithmetic; the output sequence depends only on the seed and on the
sequence of calls, never on the platform.

Lane ``k`` of a generator seeded with ``s`` is initialised with the splitmix64
outputs number ``4k .. 4k+3`` starting from state ``s``.  One "round" advances
every lane once and yields ``LANES`` words in lane order.
"""

from __future__ import annotations

import numpy as np

LANES = 64
_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(state: int) -> tuple[int, int]:
    """One splitmix64 step. Returns (new_state, output)."""
    state = (state + _GOLDEN) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return state, z ^ (z >> 31)


def derive_seed(seed: int, *keys: int) -> int:
    """Deterministically mix integer keys into a child seed."""
    s = seed & _MASK
    for k in keys:
        _, h = splitmix64(k & _MASK)
        s, out = splitmix64(s ^ h)
        s = out
    return s


def _rotl(x: np.ndarray, k: int) -> np.ndarray:
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


class Rng:
    """Lane-parallel xoshiro256** generator."""

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK
        words = []
        s = self.seed
        for _ in range(4 * LANES):
            s, out = splitmix64(s)
            words.append(out)
        st = np.array(words, dtype=np.uint64).reshape(LANES, 4).T.copy()
        if not st.any(axis=0).all():  # all-zero lane is a fixed point
            st[0, ~st.any(axis=0)] = np.uint64(1)
        self._s = st
        self._buf = np.empty(0, dtype=np.uint64)

    def spawn(self, *keys: int) -> "Rng":
        return Rng(derive_seed(self.seed, *keys))

    def _rounds(self, n: int) -> np.ndarray:
        s0, s1, s2, s3 = self._s
        out = np.empty((n, LANES), dtype=np.uint64)
        five, nine = np.uint64(5), np.uint64(9)
        for r in range(n):
            out[r] = _rotl(s1 * five, 7) * nine
            t = s1 << np.uint64(17)
            s2 ^= s0
            s3 ^= s1
            s1 ^= s2
            s0 ^= s3
            s2 ^= t
            s3[:] = _rotl(s3, 45)
        return out.reshape(-1)

    def next_u64(self, n: int) -> np.ndarray:
        if n > self._buf.size:
            need = n - self._buf.size
            fresh = self._rounds(-(-need // LANES))
            self._buf = np.concatenate([self._buf, fresh])
        out, self._buf = self._buf[:n], self._buf[n:]
        return out

    def random(self, size=None) -> np.ndarray | float:
        """Uniform doubles in [0, 1) with 53 random bits."""
        n = 1 if size is None else int(np.prod(size))
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
        return float(u[0]) if size is None else u.reshape(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return low + (high - low) * self.random(size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        """Gaussian draws via Box-Muller (both outputs used)."""
        n = 1 if size is None else int(np.prod(size))
        m = -(-n // 2)
        u1 = 1.0 - self.random(m)  # (0, 1]
        u2 = self.random(m)
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])[:n]
        z = loc + scale * z
        return float(z[0]) if size is None else z.reshape(size)

    def integers(self, low: int, high: int | None = None, size=None):
        """Integers in [low, high) by multiply-shift on the top 32 bits."""
        if high is None:
            low, high = 0, low
        span = high - low
        if span <= 0:
            raise ValueError("empty integer range")
        if span > 1 << 32:
            raise ValueError("integer range too large")
        n = 1 if size is None else int(np.prod(size))
        top = self.next_u64(n) >> np.uint64(32)
        v = ((top * np.uint64(span)) >> np.uint64(32)).astype(np.int64) + low
        return int(v[0]) if size is None else v.reshape(size)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of range(n)."""
        perm = np.arange(n)
        if n < 2:
            return perm
        draws = self.random(n - 1)
        for i in range(n - 1, 0, -1):
            j = int(draws[n - 1 - i] * (i + 1))
            perm[i], perm[j] = perm[j], perm[i]
        return perm

    def choice(self, n: int, size: int, replace: bool = True) -> np.ndarray:
        if replace:
            return self.integers(0, n, size)
        if size > n:
            raise ValueError("sample larger than population")
        return self.permutation(n)[:size]
