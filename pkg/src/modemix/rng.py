"""Deterministic seeded random numbers with an integer-only state transition.

The generator is a splitmix64 counter: state advances by a fixed odd
increment, outputs are a bijective mix of the state.  Because the i-th
output depends only on ``seed + i * GAMMA``, whole blocks of draws can be
produced vectorised in uint64 numpy arithmetic while remaining bit-equal
to sequential generation.
"""
from __future__ import annotations

import numpy as np

_U64 = np.uint64
_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_INV_2_53 = 2.0 ** -53


def _mix(z: np.ndarray) -> np.ndarray:
    """splitmix64 output function on a uint64 array (in place)."""
    z ^= z >> _U64(30)
    z *= _U64(0xBF58476D1CE4E5B9)
    z ^= z >> _U64(27)
    z *= _U64(0x94D049BB133111EB)
    z ^= z >> _U64(31)
    return z


def mix64(x: int) -> int:
    """Scalar splitmix64 mix, for seed derivation."""
    z = x & _MASK
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 & _MASK
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & _MASK
    return (z ^ (z >> 31)) & _MASK


def fnv1a64(text: str) -> int:
    h = 0xCBF29CE484222325
    for b in text.encode("utf-8"):
        h ^= b
        h = (h * 0x100000001B3) & _MASK
    return h


def derive_seed(seed: int, label: str) -> int:
    """Independent stream seed for a named component of a larger build."""
    return mix64((seed & _MASK) ^ fnv1a64(label))


class Rng:
    """splitmix64 stream; identical seed gives an identical sequence on
    every platform (uniforms are the high 53 output bits / 2**53)."""

    def __init__(self, seed: int):
        self.state = seed & _MASK

    # -- raw draws ---------------------------------------------------------

    def next_u64(self) -> int:
        self.state = (self.state + _GAMMA) & _MASK
        return mix64(self.state)

    def _block(self, n: int) -> np.ndarray:
        """Next n mixed outputs as a uint64 array; state advances by n."""
        idx = np.arange(1, n + 1, dtype=_U64)
        with np.errstate(over="ignore"):
            z = _U64(self.state) + idx * _U64(_GAMMA)
            z = _mix(z)
        self.state = (self.state + n * _GAMMA) & _MASK
        return z

    # -- distributions -----------------------------------------------------

    def uniform(self, shape=None) -> np.ndarray | float:
        """U[0,1) from the high 53 bits of each output."""
        if shape is None:
            return float(self.next_u64() >> 11) * _INV_2_53
        n = int(np.prod(shape))
        u = (self._block(n) >> _U64(11)).astype(np.float64) * _INV_2_53
        return u.reshape(shape)

    def normal(self, shape=None) -> np.ndarray | float:
        """Standard normals via Box-Muller on consecutive uniform pairs.

        An odd request still consumes a whole pair so the state sequence
        does not depend on how draws are batched into even/odd chunks.
        """
        if shape is None:
            return float(self.normal((1,))[0])
        n = int(np.prod(shape))
        pairs = (n + 1) // 2
        u = (self._block(2 * pairs) >> _U64(11)).astype(np.float64) * _INV_2_53
        u1, u2 = u[0::2], u[1::2]
        r = np.sqrt(-2.0 * np.log1p(-u1))
        theta = (2.0 * np.pi) * u2
        out = np.empty(2 * pairs)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return out[:n].reshape(shape)

    def randint(self, n: int, shape=None) -> np.ndarray | int:
        """Uniform integers in [0, n)."""
        if shape is None:
            return min(int(self.uniform() * n), n - 1)
        u = self.uniform(shape)
        return np.minimum((u * n).astype(np.int64), n - 1)

    def choice_onehot(self, k: int, batch: int) -> np.ndarray:
        """batch x k one-hot rows with uniformly chosen hot index."""
        idx = self.randint(k, (batch,))
        out = np.zeros((batch, k))
        out[np.arange(batch), idx] = 1.0
        return out

    def split(self) -> "Rng":
        """Child stream whose seed is the next output of this stream."""
        return Rng(self.next_u64())
