"""Per-client random streams.

Each client owns a SplitMix64 stream. Stream keys are split off a master seed
by index, and the n-th output of a stream is ``mix64(key + (n + 1) * GAMMA)``,
so any draw is addressable by ``(master_seed, client, n)``. This makes a
simulation independent of the order (and the number of workers) in which
clients are stepped, and lets the scalar and vectorized code paths consume
identical uniforms.

Splitting rule::

    key_i = mix64(master_seed + (i + 1) * GAMMA)      (mod 2**64)

Draw layout: at protocol step k a client uses draw ``2k`` for its intent coin
and ``2k + 1`` for its randomized-response coin, in both modes.
"""

from __future__ import annotations

import numpy as np

MASK = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_INV_2_53 = 1.0 / (1 << 53)


def mix64(z: int) -> int:
    z &= MASK
    z = ((z ^ (z >> 30)) * _M1) & MASK
    z = ((z ^ (z >> 27)) * _M2) & MASK
    return z ^ (z >> 31)


def stream_key(master_seed: int, client: int) -> int:
    return mix64(master_seed + (client + 1) * GAMMA)


def uniform_at(key: int, n: int) -> float:
    """n-th uniform in [0, 1) of the stream with the given key."""
    return (mix64(key + (n + 1) * GAMMA) >> 11) * _INV_2_53


class ClientStream:
    """Scalar view of one client's stream."""

    __slots__ = ("key",)

    def __init__(self, master_seed: int, client: int):
        self.key = stream_key(master_seed, client)

    def uniform(self, n: int) -> float:
        return uniform_at(self.key, n)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, ClientStream) and other.key == self.key

    def __hash__(self) -> int:
        return hash(self.key)

    def __repr__(self) -> str:
        return f"ClientStream(key={self.key:#018x})"


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = z ^ (z >> np.uint64(30))
    z = z * np.uint64(_M1)
    z = z ^ (z >> np.uint64(27))
    z = z * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def stream_keys(master_seed: int, n_clients: int, start: int = 0) -> np.ndarray:
    return np.array(
        [stream_key(master_seed, i) for i in range(start, start + n_clients)],
        dtype=np.uint64,
    )


def uniforms_at(keys: np.ndarray, n: int) -> np.ndarray:
    """n-th uniform of every stream in ``keys``."""
    offset = np.uint64(((n + 1) * GAMMA) & MASK)
    with np.errstate(over="ignore"):
        z = _mix64_array(keys + offset)
    return (z >> np.uint64(11)).astype(np.float64) * _INV_2_53


def stream_block(key: int, start: int, count: int) -> np.ndarray:
    """Uniforms ``start .. start + count - 1`` of a single stream."""
    n = np.arange(start + 1, start + count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = _mix64_array(np.uint64(key) + n * np.uint64(GAMMA))
    return (z >> np.uint64(11)).astype(np.float64) * _INV_2_53
