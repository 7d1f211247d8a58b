"""Stateless, counter-based random environment.

Every weight and auxiliary uniform is a pure function of
``(master_seed, replica_id, stream tag, coordinates)``.  Nothing is stored, so
geodesics, Busemann values and interfaces computed for the same replica all see
the same field, from any thread, in any order.

Mixer (bit-exact contract)
--------------------------
All arithmetic is on unsigned 64-bit words, wrapping.

* ``mix(z)``: ``z ^= z >> 30; z *= 0xBF58476D1CE4E5B9; z ^= z >> 27;
  z *= 0x94D049BB133111EB; z ^= z >> 31`` (the SplitMix64 finaliser, a
  bijection of 64-bit words).
* ``absorb(h, v) = mix((h ^ v) + 0x9E3779B97F4A7C15)``, bijective in ``v``.
* Tag code: first 8 bytes (little endian) of ``blake2b(tag.encode("utf-8"),
  digest_size=8)``.
* Stream key: ``absorb(absorb(absorb(0x6C70706C61622D31, seed), replica), tag)``.
* Word for lattice point ``(x, y)`` in the ``"weights"`` stream:
  ``absorb(absorb(key, y), x)`` with signed coordinates taken modulo 2**64.
  Word for index ``i`` in any other stream: ``absorb(key, i)``.
* ``U = (word >> 11) * 2**-53`` in ``[0, 1)``.
* Weight: ``round(-ln(1 - U) * 2**32) * 2**-32``.  The rounding puts weights on a
  dyadic grid so every passage time below ``2**21`` is an exact binary64 sum;
  max-plus identities (quadrangle inequality, Busemann telescoping, locally
  constant difference profiles) then hold with no floating-point slack.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

MASK64 = (1 << 64) - 1
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_GOLDEN = 0x9E3779B97F4A7C15
_INIT = 0x6C70706C61622D31

WEIGHT_TAG = "weights"
WEIGHT_QUANTUM = 2.0**-32
_INV53 = 2.0**-53


def _mix(z: int) -> int:
    z ^= z >> 30
    z = (z * _M1) & MASK64
    z ^= z >> 27
    z = (z * _M2) & MASK64
    return z ^ (z >> 31)


def _absorb(h: int, v: int) -> int:
    return _mix((((h ^ (v & MASK64)) + _GOLDEN) & MASK64))


def tag_code(tag: str) -> int:
    digest = hashlib.blake2b(tag.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def parse_seed(text: str | int) -> int:
    """Accept an int, a decimal string or a ``0x`` hex string."""
    if isinstance(text, int):
        value = text
    else:
        s = text.strip().lower()
        value = int(s, 16) if s.startswith("0x") else int(s, 10)
    if not 0 <= value <= MASK64:
        raise ValueError(f"seed {text!r} does not fit in 64 unsigned bits")
    return value


@dataclass(frozen=True)
class EnvHandle:
    master_seed: int
    replica_id: int = 0
    _keys: dict = field(default_factory=dict, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        for name in ("master_seed", "replica_id"):
            v = getattr(self, name)
            if not 0 <= v <= MASK64:
                raise ValueError(f"{name} must be a 64-bit unsigned integer, got {v}")

    def stream_key(self, tag: str) -> int:
        key = self._keys.get(tag)
        if key is None:
            h = _absorb(_INIT, self.master_seed)
            h = _absorb(h, self.replica_id)
            key = _absorb(h, tag_code(tag))
            self._keys[tag] = key
        return key

    @property
    def weight_key(self) -> np.uint64:
        return np.uint64(self.stream_key(WEIGHT_TAG))


@dataclass(frozen=True)
class EnvBatch:
    """Replica ``r`` of a batch is ``EnvHandle(master_seed, offset + r)``."""

    master_seed: int
    offset: int = 0

    def __getitem__(self, r: int) -> EnvHandle:
        return EnvHandle(self.master_seed, (self.offset + r) & MASK64)


def _quantize(e: float) -> float:
    return math.floor(e * 4294967296.0 + 0.5) * WEIGHT_QUANTUM


def weight_at(env: EnvHandle, p) -> float:
    """Exp(1) weight at lattice point ``p = (x, y)``."""
    x, y = int(p[0]), int(p[1])
    word = _absorb(_absorb(env.stream_key(WEIGHT_TAG), y), x)
    u = (word >> 11) * _INV53
    return _quantize(-math.log(1.0 - u))


def uniform_at(env: EnvHandle, stream_tag: str, index: int) -> float:
    if stream_tag == WEIGHT_TAG:
        raise ValueError("stream tag 'weights' is reserved for the weight field")
    word = _absorb(env.stream_key(stream_tag), int(index))
    return (word >> 11) * _INV53


def uniforms(env: EnvHandle, stream_tag: str, start: int, count: int) -> np.ndarray:
    """Vectorised ``uniform_at`` over indices ``start .. start+count-1``."""
    if stream_tag == WEIGHT_TAG:
        raise ValueError("stream tag 'weights' is reserved for the weight field")
    return _uniform_block(np.uint64(env.stream_key(stream_tag)), np.int64(start), count)


def weights_at(env: EnvHandle, xs, ys) -> np.ndarray:
    """Vectorised ``weight_at`` for coordinate arrays."""
    xs = np.ascontiguousarray(xs, dtype=np.int64)
    ys = np.ascontiguousarray(ys, dtype=np.int64)
    return _weight_points(env.weight_key, xs.ravel(), ys.ravel()).reshape(xs.shape)


# ---------------------------------------------------------------- numba side

_NM1 = np.uint64(_M1)
_NM2 = np.uint64(_M2)
_NGOLD = np.uint64(_GOLDEN)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)


@njit(inline="always")
def nb_mix(z):
    z = (z ^ (z >> _S30)) * _NM1
    z = (z ^ (z >> _S27)) * _NM2
    return z ^ (z >> _S31)


@njit(inline="always")
def nb_absorb(h, v):
    return nb_mix((h ^ v) + _NGOLD)


@njit(inline="always")
def nb_coord(v):
    # wraps modulo 2**64 (two's complement), matching ``v & MASK64``
    return np.uint64(np.int64(v))


@njit(inline="always")
def nb_weight(hy, x):
    u = np.float64(nb_absorb(hy, nb_coord(x)) >> _S11) * _INV53
    return math.floor(-math.log(1.0 - u) * 4294967296.0 + 0.5) * WEIGHT_QUANTUM


@njit(nogil=True, cache=True)
def _weight_points(key, xs, ys):
    out = np.empty(xs.shape[0])
    for i in range(xs.shape[0]):
        out[i] = nb_weight(nb_absorb(key, nb_coord(ys[i])), xs[i])
    return out


@njit(nogil=True, cache=True)
def _uniform_block(key, start, count):
    out = np.empty(count)
    for i in range(count):
        out[i] = np.float64(nb_absorb(key, nb_coord(start + i)) >> _S11) * _INV53
    return out
