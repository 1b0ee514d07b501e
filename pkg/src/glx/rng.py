"""Counter-based random streams.

Two flavours share one key derivation:

* ``KeyedStream`` / ``uniform_at`` / ``normal_at``: a stateless hash of
  ``(seed, stream, replica, sweep, site, draw)``.  Used inside the lattice
  kernels so that the value drawn for a site never depends on how the work
  was split across chains or threads.
* ``generator``: a numpy ``Generator`` over Philox keyed from the same seed and
  a tuple of stream names, for bulk vectorised draws (walks, embeddings,
  exact Gaussian fields).
"""
from __future__ import annotations

import hashlib

import numba
import numpy as np

MASK64 = (1 << 64) - 1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0


def split_seed(seed: int) -> tuple[int, int]:
    """Split a 128-bit integer seed into two 64-bit words (low, high)."""
    if seed < 0 or seed >= (1 << 128):
        raise ValueError("seed must be a non-negative 128-bit integer")
    return seed & MASK64, seed >> 64


def stream_key(seed: int, *names: str | int) -> tuple[int, int]:
    """Derive a 128-bit key for a named stream as (low, high) words."""
    lo, hi = split_seed(seed)
    h = hashlib.blake2b(digest_size=16)
    h.update(lo.to_bytes(8, "little"))
    h.update(hi.to_bytes(8, "little"))
    for name in names:
        h.update(b"\x00")
        h.update(str(name).encode())
    d = h.digest()
    return int.from_bytes(d[:8], "little"), int.from_bytes(d[8:], "little")


def generator(seed: int, *names: str | int) -> np.random.Generator:
    lo, hi = stream_key(seed, *names)
    return np.random.Generator(np.random.Philox(key=lo | (hi << 64)))


@numba.njit(inline="always")
def mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@numba.njit(inline="always")
def prefix(k0, k1, replica, sweep):
    h = mix64(k0 ^ mix64(k1 + _GOLDEN))
    h = mix64(h ^ np.uint64(replica))
    return mix64(h ^ np.uint64(sweep))


@numba.njit(inline="always")
def uniform_at(pre, site, draw):
    """Uniform in [0, 1) for one (site, draw) below a precomputed prefix."""
    h = mix64(pre ^ np.uint64(site))
    h = mix64(h ^ (np.uint64(draw) * _GOLDEN + np.uint64(1)))
    return float(h >> _S11) * _INV53


@numba.njit(inline="always")
def normal_at(pre, site, draw):
    # Box-Muller, cosine branch; consumes draws 2*draw and 2*draw+1
    u1 = uniform_at(pre, site, 2 * draw)
    u2 = uniform_at(pre, site, 2 * draw + 1)
    return np.sqrt(-2.0 * np.log(1.0 - u1)) * np.cos(2.0 * np.pi * u2)


@numba.njit(cache=True)
def _fill_normals(out, k0, k1, replicas, sweep, draw):
    R, n = out.shape
    for r in range(R):
        pre = prefix(k0, k1, replicas[r], sweep)
        for s in range(n):
            out[r, s] = normal_at(pre, s, draw)


@numba.njit(cache=True)
def _fill_uniforms(out, k0, k1, replicas, sweep, draw):
    R, n = out.shape
    for r in range(R):
        pre = prefix(k0, k1, replicas[r], sweep)
        for s in range(n):
            out[r, s] = uniform_at(pre, s, draw)


class KeyedStream:
    """Stateless keyed stream: ``(replica, sweep, site, draw) -> number``.

    The object only holds the derived key; every draw is a pure function of
    its coordinates, so interrupted runs resume bit-identically.
    """

    def __init__(self, seed: int, *names: str | int):
        self.seed = seed
        self.names = tuple(names)
        lo, hi = stream_key(seed, *names)
        self.k0 = np.uint64(lo)
        self.k1 = np.uint64(hi)

    def normals(self, replicas, sweep: int, n_sites: int, draw: int = 0) -> np.ndarray:
        replicas = np.ascontiguousarray(replicas, dtype=np.int64)
        out = np.empty((replicas.size, n_sites))
        _fill_normals(out, self.k0, self.k1, replicas, np.int64(sweep), np.int64(draw))
        return out

    def uniforms(self, replicas, sweep: int, n_sites: int, draw: int = 0) -> np.ndarray:
        replicas = np.ascontiguousarray(replicas, dtype=np.int64)
        out = np.empty((replicas.size, n_sites))
        _fill_uniforms(out, self.k0, self.k1, replicas, np.int64(sweep), np.int64(draw))
        return out

    def __repr__(self) -> str:
        return f"KeyedStream(names={self.names!r})"


def keyed_uniform_reference(seed: int, names, replica: int, sweep: int, site: int, draw: int) -> float:
    """Pure-Python evaluation of the keyed hash (used to cross-check the jit path)."""

    def mix(z):
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    k0, k1 = stream_key(seed, *names)
    h = mix(k0 ^ mix((k1 + 0x9E3779B97F4A7C15) & MASK64))
    h = mix(h ^ replica)
    h = mix(h ^ sweep)
    h = mix(h ^ site)
    h = mix(h ^ ((draw * 0x9E3779B97F4A7C15 + 1) & MASK64))
    return (h >> 11) * _INV53
