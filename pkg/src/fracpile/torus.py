"""Geometry and indexing of the discrete torus Z^d_n.

Sites and frequencies are integer vectors reduced to the canonical window
``{-(n // 2), ..., n - n // 2 - 1}`` per coordinate. Fields are stored as
numpy arrays of shape ``(n,) * d`` indexed by the residue ``c mod n`` of each
coordinate, which is also the layout ``numpy.fft`` expects. The flat index of
a site is the row-major (C order) index of its residue tuple.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LatticeSpec:
    d: int
    n: int

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ValueError(f"dimension must be a positive integer, got {self.d!r}")
        if int(self.n) != self.n or self.n < 2:
            raise ValueError(f"side length must be an integer >= 2, got {self.n!r}")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.d

    @property
    def volume(self) -> int:
        return self.n**self.d

    @property
    def lo(self) -> int:
        return -(self.n // 2)

    @property
    def hi(self) -> int:
        return self.n - self.n // 2 - 1

    def coords(self) -> np.ndarray:
        """Canonical coordinates of every site, shape ``(d,) + shape``."""
        axis = canonical_array(np.arange(self.n), self.n)
        return np.stack(np.meshgrid(*([axis] * self.d), indexing="ij"))

    def flat_index(self, p) -> int:
        p = _as_vector(p, self.d)
        return int(np.ravel_multi_index(tuple(np.mod(p, self.n)), self.shape))

    def point(self, index: int) -> tuple[int, ...]:
        if not 0 <= index < self.volume:
            raise IndexError(f"flat index {index} outside [0, {self.volume})")
        res = np.unravel_index(index, self.shape)
        return tuple(int(v) for v in canonical_array(np.asarray(res), self.n))


def canonical_array(a, n: int) -> np.ndarray:
    """Reduce integers elementwise into the canonical window."""
    a = np.asarray(a)
    return np.mod(a + n // 2, n) - n // 2


def _as_vector(p, d: int) -> np.ndarray:
    v = np.atleast_1d(np.asarray(p))
    if v.ndim != 1 or v.shape[0] != d:
        raise ValueError(f"expected a {d}-vector, got shape {v.shape}")
    if not np.issubdtype(v.dtype, np.integer):
        if not np.all(np.equal(np.mod(v, 1), 0)):
            raise ValueError(f"coordinates must be integers, got {p!r}")
        v = v.astype(np.int64)
    return v


def canonical(p, spec: LatticeSpec) -> tuple[int, ...]:
    v = _as_vector(p, spec.d)
    return tuple(int(c) for c in canonical_array(v, spec.n))


def torus_diff(x, y, spec: LatticeSpec) -> tuple[int, ...]:
    """Canonical representative of ``x - y``."""
    return canonical(_as_vector(x, spec.d) - _as_vector(y, spec.d), spec)


def frequencies(spec: LatticeSpec) -> list[tuple[int, ...]]:
    """All n^d Fourier frequencies in flat-index order (frequency 0 first)."""
    return [spec.point(i) for i in range(spec.volume)]


def frequency_norms(spec: LatticeSpec) -> np.ndarray:
    """Euclidean norm of each canonical frequency, laid out like a field."""
    return np.sqrt(np.sum(spec.coords().astype(float) ** 2, axis=0))


def check_field(f, spec: LatticeSpec) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.shape != spec.shape:
        if f.size == spec.volume and f.ndim == 1:
            return f.reshape(spec.shape)
        raise ValueError(f"field has shape {f.shape}, expected {spec.shape}")
    return f
