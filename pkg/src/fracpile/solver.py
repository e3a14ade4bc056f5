"""Transform-domain odometers, Green's functions and eta-field covariances.

Everything here diagonalizes the generator with ``numpy.fft``: with
``lambda_w`` its eigenvalues, the odometer solves ``lambda_w u_hat = (1 - s)_hat``
off the zero mode, and the zero mode is fixed by ``min u = 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from fracpile.sandpile import MASS_RTOL, centered_configuration, gaussian_noise
from fracpile.spectrum import Spectrum
from fracpile.torus import LatticeSpec, check_field


@dataclass(frozen=True, eq=False)
class OdometerField:
    spec: LatticeSpec
    alpha: float
    u: np.ndarray = field(repr=False)


@dataclass(frozen=True, eq=False)
class GreenTable:
    """Translation-invariant Green's function ``g(x, y) = G(x - y)``."""

    spec: LatticeSpec
    alpha: float
    G: np.ndarray = field(repr=False)
    imag_residue: float = 0.0

    def __call__(self, x, y) -> float:
        diff = np.mod(np.atleast_1d(x) - np.atleast_1d(y), self.spec.n)
        return float(self.G[tuple(diff)])


def _solve_zero_mean(spectrum: Spectrum, rhs: np.ndarray) -> np.ndarray:
    """Zero-mean ``v`` with ``L v = rhs`` (``rhs`` must have zero mean)."""
    vhat = np.fft.fftn(rhs) * spectrum.inverse()
    return np.fft.ifftn(vhat).real


def spectral_odometer(spectrum: Spectrum, s) -> OdometerField:
    """Odometer of the stabilization of ``s``: ``s + L u = 1``, ``min u = 0``."""
    spec = spectrum.spec
    s = check_field(s, spec)
    total = math.fsum(s.ravel())
    if abs(total - spec.volume) > MASS_RTOL * spec.volume:
        raise ValueError(f"total mass {total!r} differs from n^d = {spec.volume}: zero mode inconsistent")
    v = _solve_zero_mean(spectrum, 1.0 - s)
    return OdometerField(spec, spectrum.alpha, v - v.min())


def green_function(spectrum: Spectrum) -> GreenTable:
    """``G(z) = -n^-d sum_{w != 0} exp(2 pi i z.w/n) / lambda_w``."""
    full = np.fft.ifftn(-spectrum.inverse())
    return GreenTable(spectrum.spec, spectrum.alpha, full.real, float(np.max(np.abs(full.imag))))


def circular_convolve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``(a * b)(x) = sum_z a(x - z) b(z)`` on the torus."""
    return np.fft.ifftn(np.fft.fftn(a) * np.fft.fftn(b)).real


def eta_from_noise(green: GreenTable, sigma: np.ndarray) -> np.ndarray:
    """``eta = G * (s - 1)`` for the centered configuration built from ``sigma``."""
    return circular_convolve(green.G, centered_configuration(sigma) - 1.0)


def sample_eta(spectrum: Spectrum, seed, green: GreenTable | None = None) -> np.ndarray:
    """One draw of the Gaussian eta field (same stream as ``init_gaussian``)."""
    from fracpile.montecarlo import as_generator

    green = green or green_function(spectrum)
    sigma = gaussian_noise(spectrum.spec, as_generator(seed))
    return eta_from_noise(green, sigma)


def covariance_table(spectrum: Spectrum) -> np.ndarray:
    """``C(z) = n^-d sum_{w != 0} exp(2 pi i z.w/n) / lambda_w^2``, so ``E[eta(x) eta(y)] = C(y - x)``."""
    return np.fft.ifftn(spectrum.inverse(2)).real


def eta_covariance(spectrum: Spectrum, x, y, table: np.ndarray | None = None) -> float:
    table = covariance_table(spectrum) if table is None else table
    diff = np.mod(np.atleast_1d(y) - np.atleast_1d(x), spectrum.spec.n)
    return float(table[tuple(diff)])


def covariance_matrix(spectrum: Spectrum) -> np.ndarray:
    """Dense ``n^d x n^d`` covariance; audit path for small tori."""
    spec = spectrum.spec
    if spec.volume > 4096:
        raise ValueError("dense covariance refused beyond 4096 sites")
    table = covariance_table(spectrum)
    res = np.indices(spec.shape).reshape(spec.d, -1)
    diff = np.mod(res[:, None, :] - res[:, :, None], spec.n)
    return table[tuple(diff)]
