"""Reference growth curves and field-level functionals.

The rescaled odometer field is ``Xi_n(x) = c_tilde a(n) u(n x)`` on the unit
torus. Test functions are finite Fourier sums ``f = sum_nu a_nu exp(2 pi i nu.x)``
without a constant term, and the pairing integrates ``f`` exactly over the
cube of side ``1/n`` around each rescaled site.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from fracpile.spectrum import Spectrum, limit_constant, log_constant, membrane_constant

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FieldSpec:
    d: int
    alpha: float
    c_tilde: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not self.c_tilde > 0:
            raise ValueError(f"c_tilde must be positive, got {self.c_tilde}")

    @classmethod
    def build(cls, d: int, alpha: float, method: str = "extrapolation") -> FieldSpec:
        """Pick the eigenvalue constant matching the normalization regime."""
        if alpha < 2:
            c = limit_constant(d, alpha, method=method).c_tilde
        elif alpha == 2:
            c = log_constant(d)
        else:
            c = membrane_constant(d, alpha)
        return cls(d, float(alpha), c)

    @property
    def gamma(self) -> float:
        return min(self.alpha, 2.0)

    def a_of_n(self, n: int) -> float:
        d = self.d
        if self.alpha < 2:
            return n ** ((d - 2 * self.alpha) / 2)
        if self.alpha == 2:
            return n ** ((d - 4) / 2) * math.log(n)
        return n ** ((d - 4) / 2)


@dataclass(frozen=True)
class TestFunction:
    """``f(x) = sum_k coeffs[k] exp(2 pi i modes[k].x)`` with no zero mode."""

    modes: tuple[tuple[int, ...], ...]
    coeffs: tuple[complex, ...]

    __test__ = False  # keep pytest from collecting the class

    def __post_init__(self):
        if len(self.modes) != len(self.coeffs):
            raise ValueError("modes and coeffs differ in length")
        if not self.modes:
            raise ValueError("a test function needs at least one mode")
        dims = {len(m) for m in self.modes}
        if len(dims) != 1:
            raise ValueError("modes have inconsistent dimensions")
        if any(not any(m) for m in self.modes):
            raise ValueError("test functions must be mean-zero: the zero mode is not allowed")
        if len(set(self.modes)) != len(self.modes):
            raise ValueError("repeated mode")

    @classmethod
    def mode(cls, nu, coeff: complex = 1.0) -> TestFunction:
        return cls((tuple(int(v) for v in nu),), (complex(coeff),))

    @classmethod
    def cosine(cls, nu) -> TestFunction:
        """``cos(2 pi nu.x)``, real valued."""
        nu = tuple(int(v) for v in nu)
        return cls((nu, tuple(-v for v in nu)), (0.5, 0.5))

    @property
    def d(self) -> int:
        return len(self.modes[0])

    def coefficient(self, nu) -> complex:
        nu = tuple(int(v) for v in nu)
        for m, c in zip(self.modes, self.coeffs):
            if m == nu:
                return c
        return 0j

    def is_real(self) -> bool:
        return all(
            abs(self.coefficient(tuple(-v for v in m)) - np.conj(c)) <= 1e-15 * max(1.0, abs(c))
            for m, c in zip(self.modes, self.coeffs)
        )

    def __call__(self, x) -> np.ndarray:
        """Evaluate at points ``x`` of shape ``(..., d)``."""
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1], dtype=complex)
        for m, c in zip(self.modes, self.coeffs):
            out += c * np.exp(2j * np.pi * (x @ np.asarray(m, dtype=float)))
        return out


def phi_reference(d: int, gamma: float, n: float) -> float:
    """Growth order of the expected odometer on the size-``n`` torus."""
    if not 0 < gamma <= 2:
        raise ValueError(f"gamma must lie in (0, 2], got {gamma}")
    if n < 2:
        raise ValueError("n must be at least 2")
    if gamma == 2:
        log.info("gamma = 2 lies outside the stated scope of the growth law")
    if gamma > d / 2:
        return float(n) ** (gamma - d / 2)
    if gamma == d / 2:
        return math.log(n)
    return math.sqrt(math.log(n))


def psi_case(d: int, alpha: float) -> str:
    h = d / 2
    if alpha > h + 1:
        return "quadratic"
    if alpha == h + 1:
        return "log-quadratic"
    if alpha > h:
        return "power"
    if alpha == h:
        return "log"
    return "constant"


def psi_reference(d: int, alpha: float, n: float, r: float) -> float:
    """Order of ``E[(eta_0 - eta_x)^2]`` at distance ``r``.

    At ``r = 1`` the logarithmic case degenerates to 0; that value is returned
    and a warning logged, so comparisons should start at ``r = 2``.
    """
    if not 0 < alpha < 2:
        raise ValueError(f"alpha must lie in (0, 2), got {alpha}")
    if not 1 <= r <= n:
        raise ValueError(f"need 1 <= r <= n, got r={r}, n={n}")
    case = psi_case(d, alpha)
    if case == "quadratic":
        return float(n) ** (2 * alpha - d - 2) * r * r
    if case == "log-quadratic":
        return math.log(n / r) * r * r
    if case == "power":
        return float(r) ** (2 * alpha - d)
    if case == "log":
        if r == 1:
            log.warning("log case at r = 1 is degenerate (log 1 = 0)")
        return math.log(r)
    return 1.0


def gaussian_distance_table(spectrum: Spectrum) -> np.ndarray:
    """``M(x) = n^-d sum_{w != 0} sin^2(pi x.w/n) / lambda_w^2`` for every ``x``.

    Uses ``sin^2 = (1 - cos)/2``, so ``M(x) = (C(0) - C(x)) / 2`` with
    ``C`` the eta covariance row.
    """
    inv2 = spectrum.inverse(2)
    row = np.fft.ifftn(inv2).real
    return 0.5 * (row.flat[0] - row)


def gaussian_distance_sq(spectrum: Spectrum, x) -> float:
    spec = spectrum.spec
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (spec.d,):
        raise ValueError(f"point has dimension {x.size}, lattice has {spec.d}")
    w = spec.coords()
    phase = np.pi * np.tensordot(x, w, axes=1) / spec.n
    return math.fsum((np.sin(phase) ** 2 * spectrum.inverse(2)).ravel()) / spec.volume


def cube_factors(nu, n: int) -> float:
    """``prod_j int_{-1/2n}^{1/2n} exp(2 pi i nu_j t) dt`` (real by symmetry)."""
    out = 1.0
    for v in nu:
        out *= math.sin(math.pi * v / n) / (math.pi * v) if v else 1.0 / n
    return out


def mode_sums(u: np.ndarray, modes) -> np.ndarray:
    """``sum_x u(x) exp(2 pi i nu.x/n)`` per mode; leading axes of ``u`` are batch axes."""
    d = len(modes[0])
    n = u.shape[-1]
    axes = tuple(range(-d, 0))
    uhat = np.fft.fftn(u, axes=axes)
    idx = [tuple(np.mod(-np.asarray(m), n)) for m in modes]
    return np.stack([uhat[(...,) + i] for i in idx], axis=-1)


def pair_field(u: np.ndarray, f: TestFunction, fs: FieldSpec) -> np.ndarray:
    """``<Xi_n, f>`` for a field ``u`` on the size-``n`` torus.

    Accepts a batch of fields stacked on leading axes.
    """
    u = np.asarray(u, dtype=float)
    d = fs.d
    if f.d != d or u.ndim < d:
        raise ValueError("test function, field and FieldSpec dimensions disagree")
    n = u.shape[-1]
    sums = mode_sums(u, f.modes)
    weights = np.array([c * cube_factors(m, n) for m, c in zip(f.modes, f.coeffs)])
    total = sums @ weights
    out = fs.c_tilde * fs.a_of_n(n) * total
    return out.real if f.is_real() else out


def finite_pairing_variance(spectrum: Spectrum, nu, fs: FieldSpec) -> float:
    """Exact ``E|<Xi_n, phi_nu>|^2`` on the size-``n`` torus for unit-variance weights.

    The centered weights have ``E|sigma_hat(nu)|^2 = n^d`` off the zero mode,
    so the mode sum of eta has second moment ``n^d / lambda_nu^2``.
    """
    spec = spectrum.spec
    lam = spectrum.value(nu)
    if lam == 0:
        raise ValueError("mode aliases to the zero frequency")
    return (fs.c_tilde * fs.a_of_n(spec.n) * cube_factors(nu, spec.n)) ** 2 * spec.volume / lam**2


def limit_covariance(f: TestFunction, g: TestFunction, gamma: float) -> complex:
    """``sum_{w != 0} f_hat(w) conj(g_hat(w)) |w|^(-2 gamma)``."""
    total = 0j
    for m, c in zip(f.modes, f.coeffs):
        cg = g.coefficient(m)
        if cg:
            total += c * np.conj(cg) * math.hypot(*m) ** (-2 * gamma)
    return total.real if abs(total.imag) <= 1e-15 * abs(total) else total
