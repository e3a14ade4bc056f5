"""Eigenvalues of the discrete fractional Laplacian and their asymptotics.

``psi_w(z) = exp(2 pi i z.w / n)`` is an eigenvector of the generator
``(p * f) - f`` with eigenvalue

    lambda_w = sum_x p(x) cos(2 pi x.w / n) - 1 = -2 sum_x p(x) sin^2(pi x.w / n).

For ``alpha < 2``, ``n^alpha (-lambda_w) -> c_tilde |w|^alpha`` with an error
expansion in powers ``n^-(2 - alpha + 2j)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import integrate, special

from fracpile.kernel import LongRangeKernel, cached_kernel, lattice_constant, shell_integral
from fracpile.torus import LatticeSpec, canonical_array, frequency_norms


@dataclass(frozen=True, eq=False)
class Spectrum:
    spec: LatticeSpec
    alpha: float
    lam: np.ndarray = field(repr=False)
    imag_residue: float = 0.0

    def __post_init__(self):
        self.lam.setflags(write=False)

    def value(self, w) -> float:
        return float(self.lam[tuple(np.mod(np.atleast_1d(w), self.spec.n))])

    @property
    def norms(self) -> np.ndarray:
        return frequency_norms(self.spec)

    def nonzero(self) -> np.ndarray:
        """Mask of the nonzero frequencies."""
        mask = np.ones(self.spec.shape, dtype=bool)
        mask.flat[0] = False
        return mask

    def inverse(self, power: int = 1) -> np.ndarray:
        """``lambda_w^-power`` with the zero mode set to 0."""
        out = np.zeros(self.spec.shape)
        nz = self.nonzero()
        out[nz] = self.lam[nz] ** (-power)
        return out


class DirectEigenvalue(NamedTuple):
    value: float
    certificate: float


@dataclass(frozen=True)
class LimitConstant:
    d: int
    alpha: float
    c_tilde: float
    method: str
    error_estimate: float


@dataclass
class RateReport:
    d: int
    alpha: float
    ladder: list[int]
    c_tilde: float | None
    entries: list[dict] = field(default_factory=list)

    def entry(self, lemma: str) -> list[dict]:
        return [e for e in self.entries if e["lemma"] == lemma]

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "alpha": self.alpha,
            "ladder": list(self.ladder),
            "c_tilde": self.c_tilde,
            "entries": self.entries,
        }


def eigenvalues(kernel: LongRangeKernel) -> Spectrum:
    """All eigenvalues via the discrete Fourier transform of the weights."""
    ft = np.fft.fftn(kernel.weights)
    lam = ft.real - 1.0
    lam.flat[0] = 0.0  # exact: the weights sum to one
    return Spectrum(kernel.spec, kernel.alpha, lam, float(np.max(np.abs(ft.imag))))


def spectrum_for(spec: LatticeSpec, alpha: float, rel_tol: float = 1e-12) -> Spectrum:
    return eigenvalues(cached_kernel(spec, alpha, rel_tol))


def _independent_constant(d: int, alpha: float) -> float:
    method = "closed" if d <= 2 else "ewald"
    return lattice_constant(d, alpha, method=method).c_alpha


def eigenvalue_direct(spec: LatticeSpec, alpha: float, w, R: int | None = None) -> DirectEigenvalue:
    """Eigenvalue by direct summation over the infinite lattice.

    Unfolds the periodization: the sum of ``sin^2(pi x.w/n) |x|^-(d+alpha)``
    runs over ``Z^d`` up to ``|x|_inf <= R``; the remainder is replaced by
    half its non-oscillating part. The certificate bounds the total error.
    """
    w = np.atleast_1d(np.asarray(w, dtype=np.int64))
    if w.shape != (spec.d,):
        raise ValueError(f"expected a {spec.d}-vector frequency")
    if not np.any(np.mod(w, spec.n)):
        raise ValueError("w = 0 has the trivial eigenvalue 0")
    d, n = spec.d, spec.n
    s = d + alpha
    c = _independent_constant(d, alpha)
    if d == 1:
        R = R or 100_000
        x = np.arange(1, R + 1, dtype=float)
        head = 2.0 * math.fsum(np.sin(math.pi * x * w[0] / n) ** 2 * x ** (-s))
        # sum_{x>R} x^-s by the midpoint integral; convexity gives 0 <= mid - true <= err
        mid = (R + 0.5) ** (-alpha) / alpha
        err = s / 24.0 * (R - 0.5) ** (-(s + 1))
        theta = 2 * math.pi * w[0] / n
        abel = (R + 1.0) ** (-s) / abs(math.sin(theta / 2))
        full = head + (mid - err / 2)
        cert = 2 * c * (err / 2 + abel)
        return DirectEigenvalue(-2 * c * full, cert)
    R = R or 300
    axis = np.arange(-R, R + 1, dtype=float)
    rest = np.stack(np.meshgrid(*([axis] * (d - 1)), indexing="ij")).reshape(d - 1, -1)
    r2_rest = np.sum(rest**2, axis=0)
    phase_rest = rest.T @ w[1:].astype(float)
    parts = []
    for x1 in axis:
        r2 = x1 * x1 + r2_rest
        nz = r2 > 0
        ph = math.pi * (x1 * w[0] + phase_rest[nz]) / n
        parts.append(math.fsum(np.sin(ph) ** 2 * r2[nz] ** (-s / 2)))
    head = math.fsum(parts)
    upper = shell_integral(R + 0.5, d, alpha)  # remainder lies in [0, upper]
    return DirectEigenvalue(-2 * c * (head + upper / 2), c * upper)


# --- limit constant --------------------------------------------------------


def richardson(ns, values, exponents) -> tuple[float, float]:
    """Extrapolate ``v(n) = C + sum_j a_j n^-p_j`` to ``n -> inf``.

    Uses the last ``len(exponents) + 1`` points for the highest order and the
    one-lower order on the same points as the error estimate.
    """
    ns = np.asarray(ns, dtype=float)
    values = np.asarray(values, dtype=float)
    k = len(exponents)
    if ns.size < k + 1:
        raise ValueError(f"need at least {k + 1} ladder points for {k} correction terms")

    def solve(m):
        nn, vv = ns[-(m + 1):], values[-(m + 1):]
        A = np.column_stack([np.ones_like(nn)] + [nn ** (-p) for p in exponents[:m]])
        return np.linalg.solve(A, vv)[0]

    best = solve(k)
    prev = solve(k - 1) if k >= 1 else values[-1]
    return float(best), float(abs(best - prev))


def _unit_eigen_scaled(d: int, n: int, alpha: float) -> float:
    spec = LatticeSpec(d, n)
    kern = cached_kernel(spec, alpha)
    x1 = canonical_array(np.arange(n), n).astype(float)
    # -lambda_{e1} = 2 sum_x p(x) sin^2(pi x_1 / n); marginalize the other axes first
    marginal = kern.weights.reshape(n, -1).sum(axis=1)
    return n**alpha * 2.0 * math.fsum(marginal * np.sin(math.pi * x1 / n) ** 2)


def _quadrature_constant(d: int, alpha: float) -> tuple[float, float]:
    c = _independent_constant(d, alpha)
    # transverse integral of (t^2 + |v|^2)^-(d+alpha)/2 over R^(d-1), per |t|^-(1+alpha)
    transverse = math.pi ** ((d - 1) / 2) * special.gamma((1 + alpha) / 2) / special.gamma((d + alpha) / 2)
    k = 1.0 / (2.0 - alpha)  # t = u^k removes the t^(1-alpha) behaviour at the origin

    def inner(u):
        if u == 0.0:
            return k * math.pi**2
        t = u**k
        return k * math.sin(math.pi * t) ** 2 / (t * t)

    i_in, e_in = integrate.quad(inner, 0.0, 1.0, epsabs=0, epsrel=1e-13, limit=200)
    i_cos, e_cos = integrate.quad(lambda t: t ** (-1 - alpha), 1.0, np.inf, weight="cos", wvar=2 * math.pi)
    i_out = 0.5 / alpha - 0.5 * i_cos
    half_line = i_in + i_out
    scale = 2 * c * transverse * 2
    return scale * half_line, scale * (e_in + 0.5 * e_cos)


def default_ladder(d: int) -> list[int]:
    return [2**k for k in (range(5, 15) if d == 1 else range(4, 9))]


def limit_constant(d: int, alpha: float, method: str = "extrapolation", ladder=None) -> LimitConstant:
    """``c_tilde`` with ``n^alpha (-lambda_w) -> c_tilde |w|^alpha``."""
    if not 0 < alpha < 2:
        raise ValueError(f"limit constant defined for alpha in (0, 2), got {alpha}")
    if method == "quadrature":
        val, err = _quadrature_constant(d, alpha)
        return LimitConstant(d, alpha, val, method, err)
    if method != "extrapolation":
        raise ValueError(f"unknown method {method!r}")
    ns = list(ladder or default_ladder(d))
    vals = [_unit_eigen_scaled(d, n, alpha) for n in ns]
    nterms = min(4, len(ns) - 1)
    exponents = [2 - alpha + 2 * j for j in range(nterms)]
    val, err = richardson(ns, vals, exponents)
    return LimitConstant(d, alpha, val, method, err)


def membrane_constant(d: int, alpha: float) -> float:
    """``lim n^2 (-lambda_w) / |w|^2`` for ``alpha > 2`` (finite second moment)."""
    if not alpha > 2:
        raise ValueError("second moment is finite only for alpha > 2")
    c_a = lattice_constant(d, alpha).c_alpha
    c_b = lattice_constant(d, alpha - 2).c_alpha
    return 2 * math.pi**2 / d * c_a / c_b


def log_constant(d: int) -> float:
    """Leading coefficient of ``n^2 (-lambda_w) / (|w|^2 log(n/|w|))`` at alpha = 2."""
    c = lattice_constant(d, 2.0).c_alpha
    sphere = 2 * math.pi ** (d / 2) / special.gamma(d / 2)
    return 2 * math.pi**2 * c * sphere / d


# --- rate verification -----------------------------------------------------


def fit_loglog(x, y) -> tuple[float, float]:
    """Least-squares slope of log y on log x with its standard error."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    if lx.size < 3:
        raise ValueError("need at least 3 points for a slope with an error bar")
    A = np.column_stack([np.ones_like(lx), lx])
    coef, res, *_ = np.linalg.lstsq(A, ly, rcond=None)
    dof = lx.size - 2
    resid = ly - A @ coef
    sigma2 = float(resid @ resid) / dof if dof > 0 else 0.0
    cov = sigma2 * np.linalg.inv(A.T @ A)
    return float(coef[1]), float(math.sqrt(cov[1, 1]))


def _axis_modes(d: int, max_norm: float) -> list[tuple[int, ...]]:
    out = []
    r = int(math.floor(max_norm))
    for w in np.ndindex(*([2 * r + 1] * d)):
        w = tuple(int(c) - r for c in w)
        nrm = math.sqrt(sum(c * c for c in w))
        if 0 < nrm <= max_norm and w > tuple(0 for _ in w) and all(c >= 0 for c in w):
            out.append(w)
    return sorted(out, key=lambda v: (sum(c * c for c in v), v))


def verify_rate_lemmas(d: int, n_ladder, alpha: float, max_w_norm: float = 4.0, c_tilde: float | None = None) -> RateReport:
    """Empirical eigenvalue asymptotics over a geometric ladder of side lengths."""
    ladder = sorted(int(n) for n in n_ladder)
    if len(ladder) < 4:
        raise ValueError("ladder too short for a fit (need >= 4 side lengths)")
    specs = {n: spectrum_for(LatticeSpec(d, n), alpha) for n in ladder}
    modes = _axis_modes(d, max_w_norm)
    report = RateReport(d, alpha, ladder, None)

    if alpha < 2:
        if c_tilde is None:
            c_tilde = limit_constant(d, alpha).c_tilde
        report.c_tilde = c_tilde
        bands = []
        for n in ladder:
            sp = specs[n]
            nz = sp.nonzero()
            ratio = n**alpha * (-sp.lam[nz]) / sp.norms[nz] ** alpha
            bands.append((float(ratio.min()), float(ratio.max())))
        lo = min(b[0] for b in bands)
        hi = max(b[1] for b in bands)
        report.entries.append(
            {
                "lemma": "eigenvalue_band",
                "band": hi / lo,
                "min_ratio": lo / c_tilde,
                "max_ratio": hi / c_tilde,
                "per_n_band": [b[1] / b[0] for b in bands],
            }
        )
        for w in modes:
            nrm = math.sqrt(sum(c * c for c in w))
            scaled = np.array([n**alpha * -specs[n].value(w) for n in ladder])
            resid = np.abs(scaled - c_tilde * nrm**alpha)
            slope, se = fit_loglog(ladder, resid)
            report.entries.append(
                {
                    "lemma": "residual_decay",
                    "w": list(w),
                    "exponent": slope,
                    "stderr": se,
                    "expected": -(2 - alpha),
                    "top_ratio": float(scaled[-1] / (c_tilde * nrm**alpha)),
                    "ratios": (scaled / (c_tilde * nrm**alpha)).tolist(),
                }
            )
        inv_bound = max(
            float(np.max((1.0 / (n**alpha * specs[n].lam[specs[n].nonzero()])) ** 2 * specs[n].norms[specs[n].nonzero()] ** (2 * alpha)))
            for n in ladder
        )
        report.entries.append({"lemma": "inverse_square_bound", "band": inv_bound})
    elif alpha == 2:
        for w in modes:
            nrm = math.sqrt(sum(c * c for c in w))
            q = np.array([-specs[n].value(w) * n**2 / (nrm**2 * math.log(n / nrm)) for n in ladder])
            changes = np.abs(np.diff(q)) / q[:-1]
            report.entries.append(
                {
                    "lemma": "log_correction",
                    "w": list(w),
                    "values": q.tolist(),
                    "relative_changes": changes.tolist(),
                    "leading_constant": log_constant(d),
                }
            )
    else:
        limit = membrane_constant(d, alpha)
        for w in modes:
            nrm = math.sqrt(sum(c * c for c in w))
            q = np.array([-specs[n].value(w) * n**2 / nrm**2 for n in ladder])
            changes = np.abs(np.diff(q)) / q[:-1]
            resid = np.abs(q - limit)
            slope, se = fit_loglog(ladder, resid)
            report.entries.append(
                {
                    "lemma": "membrane_limit",
                    "w": list(w),
                    "values": q.tolist(),
                    "relative_changes": changes.tolist(),
                    "limit": limit,
                    "exponent": slope,
                    "stderr": se,
                    "expected": 2 - min(3.0, alpha),
                }
            )
    return report
