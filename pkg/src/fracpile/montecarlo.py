"""Seeded replicate streams, scaling campaigns and scaling-law fits.

Every replicate owns a Philox stream derived as

    Generator(Philox(SeedSequence(master_seed, spawn_key=(stream, replicate))))

so results depend only on ``(master_seed, stream, replicate)`` and never on
execution order. Experiments use the torus size as ``stream``. Reductions run
in replicate order with ``math.fsum``.
"""

from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from fracpile.fields import FieldSpec, TestFunction, limit_covariance, pair_field
from fracpile.kernel import cached_kernel
from fracpile.sandpile import centered_configuration, init_deterministic, stabilize
from fracpile.solver import green_function, spectral_odometer
from fracpile.spectrum import spectrum_for
from fracpile.torus import LatticeSpec

log = logging.getLogger(__name__)

KINDS = ("odometer-mean", "field-cov", "eigen-rates")
MODELS = ("power", "linear-log", "sqrt-log")
AUDIT_EPS = 1e-12
AUDIT_TOL = 1e-6


def seed_stream(master_seed: int, replicate_index: int, stream: int = 0) -> np.random.Generator:
    if master_seed < 0 or replicate_index < 0 or stream < 0:
        raise ValueError("seeds and indices must be nonnegative")
    ss = np.random.SeedSequence(master_seed, spawn_key=(stream, replicate_index))
    return np.random.Generator(np.random.Philox(ss))


def as_generator(seed) -> np.random.Generator:
    """A Generator passes through; an integer seed maps to ``seed_stream(seed, 0)``."""
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, (int, np.integer)) and not isinstance(seed, bool):
        return seed_stream(int(seed), 0)
    raise TypeError(f"expected an integer seed or numpy Generator, got {type(seed).__name__}")


def draw_noise(spec: LatticeSpec, rng: np.random.Generator, weights: str = "gaussian") -> np.ndarray:
    """Unit-variance i.i.d. weights."""
    if weights == "gaussian":
        return rng.standard_normal(spec.shape)
    if weights == "uniform":
        return rng.uniform(-math.sqrt(3.0), math.sqrt(3.0), spec.shape)
    raise ValueError(f"unknown weights {weights!r}")


@dataclass
class ExperimentPlan:
    kind: str
    d: int
    alpha: float
    n_ladder: list[int]
    replicates: int
    master_seed: int = 0
    weights: str = "gaussian"
    modes: list[list[int]] = field(default_factory=list)
    tolerances: dict = field(default_factory=dict)

    def errors(self) -> list[str]:
        errs = []
        if self.kind not in KINDS:
            errs.append(f"kind must be one of {KINDS}, got {self.kind!r}")
        if not (isinstance(self.d, int) and self.d >= 1):
            errs.append(f"d must be a positive integer, got {self.d!r}")
        if not self.alpha > 0:
            errs.append(f"alpha must be positive, got {self.alpha!r}")
        ladder = list(self.n_ladder)
        if not ladder or any(not isinstance(n, int) or n < 2 for n in ladder):
            errs.append("n_ladder must be a nonempty list of integers >= 2")
        elif any(b <= a for a, b in zip(ladder, ladder[1:])):
            errs.append("n_ladder must be strictly increasing")
        if not (isinstance(self.replicates, int) and self.replicates >= 1):
            errs.append(f"replicates must be a positive integer, got {self.replicates!r}")
        if self.master_seed < 0:
            errs.append("master_seed must be nonnegative")
        if self.weights not in ("gaussian", "uniform"):
            errs.append(f"weights must be gaussian or uniform, got {self.weights!r}")
        for m in self.modes:
            if len(m) != self.d or not any(m):
                errs.append(f"mode {m} must be a nonzero vector of length d")
        return errs

    def validate(self) -> ExperimentPlan:
        errs = self.errors()
        if errs:
            raise ValueError("; ".join(errs))
        return self

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> ExperimentPlan:
        raw = json.loads(text)
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown plan keys: {sorted(unknown)}")
        return cls(**raw).validate()


@dataclass(frozen=True)
class OdometerRow:
    n: int
    mean: float
    stderr: float
    replicates: int
    audited: int
    max_audit_discrepancy: float


@dataclass(frozen=True)
class FieldRow:
    n: int
    nu: tuple[int, ...]
    replicates: int
    empirical_var: float
    var_stderr: float
    limit_var: float

    @property
    def ratio(self) -> float:
        return self.empirical_var / self.limit_var


def _map(fn, items, threads: int):
    if threads <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _chunks(total: int, size: int) -> list[range]:
    return [range(a, min(a + size, total)) for a in range(0, total, size)]


def default_threads() -> int:
    return os.cpu_count() or 1


def audit_replicate(spec, alpha, s, u_spectral, eps=AUDIT_EPS, max_steps=1_000_000) -> float:
    """Sup-norm gap between the spectral odometer and one obtained by toppling."""
    kernel = cached_kernel(spec, alpha)
    res = stabilize(init_deterministic(spec, s), kernel, eps=eps, max_steps=max_steps, log_every=0)
    if not res.converged:
        raise RuntimeError(f"toppling audit did not converge (max excess {res.max_residual_excess:.3e})")
    return float(np.max(np.abs(res.odometer_normalized - u_spectral)))


def run_odometer_mean(
    plan: ExperimentPlan,
    threads: int = 1,
    audit_every: int = 50,
    audit_max_volume: int = 1 << 12,
    chunk: int = 16,
) -> list[OdometerRow]:
    """Mean of the site-averaged odometer per torus size.

    Odometers come from the spectral solve. Every ``audit_every``-th replicate
    is re-run by toppling when the torus has at most ``audit_max_volume``
    sites; a gap above ``1e-6`` aborts the run.
    """
    plan.validate()
    rows = []
    for n in plan.n_ladder:
        spec = LatticeSpec(plan.d, n)
        spectrum = spectrum_for(spec, plan.alpha)

        def work(block: range) -> list[tuple[float, float]]:
            out = []
            for r in block:
                try:
                    sigma = draw_noise(spec, seed_stream(plan.master_seed, r, n), plan.weights)
                    s = centered_configuration(sigma)
                    u = spectral_odometer(spectrum, s).u
                    gap = float("nan")
                    if audit_every and r % audit_every == 0 and spec.volume <= audit_max_volume:
                        gap = audit_replicate(spec, plan.alpha, s, u)
                        if gap > AUDIT_TOL:
                            raise ArithmeticError(f"spectral and toppling odometers differ by {gap:.3e}")
                except Exception as exc:
                    raise RuntimeError(
                        f"replicate {r} (master_seed={plan.master_seed}, n={n}) failed: {exc}"
                    ) from exc
                out.append((math.fsum(u.ravel()) / spec.volume, gap))
            return out

        results = [x for part in _map(work, _chunks(plan.replicates, chunk), threads) for x in part]
        means = [m for m, _ in results]
        gaps = [g for _, g in results if not math.isnan(g)]
        mean = math.fsum(means) / len(means)
        if len(means) > 1:
            var = math.fsum((m - mean) ** 2 for m in means) / (len(means) - 1)
            se = math.sqrt(var / len(means))
        else:
            se = float("nan")
        rows.append(OdometerRow(n, mean, se, len(means), len(gaps), max(gaps, default=float("nan"))))
        log.info("n=%d: mean odometer %.6g +- %.2g", n, mean, se)
    return rows


def sample_eta_batch(green, spec: LatticeSpec, seeds, weights: str = "gaussian") -> np.ndarray:
    """Eta fields for a list of generators, stacked on the first axis."""
    axes = tuple(range(1, spec.d + 1))
    ghat = np.fft.fftn(green.G)
    sig = np.stack([draw_noise(spec, g, weights) for g in seeds])
    sig -= sig.mean(axis=axes, keepdims=True)
    return np.fft.ifftn(np.fft.fftn(sig, axes=axes) * ghat, axes=axes).real


def run_field_cov(
    plan: ExperimentPlan,
    modes=None,
    fs: FieldSpec | None = None,
    threads: int = 1,
    chunk: int = 256,
) -> list[FieldRow]:
    """Empirical ``E|<Xi_n, phi_nu>|^2`` against the limit ``|nu|^(-2 gamma)``.

    Each replicate samples eta by convolution, min-normalizes it to the
    odometer law and pairs the result with every single-mode test function.
    """
    plan.validate()
    modes = [tuple(m) for m in (modes if modes is not None else plan.modes)]
    if not modes:
        raise ValueError("no modes to pair with")
    fs = fs or FieldSpec.build(plan.d, plan.alpha)
    tests = [TestFunction.mode(m) for m in modes]
    rows = []
    for n in plan.n_ladder:
        spec = LatticeSpec(plan.d, n)
        green = green_function(spectrum_for(spec, plan.alpha))
        axes = tuple(range(1, spec.d + 1))

        def work(block: range) -> np.ndarray:
            eta = sample_eta_batch(green, spec, [seed_stream(plan.master_seed, r, n) for r in block], plan.weights)
            u = eta - eta.min(axis=axes, keepdims=True)
            return np.stack([pair_field(u, f, fs) for f in tests], axis=-1)

        pairs = np.concatenate(_map(work, _chunks(plan.replicates, chunk), threads))
        for k, (m, f) in enumerate(zip(modes, tests)):
            z = pairs[:, k]
            mean = z.mean()
            sq = np.abs(z - mean) ** 2
            m2 = math.fsum(sq) / (len(z) - 1)
            se = float(np.std(sq, ddof=1) / math.sqrt(len(z))) if len(z) > 1 else float("nan")
            rows.append(FieldRow(n, m, len(z), m2, se, float(limit_covariance(f, f, fs.gamma).real)))
    return rows


@dataclass(frozen=True)
class ScalingFit:
    model: str
    params: tuple[float, float]
    stderr: tuple[float, float]
    r2: float
    excluded: tuple[int, ...] = ()
    lack_of_fit_p: float = float("nan")

    @property
    def slope(self) -> float:
        return self.params[1]


def _regressor(model: str, n: np.ndarray) -> np.ndarray:
    if model == "power":
        return np.log(n)
    if model == "linear-log":
        return np.log(n)
    if model == "sqrt-log":
        return np.sqrt(np.log(n))
    raise ValueError(f"unknown model {model!r}; choose from {MODELS}")


def _wls(x, y, w, absolute: bool):
    X = np.column_stack([np.ones_like(x), x])
    sw = np.sqrt(w)
    A = X * sw[:, None]
    b = y * sw
    if np.linalg.matrix_rank(A) < 2:
        raise ValueError("singular design: the ladder needs at least two distinct n")
    beta, *_ = np.linalg.lstsq(A, b, rcond=None)
    resid = b - A @ beta
    dof = len(x) - 2
    ybar = np.sum(w * y) / np.sum(w)
    ss_tot = float(np.sum(w * (y - ybar) ** 2))
    ss_res = float(resid @ resid)
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    r2 = min(max(r2, 0.0), 1.0)
    cov = np.linalg.inv(A.T @ A)
    # supplied standard errors are taken as absolute; otherwise scale by the residuals
    scale = 1.0 if absolute else (ss_res / dof if dof > 0 else 0.0)
    se = np.sqrt(np.diag(cov) * scale)
    return beta, se, r2, ss_res, dof


def fit_scaling(ns, values, stderr=None, model: str = "power", lack_of_fit_alpha: float | None = None) -> ScalingFit:
    """Weighted least squares of ``values`` against ``n``.

    Models: ``power`` fits ``log v = a + b log n``; ``linear-log`` fits
    ``v = a + b log n``; ``sqrt-log`` fits ``v = a + b sqrt(log n)``. Weights
    are inverse squared standard errors (propagated to the log scale for the
    power model) and parameter errors treat them as absolute; without them
    the errors come from the residual scatter. With ``lack_of_fit_alpha`` set and at least four points, a
    chi-square lack-of-fit test on the full ladder may drop the smallest ``n``
    (logged).
    """
    ns = np.asarray(ns, dtype=float)
    v = np.asarray(values, dtype=float)
    if ns.size < 3 or ns.size != v.size:
        raise ValueError("need at least three (n, value) points")
    se = np.ones_like(v) if stderr is None else np.asarray(stderr, dtype=float)
    if model == "power":
        if np.any(v <= 0):
            raise ValueError("power model needs positive values")
        y = np.log(v)
        se = se / v if stderr is not None else se
    else:
        y = v
    if np.any(~np.isfinite(se)) or np.any(se <= 0):
        raise ValueError("standard errors must be positive and finite")
    w = 1.0 / se**2
    x = _regressor(model, ns)
    beta, bse, r2, ss_res, dof = _wls(x, y, w, stderr is not None)
    excluded = ()
    p_val = float("nan")
    if stderr is not None and dof > 0:
        p_val = float(stats.chi2.sf(ss_res, dof))
    if lack_of_fit_alpha is not None and stderr is not None and ns.size >= 4 and p_val < lack_of_fit_alpha:
        log.warning("lack of fit (p=%.3g); excluding smallest n=%g from the %s fit", p_val, ns[0], model)
        beta, bse, r2, ss_res, dof = _wls(x[1:], y[1:], w[1:], True)
        excluded = (int(ns[0]),)
        p_val = float(stats.chi2.sf(ss_res, dof)) if dof > 0 else float("nan")
    return ScalingFit(model, (float(beta[0]), float(beta[1])), (float(bse[0]), float(bse[1])), r2, excluded, p_val)
