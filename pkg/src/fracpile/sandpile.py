"""Divisible sandpile configurations and parallel toppling.

A site with mass above 1 keeps 1 and sends its excess through the jump
kernel (to every site, itself included). The odometer ``u`` accumulates the
emitted mass, and ``s_t = s_0 + L u_t`` with ``L f = (p * f) - f``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from fracpile.kernel import LongRangeKernel, apply_generator
from fracpile.torus import LatticeSpec, check_field

log = logging.getLogger(__name__)

MASS_RTOL = 1e-9


@dataclass(frozen=True, eq=False)
class SandpileState:
    spec: LatticeSpec
    s: np.ndarray = field(repr=False)
    u: np.ndarray = field(repr=False)
    t: int = 0

    @property
    def total_mass(self) -> float:
        return math.fsum(self.s.ravel())

    @property
    def max_excess(self) -> float:
        return float(np.max(self.s) - 1.0)

    def min_normalized_odometer(self) -> np.ndarray:
        return self.u - self.u.min()


@dataclass(frozen=True, eq=False)
class StabilizationResult:
    state: SandpileState
    iterations: int
    max_residual_excess: float
    converged: bool
    decay_ratio: float = float("nan")

    @property
    def odometer(self) -> np.ndarray:
        return self.state.u

    @property
    def odometer_normalized(self) -> np.ndarray:
        return self.state.min_normalized_odometer()


def _check_mass(s: np.ndarray, spec: LatticeSpec) -> None:
    total = math.fsum(s.ravel())
    if abs(total - spec.volume) > MASS_RTOL * spec.volume:
        raise ValueError(f"total mass {total!r} differs from n^d = {spec.volume}")


def gaussian_noise(spec: LatticeSpec, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal(spec.shape)


def centered_configuration(sigma: np.ndarray) -> np.ndarray:
    """``1 + sigma - mean(sigma)``."""
    return 1.0 + (sigma - math.fsum(sigma.ravel()) / sigma.size)


def init_gaussian(spec: LatticeSpec, seed) -> SandpileState:
    """Gaussian initial condition from a seed or a ``numpy`` Generator."""
    from fracpile.montecarlo import as_generator

    sigma = gaussian_noise(spec, as_generator(seed))
    s = centered_configuration(sigma)
    return SandpileState(spec, s, np.zeros(spec.shape), 0)


def init_deterministic(spec: LatticeSpec, s_values) -> SandpileState:
    s = check_field(s_values, spec).copy()
    _check_mass(s, spec)
    return SandpileState(spec, s, np.zeros(spec.shape), 0)


def topple_step(state: SandpileState, kernel: LongRangeKernel, fraction: float = 1.0) -> SandpileState:
    """One parallel toppling sweep.

    ``fraction < 1`` releases only part of each excess (a legal, slower
    schedule used to probe procedure independence).
    """
    if kernel.spec != state.spec:
        raise ValueError(f"kernel lattice {kernel.spec} does not match state lattice {state.spec}")
    e = np.maximum(state.s - 1.0, 0.0)
    if fraction != 1.0:
        e *= fraction
    if not e.any():
        return state
    s = state.s + apply_generator(kernel, e)
    return SandpileState(state.spec, s, state.u + e, state.t + 1)


def stabilize(
    state: SandpileState,
    kernel: LongRangeKernel,
    eps: float = 1e-12,
    max_steps: int = 1_000_000,
    fraction: float = 1.0,
    log_every: int = 1000,
) -> StabilizationResult:
    """Topple until ``max(s - 1) <= eps`` or the step budget runs out."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    history = []
    steps = 0
    while steps < max_steps:
        excess = state.max_excess
        if excess <= eps:
            break
        history.append(excess)
        state = topple_step(state, kernel, fraction)
        steps += 1
        if log_every and steps % log_every == 0:
            log.info("step %d: max excess %.3e", steps, excess)
    excess = state.max_excess
    converged = excess <= eps
    ratio = float("nan")
    if len(history) >= 20:
        tail = np.asarray(history[-20:])
        tail = tail[tail > 0]
        if tail.size >= 2:
            ratio = float((tail[-1] / tail[0]) ** (1.0 / (tail.size - 1)))
    if converged:
        dev = float(np.max(np.abs(state.s - 1.0)))
        # both tails: with sum s = n^d and s <= 1 + eps, the holes are filled too
        bound = eps * state.spec.volume + 1e-12 * state.spec.volume
        if dev > bound:
            raise ArithmeticError(f"stabilized but |s - 1|_inf = {dev:.3e} exceeds {bound:.3e}; mass not conserved?")
    else:
        log.warning(
            "no convergence in %d steps: max excess %.3e, decay ratio %.6f", steps, excess, ratio
        )
    return StabilizationResult(state, steps, excess, converged, ratio)
