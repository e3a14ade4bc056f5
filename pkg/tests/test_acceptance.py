"""Acceptance suite: one test per criterion, each printing a single pass/fail line.

Run alone with ``pytest tests/test_acceptance.py -v``; the summary section at
the end lists every criterion.
"""

import math

import numpy as np
import pytest

from fracpile.campaign import quick_campaign, run_campaign
from fracpile.fields import FieldSpec, gaussian_distance_table, psi_reference
from fracpile.kernel import apply_generator, build_kernel, cached_kernel
from fracpile.montecarlo import ExperimentPlan, fit_scaling, run_field_cov, run_odometer_mean
from fracpile.sandpile import init_deterministic, init_gaussian, stabilize
from fracpile.solver import spectral_odometer
from fracpile.spectrum import spectrum_for, verify_rate_lemmas
from fracpile.torus import LatticeSpec


def _flip(a):
    for ax in range(a.ndim):
        a = np.roll(np.flip(a, ax), 1, ax)
    return a


def test_c1_kernel_exactness(report):
    k = build_kernel(LatticeSpec(1, 2), 1.0)
    oracle_gap = float(np.max(np.abs(k.weights - [0.25, 0.75])))
    worst_sum, symmetric = 0.0, True
    for d, n in [(1, 2), (1, 7), (1, 16), (1, 64), (2, 4), (2, 9), (2, 16), (3, 6)]:
        for alpha in (0.25, 0.5, 1.0, 1.5, 2.0, 3.0):
            w = build_kernel(LatticeSpec(d, n), alpha).weights
            worst_sum = max(worst_sum, abs(math.fsum(w.ravel()) - 1))
            symmetric &= bool(np.array_equal(w, _flip(w)))
    ok = oracle_gap <= 1e-10 and worst_sum <= 1e-12 and symmetric
    report("C1 kernel exactness", ok, f"oracle gap {oracle_gap:.1e}, max |sum p - 1| {worst_sum:.1e}, symmetric {symmetric}")
    assert ok


def test_c2_operator_consistency(report, rng):
    worst_dense, worst_const, worst_mass = 0.0, 0.0, 0.0
    for d, n in [(1, 2), (1, 17), (1, 32), (2, 5), (2, 16), (2, 32)]:
        for alpha in (0.5, 1.0, 1.7, 2.0, 3.0):
            k = build_kernel(LatticeSpec(d, n), alpha)
            f = rng.standard_normal((n,) * d)
            fft = apply_generator(k, f)
            worst_dense = max(worst_dense, float(np.max(np.abs(fft - apply_generator(k, f, method="dense")))))
            worst_const = max(worst_const, float(np.max(np.abs(apply_generator(k, np.full((n,) * d, 2.5))))))
            worst_mass = max(worst_mass, abs(math.fsum(fft.ravel())))
    ok = max(worst_dense, worst_const, worst_mass) <= 1e-10
    report("C2 operator consistency", ok, f"dense vs fft {worst_dense:.1e}, constants {worst_const:.1e}, mass {worst_mass:.1e}")
    assert ok


def test_c3_dual_route_odometer(report):
    worst_gap, worst_dev, count = 0.0, 0.0, 0
    for d in (1, 2):
        for n in (8, 16):
            spec = LatticeSpec(d, n)
            for alpha in (0.5, 1.0, 1.5, 3.0):
                kernel = cached_kernel(spec, alpha)
                sp = spectrum_for(spec, alpha)
                for seed in range(20):
                    st = init_gaussian(spec, seed)
                    res = stabilize(st, kernel, eps=1e-12, log_every=0)
                    u = spectral_odometer(sp, st.s).u
                    worst_gap = max(worst_gap, float(np.max(np.abs(res.odometer_normalized - u))))
                    worst_dev = max(worst_dev, float(np.max(np.abs(res.state.s - 1))))
                    count += 1
    ok = worst_gap <= 1e-6 and worst_dev <= 1e-9
    report("C3 dual-route odometer", ok, f"{count} runs, max gap {worst_gap:.1e}, max |s - 1| {worst_dev:.1e}")
    assert ok


def test_c4_hand_solvable_instance(report):
    spec = LatticeSpec(1, 2)
    s = np.array([0.0, 2.0])
    spectral = spectral_odometer(spectrum_for(spec, 1.0), s).u
    topple = stabilize(init_deterministic(spec, s), build_kernel(spec, 1.0)).odometer_normalized
    expect = np.array([0.0, 4 / 3])
    gap = max(float(np.max(np.abs(spectral - expect))), float(np.max(np.abs(topple - expect))))
    ok = gap <= 1e-9
    report("C4 two-site instance", ok, f"spectral {spectral.tolist()}, toppling {topple.tolist()}, gap {gap:.1e}")
    assert ok


@pytest.mark.parametrize("alpha", [0.5, 1.0, 1.5])
def test_c5_eigenvalue_rates(report, alpha):
    rep = verify_rate_lemmas(1, [64, 128, 256, 512, 1024], alpha, max_w_norm=4)
    entries = rep.entry("residual_decay")
    ratios = [e["top_ratio"] for e in entries]
    exps = [e["exponent"] for e in entries]
    ok = len(entries) == 4 and all(0.8 <= r <= 1.25 for r in ratios)
    ok &= all(abs(x + (2 - alpha)) <= 0.3 for x in exps)
    report(
        f"C5 eigenvalue rates alpha={alpha}",
        ok,
        f"top ratios [{min(ratios):.4f}, {max(ratios):.4f}], exponents [{min(exps):.4f}, {max(exps):.4f}] vs {-(2 - alpha)}",
    )
    assert ok


def test_c6_alpha_two_and_three(report):
    rep2 = verify_rate_lemmas(1, [64, 128, 256, 512], 2.0, max_w_norm=2)
    # the last relative change is between n = 256 and n = 512
    log_changes = [e["relative_changes"][-1] for e in rep2.entry("log_correction")]
    rep3 = verify_rate_lemmas(1, [64, 128, 256, 512], 3.0, max_w_norm=1)
    mem = rep3.entry("membrane_limit")[0]
    ok = len(log_changes) == 2 and all(c < 0.10 for c in log_changes)
    ok &= all(c < 0.05 for c in mem["relative_changes"]) and min(mem["values"]) > 0
    report(
        "C6 alpha=2 log correction / alpha=3 limit",
        ok,
        f"alpha=2 changes {[round(c, 4) for c in log_changes]}, alpha=3 changes {[round(c, 4) for c in mem['relative_changes']]}",
    )
    assert ok


def test_c7_odometer_growth(report):
    plan2 = ExperimentPlan("odometer-mean", 2, 1.0, [16, 32, 64, 128], 200, 7)
    rows2 = run_odometer_mean(plan2, threads=4)
    fit2 = fit_scaling([r.n for r in rows2], [r.mean for r in rows2], [r.stderr for r in rows2], "linear-log")
    plan1 = ExperimentPlan("odometer-mean", 1, 1.5, [64, 128, 256, 512, 1024], 200, 7)
    rows1 = run_odometer_mean(plan1, threads=4)
    fit1 = fit_scaling([r.n for r in rows1], [r.mean for r in rows1], [r.stderr for r in rows1], "power")
    audits = [r.max_audit_discrepancy for r in rows1 + rows2 if r.audited]
    # gamma < d/2 (here d=2, alpha=0.5) is reported only: sqrt(log n) growth is too flat to resolve
    plan0 = ExperimentPlan("odometer-mean", 2, 0.5, [16, 32, 64, 128], 200, 7)
    rows0 = run_odometer_mean(plan0, threads=4, audit_every=0)
    flat = fit_scaling([r.n for r in rows0], [r.mean for r in rows0], [r.stderr for r in rows0], "sqrt-log")
    ok = fit2.r2 >= 0.95 and abs(fit1.slope - 1.0) <= 0.15 and max(audits) <= 1e-6
    report(
        "C7 odometer growth",
        ok,
        f"d=2 a=1 log fit R^2 {fit2.r2:.4f}; d=1 a=1.5 slope {fit1.slope:.3f} +- {fit1.stderr[1]:.3f}; "
        f"audits {len(audits)} max gap {max(audits):.1e}; d=2 a=0.5 sqrt-log R^2 {flat.r2:.3f} (not gated)",
    )
    assert ok


def test_c8_gaussian_distance_bounds(report):
    n = 128
    spec = LatticeSpec(2, n)
    r = np.sqrt(np.sum(spec.coords().astype(float) ** 2, axis=0))
    mask = (r >= 2) & (r <= n / 4)
    spreads = {}
    for alpha in (0.75, 1.0, 1.5):
        M = gaussian_distance_table(spectrum_for(spec, alpha))
        psi = np.array([psi_reference(2, alpha, n, x) for x in r[mask]])
        q = M[mask] / psi
        spreads[alpha] = float(q.max() / q.min())
    ok = all(v <= 5 for v in spreads.values())
    report("C8 Gaussian distance bounds", ok, "max/min " + ", ".join(f"a={a}: {v:.3f}" for a, v in spreads.items()))
    assert ok


def test_c9_limit_covariance_shape(report):
    plan = ExperimentPlan("field-cov", 2, 1.0, [64], 10_000, 7, modes=[[1, 0], [1, 1], [2, 0]])
    fs = FieldSpec.build(2, 1.0, method="extrapolation")
    rows = run_field_cov(plan, fs=fs, threads=4)
    ratios = [r.ratio for r in rows]
    spread = (max(ratios) - min(ratios)) / (sum(ratios) / len(ratios))
    ok = spread <= 0.10 and all(0.5 <= q <= 2.0 for q in ratios)
    report("C9 limit covariance shape", ok, f"ratios {[round(q, 4) for q in ratios]}, relative spread {spread:.4f}")
    assert ok


def test_c10_reproducibility(report, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    sa = run_campaign(quick_campaign(11), a)
    sb = run_campaign(quick_campaign(11), b)
    data = sorted(p.name for p in a.iterdir() if not p.name.endswith(".manifest.json"))
    identical = all((a / f).read_bytes() == (b / f).read_bytes() for f in data)
    ok = sa.ok and sb.ok and identical and len(data) >= 9
    report("C10 reproducibility", ok, f"{len(data)} data files byte-identical: {identical}; gates as expected: {sa.ok and sb.ok}")
    assert ok
