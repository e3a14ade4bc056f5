import json
import math

import numpy as np
import pytest

from fracpile.fields import FieldSpec, finite_pairing_variance
from fracpile.spectrum import spectrum_for
from fracpile.montecarlo import (
    ExperimentPlan,
    as_generator,
    draw_noise,
    fit_scaling,
    run_field_cov,
    run_odometer_mean,
    seed_stream,
)
from fracpile.torus import LatticeSpec


def test_seed_stream_deterministic():
    a = seed_stream(42, 3).standard_normal(5)
    b = seed_stream(42, 3).standard_normal(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, seed_stream(42, 4).standard_normal(5))
    assert not np.array_equal(a, seed_stream(42, 3, stream=1).standard_normal(5))


def test_seed_streams_uncorrelated():
    N = 1_000_000
    x = seed_stream(9, 0).standard_normal(N)
    y = seed_stream(9, 1).standard_normal(N)
    assert abs(np.corrcoef(x, y)[0, 1]) < 3 / math.sqrt(N)


def test_seed_stream_rejects_negative():
    with pytest.raises(ValueError):
        seed_stream(-1, 0)


def test_as_generator():
    g = np.random.default_rng(1)
    assert as_generator(g) is g
    assert np.array_equal(as_generator(5).random(3), seed_stream(5, 0).random(3))
    with pytest.raises(TypeError):
        as_generator("7")


def test_uniform_noise_unit_variance():
    x = draw_noise(LatticeSpec(1, 200_000), seed_stream(0, 0), "uniform")
    assert x.var() == pytest.approx(1.0, abs=0.02)
    with pytest.raises(ValueError):
        draw_noise(LatticeSpec(1, 4), seed_stream(0, 0), "cauchy")


def test_plan_validation_lists_errors():
    plan = ExperimentPlan("odometer-mean", 0, -1.0, [8, 8], 0)
    errs = plan.errors()
    assert len(errs) >= 4
    with pytest.raises(ValueError):
        plan.validate()


def test_plan_json_roundtrip():
    plan = ExperimentPlan("field-cov", 2, 1.0, [16, 32], 40, 3, modes=[[1, 0]])
    assert ExperimentPlan.from_json(plan.to_json()) == plan
    raw = json.loads(plan.to_json())
    raw["replicate"] = 3
    with pytest.raises(ValueError):
        ExperimentPlan.from_json(json.dumps(raw))


def test_odometer_mean_threads_and_order_independent():
    plan = ExperimentPlan("odometer-mean", 1, 1.0, [16, 32], 40, 11)
    a = run_odometer_mean(plan, threads=1, chunk=7)
    b = run_odometer_mean(plan, threads=4, chunk=7)
    assert a == b
    assert a[0].audited == 1 and a[0].max_audit_discrepancy <= 1e-6


def test_odometer_mean_is_mean_of_replicates():
    from fracpile.sandpile import centered_configuration
    from fracpile.solver import spectral_odometer
    from fracpile.spectrum import spectrum_for

    plan = ExperimentPlan("odometer-mean", 1, 0.8, [8], 5, 2)
    row = run_odometer_mean(plan, audit_every=0)[0]
    sp = spectrum_for(LatticeSpec(1, 8), 0.8)
    means = [
        spectral_odometer(sp, centered_configuration(seed_stream(2, r, 8).standard_normal(8))).u.mean() for r in range(5)
    ]
    assert row.mean == pytest.approx(np.mean(means), rel=1e-12)
    assert row.stderr == pytest.approx(np.std(means, ddof=1) / math.sqrt(5), rel=1e-10)


def test_doubling_replicates_halves_variance_of_mean():
    small = run_odometer_mean(ExperimentPlan("odometer-mean", 1, 1.0, [32], 200, 1), audit_every=0)[0]
    large = run_odometer_mean(ExperimentPlan("odometer-mean", 1, 1.0, [32], 400, 1), audit_every=0)[0]
    ratio = (large.stderr / small.stderr) ** 2
    assert 0.35 <= ratio <= 0.65


def test_failure_names_the_replicate(monkeypatch):
    import fracpile.montecarlo as mc

    def boom(*a, **k):
        raise FloatingPointError("boom")

    monkeypatch.setattr(mc, "spectral_odometer", boom)
    with pytest.raises(RuntimeError, match="replicate 0 .*master_seed=4"):
        run_odometer_mean(ExperimentPlan("odometer-mean", 1, 1.0, [8], 3, 4))


def test_field_cov_pattern_and_determinism():
    plan = ExperimentPlan("field-cov", 1, 1.0, [32], 2000, 5, modes=[[1], [2], [3]])
    fs = FieldSpec.build(1, 1.0)
    rows = run_field_cov(plan, fs=fs, threads=2)
    again = run_field_cov(plan, fs=fs, threads=1)
    assert rows == again
    v = [r.empirical_var for r in rows]
    assert v[0] > v[1] > v[2]
    sp = spectrum_for(LatticeSpec(1, 32), 1.0)
    for r in rows:
        exact = finite_pairing_variance(sp, r.nu, fs)
        assert abs(r.empirical_var - exact) <= 3 * r.var_stderr


def test_min_shift_invariance():
    from fracpile.fields import TestFunction, pair_field
    from fracpile.solver import sample_eta
    from fracpile.spectrum import spectrum_for

    sp = spectrum_for(LatticeSpec(2, 16), 1.0)
    eta = sample_eta(sp, 8)
    fs = FieldSpec(2, 1.0, 4.37)
    for nu in [(1, 0), (1, 1), (2, 0)]:
        f = TestFunction.mode(nu)
        assert abs(pair_field(eta, f, fs) - pair_field(eta - eta.min(), f, fs)) <= 1e-12


def test_fit_power_exact():
    ns = [8, 16, 32, 64]
    fit = fit_scaling(ns, [2 * n**0.75 for n in ns], model="power")
    assert fit.slope == pytest.approx(0.75, abs=1e-12)
    assert fit.r2 == pytest.approx(1.0)


def test_fit_log_exact():
    ns = [8, 16, 32, 64]
    fit = fit_scaling(ns, [1 + 3 * math.log(n) for n in ns], model="linear-log")
    assert fit.params == pytest.approx((1.0, 3.0))


def test_mismatched_model_shows_poor_fit():
    ns = [2, 4, 8, 16, 32, 64, 128]
    vals = [math.log(n) for n in ns]
    good = fit_scaling(ns, vals, model="linear-log")
    bad = fit_scaling(ns, vals, model="power")
    assert bad.r2 < good.r2
    assert bad.r2 < 0.99


def test_fit_rejects_bad_input():
    with pytest.raises(ValueError):
        fit_scaling([8, 16], [1, 2])
    with pytest.raises(ValueError):
        fit_scaling([8, 8, 8], [1, 2, 3], model="linear-log")
    with pytest.raises(ValueError):
        fit_scaling([8, 16, 32], [1, 2, 3], model="cubic")


def test_fit_calibration_coverage():
    rng = np.random.default_rng(0)
    ns = np.array([16, 32, 64, 128, 256.0])
    truth = 0.5
    hits = 0
    trials = 2000
    for _ in range(trials):
        se = 0.05 * ns**truth
        vals = ns**truth + rng.standard_normal(ns.size) * se
        fit = fit_scaling(ns, vals, se, model="power")
        hits += abs(fit.slope - truth) <= 2 * fit.stderr[1]
    # nominal two-sigma coverage is 0.9545; allow three binomial standard deviations
    assert 0.94 <= hits / trials <= 0.97


def test_lack_of_fit_excludes_smallest(caplog):
    ns = [4, 8, 16, 32, 64]
    vals = [n**1.0 for n in ns]
    vals[0] *= 3
    fit = fit_scaling(ns, vals, [0.01 * v for v in vals], model="power", lack_of_fit_alpha=0.01)
    assert fit.excluded == (4,)
    assert fit.slope == pytest.approx(1.0, abs=1e-9)
    assert "excluding smallest" in caplog.text
