import math

import numpy as np
import pytest

from fracpile.fields import (
    FieldSpec,
    TestFunction,
    cube_factors,
    gaussian_distance_sq,
    gaussian_distance_table,
    limit_covariance,
    pair_field,
    phi_reference,
    psi_case,
    psi_reference,
)
from fracpile.solver import covariance_table
from fracpile.spectrum import spectrum_for
from fracpile.torus import LatticeSpec


def test_phi_cases():
    assert phi_reference(1, 1.5, 100) == pytest.approx(100.0)
    assert phi_reference(2, 1.0, 50) == pytest.approx(math.log(50))
    assert phi_reference(4, 1.5, 50) == pytest.approx(math.sqrt(math.log(50)))
    with pytest.raises(ValueError):
        phi_reference(1, 2.5, 10)


@pytest.mark.parametrize("d,gamma", [(1, 0.3), (1, 0.5), (2, 1.0), (3, 1.9), (4, 2.0)])
def test_phi_nondecreasing(d, gamma):
    vals = [phi_reference(d, gamma, n) for n in range(2, 200)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_psi_cases():
    assert psi_reference(2, 1.0, 64, 5) == pytest.approx(math.log(5))
    assert psi_reference(3, 1.0, 64, 5) == 1.0
    assert psi_reference(1, 1.0, 64, 5) == pytest.approx(5.0)
    assert psi_reference(1, 1.75, 64, 4) == pytest.approx(64**0.5 * 16)
    assert psi_reference(1, 1.5, 64, 4) == pytest.approx(math.log(16) * 16)
    assert psi_case(2, 0.75) == "constant"
    assert psi_case(2, 1.5) == "power"


def test_psi_log_case_degenerate_at_one(caplog):
    assert psi_reference(2, 1.0, 32, 1) == 0.0
    assert "degenerate" in caplog.text


def test_psi_domain():
    with pytest.raises(ValueError):
        psi_reference(2, 2.0, 32, 3)
    with pytest.raises(ValueError):
        psi_reference(2, 1.0, 32, 40)


def test_field_spec_normalization():
    assert FieldSpec(2, 1.0, 1.0).a_of_n(64) == 1.0
    assert FieldSpec(1, 1.5, 1.0).a_of_n(16) == pytest.approx(16**-1.0)
    assert FieldSpec(2, 2.0, 1.0).a_of_n(16) == pytest.approx(math.log(16) / 16)
    assert FieldSpec(2, 3.0, 1.0).a_of_n(16) == pytest.approx(1 / 16)
    assert FieldSpec(2, 3.0, 1.0).gamma == 2.0
    with pytest.raises(ValueError):
        FieldSpec(2, -1.0, 1.0)


def test_field_spec_build_regimes():
    assert FieldSpec.build(1, 1.0).c_tilde == pytest.approx(6.0, rel=1e-9)
    assert FieldSpec.build(1, 2.0).c_tilde > 0
    assert FieldSpec.build(1, 3.0).c_tilde == pytest.approx(30.0, rel=1e-10)


def test_test_function_validation():
    with pytest.raises(ValueError):
        TestFunction.mode((0, 0))
    with pytest.raises(ValueError):
        TestFunction(((1, 0), (1,)), (1, 1))
    assert TestFunction.cosine((1, 2)).is_real()
    assert not TestFunction.mode((1, 2)).is_real()


def test_test_function_evaluation():
    f = TestFunction.cosine((1, 0))
    assert f(np.array([[0.25, 0.3]]))[0] == pytest.approx(0.0, abs=1e-15)
    assert f(np.array([[0.5, 0.1]]))[0] == pytest.approx(-1.0)


def test_cube_factor_closed_form():
    # int over [-1/2n, 1/2n] of exp(2 pi i nu t) dt
    n, nu = 8, 3
    t = np.linspace(-1 / (2 * n), 1 / (2 * n), 20001)
    num = np.trapezoid(np.cos(2 * np.pi * nu * t), t)
    assert cube_factors((nu,), n) == pytest.approx(num, rel=1e-8)
    assert cube_factors((0, 2), n) == pytest.approx(cube_factors((2,), n) / n)


def test_pairing_constant_is_zero_and_linear(rng):
    fs = FieldSpec(2, 1.0, 1.0)
    f = TestFunction.cosine((1, 1))
    g = TestFunction.mode((2, 0))
    assert abs(pair_field(np.full((8, 8), 3.0), f, fs)) <= 1e-12
    u, v = rng.standard_normal((2, 8, 8))
    assert pair_field(2 * u + v, f, fs) == pytest.approx(2 * pair_field(u, f, fs) + pair_field(v, f, fs))
    both = TestFunction(((1, 1), (-1, -1), (2, 0)), (0.5, 0.5, 1.0))
    assert pair_field(u, both, fs) == pytest.approx(pair_field(u, f, fs) + pair_field(u, g, fs))


def test_pairing_riemann_sum_rate():
    # u(x) = cos(2 pi x/n) sampled; pairing with cos(2 pi x) tends to 1/2 at rate 1/n or better
    fs = FieldSpec(1, 1.0, 1.0)
    errs = []
    for n in (16, 32, 64):
        x = np.arange(n)
        u = np.cos(2 * np.pi * x / n)
        errs.append(abs(pair_field(u, TestFunction.cosine((1,)), FieldSpec(1, 0.5, 1.0)) - 0.5))
    assert errs[-1] < errs[0] and errs[-1] <= 1 / 64
    assert fs.gamma == 1.0


def test_pairing_batch_shape(rng):
    fs = FieldSpec(1, 1.0, 1.0)
    u = rng.standard_normal((5, 16))
    batch = pair_field(u, TestFunction.mode((1,)), fs)
    assert batch.shape == (5,)
    assert batch[3] == pytest.approx(pair_field(u[3], TestFunction.mode((1,)), fs))


def test_limit_covariance_examples():
    assert limit_covariance(TestFunction.mode((1, 1)), TestFunction.mode((1, 1)), 1.0) == pytest.approx(0.5)
    assert limit_covariance(TestFunction.mode((1, 0)), TestFunction.mode((0, 1)), 1.0) == 0
    assert limit_covariance(TestFunction.mode((3,)), TestFunction.mode((3,)), 0.5) == pytest.approx(1 / 3)


def test_gaussian_distance_zero_and_polarization():
    for d, n in [(1, 8), (2, 6)]:
        spec = LatticeSpec(d, n)
        sp = spectrum_for(spec, 1.3)
        M = gaussian_distance_table(sp)
        C = covariance_table(sp)
        assert M.flat[0] == 0
        # E[(eta_0 - eta_x)^2] = 2 C(0) - 2 C(x) = 4 M(x)
        assert np.max(np.abs(4 * M - (2 * C.flat[0] - 2 * C))) <= 1e-10
        for i in range(spec.volume):
            x = spec.point(i)
            assert gaussian_distance_sq(sp, x) == pytest.approx(M.flat[i], abs=1e-10)
