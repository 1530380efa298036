import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from marangoni.errors import NonConvergence, PreconditionError
from marangoni.heatprofile import (PhysicalConfig, assemble_profile, corrector_poly, mollifier,
                                   transform_closed, transform_from_coeffs, tune_d, upper_moment)
from marangoni.spectral import characteristic_residual

d_entry = st.floats(-0.45, 0.45)


def test_mollifier_unit_mass():
    val, _ = integrate.quad(lambda y: mollifier(y, 0.05), -0.05, 0.05, epsabs=1e-13, epsrel=1e-13)
    assert abs(val - 1.0) < 1e-10


def test_mollifier_outside_support():
    assert mollifier(0.2, 0.05) == 0.0


def test_mollifier_scaling():
    assert mollifier(0.0, 0.05) / mollifier(0.0, 0.1) == pytest.approx(2.0, rel=1e-12)


def test_mollifier_rejects_nonpositive_eps():
    with pytest.raises(PreconditionError):
        mollifier(0.0, 0.0)


def test_corrector_n1_closed_form():
    # int y W e^{-py} = p^-2 (1/p - 1/2), matched term by term against m!/p^(m+1)
    np.testing.assert_allclose(corrector_poly([0.0]), [-0.5, 0.5], atol=1e-15)


@given(st.lists(d_entry, min_size=1, max_size=4))
def test_closed_form_vanishes_at_tuned_points(d):
    for j, dj in enumerate(d, start=1):
        assert abs(transform_closed(2 * j + dj, d)) < 1e-14


@given(st.lists(d_entry, min_size=1, max_size=4), st.floats(0.3, 6.0), st.floats(-3.0, 3.0))
def test_coefficients_reproduce_closed_form(d, re, im):
    p = complex(re, im)
    a = transform_from_coeffs(p, corrector_poly(d))
    b = transform_closed(p, d)
    assert abs(a - b) <= 1e-10 * max(1.0, abs(b))


@pytest.mark.parametrize("p", [2.0, 4.0])
def test_transform_zeros_by_quadrature(p):
    b = corrector_poly([0.0, 0.0])
    W = lambda y: sum(c * y ** j for j, c in enumerate(b))
    val, _ = integrate.quad(lambda y: y * W(y) * math.exp(-p * y), 0, 40, epsabs=1e-13, limit=200)
    assert abs(val) < 1e-8


@pytest.mark.parametrize("n", [0, 1, 3])
def test_upper_moment(n):
    z0, p = 0.3, 1.7
    val, _ = integrate.quad(lambda y: y ** n * math.exp(-p * y), z0, np.inf, epsabs=1e-14)
    assert complex(upper_moment(n, p, z0)).real == pytest.approx(val, rel=1e-12)


def test_config_defaults():
    c = PhysicalConfig()
    assert c.mu == pytest.approx(c.kappa ** (2 / 3))
    assert c.z0 == pytest.approx(5 * c.kappa)
    assert c.h == pytest.approx(10 * math.log(c.nu))


@pytest.mark.parametrize("bad", [dict(kappa=-1.0), dict(gamma=1.5), dict(kappa=0.1, z0=0.05),
                                 dict(h_rule="huge")])
def test_config_validation(bad):
    with pytest.raises(PreconditionError):
        PhysicalConfig(**bad)


def test_config_roundtrip():
    c = PhysicalConfig.preset(2, h_rule="log")
    assert PhysicalConfig.from_dict(c.to_dict()) == c


def test_profile_vanishes_below_delta1(prof2):
    y = np.linspace(0.0, prof2.delta1 * 0.999, 50)
    assert np.all(prof2.base_U(y) == 0.0)
    assert np.all(prof2.base_Uy(y) == 0.0)
    assert prof2.delta1 == pytest.approx(prof2.config.z0 - prof2.config.kappa)


def test_tune_n1_bisection_oracle():
    cfg = PhysicalConfig.preset(1)
    prof = tune_d(cfg, "limit")
    assert abs(prof.d[0]) < 0.5
    assert abs(characteristic_residual(1, 0.0, prof, "limit")) < 1e-10
    # independent scalar root of the same equation, on a doubled quadrature grid
    fine = prof.grid.refined(2)
    g = lambda d1: characteristic_residual(1, 0.0, assemble_profile(cfg, [d1], fine), "limit").real
    from scipy.optimize import brentq
    d1 = brentq(g, -0.49, 0.49, xtol=1e-14)
    assert prof.d[0] == pytest.approx(d1, abs=1e-9)


def test_tune_n0_returns_untuned_profile():
    prof = tune_d(PhysicalConfig(N=0), "limit")
    assert tuple(prof.d) == ()


def test_finite_and_limit_tunings_are_close(prof2, prof2_limit):
    gap = np.max(np.abs(np.subtract(prof2.d, prof2_limit.d)))
    assert gap < prof2.config.nu ** -0.5


def test_tuned_residuals(prof2, prof2_limit):
    for k in (1, 2):
        assert abs(characteristic_residual(k, 0.0, prof2_limit, "limit")) < 1e-10
        assert abs(characteristic_residual(k, 0.0, prof2, "finite")) < 1e-8


@pytest.mark.parametrize("N", [1, 2])
def test_default_mu_kappa_002_is_not_tunable(N):
    # mu = kappa^(2/3) cannot reach the tuned zeros at kappa = 0.02 within |d_j| < 1/2
    with pytest.raises(NonConvergence):
        tune_d(PhysicalConfig(N=N, kappa=0.02), "limit")


def test_default_mu_n1_residual_has_no_sign_change():
    cfg = PhysicalConfig(N=1, kappa=0.02)
    r = [characteristic_residual(1, 0.0, assemble_profile(cfg, [d]), "limit").real
         for d in np.linspace(-0.49, 0.49, 9)]
    assert max(r) < -0.3


def test_profile_serialization(prof2):
    from marangoni.heatprofile import HeatProfile
    again = HeatProfile.from_dict(prof2.to_dict())
    y = np.linspace(0, prof2.config.h, 33)
    np.testing.assert_allclose(again.base_Uy(y), prof2.base_Uy(y), rtol=1e-14, atol=1e-14)
