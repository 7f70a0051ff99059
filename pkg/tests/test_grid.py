import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fplab.grid import (
    PeriodicGrid,
    ScalarField,
    VectorField,
    apply_gamma,
    check_functional_inequalities,
    divergence,
    gradient,
    laplacian,
    lp_norm,
    mass,
    neg_sobolev_norm,
)

seeds = st.integers(0, 2**32 - 1)


def test_grid_validation():
    for bad in [dict(dimension=3, half_width=1, n=16), dict(dimension=1, half_width=0, n=16),
                dict(dimension=1, half_width=1, n=24), dict(dimension=1, half_width=1, n=8)]:
        with pytest.raises(ValueError):
            PeriodicGrid(**bad)


def test_geometry():
    g = PeriodicGrid(2, 5.0, 32)
    assert g.shape == (32, 32)
    assert g.spacing == pytest.approx(10 / 32)
    assert g.points.shape == (2, 32, 32)
    assert g.axis[0] == -5.0 and g.axis[-1] < 5.0
    assert g.volume == pytest.approx(100.0)


def test_scalar_field_rejects_nonfinite():
    g = PeriodicGrid(1, 1.0, 16)
    v = np.zeros(16)
    v[3] = np.nan
    with pytest.raises(ValueError):
        ScalarField(g, v)
    with pytest.raises(ValueError):
        ScalarField(g, np.zeros(8))


def test_derivatives_of_fourier_mode():
    g = PeriodicGrid(1, math.pi, 64)
    x = g.axis
    f = ScalarField(g, np.sin(3 * x))
    assert np.allclose(gradient(f).components[0], 3 * np.cos(3 * x), atol=1e-12)
    assert np.allclose(laplacian(f).values, -9 * np.sin(3 * x), atol=1e-11)


def test_gamma_on_mode():
    g = PeriodicGrid(1, math.pi, 64)
    f = ScalarField(g, np.cos(2 * g.axis))
    assert np.allclose(apply_gamma(f, 1).values, f.values / 5, atol=1e-14)
    assert neg_sobolev_norm(f, 1) == pytest.approx(math.sqrt(math.pi / 5))
    assert neg_sobolev_norm(f, 2) == pytest.approx(math.sqrt(math.pi) / 5)


def test_norms_and_mass():
    g = PeriodicGrid(1, math.pi, 128)
    f = ScalarField(g, np.cos(g.axis) + 1)
    assert mass(f) == pytest.approx(2 * math.pi)
    assert lp_norm(f, 2) == pytest.approx(math.sqrt(3 * math.pi))
    assert lp_norm(f, np.inf) == pytest.approx(2.0)
    assert neg_sobolev_norm(f, 0) == pytest.approx(lp_norm(f, 2))


@settings(max_examples=30, deadline=None)
@given(seed=seeds, d=st.sampled_from([1, 2]))
def test_div_grad_is_laplacian(seed, d):
    g = PeriodicGrid(d, 4.0, 16 if d == 2 else 64)
    f = ScalarField(g, np.random.default_rng(seed).standard_normal(g.shape))
    assert np.allclose(divergence(gradient(f)).values, laplacian(f).values, atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(seed=seeds)
def test_laplacian_self_adjoint_and_nonpositive(seed):
    g = PeriodicGrid(1, 3.0, 64)
    rng = np.random.default_rng(seed)
    f, h = rng.standard_normal(64), rng.standard_normal(64)
    assert g.inner(g.laplacian(f), h) == pytest.approx(g.inner(f, g.laplacian(h)), rel=1e-9, abs=1e-9)
    assert g.inner(g.laplacian(f), f) <= 1e-10


@settings(max_examples=30, deadline=None)
@given(seed=seeds)
def test_gamma_inverts_helmholtz(seed):
    g = PeriodicGrid(1, 3.0, 64)
    f = np.random.default_rng(seed).standard_normal(64)
    u = g.gamma(f)
    assert np.allclose(u - g.laplacian(u), f, atol=1e-11)


@settings(max_examples=50, deadline=None)
@given(seed=seeds, n=st.sampled_from([16, 64, 256]), d=st.sampled_from([1, 2]))
def test_functional_inequalities_property(seed, n, d):
    if d == 2:
        n = min(n, 64)
    g = PeriodicGrid(d, 5.0, n)
    rng = np.random.default_rng(seed)
    f = ScalarField(g, rng.standard_normal(g.shape) * rng.uniform(0.01, 100))
    F = VectorField(g, rng.standard_normal((d,) + g.shape))
    assert check_functional_inequalities(f, F).passed


def test_negative_norms_ordered():
    g = PeriodicGrid(1, 5.0, 64)
    f = np.random.default_rng(0).standard_normal(64)
    assert g.sobolev_norm(f, 2) <= g.sobolev_norm(f, 1) <= g.sobolev_norm(f, 0)


def test_refine_spectral_interpolation_exact_for_band_limited():
    coarse, fine = PeriodicGrid(1, math.pi, 32), PeriodicGrid(1, math.pi, 128)
    f = np.sin(3 * coarse.axis) + 0.2 * np.cos(7 * coarse.axis)
    up = coarse.refine(f, fine)
    assert np.allclose(up, np.sin(3 * fine.axis) + 0.2 * np.cos(7 * fine.axis), atol=1e-13)
    assert np.allclose(fine.refine(up, coarse), f, atol=1e-13)


def test_refine_2d_preserves_mass():
    coarse, fine = PeriodicGrid(2, 4.0, 16), PeriodicGrid(2, 4.0, 64)
    f = np.random.default_rng(3).standard_normal(coarse.shape)
    assert fine.integrate(coarse.refine(f, fine)) == pytest.approx(coarse.integrate(f), abs=1e-12)


def test_smooth_is_gaussian_multiplier():
    g = PeriodicGrid(1, math.pi, 64)
    f = np.cos(4 * g.axis)
    assert np.allclose(g.smooth(f, 0.1), math.exp(-0.5 * 0.01 * 16) * f, atol=1e-14)


def test_field_arithmetic_requires_same_grid():
    a = ScalarField(PeriodicGrid(1, 1.0, 16), np.ones(16))
    b = ScalarField(PeriodicGrid(1, 2.0, 16), np.ones(16))
    assert np.all((a + a).values == 2)
    with pytest.raises(ValueError):
        a - b
