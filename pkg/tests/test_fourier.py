import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from rieszrect.fourier import (band_masks, eta_hat0, exact_band_product, f_delta, frequency_side, sphere_area,
                               spectral_profile, triple_integral)
from rieszrect.graphs import make_graph_function
from rieszrect.kernels import phi


def _phi_integral():
    return sum(quad(lambda r: float(phi(r)), a, b, epsabs=1e-15)[0]
               for a, b in ((1 / 16, 1 / 8), (1 / 8, 1 / 4)))


@pytest.mark.parametrize("n", [1, 2, 3])
def test_f_delta_small_frequency(n):
    # 1 - avg cos(u w1) ~ u^2 / (2n), so f_delta ~ delta |xi|^2 (2 pi^2 / n) |S^(n-1)| int phi
    delta, r = 0.5, 2e-3
    xi = np.zeros((1, n))
    xi[0, 0] = r
    approx = delta * r * r * 2 * math.pi ** 2 / n * sphere_area(n) * _phi_integral()
    assert f_delta(delta, xi)[0] == pytest.approx(approx, rel=1e-5)


@pytest.mark.parametrize("n", [1, 2])
def test_f_delta_high_frequency_limit(n):
    xi = np.zeros((1, n))
    xi[0, 0] = 300.0
    assert f_delta(1.0, xi)[0] == pytest.approx(eta_hat0(n), rel=1e-3)


@settings(max_examples=30, deadline=None)
@given(st.floats(1e-3, 1.0), st.floats(0.0, 200.0))
def test_f_delta_nonnegative(delta, r):
    assert f_delta(delta, r) >= 0


def test_f_delta_rotation_invariant():
    v = np.array([[3.0, 4.0], [5.0, 0.0], [0.0, -5.0]])
    vals = f_delta(0.1, v)
    np.testing.assert_allclose(vals, vals[0], rtol=1e-12)


def test_spectrum_of_single_mode():
    A = make_graph_function([{"freq": [3], "amp": [0.02]}], n=1, d=2, box=(0.0, 1.0), h=2 ** -8)
    spec = spectral_profile(A)
    top = np.argsort(spec.masses)[-2:]
    np.testing.assert_allclose(np.sort(np.abs(spec.freqs[top, 0])), [3, 3])
    # Parseval on the torus
    assert spec.l2_squared() == pytest.approx(np.sum(A.values ** 2) * A.h, rel=1e-12)
    assert spec.hermitian_defect() < 1e-15


def test_band_masks_tie_goes_low():
    low, mid, high = band_masks(np.array([1.0, 2.0, 4.0, 5.0]), 0.25, 1.0)
    assert low.tolist() == [True, False, False, False]
    assert mid.tolist() == [False, True, True, False]
    assert high.tolist() == [False, False, False, True]


def test_direct_and_spectral_routes_agree():
    A = make_graph_function([{"freq": [1], "amp": [0.01]}, {"freq": [3], "amp": [0.004], "phase": 0.7}],
                            n=1, d=2, box=(0.0, 1.0), h=2 ** -10)
    spec = spectral_profile(A)
    for j, k in ((4, 2), (5, 4), (5, 5)):
        lhs = exact_band_product(spec, 2.0 ** -j, 2.0 ** -k)
        est = triple_integral(A, j, k)
        assert lhs > 0
        assert est.value == pytest.approx(lhs, rel=1e-6)
        assert frequency_side(spec, 2.0 ** -j, 2.0 ** -k) > 0


def test_pair_validation():
    A = make_graph_function([{"freq": [1], "amp": [0.01]}], n=1, d=2, box=(0.0, 1.0), h=2 ** -6)
    spec = spectral_profile(A)
    with pytest.raises(ValueError):
        exact_band_product(spec, 0.5, 0.25)  # delta > eps
    with pytest.raises(ValueError):
        exact_band_product(spec, 2.0 ** -8, 0.25)  # beyond the grid's Nyquist frequency
    with pytest.raises(ValueError):
        f_delta(0.0, 1.0)
