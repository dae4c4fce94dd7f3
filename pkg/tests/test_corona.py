import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad
from scipy.spatial import ConvexHull

from rieszrect.corona import (LABELS, DensityError, StoppingParams, construct_graph, d_function, D_function,
                              flatness_certificate, mollified_density, mollifier, partition, select_simplex_balls,
                              simplex_volume, stopping_height, stopping_region, taylor_remainders, taylor_term,
                              truncated_operator_norm)
from rieszrect.experiments import noisy_line
from rieszrect.generators import gen_cantor_four_corner
from rieszrect.geometry import AffinePlane
from rieszrect.kernels import direct_sum
from rieszrect.measure import Ball, build_measure, density

PARAMS = dict(delta0=0.9, alpha=0.3, eps=0.025)


def _setup(mu, t_min):
    x0 = mu.points[np.argmin(np.linalg.norm(mu.points, axis=1))]
    B0 = Ball(x0, 1.0)
    F = mu.ball_indices(x0, 10.0)
    params = StoppingParams(B0=B0, F=F, t_min=t_min, D0=AffinePlane.coordinate(1, 2), **PARAMS)
    return F, params, stopping_region(mu, F, params)


@pytest.fixture(scope="module")
def line_case():
    mu = noisy_line(count=4000)
    return (mu,) + _setup(mu, 0.125)


@pytest.fixture(scope="module")
def pocket_case():
    # a light pocket around the origin forces low-density stops
    mu = noisy_line(count=4000)
    w = np.array(mu.weights)
    w[np.linalg.norm(mu.points, axis=1) < 0.3] *= 0.1
    mu = mu.with_weights(w)
    return (mu,) + _setup(mu, 1 / 16)


def _direct_heights(region):
    X = region.points
    bad = ~region.total
    h = np.zeros(X.shape[0])
    for i in range(X.shape[0]):
        for j in range(X.shape[0]):
            dist = np.linalg.norm(X[i] - X[j])
            for k, tau in enumerate(region.scales):
                if bad[j, k] and dist <= tau / 3 * (1 + 1e-12):
                    h[i] = max(h[i], 4 * tau)
    return h


def test_heights_match_direct_witness_search(pocket_case):
    mu, F, params, region = pocket_case
    h = _direct_heights(region)
    np.testing.assert_array_equal(region.h, h)
    assert np.any(h > 0)
    i = int(np.argmax(h))
    assert stopping_height(region, mu, region.atoms[i]) == h[i]
    assert stopping_height(region, mu, region.points[i]) == h[i]


def test_partition_matches_direct_search(pocket_case):
    mu, F, params, region = pocket_case
    part = partition(mu, F, region)
    X = region.points
    tests = {1: region.dens_mu <= params.delta0, 2: region.beta1 >= params.eps,
             3: region.angle >= 0.75 * params.alpha}
    for i in range(X.shape[0]):
        if region.h[i] == 0:
            assert part.labels[i] == LABELS["Z"]
            continue
        want = LABELS["none"]
        for lab in (1, 2, 3):
            for k, tau in enumerate(region.scales):
                if not region.h[i] / 5 * (1 - 1e-12) <= tau <= region.h[i] / 2 * (1 + 1e-12):
                    continue
                near = np.linalg.norm(X - X[i], axis=1) <= tau / 2 * (1 + 1e-12)
                if np.any(tests[lab][near, k]):
                    want = lab
                    break
            if want != LABELS["none"]:
                break
        assert part.labels[i] == want
    counts = part.counts()
    assert sum(counts.values()) == X.shape[0]
    assert counts["F1"] > 0
    masses = part.masses(mu)
    assert sum(masses.values()) == pytest.approx(mu.weights[region.atoms].sum())


def test_clean_line_is_all_good(line_case):
    mu, F, params, region = line_case
    part = partition(mu, F, region)
    assert part.counts()["Z"] == region.atoms.size
    assert region.total.all()


def test_stopping_set_is_upward_closed(pocket_case):
    mu, F, params, region = pocket_case
    assert np.all(np.diff(region.scales) > 0)
    inS = region.in_S
    expect = region.scales[None, :] >= region.h[:, None] * (1 - 1e-12)
    np.testing.assert_array_equal(inS, expect)
    # every (x, t) with t >= h(x) is a good pair
    assert np.all(region.total[inS])


def test_gauges_are_exact_and_lipschitz(pocket_case):
    mu, F, params, region = pocket_case
    inS = region.in_S
    rows, ks = np.nonzero(inS)
    rng = np.random.default_rng(0)
    x = region.points[0] + rng.uniform(-2, 2, (40, 2))
    direct = np.array([np.min(np.linalg.norm(region.points[rows] - p, axis=1) + region.scales[ks]) for p in x])
    np.testing.assert_allclose(d_function(region, x), direct, rtol=1e-12)
    d = d_function(region, x)
    gap = np.abs(d[:, None] - d[None, :])
    assert np.all(gap <= np.linalg.norm(x[:, None] - x[None], axis=2) * (1 + 1e-12) + 1e-12)
    p = np.sort(rng.uniform(-3, 3, 60))
    D = D_function(region, p[:, None])
    assert np.all(np.abs(np.diff(D)) <= np.diff(p) * (1 + 1e-12) + 1e-12)
    assert np.all(D <= d_function(region, np.c_[p, 0.05 * p]) + 1e-12 + 0.05 * np.abs(p))


@settings(max_examples=20, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-1, 1), st.floats(-1, 1))
def test_d_lipschitz_property(a, b, c, e):
    mu = noisy_line(count=400)
    region = _setup(mu, 0.25)[2]
    x, y = np.array([a, c]), np.array([b, e])
    assert abs(d_function(region, x) - d_function(region, y)) <= np.linalg.norm(x - y) * (1 + 1e-12) + 1e-12


def test_graph_follows_line(line_case):
    mu, F, params, region = line_case
    g = construct_graph(region, params)
    p = np.linspace(-1.8, 1.8, 50)[:, None]
    np.testing.assert_allclose(g.A(p)[:, 0], 0.05 * p[:, 0], atol=5e-3)
    assert np.all(g.A(np.array([[3.5], [-3.5]])) == 0)
    assert g.lip <= 5 * params.alpha
    lifted = g.lift(p)
    np.testing.assert_allclose(lifted[:, 0], p[:, 0])


def test_stopping_params_validation():
    B0 = Ball(np.zeros(2), 1.0)
    with pytest.raises(ValueError):
        StoppingParams(delta0=0.5, alpha=0.3, eps=1e-3, B0=B0)
    with pytest.raises(ValueError):
        StoppingParams(delta0=0.9, alpha=0.3, eps=0.1, B0=B0)
    with pytest.raises(ValueError):
        StoppingParams(delta0=0.9, alpha=0.3, eps=0.01)
    s = StoppingParams(B0=B0, t_min=0.125, **PARAMS).scales(noisy_line(count=100))
    assert s[0] == pytest.approx(0.125) and s[-1] == pytest.approx(8.0) and s.size == 25


def test_region_rejects_far_atoms():
    mu = noisy_line(count=400)
    B0 = Ball(np.zeros(2), 1.0)
    params = StoppingParams(B0=B0, t_min=0.5, **PARAMS)
    with pytest.raises(ValueError):
        stopping_region(mu, np.arange(mu.size), params)


@pytest.mark.parametrize("n", [1, 2])
def test_mollifier_unit_mass(n):
    area = 2 * math.pi ** (n / 2) / math.gamma(n / 2)
    tot = quad(lambda r: float(mollifier(r, n)) * r ** (n - 1), 0, 1, epsabs=1e-13)[0] * area
    assert tot == pytest.approx(1.0, abs=1e-9)
    assert float(mollifier(0.2, n)) == float(mollifier(0.4, n))
    assert float(mollifier(1.0, n)) == 0


def test_mollified_density_of_uniform_line():
    h = 1e-3
    x = np.arange(-5, 5, h) + h / 2
    mu = build_measure(np.c_[x, 0 * x], np.full(x.size, h), 1, floor=2 * h)
    g = mollified_density(mu, np.arange(mu.size), lambda p: np.full(p.shape[0], 0.5),
                          np.linspace(-1, 1, 9)[:, None], 0.01)
    np.testing.assert_allclose(g, 1.0, atol=1e-3)


def test_operator_norm_matches_dense_svd():
    rng = np.random.default_rng(3)
    pts = np.c_[rng.random(60), 0.1 * rng.random(60)]
    w = rng.random(60) / 60
    mu = build_measure(pts, w, 1)
    eps = 0.05
    diff = pts[:, None, :] - pts[None, :, :]
    r2 = np.sum(diff ** 2, axis=2)
    K = np.where(r2[..., None] > eps * eps, diff / np.where(r2 > 0, r2, 1)[..., None], 0.0)
    sw = np.sqrt(w)
    M = (sw[:, None, None] * K * sw[None, :, None]).transpose(0, 2, 1).reshape(-1, 60)
    dense = np.linalg.svd(M, compute_uv=False)[0]
    assert truncated_operator_norm(mu, eps, iters=300) == pytest.approx(dense, rel=1e-6)


def _candidates(mu, B, C12=8.0, C13=10.0):
    inside = mu.ball_indices(B.center, B.radius)
    rho = B.radius / C12
    pts = mu.points[inside]
    keep = np.array([density(mu, p, rho) >= 1 / C13 for p in pts])
    return pts[keep]


def test_simplex_segment_uses_extreme_pair():
    x = np.linspace(-1, 1, 401)
    mu = build_measure(np.c_[x, 0 * x], np.full(401, 2 / 401), 1)
    B = Ball(np.zeros(2), 1.0)
    fam = select_simplex_balls(mu, B)
    cand = _candidates(mu, B)
    best = max(np.linalg.norm(a - b) for a, b in itertools.combinations(cand[::5], 2))
    chosen = np.linalg.norm(fam.balls[0].center - fam.balls[1].center)
    assert chosen == pytest.approx(best, abs=2 * (cand[1, 0] - cand[0, 0]) * 5)
    assert fam.constant <= 32


def test_simplex_square_near_best_triangle():
    ax = np.linspace(-0.7, 0.7, 29)
    X, Y = np.meshgrid(ax, ax)
    pts = np.c_[X.ravel(), Y.ravel(), 0 * X.ravel()]
    mu = build_measure(pts, np.full(pts.shape[0], 0.05 ** 2), 2)
    B = Ball(np.zeros(3), 1.0)
    fam = select_simplex_balls(mu, B)
    cand = _candidates(mu, B)
    # a largest triangle has its vertices on the convex hull
    hull = cand[ConvexHull(cand[:, :2]).vertices]
    best = max(simplex_volume(t) for t in itertools.combinations(hull, 3))
    got = simplex_volume([b.center for b in fam.balls])
    assert 0.5 * best <= got <= best * (1 + 1e-12)
    assert fam.min_volume >= 1 / 32


def test_simplex_rejects_point_mass():
    mu = build_measure(np.zeros((1, 2)), [5.0], 1)
    with pytest.raises(DensityError):
        select_simplex_balls(mu, Ball(np.zeros(2), 1.0))


def test_taylor_term_is_the_derivative():
    rng = np.random.default_rng(0)
    mu = build_measure(rng.standard_normal((300, 2)), np.full(300, 1 / 300), 1)
    x0, eps, step = np.zeros(2), 0.3, 1e-5
    for u in np.eye(2):
        fd = (direct_sum(mu, [x0 + step * u], eps, "smooth") - direct_sum(mu, [x0 - step * u], eps, "smooth")) / (2 * step)
        np.testing.assert_allclose(taylor_term(mu, x0, x0 + u, eps)[0], fd[0], rtol=1e-6, atol=1e-9)


def test_taylor_remainder_quadratic():
    rng = np.random.default_rng(1)
    mu = build_measure(rng.standard_normal((300, 2)), np.full(300, 1 / 300), 1)
    eps = 0.2
    u = np.array([0.6, 0.8])
    r1 = taylor_remainders(mu, np.zeros(2), [eps / 8 * u], eps)[0]
    r2 = taylor_remainders(mu, np.zeros(2), [eps / 16 * u], eps)[0]
    # remainder / |x|^2 settles as |x| -> 0
    assert r2 == pytest.approx(r1, rel=0.1)
    with pytest.raises(ValueError):
        taylor_remainders(mu, np.zeros(2), [np.zeros(2)], eps)


def test_flatness_certificate_flat_and_cantor():
    x = np.linspace(-4, 4, 1601)
    mu = build_measure(np.c_[x, 0 * x], np.full(x.size, 8 / 1601), 1)
    B = Ball(np.zeros(2), 0.5)
    cert = flatness_certificate(mu, np.arange(mu.size), B, 0.25)
    assert cert.value < 1e-12
    assert cert.ell >= B.radius
    c = gen_cantor_four_corner(6)
    Bc = Ball(np.array([0.5, 0.5]), 0.7)
    cc = flatness_certificate(c, np.arange(c.size), Bc, 0.25)
    assert cc.value > 0.2
