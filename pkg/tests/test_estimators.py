"""Estimator contracts: oracle agreement, exact symmetries, determinism."""

import numpy as np
import pytest

from hkmc.errors import ConfigError, StatisticsError, UnsupportedManifoldError
from hkmc.estimators import (
    auto_domain_index,
    estimate_gradient,
    estimate_hessian,
    estimate_log_gradient,
    estimate_log_hessian,
    girsanov_mean,
)
from hkmc.geometry import (
    ConformalPlaneChart,
    EuclideanChart,
    HyperbolicChart,
    SphereChart,
    default_frame,
)
from hkmc.oracles import EuclideanKernel

EU = EuclideanChart(2)


def f_linear(z):
    return np.asarray(z) @ np.array([0.7, -0.4])


def f_const(z):
    return np.ones(np.shape(z)[:-1])


def test_gradient_linear_observable():
    est = estimate_gradient(EU, [0.2, -0.1], [1.0, 0.0], f_linear, 0.5, 30_000,
                            64, seed=5)
    assert abs(est.value - 0.7) <= 3 * est.stderr


def test_gradient_constant_observable_zero():
    est = estimate_gradient(EU, [0.0, 0.0], [1.0, 0.0], f_const, 0.5, 30_000,
                            64, seed=6)
    assert abs(est.value) <= 3 * est.stderr


def test_hessian_linear_observable_zero():
    est = estimate_hessian(EU, [0.0, 0.0], [1.0, 0.0], f_linear, 0.5, 30_000,
                           64, seed=7)
    assert abs(est.value) <= 3 * est.stderr


def test_linearity_in_v_exact():
    """Doubling v doubles the estimate exactly (same seed, same paths)."""
    f = lambda z: np.sin(z[..., 0])
    kw = dict(t=0.5, n_paths=2000, steps=64, seed=8)
    e1 = estimate_gradient(EU, [0.1, 0.2], [0.3, -0.5], f, **kw)
    e2 = estimate_gradient(EU, [0.1, 0.2], [0.6, -1.0], f, **kw)
    assert e2.value == 2.0 * e1.value


def test_seed_determinism_and_chunk_invariance():
    f = lambda z: z[..., 0] ** 2
    kw = dict(t=0.5, n_paths=6000, steps=64, seed=9)
    a = estimate_hessian(EU, [0.0, 0.0], [1.0, 0.0], f, **kw, chunk_size=1500)
    b = estimate_hessian(EU, [0.0, 0.0], [1.0, 0.0], f, **kw, chunk_size=6000)
    assert a.value == b.value and a.stderr == b.stderr
    c = estimate_hessian(EU, [0.0, 0.0], [1.0, 0.0], f, **kw, chunk_size=1500)
    assert a.value == c.value


def test_frame_independence():
    """A rotated initial frame leaves the estimator distribution unchanged."""
    sph = SphereChart()
    x = np.array([0.2, 0.1])
    u0 = default_frame(sph, x)
    theta = 0.7
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    v = u0[:, 0]

    def f(z):
        s = np.einsum("...i,...i->...", z, z)
        return (1.0 - s) / (1.0 + s)

    kw = dict(t=0.5, n_paths=40_000, steps=64)
    a = estimate_gradient(sph, x, v, f, seed=11, **kw)
    b = estimate_gradient(sph, x, v, f, seed=12, frame=u0 @ rot, **kw)
    assert abs(a.value - b.value) <= 3 * np.hypot(a.stderr, b.stderr)


def test_log_gradient_euclidean():
    x = np.array([0.0, 0.0])
    y = np.array([1.0, 0.0])
    est = estimate_log_gradient(EU, x, y, [1.0, 0.0], 0.5, 40_000, 64, seed=13)
    # t grad log p = -(x - y): component along v is +1.
    assert abs(est.value - 1.0) <= 3 * est.stderr
    # E[ratio] = 1 by Chapman-Kolmogorov.
    assert abs(est.extras["mean_ratio"] - 1.0) < 0.05


def test_log_gradient_x_equals_y():
    est = estimate_log_gradient(EU, [0.3, 0.1], [0.3, 0.1], [1.0, 0.0], 0.4,
                                40_000, 64, seed=14)
    assert abs(est.value) <= 3 * est.stderr


def test_log_hessian_euclidean():
    est = estimate_log_hessian(EU, [0.0, 0.0], [1.0, 0.0], [1.0, 0.0], 0.5,
                               60_000, 64, seed=15)
    assert abs(est.value - (-1.0)) <= 3 * est.stderr


def test_log_hessian_v_zero_exact():
    est = estimate_log_hessian(EU, [0.0, 0.0], [1.0, 0.0], [0.0, 0.0], 0.5,
                               1000, 64, seed=16)
    assert est.value == 0.0


def test_hyperbolic_log_gradient_small_time_trend():
    """t grad log p approaches -grad(d^2/2) as t drops.

    The exact trend is carried by the oracle kernel (strictly decreasing
    deviation); the Monte Carlo estimate is checked against the oracle at
    every t.  Testing the trend on the raw estimates would need millions of
    paths at the smallest t because the conditioning-ratio variance grows like
    exp(d^2/(3 t)).
    """
    from hkmc.oracles import HyperbolicKernel

    hyp = HyperbolicChart(2)
    x = np.zeros(2)
    y = np.array([np.tanh(0.5), 0.0])  # distance 1
    g = hyp.metric(x)
    grad_half = hyp.grad_half_dist_sq(x, y)
    v = default_frame(hyp, x)[:, 0]
    proj = float(np.einsum("i,ij,j->", grad_half, g, v))
    target = -proj
    kernel = HyperbolicKernel(2)
    oracle_devs = []
    for t, n in ((0.4, 30_000), (0.2, 30_000), (0.1, 60_000)):
        oracle = t * float(kernel.dlog_radial(t, 1.0)) * proj
        est = estimate_log_gradient(hyp, x, y, v, t, n, 128, seed=17)
        assert abs(est.value - oracle) <= 3 * est.stderr + 0.01  # 3 sigma + step bias
        oracle_devs.append(abs(oracle - target))
    assert oracle_devs[0] > oracle_devs[1] > oracle_devs[2]


def test_two_hessian_routes_agree():
    """hess estimator with f = p(t/2, ., y) vs the kernel-ratio route."""
    t = 0.5
    x = np.array([0.0, 0.0])
    y = np.array([0.8, 0.2])
    v = np.array([1.0, 0.0])
    kernel = EuclideanKernel(2)

    def f(z):
        return np.exp(kernel.log_p_radial(0.5 * t, EU.distance(z, y)))

    route_a = estimate_hessian(EU, x, v, f, 0.5 * t, 50_000, 64, seed=18)
    est = estimate_log_hessian(EU, x, y, v, t, 50_000, 64, seed=19)
    p_t = float(np.exp(kernel.log_p_radial(t, EU.distance(x, y))))
    route_b = est.extras["hess_part"] * p_t  # E[I ratio] p(t,x,y) = <hess_x p, v o v>
    assert abs(route_a.value - route_b) <= 3 * route_a.stderr + 0.02


def test_girsanov_eps_zero_exact_and_sphere_mean():
    sph = SphereChart()
    x = np.array([0.3, 0.2])
    v = default_frame(sph, x)[:, 0]
    est0 = girsanov_mean(sph, x, v, 0.0, 0.5, 1000, 64, seed=20)
    assert est0.value == 1.0 and est0.stderr == 0.0
    est = girsanov_mean(sph, x, v, 0.05, 0.5, 30_000, 64, seed=21)
    assert abs(est.value - 1.0) <= 3 * est.stderr


def test_antithetic_flag_runs_and_is_deterministic():
    f = lambda z: z[..., 0] ** 2
    kw = dict(t=0.5, n_paths=4000, steps=64, seed=22, antithetic=True)
    a = estimate_hessian(EU, [0.0, 0.0], [1.0, 0.0], f, **kw)
    b = estimate_hessian(EU, [0.0, 0.0], [1.0, 0.0], f, **kw)
    assert a.value == b.value
    assert abs(a.value - 2.0) <= 4 * a.stderr


def test_worker_pool_matches_serial():
    est1 = estimate_gradient(EU, [0.0, 0.0], [1.0, 0.0], f_linear, 0.5, 8000,
                             32, seed=23, chunk_size=2000, workers=1)
    est2 = estimate_gradient(EU, [0.0, 0.0], [1.0, 0.0], f_linear, 0.5, 8000,
                             32, seed=23, chunk_size=2000, workers=2)
    assert est1.value == est2.value and est1.stderr == est2.stderr


def test_validation_errors():
    with pytest.raises(StatisticsError):
        estimate_gradient(EU, [0.0, 0.0], [1.0, 0.0], f_linear, 0.5, 1, 64)
    with pytest.raises(ConfigError):
        estimate_gradient(EU, [0.0, 0.0], [1.0, 0.0], f_linear, 0.5, 100, 63)
    with pytest.raises(ConfigError):
        # Start point outside D_{m-1} for the requested m.
        estimate_gradient(EU, [9.0, 0.0], [1.0, 0.0], f_linear, 0.5, 100, 64, m=2)
    with pytest.raises(UnsupportedManifoldError):
        estimate_log_gradient(ConformalPlaneChart(), [0.0, 0.0], [0.5, 0.0],
                              [1.0, 0.0], 0.5, 100, 64)


def test_auto_domain_index():
    assert auto_domain_index(EU, np.zeros(2)) == 4
    assert auto_domain_index(EU, np.array([8.0, 0.0])) >= 8
