"""Geometry invariants: metric, connection, curvature, frames, exhaustion."""

import numpy as np
import pytest
from conftest import fd_christoffel, fd_riemann_apply

from hkmc.errors import ConfigError, InvalidFrameError, UnsupportedManifoldError
from hkmc.geometry import (
    BumpProfile,
    ConformalPlaneChart,
    EuclideanChart,
    HyperbolicChart,
    SphereChart,
    default_frame,
    exhaustion_domains,
    frame_curvature_op,
    frame_curvature_tensor,
    frame_ricci_op,
    grad_ricci_op,
    make_chart,
    random_frame,
)
from hkmc.linops import dot_g, gram_matrix, max_abs

CHARTS = [
    EuclideanChart(2),
    SphereChart(),
    HyperbolicChart(2),
    HyperbolicChart(3),
    ConformalPlaneChart(),
]


def sample_points(chart, rng, n):
    if chart.kind.startswith("hyperbolic"):
        return rng.uniform(-0.55, 0.55, (n, chart.dim))
    if chart.kind == "sphere2":
        return rng.uniform(-1.2, 1.2, (n, chart.dim))
    return rng.uniform(-2.0, 2.0, (n, chart.dim))


@pytest.mark.parametrize("chart", CHARTS, ids=lambda c: c.kind)
def test_metric_spd_and_christoffel_symmetry(chart, rng):
    pts = sample_points(chart, rng, 50)
    g = chart.metric(pts)
    eig = np.linalg.eigvalsh(g)
    assert np.all(eig > 0)
    gam = chart.christoffel(pts)
    assert max_abs(gam - np.swapaxes(gam, -1, -2)) < 1e-14


@pytest.mark.parametrize("chart", CHARTS, ids=lambda c: c.kind)
def test_christoffel_matches_metric_fd(chart, rng):
    for x in sample_points(chart, rng, 5):
        assert max_abs(chart.christoffel(x) - fd_christoffel(chart, x)) < 5e-7


@pytest.mark.parametrize("chart", CHARTS, ids=lambda c: c.kind)
def test_riemann_antisymmetry_and_bianchi(chart, rng):
    pts = sample_points(chart, rng, 20)
    a, b, c = rng.standard_normal((3, 20, chart.dim))
    r_ab = chart.riemann_apply(pts, a, b, c)
    r_ba = chart.riemann_apply(pts, b, a, c)
    assert max_abs(r_ab + r_ba) < 1e-10
    bianchi = (
        chart.riemann_apply(pts, a, b, c)
        + chart.riemann_apply(pts, b, c, a)
        + chart.riemann_apply(pts, c, a, b)
    )
    assert max_abs(bianchi) < 1e-8


@pytest.mark.parametrize("chart", CHARTS, ids=lambda c: c.kind)
def test_riemann_matches_fd_curvature(chart, rng):
    a, b, c = rng.standard_normal((3, chart.dim))
    for x in sample_points(chart, rng, 3):
        got = chart.riemann_apply(x, a, b, c)
        ref = fd_riemann_apply(chart, x, a, b, c)
        assert max_abs(got - ref) < 5e-4 * max(1.0, max_abs(ref))


@pytest.mark.parametrize("chart", CHARTS, ids=lambda c: c.kind)
def test_gram_schmidt_frames_exact(chart, rng):
    pts = sample_points(chart, rng, 100)
    u = random_frame(chart, pts, rng)
    defect = max_abs(gram_matrix(chart.metric(pts), u) - np.eye(chart.dim))
    assert defect <= 1e-12


@pytest.mark.parametrize("chart", CHARTS, ids=lambda c: c.kind)
def test_frame_curvature_antisymmetry_and_ricci_trace(chart, rng):
    pts = sample_points(chart, rng, 100)
    u = random_frame(chart, pts, rng)
    e = np.eye(chart.dim)
    # Antisymmetry of the operator matrix.
    m = frame_curvature_op(chart, pts, u, e[0], e[1 % chart.dim])
    assert max_abs(m + np.swapaxes(m, -1, -2)) <= 1e-10
    # Trace identity: ric_U(e)_a = sum_i (R_U(e_i, e))_{i a}.
    for ej in e:
        ric = frame_ricci_op(chart, pts, u, ej)
        tr = np.zeros_like(ric)
        for i in range(chart.dim):
            tr += frame_curvature_op(chart, pts, u, e[i], ej)[..., i, :]
        assert max_abs(ric - tr) < 1e-8


def test_frame_curvature_values(rng):
    eu = EuclideanChart(2)
    x = np.zeros(2)
    u = default_frame(eu, x)
    assert max_abs(frame_curvature_op(eu, x, u, np.eye(2)[0], np.eye(2)[1])) == 0.0

    # Sphere, constant curvature +1: (R_U(e1,e2))_{ab} = <R(U e1, U e2) U e_b, U e_a>
    # gives M12 = +1, M21 = -1; cross-checked against the FD curvature oracle.
    sph = SphereChart()
    x = np.array([0.4, -0.1])
    u = default_frame(sph, x)
    m = frame_curvature_op(sph, x, u, np.eye(2)[0], np.eye(2)[1])
    assert abs(m[0, 1] - 1.0) < 1e-12 and abs(m[1, 0] + 1.0) < 1e-12
    m_tensor = frame_curvature_tensor(sph, x, u, np.eye(2)[0], np.eye(2)[1])
    assert max_abs(m - m_tensor) < 1e-10
    g = sph.metric(x)
    ref = np.array(
        [
            [dot_g(g, u[:, a], fd_riemann_apply(sph, x, u[:, 0], u[:, 1], u[:, b]))
             for b in range(2)]
            for a in range(2)
        ]
    )
    assert max_abs(m - ref) < 1e-4


def test_frame_curvature_conformal_bianchi(rng):
    chart = ConformalPlaneChart(BumpProfile(amplitude=0.4, radius=1.2))
    pts = rng.uniform(-1.0, 1.0, (20, 2))
    u = random_frame(chart, pts, rng)
    e1, e2 = np.eye(2)
    m = frame_curvature_op(chart, pts, u, e1, e2)
    assert max_abs(m + np.swapaxes(m, -1, -2)) < 1e-8
    # First Bianchi for the tensor route at the same points.
    a, b, c = rng.standard_normal((3, 20, 2))
    s = (
        chart.riemann_apply(pts, a, b, c)
        + chart.riemann_apply(pts, b, c, a)
        + chart.riemann_apply(pts, c, a, b)
    )
    assert max_abs(s) < 1e-8


def test_frame_ricci_values(rng):
    e1 = np.array([1.0, 0.0])
    eu = EuclideanChart(2)
    assert max_abs(frame_ricci_op(eu, np.zeros(2), default_frame(eu, np.zeros(2)), e1)) == 0.0
    hyp = HyperbolicChart(2)
    x = np.array([0.2, 0.3])
    u = random_frame(hyp, x, rng)
    assert max_abs(frame_ricci_op(hyp, x, u, e1) + e1) < 1e-12
    sph = SphereChart()
    u = random_frame(sph, x, rng)
    assert max_abs(frame_ricci_op(sph, x, u, e1) - e1) < 1e-12


def test_invalid_frame_rejected():
    sph = SphereChart()
    x = np.array([0.1, 0.2])
    bad = np.eye(2) * 3.0
    with pytest.raises(InvalidFrameError):
        frame_ricci_op(sph, x, bad, np.array([1.0, 0.0]))


def test_grad_ricci_zero_on_space_forms(rng):
    e1 = np.array([1.0, 0.0])
    for chart in (EuclideanChart(2), SphereChart(), HyperbolicChart(2)):
        x = np.array([0.2, -0.3])
        u = default_frame(chart, x)
        assert max_abs(grad_ricci_op(chart, x, u, e1)) == 0.0


def test_grad_ricci_conformal_fd(rng):
    """Compare with a central difference of ric along a geodesic."""
    from hkmc.frame_sde import parallel_geodesic
    from hkmc.linops import frame_inverse, mat_vec

    chart = ConformalPlaneChart(BumpProfile(amplitude=0.4, radius=1.2))
    x = np.array([0.3, -0.2])
    u = default_frame(chart, x)
    e = np.array([0.8, 0.6])
    got = grad_ricci_op(chart, x, u, e)
    # (nabla_{Ue} Ric)(Ue) via parallel transport: fd of U_s^{-1} Ric(U_s e).
    eps = 1e-4
    v = mat_vec(u, e)

    def ric_frame(s):
        xs, us = parallel_geodesic(chart, x, v, u, s)
        ric = chart.ricci_matrix(xs)
        uinv = frame_inverse(chart.metric(xs), us)
        return mat_vec(uinv, mat_vec(ric, mat_vec(us, e)))

    fd = (ric_frame(eps) - ric_frame(-eps)) / (2 * eps)
    assert max_abs(got - fd) < 1e-4 * max(1.0, max_abs(got))
    # Outside the support of the bump the manifold is flat.
    far = np.array([5.0, 5.0])
    ufar = default_frame(chart, far)
    assert max_abs(grad_ricci_op(chart, far, ufar, e)) == 0.0


def test_conformal_gauss_curvature_fd():
    chart = ConformalPlaneChart(BumpProfile(amplitude=0.3, radius=1.5))
    x = np.array([0.4, 0.2])
    a, b = np.eye(2)
    # Sectional curvature from the FD curvature tensor: K = <R(a,b)b, a>/area^2.
    g = chart.metric(x)
    r = fd_riemann_apply(chart, x, a, b, b)
    num = float(dot_g(g, r, a))
    area2 = float(dot_g(g, a, a) * dot_g(g, b, b) - dot_g(g, a, b) ** 2)
    assert abs(num / area2 - float(chart.curvature_scale(x))) < 1e-5


@pytest.mark.parametrize("chart", CHARTS, ids=lambda c: c.kind)
def test_exhaustion_gradient_bounds(chart, rng):
    pts = sample_points(chart, rng, 1000)
    gn = chart.exhaustion_grad_norm(pts)
    assert np.all(gn > 0)
    assert np.all(gn <= 1.0)
    hd = chart.exhaustion(pts)
    if chart.kind not in ("conformal_plane",):
        d = chart.distance(pts, np.zeros(chart.dim))
        assert np.all(np.abs(hd - 0.5 * d) < 1.0)


def test_exhaustion_domains():
    eu = EuclideanChart(2)
    d3 = exhaustion_domains(eu, 3)
    grid = np.stack(np.meshgrid(np.linspace(-4, 4, 41), np.linspace(-4, 4, 41)),
                    axis=-1).reshape(-1, 2)
    ball4 = grid[np.einsum("ij,ij->i", grid, grid) <= 16.0]
    assert np.all(d3.contains(ball4))
    for m in (1, 2, 5):
        assert exhaustion_domains(eu, m).contains(np.zeros(2))
    with pytest.raises(ConfigError):
        exhaustion_domains(eu, 0)
    # Compact sphere: D_m is everything once m exceeds the max of hd (~1.12).
    sph = SphereChart()
    far = np.stack(np.meshgrid(np.linspace(-20, 20, 41), np.linspace(-20, 20, 41)),
                   axis=-1).reshape(-1, 2)
    assert float(sph.exhaustion(far).max()) < 2.0
    for m in (2, 3):
        assert np.all(exhaustion_domains(sph, m).contains(far))


def test_distance_data_consistency(rng):
    for chart in (SphereChart(), HyperbolicChart(2), HyperbolicChart(3)):
        n = chart.dim
        x = rng.uniform(-0.3, 0.3, n)
        y = rng.uniform(-0.3, 0.3, n)
        d = chart.distance(x, y)
        grad = chart.grad_half_dist_sq(x, y)
        # |grad(d^2/2)|_g = d.
        assert abs(np.sqrt(dot_g(chart.metric(x), grad, grad)) - d) < 1e-10
        # Covariant Hessian against FD minus the Christoffel correction.
        h = chart.hess_half_dist_sq(x, y)
        step = 1e-4
        hfd = np.zeros((n, n))
        for i in range(n):
            for j in range(n):
                ei = np.eye(n)[i] * step
                ej = np.eye(n)[j] * step
                vals = [
                    chart.distance(x + ei + ej, y) ** 2,
                    -chart.distance(x + ei - ej, y) ** 2,
                    -chart.distance(x - ei + ej, y) ** 2,
                    chart.distance(x - ei - ej, y) ** 2,
                ]
                hfd[i, j] = 0.5 * sum(vals) / (4 * step**2)
        coord_grad = chart.metric(x) @ grad
        hcov = hfd - np.einsum("kij,k->ij", chart.christoffel(x), coord_grad)
        assert max_abs(h - hcov) < 5e-5


def test_sphere_recenter_isometry(rng):
    sph = SphereChart()
    x = np.array([1.8, -0.4])
    u = default_frame(sph, x)
    x2, u2, iso = sph.recenter(x, u)
    assert max_abs(x2) == 0.0
    assert max_abs(gram_matrix(sph.metric(x2), u2) - np.eye(2)) < 1e-12
    z = rng.uniform(-0.5, 0.5, (10, 2))
    assert max_abs(sph.distance(x, z) - sph.distance(x2, iso.point(z))) < 1e-12


def test_chart_catalog():
    assert make_chart("euclidean", {"dim": 3}).dim == 3
    assert make_chart("sphere2").kind == "sphere2"
    assert make_chart("hyperbolic3").dim == 3
    assert make_chart("conformal_plane", {"amplitude": 0.2}).profile.amplitude == 0.2
    with pytest.raises(ConfigError):
        make_chart("minkowski")
    with pytest.raises(UnsupportedManifoldError):
        make_chart("conformal_plane").distance(np.zeros(2), np.ones(2))
