"""Horizontal SDE integration: exactness, reproducibility, convergence."""

import numpy as np
import pytest
from numpy.polynomial.legendre import leggauss

from hkmc.errors import ChartEscapeError, ConfigError
from hkmc.frame_sde import (
    VariationConfig,
    parallel_geodesic,
    simulate_horizontal,
    simulate_perturbed,
    simulate_terminal,
    variation_probe,
)
from hkmc.functionals import AdmissibleH
from hkmc.geometry import EuclideanChart, HyperbolicChart, SphereChart, default_frame
from hkmc.linops import gram_matrix, max_abs
from hkmc.oracles import HyperbolicKernel
from hkmc.rng import StreamSpec


def test_euclidean_path_is_exact():
    eu = EuclideanChart(2)
    rec = simulate_horizontal(eu, [0.4, -1.0], None, 1.0, 64, StreamSpec(3, 9))
    expect = np.array([0.4, -1.0]) + rec.frames[0] @ rec.dB.sum(axis=0)
    assert max_abs(rec.xs[-1] - expect) < 1e-14


def test_reproducibility_byte_for_byte():
    sph = SphereChart()
    a = simulate_horizontal(sph, [0.2, 0.1], None, 0.5, 128, StreamSpec(11, 40))
    b = simulate_horizontal(sph, [0.2, 0.1], None, 0.5, 128, StreamSpec(11, 40))
    assert np.array_equal(a.xs, b.xs)
    assert np.array_equal(a.frames, b.frames)
    assert np.array_equal(a.dB, b.dB)
    c = simulate_horizontal(sph, [0.2, 0.1], None, 0.5, 128, StreamSpec(11, 41))
    assert not np.array_equal(a.dB, c.dB)


def test_frame_orthonormality_enforced():
    sph = SphereChart()
    rec = simulate_horizontal(sph, [0.3, -0.2], None, 1.0, 256, StreamSpec(5, 0))
    worst = max(
        max_abs(gram_matrix(sph.metric(rec.xs[k]), rec.frames[k]) - np.eye(2))
        for k in range(0, 257, 16)
    )
    assert worst <= 1e-10


def test_orthonormality_drift_halves_without_projection():
    """Diagnostic mode: the O(ds) frame defect roughly halves when ds does.

    Coupled runs (coarse increments are pair sums of the fine ones) so the
    ratio is not washed out by independent noise; averaged over streams.
    """
    from hkmc.rng import normal_increments

    sph = SphereChart()
    ratios = []
    for stream in range(8):
        fine = normal_increments(7, stream, 256, 2) * np.sqrt(1.0 / 256)
        coarse = fine.reshape(128, 2, 2).sum(axis=1)
        defect = {}
        for steps, db in ((128, coarse), (256, fine)):
            rec = simulate_horizontal(sph, [0.3, -0.2], None, 1.0, steps,
                                      StreamSpec(7, stream), dB=db,
                                      orthonormalize=False, recenter=False)
            defect[steps] = max_abs(
                gram_matrix(sph.metric(rec.xs[-1]), rec.frames[-1]) - np.eye(2)
            )
        ratios.append(defect[128] / defect[256])
    # At least first-order shrinkage (the random part decays even faster).
    mean_ratio = np.mean(ratios)
    assert mean_ratio > 1.5
    assert np.median(ratios) < 8.0


def test_exit_steps_recorded():
    eu = EuclideanChart(2)
    rec = simulate_horizontal(eu, [3.8, 0.0], None, 1.0, 512, StreamSpec(21, 5))
    k2, k3 = rec.exit_step(2), rec.exit_step(3)
    if k2 is not None and k3 is not None:
        assert k2 <= k3  # exit times nondecreasing in m
    assert rec.exit_time(50) == np.inf


def test_sphere_semigroup_decay():
    """E[cos d(x0, X_t)] = e^{-t}: degree-1 spherical harmonic under Delta/2."""
    sph = SphereChart()
    x0 = np.array([0.2, 0.1])
    n = 100_000
    pts = simulate_terminal(sph, x0, 0.5, 64, 2024, n)
    cosd = SphereChart.embed(pts) @ SphereChart.embed(x0)
    se = cosd.std(ddof=1) / np.sqrt(n)
    assert abs(cosd.mean() - np.exp(-0.5)) <= 3 * se


def test_hyperbolic_mean_square_distance():
    """Empirical E[d^2] at t=0.1 against radial quadrature of the H2 kernel."""
    hyp = HyperbolicChart(2)
    t = 0.1
    n = 40_000
    pts = simulate_terminal(hyp, np.zeros(2), t, 128, 77, n)
    d = hyp.distance(pts, np.zeros(2))
    kernel = HyperbolicKernel(2)
    nodes, wts = leggauss(400)
    rmax = 12 * np.sqrt(t) + 1.0
    r = 0.5 * rmax * (nodes + 1)
    w = 0.5 * rmax * wts
    p, _, _ = kernel._h2_p_derivs(t, r)
    target = float((p * r**2 * 2 * np.pi * np.sinh(r) * w).sum())
    se = (d**2).std(ddof=1) / np.sqrt(n)
    assert abs((d**2).mean() - target) <= 3 * se + 2e-3  # 3 sigma + step bias


def test_chart_invariance_under_forced_recentering():
    sph = SphereChart()
    x0 = np.array([0.2, 0.1])
    n = 30_000
    plain = simulate_terminal(sph, x0, 0.5, 64, 99, n)
    forced = simulate_terminal(sph, x0, 0.5, 64, 99, n, forced_recenter_every=16)
    c0 = SphereChart.embed(plain) @ SphereChart.embed(x0)
    c1 = SphereChart.embed(forced) @ SphereChart.embed(x0)
    se = np.sqrt(c0.var(ddof=1) / n + c1.var(ddof=1) / n)
    assert abs(c0.mean() - c1.mean()) <= 3 * se


def test_weak_bias_decreases_with_steps():
    """Sphere cos-distance bias at steps 64/128/256, common random numbers."""
    sph = SphereChart()
    x0 = np.array([0.2, 0.1])
    p0 = SphereChart.embed(x0)
    n = 60_000
    target = np.exp(-0.5)
    biases = []
    for steps in (64, 128, 256):
        pts = simulate_terminal(sph, x0, 0.5, steps, 31, n, gen_steps=512)
        biases.append(abs((SphereChart.embed(pts) @ p0).mean() - target))
    assert biases[0] > biases[1] > biases[2]


def test_chart_escape_raises():
    hyp = HyperbolicChart(2)
    db = np.full((4, 2), 5.0)  # four huge deterministic increments
    with pytest.raises(ChartEscapeError):
        simulate_horizontal(hyp, [0.9, 0.0], None, 1.0, 4, StreamSpec(0, 0), dB=db)


def test_geodesic_and_parallel_transport():
    sph = SphereChart()
    x = np.array([0.1, 0.2])
    u = default_frame(sph, x)
    v = 0.7 * u[:, 1]
    xe, ue = parallel_geodesic(sph, x, v, u, 0.4)
    assert abs(sph.distance(x, xe) - 0.7 * 0.4) < 1e-10
    assert max_abs(gram_matrix(sph.metric(xe), ue) - np.eye(2)) < 1e-12
    x0, u0 = parallel_geodesic(sph, x, v, u, 0.0)
    assert np.array_equal(x0, x) and np.array_equal(u0, u)


def _linear_h(v, t):
    def build(rec):
        w = np.linalg.solve(rec.frames[0], v)
        return AdmissibleH.from_callables(
            rec.times, lambda s: (1.0 - 0.5 * s) * w, lambda s: -0.5 * w,
            support_end=t,
        )
    return build


def test_perturbed_eps_zero_is_identity():
    sph = SphereChart()
    x = np.array([0.1, -0.05])
    v = default_frame(sph, x)[:, 0]
    t, steps = 0.5, 256
    cfg = VariationConfig(epsilon=0.0, x=x, v=v, h_spec=_linear_h(v, t),
                          shared_noise=StreamSpec(5, 1))
    pert = simulate_perturbed(sph, cfg, None, t, steps)
    base = simulate_horizontal(sph, x, None, t, steps, StreamSpec(5, 1),
                               recenter=False)
    assert np.array_equal(pert.xs, base.xs)
    assert np.array_equal(pert.dB, base.dB)


def test_perturbed_flat_space_reduction():
    """Euclidean: G = Id and X_t^eps = xi(eps) + U0 (B_t + eps int h')."""
    eu = EuclideanChart(2)
    x = np.array([0.3, 0.7])
    u0 = default_frame(eu, x)
    v = np.array([1.0, 0.0])
    t, steps, eps = 1.0, 64, 0.08
    cfg = VariationConfig(epsilon=eps, x=x, v=v, h_spec=_linear_h(v, t),
                          shared_noise=StreamSpec(9, 2))
    pert = simulate_perturbed(eu, cfg, None, t, steps)
    base = simulate_horizontal(eu, x, None, t, steps, StreamSpec(9, 2))
    w = np.linalg.solve(u0, v)
    times = base.times
    int_hp = np.zeros(2)
    expected = [x + eps * v]
    for k in range(steps):
        ds = times[k + 1] - times[k]
        int_hp = int_hp + 0.5 * ((-0.5 * w) + (-0.5 * w)) * ds
        expected.append(x + eps * v + u0 @ (base.dB[: k + 1].sum(axis=0) + eps * int_hp))
    assert max_abs(pert.xs - np.array(expected)) < 1e-12


def test_perturbed_first_variation_matches_uh():
    """Central difference of X_t^eps recovers U_t h(t) within 2% (Lemma-type)."""
    sph = SphereChart()
    x = np.array([0.1, -0.05])
    v = default_frame(sph, x)[:, 0]
    t, steps, eps = 0.5, 2048, 0.02
    stream = StreamSpec(6, 3)
    build = _linear_h(v, t)
    recs = {}
    for e in (eps, -eps):
        cfg = VariationConfig(epsilon=e, x=x, v=v, h_spec=build,
                              shared_noise=stream)
        recs[e] = simulate_perturbed(sph, cfg, None, t, steps)
    base = simulate_horizontal(sph, x, None, t, steps, stream, recenter=False)
    h_t = np.linalg.solve(base.frames[0], v) * (1.0 - 0.5 * t)
    ref = base.frames[-1] @ h_t
    fd = (recs[eps].xs[-1] - recs[-eps].xs[-1]) / (2 * eps)
    assert np.linalg.norm(fd - ref) <= 0.02 * np.linalg.norm(ref)


def test_variation_probe_contracts():
    sph = SphereChart()
    x = np.array([0.1, -0.05])
    v = default_frame(sph, x)[:, 0]
    t, steps = 0.5, 2048
    checks = variation_probe(sph, x, v, _linear_h(v, t), t, steps,
                             [-0.04, -0.02, 0.0, 0.02, 0.04], StreamSpec(6, 3),
                             check_fracs=(0.5, 1.0))
    for c in checks:
        assert c.first_err <= 0.02 * np.linalg.norm(v)
        assert c.second_err <= 0.05 * np.linalg.norm(v)


def test_variation_probe_requires_symmetric_grid():
    sph = SphereChart()
    v = np.array([1.0, 0.0])
    with pytest.raises(ConfigError):
        variation_probe(sph, np.zeros(2), v, _linear_h(v, 0.5), 0.5, 64,
                        [0.0, 0.02, 0.04], StreamSpec(0, 0))


def test_variation_config_bounds():
    with pytest.raises(ConfigError):
        VariationConfig(epsilon=0.5, x=np.zeros(2), v=np.zeros(2))
    with pytest.raises(ConfigError):
        VariationConfig(epsilon=1.5, x=np.zeros(2), v=np.zeros(2))
