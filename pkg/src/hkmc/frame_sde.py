"""Horizontal Brownian motion on the orthonormal frame bundle.

Integrates the Stratonovich system

    dx^c     = U^c_i o dB^i
    dU^a_i   = -Gamma^a_{bc} U^b_i o dx^c

with a Heun predictor-corrector step followed by metric Gram-Schmidt
re-orthonormalization, so the frame stays a linear isometry at every accepted
node.  The perturbed flow rotates and translates the driving noise,

    dB~ = G o (dB + eps h' ds + (eps^2/2) Gamma h' ds),
    G   = exp(-eps Gamma - (eps^2/2) Gamma2),

with Gamma, Gamma2 accumulated concurrently from the eps = 0 baseline.

Every path owns a counter-based RNG stream (seed, stream) and identical
configuration reproduces records byte-for-byte.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ChartEscapeError, ConfigError
from .functionals import AdmissibleH, PathFunctionals
from .geometry import ManifoldChart, SphereChart, default_frame
from .linops import expm_so, gram_schmidt, mat_vec
from .rng import StreamSpec, normal_increments

__all__ = [
    "FrameState",
    "PathRecord",
    "VariationConfig",
    "HorizontalIntegrator",
    "simulate_horizontal",
    "simulate_terminal",
    "simulate_perturbed",
    "variation_probe",
    "parallel_geodesic",
]


@dataclass
class FrameState:
    """Chart point plus g-orthonormal frame (columns are frame vectors)."""

    x: np.ndarray
    U: np.ndarray
    chart_epoch: int = 0


@dataclass
class PathRecord:
    """Full discretized trajectory of one horizontal path.

    ``xs`` live in the chart current at each node (``chart_epochs`` counts
    recenterings; ``isometries`` holds the corresponding chart maps).  ``exh``
    stores the smoothed half-distance to the configured origin, from which
    exit times of any exhaustion domain D_m are read off at grid resolution.
    """

    chart: ManifoldChart
    times: np.ndarray
    xs: np.ndarray
    frames: np.ndarray
    dB: np.ndarray
    exh: np.ndarray
    chart_epochs: np.ndarray
    isometries: list = field(default_factory=list)
    stream: StreamSpec | None = None
    alive: bool = True

    def state(self, k: int) -> FrameState:
        return FrameState(x=self.xs[k], U=self.frames[k], chart_epoch=int(self.chart_epochs[k]))

    def exit_step(self, m: int) -> int | None:
        """Index of the first grid node outside D_m, or None if never."""
        hits = np.nonzero(self.exh >= m)[0]
        return int(hits[0]) if hits.size else None

    def exit_time(self, m: int) -> float:
        k = self.exit_step(m)
        return float(self.times[k]) if k is not None else np.inf


class HorizontalIntegrator:
    """Batched Heun stepper with optional recentering and point tracking.

    ``tracked`` chart points (the exhaustion origin, a kernel target, ...) are
    carried through every recentering so distances to them stay meaningful in
    the current chart.
    """

    def __init__(self, chart: ManifoldChart, x0, u0, *, recenter=True,
                 tracked: dict | None = None, orthonormalize=True):
        x0 = np.asarray(x0, dtype=float)
        u0 = np.asarray(u0, dtype=float)
        self.chart = chart
        self.orthonormalize = orthonormalize
        self.x = x0.copy()
        self.u = u0.copy()
        self.batch_shape = x0.shape[:-1]
        self.recenter_enabled = recenter and chart.recenter_threshold is not None
        self.epoch = np.zeros(self.batch_shape, dtype=np.int64)
        self.tracked = {}
        base = dict(tracked or {})
        base.setdefault("origin", np.zeros(chart.dim))
        for name, pt in base.items():
            self.tracked[name] = np.broadcast_to(
                np.asarray(pt, dtype=float), x0.shape
            ).copy()
        self.last_isometry = None
        if isinstance(chart, SphereChart):
            self.rot_cum = np.broadcast_to(
                np.eye(3), self.batch_shape + (3, 3)
            ).copy()
        else:
            self.rot_cum = None

    def _drift(self, x, u, db):
        dx = mat_vec(u, db)
        du = -self.chart.christoffel_columns(x, u, dx)
        return dx, du

    def step(self, db) -> None:
        """One Heun predictor-corrector step driven by the increment db."""
        x, u = self.x, self.u
        dx1, du1 = self._drift(x, u, db)
        xp, up = x + dx1, u + du1
        dx2, du2 = self._drift(xp, up, db)
        x_new = x + 0.5 * (dx1 + dx2)
        u_new = u + 0.5 * (du1 + du2)
        ok = self.chart.in_domain(x_new)
        if not np.all(ok):
            raise ChartEscapeError(
                f"{self.chart.kind}: {int(np.sum(~ok))} path(s) left the chart domain"
            )
        if self.orthonormalize:
            u_new = gram_schmidt(self.chart.metric(x_new), u_new)
        self.x, self.u = x_new, u_new
        if self.recenter_enabled:
            self._maybe_recenter()

    def _maybe_recenter(self):
        mask = self.chart.needs_recenter(self.x)
        if not np.any(mask):
            self.last_isometry = None
            return
        idx = np.nonzero(mask)
        x_sel = self.x[idx] if idx[0].size else self.x[mask]
        u_sel = self.u[mask]
        x_new, u_new, iso = self.chart.recenter(x_sel, u_sel)
        self.x[mask] = x_new
        self.u[mask] = u_new
        self.epoch[mask] += 1
        for name, pts in self.tracked.items():
            pts[mask] = iso.point(pts[mask])
        if self.rot_cum is not None:
            self.rot_cum[mask] = iso.rotation @ self.rot_cum[mask]
        self.last_isometry = (mask, iso)

    def exhaustion(self) -> np.ndarray:
        """Smoothed half-distance to the tracked origin, current chart."""
        return exhaustion_from(self.chart, self.x, self.tracked["origin"])

    def distance_to(self, name: str) -> np.ndarray:
        return self.chart.distance(self.x, self.tracked[name])

    def points_base_chart(self) -> np.ndarray:
        """Current points mapped back to the chart of the initial condition."""
        if self.rot_cum is None:
            return self.x.copy()
        p = SphereChart.embed(self.x)
        p0 = np.einsum("...ba,...b->...a", self.rot_cum, p)
        return SphereChart.unembed(p0)


def exhaustion_from(chart: ManifoldChart, x, o) -> np.ndarray:
    """Exhaustion function evaluated against an arbitrary origin point."""
    if isinstance(chart, SphereChart):
        c = np.clip(
            np.einsum("...a,...a->...", SphereChart.embed(x), SphereChart.embed(o)),
            -1.0,
            1.0,
        )
        return 0.5 * np.sqrt(3.0 - 2.0 * c)
    if chart.kind.startswith("hyperbolic"):
        d = chart.distance(x, o)
        return 0.5 * np.sqrt(d * d + 1.0)
    diff = np.asarray(x) - np.asarray(o)
    return 0.5 * np.sqrt(np.einsum("...i,...i->...", diff, diff) + 1.0)


def _resolve_stream(rng_stream) -> StreamSpec:
    if isinstance(rng_stream, StreamSpec):
        return rng_stream
    if isinstance(rng_stream, (tuple, list)) and len(rng_stream) == 2:
        return StreamSpec(int(rng_stream[0]), int(rng_stream[1]))
    if isinstance(rng_stream, (int, np.integer)):
        return StreamSpec(int(rng_stream), 0)
    raise ConfigError(f"cannot interpret rng stream spec {rng_stream!r}")


def simulate_horizontal(chart: ManifoldChart, x0, u0=None, t: float = 1.0,
                        steps: int = 128, rng_stream=0, *, dB=None,
                        recenter=True, orthonormalize=True) -> PathRecord:
    """Integrate one horizontal path on [0, t] and record every node."""
    if steps < 1:
        raise ConfigError("steps must be >= 1")
    x0 = np.asarray(x0, dtype=float)
    if u0 is None:
        u0 = default_frame(chart, x0)
    u0 = np.asarray(u0, dtype=float)
    stream = _resolve_stream(rng_stream)
    ds = t / steps
    if dB is None:
        dB = normal_increments(stream.seed, stream.stream, steps, chart.dim) * np.sqrt(ds)
    dB = np.asarray(dB, dtype=float)
    if dB.shape != (steps, chart.dim):
        raise ConfigError(f"dB must have shape ({steps}, {chart.dim})")

    eng = HorizontalIntegrator(chart, x0, u0, recenter=recenter,
                               orthonormalize=orthonormalize)
    n = chart.dim
    xs = np.empty((steps + 1, n))
    frames = np.empty((steps + 1, n, n))
    exh = np.empty(steps + 1)
    epochs = np.empty(steps + 1, dtype=np.int64)
    isometries = []
    xs[0], frames[0], exh[0], epochs[0] = eng.x, eng.u, eng.exhaustion(), 0
    for k in range(steps):
        eng.step(dB[k])
        if eng.last_isometry is not None:
            isometries.append((k + 1, eng.last_isometry[1]))
        xs[k + 1], frames[k + 1] = eng.x, eng.u
        exh[k + 1] = eng.exhaustion()
        epochs[k + 1] = eng.epoch
    times = np.linspace(0.0, t, steps + 1)
    return PathRecord(chart=chart, times=times, xs=xs, frames=frames, dB=dB,
                      exh=exh, chart_epochs=epochs, isometries=isometries,
                      stream=stream)


def simulate_terminal(chart: ManifoldChart, x0, t, steps, seed, n_paths, *,
                      u0=None, first_stream=0, recenter=True,
                      forced_recenter_every=None, gen_steps=None) -> np.ndarray:
    """Terminal points of a batch of paths, in the base chart.

    Light-weight sampler for distribution-level tests; heavy estimation runs
    live in :mod:`hkmc.estimators`.  ``gen_steps`` (a multiple of ``steps``)
    draws the noise at a finer resolution and sums it per step, coupling runs
    at different step counts to the same Brownian paths.
    """
    x0 = np.asarray(x0, dtype=float)
    xb = np.broadcast_to(x0, (n_paths, chart.dim)).copy()
    if u0 is None:
        ub = default_frame(chart, xb)
    else:
        ub = np.broadcast_to(np.asarray(u0, dtype=float), (n_paths, chart.dim, chart.dim)).copy()
    eng = HorizontalIntegrator(chart, xb, ub, recenter=recenter)
    gen_steps = gen_steps or steps
    if gen_steps % steps:
        raise ConfigError("gen_steps must be a multiple of steps")
    sq = np.sqrt(t / gen_steps)
    from .rng import batch_normal_increments

    dB = batch_normal_increments(seed, first_stream, n_paths, gen_steps, chart.dim) * sq
    if gen_steps != steps:
        dB = dB.reshape(n_paths, steps, gen_steps // steps, chart.dim).sum(axis=2)
    for k in range(steps):
        eng.step(dB[:, k, :])
        if forced_recenter_every and (k + 1) % forced_recenter_every == 0:
            _force_recenter(eng)
    return eng.points_base_chart()


def _force_recenter(eng: HorizontalIntegrator):
    """Recenter every path regardless of threshold (chart-invariance tests)."""
    chart = eng.chart
    if not isinstance(chart, SphereChart):
        return
    x_new, u_new, iso = chart.recenter(eng.x, eng.u)
    eng.x, eng.u = x_new, u_new
    eng.epoch += 1
    for name, pts in eng.tracked.items():
        eng.tracked[name] = iso.point(pts)
    eng.rot_cum = iso.rotation @ eng.rot_cum


# -- geodesics ---------------------------------------------------------------------


def parallel_geodesic(chart: ManifoldChart, x0, v, u0, eps: float, *,
                      substeps: int | None = None):
    """Geodesic from x0 with initial speed v, frame parallel along it.

    Returns (xi(eps), U(eps)).  RK4 on the coupled geodesic / parallel
    transport system; exact passthrough at eps = 0.
    """
    x0 = np.asarray(x0, dtype=float)
    u0 = np.asarray(u0, dtype=float)
    v = np.asarray(v, dtype=float)
    if eps == 0.0:
        return x0.copy(), u0.copy()
    if substeps is None:
        substeps = max(32, int(np.ceil(abs(eps) * 512)))
    hq = chart.christoffel_quad
    hc = chart.christoffel_columns

    def rhs(state):
        x, w, u = state
        return (w, -hq(x, w, w), -hc(x, u, w))

    x, w, u = x0.copy(), v.copy(), u0.copy()
    h = eps / substeps
    for _ in range(substeps):
        k1 = rhs((x, w, u))
        k2 = rhs((x + 0.5 * h * k1[0], w + 0.5 * h * k1[1], u + 0.5 * h * k1[2]))
        k3 = rhs((x + 0.5 * h * k2[0], w + 0.5 * h * k2[1], u + 0.5 * h * k2[2]))
        k4 = rhs((x + h * k3[0], w + h * k3[1], u + h * k3[2]))
        x = x + (h / 6.0) * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        w = w + (h / 6.0) * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        u = u + (h / 6.0) * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
    u = gram_schmidt(chart.metric(x), u)
    return x, u


# -- perturbed flow ------------------------------------------------------------------


@dataclass
class VariationConfig:
    """Perturbation family: geodesic initial data plus Cameron-Martin process.

    ``h_spec`` is either an AdmissibleH on the path grid or a callable
    ``(PathRecord) -> AdmissibleH`` (used for path-adapted choices).
    """

    epsilon: float
    x: np.ndarray
    v: np.ndarray
    h_spec: object = None
    shared_noise: StreamSpec = StreamSpec(0, 0)
    max_epsilon: float = 0.1

    def __post_init__(self):
        if not -1.0 < self.epsilon < 1.0:
            raise ConfigError("epsilon must lie in (-1, 1)")
        if abs(self.epsilon) > self.max_epsilon:
            raise ConfigError(
                f"|epsilon| = {abs(self.epsilon)} exceeds configured bound "
                f"{self.max_epsilon}"
            )


@dataclass
class BaselineVariation:
    """Baseline path with the node data the perturbed flow consumes."""

    record: PathRecord
    h: AdmissibleH
    gammas: np.ndarray  # (K+1, n, n)
    gamma2s: np.ndarray  # (K+1, n, n)
    u0: np.ndarray


def _baseline_for_variation(chart, x0, u0, h_spec, t, steps, stream,
                            recenter) -> BaselineVariation:
    record = simulate_horizontal(chart, x0, u0, t, steps, stream, recenter=recenter)
    h = h_spec(record) if callable(h_spec) else h_spec
    if h is None:
        raise ConfigError("perturbed flow needs an admissible h")
    pf = PathFunctionals(chart, batch_shape=(), with_gamma2=True, keep_nodes=True)
    hv, hd = h.values, h.derivatives
    pf.begin(record.xs[0], record.frames[0], hv[0], hd[0])
    for k in range(steps):
        ds = record.times[k + 1] - record.times[k]
        pf.step(record.xs[k], record.frames[k], record.xs[k + 1],
                record.frames[k + 1], record.dB[k], ds, hv[k], hd[k],
                hv[k + 1], hd[k + 1])
    return BaselineVariation(record=record, h=h, gammas=np.stack(pf.gamma_nodes),
                             gamma2s=np.stack(pf.gamma2_nodes),
                             u0=record.frames[0])


def _perturbed_increments(base: BaselineVariation, eps: float, ds: float) -> np.ndarray:
    """dB~ = (G o) applied to the translated increments, midpoint rule."""
    h, rec = base.h, base.record
    k1 = slice(None, -1)
    k2 = slice(1, None)
    hp = h.derivatives
    phi = np.einsum("kij,kj->ki", base.gammas, hp)  # Phi = Gamma h'
    trans = rec.dB + eps * 0.5 * (hp[k1] + hp[k2]) * ds \
        + 0.5 * eps**2 * 0.5 * (phi[k1] + phi[k2]) * ds
    g = expm_so(-eps * base.gammas - 0.5 * eps**2 * base.gamma2s)
    g_mid = 0.5 * (g[k1] + g[k2])
    return np.einsum("kab,kb->ka", g_mid, trans)


def simulate_perturbed(chart: ManifoldChart, cfg: VariationConfig, h_path=None,
                       t: float = 1.0, steps: int = 128, rng_stream=None, *,
                       recenter=False, baseline: BaselineVariation | None = None
                       ) -> PathRecord:
    """Integrate the second-order perturbed flow at cfg.epsilon.

    Shares the noise stream with the unperturbed reference path; at eps = 0 the
    returned record is bitwise identical to ``simulate_horizontal``.
    """
    stream = _resolve_stream(rng_stream if rng_stream is not None else cfg.shared_noise)
    h_spec = h_path if h_path is not None else cfg.h_spec
    u0 = default_frame(chart, np.asarray(cfg.x, dtype=float))
    if baseline is None:
        baseline = _baseline_for_variation(chart, cfg.x, u0, h_spec, t, steps,
                                           stream, recenter)
    eps = cfg.epsilon
    ds = t / steps
    x_eps, u_eps = parallel_geodesic(chart, cfg.x, cfg.v, baseline.u0, eps)
    db_tilde = _perturbed_increments(baseline, eps, ds)
    return simulate_horizontal(chart, x_eps, u_eps, t, steps, stream,
                               dB=db_tilde, recenter=recenter)


@dataclass
class ProbeCheck:
    """Finite-difference variation data at one check time."""

    time: float
    first_fd: np.ndarray
    second_fd: np.ndarray
    ref_first: np.ndarray  # U_s h(s)
    ref_second: np.ndarray  # U_s Gamma_s h(s)

    @property
    def first_err(self) -> float:
        return float(np.linalg.norm(self.first_fd - self.ref_first))

    @property
    def second_err(self) -> float:
        return float(np.linalg.norm(self.second_fd - self.ref_second))


def variation_probe(chart: ManifoldChart, x, v, h_path, t, steps, eps_grid,
                    rng_stream, *, check_fracs=(0.5, 1.0)) -> list[ProbeCheck]:
    """Richardson-extrapolated epsilon-derivatives of the perturbed flow.

    Contracts: first derivative of X_s^eps at eps = 0 is U_s h(s); the
    covariant second derivative is U_s Gamma_s h(s).  Common random numbers
    across the whole eps grid; the grid must be symmetric with at least three
    points so centered differences exist at two scales.
    """
    eps_grid = np.asarray(sorted(float(e) for e in eps_grid))
    if len(eps_grid) < 3 or not np.allclose(eps_grid, -eps_grid[::-1]):
        raise ConfigError("eps grid must be symmetric around 0 with >= 3 points")
    pos = eps_grid[eps_grid > 1e-15]
    stream = _resolve_stream(rng_stream)
    cfg0 = VariationConfig(epsilon=0.0, x=np.asarray(x, float),
                           v=np.asarray(v, float), h_spec=h_path,
                           shared_noise=stream)
    u0 = default_frame(chart, cfg0.x)
    base = _baseline_for_variation(chart, cfg0.x, u0, h_path, t, steps, stream,
                                   recenter=False)
    runs = {0.0: base.record}
    for e in pos:
        for se in (e, -e):
            cfg = VariationConfig(epsilon=se, x=cfg0.x, v=cfg0.v,
                                  shared_noise=stream)
            runs[se] = simulate_perturbed(chart, cfg, h_path, t, steps, stream,
                                          baseline=base)

    def centered(order, e, k):
        xs = {se: runs[se].xs[k] for se in (e, -e, 0.0)}
        if order == 1:
            return (xs[e] - xs[-e]) / (2.0 * e)
        return (xs[e] - 2.0 * xs[0.0] + xs[-e]) / e**2

    def richardson(vals_by_eps):
        es = sorted(vals_by_eps)
        if len(es) == 1:
            return vals_by_eps[es[0]]
        e1, e2 = es[0], es[1]
        r = (e2 / e1) ** 2
        return (r * vals_by_eps[e1] - vals_by_eps[e2]) / (r - 1.0)

    checks = []
    k_grid = len(base.record.times) - 1
    for frac in check_fracs:
        k = min(k_grid, int(round(frac * k_grid)))
        s = base.record.times[k]
        d1 = richardson({e: centered(1, e, k) for e in pos})
        d2raw = richardson({e: centered(2, e, k) for e in pos})
        # Covariant correction: (D/d eps) d xi/d eps = xi'' + Gamma(xi', xi').
        d2 = d2raw + chart.christoffel_quad(base.record.xs[k], d1, d1)
        u_k = base.record.frames[k]
        h_k = base.h.values[k]
        checks.append(ProbeCheck(
            time=float(s),
            first_fd=d1,
            second_fd=d2,
            ref_first=mat_vec(u_k, h_k),
            ref_second=mat_vec(u_k, mat_vec(base.gammas[k], h_k)),
        ))
    return checks
