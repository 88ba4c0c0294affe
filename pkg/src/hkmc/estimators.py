"""Monte Carlo estimators for heat-semigroup derivatives and log-kernels.

The probabilistic representations implemented here, all driven by the
localized process h(s) = ((t-2s)/t)^+ l_m(s, X) U0^{-1} v:

    <grad P_t f(x), v>      = -E[ f(X_t) int_0^t <Theta, dB> ]
    <hess P_t f(x), v o v>  =  E[ f(X_t) I(t/2, X, v) ]
    t <grad_x log p(t,x,y), v>
        = E[ (-t int <Theta, dB>) p(t/2, X_{t/2}, y) / p(t,x,y) ]
    t <hess_x log p(t,x,y), v o v>
        = t E[ I * ratio ] - (E[(-t int <Theta, dB>) * ratio])^2 / t

with I = (int <Theta,dB>)^2 - int <Lambda,dB> - int |Theta|^2 ds.  The h
support keeps every integral on [0, t/2].

Paths are simulated in chunks; each path owns the counter-based stream
(seed, path index), per-path terms are gathered centrally and reduced with
exact compensated summation (math.fsum), so results are bit-identical for any
chunk size or worker count.  Kernel ratios are formed in log space; paths
whose log-ratio underflows contribute exactly zero.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .cutoff import CutoffTracker, ramp_weights
from .errors import ConfigError, StatisticsError
from .frame_sde import HorizontalIntegrator
from .functionals import PathFunctionals, girsanov_density
from .geometry import ManifoldChart, default_frame
from .linops import frame_inverse, mat_vec
from .oracles import KernelOracle, get_oracle
from .rng import batch_normal_increments

__all__ = [
    "EstimateSummary",
    "estimate_gradient",
    "estimate_hessian",
    "estimate_log_gradient",
    "estimate_log_hessian",
    "girsanov_mean",
    "auto_domain_index",
]


@dataclass
class EstimateSummary:
    """A Monte Carlo estimate with its provenance fingerprint."""

    kind: str
    value: float
    stderr: float
    n_paths: int
    t: float
    steps: int
    m: int
    seed: int
    manifold: str
    extras: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        out = {
            "kind": self.kind,
            "value": self.value,
            "stderr": self.stderr,
            "n_paths": self.n_paths,
            "t": self.t,
            "steps": self.steps,
            "m": self.m,
            "seed": self.seed,
            "manifold": self.manifold,
        }
        out.update(self.extras)
        return out


def auto_domain_index(chart: ManifoldChart, *points) -> int:
    """Smallest m keeping every reference point in D_{m-1} with 2 shells spare."""
    worst = max(float(chart.exhaustion(np.asarray(p, dtype=float))) for p in points)
    return max(2, int(np.ceil(worst)) + 3)


def _mean_stderr(values) -> tuple[float, float]:
    n = len(values)
    if n < 2:
        raise StatisticsError("need at least 2 paths for a standard error")
    mean = math.fsum(values) / n
    var = math.fsum((float(v) - mean) ** 2 for v in values) / (n - 1)
    return mean, math.sqrt(var / n)


@dataclass
class _RunSpec:
    """Everything one chunk worker needs to simulate its share of paths."""

    chart: ManifoldChart
    x0: np.ndarray
    u0: np.ndarray
    w: np.ndarray  # U0^{-1} v
    t: float
    steps: int
    gen_steps: int
    m: int
    seed: int
    antithetic: bool
    observable: object = None
    kernel_target: np.ndarray | None = None
    oracle: KernelOracle | None = None
    need_girsanov: bool = False

    def validate(self):
        if self.steps < 2 or self.steps % 2:
            raise ConfigError("steps must be even and >= 2 (t/2 must be a node)")
        if self.gen_steps % self.steps:
            raise ConfigError("gen_steps must be a multiple of steps")
        if float(self.chart.exhaustion(self.x0)) >= self.m - 1:
            raise ConfigError(
                f"start point must lie in D_(m-1); exhaustion(x) = "
                f"{float(self.chart.exhaustion(self.x0)):.3f}, m = {self.m}"
            )


def _chunk_increments(spec: _RunSpec, start: int, count: int) -> np.ndarray:
    k, kg = spec.steps, spec.gen_steps
    n = spec.chart.dim
    ds_gen = spec.t / kg
    if spec.antithetic:
        half = count // 2
        base = batch_normal_increments(spec.seed, start // 2, half, kg, n)
        raw = np.empty((count, kg, n))
        raw[0::2] = base
        raw[1::2] = -base
    else:
        raw = batch_normal_increments(spec.seed, start, count, kg, n)
    raw *= math.sqrt(ds_gen)
    if kg != k:
        raw = raw.reshape(count, k, kg // k, n).sum(axis=2)
    return raw


def _run_chunk(spec: _RunSpec, start: int, count: int) -> dict:
    chart = spec.chart
    n = chart.dim
    k_steps = spec.steps
    ds = spec.t / k_steps
    db = _chunk_increments(spec, start, count)

    xb = np.broadcast_to(spec.x0, (count, n)).copy()
    ub = np.broadcast_to(spec.u0, (count, n, n)).copy()
    tracked = {}
    if spec.kernel_target is not None:
        tracked["target"] = np.broadcast_to(spec.kernel_target, (count, n)).copy()
    eng = HorizontalIntegrator(chart, xb, ub, tracked=tracked)
    tracker = CutoffTracker(spec.m, (count,), ds, eng.exhaustion())
    pf = PathFunctionals(chart, (count,))

    w = np.broadcast_to(spec.w, (count, n)).copy()
    ramps = ramp_weights(k_steps, np.arange(k_steps + 1))
    two_over_t = 2.0 / spec.t
    half_k = k_steps // 2

    def h_pair(k_idx):
        lm = tracker.lm
        ramp = ramps[k_idx]
        h = (ramp * lm)[:, None] * w
        if k_idx < half_k:
            hp = (-two_over_t * lm + ramp * tracker.lm_prime)[:, None] * w
        else:
            hp = np.zeros_like(h)
        return h, hp

    h_old, hp_old = h_pair(0)
    pf.begin(eng.x, eng.u, h_old, hp_old)
    d_mid = None
    for k in range(k_steps):
        x_old, u_old = eng.x.copy(), eng.u.copy()
        eng.step(db[:, k, :])
        tracker.update(eng.exhaustion())
        h_new, hp_new = h_pair(k + 1)
        pf.step(x_old, u_old, eng.x, eng.u, db[:, k, :], ds,
                h_old, hp_old, h_new, hp_new)
        h_old, hp_old = h_new, hp_new
        if spec.kernel_target is not None and (k + 1) == half_k:
            d_mid = chart.distance(eng.x, eng.tracked["target"])

    out = {"int_theta_dB": pf.int_theta_dB}
    out["hess_weight"] = (
        pf.int_theta_dB**2 - pf.int_lambda_dB - pf.int_theta_sq
    )
    if spec.observable is not None:
        out["f"] = np.asarray(spec.observable(eng.points_base_chart()), dtype=float)
    if spec.kernel_target is not None:
        log_num = spec.oracle.log_p_radial(0.5 * spec.t, d_mid)
        with np.errstate(under="ignore"):
            out["log_ratio_num"] = log_num
    if spec.need_girsanov:
        out["acc"] = pf.result()
    return out


def _run_paths(spec: _RunSpec, n_paths: int, chunk_size: int, workers: int) -> dict:
    spec.validate()
    if n_paths < 2:
        raise StatisticsError("n_paths must be >= 2")
    if spec.antithetic and (n_paths % 2 or chunk_size % 2):
        raise ConfigError("antithetic pairing needs even n_paths and chunk size")
    chunks = [
        (start, min(chunk_size, n_paths - start))
        for start in range(0, n_paths, chunk_size)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_chunk, [spec] * len(chunks),
                                    [c[0] for c in chunks], [c[1] for c in chunks]))
    else:
        results = [_run_chunk(spec, start, count) for start, count in chunks]
    merged = {}
    for key in results[0]:
        if key == "acc":
            continue
        merged[key] = np.concatenate([r[key] for r in results])
    if spec.need_girsanov:
        merged["acc"] = [r["acc"] for r in results]
    return merged


def _make_spec(chart, x, v, t, steps, m, seed, *, observable=None, y=None,
               gen_steps=None, antithetic=False, need_girsanov=False,
               frame=None) -> _RunSpec:
    x = np.asarray(x, dtype=float)
    u0 = default_frame(chart, x) if frame is None else np.asarray(frame, dtype=float)
    if v is not None:
        v = np.asarray(v, dtype=float)
        w = mat_vec(frame_inverse(chart.metric(x), u0), v)
    else:
        w = np.zeros(chart.dim)
    oracle = None
    target = None
    if y is not None:
        target = np.asarray(y, dtype=float)
        oracle = get_oracle(chart)
    if m is None:
        pts = (x,) if y is None else (x, target)
        m = auto_domain_index(chart, *pts)
    return _RunSpec(
        chart=chart, x0=x, u0=u0, w=w, t=float(t), steps=int(steps),
        gen_steps=int(gen_steps if gen_steps is not None else steps), m=int(m),
        seed=int(seed), antithetic=antithetic, observable=observable,
        kernel_target=target, oracle=oracle, need_girsanov=need_girsanov,
    )


def estimate_gradient(chart: ManifoldChart, x, v, f, t, n_paths, steps, m=None,
                      seed=0, *, chunk_size=16384, workers=1, antithetic=False,
                      gen_steps=None, frame=None) -> EstimateSummary:
    """<grad P_t f(x), v> as the mean of -f(X_t) int <Theta, dB>."""
    spec = _make_spec(chart, x, v, t, steps, m, seed, observable=f,
                      gen_steps=gen_steps, antithetic=antithetic, frame=frame)
    data = _run_paths(spec, n_paths, chunk_size, workers)
    terms = -data["f"] * data["int_theta_dB"]
    mean, se = _mean_stderr(terms)
    return EstimateSummary("grad", mean, se, n_paths, spec.t, spec.steps, spec.m,
                           spec.seed, chart.kind)


def estimate_hessian(chart: ManifoldChart, x, v, f, t, n_paths, steps, m=None,
                     seed=0, *, chunk_size=16384, workers=1, antithetic=False,
                     gen_steps=None, frame=None) -> EstimateSummary:
    """<hess P_t f(x), v o v> as the mean of f(X_t) I(t/2, X, v)."""
    spec = _make_spec(chart, x, v, t, steps, m, seed, observable=f,
                      gen_steps=gen_steps, antithetic=antithetic, frame=frame)
    data = _run_paths(spec, n_paths, chunk_size, workers)
    terms = data["f"] * data["hess_weight"]
    mean, se = _mean_stderr(terms)
    return EstimateSummary("hess", mean, se, n_paths, spec.t, spec.steps, spec.m,
                           spec.seed, chart.kind)


def _ratio_terms(spec: _RunSpec, data: dict) -> np.ndarray:
    log_denom = float(spec.oracle.log_p_radial(spec.t, spec.chart.distance(
        spec.x0, spec.kernel_target)))
    log_ratio = data["log_ratio_num"] - log_denom
    with np.errstate(under="ignore"):
        ratio = np.where(log_ratio < -700.0, 0.0, np.exp(np.maximum(log_ratio, -745.0)))
    return ratio


def estimate_log_gradient(chart: ManifoldChart, x, y, v, t, n_paths, steps,
                          m=None, seed=0, *, chunk_size=16384, workers=1,
                          antithetic=False, gen_steps=None, frame=None) -> EstimateSummary:
    """t <grad_x log p(t,x,y), v> by conditioning on the midpoint kernel ratio."""
    spec = _make_spec(chart, x, v, t, steps, m, seed, y=y, gen_steps=gen_steps,
                      antithetic=antithetic, frame=frame)
    data = _run_paths(spec, n_paths, chunk_size, workers)
    ratio = _ratio_terms(spec, data)
    terms = (-spec.t * data["int_theta_dB"]) * ratio
    mean, se = _mean_stderr(terms)
    return EstimateSummary("loggrad", mean, se, n_paths, spec.t, spec.steps,
                           spec.m, spec.seed, chart.kind,
                           extras={"mean_ratio": float(np.mean(ratio))})


def estimate_log_hessian(chart: ManifoldChart, x, y, v, t, n_paths, steps,
                         m=None, seed=0, *, chunk_size=16384, workers=1,
                         antithetic=False, gen_steps=None, frame=None) -> EstimateSummary:
    """t <hess_x log p(t,x,y), v o v> assembled from the same batch of paths.

    value = t * mean(I * ratio) - mean(-t A * ratio)^2 / t; the standard error
    propagates the 2x2 sample covariance through the delta method.
    """
    spec = _make_spec(chart, x, v, t, steps, m, seed, y=y, gen_steps=gen_steps,
                      antithetic=antithetic, frame=frame)
    data = _run_paths(spec, n_paths, chunk_size, workers)
    ratio = _ratio_terms(spec, data)
    a_terms = data["hess_weight"] * ratio
    b_terms = (-spec.t * data["int_theta_dB"]) * ratio
    n = len(a_terms)
    ma, sa = _mean_stderr(a_terms)
    mb, sb = _mean_stderr(b_terms)
    cov = math.fsum(
        (float(a) - ma) * (float(b) - mb) for a, b in zip(a_terms, b_terms)
    ) / (n - 1)
    value = spec.t * ma - mb**2 / spec.t
    g_a, g_b = spec.t, -2.0 * mb / spec.t
    var = g_a**2 * sa**2 + g_b**2 * sb**2 + 2.0 * g_a * g_b * cov / n
    se = math.sqrt(max(var, 0.0))
    return EstimateSummary("loghess", value, se, n_paths, spec.t, spec.steps,
                           spec.m, spec.seed, chart.kind,
                           extras={"grad_part": mb, "hess_part": ma})


def girsanov_mean(chart: ManifoldChart, x, v, eps, t, n_paths, steps, m=None,
                  seed=0, *, chunk_size=16384, workers=1) -> EstimateSummary:
    """Sample mean of the change-of-measure density M^eps (target: 1)."""
    spec = _make_spec(chart, x, v, t, steps, m, seed, need_girsanov=True)
    data = _run_paths(spec, n_paths, chunk_size, workers)
    vals = np.concatenate([girsanov_density(acc, eps) for acc in data["acc"]])
    mean, se = _mean_stderr(vals)
    return EstimateSummary("girsanov", mean, se, n_paths, spec.t, spec.steps,
                           spec.m, spec.seed, chart.kind, extras={"eps": eps})
