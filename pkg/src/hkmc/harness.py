"""Configuration-driven experiment runner.

An experiment is a JSON-serializable key-value tree; re-running the same
config reproduces every data file bitwise (timestamps live only in the
metadata sidecar).  Artifacts per run: a results CSV (or JSONL), plus
``meta.json`` carrying the config echo, a content hash of the canonical
config, and wall time.  The runner exits nonzero when a configured check
misses its tolerance.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .cutoff import build_cutoff, ftc_residuals, moment_harness
from .errors import ConfigError, HkmcError
from .estimators import (
    EstimateSummary,
    estimate_gradient,
    estimate_hessian,
    estimate_log_gradient,
    estimate_log_hessian,
    girsanov_mean,
)
from .frame_sde import simulate_horizontal, variation_probe
from .geometry import ManifoldChart, default_frame, make_chart
from .oracles import dirichlet_surrogate_1d, get_oracle, varadhan_report
from .rng import StreamSpec

_KINDS = (
    "grad", "hess", "loggrad", "loghess", "girsanov", "varadhan",
    "cutoff-diag", "variation-probe", "exit-surrogate", "simulate", "study",
)


def observable(spec: str):
    """Named scalar fields usable from config files.

    coord:i, coord_sq:i, linear:a1,a2,..., const:c, sin0_plus_sq1 (the flat
    acceptance observable) and sphere_height (the ambient z-coordinate on the
    stereographic sphere chart).
    """
    name, _, arg = spec.partition(":")
    if name == "coord":
        i = int(arg)
        return lambda z: np.asarray(z)[..., i]
    if name == "coord_sq":
        i = int(arg)
        return lambda z: np.asarray(z)[..., i] ** 2
    if name == "linear":
        a = np.array([float(s) for s in arg.split(",")])
        return lambda z: np.asarray(z) @ a
    if name == "const":
        c = float(arg)
        return lambda z: np.full(np.shape(z)[:-1], c)
    if name == "sin0_plus_sq1":
        return lambda z: np.sin(np.asarray(z)[..., 0]) + np.asarray(z)[..., 1] ** 2
    if name == "sphere_height":
        def _height(z):
            s = np.einsum("...i,...i->...", z, z)
            return (1.0 - s) / (1.0 + s)
        return _height
    raise ConfigError(f"unknown observable {spec!r}")


@dataclass
class ExperimentConfig:
    """Declarative description of one run; everything has a JSON form."""

    kind: str
    manifold: dict = field(default_factory=lambda: {"kind": "euclidean", "params": {"dim": 2}})
    x: list = field(default_factory=lambda: [0.0, 0.0])
    y: list | None = None
    v: list | None = None
    f: str | None = None
    t: float = 0.5
    steps: int = 128
    paths: int = 10000
    m: int | None = None
    seed: int = 0
    eps: float = 0.05
    eps_grid: list | None = None
    t_grid: list | None = None
    a: float = 2.0
    k_list: list = field(default_factory=lambda: [2])
    x_grid: list | None = None
    axis: str | None = None
    grid: list | None = None
    workers: int = 1
    chunk_size: int = 16384
    out: str | None = None
    check: dict | None = None

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        bad = sorted(set(data) - known)
        if bad:
            raise ConfigError(f"unknown config field(s): {', '.join(bad)}")
        cfg = cls(**data)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(data)

    def validate(self):
        if self.kind not in _KINDS:
            raise ConfigError(f"kind: expected one of {_KINDS}, got {self.kind!r}")
        if not isinstance(self.manifold, dict) or "kind" not in self.manifold:
            raise ConfigError("manifold: need an object with a 'kind' key")
        make_chart(self.manifold["kind"], self.manifold.get("params"))
        if self.t <= 0:
            raise ConfigError("t: must be positive")
        if self.steps < 1:
            raise ConfigError("steps: must be >= 1")
        if self.paths < 2:
            raise ConfigError("paths: must be >= 2")

    def chart(self) -> ManifoldChart:
        return make_chart(self.manifold["kind"], self.manifold.get("params"))

    def canonical_json(self) -> str:
        data = {k: getattr(self, k) for k in self.__dataclass_fields__}
        return json.dumps(data, sort_keys=True, separators=(",", ":"))

    def content_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


@dataclass
class RunResult:
    status: str  # ok | check_failed
    rows: list
    header: list
    summary: dict
    artifacts: list

    @property
    def exit_code(self) -> int:
        return 0 if self.status == "ok" else 1


def _fmt(v) -> str:
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def write_csv(path: Path, header, rows):
    lines = [",".join(header)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _apply_check(summary: EstimateSummary, check: dict | None) -> str:
    if not check:
        return "ok"
    target = check.get("target")
    tol_se = float(check.get("tol_stderr", 3.0))
    ok = True
    if target is not None:
        ok &= abs(summary.value - float(target)) <= tol_se * summary.stderr
    if "stderr_max" in check:
        ok &= summary.stderr <= float(check["stderr_max"])
    return "ok" if ok else "check_failed"


def run(config: ExperimentConfig) -> RunResult:
    """Execute one experiment and (optionally) write its artifacts."""
    config.validate()
    started = time.time()
    chart = config.chart()
    kw = dict(chunk_size=config.chunk_size, workers=config.workers)
    status = "ok"

    if config.kind in ("grad", "hess", "loggrad", "loghess", "girsanov"):
        if config.kind in ("grad", "hess"):
            if config.f is None or config.v is None:
                raise ConfigError(f"{config.kind}: needs f and v")
            fn = estimate_gradient if config.kind == "grad" else estimate_hessian
            summary = fn(chart, config.x, config.v, observable(config.f),
                         config.t, config.paths, config.steps, config.m,
                         config.seed, **kw)
        elif config.kind in ("loggrad", "loghess"):
            if config.y is None or config.v is None:
                raise ConfigError(f"{config.kind}: needs y and v")
            fn = estimate_log_gradient if config.kind == "loggrad" else estimate_log_hessian
            summary = fn(chart, config.x, config.y, config.v, config.t,
                         config.paths, config.steps, config.m, config.seed, **kw)
        else:
            summary = girsanov_mean(chart, config.x, config.v or [1.0] + [0.0] * (chart.dim - 1),
                                    config.eps, config.t, config.paths,
                                    config.steps, config.m, config.seed, **kw)
        status = _apply_check(summary, config.check)
        header = list(summary.as_dict())
        rows = [list(summary.as_dict().values())]
        result = RunResult(status, rows, header, summary.as_dict(), [])

    elif config.kind == "varadhan":
        if config.y is None or config.t_grid is None:
            raise ConfigError("varadhan: needs y and t_grid")
        rows = [r.as_tuple() for r in varadhan_report(chart, config.x, config.y,
                                                      config.t_grid)]
        header = ["t", "vlog", "vgrad", "vhess", "warn"]
        devs = np.array([[r[1], r[2], r[3]] for r in rows])
        decreasing = bool(np.all(np.diff(devs, axis=0) < 0))
        summary = {"columns_strictly_decreasing": decreasing,
                   "final_vlog": rows[-1][1]}
        if config.check and config.check.get("require_decreasing") and not decreasing:
            status = "check_failed"
        result = RunResult(status, rows, header, summary, [])

    elif config.kind == "cutoff-diag":
        m = config.m if config.m is not None else 3
        rec = simulate_horizontal(chart, config.x, None, config.t, config.steps,
                                  StreamSpec(config.seed, 0))
        trace = build_cutoff(chart, rec, m)
        res = ftc_residuals(trace)
        rows = list(trace.dump_rows())
        header = ["s", "f_m", "T_m", "l_m", "l_m_prime"]
        summary = {"m": m, "max_ftc_residual": float(res.max()),
                   "tau_prev": trace.tau_prev(), "tau_m": trace.tau_m()}
        result = RunResult(status, rows, header, summary, [])

    elif config.kind == "variation-probe":
        if config.v is None:
            raise ConfigError("variation-probe: needs v")
        eps_grid = config.eps_grid or [-0.04, -0.02, 0.0, 0.02, 0.04]

        def h_builder(rec):
            from .cutoff import theorem31_h
            trace = build_cutoff(chart, rec, config.m or 4)
            return theorem31_h(rec, trace, config.t, np.asarray(config.v, float),
                               rec.frames[0])

        checks = variation_probe(chart, config.x, config.v, h_builder, config.t,
                                 config.steps, eps_grid,
                                 StreamSpec(config.seed, 0))
        rows = [(c.time, c.first_err, c.second_err) for c in checks]
        header = ["s", "first_fd_err", "second_fd_err"]
        summary = {"max_first_err": max(r[1] for r in rows),
                   "max_second_err": max(r[2] for r in rows)}
        result = RunResult(status, rows, header, summary, [])

    elif config.kind == "exit-surrogate":
        t_grid = config.t_grid or [config.t]
        rows = []
        for t in t_grid:
            d = dirichlet_surrogate_1d(config.a, float(t), config.x[0],
                                       (config.y or config.x)[0])
            rows.append((float(t), d["p"], d["p_D"], d["exit_prob"], d["t_log_exit"]))
        header = ["t", "p", "p_D", "exit_prob", "t_log_exit"]
        result = RunResult(status, rows, header, {"a": config.a}, [])

    elif config.kind == "simulate":
        rec = simulate_horizontal(chart, config.x, None, config.t, config.steps,
                                  StreamSpec(config.seed, 0))
        header = ["s"] + [f"x{i}" for i in range(chart.dim)] + ["exh"]
        rows = [
            (rec.times[k], *rec.xs[k], rec.exh[k]) for k in range(len(rec.times))
        ]
        summary = {"terminal": rec.xs[-1].tolist(), "epochs": int(rec.chart_epochs[-1])}
        result = RunResult(status, rows, header, summary, [])

    elif config.kind == "study":
        if config.axis is None or config.grid is None:
            raise ConfigError("study: needs axis and grid")
        result = convergence_study(config, config.axis, config.grid)

    else:  # pragma: no cover - guarded by validate()
        raise ConfigError(f"unhandled kind {config.kind}")

    if config.out:
        out_dir = Path(config.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        data_path = out_dir / f"{config.kind.replace('-', '_')}.csv"
        write_csv(data_path, result.header, result.rows)
        meta = {
            "config": json.loads(config.canonical_json()),
            "config_hash": config.content_hash(),
            "status": result.status,
            "summary": result.summary,
            "wall_time_s": time.time() - started,
            "version": __version__,
        }
        meta_path = out_dir / "meta.json"
        meta_path.write_text(json.dumps(meta, indent=2, default=float) + "\n")
        result.artifacts.extend([str(data_path), str(meta_path)])
    return result


def convergence_study(config: ExperimentConfig, axis: str, grid) -> RunResult:
    """Estimate vs one axis (t | steps | paths); deviations where a reference
    is available.

    On the steps axis all runs share the Brownian paths of a 2x-finer
    reference resolution (common random numbers), so the deviation column is a
    low-noise bias estimate.
    """
    if axis not in ("t", "steps", "paths"):
        raise ConfigError("study axis must be one of t, steps, paths")
    grid = list(grid)
    if len(grid) < 3 or sorted(grid) != grid:
        raise ConfigError("study grid must be monotone increasing with >= 3 points")
    if config.kind == "study":
        raise ConfigError("study config must set kind to the estimator to sweep")
    rows = []
    header = [axis, "value", "stderr", "deviation"]

    def run_est(**over):
        sub = ExperimentConfig.from_dict({**json.loads(config.canonical_json()),
                                          **over, "out": None, "check": None})
        return run(sub).summary

    if axis == "steps":
        ref_steps = 2 * max(int(g) for g in grid)
        for g in list(grid) + [ref_steps]:
            if ref_steps % int(g):
                raise ConfigError("steps grid entries must divide the 2x-max reference")
        chart = config.chart()
        est_kw = dict(chunk_size=config.chunk_size, workers=config.workers)

        def coupled(steps):
            fn = {"grad": estimate_gradient, "hess": estimate_hessian}[config.kind]
            return fn(chart, config.x, config.v, observable(config.f), config.t,
                      config.paths, steps, config.m, config.seed,
                      gen_steps=ref_steps, **est_kw)

        if config.kind in ("grad", "hess"):
            ref = coupled(ref_steps)
            for g in grid:
                est = coupled(int(g))
                rows.append((int(g), est.value, est.stderr,
                             abs(est.value - ref.value)))
        else:
            raise ConfigError("steps study supports grad and hess kinds")
        summary = {"reference_steps": ref_steps, "reference_value": ref.value}
    elif axis == "paths":
        for g in grid:
            s = run_est(paths=int(g))
            rows.append((int(g), s["value"], s["stderr"], np.nan))
        summary = {"stderr_ratio_first_last": rows[0][2] / rows[-1][2]}
    else:
        for g in grid:
            s = run_est(t=float(g))
            rows.append((float(g), s["value"], s["stderr"], np.nan))
        summary = {}
    return RunResult("ok", rows, header, summary, [])
