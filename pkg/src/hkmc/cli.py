"""Command-line interface.

Subcommands: simulate, estimate, oracle, varadhan, cutoff-diag, probe,
exit-surrogate, study.  Every subcommand accepts --config FILE (JSON
ExperimentConfig); explicit flags override config values.  Results go to
stdout as JSON or CSV; --out writes the full artifact set.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .errors import ConfigError, HkmcError
from .geometry import make_chart
from .harness import ExperimentConfig, run
from .oracles import get_oracle

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2


def _floats(text: str) -> list[float]:
    return [float(s) for s in text.split(",") if s != ""]


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON experiment config file")
    p.add_argument("--manifold", help="euclidean|sphere2|hyperbolic2|hyperbolic3|conformal_plane")
    p.add_argument("--dim", type=int, help="dimension for euclidean")
    p.add_argument("--x", type=_floats)
    p.add_argument("--y", type=_floats)
    p.add_argument("--v", type=_floats)
    p.add_argument("--t", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--paths", type=int)
    p.add_argument("--m", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", help="artifact directory")


def _config_from_args(args, kind: str) -> ExperimentConfig:
    data = {}
    if args.config:
        with open(args.config) as fh:
            data = json.load(fh)
    data["kind"] = kind
    overrides = {
        "x": args.x, "y": args.y, "v": args.v, "t": args.t, "steps": args.steps,
        "paths": args.paths, "m": args.m, "seed": args.seed,
        "workers": args.workers, "out": args.out,
    }
    if args.manifold:
        params = {}
        if args.manifold == "euclidean":
            params["dim"] = args.dim or 2
        data["manifold"] = {"kind": args.manifold, "params": params}
    for key, val in overrides.items():
        if val is not None:
            data[key] = val
    for extra in ("f", "eps", "eps_grid", "t_grid", "a", "axis", "grid"):
        val = getattr(args, extra.replace("-", "_"), None)
        if val is not None:
            data[extra] = val
    return ExperimentConfig.from_dict(data)


def _emit_result(result, as_json=True):
    if as_json:
        print(json.dumps(result.summary, default=float))
    else:
        print(",".join(result.header))
        for row in result.rows:
            print(",".join(format(v, ".17g") if isinstance(v, float) else str(v)
                           for v in row))


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="hkmc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="one horizontal path, CSV of nodes")
    _add_common(p)

    p = sub.add_parser("estimate", help="Monte Carlo derivative estimators")
    p.add_argument("what", choices=["grad", "hess", "loggrad", "loghess", "girsanov"])
    _add_common(p)
    p.add_argument("--f", help="observable spec, e.g. coord_sq:0")
    p.add_argument("--eps", type=float)
    p.add_argument("--csv", help="append the summary row to this CSV file")

    p = sub.add_parser("oracle", help="closed-form kernel evaluation")
    p.add_argument("action", choices=["eval"])
    _add_common(p)

    p = sub.add_parser("varadhan", help="small-time deviation table")
    _add_common(p)
    p.add_argument("--t-grid", dest="t_grid", type=_floats)

    p = sub.add_parser("cutoff-diag", help="cut-off trace dump + FTC residual")
    _add_common(p)

    p = sub.add_parser("probe", help="variation finite-difference probe")
    _add_common(p)
    p.add_argument("--eps-grid", dest="eps_grid", type=_floats)

    p = sub.add_parser("exit-surrogate", help="1-D Dirichlet reflection series")
    _add_common(p)
    p.add_argument("--a", type=float)
    p.add_argument("--t-grid", dest="t_grid", type=_floats)

    p = sub.add_parser("study", help="convergence study along one axis")
    _add_common(p)
    p.add_argument("--kind", dest="study_kind", help="estimator kind to sweep")
    p.add_argument("--f", help="observable spec")
    p.add_argument("--axis", choices=["t", "steps", "paths"])
    p.add_argument("--grid", type=_floats)

    args = parser.parse_args(argv)
    try:
        if args.command == "oracle":
            chart = make_chart(args.manifold or "euclidean",
                               {"dim": args.dim} if args.dim else None)
            oracle = get_oracle(chart)
            x = np.asarray(args.x, dtype=float)
            y = np.asarray(args.y, dtype=float)
            out = {
                "log_p": float(oracle.log_p(args.t, x, y)),
                "grad_log_p": oracle.grad_log_p(args.t, x, y).tolist(),
                "hess_log_p": oracle.hess_log_p(args.t, x, y).tolist(),
            }
            print(json.dumps(out))
            return EXIT_OK

        kind_map = {
            "simulate": "simulate",
            "varadhan": "varadhan",
            "cutoff-diag": "cutoff-diag",
            "probe": "variation-probe",
            "exit-surrogate": "exit-surrogate",
        }
        if args.command == "estimate":
            cfg = _config_from_args(args, args.what)
            result = run(cfg)
            print(json.dumps(result.summary, default=float))
            if args.csv:
                import csv as _csv
                import os
                new = not os.path.exists(args.csv)
                with open(args.csv, "a", newline="") as fh:
                    writer = _csv.DictWriter(fh, fieldnames=list(result.summary))
                    if new:
                        writer.writeheader()
                    writer.writerow(result.summary)
            return result.exit_code
        if args.command == "study":
            data_kind = args.study_kind or "grad"
            cfg = _config_from_args(args, data_kind)
            cfg.axis = args.axis
            cfg.grid = [int(g) if args.axis in ("steps", "paths") else g
                        for g in (args.grid or [])]
            from .harness import convergence_study
            result = convergence_study(cfg, cfg.axis, cfg.grid)
            _emit_result(result, as_json=False)
            return result.exit_code
        cfg = _config_from_args(args, kind_map[args.command])
        result = run(cfg)
        _emit_result(result, as_json=(args.command == "probe"))
        return result.exit_code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except HkmcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
