"""``swlab <command>``: command-line front end of the experiment harness."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .exceptions import SWLabError
from .experiments import KINDS, ExperimentSpec, SpecError, rows_to_csv, rows_to_json, run_experiment, write_outputs


def _list(cast):
    def parse(text: str):
        try:
            return [cast(x) for x in text.split(",") if x.strip()]
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None

    return parse


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="swlab", description="Sliced-Wasserstein energy experiments.")
    parser.add_argument("command", choices=KINDS)
    grid = parser.add_argument_group("grid (comma-separated lists allowed)")
    grid.add_argument("--n", type=_list(int))
    grid.add_argument("--d", type=_list(int))
    grid.add_argument("--p", type=_list(int), help="number of fixed directions; 0 means fresh directions (SGD)")
    grid.add_argument("--alpha", type=_list(float))
    grid.add_argument("--noise", type=_list(float))
    grid.add_argument("--batch", type=_list(int))
    run = parser.add_argument_group("run settings")
    run.add_argument("--trials", type=int)
    run.add_argument("--max-iters", type=int)
    run.add_argument("--tol", type=float)
    run.add_argument("--threshold", type=float, help="convergence threshold on (1/d) W2^2")
    run.add_argument("--record-every", type=int)
    run.add_argument("--seed", type=int, help="base seed; trial i uses seed + i")
    run.add_argument("--method", choices=["bcd", "sgd"])
    run.add_argument("--dataset", choices=["gaussian", "spiral", "sym2d"])
    run.add_argument("--schedule", choices=["constant", "decreasing"])
    run.add_argument("--p-psi", type=int)
    run.add_argument("--resamples", type=int)
    run.add_argument("--oracle-samples", type=int)
    run.add_argument("--point", type=_list(float), help="u,v of the symmetric 2D support")
    parser.add_argument("--spec", help="JSON or TOML experiment spec; flags override its values")
    parser.add_argument("--out", help="output path (stdout when omitted)")
    parser.add_argument("--format", choices=["csv", "json"])
    parser.add_argument("--plot", action="store_true", help="also write an SVG next to --out")
    return parser


def spec_from_args(args) -> ExperimentSpec:
    if args.spec:
        try:
            base = ExperimentSpec.load(args.spec)
        except (OSError, ValueError) as exc:
            raise SpecError(f"cannot read spec {args.spec}: {exc}") from exc
        if base.kind != args.command:
            raise SpecError(f"spec kind {base.kind!r} does not match command {args.command!r}")
        grid, trials, seed, settings, fmt = base.grid, base.trials, base.base_seed, base.settings, base.format
        out = base.out
    else:
        grid, trials, seed, settings, fmt, out = {}, 10, 0, {}, "csv", None
    grid = dict(grid)
    for key in ("n", "d", "p", "alpha", "noise", "batch"):
        val = getattr(args, key)
        if val is not None:
            grid[key] = val
    settings = dict(settings)
    for key in ("max_iters", "tol", "threshold", "record_every", "method", "dataset", "schedule",
                "p_psi", "resamples", "oracle_samples", "point"):
        val = getattr(args, key)
        if val is not None:
            settings[key] = val
    if args.trials is not None:
        trials = args.trials
    if args.seed is not None:
        seed = args.seed
    if args.format is not None:
        fmt = args.format
    if args.out is not None:
        out = args.out
    return ExperimentSpec(kind=args.command, grid=grid, trials=trials, base_seed=seed,
                          settings=settings, out=out, format=fmt)


def write_plot(spec: ExperimentSpec, rows, path: Path) -> None:
    """Line or path plot derived from the rows; needs matplotlib."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4))
    trial_rows = [r for r in rows if r.get("row_type") == "trial"]
    if spec.kind == "trajectory":
        pts = {}
        for r in trial_rows:
            if r.get("point", -1) >= 0:
                pts.setdefault((r["trial"], r["point"]), []).append((r["x0"], r.get("x1", 0.0)))
        for path_pts in pts.values():
            xs, ys = zip(*path_pts)
            ax.plot(xs, ys, lw=0.8)
            ax.plot(xs[0], ys[0], "o", ms=3, color="k")
        ax.set_aspect("equal")
    else:
        aggs = [r for r in rows if r.get("row_type") == "aggregate"]
        if spec.kind == "sgd-error":
            aggs = [r for r in aggs if r.get("unit") == "curve"]
            xkey = "t"
        elif spec.kind == "scaling":
            xkey = "d"
        else:
            xkey = "p"
        metric = aggs[0]["metric"] if aggs else None
        aggs = [r for r in aggs if r["metric"] == metric and r.get(xkey) is not None]
        if aggs:
            xs = [r[xkey] for r in aggs]
            ax.plot(xs, [r["median"] for r in aggs], "-o", ms=2)
            ax.fill_between(xs, [r["q30"] for r in aggs], [r["q70"] for r in aggs], alpha=0.3)
            ax.set_xscale("log")
            ax.set_yscale("log")
            ax.set_xlabel(xkey)
            ax.set_ylabel(metric)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        spec = spec_from_args(args)
    except (SpecError, ValueError) as exc:
        print(f"swlab: spec error: {exc}", file=sys.stderr)
        return 2
    try:
        rows = run_experiment(spec)
    except SpecError as exc:
        print(f"swlab: spec error: {exc}", file=sys.stderr)
        return 2
    try:
        if spec.out:
            out = Path(spec.out)
            write_outputs(spec, rows, out)
            if args.plot:
                try:
                    write_plot(spec, rows, out.with_suffix(".svg"))
                except ImportError:
                    print("swlab: matplotlib not installed, skipping --plot", file=sys.stderr)
        else:
            sys.stdout.write(rows_to_csv(rows) if spec.format == "csv" else rows_to_json(rows) + "\n")
    except OSError as exc:
        print(f"swlab: I/O error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
