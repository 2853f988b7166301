"""Command-line entry point: ``perpscale <command> [options]``.

Exit codes: 0 success, 2 usage, 3 bad data, 4 numeric divergence, 5 budget.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, set_threads
from .dataset import Dataset, draw_nested_samples, load_matrix, materialize_sample, save_matrix
from .exceptions import BudgetError, DataError, PerpscaleError
from .metrics import knn_overlap, silhouette
from .optimizer import Embedding, OptimizerConfig, run_tsne
from .pipeline import Budget, GridSpec, PipelinePlan, budget_plan, explore_grid, sample_based_embed
from .scaling import mc_report
from .svg import monte_carlo_plot, scatter_grid
from .synthetic import gaussian_mixture

log = logging.getLogger("perpscale")

EXIT_USAGE = 2


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _sha256(path):
    if not Path(path).is_file():
        raise DataError(f"no such file: {path}")
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


# -- embedding CSV ---------------------------------------------------------


def write_embedding(emb: Embedding, path, labels=None) -> Path:
    """CSV with header ``id,x,y[,label]`` and 17 significant digits."""
    path = Path(path)
    axes = ["x", "y", "z"] if emb.dim <= 3 else [f"y{j}" for j in range(emb.dim)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id"] + axes[: emb.dim] + (["label"] if labels is not None else []))
        for i in range(emb.n):
            row = [str(int(emb.ids[i]))] + ["%.17g" % v for v in emb.coords[i]]
            if labels is not None:
                row.append(str(int(labels[i])))
            w.writerow(row)
    return path


def read_embedding(path):
    """Read an embedding CSV; returns (Embedding, labels or None)."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2 or rows[0][0].strip().lower() != "id":
        raise DataError(f"{path}: expected an embedding CSV with an 'id' header")
    header = [h.strip().lower() for h in rows[0]]
    has_label = header[-1] == "label"
    try:
        table = np.array([[float(c) for c in r] for r in rows[1:]])
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    hi = -1 if has_label else None
    labels = table[:, -1].astype(np.int64) if has_label else None
    return Embedding(table[:, 1:hi], table[:, 0].astype(np.int64)), labels


# -- manifest --------------------------------------------------------------


class Run:
    """Collects outputs and stage timings and writes the manifest."""

    def __init__(self, args, argv):
        self.args = args
        self.argv = list(argv)
        self.out = Path(args.output_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.stages = {}
        self.outputs = []
        self.inputs = {}

    def input(self, path):
        self.inputs[str(path)] = _sha256(path)

    def output(self, path):
        self.outputs.append(Path(path).name)
        return path

    def path(self, name):
        return self.out / name

    def timed(self, name):
        run = self

        class _T:
            def __enter__(self):
                self.t = time.perf_counter()

            def __exit__(self, *exc):
                run.stages[name] = time.perf_counter() - self.t

        return _T()

    def write_manifest(self, extra=None):
        params = {k: v for k, v in vars(self.args).items() if k not in ("func",)}
        manifest = {
            "tool": "perpscale",
            "version": __version__,
            "command": self.args.command,
            "argv": self.argv,
            "params": params,
            "seed": self.args.seed,
            "cwd": os.getcwd(),
            "inputs": self.inputs,
            "outputs": sorted(self.outputs),
            "stages_seconds": self.stages,
        }
        if extra:
            manifest.update(extra)
        path = self.out / "manifest.json"
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
        return path


def _load(args, run):
    if getattr(args, "synthetic", None):
        return gaussian_mixture(args.synthetic, seed=args.seed, name="synthetic")
    if not args.input:
        raise DataError("an --input file (or --synthetic N) is required")
    run.input(args.input)
    # a recognised suffix wins; --format covers other names
    suffix = Path(args.input).suffix.lower()
    fmt = None if suffix in (".csv", ".bin", ".psc") else args.format
    return load_matrix(args.input, fmt)


def _optimizer(args):
    lr = "auto" if args.learning_rate == "auto" else float(args.learning_rate)
    return OptimizerConfig(
        ee_iters=args.ee_iters, ee_factor=args.ee_factor, main_iters=args.main_iters,
        learning_rate=lr, theta=args.theta, seed=args.seed,
    )


# -- commands --------------------------------------------------------------


def cmd_embed(args, run):
    ds = _load(args, run)
    with run.timed("embed"):
        emb, trace = run_tsne(ds, args.perplexity, _optimizer(args))
    run.output(write_embedding(emb, run.path("embedding.csv"), ds.labels))
    run.output(trace.to_csv(run.path("trace.csv")))
    if args.svg:
        run.output(scatter_grid([{"title": f"perplexity {args.perplexity:g}", "coords": emb.coords,
                                  "labels": ds.labels}], run.path("embedding.svg"), seed=args.seed))
    run.write_manifest({"kl_initial": trace.initial_cost, "kl_final": trace.final_cost})
    print(f"embedded {ds.n} points; KL {trace.initial_cost:.4f} -> {trace.final_cost:.4f}")


def cmd_grid(args, run):
    ds = _load(args, run)
    budget = None
    if args.max_bytes is not None:
        budget = Budget(args.max_bytes, args.bytes_per_entry, args.mode)
    spec = GridSpec(args.rate, args.perplexities, _optimizer(args), args.seed)
    with run.timed("grid"):
        cells = explore_grid(ds, spec, budget)
    panels = []
    for cell in cells:
        if cell.feasible:
            labels = None
            if ds.labels is not None:
                labels = ds.labels[ds.positions(cell.embedding.ids)]
            run.output(write_embedding(cell.embedding, run.path(f"grid_per{cell.perplexity:g}.csv"), labels))
            panels.append({"title": f"rho {args.rate:g}, perplexity {cell.perplexity:g}",
                           "coords": cell.embedding.coords, "labels": labels})
        else:
            panels.append({"title": f"rho {args.rate:g}, perplexity {cell.perplexity:g}", "coords": None})
    run.output(scatter_grid(panels, run.path("grid.svg"), n_cols=1, seed=args.seed))
    run.write_manifest({"cells": [{"perplexity": c.perplexity, "feasible": c.feasible} for c in cells]})
    print(f"{len(cells)} grid cells written to {run.out}")


def cmd_mc(args, run):
    ds = _load(args, run)
    with run.timed("mc"):
        report = mc_report(ds, args.rates, args.repeats, args.perplexity, args.seed)
    run.output(report.to_csv(run.path("mc.csv")))
    run.output(report.to_json(run.path("mc_summary.json")))
    run.output(monte_carlo_plot(report, run.path("mc.svg")))
    run.write_manifest()
    print(f"slope {report.fit_slope:.3f}, R2 {report.fit_r2:.4f}")


def cmd_pipeline(args, run):
    ds = _load(args, run)
    common = dict(per_full=args.per_full, prolong_k=args.prolong_k,
                  sample_optimizer=_optimizer(args), full_optimizer=_optimizer(args), seed=args.seed)
    if args.per_sample is not None:
        plan = PipelinePlan(args.rate, args.per_sample, **common)
    elif args.target_perplexity is not None:
        plan = PipelinePlan.from_target(ds.n, args.rate, args.target_perplexity, **common)
    else:
        raise DataError("give --per-sample or --target-perplexity")
    with run.timed("pipeline"):
        emb, report = sample_based_embed(ds, plan)
    if ds.labels is not None:
        report.scores["silhouette"] = silhouette(emb, ds.labels[ds.positions(emb.ids)])
    run.output(write_embedding(emb, run.path("embedding.csv"), ds.labels))
    run.output(report.to_json(run.path("pipeline.json")))
    run.write_manifest()
    print(json.dumps(report.summary()["stages"], indent=1))


def cmd_budget(args, run):
    plan = budget_plan(args.n, args.perplexity, Budget(args.max_bytes, args.bytes_per_entry, args.mode))
    path = run.path("budget.json")
    path.write_text(json.dumps(plan.to_dict(), indent=2, sort_keys=True) + "\n")
    run.output(path)
    run.write_manifest()
    print(f"feasible={str(plan.feasible).lower()} rho={plan.rate:g} perplexity={plan.scaled_perplexity:g}")
    if not plan.feasible:
        raise BudgetError("no sampling rate fits the memory budget")


def cmd_compare(args, run):
    a, _ = read_embedding(args.a)
    b, _ = read_embedding(args.b)
    run.input(args.a)
    run.input(args.b)
    score = knn_overlap(a, b, args.k)
    result = {"knn_overlap": score.knn_overlap, "k": score.k, "n_shared": score.n_shared}
    path = run.path("compare.json")
    path.write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    run.output(path)
    run.write_manifest()
    print(f"knn_overlap={score.knn_overlap:.6f} k={score.k} shared={score.n_shared}")


def cmd_sample(args, run):
    ds = _load(args, run)
    plan = draw_nested_samples(ds, args.rates, args.seed)
    suffix = "bin" if args.format == "bin" else "csv"
    for rate in plan.rates:
        sub = materialize_sample(ds, plan, rate)
        run.output(save_matrix(sub, run.path(f"sample_{rate:g}.{suffix}"), suffix))
    path = run.path("plan.json")
    path.write_text(json.dumps(plan.to_dict()) + "\n")
    run.output(path)
    run.write_manifest()
    print(", ".join(f"rho {r:g}: {len(lvl)} points" for r, lvl in zip(plan.rates, plan.levels)))


# -- parser ----------------------------------------------------------------


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: $PERPSCALE_THREADS or all)")
    common.add_argument("--format", choices=["csv", "bin"], default=None,
                        help="data matrix format for outputs, and for inputs without a .csv/.bin suffix")
    common.add_argument("--output-dir", default=".")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--input")
    data.add_argument("--synthetic", type=int, metavar="N",
                      help="use an N-point 5-cluster Gaussian mixture instead of --input")

    opt = argparse.ArgumentParser(add_help=False)
    opt.add_argument("--theta", type=float, default=0.5)
    opt.add_argument("--ee-iters", type=int, default=250)
    opt.add_argument("--main-iters", type=int, default=750)
    opt.add_argument("--ee-factor", type=float, default=12.0)
    opt.add_argument("--learning-rate", default="auto")

    parser = argparse.ArgumentParser(prog="perpscale", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"perpscale {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("embed", parents=[common, data, opt], help="run t-SNE on a data set")
    p.add_argument("--perplexity", type=float, required=True)
    p.add_argument("--svg", action="store_true", help="also write a scatter plot")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("grid", parents=[common, data, opt], help="embed one sample at several perplexities")
    p.add_argument("--rate", type=float, required=True)
    p.add_argument("--perplexities", type=_floats, required=True)
    p.add_argument("--max-bytes", type=float, default=None)
    p.add_argument("--bytes-per-entry", type=float, default=12.0)
    p.add_argument("--mode", choices=["dense", "sparse"], default="sparse")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("mc", parents=[common, data], help="Monte Carlo perplexity-scaling check")
    p.add_argument("--rates", type=_floats, default=[round(0.1 * i, 1) for i in range(1, 10)])
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--perplexity", type=float, default=30.0)
    p.set_defaults(func=cmd_mc)

    p = sub.add_parser("pipeline", parents=[common, data, opt], help="sample-based embedding")
    p.add_argument("--rate", type=float, required=True)
    p.add_argument("--per-sample", type=float, default=None)
    p.add_argument("--target-perplexity", type=float, default=None,
                   help="full-set perplexity to scale down to the sample")
    p.add_argument("--per-full", type=float, default=30.0)
    p.add_argument("--prolong-k", type=int, default=10)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("budget", parents=[common], help="largest sample that fits a memory budget")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--perplexity", type=float, required=True)
    p.add_argument("--max-bytes", type=float, required=True)
    p.add_argument("--bytes-per-entry", type=float, default=12.0)
    p.add_argument("--mode", choices=["dense", "sparse"], default="sparse")
    p.set_defaults(func=cmd_budget)

    p = sub.add_parser("compare", parents=[common], help="kNN overlap of two embedding CSVs")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--k", type=int, default=10)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sample", parents=[common, data], help="draw nested samples")
    p.add_argument("--rates", type=_floats, required=True)
    p.set_defaults(func=cmd_sample)
    return parser


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    threads = args.threads
    if threads is None and os.environ.get("PERPSCALE_THREADS"):
        threads = int(os.environ["PERPSCALE_THREADS"])
    if threads is not None:
        set_threads(threads)
    try:
        run = Run(args, argv)
        args.func(args, run)
    except PerpscaleError as exc:
        print(f"perpscale {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


def replay(manifest_path, output_dir) -> int:
    """Re-run the command recorded in a manifest, writing into ``output_dir``."""
    manifest = json.loads(Path(manifest_path).read_text())
    argv = list(manifest["argv"])
    cwd = manifest.get("cwd")
    for flag in ("--input", "--a", "--b"):
        if cwd and flag in argv:
            i = argv.index(flag) + 1
            argv[i] = os.path.join(cwd, argv[i])
    if "--output-dir" in argv:
        argv[argv.index("--output-dir") + 1] = str(output_dir)
    else:
        argv += ["--output-dir", str(output_dir)]
    return main(argv)


def main_exit():
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
