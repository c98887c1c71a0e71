"""Command-line entry point: ``lpsphere <subcommand> ...``.

Exit codes: 0 success, 1 invalid input (bad flags, config or data files),
2 runtime or numerical failure.
"""

import argparse
import csv
import logging
import os
import sys

import numpy as np

from lpsphere.config import RunConfig
from lpsphere.errors import (
    ConfigError,
    DataFormatError,
    DegenerateInputError,
    DomainError,
    LpsphereError,
)
from lpsphere.gradcheck import PRESET_INPUTS, check_preset
from lpsphere.optim import bounded_descent, lipschitz_bound, quadratic_problem
from lpsphere.plotting import (
    plot_correlation,
    plot_hoyer_curve,
    plot_layer_hoyer,
)
from lpsphere.sparsity import network_reports
from lpsphere.theory import DEFAULT_ALPHA, MIN_MC_SAMPLES, GammaHoyerModel, expected_hoyer, mc_expected_hoyer
from lpsphere.train import load_network, run_training

QUADRATIC_PRESETS = {"quadratic-p1.5": 1.5, "quadratic-p2": 2.0, "quadratic-p3": 3.0}
GRADCHECK_TOL = 1e-5


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _float_list(text):
    try:
        return [float(t) for t in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers, got {text!r}")


def _writer(out_path):
    if out_path is None:
        return None, csv.writer(sys.stdout, lineterminator="\n")
    os.makedirs(os.path.dirname(os.path.abspath(out_path)), exist_ok=True)
    fh = open(out_path, "w", newline="")
    return fh, csv.writer(fh, lineterminator="\n")


def cmd_train(args):
    cfg = RunConfig.load(args.config)
    if args.output_dir:
        cfg.output_dir = os.path.abspath(args.output_dir)
    if args.epochs is not None:
        cfg.epochs = args.epochs
        cfg.validate()
    rec = run_training(cfg, resume=args.resume)
    print(f"run directory: {cfg.output_dir}")
    if rec is not None:
        print(
            f"epoch {rec['epoch']}: test_acc={rec['test_acc']} sparsity={rec['sparsity']:.4f} "
            f"max_norm_dev={rec['max_norm_dev']:.2e}"
        )
    return 0


def cmd_analyze(args):
    if not os.path.exists(args.checkpoint):
        raise ConfigError(f"--checkpoint: file not found: {args.checkpoint}")
    net, meta = load_network(args.checkpoint)
    out = args.out or os.path.join(os.path.dirname(os.path.abspath(args.checkpoint)), "analysis")
    os.makedirs(out, exist_ok=True)
    reports = network_reports(net, with_correlation=True)
    fields = ["layer", "kind", "dim", "p", "mean_hoyer", "mean_hoyer_active", "sparsity"]
    with open(os.path.join(out, "layer_report.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for rep in reports:
            w.writerow(rep.summary())
    for rep in reports:
        stem = f"layer{rep.layer:02d}"
        np.savetxt(os.path.join(out, f"{stem}_neuron_hoyer.csv"), rep.neuron_hoyer, delimiter=",",
                   header="hoyer", comments="")
        np.savetxt(os.path.join(out, f"{stem}_correlation.csv"), rep.correlation, delimiter=",")
        plot_correlation(rep.correlation, f"layer {rep.layer} {rep.kind} (p={rep.p:g})",
                         os.path.join(out, f"{stem}_correlation.png"))
    plot_layer_hoyer(reports, os.path.join(out, "layer_hoyer.png"))
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(fields)
    for rep in reports:
        s = rep.summary()
        w.writerow([s[f] for f in fields])
    print(f"# written to {out}", file=sys.stderr)
    return 0


def cmd_hoyer_theory(args):
    models = [GammaHoyerModel(args.d, p, args.alpha) for p in args.p]
    fh, w = _writer(args.out)
    rows = []
    try:
        w.writerow(["d", "p", "alpha", "tau", "expected_hoyer"])
        for model in models:
            h = expected_hoyer(model)
            rows.append((model.p, h))
            w.writerow([args.d, repr(model.p), repr(args.alpha), repr(model.tau), repr(h)])
    finally:
        if fh:
            fh.close()
    if args.out and len(rows) > 1:
        plot_hoyer_curve(args.d, rows, os.path.splitext(args.out)[0] + ".png")
    return 0


def cmd_hoyer_mc(args):
    models = [GammaHoyerModel(args.d, p, args.alpha) for p in args.p]
    if args.samples < MIN_MC_SAMPLES:
        raise ConfigError(f"--samples: need at least {MIN_MC_SAMPLES}, got {args.samples}")
    fh, w = _writer(args.out)
    rows, mc = [], []
    try:
        w.writerow(["d", "p", "alpha", "tau", "samples", "seed", "mc_mean", "stderr",
                    "expected_hoyer", "z"])
        for model in models:
            p = model.p
            mean, se = mc_expected_hoyer(model, args.samples, args.seed)
            h = expected_hoyer(model)
            rows.append((p, h))
            mc.append((p, mean, se))
            w.writerow([args.d, repr(p), repr(args.alpha), repr(model.tau), args.samples,
                        args.seed, repr(mean), repr(se), repr(h), f"{(mean - h) / se:.3f}"])
    finally:
        if fh:
            fh.close()
    if args.out:
        plot_hoyer_curve(args.d, rows, os.path.splitext(args.out)[0] + ".png", mc=mc)
    return 0


def cmd_gradcheck(args):
    rows = check_preset(args.preset, seed=args.seed, n_dirs=args.directions)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["layer", "kind", "param", "max_rel_error"])
    for r in rows:
        w.writerow([r[0], r[1], r[2], f"{r[3]:.3e}"])
    worst = max(r[3] for r in rows)
    if worst >= GRADCHECK_TOL:
        print(f"gradient check failed: max relative error {worst:.3e}", file=sys.stderr)
        return 2
    return 0


def cmd_lr_bound(args):
    p = QUADRATIC_PRESETS[args.preset] if args.p is None else args.p
    a, b, w0 = quadratic_problem(p, seed=args.seed)
    beta = lipschitz_bound(a, p)
    h = bounded_descent(a, b, w0, p, factor=args.factor, iters=args.iters, beta=beta)
    fh, w = _writer(args.out)
    try:
        w.writerow(["iteration", "risk", "decrease", "roundoff", "residual", "lr_bound", "lr"])
        for i in range(len(h["risk"])):
            w.writerow([i] + [repr(float(h[k][i])) for k in
                              ("risk", "decrease", "roundoff", "residual", "bound", "lr")])
    finally:
        if fh:
            fh.close()
    increases = int(np.sum(h["decrease"] > h["roundoff"]))
    print(f"# p={p} beta={beta:.6g} factor={args.factor} resolvable increases={increases} "
          f"final residual={h['final_residual']:.3e}", file=sys.stderr)
    if args.out:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, axes = plt.subplots(1, 2, figsize=(8, 3.2))
        axes[0].plot(h["risk"] - h["risk"].min() + 1e-18)
        axes[0].set_yscale("log")
        axes[0].set_xlabel("iteration")
        axes[0].set_ylabel("risk - min risk")
        axes[1].semilogy(np.maximum(h["residual"], 1e-18))
        axes[1].set_xlabel("iteration")
        axes[1].set_ylabel("stationarity residual")
        fig.tight_layout()
        fig.savefig(os.path.splitext(args.out)[0] + ".png", dpi=110)
        plt.close(fig)
    return 0


def build_parser():
    parser = _Parser(prog="lpsphere", description="Training on unit L_p-spheres.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train", help="train from a JSON config")
    s.add_argument("--config", required=True)
    s.add_argument("--resume", help="checkpoint to continue from")
    s.add_argument("--output-dir")
    s.add_argument("--epochs", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("analyze", help="per-layer sparsity and correlation report of a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--out", help="output directory (default: <checkpoint dir>/analysis)")
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("hoyer-theory", help="closed-form expected Hoyer sparsity as CSV")
    s.add_argument("--d", type=int, required=True)
    s.add_argument("--p", type=_float_list, required=True)
    s.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    s.add_argument("--out", help="CSV path (a PNG is written next to it)")
    s.set_defaults(func=cmd_hoyer_theory)

    s = sub.add_parser("hoyer-mc", help="Monte-Carlo estimate of the expected Hoyer sparsity")
    s.add_argument("--d", type=int, required=True)
    s.add_argument("--p", type=_float_list, required=True)
    s.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    s.add_argument("--samples", type=int, default=200_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_hoyer_mc)

    s = sub.add_parser("gradcheck", help="finite-difference check of a network preset")
    s.add_argument("--preset", required=True, choices=sorted(PRESET_INPUTS))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--directions", type=int, default=3)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("lr-bound", help="step-size bound diagnostic on the quadratic test problem")
    s.add_argument("--preset", required=True, choices=sorted(QUADRATIC_PRESETS))
    s.add_argument("--p", type=float, help="override the preset's exponent")
    s.add_argument("--factor", type=float, default=0.5, help="step = factor * bound")
    s.add_argument("--iters", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_lr_bound)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DataFormatError, DomainError, DegenerateInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (LpsphereError, ArithmeticError, FloatingPointError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
