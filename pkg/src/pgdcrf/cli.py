"""Command-line entry point: ``pgdcrf <command> ...``.

Exit codes: 0 success, 2 input error, 3 check failure.
"""

import argparse
import csv
import io as _io
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .errors import BudgetExceededError, DivergenceError, InvalidInputError
from .inference import (
    InferenceConfig,
    argmax_labels,
    init_q0,
    kl_objective,
    round_sequential,
    run_mean_field,
    run_pgd,
)
from .learning import TrainConfig, evaluate, grad_check, init_params, train
from .model import energy_discrete
from .oracle import OracleBudget, exhaustive_min
from .simplex import TRAIN_ALPHA, project_field
from .synth import GENERATORS, TaskSpec, generate

EXIT_OK, EXIT_INPUT, EXIT_CHECK = 0, 2, 3
DEFAULT_ITERS = 5
DEFAULT_GAMMA = 0.5


def _label_image(inst, x):
    if inst.n_labels > 256:
        raise InvalidInputError("label maps are written as 8-bit PGM; need L <= 256")
    H, W = inst.shape
    return np.asarray(x, dtype=np.uint8).reshape(H, W)


def discretize(inst, trace):
    """Rounded labels for PGD traces, argmax for mean-field traces."""
    q = trace.final
    if trace.method == "mean-field":
        return argmax_labels(q)
    if np.any(q < 0):
        # leaky states leave the simplex; round from their strict projection
        q = project_field(q, 0.0)
    return round_sequential(inst, q)


def cmd_infer(args):
    inst = io.read_instance(args.instance)
    q0 = init_q0(inst.unary.scores)
    if args.method == "pgd":
        cfg = InferenceConfig(args.iters, args.gamma, args.alpha, args.safe_step)
        trace = run_pgd(inst, q0, cfg)
    else:
        trace = run_mean_field(inst, q0, args.iters)
    x = discretize(inst, trace)
    io.write_pnm(args.out_labels, _label_image(inst, x))
    io.write_trace(args.out_trace, trace)
    print(f"method={trace.method} iterations={trace.n_steps} relaxed_energy={trace.energies[-1]:.10g} "
          f"discrete_energy={energy_discrete(inst, x):.10g}")
    for msg in trace.warnings:
        print(f"warning: {msg}", file=sys.stderr)
    return EXIT_OK


COMPARE_HEADER = ["restart", "pgd_energy", "mf_energy", "pgd_kl", "mf_kl", "pgd_discrete", "mf_discrete"]


def compare_rows(inst, seeds, seed, iters, gamma):
    """Paired PGD and mean-field runs from ``seeds`` restarts.

    Restart ``k`` starts both methods from ``0.5 * z + 0.5 * d`` where ``d``
    is a Dirichlet(1, ..., 1) draw, so restarts differ but each pair shares
    its start.
    """
    rng = np.random.default_rng(seed)
    z = init_q0(inst.unary.scores)
    rows = []
    for k in range(seeds):
        q0 = 0.5 * z + 0.5 * rng.dirichlet(np.ones(inst.n_labels), size=inst.n_pixels)
        pgd = run_pgd(inst, q0, InferenceConfig(iters, gamma, 0.0), record_kl=False)
        mf = run_mean_field(inst, q0, iters)
        rows.append([
            k, pgd.energies[-1], mf.energies[-1], kl_objective(inst, pgd.final), mf.kl[-1],
            energy_discrete(inst, round_sequential(inst, pgd.final)),
            energy_discrete(inst, argmax_labels(mf.final)),
        ])
    return rows


def cmd_compare(args):
    inst = io.read_instance(args.instance)
    rows = compare_rows(inst, args.seeds, args.seed, args.iters, args.gamma)
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COMPARE_HEADER)
    for r in rows:
        w.writerow([r[0]] + [io.fmt(v) for v in r[1:]])
    io.atomic_write(args.out, buf.getvalue())
    pgd = np.array([r[1] for r in rows])
    mf = np.array([r[2] for r in rows])
    wins = int(np.sum(pgd <= mf))
    print(f"restarts={len(rows)} pgd<=mf={wins} median_pgd={np.median(pgd):.10g} "
          f"median_mf={np.median(mf):.10g} median_gap={np.median(mf) - np.median(pgd):.10g}")
    return EXIT_OK


def _instances_in(path):
    path = Path(path)
    files = sorted(path.glob("*.crf")) if path.is_dir() else [path]
    if not files:
        raise InvalidInputError(f"no .crf instance files in {path}")
    return [io.read_instance(f) for f in files]


def cmd_train(args):
    instances = _instances_in(args.instances)
    L = instances[0].n_labels
    if any(i.n_labels != L for i in instances):
        raise InvalidInputError("all training instances must share the label count")
    sb = args.bilateral_radius
    if sb is None and instances[0].bilateral is not None:
        sb = instances[0].bilateral.radius
    params = init_params(L, args.spatial_radius, sb)
    cfg = TrainConfig(args.lr, args.momentum, args.weight_decay, args.batch_size, args.epochs,
                      args.alpha, args.iters, args.gamma)
    result = train(instances, params, cfg, np.random.default_rng(args.seed))
    out = Path(args.out)
    io.write_params(out / "params.txt", result.params)
    io.atomic_write(out / "loss.csv", "step,loss\n" + "".join(
        f"{i},{io.fmt(v)}\n" for i, v in enumerate(result.losses)))
    acc = []
    for inst in instances:
        if inst.truth is not None:
            _, x = evaluate(inst, result.params, args.iters, args.gamma)
            acc.append(np.mean(x == inst.truth))
    first = result.losses[0] if result.losses else float("nan")
    last = result.losses[-1] if result.losses else float("nan")
    print(f"updates={len(result.losses)} loss_first={first:.6g} loss_last={last:.6g} "
          f"pixel_accuracy={np.mean(acc) if acc else float('nan'):.4f}")
    return EXIT_OK


def cmd_gradcheck(args):
    inst = io.read_instance(args.instance)
    report = grad_check(inst, iterations=args.iters, alpha=args.alpha, seed=args.seed, step=args.gamma)
    for line in report.lines():
        print(line)
    print("PASS" if report.passed else "FAIL")
    return EXIT_OK if report.passed else EXIT_CHECK


def cmd_oracle(args):
    inst = io.read_instance(args.instance)
    x, e = exhaustive_min(inst, OracleBudget(max_configurations=args.max_configs))
    print(f"E* = {e:.10g}")
    print("x* = " + " ".join(str(int(v)) for v in x))
    return EXIT_OK


def cmd_export_filters(args):
    params = io.read_params(args.params)
    paths = io.write_filter_heatmaps(params.spatial, args.out_dir, "spatial")
    if params.bilateral is not None:
        side = 2 * params.bilateral_radius + 1
        # position offsets along rows, colour offsets along columns
        taps = params.bilateral.reshape(params.n_labels, params.n_labels, side**2, side**3)
        paths += io.write_filter_heatmaps(taps, args.out_dir, "bilateral")
    print(f"wrote {len(paths)} images to {args.out_dir}")
    return EXIT_OK


def cmd_synth(args):
    spec = TaskSpec(args.generator, args.height, args.width, args.labels, args.noise, args.seed,
                    radius=args.radius)
    inst = generate(spec)
    io.write_instance(args.out, inst)
    print(f"wrote {args.generator} {args.height}x{args.width} L={args.labels} to {args.out}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="pgdcrf", description="Projected-gradient CRF inference and learning.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("infer", help="run inference and write a label map and energy trace")
    s.add_argument("instance")
    s.add_argument("--method", choices=("pgd", "mf"), default="pgd")
    s.add_argument("--iters", type=int, default=DEFAULT_ITERS)
    s.add_argument("--gamma", type=float, default=DEFAULT_GAMMA)
    s.add_argument("--alpha", type=float, default=0.0)
    s.add_argument("--safe-step", action="store_true")
    s.add_argument("--out-labels", required=True)
    s.add_argument("--out-trace", required=True)
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("compare", help="paired PGD and mean-field energies over random restarts")
    s.add_argument("instance")
    s.add_argument("--seeds", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--iters", type=int, default=10)
    s.add_argument("--gamma", type=float, default=DEFAULT_GAMMA)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("train", help="end-to-end training on a directory of instances with truth")
    s.add_argument("instances")
    s.add_argument("--epochs", type=int, default=200)
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--momentum", type=float, default=0.9)
    s.add_argument("--weight-decay", type=float, default=5e-3)
    s.add_argument("--batch-size", type=int, default=1)
    s.add_argument("--iters", type=int, default=DEFAULT_ITERS)
    s.add_argument("--gamma", type=float, default=DEFAULT_GAMMA)
    s.add_argument("--alpha", type=float, default=TRAIN_ALPHA)
    s.add_argument("--spatial-radius", type=int, default=4)
    s.add_argument("--bilateral-radius", type=int, default=None)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="output directory for params.txt and loss.csv")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("gradcheck", help="finite-difference check of the unrolled gradients")
    s.add_argument("instance")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--iters", type=int, default=DEFAULT_ITERS)
    s.add_argument("--gamma", type=float, default=DEFAULT_GAMMA)
    s.add_argument("--alpha", type=float, default=TRAIN_ALPHA)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("oracle", help="exhaustive minimum of the discrete energy")
    s.add_argument("instance")
    s.add_argument("--max-configs", type=int, default=OracleBudget().max_configurations)
    s.set_defaults(func=cmd_oracle)

    s = sub.add_parser("export-filters", help="write learned filters as PGM heatmaps")
    s.add_argument("params")
    s.add_argument("out_dir")
    s.set_defaults(func=cmd_export_filters)

    s = sub.add_parser("synth", help="write a synthetic instance")
    s.add_argument("generator", choices=GENERATORS)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--height", type=int, default=16)
    s.add_argument("--width", type=int, default=16)
    s.add_argument("--labels", type=int, default=2)
    s.add_argument("--noise", type=float, default=0.3)
    s.add_argument("--radius", type=int, default=1)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (InvalidInputError, BudgetExceededError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except DivergenceError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
