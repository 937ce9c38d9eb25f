"""``kpk`` command-line entry point.

Exit codes: 0 success, 1 verification failure, 2 usage error, 3 training
divergence. ``KPK_SEED`` in the environment overrides every ``--seed``.
"""
import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import bench, kpcore, presets, verify
from .errors import FormatError, InfeasibleError, KPKError, NumericError

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2, 3
log = logging.getLogger("kpk")


class UsageError(Exception):
    pass


def _seed(args):
    env = os.environ.get("KPK_SEED")
    if env is None:
        return args.seed
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"KPK_SEED must be an integer, got {env!r}") from None


def _table(header, rows):
    cells = [[str(h) for h in header]] + [[str(v) for v in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    return "\n".join("  ".join(v.rjust(w) for v, w in zip(r, widths)) for r in cells)


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _emit(args, header, rows):
    if getattr(args, "csv", None):
        Path(args.csv).write_text(_csv_text(header, rows))
    print(_table(header, rows))


# -- shapes ---------------------------------------------------------------------


def cmd_shapes(args):
    m, n = args.rows, args.cols
    if m < 1 or n < 1:
        raise UsageError("--rows and --cols must be positive")
    if args.enumerate and min(m, n) < 2:
        raise UsageError("--enumerate needs --rows and --cols of at least 2")
    plan = kpcore.select_factor_shapes(m, n)
    (m1, n1), (m2, n2) = plan.left, plan.right
    print(f"plan: B {m1}x{n1} kron C {m2}x{n2}  params {plan.params_compressed}  ratio {plan.ratio:.4g}")
    if args.enumerate:
        entries = kpcore.enumerate_kp_ratios(m, n)
        rows = [(f"{a[0]}x{a[1]}", f"{b[0]}x{b[1]}", a[0] * a[1] + b[0] * b[1], f"{r:.6g}") for (a, b), r in entries]
        _emit(args, ("factor 1", "factor 2", "params", "ratio"), rows)
        print("levels: " + ", ".join(f"{v:.6g}" for v in kpcore.ratio_levels(entries)))
    if args.hkp_target is not None:
        try:
            c = kpcore.hkp_rank_rows_for_target(m, n, args.hkp_target)
        except InfeasibleError as exc:
            raise UsageError(str(exc)) from exc
        low = "none" if c.plan is None else f"B {c.plan.left[0]}x{c.plan.left[1]} kron C {c.plan.right[0]}x{c.plan.right[1]}"
        print(f"hkp: r {c.r}  lower {low}  params {c.params}  ratio {c.ratio:.4g}")
    return EXIT_OK


# -- verify ---------------------------------------------------------------------


def cmd_verify(args):
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    results = verify.run_all(args.trials, _seed(args))
    rows = [(r.name, r.passed, r.total, f"{r.seconds:.2f}", "ok" if r.ok else "FAIL") for r in results]
    print(_table(("suite", "passed", "total", "seconds", "status"), rows))
    if args.json:
        Path(args.json).write_text(verify.report_json(results))
    failed = [r for r in results if not r.ok]
    for r in failed:
        print(f"{r.name} counterexample: {json.dumps(r.counterexample)}", file=sys.stderr)
    return EXIT_FAIL if failed else EXIT_OK


# -- bench ----------------------------------------------------------------------


CONFIG_KEYS = {"preset", "rows", "cols", "reps", "trials", "seed"}


def _bench_config(path):
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise UsageError("config must be a JSON object")
    unknown = set(cfg) - CONFIG_KEYS
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return cfg


def cmd_bench(args):
    seed = _seed(args)
    iterations, warmup = args.iterations, args.warmup
    if iterations < 1 or warmup < 0:
        raise UsageError("--iterations must be >= 1 and --warmup >= 0")
    if args.config:
        cfg = _bench_config(args.config)
        iterations = int(cfg.get("trials", iterations))
        seed = seed if "KPK_SEED" in os.environ else int(cfg.get("seed", seed))
        if "preset" in cfg:
            label = cfg["preset"]
            try:
                p = presets.get_preset(label)
            except KeyError as exc:
                raise UsageError(str(exc.args[0])) from exc
            rows = bench.run_preset(p, seed, iterations, warmup, backends=args.backends)
        else:
            try:
                m, n = int(cfg["rows"]), int(cfg["cols"])
            except KeyError as exc:
                raise UsageError("config needs either 'preset' or 'rows' and 'cols'") from exc
            label = f"{m}x{n}"
            rows = bench.gate_kernel_rows(m, n, seed, iterations, warmup, reps=cfg.get("reps"), backends=args.backends)
    else:
        label = args.preset
        rows = bench.run_preset(presets.get_preset(label), seed, iterations, warmup, backends=args.backends)
    if args.csv:
        Path(args.csv).write_text(bench.rows_csv(rows, label))
    print(f"{label} (backend {bench.kernels.BACKEND}, {iterations} timed calls after {warmup} warmups)")
    print(bench.rows_markdown(rows))
    return EXIT_OK


# -- train ----------------------------------------------------------------------


def _idx_data(args):
    from .io import load_idx

    if not (args.images and args.labels):
        raise UsageError("--task idx needs --images and --labels")
    try:
        images = load_idx(args.images).astype(np.float64)
        labels = load_idx(args.labels).astype(np.int64).ravel()
    except (OSError, FormatError) as exc:
        raise UsageError(str(exc)) from exc
    if images.ndim != 3 or len(images) != len(labels):
        raise UsageError(f"expected (N, rows, cols) images matching labels, got {images.shape} and {labels.shape}")
    images /= max(float(images.max()), 1.0)
    return images, labels, int(labels.max()) + 1


def cmd_train(args):
    from . import cells, train
    from .io import metrics_csv, save_network

    seed = _seed(args)
    if args.task == "synth":
        task = train.synth_task_generate(seed, args.count + args.val_count, T=args.steps, n=args.features)
        xs, labels, classes = task.xs, task.labels, 2
    else:
        xs, labels, classes = _idx_data(args)
    held = args.val_count if args.task == "synth" else min(args.val_count, len(labels) // 5)
    # samples are independent draws, so the tail serves as the validation split
    cut = len(labels) - held
    try:
        cells.parse_rep(args.rep)
        config = train.TrainConfig(
            seed=seed,
            epochs=args.epochs,
            batch_size=args.batch,
            learning_rate=args.lr,
            optimizer=args.optimizer,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc

    def builder(s):
        return cells.build_compressed_network(args.kind, xs.shape[2], args.hidden, classes, args.rep, s, xs.shape[1])

    def on_epoch(row):
        log.info("epoch %d loss %.5f train_acc %.4f", row["epoch"], row["loss"], row["train_acc"])

    val = (xs[cut:], labels[cut:]) if held else None
    try:
        result = train.train_loop(config, builder, (xs[:cut], labels[:cut]), on_epoch, val=val)
    except NumericError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(metrics_csv(result.metrics))
    save_network(out / "checkpoint.kpz", result.net, optimizer_state=result.optimizer_state)
    last = result.metrics[-1]
    line = f"final train_acc {last['train_acc']:.4f}"
    if "val_acc" in last:
        line += f" val_acc {last['val_acc']:.4f}"
    print(f"{line} params {result.net.cell.n_params} -> {out}")
    return EXIT_OK


# -- sizes ----------------------------------------------------------------------


def cmd_sizes(args):
    names = [args.preset] if args.preset else list(presets.NETWORK_PRESETS)
    header = ("preset", "variant", "hidden", "layer_params", "total_params", "compression", "size_kb_32bit", "size_kb_csr", "detail")
    rows = []
    for name in names:
        p = presets.get_preset(name)
        if not p.has_network:
            raise UsageError(f"preset {name} is kernel-only and has no size table")
        for r in presets.size_table(p):
            csr_kb = "" if r.size_kb_csr is None else f"{r.size_kb_csr:.2f}"
            rows.append((name, r.variant, r.hidden, r.layer_params, r.total_params, f"{r.compression:.2f}",
                         f"{r.size_kb:.2f}", csr_kb, r.detail))
    _emit(args, header, rows)
    for name in names:
        note = presets.get_preset(name).note
        if note:
            print(f"note ({name}): {note}")
    return EXIT_OK


# -- analyze --------------------------------------------------------------------


def cmd_analyze(args):
    from . import analysis
    from .io import load_matrix

    try:
        if args.kron:
            b, c = (load_matrix(p) for p in args.kron)
            a = kpcore.kron_expand(kpcore.KronFactorPair(b, c))
            src = f"{args.kron[0]} kron {args.kron[1]}"
        elif args.matrix:
            a = load_matrix(args.matrix)
            src = args.matrix
        else:
            raise UsageError("give a matrix file or --kron B C")
        rep = analysis.spectral_report(a, args.tol)
    except (OSError, FormatError, KPKError, ValueError) as exc:
        if isinstance(exc, UsageError):
            raise
        raise UsageError(str(exc)) from exc
    print(f"{src}: {a.shape[0]}x{a.shape[1]}")
    rows = [(k, v) for k, v in rep.rows()]
    _emit(args, ("quantity", "value"), rows)
    if args.singular_values:
        print("singular values: " + " ".join(f"{v:.6g}" for v in rep.singular_values))
    return EXIT_OK


# -- parser ---------------------------------------------------------------------


def build_parser():
    ap = argparse.ArgumentParser(prog="kpk", description="Kronecker-product compressed RNN toolkit")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("shapes", parents=[common], help="factor shapes for an m x n matrix")
    s.add_argument("--rows", type=int, required=True)
    s.add_argument("--cols", type=int, required=True)
    s.add_argument("--enumerate", action="store_true", help="list every two-factor split and its ratio")
    s.add_argument("--hkp-target", type=float, help="hybrid rows r for this compression target")
    s.add_argument("--csv", help="write the enumeration as CSV")
    s.set_defaults(func=cmd_shapes)

    s = sub.add_parser("verify", parents=[common], help="run the self-check suites")
    s.add_argument("--trials", type=int, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--json", help="write suite results as JSON")
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("bench", parents=[common], help="time matvec kernels and sequence forwards")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--preset", choices=sorted(presets.PRESETS))
    g.add_argument("--config", help="JSON file with keys preset, rows, cols, reps, trials, seed")
    s.add_argument("--iterations", type=int, default=bench.ITERATIONS)
    s.add_argument("--warmup", type=int, default=bench.WARMUP)
    s.add_argument("--backends", action="store_true", help="add numba vs numpy rows for the same kernels")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--csv", help="write rows as CSV")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("train", parents=[common], help="train a compressed RNN classifier")
    s.add_argument("--task", choices=("synth", "idx"), default="synth")
    s.add_argument("--rep", default="kp", help="dense | kp | hkp:R | lmf:R | sparse:R")
    s.add_argument("--kind", choices=("rnn", "fastrnn", "lstm", "gru", "bilstm"), default="fastrnn")
    s.add_argument("--hidden", type=int, default=32)
    s.add_argument("--epochs", type=int, default=50)
    s.add_argument("--lr", type=float, default=0.01)
    s.add_argument("--batch", type=int, default=32)
    s.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    s.add_argument("--count", type=int, default=1000, help="synthetic training sequences")
    s.add_argument("--val-count", type=int, default=200, help="held-out sequences")
    s.add_argument("--steps", type=int, default=16, help="synthetic sequence length")
    s.add_argument("--features", type=int, default=16, help="synthetic input width")
    s.add_argument("--images", help="IDX image file for --task idx")
    s.add_argument("--labels", help="IDX label file for --task idx")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default="kpk-run")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("sizes", parents=[common], help="parameter and size accounting for benchmark presets")
    s.add_argument("--preset", choices=list(presets.NETWORK_PRESETS))
    s.add_argument("--csv")
    s.set_defaults(func=cmd_sizes)

    s = sub.add_parser("analyze", parents=[common], help="singular values, rank and condition number")
    s.add_argument("matrix", nargs="?", help="KPM1 or .csv matrix file")
    s.add_argument("--kron", nargs=2, metavar=("B", "C"), help="analyze B kron C")
    s.add_argument("--tol", type=float, default=1e-10, help="relative rank tolerance")
    s.add_argument("--singular-values", action="store_true")
    s.add_argument("--csv")
    s.set_defaults(func=cmd_analyze)
    return ap


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"kpk {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
