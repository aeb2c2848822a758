"""Command-line entry point: ``selcal <subcommand> [flags]``.

Reports go to stdout as JSON; CSV and JSONL artifacts go to ``--out-dir``.
Exit codes: 0 success, 1 invalid input, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import gradcheck
from .calibmaps import apply_temperature, cwece_optimal_map, ece_optimal_map, fit_temperature
from .core import (
    PredictionFileError,
    as_labels,
    empirical_error,
    load_prediction_probs,
    load_predictions,
    load_records,
    prediction_records,
    write_jsonl,
    write_text_atomic,
)
from .csf import CsfKind, csf_score
from .losses import cross_entropy, make_batch_loss, weight_curves
from .metrics import (
    BinKind,
    BinningScheme,
    SINGLETON,
    aurc_curve,
    binned_cwece,
    binned_ece,
    brier,
    mc_aurc,
    reliability_bins,
    risk_coverage_curve,
)
from .oracle import gen_mixture, polygon_mixture
from .softrank import SoftRankConfig, hard_rank_ascending, soft_rank_ascending
from .trainer import MlpConfig, SgdConfig, TrainingDiverged, forward, save_checkpoint, train

log = logging.getLogger("selcal")

LOSSES = ("xe", "focal", "fl53", "invfocal", "aurc", "raurc")
CSFS = ("msp", "margin", "negentropy")
GRADCHECK_TOL = 1e-4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def fmt(value):
    """Round floats to 9 significant digits; non-finite floats become null."""
    if isinstance(value, dict):
        return {k: fmt(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [fmt(v) for v in value]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return float(f"{v:.9g}") if math.isfinite(v) else None
    return value


def fmt_csv(value) -> str:
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.9g}"
    return str(value)


def emit(report) -> None:
    sys.stdout.write(json.dumps(fmt(report), sort_keys=True) + "\n")


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt_csv(v) for v in row])
    return buf.getvalue()


def _out_dir(args) -> Path | None:
    if args.out_dir is None:
        return None
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _existing(path, flag) -> Path:
    if path is None:
        raise UsageError(f"{flag} is required")
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{flag}: no such file {p}")
    return p


def _scheme(args, kind=None) -> BinningScheme:
    return BinningScheme(BinKind(kind or args.binning), args.bins)


def metric_report(p, labels, bins: int = 15, csf=CsfKind.MSP) -> dict:
    ew = BinningScheme(BinKind.EQUAL_WIDTH, bins)
    em = BinningScheme(BinKind.EQUAL_MASS, bins)
    losses = np.asarray(cross_entropy(p, labels).value)
    scores = csf_score(csf, p)
    return {
        "n": int(p.shape[0]),
        "acc": 1.0 - empirical_error(p, labels),
        "ece_ew": binned_ece(p, labels, ew),
        "ece_em": binned_ece(p, labels, em),
        "cwece_ew": binned_cwece(p, labels, ew),
        "cwece_em": binned_cwece(p, labels, em),
        "sup_ece": binned_ece(p, labels, SINGLETON),
        "sup_cwece": binned_cwece(p, labels, SINGLETON),
        "brier": brier(p, labels),
        "aurc_curve": aurc_curve(losses, scores),
        "aurc_mc": mc_aurc(losses, scores),
    }


def cmd_gen_data(args) -> int:
    out = _out_dir(args)
    if out is None:
        raise UsageError("--out-dir is required")
    spec = polygon_mixture(args.k, args.radius, args.variance, args.seed)
    summary = {"k": args.k, "d": 2, "radius": args.radius, "variance": args.variance, "seed": args.seed}
    for name, n, seed in (("train", args.n, args.seed), ("test", args.n_test, args.seed + 1)):
        if n <= 0:
            continue
        x, y, post = gen_mixture(spec, n, seed=seed)
        write_jsonl(out / f"{name}.jsonl", ({"x": [float(v) for v in xi], "label": int(yi)} for xi, yi in zip(x, y)))
        write_jsonl(out / f"{name}_posteriors.jsonl", ({"posterior": [float(v) for v in row]} for row in post))
        summary[f"n_{name}"] = n
        summary[f"bayes_error_{name}"] = float(np.mean(1.0 - post.max(axis=1)))
    emit(summary)
    return 0


def load_dataset(path):
    """Read ``{"x": [...], "label": int}`` records."""
    records = load_records(path)
    if not records:
        raise PredictionFileError(f"{path}: no records")
    xs, ys = [], []
    for lineno, rec in records:
        if "x" not in rec or "label" not in rec:
            raise PredictionFileError(f"{path}:{lineno}: record needs 'x' and 'label'")
        if xs and len(rec["x"]) != len(xs[0]):
            raise PredictionFileError(f"{path}:{lineno}: inconsistent feature width")
        xs.append(rec["x"])
        ys.append(rec["label"])
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys)
    if not np.all(np.isfinite(x)):
        raise PredictionFileError(f"{path}: non-finite features")
    return x, y


def cmd_train(args) -> int:
    data = _existing(args.data, "--data")
    test = _existing(args.test_data, "--test-data") if args.test_data else None
    if args.export_preds and not Path(args.export_preds).resolve().parent.is_dir():
        raise UsageError(f"--export-preds: directory of {args.export_preds} does not exist")
    out = _out_dir(args)
    x, y = load_dataset(data)
    k = args.k or int(y.max()) + 1
    y = as_labels(y, k)
    hidden = tuple(int(h) for h in str(args.hidden).split(",") if h.strip())
    mlp = MlpConfig((x.shape[1], *hidden, k), args.activation, args.seed)
    schedule = [(0, args.lr)]
    if args.lr_drop_epoch is not None:
        schedule.append((args.lr_drop_epoch, args.lr * args.lr_drop))
    sgd = SgdConfig(tuple(schedule), args.momentum, args.weight_decay, args.batch_size, args.epochs, args.seed)
    batch_loss = make_batch_loss(args.loss, gamma=args.gamma, lam=args.lam, epsilon=args.epsilon,
                                 csf=CsfKind.parse(args.csf))
    model, logs = train(x, y, batch_loss, mlp, sgd)
    report = {"loss": args.loss, "epochs": args.epochs, "train": metric_report(model.predict_proba(x), y, args.bins)}
    if logs:
        report["final_train_loss"] = logs[-1].loss
    eval_x, eval_y = x, y
    if test is not None:
        eval_x, tmp_y = load_dataset(test)
        eval_y = as_labels(tmp_y, k)
        report["test"] = metric_report(model.predict_proba(eval_x), eval_y, args.bins)
    if out is not None:
        save_checkpoint(model, out / "model.txt")
        rows = [(e.epoch, e.lr, e.loss, e.acc, e.ece, e.cwece) for e in logs]
        write_text_atomic(out / "train_log.csv", csv_text(("epoch", "lr", "loss", "acc", "ece", "cwece"), rows))
    if args.export_preds:
        logits = forward(model, eval_x)[0]
        write_jsonl(args.export_preds, prediction_records(logits, eval_y))
    emit(report)
    return 0


def cmd_eval(args) -> int:
    preds = _existing(args.preds, "--preds")
    out = _out_dir(args)
    p, labels = load_prediction_probs(preds)
    csf = CsfKind.parse(args.csf)
    report = metric_report(p, labels, args.bins, csf)
    report["ece"] = binned_ece(p, labels, _scheme(args))
    report["cwece"] = binned_cwece(p, labels, _scheme(args))
    report["binning"] = args.binning
    if out is not None:
        rel = reliability_bins(p, labels, args.reliability_bins)
        rows = zip(rel.lo, rel.hi, rel.count, rel.conf, rel.acc)
        write_text_atomic(out / "reliability.csv", csv_text(("bin_lo", "bin_hi", "count", "conf", "acc"), rows))
        losses = np.asarray(cross_entropy(p, labels).value)
        if args.risk == "01":
            losses = (p.argmax(axis=1) != labels).astype(float)
        curve = risk_coverage_curve(losses, csf_score(csf, p))
        write_text_atomic(out / "risk_coverage.csv",
                          csv_text(("coverage", "risk"), ((c.coverage, c.selective_risk) for c in curve)))
    emit(report)
    return 0


def cmd_calibrate(args) -> int:
    preds = _existing(args.preds, "--preds")
    out = _out_dir(args)
    logits, labels = load_predictions(preds)
    p, _ = load_prediction_probs(preds)
    report = {"method": args.method, "before": metric_report(p, labels, args.bins)}
    if args.method == "temp":
        t = fit_temperature(logits, labels, args.t_min, args.t_max, args.t_step)
        new_logits = np.asarray(logits) / t
        new_p = apply_temperature(logits, t)
        report["temperature"] = t
        records = prediction_records(new_logits, labels)
    else:
        if args.tau is None:
            raise UsageError("--tau is required for the optimal maps")
        scores = csf_score(CsfKind.parse(args.csf), p)
        fn = ece_optimal_map if args.method == "ece-map" else cwece_optimal_map
        new_p = fn(p, scores, args.tau)
        with np.errstate(divide="ignore"):
            new_logits = np.log(np.clip(new_p, 1e-300, 1.0))
        records = prediction_records(new_logits, labels, probs=new_p)
        report["tau"] = args.tau
    report["after"] = metric_report(new_p, labels, args.bins)
    if out is not None:
        write_jsonl(out / "calibrated.jsonl", records)
    emit(report)
    return 0


def cmd_gradcheck(args) -> int:
    err = gradcheck.run(args.loss, n=args.n, k=args.k, gamma=args.gamma, lam=args.lam,
                        epsilon=args.epsilon, csf=CsfKind.parse(args.csf), seeds=args.seeds, mlp=args.mlp)
    ok = err <= GRADCHECK_TOL
    sys.stdout.write(f"max_rel_err={err:.9g} tol={GRADCHECK_TOL:g} {'PASS' if ok else 'FAIL'}\n")
    return 0 if ok else 2


def cmd_softrank(args) -> int:
    if not args.scores:
        raise UsageError("--scores is required")
    try:
        scores = np.array([float(s) for s in args.scores.split(",")])
    except ValueError:
        raise UsageError("--scores must be a comma-separated list of numbers") from None
    res = soft_rank_ascending(scores, SoftRankConfig(args.epsilon))
    emit({
        "epsilon": args.epsilon,
        "ranks": res.ranks.tolist(),
        "normalized": (res.ranks / (scores.size + 1)).tolist(),
        "hard_ranks": hard_rank_ascending(scores).tolist(),
        "blocks": [list(b) for b in res.blocks],
    })
    return 0


def cmd_weights(args) -> int:
    if args.grid < 1:
        raise UsageError("--grid must be >= 1")
    grid = (np.arange(args.grid) + 0.5) / args.grid
    curves = weight_curves(args.gamma, grid)
    keys = ("p", "focal", "inverse_focal", "aurc", "focal_norm", "inverse_focal_norm", "aurc_norm")
    text = csv_text(keys, zip(*(curves[key] for key in keys)))
    out = _out_dir(args)
    if out is not None:
        write_text_atomic(out / "weights.csv", text)
    sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="selcal", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=fn)
        p.add_argument("--config", help="JSON file of flag values; explicit flags win")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out-dir")
        return p

    p = add("gen-data", cmd_gen_data, "write a seeded Gaussian-mixture dataset with exact posteriors")
    p.add_argument("--n", type=int, default=4000)
    p.add_argument("--n-test", type=int, default=2000)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--radius", type=float, default=1.55)
    p.add_argument("--variance", type=float, default=1.0)

    p = add("train", cmd_train, "train an MLP and report metrics")
    p.add_argument("--data")
    p.add_argument("--test-data")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--loss", choices=LOSSES, default="xe")
    p.add_argument("--gamma", type=float, default=2.0)
    p.add_argument("--lambda", dest="lam", type=float, default=0.5)
    p.add_argument("--epsilon", type=float, default=0.05)
    p.add_argument("--csf", choices=CSFS, default="msp")
    p.add_argument("--hidden", default="32")
    p.add_argument("--activation", choices=("relu", "tanh"), default="relu")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--lr-drop-epoch", type=int, default=None)
    p.add_argument("--lr-drop", type=float, default=0.1)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--weight-decay", type=float, default=5e-4)
    p.add_argument("--bins", type=int, default=15)
    p.add_argument("--export-preds")

    p = add("eval", cmd_eval, "metric report for a prediction dump")
    p.add_argument("--preds")
    p.add_argument("--bins", type=int, default=15)
    p.add_argument("--binning", choices=[b.value for b in BinKind], default="ew")
    p.add_argument("--csf", choices=CSFS, default="msp")
    p.add_argument("--reliability-bins", type=int, default=10)
    p.add_argument("--risk", choices=("xe", "01"), default="xe", help="loss used for the risk-coverage CSV")

    p = add("calibrate", cmd_calibrate, "post-hoc calibration of a prediction dump")
    p.add_argument("--preds")
    p.add_argument("--method", choices=("temp", "ece-map", "cwece-map"), default="temp")
    p.add_argument("--tau", type=float)
    p.add_argument("--csf", choices=CSFS, default="msp")
    p.add_argument("--bins", type=int, default=15)
    p.add_argument("--t-min", type=float, default=0.5)
    p.add_argument("--t-max", type=float, default=3.0)
    p.add_argument("--t-step", type=float, default=0.01)

    p = add("gradcheck", cmd_gradcheck, "finite-difference check of a loss gradient")
    p.add_argument("--loss", choices=LOSSES, default="raurc")
    p.add_argument("--gamma", type=float, default=2.0)
    p.add_argument("--lambda", dest="lam", type=float, default=0.5)
    p.add_argument("--epsilon", type=float, default=0.05)
    p.add_argument("--csf", choices=CSFS, default="msp")
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--mlp", action="store_true", help="check network parameter gradients instead")

    p = add("softrank", cmd_softrank, "soft ranks of a score vector")
    p.add_argument("--scores", help="comma-separated scores (required)")
    p.add_argument("--epsilon", type=float, default=0.05)

    p = add("weights", cmd_weights, "focal / inverse focal / AURC weight curves as CSV")
    p.add_argument("--gamma", type=float, default=3.0)
    p.add_argument("--grid", type=int, default=101)
    return parser


def _apply_config(parser, argv):
    """Re-parse with values from ``--config`` as defaults so flags still override."""
    args = parser.parse_args(argv)
    if not getattr(args, "config", None):
        return args
    cfg_path = _existing(args.config, "--config")
    try:
        cfg = json.loads(cfg_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UsageError(f"--config: malformed JSON ({exc.msg})") from None
    if not isinstance(cfg, dict):
        raise UsageError("--config must hold a JSON object")
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in sub._actions} - {"help", "config", "func"}
    aliases = {"lambda": "lam"}
    values = {}
    for key, value in cfg.items():
        dest = aliases.get(key, key.replace("-", "_"))
        if dest not in known:
            raise UsageError(f"--config: unknown key {key!r}")
        values[dest] = value
    sub.set_defaults(**values)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = _apply_config(parser, argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (UsageError, PredictionFileError, ValueError, FileNotFoundError) as exc:
        sys.stderr.write(f"selcal: error: {exc}\n")
        return 1
    except TrainingDiverged as exc:
        sys.stderr.write(f"selcal: training diverged: {exc}\n")
        return 2
    except Exception as exc:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        sys.stderr.write(f"selcal: runtime failure: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
