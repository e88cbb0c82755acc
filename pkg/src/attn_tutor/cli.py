"""Command-line entry point: data generation, training, evaluation, the
eta ablation, map comparison, report rendering, and gradient checks.

Exit codes: 0 success, 1 configuration errors, 2 runtime aborts.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import fields

import numpy as np

from . import data as D
from . import metrics as ME
from . import model as M
from . import report as R
from . import tensor as T
from . import train as TR
from .tensor import Tensor

META_KEY = "meta.config"
_FIELD_TYPES = {"int": int, "float": float, "str": str}


class UsageError(ValueError):
    """Bad flags or config values; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _read_config_file(path):
    """Line-oriented `key = value` settings; '#' starts a comment."""
    values = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as err:
        raise UsageError(f"cannot read config file: {err}")
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected `key = value`, got {raw!r}")
        key, value = line.split("=", 1)
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _train_flags(parser):
    parser.add_argument("--config", help="key = value file; flags take precedence")
    parser.add_argument("--feature-dim", type=int, default=32,
                        help="region feature width d")
    for f in fields(TR.TrainConfig):
        flag = "--" + f.name.replace("_", "-")
        parser.add_argument(flag, type=_FIELD_TYPES[f.type], default=f.default,
                            help=f"TrainConfig.{f.name}")


def _explicit(argv, flag):
    return any(a == flag or a.startswith(flag + "=") for a in argv)


def _resolve_train_config(args, argv):
    overrides = _read_config_file(args.config) if args.config else {}
    kwargs = {}
    for f in fields(TR.TrainConfig):
        flag = "--" + f.name.replace("_", "-")
        value = getattr(args, f.name)
        if not _explicit(argv, flag) and f.name in overrides:
            try:
                value = _FIELD_TYPES[f.type](overrides[f.name])
            except ValueError:
                raise UsageError(
                    f"config file value for {f.name} is not a {f.type}: "
                    f"{overrides[f.name]!r}"
                )
        kwargs[f.name] = value
    try:
        return TR.TrainConfig(**kwargs)
    except ValueError as err:
        raise UsageError(str(err))


def _model_config_for(dataset, feature_dim):
    try:
        return M.VqaModelConfig(
            image_size=dataset.spec.image_size,
            region_grid=dataset.spec.grid,
            feature_dim=feature_dim,
            question_vocab=D.VOCAB_SIZE,
            answer_classes=D.N_CLASSES,
            recurrent_hidden=feature_dim,
        )
    except ValueError as err:
        raise UsageError(str(err))


def _write_resolved_config(path, mapping):
    lines = [f"{key} = {mapping[key]}" for key in sorted(mapping)]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _config_mapping(config, extra):
    out = {f.name: getattr(config, f.name) for f in fields(TR.TrainConfig)}
    out.update(extra)
    return out


def _save_model(path, model_config, params):
    mc = model_config
    meta = np.array(
        [mc.image_size, mc.region_grid, mc.feature_dim, mc.question_vocab,
         mc.answer_classes, mc.recurrent_hidden],
        dtype=np.float64,
    )
    arrays = {name: t.data for name, t in params.items()}
    arrays[META_KEY] = meta
    M.save_checkpoint(path, arrays)


def _load_model(path):
    arrays = M.load_checkpoint(path)
    if META_KEY not in arrays:
        raise UsageError(f"checkpoint {path} lacks a {META_KEY} section")
    meta = arrays.pop(META_KEY)
    mc = M.VqaModelConfig(
        image_size=int(meta[0]), region_grid=int(meta[1]), feature_dim=int(meta[2]),
        question_vocab=int(meta[3]), answer_classes=int(meta[4]),
        recurrent_hidden=int(meta[5]),
    )
    params = {name: Tensor(a, requires_grad=True) for name, a in arrays.items()}
    return mc, params


def _workers():
    raw = os.environ.get("ATTN_TUTOR_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise UsageError(f"ATTN_TUTOR_THREADS must be an integer, got {raw!r}")


def _load_dataset(path):
    try:
        return D.read_container(path)
    except FileNotFoundError:
        raise UsageError(f"dataset container not found: {path}")


def _cmd_gen_data(args):
    spec = D.DatasetSpec(
        n_samples=args.n, image_size=args.image_size, grid=args.grid, seed=args.seed
    )
    dataset = D.generate(spec)
    D.write_container(args.out, dataset)
    _write_resolved_config(
        args.out + ".config.txt",
        {"n": args.n, "image_size": args.image_size, "grid": args.grid,
         "seed": args.seed, "out": args.out},
    )
    print(f"wrote {args.n} samples to {args.out}")
    return 0


def _summary_text(config, state, run_report):
    lines = [f"fingerprint = {run_report.fingerprint}", f"variant = {config.variant}"]
    for entry in state.warm_history:
        lines.append(f"warm epoch {entry['epoch']}: accuracy {entry['accuracy']:.4f}")
    for rec in run_report.records:
        m = rec.metrics
        lines.append(
            f"epoch {rec.epoch}: ce {rec.ce_loss:.4f} d {rec.d_loss:.4f} "
            f"g {rec.g_loss:.4f} js {rec.js_term:.4f} chi2 {rec.chi2_term:.4f} "
            f"match {rec.match_loss:.4f} | rc {m.rank_correlation:.4f} "
            f"emd {m.emd:.4f} entropy {m.entropy:.4f} overlap {m.overlap:.4f} "
            f"accuracy {m.accuracy:.4f}"
        )
    return "\n".join(lines) + "\n"


def _cmd_train(args, argv):
    config = _resolve_train_config(args, argv)
    dataset = _load_dataset(args.data)
    mc = _model_config_for(dataset, args.feature_dim)
    os.makedirs(args.out, exist_ok=True)
    ckpt_path = os.path.join(args.out, "checkpoint.atck")
    try:
        state, run_report = TR.run_training(mc, dataset, config)
    except TR.TrainingAbort as abort:
        arrays = dict(abort.last_good)
        arrays[META_KEY] = np.array(
            [mc.image_size, mc.region_grid, mc.feature_dim, mc.question_vocab,
             mc.answer_classes, mc.recurrent_hidden], dtype=np.float64)
        M.save_checkpoint(ckpt_path, arrays)
        print(f"{abort} (last-good checkpoint at {ckpt_path})", file=sys.stderr)
        return 2
    _save_model(ckpt_path, mc, state.params)
    TR.write_report_tsv(os.path.join(args.out, "log.tsv"), run_report)
    with open(os.path.join(args.out, "summary.txt"), "w", encoding="utf-8") as fh:
        fh.write(_summary_text(config, state, run_report))
    _write_resolved_config(
        os.path.join(args.out, "config.txt"),
        _config_mapping(config, {"data": args.data, "feature_dim": args.feature_dim}),
    )
    final = run_report.records[-1].metrics if run_report.records else None
    if final is not None:
        print(
            f"final rc {final.rank_correlation:.4f} emd {final.emd:.4f} "
            f"accuracy {final.accuracy:.4f}"
        )
    return 0


def _cmd_eval(args):
    mc, params = _load_model(args.checkpoint)
    dataset = _load_dataset(args.data)
    report = TR.evaluate(mc, params, dataset.samples, emd_limit=args.emd_limit)
    for name in ME.TSV_COLUMNS[2:]:
        attr = "rank_correlation" if name == "rc" else name
        print(f"{name} = {getattr(report, attr)!r}")
    if args.out:
        if os.path.exists(args.out):
            os.remove(args.out)
        ME.append_metrics_row(args.out, 0, "eval", report)
        _write_resolved_config(
            args.out + ".config.txt",
            {"checkpoint": args.checkpoint, "data": args.data,
             "emd_limit": args.emd_limit, "out": args.out},
        )
    return 0


def _cmd_sweep_eta(args, argv):
    config = _resolve_train_config(args, argv)
    dataset = _load_dataset(args.data)
    mc = _model_config_for(dataset, args.feature_dim)
    try:
        etas = tuple(float(v) for v in args.etas.split(","))
    except ValueError:
        raise UsageError(f"--etas must be comma-separated numbers, got {args.etas!r}")
    os.makedirs(args.out, exist_ok=True)
    try:
        results = TR.eta_sweep(mc, dataset, config, etas=etas, workers=_workers())
    except TR.TrainingAbort as abort:
        print(str(abort), file=sys.stderr)
        return 2
    sweep_path = os.path.join(args.out, "sweep.tsv")
    with open(sweep_path, "w", encoding="utf-8") as fh:
        fh.write("eta\trc\temd\tentropy\toverlap\taccuracy\n")
        for eta, run_report in results:
            m = run_report.records[-1].metrics
            fh.write(
                f"{eta!r}\t{m.rank_correlation!r}\t{m.emd!r}\t{m.entropy!r}"
                f"\t{m.overlap!r}\t{m.accuracy!r}\n"
            )
    _write_resolved_config(
        os.path.join(args.out, "config.txt"),
        _config_mapping(config, {"data": args.data, "etas": args.etas,
                                 "feature_dim": args.feature_dim}),
    )
    print(f"wrote {sweep_path}")
    return 0


def _cmd_compare_maps(args):
    if not os.path.isdir(args.left) or not os.path.isdir(args.right):
        raise UsageError("compare-maps expects two directories of CSV grids")
    results = R.compare_map_dirs(args.left, args.right)
    R.write_comparison_tsv(args.out, results)
    mean_rc = float(np.mean([rc for _, rc, _ in results]))
    mean_emd = float(np.mean([dist for _, _, dist in results]))
    print(f"{len(results)} maps compared: mean rc {mean_rc:.4f}, mean emd {mean_emd:.4f}")
    return 0


def _cmd_report(args):
    rows = []
    for path in args.log:
        rows.extend(R.read_metrics_tsv(path))
    os.makedirs(args.out, exist_ok=True)
    charts = {
        "entropy.svg": R.chart_from_log(rows, "entropy", "attention entropy by epoch"),
        "rc.svg": R.chart_from_log(rows, "rc", "rank correlation by epoch"),
    }
    if args.sweep:
        sweep_rows = R.read_sweep_tsv(args.sweep)
        charts["eta.svg"] = R.eta_chart(
            [r["eta"] for r in sweep_rows], [r["rc"] for r in sweep_rows]
        )
    for name, svg in charts.items():
        with open(os.path.join(args.out, name), "w", encoding="utf-8") as fh:
            fh.write(svg)
    with open(os.path.join(args.out, "summary.txt"), "w", encoding="utf-8") as fh:
        fh.write(R.summary_table(R.final_rows(rows)))
    _write_resolved_config(
        os.path.join(args.out, "config.txt"),
        {"logs": ",".join(args.log), "sweep": args.sweep or "", "out": args.out},
    )
    print(f"wrote {', '.join(sorted(charts))} and summary.txt to {args.out}")
    return 0


def _gradcheck_probes():
    rng = np.random.default_rng(0)

    def r(*shape):
        return rng.normal(size=shape)

    c2 = Tensor(r(4, 4))
    w = Tensor(r(3, 3, 2, 3))
    probes = [
        ("add", lambda x: T.tsum(T.square(x + c2)), r(4, 4)),
        ("mul", lambda x: T.tsum(x * c2 * x), r(4, 4)),
        ("div", lambda x: T.tsum(x / (T.square(c2) + 1.0)), r(4, 4)),
        ("relu", lambda x: T.tsum(T.relu(x)), r(4, 4) + 0.1),
        ("tanh", lambda x: T.tsum(T.tanh(x)), r(4, 4)),
        ("sigmoid", lambda x: T.tsum(T.sigmoid(x)), r(4, 4)),
        ("exp", lambda x: T.tsum(T.exp(x)), r(4, 4)),
        ("log", lambda x: T.tsum(T.log(T.square(x) + 1.0)), r(4, 4)),
        ("xlogy", lambda x: T.tsum(T.xlogy(T.square(x) + 0.5, T.square(x) + 0.5)), r(3, 3)),
        ("softmax", lambda x: T.tsum(T.square(T.softmax(x))), r(4, 5)),
        ("matmul", lambda x: T.tsum(T.matmul(x, c2)), r(5, 4)),
        ("conv2d", lambda x: T.tsum(T.square(T.conv2d(x, w, pad=1))), r(2, 5, 5, 2)),
        ("tmean", lambda x: T.tmean(T.square(x)), r(4, 6)),
        ("reshape", lambda x: T.tsum(T.square(T.reshape(x, (8, 2)))), r(4, 4)),
        ("transpose", lambda x: T.tsum(T.square(T.transpose(x, (1, 0)))), r(4, 5)),
    ]
    return probes


def _cmd_gradcheck(_args):
    worst = 0.0
    for name, f, x in _gradcheck_probes():
        err = T.grad_check(f, Tensor(x))
        worst = max(worst, err)
        print(f"{name:>10}: max relative error {err:.3e}")
    if worst >= 1e-4:
        print(f"FAIL: worst error {worst:.3e} >= 1e-4", file=sys.stderr)
        return 2
    print(f"OK: worst error {worst:.3e} < 1e-4")
    return 0


def build_parser():
    parser = _Parser(prog="attn-tutor", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic dataset container")
    p.add_argument("--n", type=int, required=True, help="number of samples")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--image-size", type=int, default=28)
    p.add_argument("--grid", type=int, default=7)
    p.add_argument("--out", required=True, help="container file path")

    p = sub.add_parser("train", help="warm start plus adversarial training")
    p.add_argument("--data", required=True, help="dataset container")
    p.add_argument("--out", required=True, help="output directory")
    _train_flags(p)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--emd-limit", type=int, default=50)
    p.add_argument("--out", help="optional TSV output path")

    p = sub.add_parser("sweep-eta", help="one adversarial run per eta")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--etas", default="0,0.1,0.01,1,10,100")
    _train_flags(p)

    p = sub.add_parser("compare-maps", help="per-sample rc/emd for two map dirs")
    p.add_argument("--left", required=True)
    p.add_argument("--right", required=True)
    p.add_argument("--out", required=True, help="comparison TSV path")

    p = sub.add_parser("report", help="SVG charts and a variant summary table")
    p.add_argument("--log", action="append", required=True,
                   help="metrics TSV; repeat for multiple runs")
    p.add_argument("--sweep", help="sweep TSV for the eta curve")
    p.add_argument("--out", required=True, help="output directory")

    sub.add_parser("gradcheck", help="finite-difference checks per primitive")
    return parser


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except SystemExit as err:  # --help
        return 0 if err.code in (0, None) else err.code
    try:
        if args.command == "gen-data":
            return _cmd_gen_data(args)
        if args.command == "train":
            return _cmd_train(args, argv)
        if args.command == "eval":
            return _cmd_eval(args)
        if args.command == "sweep-eta":
            return _cmd_sweep_eta(args, argv)
        if args.command == "compare-maps":
            return _cmd_compare_maps(args)
        if args.command == "report":
            return _cmd_report(args)
        return _cmd_gradcheck(args)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (ValueError, OSError, D.ContainerError, M.CheckpointError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (TR.TrainingAbort, ME.ConvergenceError) as err:
        print(f"runtime abort: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
