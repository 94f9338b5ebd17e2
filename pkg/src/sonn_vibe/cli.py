"""`sonn-vibe`: ingestion, synthesis, training, evaluation, and reporting.

Exit codes: 0 success, 1 argument errors, 2 data/format errors. Diagnostics
go to stderr; results go to stdout or the file given with --out.
"""

from __future__ import annotations

import argparse
import contextlib
import os
import sys
import time
from dataclasses import replace

import numpy as np

from . import metrics, model as model_mod, nn, synthgen, train as train_mod
from .configfile import read_kv
from .errors import FormatError
from .signal import (CLASS_ABBREV, CLASS_NAMES, ingest_path, make_dataset,
                     make_frames, normalize_frame, write_csv)

CLASS_FLAGS = {"healthy": 0, "early": 1, "moderate": 2, "severe": 3}
KIND_FLAGS = {"inner": synthgen.FaultKind.INNER_RACE,
              "rolling": synthgen.FaultKind.ROLLING_ELEMENT}


class _ArgError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _ArgError(message)


def _build_parser() -> _Parser:
    p = _Parser(prog="sonn-vibe", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--out", help="write results to this file instead of stdout")
        sp.add_argument("--csv", action="store_true", help="machine-readable output")

    sp = sub.add_parser("ingest", help="read a recording and summarize its frames")
    sp.add_argument("input", help="CSV or whitespace-separated recording file")
    sp.add_argument("--channels", default="0,1", help="two column indices, e.g. 4,5")
    sp.add_argument("--frame-len", type=int, default=1000)
    sp.add_argument("--skip-header", action="store_true")
    common(sp, config=False)
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("synth", help="generate a synthetic recording as CSV")
    sp.add_argument("--class", dest="class_name", required=True,
                    choices=sorted(CLASS_FLAGS))
    sp.add_argument("--kind", choices=sorted(KIND_FLAGS), default="inner")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--duration", type=float, default=1.0, help="seconds")
    sp.add_argument("--rate", type=float, default=20480.0, help="sample rate in Hz")
    common(sp)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("train", help="train a classifier (hold-out or --cv)")
    _data_flags(sp)
    _train_flags(sp)
    sp.add_argument("--cv", action="store_true",
                    help="full cross-validation instead of a single hold-out run")
    sp.add_argument("--jobs", type=int, default=1, help="parallel (fold, run) workers")
    sp.add_argument("--log", help="write the per-epoch CSV log here")
    sp.add_argument("--config", help="key = value config file")
    sp.add_argument("--out", help="hold-out mode: save the trained model here; "
                                  "--cv mode: write the report here")
    sp.add_argument("--csv", action="store_true", help="machine-readable output")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a saved model")
    sp.add_argument("--model", required=True)
    _data_flags(sp)
    sp.add_argument("--folds", type=int, default=None)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--split", choices=("test", "all"), default="test",
                    help="held-out fold of the training split, or every frame")
    common(sp)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("classify", help="classify each frame of a recording")
    sp.add_argument("--model", required=True)
    sp.add_argument("input", help="recording file to classify")
    sp.add_argument("--channels", default="0,1")
    sp.add_argument("--skip-header", action="store_true")
    common(sp, config=False)
    sp.set_defaults(func=cmd_classify)

    sp = sub.add_parser("complexity", help="parameter and MAC accounting")
    sp.add_argument("--q", type=int, default=None)
    sp.add_argument("--widths", default=None, help="comma list, e.g. 32,24,16")
    common(sp)
    sp.set_defaults(func=cmd_complexity)

    sp = sub.add_parser("gradcheck", help="finite-difference gradient self-check")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--trials", type=int, default=20)
    sp.add_argument("--step", type=float, default=1e-5)
    sp.add_argument("--tol", type=float, default=1e-4)
    common(sp, config=False)
    sp.set_defaults(func=cmd_gradcheck)
    return p


def _data_flags(sp):
    sp.add_argument("--data-dir",
                    help="directory with healthy/ early/ moderate/ severe/ subdirs; "
                         "omitted = bundled synthetic dataset")
    sp.add_argument("--channels", default="0,1")
    sp.add_argument("--skip-header", action="store_true")
    sp.add_argument("--frame-len", type=int, default=None)
    sp.add_argument("--frames-per-class", type=int, default=None,
                    help="synthetic dataset size (default 400)")
    sp.add_argument("--kind", choices=sorted(KIND_FLAGS), default="inner")


def _train_flags(sp):
    sp.add_argument("--q", type=int, default=None)
    sp.add_argument("--widths", default=None)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--folds", type=int, default=None)
    sp.add_argument("--runs", type=int, default=None)
    sp.add_argument("--lr", type=float, default=None)
    sp.add_argument("--epochs", type=int, default=None)
    sp.add_argument("--batch", type=int, default=None)


def _parse_channels(text: str) -> tuple[int, int]:
    parts = text.split(",")
    if len(parts) != 2:
        raise ValueError(f"--channels expects two comma-separated indices, got {text!r}")
    return int(parts[0]), int(parts[1])


def _pick(flag, kv: dict[str, str], key: str, conv, default):
    """Flag overrides config file overrides default."""
    if flag is not None:
        return flag
    if key in kv:
        return conv(kv[key])
    return default


def _load_kv(args) -> dict[str, str]:
    cfg_path = getattr(args, "config", None)
    return read_kv(cfg_path) if cfg_path else {}


def _network_config(args, kv) -> model_mod.NetworkConfig:
    q = _pick(getattr(args, "q", None), kv, "net.q", int, 1)
    widths_text = _pick(getattr(args, "widths", None), kv, "net.widths", str, "16,12,8")
    widths = tuple(int(w) for w in str(widths_text).split(","))
    frame_len = _pick(getattr(args, "frame_len", None), kv, "net.frame_len", int, 1000)
    mlp_hidden = int(kv.get("net.mlp_hidden", 16))
    return model_mod.default_config(q=q, widths=widths, frame_len=frame_len,
                                    mlp_hidden=mlp_hidden)


def _train_config(args, kv) -> train_mod.TrainConfig:
    return train_mod.TrainConfig(
        learning_rate=_pick(args.lr, kv, "train.lr", float, 0.2),
        max_epochs=_pick(args.epochs, kv, "train.epochs", int, 50),
        early_stop_train_error=float(kv.get("train.early_stop", 0.03)),
        folds=_pick(args.folds, kv, "train.folds", int, 10),
        runs_per_fold=_pick(getattr(args, "runs", None), kv, "train.runs", int, 5),
        batch_size=_pick(getattr(args, "batch", None), kv, "train.batch", int, 16),
        seed=_pick(args.seed, kv, "train.seed", int, 0),
    )


def _load_dataset(args, kv, frame_len: int, seed: int):
    if args.data_dir:
        recordings = []
        for name in ("healthy", "early", "moderate", "severe"):
            class_dir = os.path.join(args.data_dir, name)
            if not os.path.isdir(class_dir):
                raise FormatError(f"missing class directory {class_dir}")
            files = sorted(os.listdir(class_dir))
            if not files:
                raise FormatError(f"no recordings under {class_dir}")
            for fname in files:
                rec = ingest_path(os.path.join(class_dir, fname),
                                  _parse_channels(args.channels),
                                  skip_header=args.skip_header)
                recordings.append((rec, CLASS_FLAGS[name]))
        return make_dataset(recordings, frame_len=frame_len)
    frames_per_class = args.frames_per_class or 400
    return synthgen.synthetic_dataset(
        frames_per_class=frames_per_class,
        kind=KIND_FLAGS[args.kind],
        geometry=synthgen.geometry_from_config(kv),
        profile=synthgen.profile_from_config(kv),
        frame_len=frame_len,
        seed=seed,
    )


@contextlib.contextmanager
def _output(args):
    if getattr(args, "out", None):
        with open(args.out, "w") as fh:
            yield fh
    else:
        yield sys.stdout


def cmd_ingest(args) -> int:
    rec = ingest_path(args.input, _parse_channels(args.channels),
                      skip_header=args.skip_header)
    frames = make_frames(rec, args.frame_len)
    with _output(args) as out:
        if args.csv:
            out.write("source,samples,sample_rate,frames,frame_len\n")
            out.write(f"{rec.source_id},{rec.n_samples},{rec.sample_rate},"
                      f"{len(frames)},{args.frame_len}\n")
        else:
            out.write(f"source:      {rec.source_id}\n")
            out.write(f"samples:     {rec.n_samples} per channel "
                      f"({rec.duration:.3f} s at {rec.sample_rate:.0f} Hz)\n")
            out.write(f"channels:    {', '.join(rec.channel_names)}\n")
            out.write(f"frames:      {len(frames)} x {args.frame_len} samples "
                      f"(remainder {rec.n_samples % args.frame_len} discarded)\n")
            for i, name in enumerate(rec.channel_names):
                ch = rec.channels[i]
                out.write(f"  {name}: mean {ch.mean():+.5f}  std {ch.std():.5f}  "
                          f"min {ch.min():+.5f}  max {ch.max():+.5f}\n")
    return 0


def cmd_synth(args) -> int:
    kv = _load_kv(args)
    rec = synthgen.synthesize(
        synthgen.geometry_from_config(kv),
        KIND_FLAGS[args.kind],
        CLASS_FLAGS[args.class_name],
        synthgen.profile_from_config(kv),
        duration=args.duration,
        sample_rate=args.rate,
        seed=args.seed,
    )
    if args.out:
        write_csv(rec, args.out)
        print(f"wrote {rec.n_samples} samples x 2 channels to {args.out}",
              file=sys.stderr)
    else:
        for row in rec.channels.T:
            sys.stdout.write(",".join(repr(float(v)) for v in row) + "\n")
    return 0


def cmd_train(args) -> int:
    kv = _load_kv(args)
    net_cfg = _network_config(args, kv)
    tc = _train_config(args, kv)
    seed = tc.seed if isinstance(tc.seed, int) else 0
    ds = _load_dataset(args, kv, net_cfg.frame_len, seed)
    names = tuple(CLASS_ABBREV)

    if args.cv:
        started = time.time()
        result = train_mod.cross_validate(ds, net_cfg, tc, jobs=args.jobs)
        with _output(args) as out:
            if args.csv:
                out.write("fold,run,accuracy,macro_f1,epochs\n")
                for f in result.folds:
                    for j, rep in enumerate(f.run_reports):
                        out.write(f"{f.fold},{j},{rep.accuracy:.6f},"
                                  f"{rep.macro_f1():.6f},{f.epochs[j]}\n")
                out.write(f"pooled,,{result.pooled.accuracy:.6f},"
                          f"{result.pooled.macro_f1():.6f},\n")
            else:
                for f in result.folds:
                    out.write(f"fold {f.fold}: accuracy {f.mean.accuracy:.4f}  "
                              f"macro-F1 {f.mean.macro_f1():.4f}  epochs {f.epochs}\n")
                out.write(f"\nmean accuracy over folds: {result.mean_accuracy():.4f}\n")
                out.write(f"mean macro-F1 over folds:  {result.mean_macro_f1():.4f}\n\n")
                out.write("pooled test metrics:\n")
                out.write(metrics.report_table(result.pooled, names))
        print(f"cross-validation finished in {time.time() - started:.1f} s",
              file=sys.stderr)
        return 0

    x, y = ds.arrays()
    train_idx, test_idx = train_mod.holdout_split(y, tc.folds, seed)
    init_seed, shuffle_seed = np.random.SeedSequence(seed).spawn(2)
    m = model_mod.build_model(net_cfg, init_seed)
    result = train_mod.train_one(m, (x[train_idx], y[train_idx]),
                                 replace(tc, seed=shuffle_seed))
    report = train_mod.evaluate(result.model, (x[test_idx], y[test_idx]))
    if args.log:
        with open(args.log, "w") as fh:
            fh.write(train_mod.history_csv(result.history))
    out = sys.stdout
    out.write(f"trained {result.epochs} epochs, final train error "
              f"{result.final_train_error:.4f}\n")
    out.write("held-out fold metrics:\n")
    out.write(metrics.report_csv(report, names) if args.csv
              else metrics.report_table(report, names))
    if args.out:
        model_mod.save_model(result.model, args.out)
        print(f"saved model to {args.out}", file=sys.stderr)
    return 0


def cmd_eval(args) -> int:
    kv = _load_kv(args)
    m = model_mod.load_model(args.model)
    seed = args.seed if args.seed is not None else 0
    folds = args.folds if args.folds is not None else 10
    ds_args = args
    ds = _load_dataset(ds_args, kv, m.config.frame_len, seed)
    x, y = ds.arrays()
    if args.split == "test":
        _, test_idx = train_mod.holdout_split(y, folds, seed)
        x, y = x[test_idx], y[test_idx]
    report = train_mod.evaluate(m, (x, y))
    with _output(args) as out:
        out.write(metrics.report_csv(report, CLASS_ABBREV) if args.csv
                  else metrics.report_table(report, CLASS_ABBREV))
    return 0


def cmd_classify(args) -> int:
    m = model_mod.load_model(args.model)
    rec = ingest_path(args.input, _parse_channels(args.channels),
                      skip_header=args.skip_header)
    frames = [normalize_frame(f) for f in make_frames(rec, m.config.frame_len)]
    if not frames:
        raise FormatError(f"{args.input}: shorter than one frame "
                          f"({m.config.frame_len} samples)")
    engine = model_mod.InferenceEngine(m)
    x = np.stack([f.samples for f in frames])
    scores = engine.scores(x)
    preds = scores.argmax(axis=1)
    with _output(args) as out:
        if args.csv:
            out.write("frame,class_id,class," +
                      ",".join(f"score_{n}" for n in CLASS_ABBREV) + "\n")
            for i, (p, s) in enumerate(zip(preds, scores)):
                out.write(f"{i},{p},{CLASS_NAMES[p]}," +
                          ",".join(f"{v:.6f}" for v in s) + "\n")
        else:
            for i, (p, s) in enumerate(zip(preds, scores)):
                pretty = " ".join(f"{n}:{v:+.3f}" for n, v in zip(CLASS_ABBREV, s))
                out.write(f"frame {i:4d}: {CLASS_NAMES[p]:<14} [{pretty}]\n")
            counts = np.bincount(preds, minlength=4)
            summary = ", ".join(f"{CLASS_NAMES[c]} {counts[c]}" for c in range(4))
            out.write(f"summary: {summary}\n")
    return 0


def cmd_complexity(args) -> int:
    kv = _load_kv(args)
    cfg = _network_config(args, kv)
    report = model_mod.complexity_report(cfg)
    with _output(args) as out:
        if args.csv:
            out.write("layer,params,macs\n")
            for layer in report.layers:
                out.write(f"{layer.name},{layer.params},{layer.macs}\n")
            out.write(f"total,{report.total_params},{report.total_macs}\n")
        else:
            name_w = max(len(l.name) for l in report.layers) + 2
            out.write(f"{'layer':<{name_w}}{'PARs':>10}{'MACs':>12}\n")
            for layer in report.layers:
                out.write(f"{layer.name:<{name_w}}{layer.params:>10}{layer.macs:>12}\n")
            out.write(f"{'total':<{name_w}}{report.total_params:>10}"
                      f"{report.total_macs:>12}\n")
            out.write(f"total MACs: {report.macs_millions:.3f}M\n")
    return 0


def cmd_gradcheck(args) -> int:
    result = nn.gradient_check(seed=args.seed, trials=args.trials,
                               step=args.step, tolerance=args.tol)
    with _output(args) as out:
        for kind, err in sorted(result.per_kind.items()):
            out.write(f"{kind:<10} max rel err {err:.3e}\n")
        verdict = "PASS" if result.passed else "FAIL"
        out.write(f"max rel err {result.max_rel_err:.3e} < {result.tolerance:.0e}: "
                  f"{verdict}\n")
    return 0 if result.passed else 2


def run(argv) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _ArgError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(parser.format_usage(), file=sys.stderr, end="")
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except _ArgError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
