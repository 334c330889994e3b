"""Command-line entry point: ``drnn-har {train,eval,bench,synth,features}``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Every command accepts ``--config FILE`` with a JSON object whose keys are the
flag names (dashes or underscores); explicit flags override it.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .baseline import WindowSpec, select_features, train_baseline, trial_features, write_feature_csv
from .data import DatasetError, SynthSpec, load_dataset, synth_generate, write_dataset
from .evaluation import (
    bench_baseline,
    bench_rnn,
    confusion,
    evaluate,
    write_confusion_csv,
    write_prediction_csv,
)
from .modelio import ModelFormatError, load_model, save_model
from .network import NetworkConfig, footprint, parameter_count
from .training import AdamConfig, TrainConfig, train, write_stats

log = logging.getLogger("drnn_har")


class UsageError(Exception):
    """Bad flags, config or input paths (exit code 2)."""


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file of flag values; explicit flags take precedence")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="drnn-har", description=__doc__.splitlines()[0], formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train an LSTM network", formatter_class=fmt)
    p.add_argument("--manifest", help="dataset manifest (train/test/sequence roles)")
    p.add_argument("--out", default="run", help="output directory")
    p.add_argument("--epochs", type=int, default=80, help="training epochs")
    p.add_argument("--seed", type=int, default=0, help="random seed (init, shuffling, windows, dropout)")
    p.add_argument("--layers", type=int, default=3, help="internal LSTM layers")
    p.add_argument("--units", type=int, default=60, help="units per internal layer")
    p.add_argument("--truncated-time", type=int, default=30, help="truncated BPTT length T")
    p.add_argument("--clip", type=float, default=5.0, help="gradient-norm clipping threshold c")
    p.add_argument("--dropout", type=float, default=0.5, help="dropout rate p")
    p.add_argument("--batch-size", type=int, default=20, help="trials per mini-batch")
    p.add_argument("--window", type=int, default=1200, help="time steps per mini-batch window K'")
    p.add_argument("--lr", type=float, default=1e-3, help="Adam step size")
    p.add_argument("--beta1", type=float, default=0.9, help="Adam first-moment decay")
    p.add_argument("--beta2", type=float, default=0.999, help="Adam second-moment decay")
    p.add_argument("--adam-eps", type=float, default=1e-8, help="Adam denominator epsilon")
    p.add_argument("--threads", type=int, default=1, help="evaluation threads; 1 is the reference mode")
    p.add_argument("--timing", action="store_true", help="add a wall-clock seconds column to stats.csv")
    _add_common(p)

    p = sub.add_parser("eval", help="per-sample recognition of a dataset", formatter_class=fmt)
    p.add_argument("--model", help="model file")
    p.add_argument("--manifest", help="dataset manifest")
    p.add_argument("--role", action="append", choices=["train", "test", "sequence"],
                   help="roles to evaluate (repeatable); default: every role present")
    p.add_argument("--out", default="eval", help="output directory")
    p.add_argument("--threads", type=int, default=1, help="evaluation threads")
    _add_common(p)

    p = sub.add_parser("bench", help="recognition throughput benchmark", formatter_class=fmt)
    p.add_argument("--model", help="model file")
    p.add_argument("--manifest", help="dataset manifest")
    p.add_argument("--role", default="sequence", help="role to time (falls back to every trial if absent)")
    p.add_argument("--reps", type=int, default=5, help="repetitions; the minimum is reported")
    p.add_argument("--baseline", action="store_true",
                   help="also time the window-feature baseline (trained on the train role, untimed)")
    p.add_argument("--window-seconds", type=float, default=5.0, help="feature window length [s]")
    p.add_argument("--shift-seconds", type=float, default=2.5, help="feature window shift [s]")
    p.add_argument("--out", default="bench", help="output directory")
    _add_common(p)

    p = sub.add_parser("synth", help="generate a synthetic dataset", formatter_class=fmt)
    p.add_argument("--classes", type=int, default=6, help="number of classes")
    p.add_argument("--trials-per-class", type=int, default=25, help="training trials per class")
    p.add_argument("--test-per-class", type=int, default=6, help="test trials per class")
    p.add_argument("--sequence-trials", type=int, default=3, help="multi-class sequence trials")
    p.add_argument("--len", type=int, default=2000, help="samples per segmented trial")
    p.add_argument("--segment-len", type=int, default=None, help="samples per class segment in sequence trials")
    p.add_argument("--noise", type=float, default=0.05, help="Gaussian noise std [G]")
    p.add_argument("--sample-rate", type=float, default=100.0, help="sampling rate [Hz]")
    p.add_argument("--seed", type=int, default=1, help="random seed")
    p.add_argument("--out", default="synth", help="output directory")
    _add_common(p)

    p = sub.add_parser("features", help="dump 27 window features per window", formatter_class=fmt)
    p.add_argument("--manifest", help="dataset manifest")
    p.add_argument("--role", choices=["train", "test", "sequence"], help="restrict to one role")
    p.add_argument("--window-seconds", type=float, default=5.0, help="feature window length [s]")
    p.add_argument("--shift-seconds", type=float, default=2.5, help="feature window shift [s]")
    p.add_argument("--out", default="features.csv", help="output CSV path")
    _add_common(p)
    return parser


def _explicit_dests(sub: argparse.ArgumentParser, argv) -> set[str]:
    given = set()
    for action in sub._actions:
        for opt in action.option_strings:
            if any(a == opt or a.startswith(opt + "=") for a in argv):
                given.add(action.dest)
    return given


def _apply_config(args, sub: argparse.ArgumentParser, argv) -> None:
    if not args.config:
        return
    path = Path(args.config)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "config")}
    explicit = _explicit_dests(sub, argv)
    for key, value in doc.items():
        dest = key.replace("-", "_")
        if dest not in actions:
            raise UsageError(f"unknown key {key!r} in config file {path}")
        if dest in explicit:
            continue
        action = actions[dest]
        if action.type is not None and value is not None and not isinstance(value, list):
            try:
                value = action.type(value)
            except (TypeError, ValueError):
                raise UsageError(f"config key {key!r}: bad value {value!r}") from None
        setattr(args, dest, value)


def _require(args, *names) -> None:
    missing = [n for n in names if getattr(args, n) is None]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + n.replace("_", "-") for n in missing))


def _load_manifest(path, threads: int = 1):
    try:
        return load_dataset(path, threads=threads)
    except DatasetError as exc:
        raise UsageError(str(exc)) from None


def _load_model(path):
    if not Path(path).is_file():
        raise UsageError(f"model file not found: {path}")
    return load_model(path)


def cmd_train(args) -> int:
    _require(args, "manifest")
    dataset = _load_manifest(args.manifest, args.threads)
    try:
        net = NetworkConfig(3, args.layers, args.units, dataset.num_classes)
        cfg = TrainConfig(
            truncated_time=args.truncated_time,
            clip=args.clip,
            dropout=args.dropout,
            batch_size=args.batch_size,
            window=args.window,
            epochs=args.epochs,
            adam=AdamConfig(args.lr, args.beta1, args.beta2, args.adam_eps),
            seed=args.seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log.info("training %s: %d trainable parameters, footprint %d", net, parameter_count(net), footprint(net))
    params, stats = train(net, cfg, dataset, threads=args.threads)
    meta = {"train_config": cfg.to_dict(), "classes": list(dataset.class_names), "epochs_run": len(stats)}
    save_model(out / "model.bin", params, seed=args.seed, metadata=meta)
    write_stats(out / "stats.csv", stats, with_seconds=args.timing)
    if stats:
        last = stats[-1]
        print(f"epoch {last.epoch}: loss {last.train_loss:.4f} train {last.train_acc:.4f} "
              f"test {last.test_acc} seq {last.seq_acc}")
    print(f"wrote {out / 'model.bin'} and {out / 'stats.csv'}")
    return 0


def _class_names(header, dataset):
    names = header.get("metadata", {}).get("classes")
    if names and list(names) != list(dataset.class_names):
        raise UsageError(f"model classes {names} differ from manifest classes {list(dataset.class_names)}")
    return dataset.class_names


def cmd_eval(args) -> int:
    _require(args, "model", "manifest")
    params, header = _load_model(args.model)
    dataset = _load_manifest(args.manifest, args.threads)
    if params.config.num_classes != dataset.num_classes:
        raise ValueError(f"model has {params.config.num_classes} outputs, manifest lists {dataset.num_classes} classes")
    names = _class_names(header, dataset)
    roles = args.role or [r for r in ("train", "test", "sequence") if len(dataset.by_role(r))]
    out = Path(args.out)
    (out / "predictions").mkdir(parents=True, exist_ok=True)
    report = {}
    for role in roles:
        trials = dataset.by_role(role).trials
        if not trials:
            raise UsageError(f"manifest has no {role!r} trials")
        result = evaluate(params, trials, threads=args.threads)
        matrix = confusion(result.predictions, dataset.num_classes)
        write_confusion_csv(out / f"confusion_{role}.csv", matrix, names)
        for pred in result.predictions:
            write_prediction_csv(out / "predictions" / f"{pred.trial_id}.csv", pred, names)
        report[role] = {
            "rate": result.rate,
            "sample_weighted_rate": result.weighted,
            "trials": len(trials),
            "per_trial": {p.trial_id: float((p.predicted == p.true).mean()) for p in result.predictions},
        }
        print(f"{role}: recognition rate {result.rate:.4f} (sample-weighted {result.weighted:.4f}, {len(trials)} trials)")
    (out / "report.json").write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    return 0


def cmd_bench(args) -> int:
    _require(args, "model", "manifest")
    params, _ = _load_model(args.model)
    dataset = _load_manifest(args.manifest)
    trials = dataset.by_role(args.role).trials or dataset.trials
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    reports = {"rnn": bench_rnn(params, trials, args.reps).to_dict()}
    print(f"RNN: {reports['rnn']['recognition_ms']:.4f} ms per sample", file=sys.stderr)
    if args.baseline:
        rate = trials[0].sample_rate
        spec = WindowSpec(args.window_seconds, args.shift_seconds, rate)
        fit_on = dataset.by_role("train").trials or trials
        feats, labels = trial_features([t for t in fit_on if len(t) >= spec.window_len], spec)
        model = train_baseline(select_features(feats), labels, dataset.num_classes)
        rep = bench_baseline(model, trials, spec, args.reps)
        reports["baseline"] = rep.to_dict()
        print(rep.to_text(), file=sys.stderr)
    text = json.dumps(reports, indent=2)
    (out / "bench.json").write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def cmd_synth(args) -> int:
    try:
        spec = SynthSpec(
            num_classes=args.classes,
            noise_std=args.noise,
            length=args.len,
            trials_per_class=args.trials_per_class,
            test_per_class=args.test_per_class,
            sequence_trials=args.sequence_trials,
            segment_length=args.segment_len,
            sample_rate=args.sample_rate,
            seed=args.seed,
        )
        spec.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    path = write_dataset(synth_generate(spec), args.out)
    print(f"wrote {path}")
    return 0


def cmd_features(args) -> int:
    _require(args, "manifest")
    dataset = _load_manifest(args.manifest)
    trials = dataset.by_role(args.role).trials if args.role else dataset.trials
    if not trials:
        raise UsageError("no trials selected")
    spec = WindowSpec(args.window_seconds, args.shift_seconds, trials[0].sample_rate)
    feats, labels = trial_features(trials, spec)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_feature_csv(args.out, feats, labels, dataset.class_names)
    print(f"wrote {len(labels)} windows to {args.out}")
    return 0


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "bench": cmd_bench, "synth": cmd_synth, "features": cmd_features}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    sub = parser._subparsers._group_actions[0].choices[args.command]
    try:
        _apply_config(args, sub, argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"drnn-har {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (ModelFormatError, ValueError, OSError) as exc:
        print(f"drnn-har {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
