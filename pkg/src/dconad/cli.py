"""Command-line entry point: ``dconad {train,score,evaluate,synth,sweep,gradcheck}``.

Failures exit nonzero after printing one line ``error: <category>: <message>``
to stderr.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import RunConfig
from .data import generate_synthetic, save_csv_dataset
from .errors import ConfigError, DConADError
from .runner import evaluate, gradcheck, read_scores_csv, run_pipeline, score, sweep, train


def _build_config(args) -> RunConfig:
    config = RunConfig.load(args.config) if args.config else RunConfig()
    changes = {}
    if args.data:
        changes["data_dir"] = args.data
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out:
        changes["out_dir"] = args.out
    return config.replace(**changes).validate()


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--data", help="dataset directory (train.csv, test.csv, test_labels.csv)")
    common.add_argument("--out", help="output directory (overrides out_dir)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="dconad", description="Differencing-based contrastive anomaly detection")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="train and write checkpoint + trainlog")
    sp = sub.add_parser("score", parents=[common], help="score the test split with a checkpoint")
    sp.add_argument("--checkpoint", help="checkpoint path (default <out>/checkpoint.bin)")
    ep = sub.add_parser("evaluate", parents=[common], help="threshold, point-adjust and report P/R/F1")
    ep.add_argument("--scores", help="scores.csv path (default <out>/scores.csv)")
    sub.add_parser("synth", parents=[common], help="write the configured synthetic dataset as CSV")
    sub.add_parser("run", parents=[common], help="train, score and evaluate in one go")
    wp = sub.add_parser("sweep", parents=[common], help="grid sweep over one axis")
    wp.add_argument("--axis", required=True, choices=["heads", "d_model", "layers", "window", "ablation"])
    wp.add_argument("--values", required=True, help="comma-separated values")
    sub.add_parser("gradcheck", parents=[common], help="finite-difference check of every parameter group")
    return p


def _dispatch(args) -> int:
    config = _build_config(args)
    out = Path(config.out_dir)
    if args.command == "train":
        result = train(config, out)
        print(f"checkpoint={out / 'checkpoint.bin'} checksum={result.log.checksum}")
    elif args.command == "score":
        ckpt = Path(args.checkpoint) if args.checkpoint else out / "checkpoint.bin"
        if not ckpt.is_file():
            raise ConfigError(f"checkpoint: {ckpt} not found")
        score(config, ckpt, out)
        print(f"scores={out / 'scores.csv'}")
    elif args.command == "evaluate":
        path = Path(args.scores) if args.scores else out / "scores.csv"
        if not path.is_file():
            raise ConfigError(f"scores: {path} not found")
        scores, labels = read_scores_csv(path)
        report = evaluate(config, scores, labels, out)
        print(f"precision={report.precision:.6f} recall={report.recall:.6f} f1={report.f1:.6f}")
    elif args.command == "synth":
        if config.data_dir:
            raise ConfigError("synth: data_dir is set; synth writes a synthetic dataset instead")
        train_ds, test_ds = generate_synthetic(config.synth_spec(), config.seed)
        save_csv_dataset(out, train_ds, test_ds)
        print(f"dataset={out}")
    elif args.command == "run":
        _, _, report = run_pipeline(config, out)
        print(f"precision={report.precision:.6f} recall={report.recall:.6f} f1={report.f1:.6f}")
    elif args.command == "sweep":
        values = [v.strip() for v in args.values.split(",") if v.strip()]
        if not values:
            raise ConfigError("values: at least one sweep value is required")
        if args.axis != "ablation":
            try:
                values = [int(v) for v in values]
            except ValueError:
                raise ConfigError(f"values: {args.axis} sweep needs integers, got {args.values!r}") from None
        rows = sweep(config, args.axis, values, out)
        for r in rows:
            print(f"{r['axis']}={r['value']} f1={r['f1']} status={r['status']}")
    elif args.command == "gradcheck":
        report = gradcheck(config)
        sys.stdout.write(report.to_text())
        if not report.passed:
            raise DConADError(f"groups above tolerance: {', '.join(report.failures)}")
    return 0


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return _dispatch(args)
    except DConADError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
