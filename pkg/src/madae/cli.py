"""Command-line interface: synth, train, score, eval, ablate, sweep.

Exit codes: 0 success; 2 for problems with what was asked (bad flags, bad
config, missing or incompatible inputs); 1 for failures while doing it.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from madae.data import (
    DataError,
    apply_normalize,
    fit_normalize,
    load_csv,
    parse_synth_spec,
    save_csv,
    synth_pair,
    window,
)
from madae.evaluation import (
    EvalError,
    best_f1,
    format_report,
    score_series,
    write_report,
    write_scores,
)
from madae.training import (
    CONFIG_KEYS,
    CheckpointError,
    ConfigError,
    TrainConfig,
    TrainingError,
    load_checkpoint,
    load_train_config,
    save_checkpoint,
    save_train_config,
    train,
    write_train_log,
)


class UsageError(Exception):
    """Bad request: wrong inputs, incompatible files. Exit code 2."""


ABLATION_VARIANTS = {
    "full": {},
    "no_memory": {"no_memory": True},
    "no_prediction": {"no_prediction": True},
}


def _require_file(path) -> Path:
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"no such file: {path}")
    return path


def _load_series(path, need_labels: bool = False):
    path = _require_file(path)
    with open(path) as fh:
        header = [h.strip() for h in fh.readline().split(",")]
    label_column = "label" if "label" in header else None
    if need_labels and label_column is None:
        raise UsageError(f"{path}: no 'label' column and no separate label file given")
    return load_csv(path, label_column=label_column)


def _load_labels(args, test) -> np.ndarray:
    if args.labels is not None:
        labeled = _load_series(args.labels, need_labels=True)
        if labeled.labels.size != test.n_points:
            raise UsageError(
                f"{args.labels}: {labeled.labels.size} labels for a "
                f"{test.n_points}-point test series"
            )
        return labeled.labels
    if test.labels is None:
        raise UsageError("test CSV has no 'label' column; pass --labels")
    return test.labels


def _resolve_config(args) -> TrainConfig:
    overrides = {}
    if getattr(args, "epochs", None) is not None:
        overrides["epochs"] = args.epochs
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if args.config is not None:
        return load_train_config(_require_file(args.config), overrides)
    cfg = TrainConfig(**overrides)
    cfg.validate()
    return cfg


def _train_once(cfg: TrainConfig, train_csv, out_checkpoint, *, quiet=False):
    """Shared by train/ablate/sweep: fit stats, train, save all artifacts."""
    series = _load_series(train_csv)
    stats = fit_normalize(series)
    dataset = window(apply_normalize(series, stats), cfg.window)

    def progress(epoch, report):
        if not quiet:
            print(f"epoch {epoch + 1}/{cfg.epochs}  rec {report.rec:.5f}  "
                  f"adv_d {report.adv_d:.5f}  adv_g {report.adv_g:.5f}  "
                  f"pred {report.pred_fwd:.5f}/{report.pred_back:.5f}  "
                  f"full {report.full:.5f}")

    bundle, log = train(dataset, cfg, progress=progress)
    out_checkpoint = Path(out_checkpoint)
    out_checkpoint.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(bundle, out_checkpoint)
    save_train_config(cfg, out_checkpoint.with_suffix(out_checkpoint.suffix + ".config"))
    write_train_log(out_checkpoint.with_suffix(out_checkpoint.suffix + ".log.csv"), log)
    return bundle, stats


def _score_with(bundle, args):
    test = _load_series(args.test_csv)
    train_series = _load_series(args.train_csv)
    stats = fit_normalize(train_series)
    return test, score_series(bundle, test, stats, full_horizon=args.full_horizon)


def _check_ablation(bundle, requested: str) -> None:
    cfg = bundle.config
    if cfg.no_memory and cfg.no_prediction:
        actual = "no_memory+no_prediction"
    elif cfg.no_memory:
        actual = "no_memory"
    elif cfg.no_prediction:
        actual = "no_prediction"
    else:
        actual = "full"
    if requested != actual:
        raise UsageError(
            f"checkpoint was trained as {actual!r}, not {requested!r}; "
            f"retrain with the matching flag"
        )


# commands -------------------------------------------------------------------


def cmd_synth(args) -> int:
    spec = parse_synth_spec(_require_file(args.spec))
    train_s, test_s = synth_pair(spec, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_csv(out / "train.csv", train_s)
    save_csv(out / "test.csv", test_s)
    resolved = [
        f"# generated by 'madae synth' with seed {args.seed}",
        f"train points: {spec.train_points}",
        f"test points: {spec.test_points}",
        f"variables: {spec.variables}",
        f"noise std: {spec.noise_std!r}",
    ]
    resolved += [f"segment: {s.kind} {s.start} {s.length} {s.magnitude!r}"
                 for s in spec.segments]
    resolved.append(f"seed: {args.seed}")
    (out / "synth_config.txt").write_text("\n".join(resolved) + "\n")
    print(f"wrote {out / 'train.csv'} ({spec.train_points} points) and "
          f"{out / 'test.csv'} ({spec.test_points} points)")
    return 0


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    _train_once(cfg, args.train_csv, args.out_checkpoint, quiet=args.quiet)
    print(f"wrote {args.out_checkpoint}")
    return 0


def cmd_score(args) -> int:
    bundle = load_checkpoint(_require_file(args.checkpoint))
    _, scores = _score_with(bundle, args)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_scores(out, scores)
    save_train_config(bundle.config, out.with_suffix(out.suffix + ".config"))
    print(f"wrote {out} ({scores.score.size} scored points)")
    return 0


def cmd_eval(args) -> int:
    bundle = load_checkpoint(_require_file(args.checkpoint))
    _check_ablation(bundle, args.ablation)
    test, scores = _score_with(bundle, args)
    labels = _load_labels(args, test)
    report = best_f1(scores, labels)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_scores(out / "scores.csv", scores)
    write_report(out / "report.txt", report)
    save_train_config(bundle.config, out / "config.txt")
    print(format_report(report))
    return 0


def cmd_ablate(args) -> int:
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    unknown = [v for v in variants if v not in ABLATION_VARIANTS]
    if unknown:
        raise UsageError(f"unknown ablation variant(s) {unknown}; "
                         f"choose from {sorted(ABLATION_VARIANTS)}")
    base = _resolve_config(args)
    out = Path(args.out_dir)
    rows = ["variant,precision,recall,f1,threshold"]
    for variant in variants:
        cfg = replace(base, **ABLATION_VARIANTS[variant])
        vdir = out / variant
        bundle, _ = _train_once(cfg, args.train_csv, vdir / "model.ckpt",
                                quiet=args.quiet)
        test, scores = _score_with(bundle, args)
        labels = _load_labels(args, test)
        report = best_f1(scores, labels)
        write_scores(vdir / "scores.csv", scores)
        write_report(vdir / "report.txt", report)
        rows.append(f"{variant},{report.precision!r},{report.recall!r},"
                    f"{report.f1!r},{report.threshold!r}")
        print(f"{variant}: f1 {report.f1:.4f} (p {report.precision:.4f}, "
              f"r {report.recall:.4f})")
    (out / "ablation.csv").write_text("\n".join(rows) + "\n")
    print(f"wrote {out / 'ablation.csv'}")
    return 0


def cmd_sweep(args) -> int:
    if args.param not in CONFIG_KEYS:
        raise UsageError(f"unknown config key {args.param!r}; "
                         f"choose from {sorted(CONFIG_KEYS)}")
    attr, cast = CONFIG_KEYS[args.param]
    values = []
    for raw in args.values.split(","):
        try:
            values.append(cast(raw.strip()))
        except ValueError:
            raise UsageError(f"bad value {raw.strip()!r} for {args.param!r}") from None
    base = _resolve_config(args)
    out = Path(args.out_dir)
    rows = [f"{attr},precision,recall,f1,threshold"]
    for i, value in enumerate(values):
        cfg = replace(base, **{attr: value})
        cfg.validate()
        vdir = out / f"trial_{i}"
        bundle, _ = _train_once(cfg, args.train_csv, vdir / "model.ckpt",
                                quiet=args.quiet)
        test, scores = _score_with(bundle, args)
        labels = _load_labels(args, test)
        report = best_f1(scores, labels)
        write_scores(vdir / "scores.csv", scores)
        write_report(vdir / "report.txt", report)
        rows.append(f"{value},{report.precision!r},{report.recall!r},"
                    f"{report.f1!r},{report.threshold!r}")
        print(f"{args.param} = {value}: f1 {report.f1:.4f}")
    (out / "sweep.csv").write_text("\n".join(rows) + "\n")
    print(f"wrote {out / 'sweep.csv'}")
    return 0


# wiring ---------------------------------------------------------------------


def _add_train_flags(p) -> None:
    p.add_argument("--train-csv", required=True)
    p.add_argument("--config", default=None, help="training config file")
    p.add_argument("--epochs", type=int, default=None, help="override epochs")
    p.add_argument("--seed", type=int, default=None, help="override seed")
    p.add_argument("--quiet", action="store_true")


def _add_scoring_flags(p, with_train_csv: bool) -> None:
    p.add_argument("--test-csv", required=True)
    if with_train_csv:
        p.add_argument("--train-csv", required=True,
                       help="training split; normalization stats come from it")
    p.add_argument("--full-horizon", action="store_true",
                   help="average all prediction steps instead of 1-step")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="madae",
        description="Memory-augmented adversarial autoencoder for "
                    "multivariate time-series anomaly detection.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a labeled synthetic benchmark")
    p.add_argument("--spec", required=True, help="benchmark layout file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model on a CSV series")
    _add_train_flags(p)
    p.add_argument("--out-checkpoint", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="write per-point anomaly scores")
    p.add_argument("--checkpoint", required=True)
    _add_scoring_flags(p, with_train_csv=True)
    p.add_argument("--out", required=True, help="score CSV path")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="score a labeled series and report best F1")
    p.add_argument("--checkpoint", required=True)
    _add_scoring_flags(p, with_train_csv=True)
    p.add_argument("--labels", default=None,
                   help="separate label CSV (default: 'label' column of --test-csv)")
    p.add_argument("--ablation", default="full",
                   choices=sorted(ABLATION_VARIANTS),
                   help="assert the checkpoint matches this training variant")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and evaluate ablation variants")
    _add_train_flags(p)
    _add_scoring_flags(p, with_train_csv=False)
    p.add_argument("--labels", default=None)
    p.add_argument("--variants", default="full,no_memory,no_prediction")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep", help="rerun training across one config key")
    _add_train_flags(p)
    _add_scoring_flags(p, with_train_csv=False)
    p.add_argument("--labels", default=None)
    p.add_argument("--param", required=True, help="config file key to vary")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError, DataError, EvalError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: no such file: {exc.filename}", file=sys.stderr)
        return 2
    except (TrainingError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
