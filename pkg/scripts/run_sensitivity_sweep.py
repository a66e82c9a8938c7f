"""Sweep one training hyperparameter across a grid and tabulate best F1.

Defaults to the reconstruction weight over [1.0, 1.5, 2.0, 2.5, 3.0]; any
config file key works, e.g.:

    python scripts/run_sensitivity_sweep.py --param "memory size" \
        --values 16,32,64,128
"""

import argparse
from dataclasses import replace
from pathlib import Path

from madae.data import apply_normalize, fit_normalize, parse_synth_spec, synth_pair, window
from madae.evaluation import best_f1, score_series
from madae.training import CONFIG_KEYS, load_train_config, train

ROOT = Path(__file__).resolve().parent.parent


def main():
    ap = argparse.ArgumentParser(description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--spec", default=ROOT / "configs" / "benchmark_spec.txt")
    ap.add_argument("--config", default=ROOT / "configs" / "benchmark_train.cfg")
    ap.add_argument("--param", default="reconstruction weight")
    ap.add_argument("--values", default="1.0,1.5,2.0,2.5,3.0")
    ap.add_argument("--out", default=Path("runs") / "sweep")
    args = ap.parse_args()

    attr, cast = CONFIG_KEYS[args.param]
    values = [cast(v.strip()) for v in args.values.split(",")]
    spec = parse_synth_spec(args.spec)
    base = load_train_config(args.config)
    train_s, test_s = synth_pair(spec, base.seed)
    stats = fit_normalize(train_s)
    normed = apply_normalize(train_s, stats)

    rows = [f"{attr},precision,recall,f1,threshold"]
    for value in values:
        cfg = replace(base, **{attr: value})
        cfg.validate()
        bundle, _ = train(window(normed, cfg.window), cfg)
        report = best_f1(score_series(bundle, test_s, stats), test_s.labels)
        rows.append(f"{value},{report.precision!r},{report.recall!r},"
                    f"{report.f1!r},{report.threshold!r}")
        print(f"{args.param} = {value}:  P {report.precision:.4f}  "
              f"R {report.recall:.4f}  F1 {report.f1:.4f}")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.csv").write_text("\n".join(rows) + "\n")
    print(f"wrote {out / 'sweep.csv'}")


if __name__ == "__main__":
    main()
