"""Acceptance gate: nine go/no-go checks over the whole pipeline.

Each test prints a single PASS/FAIL line (visible through pytest's capture)
with the measured numbers, then asserts. The synthetic-benchmark criteria
share one module-level cache of trained models so each configuration is
trained exactly once.
"""

import math
import subprocess
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from madae.autodiff import Tensor
from madae.data import (
    apply_normalize,
    fit_normalize,
    parse_synth_spec,
    save_csv,
    synth,
    synth_pair,
    window,
)
from madae.evaluation import best_f1, point_adjust, score_series
from madae.model import (
    ModelBundle,
    decode,
    discriminate,
    encode,
    memory_addressing,
    memory_read,
    predict_backward,
    predict_forward,
)
from madae.objective import (
    LossWeights,
    anomaly_score,
    loss_adv,
    loss_full,
    loss_pred,
    loss_rec,
)
from madae.training import (
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
    train,
)

import oracles
from test_autodiff import GRAD_CASES

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
BENCH_SPEC = CONFIGS / "benchmark_spec.txt"
BENCH_CFG = CONFIGS / "benchmark_train.cfg"


def report(capsys, number, title, ok, detail):
    with capsys.disabled():
        print(f"\ncriterion {number} ({title}): {'PASS' if ok else 'FAIL'} — {detail}")
    assert ok, detail


def bench_config(seed=0, **kw) -> TrainConfig:
    base = dict(window=32, latent=16, memory_slots=64, pred_steps=5,
                enc_channels=(32, 64), lstm_hidden=32, batch_size=16,
                epochs=50, batches_per_epoch=64, seed=seed)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def bench():
    spec = parse_synth_spec(BENCH_SPEC)
    train_s, test_s = synth_pair(spec, seed=0)
    stats = fit_normalize(train_s)
    dataset = window(apply_normalize(train_s, stats), 32)
    return spec, train_s, test_s, stats, dataset


@pytest.fixture(scope="module")
def trained(bench):
    """(seed, no_prediction) -> (bundle, log, wall_seconds), trained once."""
    _, _, _, _, dataset = bench
    cache = {}

    def get(seed, no_prediction=False):
        key = (seed, no_prediction)
        if key not in cache:
            cfg = bench_config(seed, no_prediction=no_prediction)
            started = time.perf_counter()
            bundle, log = train(dataset, cfg)
            cache[key] = (bundle, log, time.perf_counter() - started)
        return cache[key]

    return get


# --------------------------------------------------------------- criterion 1


def _assembled_objective_case():
    cfg = TrainConfig(window=8, latent=4, memory_slots=6, pred_steps=2,
                      enc_channels=(3, 4), lstm_hidden=5, batch_size=2,
                      epochs=1, batches_per_epoch=1, seed=0)
    bundle = ModelBundle.initialize(cfg, n_vars=2)
    rng = np.random.default_rng(0)
    x = Tensor(rng.standard_normal((2, 8, 2)))
    fwd_t = Tensor(rng.standard_normal((2, 2, 2)))
    back_t = Tensor(rng.standard_normal((2, 2, 2)))
    weights = cfg.loss_weights()

    def loss_fn():
        z = bundle.latents(x)
        xhat = decode(bundle.decoder, z)
        _, g_adv = loss_adv(discriminate(bundle.disc, x),
                            discriminate(bundle.disc, xhat))
        return loss_full(g_adv, loss_rec(x, xhat),
                         loss_pred(fwd_t, predict_forward(bundle.pred_fwd, z)),
                         loss_pred(back_t, predict_backward(bundle.pred_back, z)),
                         weights)

    return loss_fn, [t for _, t in bundle.parameters()]


def test_criterion_1_gradients(capsys):
    started = time.perf_counter()
    errs = {}
    for name, case in GRAD_CASES.items():
        loss_fn, leaves = case()
        errs[name] = oracles.gradcheck(loss_fn, leaves)
    loss_fn, params = _assembled_objective_case()
    errs["assembled_objective"] = oracles.gradcheck(loss_fn, params)
    elapsed = time.perf_counter() - started
    worst = max(errs, key=errs.get)
    ok = max(errs.values()) < 1e-4 and elapsed < 60
    report(capsys, 1, "gradient correctness", ok,
           f"{len(errs)} checks, max rel err {errs[worst]:.2e} ({worst}), "
           f"{elapsed:.1f}s")


# --------------------------------------------------------------- criterion 2


def test_criterion_2_loss_oracles(capsys):
    checks = []

    def close(tag, got, want):
        checks.append((tag, got, want, abs(got - want) <= 1e-9))

    close("rec", loss_rec(Tensor([3.0, 4.0]), Tensor([0.0, 0.0])).item(), 5.0)
    d, g = loss_adv(Tensor([0.5]), Tensor([0.5]))
    close("adv_d", d.item(), 2 * math.log(2))
    close("adv_g", g.item(), math.log(2))
    d, _ = loss_adv(Tensor([0.9]), Tensor([0.1]))
    close("adv_d_conf", d.item(), -2 * math.log(0.9))
    targets = Tensor(np.array([[[0.0], [0.0]]]))
    preds = Tensor(np.array([[[1.0], [5.0]]]))
    close("pred", loss_pred(targets, preds).item(), 0.25)
    back_targets = Tensor(np.array([[[0.0], [0.0]]]))  # past-indexed mirror
    close("pred_back", loss_pred(back_targets, preds).item(), 0.25)
    zero_last = np.zeros((1, 3, 2))
    bad_last = zero_last.copy()
    bad_last[0, 2] = 100.0
    close("pred_final_zero_weight",
          loss_pred(Tensor(zero_last), Tensor(bad_last)).item(), 0.0)
    close("pred_horizon_one",
          loss_pred(Tensor(np.ones((1, 1, 2))), Tensor(np.zeros((1, 1, 2)))).item(), 0.0)
    w = LossWeights(rec_weight=1.0, fwd_weight=2.0, back_weight=0.1)
    close("full",
          loss_full(Tensor(0.0), Tensor(0.5), Tensor(0.2), Tensor(1.0), w).item(), 1.0)
    close("score", float(anomaly_score(0.5, 0.2, 1.0, w)), 1.0)
    bad = [c[0] for c in checks if not c[3]]
    ok = not bad
    report(capsys, 2, "loss-formula oracles", ok,
           f"{len(checks)} hand cases within 1e-9" if ok else f"failed: {bad}")


# --------------------------------------------------------------- criterion 3


def test_criterion_3_memory_properties(capsys):
    cfg = TrainConfig(window=8, latent=4, memory_slots=6, pred_steps=2,
                      enc_channels=(3, 4), lstm_hidden=5, batch_size=4,
                      epochs=1, batches_per_epoch=1, seed=3)
    bundle = ModelBundle.initialize(cfg, n_vars=2)
    rng = np.random.default_rng(0)
    x = Tensor(rng.standard_normal((5, 8, 2)))
    z = bundle.latents(x)
    weights = memory_addressing(bundle.memory, bundle.latents(x))
    sums_ok = np.max(np.abs(weights.data.sum(axis=-1) - 1.0)) < 1e-9
    zhat = memory_read(bundle.memory, z).data
    lo = bundle.memory.slots.data.min(axis=0) - 1e-12
    hi = bundle.memory.slots.data.max(axis=0) + 1e-12
    bounds_ok = bool(np.all(zhat >= lo) and np.all(zhat <= hi))
    # saturate the addressing head so the softmax is exactly one-hot
    bundle.memory.query.w.data[:] = 0.0
    bundle.memory.query.b.data[:] = -1e4
    bundle.memory.query.b.data[3] = 1e4
    onehot = memory_read(bundle.memory, z).data
    onehot_ok = bool(np.all(onehot == bundle.memory.slots.data[3]))
    ablated = ModelBundle.initialize(replace(cfg, no_memory=True), n_vars=2)
    identity_ok = ablated.latents(x).data.tobytes() == \
        encode(ablated.encoder, x).data.tobytes()
    ok = sums_ok and bounds_ok and onehot_ok and identity_ok
    report(capsys, 3, "memory properties", ok,
           f"weight sums ok={sums_ok}, convex bounds ok={bounds_ok}, "
           f"one-hot exact={onehot_ok}, ablation identity={identity_ok}")


# --------------------------------------------------------------- criterion 4


def test_criterion_4_metric_oracles(capsys):
    rng = np.random.default_rng(4)
    mismatches = 0
    for _ in range(1000):
        n = int(rng.integers(1, 201))
        scores = np.round(rng.random(n), 2)
        truth = rng.random(n) < 0.2
        if not truth.any():
            truth[int(rng.integers(0, n))] = True
        pred = rng.random(n) < 0.3
        adj = point_adjust(pred, truth)
        if not np.array_equal(adj, oracles.point_adjust_naive(pred, truth)):
            mismatches += 1
        if not np.array_equal(point_adjust(adj, truth), adj):  # idempotence
            mismatches += 1
        if oracles.prf_naive(adj, truth)[1] < oracles.prf_naive(pred, truth)[1]:
            mismatches += 1  # adjusted recall must dominate
        got = best_f1(scores, truth)
        p, r, f1, thr = oracles.best_f1_naive(scores, truth)
        if (got.precision, got.recall, got.f1, got.threshold) != (p, r, f1, thr):
            mismatches += 1
    ok = mismatches == 0
    report(capsys, 4, "metric oracles", ok,
           f"1000 random cases (length <= 200), {mismatches} mismatches")


# --------------------------------------------------------------- criterion 5


def test_criterion_5_windowing_normalization(capsys):
    s = synth(seed=9, n_points=500, n_vars=3)
    ds = window(s, 32)
    count_ok = ds.n_windows == 500 - 32 + 1
    stats = fit_normalize(s)
    normed = apply_normalize(s, stats).values
    range_ok = bool(np.all(normed >= 0.0) and np.all(normed <= 1.0))
    flat = synth(seed=9, n_points=100, n_vars=1)
    flat.values[:, 0] = 7.5  # degenerate column
    degen = apply_normalize(flat, fit_normalize(flat)).values
    degen_ok = bool(np.all(degen == 0.0))
    ok = count_ok and range_ok and degen_ok
    report(capsys, 5, "windowing/normalization", ok,
           f"count {ds.n_windows} == N-W+1, train range in [0,1]={range_ok}, "
           f"degenerate column maps to 0={degen_ok}")


# --------------------------------------------------------------- criterion 6


def test_criterion_6_training_sanity(capsys, trained, bench, tmp_path):
    _, _, _, _, dataset = bench
    bundle, log, seconds = trained(0)
    first, last = log.epochs[0].rec, log.epochs[-1].rec
    halved = last < 0.5 * first
    fast = seconds < 300
    rerun, _ = train(dataset, bench_config(0))
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(bundle, a)
    save_checkpoint(rerun, b)
    identical = a.read_bytes() == b.read_bytes()
    ok = halved and fast and identical
    report(capsys, 6, "training sanity", ok,
           f"rec {first:.3f} -> {last:.3f} over {len(log.epochs)} epochs, "
           f"{seconds:.0f}s, repeat run bit-identical={identical}")


# --------------------------------------------------------------- criterion 7


def _subset_f1(ss, truth_mask, drop_mask):
    keep = ~drop_mask[ss.first_index :]
    return best_f1(ss.score[keep], truth_mask[ss.first_index :][keep]).f1


def test_criterion_7_end_to_end_detection(capsys, trained, bench):
    spec, _, test_s, stats, _ = bench
    point = spec.segment_mask(("point",))
    cc = spec.segment_mask(("contextual", "collective"))
    point_f1s, wins = [], 0
    for seed in (0, 1, 2):
        full_b, _, _ = trained(seed)
        nopred_b, _, _ = trained(seed, no_prediction=True)
        ss_full = score_series(full_b, test_s, stats)
        ss_nopred = score_series(nopred_b, test_s, stats)
        point_f1s.append(_subset_f1(ss_full, point, cc))
        if _subset_f1(ss_full, cc, point) >= _subset_f1(ss_nopred, cc, point):
            wins += 1
    ok = min(point_f1s) >= 0.80 and wins >= 2
    report(capsys, 7, "end-to-end detection", ok,
           f"point-anomaly F1 per seed {[round(f, 3) for f in point_f1s]} "
           f"(need >= 0.80), full >= no-prediction on contextual+collective "
           f"in {wins}/3 seeds (need >= 2)")


# --------------------------------------------------------------- criterion 8


def test_criterion_8_checkpoint_round_trip(capsys, trained, bench, tmp_path):
    _, _, test_s, stats, _ = bench
    bundle, _, _ = trained(0)
    path = tmp_path / "model.ckpt"
    save_checkpoint(bundle, path)
    loaded = load_checkpoint(path)
    params_ok = all(a.data.tobytes() == b.data.tobytes()
                    for (_, a), (_, b) in zip(bundle.parameters(), loaded.parameters()))
    ss_mem = score_series(bundle, test_s, stats)
    ss_disk = score_series(loaded, test_s, stats)
    scores_ok = np.array_equal(ss_mem.score, ss_disk.score)
    ok = params_ok and scores_ok
    report(capsys, 8, "checkpoint round-trip", ok,
           f"parameters bit-exact={params_ok}, scores from loaded model "
           f"bit-exact={scores_ok}")


# --------------------------------------------------------------- criterion 9


def test_criterion_9_sweep_harness(capsys, bench, tmp_path):
    _, train_s, test_s, _, _ = bench
    save_csv(tmp_path / "train.csv", train_s)
    save_csv(tmp_path / "test.csv", test_s)
    started = time.perf_counter()
    proc = subprocess.run(
        [sys.executable, "-m", "madae", "sweep",
         "--train-csv", str(tmp_path / "train.csv"),
         "--test-csv", str(tmp_path / "test.csv"),
         "--config", str(BENCH_CFG),
         "--param", "reconstruction weight",
         "--values", "1.0,1.5,2.0,2.5,3.0",
         "--out-dir", str(tmp_path / "sweep"), "--quiet"],
        capture_output=True, text=True)
    elapsed = time.perf_counter() - started
    rows = []
    if proc.returncode == 0:
        rows = (tmp_path / "sweep" / "sweep.csv").read_text().strip().split("\n")[1:]
    f1s = [float(r.split(",")[3]) for r in rows]
    ok = proc.returncode == 0 and len(rows) == 5 and elapsed < 1800
    report(capsys, 9, "sweep harness", ok,
           f"5-value weight sweep in {elapsed:.0f}s, F1 per value "
           f"{[round(f, 3) for f in f1s]}" if ok else
           f"exit {proc.returncode} after {elapsed:.0f}s: {proc.stderr[-200:]}")
