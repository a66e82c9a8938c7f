"""Per-point anomaly scoring and point-adjusted best-F1 evaluation."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from madae.autodiff import Tensor
from madae.data import NormalizationStats, RawSeries, apply_normalize, window
from madae.model import ModelBundle, decode, predict_backward, predict_forward
from madae.objective import LossWeights, anomaly_score


class EvalError(ValueError):
    """Invalid evaluation input."""


@dataclass
class ScoreSeries:
    """Per-point scores for timestamps first_index .. first_index + n - 1.

    Component arrays hold NaN where a term is undefined (series edges); the
    combined score treats those terms as zero.
    """

    first_index: int  # = W - 1
    score: np.ndarray  # (N - W + 1,)
    rec: np.ndarray  # (N - W + 1,), defined everywhere
    pred_fwd: np.ndarray  # NaN at the head
    pred_back: np.ndarray  # NaN over the tail W + 1 points

    @property
    def timestamps(self) -> np.ndarray:
        return np.arange(self.first_index, self.first_index + self.score.size)


@dataclass
class EvalReport:
    """Point-adjusted metrics at the best threshold."""

    precision: float
    recall: float
    f1: float
    threshold: float
    tp: int
    fp: int
    fn: int
    tn: int


def _row_l2(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(n, K), (n, K) -> (n,) Euclidean distances."""
    return np.linalg.norm(a - b, axis=-1)


def score_series(bundle: ModelBundle, test: RawSeries, stats: NormalizationStats,
                 weights: LossWeights | None = None, *,
                 full_horizon: bool = False, chunk_size: int = 256) -> ScoreSeries:
    """Score every timestamp with at least W - 1 predecessors.

    Reconstruction error at t is the l2 error of the last row of the window
    ending at t. The forward term at t is the error of the 1-step forecast
    issued by the window ending at t - 1; the backward term comes from the
    window ending at t + W + 1 (its 1-step backward target is x_t). NaN marks
    terms with no issuing window; they contribute zero to the combined score.
    With ``full_horizon`` each term instead averages all T forecasts of x_t.
    """
    cfg = bundle.config
    w, horizon = cfg.window, cfg.pred_steps
    n = test.values.shape[0]
    if n < w:
        raise EvalError(f"test series has {n} points, need at least the window size {w}")
    if test.values.shape[1] != bundle.n_vars:
        raise EvalError(
            f"test series has {test.values.shape[1]} variables, model expects {bundle.n_vars}"
        )
    if weights is None:
        weights = cfg.loss_weights()
    series = apply_normalize(test, stats).values
    ds = window(RawSeries(values=series), w)
    n_win = ds.n_windows
    use_pred = not cfg.no_prediction

    rec = np.empty(n_win)
    fwd_preds = np.empty((n_win, horizon, bundle.n_vars)) if use_pred else None
    back_preds = np.empty((n_win, horizon, bundle.n_vars)) if use_pred else None
    for start in range(0, n_win, chunk_size):
        x = Tensor(ds.windows[start : start + chunk_size])
        z = bundle.latents(x)
        xhat = decode(bundle.decoder, z)
        stop = start + x.shape[0]
        rec[start:stop] = _row_l2(xhat.data[:, -1, :], x.data[:, -1, :])
        if use_pred:
            fwd_preds[start:stop] = predict_forward(bundle.pred_fwd, z).data
            back_preds[start:stop] = predict_backward(bundle.pred_back, z).data

    # window index j covers rows j .. j + w - 1, so it ends at t = j + w - 1
    ts = np.arange(w - 1, n)
    fwd_term = np.full(n_win, np.nan)
    back_term = np.full(n_win, np.nan)
    if use_pred:
        steps = range(1, horizon + 1) if full_horizon else range(1, 2)
        fwd_sum = np.zeros(n_win)
        fwd_cnt = np.zeros(n_win, dtype=int)
        back_sum = np.zeros(n_win)
        back_cnt = np.zeros(n_win, dtype=int)
        for i in steps:
            # forward step i issued by the window ending at t - i
            t = ts[ts >= w - 1 + i]
            err = _row_l2(fwd_preds[t - w + 1 - i, i - 1], series[t])
            fwd_sum[t - (w - 1)] += err
            fwd_cnt[t - (w - 1)] += 1
            # backward step i issued by the window ending at t + w + i
            t = ts[ts <= n - 1 - w - i]
            err = _row_l2(back_preds[t + i + 1, i - 1], series[t])
            back_sum[t - (w - 1)] += err
            back_cnt[t - (w - 1)] += 1
        np.divide(fwd_sum, fwd_cnt, out=fwd_term, where=fwd_cnt > 0)
        np.divide(back_sum, back_cnt, out=back_term, where=back_cnt > 0)

    score = anomaly_score(rec, np.nan_to_num(fwd_term), np.nan_to_num(back_term),
                          weights)
    return ScoreSeries(first_index=w - 1, score=score, rec=rec,
                       pred_fwd=fwd_term, pred_back=back_term)


# point adjustment and best-F1 search ---------------------------------------


def true_segments(mask: np.ndarray) -> list[tuple[int, int]]:
    """Half-open (start, stop) spans of the maximal True runs."""
    padded = np.concatenate(([False], np.asarray(mask, dtype=bool), [False]))
    edges = np.flatnonzero(np.diff(padded))
    return list(zip(edges[0::2], edges[1::2]))


def point_adjust(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Mark a whole truth segment detected if any of its points is flagged."""
    pred = np.asarray(pred, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if pred.ndim != 1 or pred.shape != truth.shape:
        raise EvalError(f"pred/truth shapes differ: {pred.shape} vs {truth.shape}")
    adjusted = pred.copy()
    for start, stop in true_segments(truth):
        if adjusted[start:stop].any():
            adjusted[start:stop] = True
    return adjusted


def _confusion(pred: np.ndarray, truth: np.ndarray) -> tuple[int, int, int, int]:
    tp = int(np.count_nonzero(pred & truth))
    fp = int(np.count_nonzero(pred & ~truth))
    fn = int(np.count_nonzero(~pred & truth))
    tn = int(np.count_nonzero(~pred & ~truth))
    return tp, fp, fn, tn


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = (2 * precision * recall / (precision + recall)
          if precision + recall else 0.0)
    return precision, recall, f1


def _aligned_truth(scores, truth: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    truth = np.asarray(truth, dtype=bool)
    if isinstance(scores, ScoreSeries):
        values = scores.score
        if truth.size == scores.first_index + values.size:
            truth = truth[scores.first_index :]  # drop the unscored head
        elif truth.size != values.size:
            raise EvalError(
                f"truth length {truth.size} matches neither the series nor the "
                f"{values.size} scored points"
            )
    else:
        values = np.asarray(scores, dtype=np.float64)
        if truth.size != values.size:
            raise EvalError(f"scores/truth lengths differ: {values.size} vs {truth.size}")
    if not np.all(np.isfinite(values)):
        raise EvalError("scores contain non-finite values")
    return values, truth


def best_f1(scores, truth: np.ndarray) -> EvalReport:
    """Exhaustive threshold search; prediction is score >= threshold.

    Candidates are every distinct score plus +inf (predict nothing); F1 is
    piecewise constant between consecutive scores, so this search is complete.
    Ties keep the smallest threshold. ``truth`` may cover the whole series or
    only the scored region.
    """
    values, truth = _aligned_truth(scores, truth)
    if not truth.any():
        warnings.warn("truth has no anomalous points; precision undefined, F1 set to 0")
        return EvalReport(precision=0.0, recall=0.0, f1=0.0, threshold=np.inf,
                          tp=0, fp=0, fn=0, tn=int(truth.size))
    best: EvalReport | None = None
    for threshold in np.concatenate([np.unique(values), [np.inf]]):
        adjusted = point_adjust(values >= threshold, truth)
        tp, fp, fn, tn = _confusion(adjusted, truth)
        precision, recall, f1 = _prf(tp, fp, fn)
        if best is None or f1 > best.f1:
            best = EvalReport(precision, recall, f1, float(threshold), tp, fp, fn, tn)
    return best


# artifact I/O ---------------------------------------------------------------


def write_scores(path, scores: ScoreSeries) -> None:
    """CSV of index, combined score, and the three component terms."""
    rows = ["index,score,rec_term,pred_fwd_term,pred_back_term"]
    for k, t in enumerate(scores.timestamps):
        rows.append(f"{t},{float(scores.score[k])!r},{float(scores.rec[k])!r},"
                    f"{float(scores.pred_fwd[k])!r},{float(scores.pred_back[k])!r}")
    Path(path).write_text("\n".join(rows) + "\n")


def read_scores(path) -> ScoreSeries:
    lines = Path(path).read_text().strip().split("\n")
    header = "index,score,rec_term,pred_fwd_term,pred_back_term"
    if not lines or lines[0] != header:
        raise EvalError(f"{path}: expected header {header!r}")
    cells = [line.split(",") for line in lines[1:]]
    if any(len(c) != 5 for c in cells):
        raise EvalError(f"{path}: malformed row")
    idx = np.array([int(c[0]) for c in cells])
    if idx.size == 0 or np.any(np.diff(idx) != 1):
        raise EvalError(f"{path}: indices must be consecutive")
    cols = [np.array([float(c[j]) for c in cells]) for j in range(1, 5)]
    return ScoreSeries(first_index=int(idx[0]), score=cols[0], rec=cols[1],
                       pred_fwd=cols[2], pred_back=cols[3])


def format_report(report: EvalReport) -> str:
    return "\n".join([
        f"precision: {report.precision!r}",
        f"recall: {report.recall!r}",
        f"f1: {report.f1!r}",
        f"threshold: {report.threshold!r}",
        f"tp: {report.tp}",
        f"fp: {report.fp}",
        f"fn: {report.fn}",
        f"tn: {report.tn}",
    ])


def write_report(path, report: EvalReport) -> None:
    Path(path).write_text(format_report(report) + "\n")
