"""Series ingestion, min-max normalization, sliding windows, synthetic benchmarks."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class DataError(ValueError):
    """Malformed input data (CSV cells, spec files, bad segment layouts)."""


@dataclass
class RawSeries:
    """A multivariate series: values (N, K) float64 plus optional bool labels (N,)."""

    values: np.ndarray
    labels: np.ndarray | None = None
    columns: list[str] | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DataError(f"series values must be 2-d (N, K), got shape {self.values.shape}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=bool)
            if self.labels.shape != (self.values.shape[0],):
                raise DataError(
                    f"labels shape {self.labels.shape} does not match {self.values.shape[0]} rows"
                )

    @property
    def n_points(self) -> int:
        return self.values.shape[0]

    @property
    def n_vars(self) -> int:
        return self.values.shape[1]


@dataclass
class NormalizationStats:
    """Per-variable train min/max; degenerate columns get a unit denominator."""

    train_min: np.ndarray
    train_max: np.ndarray

    def denom(self) -> np.ndarray:
        d = self.train_max - self.train_min
        return np.where(d == 0, 1.0, d)


@dataclass
class WindowedDataset:
    """All stride-1 windows of a series: windows (N-W+1, W, K)."""

    windows: np.ndarray
    window_length: int
    offsets: np.ndarray  # timestamp of each window's last row: W-1 .. N-1

    @property
    def n_windows(self) -> int:
        return self.windows.shape[0]

    @property
    def n_vars(self) -> int:
        return self.windows.shape[2]

    def source_series(self) -> np.ndarray:
        """Rebuild the (N, K) series the windows were cut from."""
        return np.concatenate([self.windows[0, :-1], self.windows[:, -1]], axis=0)


# CSV ------------------------------------------------------------------------


def load_csv(path, label_column: str | None = None) -> RawSeries:
    """Read a headered CSV of float columns; ``label_column`` becomes 0/1 labels.

    Errors name the offending file coordinate (1-based line number, column
    name); line 1 is the header.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        label_idx = None
        if label_column is not None:
            if label_column not in header:
                raise DataError(f"{path}: no column named {label_column!r}")
            label_idx = header.index(label_column)
        value_cols = [i for i in range(len(header)) if i != label_idx]
        if not value_cols:
            raise DataError(f"{path}: no value columns")
        rows, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DataError(
                    f"{path}: line {lineno} has {len(row)} cells, expected {len(header)}"
                )
            vals = []
            for i in value_cols:
                try:
                    v = float(row[i])
                except ValueError:
                    v = math.nan
                if not math.isfinite(v):
                    raise DataError(
                        f"{path}: line {lineno}, column {header[i]!r}: "
                        f"cannot parse {row[i]!r} as a finite number"
                    )
                vals.append(v)
            rows.append(vals)
            if label_idx is not None:
                cell = row[label_idx].strip()
                if cell not in ("0", "1"):
                    raise DataError(
                        f"{path}: line {lineno}, column {header[label_idx]!r}: "
                        f"label must be 0 or 1, got {cell!r}"
                    )
                labels.append(cell == "1")
    if not rows:
        raise DataError(f"{path}: no data rows")
    return RawSeries(
        values=np.array(rows, dtype=np.float64),
        labels=np.array(labels, dtype=bool) if label_idx is not None else None,
        columns=[header[i] for i in value_cols],
    )


def save_csv(path, series: RawSeries, label_column: str | None = "label") -> None:
    """Write a series as CSV; float cells use repr so they round-trip exactly."""
    path = Path(path)
    cols = series.columns or [f"v{i}" for i in range(series.n_vars)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        has_labels = series.labels is not None and label_column is not None
        writer.writerow(cols + ([label_column] if has_labels else []))
        for i in range(series.n_points):
            row = [repr(float(v)) for v in series.values[i]]
            if has_labels:
                row.append("1" if series.labels[i] else "0")
            writer.writerow(row)


# normalization --------------------------------------------------------------


def fit_normalize(train: RawSeries) -> NormalizationStats:
    """Per-variable min/max over the training split."""
    return NormalizationStats(
        train_min=train.values.min(axis=0), train_max=train.values.max(axis=0)
    )


def apply_normalize(series: RawSeries, stats: NormalizationStats) -> RawSeries:
    """(x - train_min) / (train_max - train_min); values outside the train
    range are not clipped, so test data may fall outside [0, 1]."""
    scaled = (series.values - stats.train_min) / stats.denom()
    return RawSeries(values=scaled, labels=series.labels, columns=series.columns)


# windowing ------------------------------------------------------------------


def window(series: RawSeries, length: int) -> WindowedDataset:
    """All stride-1 windows of ``length`` rows; N - W + 1 of them."""
    n = series.n_points
    if length < 1:
        raise DataError(f"window length must be >= 1, got {length}")
    if length > n:
        raise DataError(f"window length {length} exceeds series length {n}")
    # sliding_window_view gives (N-W+1, K, W); reorder to (N-W+1, W, K)
    wins = sliding_window_view(series.values, length, axis=0).transpose(0, 2, 1)
    return WindowedDataset(
        windows=np.ascontiguousarray(wins),
        window_length=length,
        offsets=np.arange(length - 1, n),
    )


# synthetic benchmark --------------------------------------------------------

SEGMENT_KINDS = ("point", "contextual", "collective")


@dataclass
class AnomalySegment:
    """One injected segment of the test region.

    kind, start (index), length, and a kind-specific magnitude:
      * point       -- spike size in per-variable standard deviations; the
                       spike is pushed away from the signal midline so the
                       default of 3.0 lands outside the normal value range
      * contextual  -- phase shift in radians applied to the base harmonics;
                       results are clipped into the clean per-variable range
      * collective  -- flat level = value at segment start plus magnitude
                       standard deviations, clipped into the clean range
    """

    kind: str
    start: int
    length: int
    magnitude: float

    def indices(self) -> range:
        return range(self.start, self.start + self.length)


@dataclass
class SynthSpec:
    """Parsed synthetic-benchmark layout (``parse_synth_spec``)."""

    train_points: int = 2000
    test_points: int = 1000
    variables: int = 3
    noise_std: float = 0.03
    segments: list[AnomalySegment] = field(default_factory=list)

    def segment_mask(self, kinds=None) -> np.ndarray:
        """Bool mask over the test region marking segments of these kinds."""
        mask = np.zeros(self.test_points, dtype=bool)
        for seg in self.segments:
            if kinds is None or seg.kind in kinds:
                mask[seg.start : seg.start + seg.length] = True
        return mask


def _validate_segments(segments, n_points: int) -> None:
    prev_end = -1
    for seg in sorted(segments, key=lambda s: s.start):
        if seg.kind not in SEGMENT_KINDS:
            raise DataError(f"unknown segment kind {seg.kind!r}")
        if seg.length < 1:
            raise DataError(f"segment at {seg.start} has non-positive length {seg.length}")
        if seg.start < 0 or seg.start + seg.length > n_points:
            raise DataError(
                f"segment [{seg.start}, {seg.start + seg.length}) is out of bounds "
                f"for {n_points} points"
            )
        if seg.start <= prev_end:
            raise DataError(f"segment at {seg.start} overlaps the previous one")
        prev_end = seg.start + seg.length - 1


def _harmonics(params_rng, n_vars: int):
    """Two sinusoids per variable: a slow main tone and a faster minor one."""
    return [
        dict(
            p1=params_rng.uniform(40.0, 90.0),
            a1=params_rng.uniform(0.8, 1.2),
            f1=params_rng.uniform(0.0, 2 * np.pi),
            p2=params_rng.uniform(12.0, 24.0),
            a2=params_rng.uniform(0.2, 0.4),
            f2=params_rng.uniform(0.0, 2 * np.pi),
        )
        for _ in range(n_vars)
    ]


def _base_signal(harmonics, t: np.ndarray) -> np.ndarray:
    cols = [
        h["a1"] * np.sin(2 * np.pi * t / h["p1"] + h["f1"])
        + h["a2"] * np.sin(2 * np.pi * t / h["p2"] + h["f2"])
        for h in harmonics
    ]
    return np.stack(cols, axis=1)


def synth(seed: int, n_points: int, n_vars: int, anomaly_spec=(),
          noise_std: float = 0.03) -> RawSeries:
    """Seeded sinusoid-mixture series with injected anomaly segments.

    Streams are split off one SeedSequence (harmonic parameters, observation
    noise, injection noise, in that order), so identical seeds reproduce the
    series bit-exactly. Labels mark exactly the injected indices.
    """
    if n_points < 1 or n_vars < 1:
        raise DataError(f"need positive n_points/n_vars, got {n_points}/{n_vars}")
    segments = list(anomaly_spec)
    _validate_segments(segments, n_points)
    params_ss, noise_ss, anom_ss = np.random.SeedSequence(seed).spawn(3)
    harmonics = _harmonics(np.random.Generator(np.random.PCG64(params_ss)), n_vars)
    t = np.arange(n_points, dtype=np.float64)
    clean = _base_signal(harmonics, t)
    clean += np.random.Generator(np.random.PCG64(noise_ss)).normal(0.0, noise_std, clean.shape)

    cmin, cmax = clean.min(axis=0), clean.max(axis=0)
    cmid, cstd = (cmin + cmax) / 2.0, clean.std(axis=0)
    values = clean.copy()
    labels = np.zeros(n_points, dtype=bool)
    anom_rng = np.random.Generator(np.random.PCG64(anom_ss))

    for seg in sorted(segments, key=lambda s: s.start):
        idx = np.array(seg.indices())
        if seg.kind == "point":
            direction = np.where(clean[idx] >= cmid, 1.0, -1.0)
            values[idx] = clean[idx] + direction * abs(seg.magnitude) * cstd
        elif seg.kind == "contextual":
            shifted = [dict(h, f1=h["f1"] + seg.magnitude, f2=h["f2"] + seg.magnitude)
                       for h in harmonics]
            distorted = _base_signal(shifted, t[idx])
            distorted += anom_rng.normal(0.0, noise_std, distorted.shape)
            values[idx] = np.clip(distorted, cmin, cmax)
        else:  # collective: hold a constant in-range level
            level = np.clip(clean[seg.start] + seg.magnitude * cstd, cmin, cmax)
            values[idx] = level
        labels[idx] = True

    return RawSeries(values=values, labels=labels,
                     columns=[f"v{i}" for i in range(n_vars)])


def synth_pair(spec: SynthSpec, seed: int) -> tuple[RawSeries, RawSeries]:
    """An anomaly-free train split and a test split carrying the injections.

    Both come from one generated series (shared harmonics, continuous time),
    with the spec's segment positions interpreted relative to the test region.
    """
    shifted = [AnomalySegment(s.kind, s.start + spec.train_points, s.length, s.magnitude)
               for s in spec.segments]
    _validate_segments(spec.segments, spec.test_points)
    full = synth(seed, spec.train_points + spec.test_points, spec.variables,
                 shifted, noise_std=spec.noise_std)
    cols = full.columns
    train = RawSeries(values=full.values[: spec.train_points],
                      labels=full.labels[: spec.train_points], columns=cols)
    test = RawSeries(values=full.values[spec.train_points :],
                     labels=full.labels[spec.train_points :], columns=cols)
    return train, test


def parse_synth_spec(path) -> SynthSpec:
    """Read a benchmark layout file.

    Line format, ``#`` comments allowed::

        train points: 2000
        test points: 1000
        variables: 3
        noise std: 0.03
        segment: point 120 1 3.0        # kind start length magnitude

    Segment starts are relative to the test region.
    """
    path = Path(path)
    spec = SynthSpec(segments=[])
    scalar_keys = {
        "train points": ("train_points", int),
        "test points": ("test_points", int),
        "variables": ("variables", int),
        "noise std": ("noise_std", float),
    }
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if ":" not in line:
                raise DataError(f"{path}: line {lineno}: expected 'key: value'")
            key, _, value = line.partition(":")
            key, value = key.strip(), value.strip()
            if key == "segment":
                parts = value.split()
                if len(parts) != 4:
                    raise DataError(
                        f"{path}: line {lineno}: segment needs 'kind start length magnitude'"
                    )
                kind = parts[0]
                if kind not in SEGMENT_KINDS:
                    raise DataError(f"{path}: line {lineno}: unknown segment kind {kind!r}")
                try:
                    seg = AnomalySegment(kind, int(parts[1]), int(parts[2]), float(parts[3]))
                except ValueError:
                    raise DataError(f"{path}: line {lineno}: malformed segment numbers") from None
                spec.segments.append(seg)
            elif key in scalar_keys:
                attr, cast = scalar_keys[key]
                try:
                    setattr(spec, attr, cast(value))
                except ValueError:
                    raise DataError(f"{path}: line {lineno}: bad value for {key!r}") from None
            else:
                raise DataError(f"{path}: line {lineno}: unknown key {key!r}")
    _validate_segments(spec.segments, spec.test_points)
    return spec
