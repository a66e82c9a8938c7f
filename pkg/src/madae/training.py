"""Alternating adversarial training loop, config file I/O, checkpoints."""

from __future__ import annotations

import json
import math
import struct
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from madae.autodiff import AdamState, Tape, Tensor, adam_step
from madae.data import WindowedDataset
from madae.model import (
    ModelBundle,
    check_architecture,
    decode,
    discriminate,
    predict_backward,
    predict_forward,
)
from madae.objective import LossReport, LossWeights, loss_adv, loss_full, loss_pred, loss_rec


class ConfigError(ValueError):
    """Invalid training configuration or config file."""


class CheckpointError(ValueError):
    """Unreadable or incompatible checkpoint file."""


class TrainingError(RuntimeError):
    """Training aborted (non-finite loss)."""


@dataclass
class TrainConfig:
    """Hyperparameters; field defaults follow the reference settings."""

    window: int = 32
    latent: int = 16
    memory_slots: int = 512
    pred_steps: int = 7
    rec_weight: float = 1.0
    fwd_weight: float = 2.0
    back_weight: float = 0.1
    learning_rate: float = 1e-3
    epochs: int = 150
    batches_per_epoch: int = 512
    batch_size: int = 64
    seed: int = 0
    no_memory: bool = False
    no_prediction: bool = False
    enc_channels: tuple[int, int] = (32, 64)
    kernel: int = 4
    stride: int = 2
    lstm_hidden: int = 64
    grad_clip: float | None = 5.0
    inclusive_pred_weights: bool = False

    def validate(self) -> None:
        positive = ("window", "latent", "memory_slots", "pred_steps",
                    "batches_per_epoch", "batch_size", "lstm_hidden")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.learning_rate <= 0 or not math.isfinite(self.learning_rate):
            raise ConfigError(f"learning rate must be positive, got {self.learning_rate}")
        for name in ("rec_weight", "fwd_weight", "back_weight"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(f"{name} must be finite")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigError(f"grad clip must be positive or none, got {self.grad_clip}")
        if len(self.enc_channels) != 2 or min(self.enc_channels) < 1:
            raise ConfigError(f"encoder channels must be two positive ints, got {self.enc_channels}")
        try:
            check_architecture(self, n_vars=1)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.rec_weight, self.fwd_weight, self.back_weight)


@dataclass
class TrainBatch:
    x: np.ndarray  # (B, W, K)
    fwd_targets: np.ndarray  # (B, T, K), step i targets x[t + i]
    back_targets: np.ndarray  # (B, T, K), step i targets x[t - W - i]
    end_indices: np.ndarray  # (B,)


@dataclass
class TrainLog:
    seed: int
    epochs: list[LossReport] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)


# config files ---------------------------------------------------------------


def _parse_bool(s: str) -> bool:
    low = s.lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    raise ValueError(s)


def _parse_channels(s: str) -> tuple[int, int]:
    parts = [int(p) for p in s.replace(",", " ").split()]
    if len(parts) != 2:
        raise ValueError(s)
    return (parts[0], parts[1])


def _parse_clip(s: str) -> float | None:
    return None if s.lower() in ("none", "off") else float(s)


CONFIG_KEYS = {
    "window size": ("window", int),
    "latent size": ("latent", int),
    "memory size": ("memory_slots", int),
    "pred step": ("pred_steps", int),
    "reconstruction weight": ("rec_weight", float),
    "forward prediction weight": ("fwd_weight", float),
    "backward prediction weight": ("back_weight", float),
    "learning rate": ("learning_rate", float),
    "epochs": ("epochs", int),
    "batches per epoch": ("batches_per_epoch", int),
    "batch size": ("batch_size", int),
    "seed": ("seed", int),
    "no memory": ("no_memory", _parse_bool),
    "no prediction": ("no_prediction", _parse_bool),
    "encoder channels": ("enc_channels", _parse_channels),
    "kernel size": ("kernel", int),
    "stride": ("stride", int),
    "lstm hidden": ("lstm_hidden", int),
    "grad clip": ("grad_clip", _parse_clip),
    "inclusive pred weights": ("inclusive_pred_weights", _parse_bool),
}

_FIELD_TO_KEY = {attr: key for key, (attr, _) in CONFIG_KEYS.items()}


def load_train_config(path, overrides: dict | None = None) -> TrainConfig:
    """Read ``key: value`` lines (see CONFIG_KEYS); ``#`` starts a comment."""
    path = Path(path)
    cfg = TrainConfig()
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if ":" not in line:
                raise ConfigError(f"{path}: line {lineno}: expected 'key: value'")
            key, _, value = line.partition(":")
            key, value = key.strip(), value.strip()
            if key not in CONFIG_KEYS:
                raise ConfigError(f"{path}: line {lineno}: unknown config key {key!r}")
            attr, cast = CONFIG_KEYS[key]
            try:
                setattr(cfg, attr, cast(value))
            except ValueError:
                raise ConfigError(
                    f"{path}: line {lineno}: bad value {value!r} for {key!r}"
                ) from None
    for attr, value in (overrides or {}).items():
        setattr(cfg, attr, value)
    cfg.validate()
    return cfg


def save_train_config(config: TrainConfig, path) -> None:
    """Write the fully resolved config in the same format ``load`` reads."""
    lines = []
    for f in fields(config):
        value = getattr(config, f.name)
        if f.name == "enc_channels":
            value = f"{value[0]}, {value[1]}"
        elif f.name == "grad_clip":
            value = "none" if value is None else repr(float(value))
        elif isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{_FIELD_TO_KEY[f.name]}: {value}")
    Path(path).write_text("\n".join(lines) + "\n")


def config_to_dict(config: TrainConfig) -> dict:
    d = {f.name: getattr(config, f.name) for f in fields(config)}
    d["enc_channels"] = list(config.enc_channels)
    return d


def config_from_dict(d: dict) -> TrainConfig:
    kwargs = dict(d)
    kwargs["enc_channels"] = tuple(kwargs["enc_channels"])
    return TrainConfig(**kwargs)


# batch sampling -------------------------------------------------------------


def eligible_end_indices(n_points: int, window: int, horizon: int) -> np.ndarray:
    """Window end indices t with T successors (t + T <= N - 1) and T backward
    targets (t - W - T >= 0) inside the series."""
    lo = window + horizon
    hi = n_points - 1 - horizon
    return np.arange(lo, hi + 1) if hi >= lo else np.arange(0)


def sample_batch(dataset: WindowedDataset, config: TrainConfig,
                 rng: np.random.Generator) -> TrainBatch:
    """Uniformly sample eligible windows plus their prediction targets."""
    series = dataset.source_series()
    if dataset.window_length != config.window:
        raise ConfigError(
            f"dataset windows have length {dataset.window_length}, config says {config.window}"
        )
    elig = eligible_end_indices(series.shape[0], config.window, config.pred_steps)
    if elig.size == 0:
        raise ConfigError(
            f"no eligible window: series of {series.shape[0]} points is too short for "
            f"window {config.window} with {config.pred_steps} prediction steps"
        )
    ends = elig[rng.integers(0, elig.size, size=config.batch_size)]
    steps = np.arange(1, config.pred_steps + 1)
    return TrainBatch(
        x=dataset.windows[ends - (config.window - 1)],
        fwd_targets=series[ends[:, None] + steps[None, :]],
        back_targets=series[ends[:, None] - config.window - steps[None, :]],
        end_indices=ends,
    )


# training loop --------------------------------------------------------------


def clip_gradients(params: list[Tensor], max_norm: float | None) -> float:
    """Scale grads to the global-norm budget; returns the pre-clip norm."""
    total = math.sqrt(sum(float((p.grad * p.grad).sum()) for p in params))
    if max_norm is not None and total > max_norm:
        scale = max_norm / total
        for p in params:
            p.grad *= scale
    return total


def discriminator_step(bundle: ModelBundle, batch: TrainBatch,
                       opt_d: AdamState) -> float:
    """Update only the discriminator, on real windows vs. detached fakes."""
    cfg = bundle.config
    x = Tensor(batch.x)
    d_params = bundle.discriminator_parameters()
    fake_const = bundle.reconstruct(x).detach()
    with Tape() as tape:
        d_loss, _ = loss_adv(discriminate(bundle.disc, x),
                             discriminate(bundle.disc, fake_const))
    tape.backward(d_loss)
    clip_gradients(d_params, cfg.grad_clip)
    adam_step(opt_d, d_params)
    return d_loss.item()


def generator_step(bundle: ModelBundle, batch: TrainBatch,
                   opt_g: AdamState) -> tuple[float, float, float, float, float]:
    """Update encoder, memory, decoder and predictors on the full objective."""
    cfg = bundle.config
    weights = cfg.loss_weights()
    x = Tensor(batch.x)
    g_params = bundle.generator_parameters()
    with Tape() as tape:
        z = bundle.latents(x)
        xhat = decode(bundle.decoder, z)
        _, g_adv = loss_adv(discriminate(bundle.disc, x),
                            discriminate(bundle.disc, xhat))
        rec = loss_rec(x, xhat)
        if cfg.no_prediction:
            lp = lpb = Tensor(0.0)
        else:
            lp = loss_pred(Tensor(batch.fwd_targets),
                           predict_forward(bundle.pred_fwd, z),
                           cfg.inclusive_pred_weights)
            lpb = loss_pred(Tensor(batch.back_targets),
                            predict_backward(bundle.pred_back, z),
                            cfg.inclusive_pred_weights)
        full = loss_full(g_adv, rec, lp, lpb, weights)
    tape.backward(full)
    clip_gradients(g_params, cfg.grad_clip)
    adam_step(opt_g, g_params)
    # the generator pass also deposits grads on the discriminator; drop them
    for p in bundle.discriminator_parameters():
        p.grad = None
    return rec.item(), g_adv.item(), lp.item(), lpb.item(), full.item()


def train_step(bundle: ModelBundle, batch: TrainBatch, opt_d: AdamState,
               opt_g: AdamState) -> LossReport:
    """One discriminator update followed by one generator update."""
    adv_d = discriminator_step(bundle, batch, opt_d)
    rec, adv_g, lp, lpb, full = generator_step(bundle, batch, opt_g)
    return LossReport(rec=rec, adv_d=adv_d, adv_g=adv_g,
                      pred_fwd=lp, pred_back=lpb, full=full)


def train(dataset: WindowedDataset, config: TrainConfig,
          progress=None) -> tuple[ModelBundle, TrainLog]:
    """Run the full loop; (seed, config, data) determine the result bit-exactly.

    ``progress``, if given, is called with (epoch_index, LossReport) after
    each epoch.
    """
    config.validate()
    bundle = ModelBundle.initialize(config, dataset.n_vars)
    log = TrainLog(seed=config.seed)
    if config.epochs == 0:
        return bundle, log
    # probe eligibility up front so misconfiguration fails before any update
    probe = np.random.Generator(np.random.PCG64(0))
    sample_batch(dataset, config, probe)

    rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(config.seed, spawn_key=(1,)))
    )
    opt_d = AdamState(learning_rate=config.learning_rate)
    opt_g = AdamState(learning_rate=config.learning_rate)
    for epoch in range(config.epochs):
        started = time.perf_counter()
        totals = np.zeros(6)
        for b in range(config.batches_per_epoch):
            batch = sample_batch(dataset, config, rng)
            report = train_step(bundle, batch, opt_d, opt_g)
            vals = (report.rec, report.adv_d, report.adv_g,
                    report.pred_fwd, report.pred_back, report.full)
            if not all(math.isfinite(v) for v in vals):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch + 1}, batch {b + 1}: {report}"
                )
            totals += vals
        totals /= config.batches_per_epoch
        epoch_report = LossReport(*(float(v) for v in totals))
        log.epochs.append(epoch_report)
        log.epoch_seconds.append(time.perf_counter() - started)
        if progress is not None:
            progress(epoch, epoch_report)
    return bundle, log


def write_train_log(path, log: TrainLog) -> None:
    header = "epoch,rec,adv_d,adv_g,pred_fwd,pred_back,full,seconds"
    rows = [header]
    for i, (r, secs) in enumerate(zip(log.epochs, log.epoch_seconds), start=1):
        rows.append(f"{i},{r.rec!r},{r.adv_d!r},{r.adv_g!r},"
                    f"{r.pred_fwd!r},{r.pred_back!r},{r.full!r},{secs:.3f}")
    Path(path).write_text("\n".join(rows) + "\n")


# checkpoints ----------------------------------------------------------------

_MAGIC = b"MADC"
_VERSION = 1


def save_checkpoint(bundle: ModelBundle, path) -> None:
    """Versioned container: magic, version, JSON manifest (config, n_vars,
    named block shapes), then raw little-endian float64 blocks in order."""
    manifest = {
        "format_version": _VERSION,
        "n_vars": bundle.n_vars,
        "config": config_to_dict(bundle.config),
        "blocks": [{"name": name, "shape": list(t.shape)}
                   for name, t in bundle.parameters()],
    }
    payload = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(struct.pack("<Q", len(payload)))
        fh.write(payload)
        for _, t in bundle.parameters():
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def _expected_blocks(config: TrainConfig, n_vars: int) -> list[tuple[str, tuple[int, ...]]]:
    probe = ModelBundle.initialize(config, n_vars)
    return [(name, t.shape) for name, t in probe.parameters()]


def load_checkpoint(path, expected_config: TrainConfig | None = None) -> ModelBundle:
    """Rebuild a bundle; every shape is validated against the manifest.

    With ``expected_config`` the manifest must additionally describe the same
    architecture, otherwise the first mismatching block is named.
    """
    raw = Path(path).read_bytes()
    head = len(_MAGIC) + 4 + 8
    if len(raw) < head or raw[: len(_MAGIC)] != _MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (version,) = struct.unpack_from("<I", raw, len(_MAGIC))
    if version != _VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    (mlen,) = struct.unpack_from("<Q", raw, len(_MAGIC) + 4)
    if len(raw) < head + mlen:
        raise CheckpointError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(raw[head : head + mlen].decode("utf-8"))
        config = config_from_dict(manifest["config"])
        n_vars = int(manifest["n_vars"])
        blocks = [(b["name"], tuple(b["shape"])) for b in manifest["blocks"]]
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: bad manifest ({exc})") from None

    if expected_config is not None:
        for (name, shape), (exp_name, exp_shape) in zip(
            blocks, _expected_blocks(expected_config, n_vars)
        ):
            if name != exp_name or shape != exp_shape:
                raise CheckpointError(
                    f"{path}: block {name!r} has shape {list(shape)}, expected "
                    f"{exp_name!r} with shape {list(exp_shape)}"
                )

    bundle = ModelBundle.initialize(config, n_vars)
    params = bundle.parameters()
    if [name for name, _ in blocks] != [name for name, _ in params]:
        raise CheckpointError(f"{path}: manifest block list does not match architecture")
    offset = head + mlen
    for (name, shape), (_, t) in zip(blocks, params):
        if shape != t.shape:
            raise CheckpointError(
                f"{path}: block {name!r} has shape {list(shape)}, expected {list(t.shape)}"
            )
        nbytes = t.size * 8
        if offset + nbytes > len(raw):
            raise CheckpointError(f"{path}: truncated at block {name!r}")
        t.data = np.frombuffer(raw, dtype="<f8", count=t.size,
                               offset=offset).astype(np.float64).reshape(shape)
        offset += nbytes
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    return bundle
