"""Model components: conv encoder/decoder, slot memory, discriminator, predictors.

Everything is assembled from the taped primitives in :mod:`madae.autodiff`,
so one finite-difference mechanism can check gradients end to end. Windows
are (B, W, K); convolutions run channels-first internally.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from madae.autodiff import Tensor, concat, conv1d


@dataclass
class Affine:
    w: Tensor
    b: Tensor


@dataclass
class ConvLayer:
    w: Tensor  # (C_out, C_in, K)
    b: Tensor  # (C_out, 1), broadcast over positions


@dataclass
class Encoder:
    conv0: ConvLayer
    conv1: ConvLayer
    proj: Affine  # per-position map to the latent dimension
    stride: int
    padding: int


@dataclass
class MemoryBank:
    slots: Tensor  # (M, D)
    query: Affine  # addressing head, D -> M logits


@dataclass
class Decoder:
    proj: Affine  # per-position map back from the latent dimension
    up0: ConvLayer
    up1: ConvLayer
    stride: int
    padding: int  # stride-1 conv padding applied after zero-insertion


@dataclass
class Discriminator:
    conv0: ConvLayer
    conv1: ConvLayer
    out: Affine  # flattened features -> 1 logit
    stride: int
    padding: int


@dataclass
class Predictor:
    """LSTM over the latent sequence with a two-layer head emitting T x K."""

    wx: Tensor  # (D, 4H), gate order i, f, g, o
    wh: Tensor  # (H, 4H)
    b: Tensor  # (4H,)
    fc0: Affine
    fc1: Affine
    hidden: int
    horizon: int
    n_vars: int


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    limit = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-limit, limit, shape), requires_grad=True)


def _zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def _conv_layer(rng, c_in: int, c_out: int, kernel: int) -> ConvLayer:
    return ConvLayer(w=_uniform(rng, (c_out, c_in, kernel), c_in * kernel),
                     b=_zeros((c_out, 1)))


def _affine(rng, d_in: int, d_out: int) -> Affine:
    return Affine(w=_uniform(rng, (d_in, d_out), d_in), b=_zeros((d_out,)))


def _predictor(rng, latent: int, hidden: int, horizon: int, n_vars: int) -> Predictor:
    return Predictor(
        wx=_uniform(rng, (latent, 4 * hidden), latent),
        wh=_uniform(rng, (hidden, 4 * hidden), hidden),
        b=_zeros((4 * hidden,)),
        fc0=_affine(rng, hidden, hidden),
        fc1=_affine(rng, hidden, horizon * n_vars),
        hidden=hidden,
        horizon=horizon,
        n_vars=n_vars,
    )


@dataclass
class ModelBundle:
    """All learnable parameters plus the hyperparameter record they came from."""

    encoder: Encoder
    memory: MemoryBank
    decoder: Decoder
    disc: Discriminator
    pred_fwd: Predictor
    pred_back: Predictor
    config: object  # TrainConfig
    n_vars: int

    @classmethod
    def initialize(cls, config, n_vars: int) -> "ModelBundle":
        """Seeded init: weights uniform(+-1/sqrt(fan_in)) drawn in declaration
        order from PCG64(SeedSequence(seed, spawn_key=(0,))); biases zero;
        memory slots uniform(+-1/sqrt(latent))."""
        check_architecture(config, n_vars)
        k, s = config.kernel, config.stride
        c0, c1 = config.enc_channels
        latent, hidden = config.latent, config.lstm_hidden
        lat_len = config.window // (s * s)
        enc_pad = (k - s) // 2
        dec_pad = (k + s - 2) // 2
        rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(config.seed, spawn_key=(0,)))
        )
        encoder = Encoder(
            conv0=_conv_layer(rng, n_vars, c0, k),
            conv1=_conv_layer(rng, c0, c1, k),
            proj=_affine(rng, c1, latent),
            stride=s,
            padding=enc_pad,
        )
        memory = MemoryBank(
            slots=Tensor(
                rng.uniform(-1.0 / np.sqrt(latent), 1.0 / np.sqrt(latent),
                            (config.memory_slots, latent)),
                requires_grad=True,
            ),
            query=_affine(rng, latent, config.memory_slots),
        )
        decoder = Decoder(
            proj=_affine(rng, latent, c1),
            up0=_conv_layer(rng, c1, c0, k),
            up1=_conv_layer(rng, c0, n_vars, k),
            stride=s,
            padding=dec_pad,
        )
        disc = Discriminator(
            conv0=_conv_layer(rng, n_vars, c0, k),
            conv1=_conv_layer(rng, c0, c1, k),
            out=_affine(rng, c1 * lat_len, 1),
            stride=s,
            padding=enc_pad,
        )
        pred_fwd = _predictor(rng, latent, hidden, config.pred_steps, n_vars)
        pred_back = _predictor(rng, latent, hidden, config.pred_steps, n_vars)
        return cls(encoder, memory, decoder, disc, pred_fwd, pred_back, config, n_vars)

    # parameter bookkeeping -------------------------------------------------

    def parameters(self) -> list[tuple[str, Tensor]]:
        """(name, tensor) pairs in declaration order; fixes checkpoint layout."""
        named = []

        def conv(prefix, layer):
            named.append((f"{prefix}.w", layer.w))
            named.append((f"{prefix}.b", layer.b))

        def affine(prefix, layer):
            named.append((f"{prefix}.w", layer.w))
            named.append((f"{prefix}.b", layer.b))

        conv("encoder.conv0", self.encoder.conv0)
        conv("encoder.conv1", self.encoder.conv1)
        affine("encoder.proj", self.encoder.proj)
        named.append(("memory.slots", self.memory.slots))
        affine("memory.query", self.memory.query)
        affine("decoder.proj", self.decoder.proj)
        conv("decoder.up0", self.decoder.up0)
        conv("decoder.up1", self.decoder.up1)
        conv("disc.conv0", self.disc.conv0)
        conv("disc.conv1", self.disc.conv1)
        affine("disc.out", self.disc.out)
        for tag, pred in (("pred_fwd", self.pred_fwd), ("pred_back", self.pred_back)):
            named.append((f"{tag}.wx", pred.wx))
            named.append((f"{tag}.wh", pred.wh))
            named.append((f"{tag}.b", pred.b))
            affine(f"{tag}.fc0", pred.fc0)
            affine(f"{tag}.fc1", pred.fc1)
        return named

    def discriminator_parameters(self) -> list[Tensor]:
        return [t for name, t in self.parameters() if name.startswith("disc.")]

    def generator_parameters(self) -> list[Tensor]:
        """Everything the generator step updates, honoring ablation flags."""
        out = []
        for name, t in self.parameters():
            if name.startswith("disc."):
                continue
            if name.startswith("memory.") and self.config.no_memory:
                continue
            if name.startswith(("pred_fwd.", "pred_back.")) and self.config.no_prediction:
                continue
            out.append(t)
        return out

    def zero_grads(self) -> None:
        for _, t in self.parameters():
            t.grad = None

    @property
    def latent_length(self) -> int:
        return self.config.window // (self.config.stride ** 2)

    # convenience forward ---------------------------------------------------

    def latents(self, x: Tensor) -> Tensor:
        """Memory-conditioned latent sequence (identity read when ablated)."""
        z = encode(self.encoder, x)
        return z if self.config.no_memory else memory_read(self.memory, z)

    def reconstruct(self, x: Tensor) -> Tensor:
        return decode(self.decoder, self.latents(x))


def check_architecture(config, n_vars: int) -> None:
    k, s = config.kernel, config.stride
    if n_vars < 1:
        raise ValueError(f"need at least one variable, got {n_vars}")
    if s < 1 or k < s or (k - s) % 2 != 0:
        raise ValueError(
            f"kernel {k} and stride {s} must satisfy kernel >= stride with even difference"
        )
    if config.window % (s * s) != 0 or config.window // (s * s) < 1:
        raise ValueError(
            f"window {config.window} must be a positive multiple of stride^2 = {s * s}"
        )


# forward passes -------------------------------------------------------------


def _conv_stack(conv0: ConvLayer, conv1: ConvLayer, x: Tensor, stride: int,
                padding: int) -> Tensor:
    h = x.transpose((0, 2, 1))  # (B, K, W)
    h = (conv1d(h, conv0.w, stride=stride, padding=padding) + conv0.b).relu()
    h = (conv1d(h, conv1.w, stride=stride, padding=padding) + conv1.b).relu()
    return h  # (B, C1, L)


def encode(enc: Encoder, x: Tensor) -> Tensor:
    """(B, W, K) window -> (B, L, D) latent sequence, L = W / stride^2."""
    h = _conv_stack(enc.conv0, enc.conv1, x, enc.stride, enc.padding)
    return h.transpose((0, 2, 1)) @ enc.proj.w + enc.proj.b


def memory_addressing(mem: MemoryBank, z: Tensor) -> Tensor:
    """Per-position softmax attention over the memory slots: (B, L, M)."""
    return (z @ mem.query.w + mem.query.b).softmax(axis=-1)


def memory_read(mem: MemoryBank, z: Tensor) -> Tensor:
    """Replace each latent vector by its addressed convex combination of slots."""
    return memory_addressing(mem, z) @ mem.slots


def _upsample(x: Tensor, stride: int) -> Tensor:
    """Insert stride-1 zeros between positions: (B, C, L) -> (B, C, s*L - (s-1))."""
    if stride == 1:
        return x
    b, c, length = x.shape
    expanded = x.reshape((b, c, length, 1))
    zeros = Tensor(np.zeros((b, c, length, stride - 1)))
    inter = concat([expanded, zeros], axis=3).reshape((b, c, length * stride))
    return inter[:, :, : length * stride - (stride - 1)]


def decode(dec: Decoder, zhat: Tensor) -> Tensor:
    """(B, L, D) latent sequence -> (B, W, K) reconstruction.

    Each stage zero-inserts and runs a stride-1 conv, the transposed-conv
    mirror of the encoder's strided convs; the final stage is linear.
    """
    h = (zhat @ dec.proj.w + dec.proj.b).relu()
    h = h.transpose((0, 2, 1))  # (B, C1, L)
    h = _upsample(h, dec.stride)
    h = (conv1d(h, dec.up0.w, stride=1, padding=dec.padding) + dec.up0.b).relu()
    h = _upsample(h, dec.stride)
    h = conv1d(h, dec.up1.w, stride=1, padding=dec.padding) + dec.up1.b
    return h.transpose((0, 2, 1))


def discriminate(disc: Discriminator, x: Tensor) -> Tensor:
    """(B, W, K) window -> (B,) probability of being a real window."""
    h = _conv_stack(disc.conv0, disc.conv1, x, disc.stride, disc.padding)
    flat = h.reshape((h.shape[0], h.shape[1] * h.shape[2]))
    return (flat @ disc.out.w + disc.out.b).sigmoid().reshape((h.shape[0],))


def _lstm_final_hidden(p: Predictor, z: Tensor, reverse: bool) -> Tensor:
    bsz, length, _ = z.shape
    hid = p.hidden
    h = Tensor(np.zeros((bsz, hid)))
    c = Tensor(np.zeros((bsz, hid)))
    order = range(length - 1, -1, -1) if reverse else range(length)
    for step in order:
        xt = z[:, step, :]
        gates = xt @ p.wx + h @ p.wh + p.b
        i = gates[:, 0:hid].sigmoid()
        f = gates[:, hid : 2 * hid].sigmoid()
        g = gates[:, 2 * hid : 3 * hid].tanh()
        o = gates[:, 3 * hid : 4 * hid].sigmoid()
        c = f * c + i * g
        h = o * c.tanh()
    return h


def _predict(p: Predictor, z: Tensor, reverse: bool) -> Tensor:
    h = _lstm_final_hidden(p, z, reverse)
    y = (h @ p.fc0.w + p.fc0.b).relu() @ p.fc1.w + p.fc1.b
    return y.reshape((z.shape[0], p.horizon, p.n_vars))


def predict_forward(p: Predictor, z: Tensor) -> Tensor:
    """T-step forecast of the points after the window, nearest first."""
    return _predict(p, z, reverse=False)


def predict_backward(p: Predictor, z: Tensor) -> Tensor:
    """T-step forecast of the points before the window, nearest first;
    consumes the latent sequence newest-to-oldest."""
    return _predict(p, z, reverse=True)
