"""Fully convolutional spectrogram encoder and dual-branch multi-scale decoder."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .functional import BN_MOMENTUM

from .layers import (
    BatchNorm2d,
    Conv2d,
    ConvTranspose2d,
    Layer,
    ParamStore,
    ReLU,
    Resize,
    Sequential,
    Sigmoid,
)

ENCODER_FILTERS = (32, 32, 64, 128, 128, 128, 128)
DECODER_FILTERS = (128, 128, 128, 64, 32, 16)


@dataclass(frozen=True)
class ModelConfig:
    input_size: int = 128
    in_channels: int = 4
    out_channels: int = 3
    encoder_filters: tuple[int, ...] = ENCODER_FILTERS
    decoder_filters: tuple[int, ...] = DECODER_FILTERS
    filter_scale: float = 1.0

    def __post_init__(self):
        n = len(self.encoder_filters)
        if self.input_size != 2 ** n:
            raise ValueError(f"{n} stride-2 stages need input size {2 ** n}, got {self.input_size}")
        if len(self.decoder_filters) != n - 1:
            raise ValueError("decoder needs one filter count per non-final stage")
        if self.out_channels not in (1, 3):
            raise ValueError("out_channels must be 3 (RGB) or 1 (depth)")

    def scaled(self, counts) -> tuple[int, ...]:
        return tuple(max(1, int(round(c * self.filter_scale))) for c in counts)

    @property
    def enc_filters(self) -> tuple[int, ...]:
        return self.scaled(self.encoder_filters)

    @property
    def dec_filters(self) -> tuple[int, ...]:
        return self.scaled(self.decoder_filters)

    @property
    def latent_channels(self) -> int:
        # last stage concatenates the main and auxiliary branches
        return 2 * self.enc_filters[-1]

    @classmethod
    def desk(cls, out_channels: int = 3) -> "ModelConfig":
        return cls(out_channels=out_channels, filter_scale=0.25)


def _block(store, name, conv, channels):
    return Sequential(conv, BatchNorm2d(store, f"{name}.bn", channels), ReLU())


class EncoderStage(Layer):
    """4x4/stride-2 main conv in parallel with a 4x4/stride-3 auxiliary conv.

    The auxiliary output is resampled to the main branch's grid and the two are
    concatenated along channels.
    """

    def __init__(self, store, name, cin, filters, rng, need_dx=True):
        main = Conv2d(store, f"{name}.main", cin, filters, 4, 2, 1, rng=rng, need_dx=need_dx)
        aux = Conv2d(store, f"{name}.aux", cin, filters, 4, 3, 1, rng=rng, need_dx=need_dx)
        self.main = _block(store, f"{name}.main", main, filters)
        self.aux = _block(store, f"{name}.aux", aux, filters)
        self.need_dx = need_dx
        self.resize = Resize()
        self.filters = filters

    def forward(self, x, training):
        a = self.main.forward(x, training)
        self.resize.target = a.shape[2:]
        b = self.resize.forward(self.aux.forward(x, training), training)
        return np.concatenate([a, b], axis=1)

    def backward(self, gy):
        ga, gb = gy[:, : self.filters], gy[:, self.filters:]
        da = self.main.backward(ga)
        db = self.aux.backward(self.resize.backward(gb))
        return da + db if self.need_dx else None


class DecoderStage(Layer):
    """Branch A: 4x4/s2 deconv. Branch B: 3x3/s1 conv then 3x3/s2 deconv. Concatenated."""

    def __init__(self, store, name, cin, filters, rng):
        self.a = _block(store, f"{name}.a", ConvTranspose2d(store, f"{name}.a", cin, filters, 4, 2, 1, rng=rng), filters)
        self.b = Sequential(
            _block(store, f"{name}.b1", Conv2d(store, f"{name}.b1", cin, filters, 3, 1, 1, rng=rng), filters),
            _block(
                store,
                f"{name}.b2",
                ConvTranspose2d(store, f"{name}.b2", filters, filters, 3, 2, 1, output_padding=1, rng=rng),
                filters,
            ),
        )
        self.filters = filters

    def forward(self, x, training):
        a = self.a.forward(x, training)
        b = self.b.forward(x, training)
        if a.shape != b.shape:
            raise ValueError(f"decoder branches disagree: {a.shape} vs {b.shape}")
        return np.concatenate([a, b], axis=1)

    def backward(self, gy):
        return self.a.backward(gy[:, : self.filters]) + self.b.backward(gy[:, self.filters:])


class SceneNet:
    """Spectrogram (N, 4, 128, 128) -> image (N, out_channels, 128, 128) in (0, 1)."""

    def __init__(self, cfg: ModelConfig, seed: int = 0, input_grad: bool = False):
        self.cfg = cfg
        self.params = ParamStore()
        rng = np.random.default_rng(seed)
        cin = cfg.in_channels
        self.encoder = []
        for i, f in enumerate(cfg.enc_filters):
            need_dx = input_grad or i > 0
            self.encoder.append(EncoderStage(self.params, f"enc{i + 1}", cin, f, rng, need_dx=need_dx))
            cin = 2 * f
        self.decoder = []
        for i, f in enumerate(cfg.dec_filters):
            self.decoder.append(DecoderStage(self.params, f"dec{len(cfg.enc_filters) - i}", cin, f, rng))
            cin = 2 * f
        self.head = Sequential(ConvTranspose2d(self.params, "dec1", cin, cfg.out_channels, 4, 2, 1, rng=rng), Sigmoid())
        self.params.zero_grad()

    def _check_input(self, x):
        c = self.cfg
        if x.ndim != 4 or x.shape[1:] != (c.in_channels, c.input_size, c.input_size):
            raise ValueError(
                f"expected input (N, {c.in_channels}, {c.input_size}, {c.input_size}), got {x.shape}"
            )

    def encode(self, x, training=False):
        self._check_input(x)
        for stage in self.encoder:
            x = stage.forward(x, training)
        return x

    def decode(self, z, training=False):
        for stage in self.decoder:
            z = stage.forward(z, training)
        return self.head.forward(z, training)

    def forward(self, x, training=False):
        return self.decode(self.encode(x, training), training)

    def backward(self, gy):
        """Accumulates parameter gradients; returns the input gradient only if ``input_grad``."""
        gy = self.head.backward(gy)
        for stage in reversed(self.decoder):
            gy = stage.backward(gy)
        for stage in reversed(self.encoder):
            gy = stage.backward(gy)
        return gy

    def predict(self, x, batch_size: int = 32):
        """Eval-mode forward in chunks."""
        out = [self.forward(x[i:i + batch_size], training=False) for i in range(0, len(x), batch_size)]
        return np.concatenate(out, axis=0)

    def batchnorms(self) -> list[BatchNorm2d]:
        found = []

        def walk(obj):
            if isinstance(obj, BatchNorm2d):
                found.append(obj)
            elif isinstance(obj, (list, tuple)):
                for o in obj:
                    walk(o)
            elif isinstance(obj, Layer):
                for v in vars(obj).values():
                    walk(v)

        walk([self.encoder, self.decoder, self.head])
        return found

    def recalibrate(self, x, batch_size: int = 32) -> None:
        """Replace batch-norm running statistics by exact averages over ``x``.

        Batches are run in training mode with a cumulative-average momentum, so
        every layer's statistics match the batch statistics its weights were
        trained under. Weights are untouched.
        """
        if len(x) < 2:
            raise ValueError("recalibration needs at least two samples")
        layers = self.batchnorms()
        for bn in layers:
            bn.reset_stats(momentum=None)
        for i in range(0, len(x) - 1, batch_size):
            chunk = x[i:i + batch_size]
            if len(chunk) > 1:
                self.forward(np.asarray(chunk, dtype=float), training=True)
        for bn in layers:
            bn.momentum = BN_MOMENTUM

    def embedding(self, x):
        """Flattened 1x1xC encoder output for one (4, H, W) input or a batch."""
        single = x.ndim == 3
        z = self.encode(x[None] if single else x, training=False)
        z = z.reshape(z.shape[0], -1)
        return z[0] if single else z

    def shape_trace(self, batch: int = 1):
        """Spatial sizes and channel counts after every encoder and decoder stage."""
        x = np.zeros((batch, self.cfg.in_channels, self.cfg.input_size, self.cfg.input_size))
        trace = {"encoder": [], "decoder": []}
        for stage in self.encoder:
            x = stage.forward(x, training=False)
            trace["encoder"].append((x.shape[2], x.shape[1]))
        for stage in self.decoder:
            x = stage.forward(x, training=False)
            trace["decoder"].append((x.shape[2], x.shape[1]))
        x = self.head.forward(x, training=False)
        trace["decoder"].append((x.shape[2], x.shape[1]))
        return trace
