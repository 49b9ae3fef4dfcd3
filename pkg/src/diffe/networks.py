"""Diff-E sub-networks: time-conditional U-Net denoiser, encoder, conditioned
decoder and classifier, plus the bundle that wires them together.

All temporal downsampling is a stride-2 convolution with padding k//2, so a
length-L map becomes ceil(L/2).  Upsampling repeats samples and crops back to
the matching skip length, which keeps every input length usable without
padding the signal itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DimensionError
from .nn import Conv1d, ConvNormAct, Linear, Module, param_count
from .scheduler import NoiseSchedule

ABLATIONS = ("full", "no_ddpm", "no_ddpm_no_decoder")


@dataclass
class ModelConfig:
    in_channels: int = 8
    n_classes: int = 13
    latent_dim: int = 256
    kernel_size: int = 3
    groups: int = 4
    time_dim: int = 128
    denoiser_widths: list[int] = field(default_factory=lambda: [32, 64, 64])
    encoder_widths: list[int] = field(default_factory=lambda: [32, 32, 64, 64])
    classifier_hidden: list[int] = field(default_factory=lambda: [512])

    def validate(self) -> None:
        if self.in_channels < 1 or self.n_classes < 2:
            raise ConfigError("model.in_channels must be >= 1 and model.n_classes >= 2")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError("model.kernel_size must be a positive odd integer")
        if self.time_dim < 2 or self.time_dim % 2:
            raise ConfigError("model.time_dim must be a positive even integer")
        if len(self.encoder_widths) != len(self.denoiser_widths) + 1:
            raise ConfigError("model.encoder_widths needs exactly one more stage than "
                              "model.denoiser_widths")
        for w in list(self.denoiser_widths) + list(self.encoder_widths):
            if w < 1 or w % self.groups:
                raise ConfigError(f"width {w} not divisible by model.groups={self.groups}")
        if self.latent_dim % self.encoder_widths[-1]:
            raise ConfigError("model.latent_dim must be a multiple of the last encoder width")


def timestep_embedding(t, dim: int) -> np.ndarray:
    """Sinusoidal embedding of integer steps, shape [len(t), dim]."""
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    args = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


def _up_to(h: Tensor, length: int) -> Tensor:
    h = ad.upsample_nearest(h, 2)
    return h if h.shape[-1] == length else h[:, :, :length]


def _time_shift(proj: Linear, emb: Tensor) -> Tensor:
    s = proj(emb)
    return s.reshape(s.shape[0], s.shape[1], 1)


class Denoiser(Module):
    """Time-conditional U-Net predicting x0 from x_t."""

    def __init__(self, cfg: ModelConfig, T: int, rng: np.random.Generator):
        k, g, td = cfg.kernel_size, cfg.groups, cfg.time_dim
        self.T = T
        self.time_dim = td
        self.time_mlp = [Linear(td, td, rng), Linear(td, td, rng)]
        widths = list(cfg.denoiser_widths)
        self.inc = Conv1d(cfg.in_channels, widths[0], k, rng)
        self.down, self.down_proj, self.downsample = [], [], []
        c = widths[0]
        for w in widths:
            self.down.append(ConvNormAct(c, w, k, g, rng))
            self.down_proj.append(Linear(td, w, rng))
            self.downsample.append(Conv1d(w, w, k, rng, stride=2))
            c = w
        self.mid = ConvNormAct(c, c, k, g, rng)
        self.mid_proj = Linear(td, c, rng)
        self.up, self.up_proj = [], []
        for w in reversed(widths):
            self.up.append(ConvNormAct(c + w, w, k, g, rng))
            self.up_proj.append(Linear(td, w, rng))
            c = w
        self.out = Conv1d(widths[0], cfg.in_channels, 1, rng)

    def tap_widths(self) -> list[int]:
        return [blk.conv.weight.shape[0] for blk in self.up]

    def forward(self, x_t: Tensor, t) -> tuple[Tensor, list[Tensor]]:
        t = np.asarray(t).reshape(-1)
        if t.shape[0] != x_t.shape[0]:
            raise DimensionError("denoise: need one timestep per sample")
        if np.any(t < 1) or np.any(t > self.T):
            raise IndexError(f"timestep outside [1, {self.T}]")
        emb = Tensor(timestep_embedding(t, self.time_dim))
        for layer in self.time_mlp:
            emb = ad.silu(layer(emb))

        h = self.inc(x_t)
        skips = []
        for blk, proj, down in zip(self.down, self.down_proj, self.downsample):
            h = blk(h, _time_shift(proj, emb))
            skips.append(h)
            h = down(h)
        h = self.mid(h, _time_shift(self.mid_proj, emb))
        taps = []
        for blk, proj in zip(self.up, self.up_proj):
            skip = skips.pop()
            h = ad.concat([_up_to(h, skip.shape[-1]), skip], axis=1)
            h = blk(h, _time_shift(proj, emb))
            taps.append(h)
        return self.out(h), taps


class Encoder(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        k, g = cfg.kernel_size, cfg.groups
        self.latent_dim = cfg.latent_dim
        self.stages = []
        c = cfg.in_channels
        for i, w in enumerate(cfg.encoder_widths):
            self.stages.append(ConvNormAct(c, w, k, g, rng, stride=1 if i == 0 else 2))
            c = w
        self.pool_len = cfg.latent_dim // c

    def widths(self) -> list[int]:
        return [s.conv.weight.shape[0] for s in self.stages]

    def forward(self, x0: Tensor) -> tuple[Tensor, list[Tensor]]:
        feats = []
        h = x0
        for stage in self.stages:
            h = stage(h)
            feats.append(h)
        pooled = ad.adaptive_avg_pool1d(h, self.pool_len)
        return pooled.reshape(pooled.shape[0], self.latent_dim), feats


class Decoder(Module):
    """Mirror of the encoder.  When conditioned, each up stage also concatenates
    the matching denoiser up-path activation, and the output layer sees x0 and
    the denoiser estimate alongside the last feature map."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator,
                 tap_widths: list[int] | None = None):
        k, g = cfg.kernel_size, cfg.groups
        enc = list(cfg.encoder_widths)
        self.conditioned = tap_widths is not None
        taps = tap_widths if tap_widths is not None else [0] * (len(enc) - 1)
        if len(taps) != len(enc) - 1:
            raise ConfigError("decoder needs one denoiser tap per upsampling stage")
        self.up = []
        c = enc[-1]
        for level, tw in zip(range(len(enc) - 2, -1, -1), taps):
            self.up.append(ConvNormAct(c + enc[level] + tw, enc[level], k, g, rng))
            c = enc[level]
        extra = 2 * cfg.in_channels if self.conditioned else 0
        self.out = Conv1d(c + extra, cfg.in_channels, k, rng)

    def forward(self, enc_features: list[Tensor], ddpm_features: list[Tensor] | None = None,
                x0: Tensor | None = None, x0_hat: Tensor | None = None) -> Tensor:
        if len(enc_features) != len(self.up) + 1:
            raise DimensionError(f"decoder expects {len(self.up) + 1} encoder features, "
                                 f"got {len(enc_features)}")
        if self.conditioned:
            if ddpm_features is None or len(ddpm_features) != len(self.up):
                raise DimensionError(f"decoder expects {len(self.up)} denoiser taps")
            if x0 is None or x0_hat is None or x0.shape != x0_hat.shape:
                raise DimensionError("conditioned decoder needs x0 and x0_hat of equal shape")
        h = enc_features[-1]
        for i, blk in enumerate(self.up):
            skip = enc_features[-2 - i]
            parts = [_up_to(h, skip.shape[-1]), skip]
            if self.conditioned:
                tap = ddpm_features[i]
                if tap.shape[-1] != skip.shape[-1] or tap.shape[0] != skip.shape[0]:
                    raise DimensionError(f"denoiser tap {tap.shape} does not match encoder "
                                         f"feature {skip.shape}")
                parts.append(tap)
            h = blk(ad.concat(parts, axis=1))
        if self.conditioned:
            h = ad.concat([h, x0, x0_hat], axis=1)
        return self.out(h)


class Classifier(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        dims = [cfg.latent_dim, *cfg.classifier_hidden, cfg.n_classes]
        self.layers = [Linear(a, b, rng) for a, b in zip(dims[:-1], dims[1:])]
        self.in_dim = cfg.latent_dim

    def forward(self, z: Tensor) -> Tensor:
        if z.ndim != 2 or z.shape[1] != self.in_dim:
            raise DimensionError(f"classifier expects [B,{self.in_dim}], got {z.shape}")
        h = z
        for i, layer in enumerate(self.layers):
            h = layer(h)
            if i < len(self.layers) - 1:
                h = ad.silu(h)
        return h


class DiffEModel(Module):
    """Parameter bundle for one Diff-E run (or one of its ablation arms)."""

    def __init__(self, cfg: ModelConfig, T: int, ablation: str = "full", seed: int = 0,
                 input_scale: float = 1.0):
        cfg.validate()
        if ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation {ablation!r}; expected one of {ABLATIONS}")
        self.config = cfg
        self.T = T
        self.ablation = ablation
        self.input_scale = float(input_scale)
        # one stream per sub-network so shared parts start identical across arms
        rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(4)]
        self.denoiser = Denoiser(cfg, T, rngs[0]) if ablation == "full" else None
        self.encoder = Encoder(cfg, rngs[1])
        if ablation == "full":
            self.decoder = Decoder(cfg, rngs[2], tap_widths=self.denoiser.tap_widths())
        elif ablation == "no_ddpm":
            self.decoder = Decoder(cfg, rngs[2])
        else:
            self.decoder = None
        self.classifier = Classifier(cfg, rngs[3])

    def named_parameters(self, prefix: str = ""):
        for name in ("denoiser", "encoder", "decoder", "classifier"):
            part = getattr(self, name)
            if part is not None:
                yield from part.named_parameters(f"{prefix}{name}.")

    def theta(self) -> list[Tensor]:
        return [] if self.denoiser is None else self.denoiser.parameters()

    def cae_parameters(self) -> list[Tensor]:
        params = self.encoder.parameters() + self.classifier.parameters()
        if self.decoder is not None:
            params += self.decoder.parameters()
        return params

    def scores(self, x0) -> np.ndarray:
        """Inference path: classifier(pool(encoder(x0))); touches nothing else."""
        x = x0.data if isinstance(x0, Tensor) else np.asarray(x0, dtype=np.float64)
        with ad.no_grad():
            z, _ = self.encoder(Tensor(x / self.input_scale))
            return self.classifier(z).data


def denoise(model: Denoiser, x_t: Tensor, t, schedule: NoiseSchedule | None = None):
    if schedule is not None and schedule.T != model.T:
        raise ConfigError("schedule length does not match the denoiser")
    return model(x_t, t)


def encode(model: Encoder, x0: Tensor):
    return model(x0)


def decode(model: Decoder, enc_features, ddpm_features, x0, x0_hat) -> Tensor:
    return model(enc_features, ddpm_features, x0, x0_hat)


def classify(model: Classifier, z: Tensor) -> Tensor:
    return model(z)


__all__ = [
    "ABLATIONS", "ModelConfig", "Denoiser", "Encoder", "Decoder", "Classifier",
    "DiffEModel", "denoise", "encode", "decode", "classify", "param_count",
    "timestep_embedding",
]
