"""Synthetic class-conditioned EEG-like data.

Each trial carries a class-specific high-gamma burst (carrier, amplitude and
spatial pattern) on top of a continuous 1/f background and 60 Hz mains
interference.  Trials live in fixed-length slots of a continuous recording so
that the preprocessing chain can filter across trial boundaries.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.signal.windows import tukey

from .dataset import ContinuousRecording, EpochedDataset, recording_to_slots
from .errors import ConfigError


@dataclass
class SynthSpec:
    n_classes: int = 13
    trials_per_class: int = 100
    channels: int = 8
    fs: float = 250.0
    epoch_s: float = 2.0
    pre_s: float = 1.0
    post_s: float = 0.5
    carriers: list[float] | None = None          # default: evenly spaced in [72, 122] Hz
    carrier_jitter: float = 1.0
    amplitudes: list[float] | None = None        # default: ``amplitude`` for every class
    amplitude: float = 3.0
    channel_weights: list[list[float]] | None = None   # default: drawn from the seed
    burst_s: list[float] | None = None           # [min, max] burst duration
    noise_level: float = 6.0
    line_noise: float = 2.0
    seed: int = 0

    def resolved_carriers(self) -> np.ndarray:
        if self.carriers is not None:
            return np.asarray(self.carriers, dtype=np.float64)
        return np.linspace(72.0, 122.0, self.n_classes)

    def resolved_amplitudes(self) -> np.ndarray:
        if self.amplitudes is not None:
            return np.asarray(self.amplitudes, dtype=np.float64)
        return np.full(self.n_classes, float(self.amplitude))

    def resolved_weights(self) -> np.ndarray:
        if self.channel_weights is not None:
            return np.asarray(self.channel_weights, dtype=np.float64)
        rng = np.random.default_rng([self.seed, 3])
        return rng.uniform(0.2, 1.0, size=(self.n_classes, self.channels))

    def resolved_burst(self) -> tuple[float, float]:
        lo, hi = self.burst_s if self.burst_s is not None else (0.8, 1.4)
        return float(lo), float(hi)

    def validate(self) -> None:
        if self.n_classes < 2:
            raise ConfigError("data.n_classes must be >= 2")
        if self.trials_per_class < 1:
            raise ConfigError("data.trials_per_class must be >= 1")
        if self.channels < 1:
            raise ConfigError("data.channels must be >= 1")
        if self.fs <= 0 or self.epoch_s <= 0 or self.pre_s < 0 or self.post_s < 0:
            raise ConfigError("data.fs, data.epoch_s must be positive; pre_s/post_s non-negative")
        carriers = self.resolved_carriers()
        if carriers.shape != (self.n_classes,):
            raise ConfigError(f"data.carriers needs {self.n_classes} entries")
        nyq = self.fs / 2.0
        if np.any(carriers - self.carrier_jitter <= 0) or np.any(carriers + self.carrier_jitter >= nyq):
            raise ConfigError(f"data.carriers must lie in (0, {nyq}) Hz including "
                              f"+/-{self.carrier_jitter} Hz jitter: {carriers.tolist()}")
        amps = self.resolved_amplitudes()
        if amps.shape != (self.n_classes,) or np.any(amps < 0):
            raise ConfigError("data.amplitudes must be non-negative, one per class")
        if self.resolved_weights().shape != (self.n_classes, self.channels):
            raise ConfigError("data.channel_weights must be [n_classes][channels]")
        lo, hi = self.resolved_burst()
        if not 0 < lo <= hi <= self.epoch_s:
            raise ConfigError("data.burst_s must satisfy 0 < min <= max <= epoch_s")
        if self.noise_level < 0 or self.line_noise < 0:
            raise ConfigError("data.noise_level and data.line_noise must be non-negative")


def pink_noise(rng: np.random.Generator, shape: tuple[int, int], fs: float) -> np.ndarray:
    """Unit-variance noise with power spectral density proportional to 1/f."""
    n = shape[-1]
    spec = np.fft.rfft(rng.standard_normal(shape), axis=-1)
    f = np.fft.rfftfreq(n, d=1.0 / fs)
    scale = np.zeros_like(f)
    scale[1:] = 1.0 / np.sqrt(f[1:])
    out = np.fft.irfft(spec * scale, n=n, axis=-1)
    std = out.std(axis=-1, keepdims=True)
    return out / np.where(std > 0, std, 1.0)


def _burst(spec: SynthSpec, cls: int, trial: int, carriers, amps, weights) -> np.ndarray:
    rng = np.random.default_rng([spec.seed, 1, trial])
    L = int(round(spec.epoch_s * spec.fs))
    lo, hi = spec.resolved_burst()
    n_burst = int(round(rng.uniform(lo, hi) * spec.fs))
    start = int(rng.integers(0, L - n_burst + 1))
    freq = carriers[cls] + rng.uniform(-spec.carrier_jitter, spec.carrier_jitter)
    phase = rng.uniform(0, 2 * np.pi)
    amp = amps[cls] * rng.uniform(0.8, 1.2)
    t = np.arange(n_burst) / spec.fs
    wave = amp * tukey(n_burst, 0.5) * np.sin(2 * np.pi * freq * t + phase)
    out = np.zeros((spec.channels, L))
    out[:, start:start + n_burst] = weights[cls][:, None] * wave[None, :]
    return out


def generate(spec: SynthSpec) -> ContinuousRecording:
    spec.validate()
    fs = spec.fs
    L = int(round(spec.epoch_s * fs))
    pre = int(round(spec.pre_s * fs))
    slot = pre + L + int(round(spec.post_s * fs))
    n = spec.n_classes * spec.trials_per_class
    carriers = spec.resolved_carriers()
    amps = spec.resolved_amplitudes()
    weights = spec.resolved_weights()

    order = np.random.default_rng([spec.seed, 0]).permutation(
        np.repeat(np.arange(spec.n_classes), spec.trials_per_class))

    total = n * slot
    data = np.zeros((spec.channels, total))
    if spec.noise_level > 0:
        data += spec.noise_level * pink_noise(np.random.default_rng([spec.seed, 2]),
                                              (spec.channels, total), fs)
    if spec.line_noise > 0:
        phases = np.random.default_rng([spec.seed, 4]).uniform(0, 2 * np.pi, size=spec.channels)
        t = np.arange(total) / fs
        data += spec.line_noise * np.sin(2 * np.pi * 60.0 * t[None, :] + phases[:, None])

    events = []
    for i, cls in enumerate(order):
        onset = i * slot + pre
        data[:, onset:onset + L] += _burst(spec, int(cls), i, carriers, amps, weights)
        events.append((onset, int(cls)))
    names = [f"ch{i}" for i in range(spec.channels)]
    class_names = [f"class{k}" for k in range(spec.n_classes)]
    return ContinuousRecording(data, fs, names, events, class_names)


def generate_dataset(spec: SynthSpec) -> EpochedDataset:
    """Generate and package as a raw slot container (see ``dataset``)."""
    rec = generate(spec)
    slot = rec.data.shape[1] // len(rec.events)
    return recording_to_slots(rec, slot, int(round(spec.pre_s * spec.fs)),
                              extra={"generator": asdict(spec)})


def generate_separable_toy(n_per_class: int = 20, seed: int = 0, channels: int = 2,
                           fs: float = 250.0) -> EpochedDataset:
    """Two classes of 2-s epochs: a strong 80 Hz or 110 Hz tone in white noise."""
    if n_per_class < 10:
        raise ConfigError("n_per_class must be >= 10")
    rng = np.random.default_rng([seed, 7])
    L = int(round(2.0 * fs))
    t = np.arange(L) / fs
    labels = rng.permutation(np.repeat([0, 1], n_per_class))
    carriers = np.array([80.0, 110.0])
    phases = rng.uniform(0, 2 * np.pi, size=(labels.size, channels))
    tones = np.sin(2 * np.pi * carriers[labels][:, None, None] * t + phases[:, :, None])
    epochs = tones + 0.5 * rng.standard_normal((labels.size, channels, L))
    return EpochedDataset(epochs, labels, fs, ["80Hz", "110Hz"],
                          {"stage": "epoched", "generator": "separable_toy", "seed": seed})
