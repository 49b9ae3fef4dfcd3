"""EEG preprocessing: bandpass, line-noise notch, common average reference,
artifact hook, high-gamma selection, then epoching with baseline correction.

All filters run forward-backward (zero phase) along the time axis.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .dataset import ContinuousRecording, EpochedDataset
from .errors import ConfigError

log = logging.getLogger(__name__)

NYQUIST_MARGIN = 0.99


@dataclass
class PipelineConfig:
    bandpass: list[float] = field(default_factory=lambda: [0.5, 125.0])
    notch_freqs: list[float] = field(default_factory=lambda: [60.0, 120.0])
    notch_q: float = 30.0
    band: list[float] = field(default_factory=lambda: [70.0, 124.0])
    band_select: bool = True
    filter_order: int = 4
    epoch_s: float = 2.0
    baseline_s: float = 0.5

    def validate(self) -> None:
        if len(self.bandpass) != 2 or len(self.band) != 2:
            raise ConfigError("pipeline.bandpass and pipeline.band take two edges [lo, hi]")
        if self.notch_q <= 0:
            raise ConfigError("pipeline.notch_q must be positive")
        if self.filter_order < 1:
            raise ConfigError("pipeline.filter_order must be >= 1")
        if self.epoch_s <= 0 or self.baseline_s <= 0:
            raise ConfigError("pipeline.epoch_s and pipeline.baseline_s must be positive")


def _butter_band(x: np.ndarray, lo: float, hi: float, fs: float, order: int) -> np.ndarray:
    sos = signal.butter(order, [lo, hi], btype="bandpass", fs=fs, output="sos")
    return signal.sosfiltfilt(sos, x, axis=-1)


def bandpass_filter(x: ContinuousRecording, lo: float = 0.5, hi: float = 125.0,
                    order: int = 4) -> ContinuousRecording:
    """Zero-phase Butterworth bandpass.

    An upper edge at or just below Nyquist is clamped to 0.99 * Nyquist; an
    edge above Nyquist is rejected.
    """
    nyq = x.fs / 2.0
    if not 0.0 < lo < hi:
        raise ConfigError(f"bandpass needs 0 < lo < hi, got [{lo}, {hi}]")
    if hi > nyq:
        raise ConfigError(f"bandpass upper edge {hi} Hz exceeds Nyquist {nyq} Hz")
    if hi >= NYQUIST_MARGIN * nyq:
        log.info("bandpass upper edge %.3f Hz clamped to %.3f Hz", hi, NYQUIST_MARGIN * nyq)
        hi = NYQUIST_MARGIN * nyq
    if lo >= hi:
        raise ConfigError(f"bandpass lower edge {lo} Hz above usable upper edge {hi} Hz")
    return x.replace_data(_butter_band(x.data, lo, hi, x.fs, order))


def notch_filter(x: ContinuousRecording, freqs=(60.0, 120.0), q: float = 30.0) -> ContinuousRecording:
    """Zero-phase biquad notch at each frequency below Nyquist."""
    data = x.data
    for f0 in freqs:
        if f0 <= 0:
            raise ConfigError(f"notch frequency must be positive, got {f0}")
        if f0 >= x.fs / 2.0:
            warnings.warn(f"notch at {f0} Hz skipped: not below Nyquist ({x.fs / 2.0} Hz)")
            continue
        b, a = signal.iirnotch(f0, q, fs=x.fs)
        data = signal.filtfilt(b, a, data, axis=-1)
    return x.replace_data(data)


def common_average_reference(x: ContinuousRecording) -> ContinuousRecording:
    if x.n_channels < 2:
        raise ConfigError("common average reference needs at least two channels")
    return x.replace_data(x.data - x.data.mean(axis=0, keepdims=True))


def remove_artifacts(x: ContinuousRecording) -> ContinuousRecording:
    """Placeholder stage for EOG/EMG removal; synthetic data has no auxiliary channels."""
    return x


def band_select(x: ContinuousRecording, band=(70.0, 124.0), order: int = 4) -> ContinuousRecording:
    lo, hi = band
    nyq = x.fs / 2.0
    if not 0.0 < lo < hi < nyq:
        raise ConfigError(f"band [{lo}, {hi}] must satisfy 0 < lo < hi < Nyquist ({nyq} Hz)")
    return x.replace_data(_butter_band(x.data, lo, hi, x.fs, order))


def epoch_and_baseline(x: ContinuousRecording, window: float = 2.0,
                       baseline: float = 0.5) -> EpochedDataset:
    """Cut [event, event + window) and subtract each channel's mean over
    [event - baseline, event).  Events without room on either side are skipped."""
    L = int(round(window * x.fs))
    nb = int(round(baseline * x.fs))
    n = x.data.shape[1]
    epochs, labels, skipped = [], [], 0
    for idx, cls in x.events:
        if idx - nb < 0 or idx + L > n:
            skipped += 1
            continue
        seg = x.data[:, idx:idx + L]
        base = x.data[:, idx - nb:idx].mean(axis=1, keepdims=True)
        epochs.append(seg - base)
        labels.append(cls)
    if skipped:
        warnings.warn(f"{skipped} event(s) skipped: too close to the recording edge")
    arr = np.stack(epochs) if epochs else np.zeros((0, x.n_channels, L))
    class_names = x.class_names or [str(i) for i in range(max(labels, default=-1) + 1)]
    prov = {"stage": "epoched", "skipped_events": skipped, "channel_names": list(x.channel_names)}
    return EpochedDataset(arr, np.asarray(labels, dtype=np.int64), x.fs, list(class_names), prov)


def preprocess(rec: ContinuousRecording, cfg: PipelineConfig | None = None) -> EpochedDataset:
    """bandpass -> notch -> CAR -> artifact hook -> band select -> epochs."""
    cfg = cfg or PipelineConfig()
    cfg.validate()
    x = bandpass_filter(rec, *cfg.bandpass, order=cfg.filter_order)
    x = notch_filter(x, cfg.notch_freqs, cfg.notch_q)
    x = common_average_reference(x)
    x = remove_artifacts(x)
    if cfg.band_select:
        x = band_select(x, tuple(cfg.band), order=cfg.filter_order)
    ds = epoch_and_baseline(x, cfg.epoch_s, cfg.baseline_s)
    ds.provenance["pipeline"] = {
        "bandpass": list(cfg.bandpass), "notch_freqs": list(cfg.notch_freqs),
        "notch_q": cfg.notch_q, "band": list(cfg.band) if cfg.band_select else None,
        "filter_order": cfg.filter_order, "epoch_s": cfg.epoch_s, "baseline_s": cfg.baseline_s,
    }
    return ds
