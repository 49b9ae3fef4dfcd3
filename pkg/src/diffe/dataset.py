"""Recording and dataset types plus the on-disk dataset container.

Container layout: one UTF-8 JSON header line terminated by ``\\n``, then the
little-endian float32 payload ``[n][channels][L]``, then little-endian int32
labels ``[n]``.  Data is widened to float64 on load, so a save/load round
trip is exact for anything that already went through a container once.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, FormatError

FORMAT_VERSION = 1
_F32 = np.dtype("<f4")
_I32 = np.dtype("<i4")


@dataclass
class ContinuousRecording:
    data: np.ndarray                      # [channels, samples]
    fs: float
    channel_names: list[str]
    events: list[tuple[int, int]] = field(default_factory=list)   # (sample index, class id)
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2 or self.data.shape[0] < 1:
            raise DataError(f"recording data must be [channels, samples], got {self.data.shape}")
        if self.fs <= 0:
            raise ConfigError(f"fs must be positive, got {self.fs}")
        if len(self.channel_names) != self.data.shape[0]:
            raise DataError("one channel name per channel required")
        n = self.data.shape[1]
        for idx, _ in self.events:
            if not 0 <= idx < n:
                raise DataError(f"event at sample {idx} outside recording of {n} samples")

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    def replace_data(self, data: np.ndarray) -> "ContinuousRecording":
        return ContinuousRecording(data, self.fs, list(self.channel_names),
                                   list(self.events), list(self.class_names))


@dataclass
class EpochedDataset:
    epochs: np.ndarray                    # [n, channels, L]
    labels: np.ndarray                    # [n]
    fs: float
    class_names: list[str]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.epochs = np.asarray(self.epochs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.epochs.ndim != 3:
            raise DataError(f"epochs must be [n, channels, L], got {self.epochs.shape}")
        if self.labels.shape != (self.epochs.shape[0],):
            raise DataError("one label per epoch required")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise DataError(f"labels must lie in [0, {len(self.class_names)})")

    def __len__(self) -> int:
        return self.epochs.shape[0]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def n_channels(self) -> int:
        return self.epochs.shape[1]

    @property
    def length(self) -> int:
        return self.epochs.shape[2]

    def subset(self, idx) -> "EpochedDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return EpochedDataset(self.epochs[idx], self.labels[idx], self.fs,
                              list(self.class_names), dict(self.provenance))

    def class_counts(self) -> list[int]:
        return np.bincount(self.labels, minlength=self.n_classes).tolist()


def save(dataset: EpochedDataset, path) -> None:
    n, c, L = dataset.epochs.shape
    header = {
        "format_version": FORMAT_VERSION,
        "n": n,
        "channels": c,
        "L": L,
        "fs": float(dataset.fs),
        "class_names": list(dataset.class_names),
        "provenance": dataset.provenance,
    }
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(np.ascontiguousarray(dataset.epochs, dtype=_F32).tobytes())
        fh.write(np.ascontiguousarray(dataset.labels, dtype=_I32).tobytes())
    os.replace(tmp, path)


def read_header(raw: bytes) -> tuple[dict, int]:
    nl = raw.find(b"\n")
    if nl < 0:
        raise FormatError("missing header terminator")
    try:
        header = json.loads(raw[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable header: {exc}") from None
    if not isinstance(header, dict):
        raise FormatError("header must be a JSON object")
    return header, nl + 1


def load(path) -> EpochedDataset:
    raw = Path(path).read_bytes()
    header, offset = read_header(raw)
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format_version {version!r} (expected {FORMAT_VERSION})")
    try:
        n, c, L = int(header["n"]), int(header["channels"]), int(header["L"])
        fs = float(header["fs"])
        class_names = list(header["class_names"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed header field: {exc}") from None
    if min(n, c, L) < 0:
        raise FormatError("negative dimension in header")
    expected = 4 * n * c * L + 4 * n
    actual = len(raw) - offset
    if actual != expected:
        raise FormatError(f"payload is {actual} bytes, expected {expected} "
                          f"for n={n}, channels={c}, L={L}")
    split = offset + 4 * n * c * L
    epochs = np.frombuffer(raw, dtype=_F32, count=n * c * L, offset=offset).reshape(n, c, L)
    labels = np.frombuffer(raw, dtype=_I32, count=n, offset=split)
    if n and (labels.min() < 0 or labels.max() >= len(class_names)):
        bad = sorted({int(v) for v in labels if not 0 <= v < len(class_names)})
        raise FormatError(f"labels out of range [0, {len(class_names)}): {bad}")
    return EpochedDataset(epochs.astype(np.float64), labels.astype(np.int64), fs,
                          class_names, header.get("provenance") or {})


# -- raw recordings stored as fixed-length slots ---------------------------
#
# A continuous recording whose events sit at a fixed offset inside equal-length
# consecutive slots is stored as a container of n slots.  Concatenating the
# slots along time restores the recording exactly.

def recording_to_slots(rec: ContinuousRecording, slot_len: int, event_offset: int,
                       extra: dict | None = None) -> EpochedDataset:
    n = len(rec.events)
    if rec.data.shape[1] != n * slot_len:
        raise DataError("recording length is not n_events * slot_len")
    for i, (idx, _) in enumerate(rec.events):
        if idx != i * slot_len + event_offset:
            raise DataError(f"event {i} is not at its slot offset")
    slots = rec.data.reshape(rec.n_channels, n, slot_len).transpose(1, 0, 2)
    prov = {"stage": "raw", "slot_len": slot_len, "event_offset": event_offset,
            "channel_names": list(rec.channel_names)}
    if extra:
        prov.update(extra)
    return EpochedDataset(slots, [cls for _, cls in rec.events], rec.fs,
                          list(rec.class_names), prov)


def slots_to_recording(ds: EpochedDataset) -> ContinuousRecording:
    prov = ds.provenance
    if prov.get("stage") != "raw":
        raise DataError("dataset is not a raw slot recording (provenance.stage != 'raw')")
    slot_len, offset = int(prov["slot_len"]), int(prov["event_offset"])
    if ds.length != slot_len:
        raise FormatError(f"slot length {ds.length} != provenance slot_len {slot_len}")
    n = len(ds)
    data = ds.epochs.transpose(1, 0, 2).reshape(ds.n_channels, n * slot_len)
    names = prov.get("channel_names") or [f"ch{i}" for i in range(ds.n_channels)]
    events = [(i * slot_len + offset, int(lbl)) for i, lbl in enumerate(ds.labels)]
    return ContinuousRecording(data, ds.fs, list(names), events, list(ds.class_names))
