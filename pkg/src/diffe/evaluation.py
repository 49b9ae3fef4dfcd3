"""Classification metrics and run/ablation reporting.

Predictions are ``argmax`` over score rows; ties go to the lowest class index.
AUC is the Mann-Whitney statistic per class (ties earn half credit), averaged
over classes without weighting.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import ConfigError, DataError
from .networks import ABLATIONS


def _check(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.ndim != 2 or labels.shape != (scores.shape[0],):
        raise DataError(f"scores [N,K] and labels [N] required, got {scores.shape}, {labels.shape}")
    if scores.shape[0] == 0:
        raise DataError("no samples to evaluate")
    if labels.min() < 0 or labels.max() >= scores.shape[1]:
        raise DataError("labels out of range for the score width")
    return scores, labels


def predictions(scores) -> np.ndarray:
    return np.argmax(np.asarray(scores), axis=1)


def accuracy(scores, labels) -> float:
    scores, labels = _check(scores, labels)
    return 100.0 * float(np.count_nonzero(predictions(scores) == labels)) / labels.size


def per_class_auc(scores, labels) -> np.ndarray:
    scores, labels = _check(scores, labels)
    K = scores.shape[1]
    missing = [k for k in range(K) if not np.any(labels == k)]
    if missing:
        raise DataError(f"AUC undefined: classes absent from labels: {missing}")
    out = np.empty(K)
    for k in range(K):
        pos = labels == k
        n_pos = int(pos.sum())
        n_neg = labels.size - n_pos
        if n_neg == 0:
            raise DataError("AUC undefined with a single class present")
        ranks = rankdata(scores[:, k])
        u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
        out[k] = u / (n_pos * n_neg)
    return out


def auc_ovr_macro(scores, labels) -> float:
    return 100.0 * float(np.mean(per_class_auc(scores, labels)))


def confusion_matrix(scores, labels) -> np.ndarray:
    scores, labels = _check(scores, labels)
    K = scores.shape[1]
    cm = np.zeros((K, K), dtype=np.int64)
    np.add.at(cm, (labels, predictions(scores)), 1)
    return cm


@dataclass
class RunReport:
    accuracy_pct: float
    auc_pct: float
    confusion: list[list[int]]
    per_class_accuracy: list[float]
    seed: int
    ablation: str
    split_id: str
    n_test: int
    config: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "RunReport":
        return cls(**json.loads(text))


def make_report(scores, labels, *, seed: int, ablation: str, split_id: str,
                config: dict | None = None) -> RunReport:
    cm = confusion_matrix(scores, labels)
    rows = cm.sum(axis=1)
    per_class = [100.0 * cm[k, k] / rows[k] if rows[k] else 0.0 for k in range(cm.shape[0])]
    return RunReport(
        accuracy_pct=accuracy(scores, labels),
        auc_pct=auc_ovr_macro(scores, labels),
        confusion=cm.tolist(),
        per_class_accuracy=per_class,
        seed=int(seed),
        ablation=ablation,
        split_id=split_id,
        n_test=int(len(labels)),
        config=config or {},
    )


@dataclass
class AblationRow:
    arm: str
    n_runs: int
    accuracy_mean: float
    accuracy_std: float
    auc_mean: float
    auc_std: float


@dataclass
class AblationTable:
    rows: list[AblationRow]

    def row(self, arm: str) -> AblationRow:
        for r in self.rows:
            if r.arm == arm:
                return r
        raise KeyError(arm)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["arm", "n_runs", "accuracy_mean", "accuracy_std", "auc_mean", "auc_std"])
        for r in self.rows:
            w.writerow([r.arm, r.n_runs, repr(r.accuracy_mean), repr(r.accuracy_std),
                        repr(r.auc_mean), repr(r.auc_std)])
        return buf.getvalue()

    def to_text(self) -> str:
        head = f"{'arm':<20} {'runs':>4}  {'accuracy (%)':>16}  {'AUC (%)':>16}"
        lines = [head, "-" * len(head)]
        for r in self.rows:
            lines.append(f"{r.arm:<20} {r.n_runs:>4}  "
                         f"{r.accuracy_mean:7.2f} +/- {r.accuracy_std:5.2f}  "
                         f"{r.auc_mean:7.2f} +/- {r.auc_std:5.2f}")
        return "\n".join(lines) + "\n"


def ablation_report(runs: list[RunReport]) -> AblationTable:
    """Mean and (population) std of accuracy/AUC per arm, rows in canonical arm order.

    Variability comes from repetition seeds; all runs must share one split.
    """
    if not runs:
        raise ConfigError("no runs to report")
    splits = {r.split_id for r in runs}
    if len(splits) > 1:
        raise ConfigError(f"runs use different train/test splits: {sorted(splits)}")
    unknown = {r.ablation for r in runs} - set(ABLATIONS)
    if unknown:
        raise ConfigError(f"unknown ablation arm(s): {sorted(unknown)}")
    rows = []
    for arm in ABLATIONS:
        sel = [r for r in runs if r.ablation == arm]
        if not sel:
            continue
        acc = np.array([r.accuracy_pct for r in sel])
        auc = np.array([r.auc_pct for r in sel])
        rows.append(AblationRow(arm, len(sel), float(acc.mean()), float(acc.std()),
                                float(auc.mean()), float(auc.std())))
    return AblationTable(rows)
