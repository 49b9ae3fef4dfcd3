"""Losses, RMSProp with a triangular cyclic learning rate, and the joint loop.

Two parameter groups are optimized.  The denoiser (theta) follows the
x0-prediction L1 loss; encoder, decoder and classifier follow
``cae_loss + alpha * classification_loss``.  Both are driven by one backward
pass over the sum of the two objectives, so the denoiser also receives the
second objective's gradient through the decoder taps unless those are detached.
"""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import save_checkpoint
from .dataset import EpochedDataset
from .errors import ConfigError, DataError, DimensionError, NumericError
from .networks import ABLATIONS, DiffEModel, ModelConfig
from .scheduler import NoiseSchedule, build_schedule, forward_sample, sample_timestep

log = logging.getLogger(__name__)

CAE_TARGETS = ("residual_map", "reconstruct_x0")
HISTORY_COLUMNS = ("epoch", "ddpm_loss", "cae_loss", "cls_loss", "total_loss", "lr",
                   "train_acc", "test_acc")


@dataclass
class TrainConfig:
    epochs: int = 500
    alpha: float = 0.1
    base_lr: float = 9e-5
    max_lr: float = 1.5e-3
    cycle_len: int | None = None      # steps per half cycle; None -> 5 epochs' worth
    batch_size: int = 32
    seed: int = 0
    split_seed: int = 0
    test_fraction: float = 0.2
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    ablation: str = "full"
    cae_target: str = "residual_map"
    detach_taps: bool = False
    rmsprop_decay: float = 0.99
    rmsprop_eps: float = 1e-8

    def validate(self) -> None:
        if self.epochs < 0:
            raise ConfigError("train.epochs must be >= 0")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("train.test_fraction must lie strictly between 0 and 1")
        if not 0.0 < self.base_lr <= self.max_lr:
            raise ConfigError("train.base_lr and train.max_lr need 0 < base_lr <= max_lr")
        if self.alpha < 0:
            raise ConfigError("train.alpha must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("train.batch_size must be >= 1")
        if self.cycle_len is not None and self.cycle_len < 1:
            raise ConfigError("train.cycle_len must be >= 1")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"train.ablation must be one of {ABLATIONS}")
        if self.cae_target not in CAE_TARGETS:
            raise ConfigError(f"train.cae_target must be one of {CAE_TARGETS}")
        if not 0.0 < self.rmsprop_decay < 1.0 or self.rmsprop_eps <= 0:
            raise ConfigError("train.rmsprop_decay must lie in (0, 1), rmsprop_eps > 0")


# -- losses -------------------------------------------------------------------

def ddpm_loss(x0, x0_hat: Tensor) -> Tensor:
    """Mean absolute error between the clean signal and the denoiser estimate."""
    return ad.l1_loss(x0_hat, x0)


def cae_loss(residual_map, decoder_out: Tensor) -> Tensor:
    return ad.l1_loss(decoder_out, residual_map)


def one_hot(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def classification_loss(y_hat: Tensor, y_onehot) -> Tensor:
    y = np.asarray(y_onehot.data if isinstance(y_onehot, Tensor) else y_onehot, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise DimensionError(f"classification_loss: shapes {y_hat.shape} and {y.shape} differ")
    valid = np.all((y == 0.0) | (y == 1.0), axis=1) & (y.sum(axis=1) == 1.0)
    if not valid.all():
        raise DataError(f"rows {np.flatnonzero(~valid).tolist()} are not one-hot")
    return ad.mse_loss(y_hat, y)


# -- optimization -------------------------------------------------------------

def cyclic_lr(step: int, base_lr: float, max_lr: float, cycle_len: int) -> float:
    """Triangular wave: base -> max over ``cycle_len`` steps, back over the next ``cycle_len``."""
    if cycle_len < 1:
        raise ConfigError("cycle_len must be >= 1")
    pos = step % (2 * cycle_len)
    frac = pos / cycle_len if pos <= cycle_len else (2 * cycle_len - pos) / cycle_len
    return base_lr + (max_lr - base_lr) * frac


def rmsprop_update(param: np.ndarray, grad: np.ndarray, state: np.ndarray, lr: float,
                   decay: float = 0.99, eps: float = 1e-8) -> tuple[np.ndarray, np.ndarray]:
    """In-place RMSProp step; returns ``(param, state)``."""
    state *= decay
    state += (1.0 - decay) * grad * grad
    update = lr * grad / (np.sqrt(state) + eps)
    if not np.isfinite(update).all():
        raise NumericError("non-finite RMSProp update")
    param -= update
    return param, state


class RMSProp:
    def __init__(self, params: list[Tensor], decay: float = 0.99, eps: float = 1e-8):
        self.params = params
        self.state = [np.zeros_like(p.data) for p in params]
        self.decay = decay
        self.eps = eps

    def step(self, lr: float) -> None:
        for p, s in zip(self.params, self.state):
            if p.grad is not None:
                rmsprop_update(p.data, p.grad, s, lr, self.decay, self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


# -- the joint step -----------------------------------------------------------

@dataclass
class StepResult:
    total_loss: float
    ddpm_loss: float
    cae_loss: float
    cls_loss: float
    n_correct: int
    lr: float


@dataclass
class TrainState:
    model: DiffEModel
    schedule: NoiseSchedule
    config: TrainConfig
    rng: np.random.Generator
    opt_theta: RMSProp
    opt_cae: RMSProp
    cycle_len: int
    step: int = 0


def init_state(model: DiffEModel, config: TrainConfig, steps_per_epoch: int = 1) -> TrainState:
    config.validate()
    schedule = build_schedule(config.T, config.beta_start, config.beta_end)
    rng = np.random.default_rng([config.seed, 1])
    cycle = config.cycle_len or 5 * max(1, steps_per_epoch)
    return TrainState(model, schedule, config, rng,
                      RMSProp(model.theta(), config.rmsprop_decay, config.rmsprop_eps),
                      RMSProp(model.cae_parameters(), config.rmsprop_decay, config.rmsprop_eps),
                      cycle)


def compute_losses(state: TrainState, x0: np.ndarray, labels) -> dict:
    """Build the loss graph for one batch (raw, unscaled ``x0``).

    Returns the loss tensors ``ddpm`` (None without a denoiser), ``cae`` (None
    without a decoder), ``cls`` and ``total``, plus the class ``scores``.
    """
    model, cfg = state.model, state.config
    x0 = Tensor(np.asarray(x0, dtype=np.float64) / model.input_scale)
    B = x0.shape[0]
    z, feats = model.encoder(x0)
    scores = model.classifier(z)
    cls = classification_loss(scores, one_hot(labels, model.config.n_classes))
    out = {"ddpm": None, "cae": None, "cls": cls, "scores": scores}

    if model.ablation == "full":
        t = sample_timestep(state.rng, state.schedule.T, size=B)
        noise = state.rng.standard_normal(x0.shape)
        x_t = forward_sample(x0, t, noise, state.schedule)
        x0_hat, taps = model.denoiser(x_t, t)
        out["ddpm"] = ddpm_loss(x0, x0_hat)
        if cfg.detach_taps:
            taps = [tap.detach() for tap in taps]
            x0_hat_in = x0_hat.detach()
        else:
            x0_hat_in = x0_hat
        if cfg.cae_target == "residual_map":
            target = np.abs(x0.data - x0_hat.data)
        else:
            target = x0.data
        r_hat = model.decoder(feats, taps, x0, x0_hat_in)
        out["cae"] = cae_loss(target, r_hat)
    elif model.ablation == "no_ddpm":
        out["cae"] = cae_loss(x0.data, model.decoder(feats))

    total = cls * cfg.alpha
    if out["cae"] is not None:
        total = out["cae"] + total
    out["total"] = total
    return out


def diffe_step(state: TrainState, x0: np.ndarray, labels) -> StepResult:
    """One optimization step on a minibatch; updates both parameter groups."""
    if len(labels) == 0:
        raise DataError("empty batch")
    cfg = state.config
    lr = cyclic_lr(state.step, cfg.base_lr, cfg.max_lr, state.cycle_len)
    state.opt_theta.zero_grad()
    state.opt_cae.zero_grad()
    losses = compute_losses(state, x0, labels)
    objective = losses["total"]
    if losses["ddpm"] is not None:
        objective = objective + losses["ddpm"]
    values = {k: (losses[k].item() if losses[k] is not None else 0.0)
              for k in ("ddpm", "cae", "cls", "total")}
    if not all(math.isfinite(v) for v in values.values()):
        raise NumericError(f"non-finite loss at step {state.step}: {values}")
    if objective.requires_grad:
        objective.backward()
    state.opt_theta.step(lr)
    state.opt_cae.step(lr)
    state.step += 1
    pred = np.argmax(losses["scores"].data, axis=1)
    return StepResult(values["total"], values["ddpm"], values["cae"], values["cls"],
                      int(np.count_nonzero(pred == np.asarray(labels))), lr)


# -- data split ---------------------------------------------------------------

def split_indices(labels, test_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError("test_fraction must lie strictly between 0 and 1")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise DataError("cannot split an empty dataset")
    rng = np.random.default_rng([seed, 5])
    train, test = [], []
    for k in np.unique(labels):
        idx = np.flatnonzero(labels == k)
        if idx.size < 2:
            raise DataError(f"class {k} has {idx.size} sample(s); at least 2 needed to split")
        n_test = int(np.floor(test_fraction * idx.size + 0.5))
        n_test = min(max(n_test, 1), idx.size - 1)
        idx = rng.permutation(idx)
        test.append(idx[:n_test])
        train.append(idx[n_test:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def split_dataset(dataset: EpochedDataset, test_fraction: float = 0.2,
                  seed: int = 0) -> tuple[EpochedDataset, EpochedDataset]:
    """Stratified, deterministic train/test split."""
    tr, te = split_indices(dataset.labels, test_fraction, seed)
    return dataset.subset(tr), dataset.subset(te)


def split_id(test_idx) -> str:
    return hashlib.sha256(np.asarray(test_idx, dtype="<i8").tobytes()).hexdigest()[:16]


# -- history ------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    ddpm_loss: float
    cae_loss: float
    cls_loss: float
    total_loss: float
    lr: float
    train_acc: float
    test_acc: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        for r in self.records:
            w.writerow([r.epoch] + [repr(float(getattr(r, c))) for c in HISTORY_COLUMNS[1:]])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TrainHistory":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or tuple(rows[0]) != HISTORY_COLUMNS:
            raise DataError("unexpected history header")
        return cls([EpochRecord(int(r[0]), *map(float, r[1:])) for r in rows[1:]])


# -- the loop -----------------------------------------------------------------

def input_scale(epochs: np.ndarray) -> float:
    s = float(np.std(epochs)) if epochs.size else 0.0
    return s if s > 0 and math.isfinite(s) else 1.0


def build_model(config: TrainConfig, dataset: EpochedDataset,
                model_config: ModelConfig | None = None, scale: float = 1.0) -> DiffEModel:
    mc = ModelConfig(**asdict(model_config)) if model_config is not None else ModelConfig()
    mc.in_channels = dataset.n_channels
    mc.n_classes = dataset.n_classes
    return DiffEModel(mc, config.T, config.ablation, seed=config.seed, input_scale=scale)


def evaluate_accuracy(model: DiffEModel, dataset: EpochedDataset, batch_size: int = 128) -> float:
    if len(dataset) == 0:
        return 0.0
    return 100.0 * float(np.mean(np.argmax(predict_scores(model, dataset.epochs, batch_size), 1)
                                 == dataset.labels))


def predict_scores(model: DiffEModel, epochs: np.ndarray, batch_size: int = 128) -> np.ndarray:
    parts = [model.scores(epochs[i:i + batch_size]) for i in range(0, len(epochs), batch_size)]
    return np.concatenate(parts) if parts else np.zeros((0, model.config.n_classes))


def train_model(config: TrainConfig, train: EpochedDataset, test: EpochedDataset | None = None,
                model_config: ModelConfig | None = None, checkpoint_path=None,
                on_epoch=None) -> tuple[DiffEModel, TrainHistory]:
    """Train on ``train``; ``test`` (if given) is only used for the history column."""
    config.validate()
    if len(train) == 0:
        raise DataError("empty training set")
    model = build_model(config, train, model_config, input_scale(train.epochs))
    n = len(train)
    steps = math.ceil(n / config.batch_size)
    state = init_state(model, config, steps)
    shuffle_rng = np.random.default_rng([config.seed, 2])
    history = TrainHistory()
    if checkpoint_path is not None:
        save_checkpoint(model, checkpoint_path, {"epoch": 0})
    for epoch in range(1, config.epochs + 1):
        sums = np.zeros(4)
        correct = 0
        lr = config.base_lr
        order = shuffle_rng.permutation(n)
        for b in range(steps):
            idx = order[b * config.batch_size:(b + 1) * config.batch_size]
            res = diffe_step(state, train.epochs[idx], train.labels[idx])
            sums += len(idx) * np.array([res.ddpm_loss, res.cae_loss, res.cls_loss, res.total_loss])
            correct += res.n_correct
            lr = res.lr
        means = sums / n
        test_acc = evaluate_accuracy(model, test) if test is not None else 0.0
        rec = EpochRecord(epoch, *means.tolist(), lr, 100.0 * correct / n, test_acc)
        history.records.append(rec)
        log.info("epoch %d total %.5f cls %.5f train %.1f%% test %.1f%%",
                 epoch, rec.total_loss, rec.cls_loss, rec.train_acc, rec.test_acc)
        if checkpoint_path is not None:
            save_checkpoint(model, checkpoint_path, {"epoch": epoch})
        if on_epoch is not None:
            on_epoch(rec)
    return model, history


def fit(config: TrainConfig, dataset: EpochedDataset, model_config: ModelConfig | None = None,
        checkpoint_path=None) -> tuple[DiffEModel, TrainHistory]:
    """Split with ``config.split_seed`` and train on the training part."""
    config.validate()
    train, test = split_dataset(dataset, config.test_fraction, config.split_seed)
    return train_model(config, train, test, model_config, checkpoint_path)


def config_dict(obj) -> dict:
    return {f.name: getattr(obj, f.name) for f in fields(obj)}


def write_history(history: TrainHistory, path) -> None:
    Path(path).write_text(history.to_csv())
