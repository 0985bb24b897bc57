"""Optimization loop: seeded shuffling, AdamW updates, early stopping, checkpoints."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .checkpoint import Checkpoint, to_f32
from .ingest import Dataset, NormStats
from .model import (TERMS, LossWeights, Model, ModelConfig, evaluate_loss, loss_and_grads,
                    make_batch)
from .numeric.gradcheck import NonFiniteError
from .numeric.rng import rng_stream

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    weights: LossWeights = field(default_factory=LossWeights)
    lr: float = 1e-3
    weight_decay: float = 1e-4
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch size and epoch count must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


class AdamW:
    """Adaptive moment updates with decoupled weight decay."""

    def __init__(self, params: dict, lr: float, weight_decay: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.wd, self.b1, self.b2, self.eps = lr, weight_decay, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, p in params.items():
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            update = (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            params[k] = p - self.lr * update - self.lr * self.wd * p


@dataclass
class HistoryRow:
    epoch: int
    train_loss: float
    val_loss: float
    terms: dict


@dataclass
class TrainResult:
    model: Model
    history: list[HistoryRow]
    checkpoint: Checkpoint
    best_epoch: int
    stopped_early: bool

    def write_history(self, path) -> None:
        write_history(self.history, path)


def write_history(history: list[HistoryRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss"] + [f"train_{t}" for t in TERMS])
        for r in history:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss)] + [repr(r.terms[t]) for t in TERMS])


def dataset_loss(model: Model, params: dict, ds: Dataset, part: str, weights: LossWeights,
                 batch_size: int = 64) -> tuple[float, dict]:
    """Loss over a whole split, pooled so batch order and size do not matter.

    Each term is averaged over its own targets across the split; the total is
    their weighted sum.
    """
    idx = ds.indices(part)
    if not idx:
        return 0.0, {t: 0.0 for t in TERMS}
    batch = make_batch([ds.sequences[i] for i in idx], [ds.inputs[i] for i in idx], model.config.window)
    total, terms = evaluate_loss(model, params, batch, weights)
    return total, terms


def fit(ds: Dataset, model_cfg: ModelConfig | None = None, cfg: TrainConfig | None = None,
        model: Model | None = None, progress=None) -> TrainResult:
    """Train on the ``train`` split, early-stop on ``val`` and keep the best parameters.

    Reservoir weights are fixed and never updated. Returned parameters are
    rounded to float32 precision so they match their checkpoint exactly.
    """
    cfg = cfg or TrainConfig()
    if model is None:
        if ds.stats is None:
            raise TrainingError("dataset has no normalization stats")
        model = Model(model_cfg or ModelConfig(), ds.stats)
    train_idx, val_idx = ds.indices("train"), ds.indices("val")
    if not train_idx or not val_idx:
        raise TrainingError("train and val splits must be non-empty")
    params = {k: v.copy() for k, v in model.params.items()}
    opt = AdamW(params, cfg.lr, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.eps)
    history: list[HistoryRow] = []
    best_val, best_epoch, wait = float("inf"), 0, 0
    best = None
    stopped = False
    for epoch in range(1, cfg.max_epochs + 1):
        order = [train_idx[i] for i in rng_stream(cfg.seed, ("shuffle", epoch)).permutation(len(train_idx))]
        losses, term_sums = [], {t: 0.0 for t in TERMS}
        for bi, start in enumerate(range(0, len(order), cfg.batch_size)):
            chunk = order[start:start + cfg.batch_size]
            batch = make_batch([ds.sequences[i] for i in chunk], [ds.inputs[i] for i in chunk],
                               model.config.window)
            try:
                loss, terms, grads = loss_and_grads(model, params, batch, cfg.weights)
            except NonFiniteError as e:
                raise TrainingError(f"epoch {epoch}, batch {bi}: {e}") from e
            for k, g in grads.items():
                if not np.all(np.isfinite(g)):
                    raise TrainingError(f"epoch {epoch}, batch {bi}: non-finite gradient for {k}")
            opt.step(params, grads)
            losses.append(loss)
            for t in TERMS:
                term_sums[t] += terms[t]
        train_loss = float(np.mean(losses))
        val_loss, _ = dataset_loss(model, params, ds, "val", cfg.weights)
        if not np.isfinite(val_loss):
            raise TrainingError(f"epoch {epoch}: non-finite validation loss")
        history.append(HistoryRow(epoch, train_loss, val_loss, {t: term_sums[t] / len(losses) for t in TERMS}))
        if progress is not None:
            progress(history[-1])
        log.info("epoch %d train %.6f val %.6f", epoch, train_loss, val_loss)
        if val_loss < best_val:
            best_val, best_epoch, wait = val_loss, epoch, 0
            best = ({k: v.copy() for k, v in params.items()},
                    {k: v.copy() for k, v in opt.m.items()},
                    {k: v.copy() for k, v in opt.v.items()}, opt.t)
        else:
            wait += 1
            if wait >= cfg.patience:
                stopped = True
                break
    p, m, v, t = best
    p = {k: to_f32(a) for k, a in p.items()}
    trained = Model(model.config, model.stats, p, model.reservoir_arrays())
    ck = Checkpoint(
        config={"model": model.config.to_dict(), "train": cfg.to_dict(), "stats": model.stats.to_dict()},
        params=p, reservoir=model.reservoir_arrays(),
        adam_m={k: to_f32(a) for k, a in m.items()}, adam_v={k: to_f32(a) for k, a in v.items()},
        step=t, best_val_loss=best_val, epoch=best_epoch)
    return TrainResult(trained, history, ck, best_epoch, stopped)


def model_from_checkpoint(ck: Checkpoint) -> Model:
    cfg = ModelConfig.from_dict(ck.config["model"])
    stats = NormStats.from_dict(ck.config["stats"])
    params = {k: np.asarray(v, dtype=np.float64) for k, v in ck.params.items()}
    reservoir = {k: np.asarray(v, dtype=np.float64) for k, v in ck.reservoir.items()} or None
    return Model(cfg, stats, params, reservoir)
