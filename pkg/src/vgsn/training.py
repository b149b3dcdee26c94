"""Epoch loop: per-epoch shuffle, batched MSE training, loss curve records."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .corpus import CorpusError, PairedCorpus, make_batches
from .layers import mse_loss
from .model import VgsnParams, forward
from .optim import Optimizer, make_optimizer
from .tensor import NonFiniteError, Rng, Tape, Tensor

log = logging.getLogger(__name__)

__all__ = [
    "LossRecord",
    "TrainConfig",
    "TrainingDiverged",
    "batch_loss",
    "fit",
    "read_loss_csv",
    "train_epoch",
    "write_loss_csv",
]


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 32
    epochs: int = 200
    seed: int = 0
    optimizer: str = "adam"
    learning_rate: float | None = None
    # KL weight; 0 trains on pure reconstruction MSE
    kl_weight: float = 0.0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass
class LossRecord:
    epoch: int
    mean_loss: float
    wall_time_seconds: float


def batch_loss(params: VgsnParams, inputs, targets, eps=None, mode: str = "train", kl_weight: float = 0.0) -> Tensor:
    out, stats = forward(params, Tensor(inputs), eps, mode, return_stats=True)
    loss = mse_loss(out, Tensor(targets))
    if kl_weight:
        mu, sigma = stats.mu, stats.sigma
        # KL(N(mu, e^{2 sigma}) || N(0, 1)) averaged over latent entries
        kl = T.mean_all(mu * mu + T.exp(sigma * 2.0) - sigma * 2.0)
        loss = loss + T.scale(T.add(kl, Tensor(-1.0)), 0.5 * kl_weight)
    return loss


def train_epoch(
    params: VgsnParams,
    optimizer: Optimizer,
    corpus: PairedCorpus,
    config: TrainConfig,
    rng: Rng,
    epoch: int = 1,
) -> LossRecord:
    """One shuffled pass over ``corpus``; returns the mean batch loss."""
    if len(corpus) == 0:
        raise CorpusError("empty corpus")
    latent = params.config.latent_dim
    dtype = T.get_dtype()
    start = time.perf_counter()
    losses = []
    for index, batch in enumerate(make_batches(corpus, config.batch_size, rng)):
        eps = rng.normal(len(batch.codepoints) * latent).reshape(-1, latent)
        optimizer.zero_grad()
        try:
            with Tape() as tape:
                loss = batch_loss(params, batch.inputs.astype(dtype), batch.targets.astype(dtype), eps, "train", config.kl_weight)
            tape.backward(loss)
        except NonFiniteError as exc:
            raise TrainingDiverged(f"epoch {epoch}, batch {index}: {exc}") from exc
        value = loss.item()
        if not np.isfinite(value):
            raise TrainingDiverged(f"epoch {epoch}, batch {index}: loss is {value}")
        optimizer.step()
        losses.append(value)
    elapsed = time.perf_counter() - start
    return LossRecord(epoch, float(np.mean(losses)), elapsed)


def fit(params: VgsnParams, corpus: PairedCorpus, config: TrainConfig, callback=None):
    """Train for ``config.epochs`` epochs; returns ``(params, loss_curve)``.

    Epoch ``k`` shuffles and samples noise from ``Rng(seed).derive(k)``.
    """
    optimizer = make_optimizer(config.optimizer, params.parameters(), config.learning_rate)
    root = Rng(config.seed)
    curve = []
    for epoch in range(1, config.epochs + 1):
        record = train_epoch(params, optimizer, corpus, config, root.derive(epoch), epoch)
        curve.append(record)
        log.debug("epoch %d loss %.6g (%.3fs)", epoch, record.mean_loss, record.wall_time_seconds)
        if callback is not None:
            callback(record)
    return params, curve


def write_loss_csv(records, stream, timing: bool = True) -> None:
    """Write ``epoch,loss,seconds`` rows; ``timing=False`` leaves seconds blank."""
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["epoch", "loss", "seconds"])
    for r in records:
        writer.writerow([r.epoch, f"{r.mean_loss:.9g}", f"{r.wall_time_seconds:.9g}" if timing else ""])


def read_loss_csv(stream) -> list[LossRecord]:
    rows = list(csv.DictReader(stream))
    return [LossRecord(int(r["epoch"]), float(r["loss"]), float(r["seconds"]) if r["seconds"] else float("nan")) for r in rows]
