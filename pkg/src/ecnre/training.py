"""Loss, exact gradients, Adam, and the document-per-step training loop."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DataError, NumericError
from .model import (
    EcnConfig,
    EcnParams,
    GraphInstance,
    PairScores,
    forward_tensors,
    init_params,
)
from .sidecars import FeatureLayout

logger = logging.getLogger(__name__)

PROB_EPS = 1e-7


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-4
    epochs: int = 400
    batch_size: int = 1  # one document per optimizer step; other values unsupported
    pos_weight: float = 1.0
    seed: int = 0
    shuffle: bool = True
    grad_clip: float | None = None  # global-norm cap; None disables
    weight_decay: float = 0.0
    lr_decay: float = 1.0  # per-epoch multiplier

    def __post_init__(self) -> None:
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size != 1:
            raise ValueError("batch_size is fixed at 1 document")
        if self.pos_weight <= 0:
            raise ValueError("pos_weight must be positive")


@dataclass
class TrainRecord:
    seed: int
    epoch_loss: list[float] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)
    skipped_documents: int = 0


def pair_targets(n: int, gold: Iterable[tuple[int, int]]) -> tuple[np.ndarray, np.ndarray]:
    """Dense (n, n) gold indicator plus the off-diagonal pair mask."""
    y = np.zeros((n, n), dtype=np.float64)
    for head, tail in gold:
        y[head, tail] = 1.0
    mask = 1.0 - np.eye(n)
    return y, mask


def _pair_loss(probs: Tensor, gold, pos_weight: float) -> Tensor:
    n = probs.shape[0]
    if n < 2:
        raise ValueError("a document needs at least 2 entities to form ordered pairs")
    y, mask = pair_targets(n, gold)
    p = ad.clip(probs, PROB_EPS, 1.0 - PROB_EPS)
    positive = Tensor(pos_weight * y * mask) * ad.log(p)
    negative = Tensor((1.0 - y) * mask) * ad.log(1.0 - p)
    return -((positive + negative).sum() / float(n * (n - 1)))


def bce_loss(scores: PairScores, gold, pos_weight: float = 1.0) -> float:
    """Mean weighted binary cross-entropy over all ordered pairs.

    Probabilities are clamped to [1e-7, 1 - 1e-7] before the logs, so the
    value is always finite.
    """
    return float(_pair_loss(Tensor(scores.matrix), gold, pos_weight).data)


def loss_and_gradients(
    gi: GraphInstance, params: EcnParams, pos_weight: float = 1.0
) -> tuple[float, dict[str, np.ndarray]]:
    """Forward plus reverse pass; gradients for every tensor in the model."""
    params.zero_grad()
    _, probs = forward_tensors(gi, params)
    loss = _pair_loss(probs, gi.gold, pos_weight)
    if not np.isfinite(loss.data):
        raise NumericError(f"{gi.doc_id}: non-finite loss")
    loss.backward()
    grads: dict[str, np.ndarray] = {}
    for name, tensor in params.items():
        grad = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        if not np.isfinite(grad).all():
            raise NumericError(f"{gi.doc_id}: non-finite gradient in {name}")
        grads[name] = grad
    return float(loss.data), grads


def gradients(gi: GraphInstance, params: EcnParams, pos_weight: float = 1.0):
    return loss_and_gradients(gi, params, pos_weight)[1]


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    norm = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if norm <= max_norm or norm == 0.0:
        return grads
    scale = max_norm / norm
    return {name: g * scale for name, g in grads.items()}


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step_count: int = 0

    @classmethod
    def initial(cls, params: EcnParams) -> "AdamState":
        return cls(
            m={name: np.zeros_like(t.data) for name, t in params.items()},
            v={name: np.zeros_like(t.data) for name, t in params.items()},
        )


def adam_step(
    params: EcnParams,
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> tuple[EcnParams, AdamState]:
    """One bias-corrected first/second-moment update, applied in place."""
    state.step_count += 1
    t = state.step_count
    for name, tensor in params.items():
        g = grads[name]
        state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * (g * g)
        m_hat = state.m[name] / (1.0 - beta1**t)
        v_hat = state.v[name] / (1.0 - beta2**t)
        update = m_hat / (np.sqrt(v_hat) + eps)
        if weight_decay:
            update = update + weight_decay * tensor.data
        tensor.data = tensor.data - lr * update
    return params, state


def train(
    instances: Sequence[GraphInstance],
    layout: FeatureLayout,
    config: EcnConfig,
    train_config: TrainConfig,
    initial: EcnParams | None = None,
    epoch_callback: Callable[[int, EcnParams, TrainRecord], None] | None = None,
) -> tuple[EcnParams, TrainRecord]:
    """Seeded training: one epoch = one shuffled pass, one step per document.

    Documents with fewer than two in-scope entities have no ordered pairs and
    are skipped (counted in the record). Fully deterministic for a fixed seed
    and thread count; the shuffle stream is derived from the run seed
    independently of the initialization stream.
    """
    usable = [gi for gi in instances if gi.n >= 2]
    skipped = len(instances) - len(usable)
    if skipped:
        logger.warning("skipping %d document(s) with fewer than 2 entities", skipped)
    if not usable:
        raise DataError("no trainable documents: every instance has fewer than 2 entities")

    params = initial if initial is not None else init_params(
        config, layout, train_config.seed
    )
    record = TrainRecord(seed=train_config.seed, skipped_documents=skipped)
    state = AdamState.initial(params)
    shuffle_rng = np.random.default_rng(
        np.random.SeedSequence((train_config.seed, 0x5EED))
    )
    lr = train_config.learning_rate
    for epoch in range(train_config.epochs):
        started = time.perf_counter()
        if train_config.shuffle:
            order = shuffle_rng.permutation(len(usable))
        else:
            order = np.arange(len(usable))
        losses = []
        for index in order:
            gi = usable[index]
            try:
                loss, grads = loss_and_gradients(gi, params, train_config.pos_weight)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}: {exc}") from exc
            if train_config.grad_clip is not None:
                grads = clip_gradients(grads, train_config.grad_clip)
            adam_step(params, grads, state, lr, weight_decay=train_config.weight_decay)
            losses.append(loss)
        record.epoch_loss.append(float(np.mean(losses)))
        record.epoch_seconds.append(time.perf_counter() - started)
        lr *= train_config.lr_decay
        if epoch_callback is not None:
            epoch_callback(epoch, params, record)
    return params, record


def write_train_log(path: str | Path, record: TrainRecord) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write("epoch\tmean_loss\tseconds\n")
        for epoch, (loss, seconds) in enumerate(
            zip(record.epoch_loss, record.epoch_seconds)
        ):
            fh.write(f"{epoch}\t{loss:.10g}\t{seconds:.3f}\n")
