"""Training loop: RMSProp, flip/crop augmentation and pairwise mini-batches."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .autodiff import Tensor
from .data import to_float
from .errors import ConfigError, NumericError
from .network import MambaHash
from .objective import LossBreakdown, similarity_matrix, total_loss

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 1.5e-5
    weight_decay: float = 1e-7
    batch_size: int = 32
    epochs: int = 1
    seed: int = 0
    rmsprop_alpha: float = 0.99
    rmsprop_eps: float = 1e-8
    augment: bool = True
    crop_size: int | None = None  # None: crop back to the source side
    crop_pad: int = 2
    flip_prob: float = 0.5

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2 for pairwise supervision, got {self.batch_size}")
        if self.epochs < 0 or self.crop_pad < 0:
            raise ConfigError("epochs and crop_pad must be >= 0")
        if not 0.0 <= self.rmsprop_alpha < 1.0 or self.rmsprop_eps <= 0:
            raise ConfigError("rmsprop_alpha must be in [0, 1) and rmsprop_eps > 0")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def rmsprop_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray | None],
    state: list[np.ndarray] | None,
    cfg: TrainConfig,
    names: Sequence[str] | None = None,
) -> list[np.ndarray]:
    """One in-place RMSProp update with decoupled-from-v weight decay.

    ``v <- a v + (1 - a) g^2``; ``p <- p - lr g / (sqrt(v) + eps) - lr wd p``.
    Returns the new square-average state.  Nothing is touched if any gradient
    is non-finite.
    """
    if state is None:
        state = [np.zeros_like(p) for p in params]
    for i, g in enumerate(grads):
        if g is not None and not np.isfinite(g).all():
            name = names[i] if names else f"#{i}"
            raise NumericError(f"non-finite gradient for parameter {name}; step aborted")
    a, lr, wd, eps = cfg.rmsprop_alpha, cfg.learning_rate, cfg.weight_decay, cfg.rmsprop_eps
    for p, g, v in zip(params, grads, state):
        if g is None:
            g = np.zeros_like(p)
        v *= a
        v += (1.0 - a) * g * g
        update = lr * g / (np.sqrt(v) + eps)
        if wd:
            update = update + lr * wd * p
        p -= update
    return state


class RMSProp:
    def __init__(self, named_params, cfg: TrainConfig):
        named = list(named_params)
        self.names = [n for n, _ in named]
        self.params: list[Tensor] = [p for _, p in named]
        self.cfg = cfg
        self.state: list[np.ndarray] | None = None

    def step(self) -> None:
        self.state = rmsprop_step(
            [p.data for p in self.params], [p.grad for p in self.params], self.state, self.cfg, self.names
        )

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def augment(
    image: np.ndarray,
    rng: np.random.Generator,
    crop: int | None = None,
    pad: int = 0,
    flip_prob: float = 0.5,
    *,
    flip: bool | None = None,
    offset: tuple[int, int] | None = None,
) -> np.ndarray:
    """Random horizontal flip, then a random ``crop`` x ``crop`` window of the zero-padded image.

    ``flip`` and ``offset`` force those choices; random draws are consumed either
    way so a seeded stream stays aligned.
    """
    h, w = image.shape[:2]
    crop = h if crop is None else crop
    if crop > h + 2 * pad or crop > w + 2 * pad:
        raise ConfigError(f"crop {crop} is larger than the padded image {h + 2 * pad}x{w + 2 * pad}")
    coin = rng.random() < flip_prob
    oy = int(rng.integers(0, h + 2 * pad - crop + 1))
    ox = int(rng.integers(0, w + 2 * pad - crop + 1))
    if flip is not None:
        coin = flip
    if offset is not None:
        oy, ox = offset
    out = image[:, ::-1] if coin else image
    if pad:
        out = np.pad(out, ((pad, pad), (pad, pad), (0, 0)))
    return np.ascontiguousarray(out[oy : oy + crop, ox : ox + crop])


def augment_batch(images: np.ndarray, rng: np.random.Generator, cfg: TrainConfig) -> np.ndarray:
    return np.stack([augment(img, rng, cfg.crop_size, cfg.crop_pad, cfg.flip_prob) for img in images])


def train_epoch(
    model: MambaHash,
    images: np.ndarray,
    labels: Sequence,
    cfg: TrainConfig,
    optimizer: RMSProp,
    rng: np.random.Generator,
    eta: float | None = None,
) -> list[LossBreakdown]:
    """One pass over shuffled mini-batches; returns the per-batch loss records.

    A trailing batch with a single image is dropped (no pairs to supervise).
    """
    if len(images) == 0:
        raise ConfigError("train_epoch: empty dataset")
    eta = model.config.eta if eta is None else eta
    dtype = model.hash_layer.weight.dtype
    order = rng.permutation(len(images))
    records = []
    for bi, start in enumerate(range(0, len(order), cfg.batch_size)):
        idx = order[start : start + cfg.batch_size]
        if len(idx) < 2:
            continue
        batch = images[idx]
        if cfg.augment:
            batch = augment_batch(batch, rng, cfg)
        if batch.dtype == np.uint8:
            batch = to_float(batch, dtype)
        S = similarity_matrix([labels[i] for i in idx])
        optimizer.zero_grad()
        codes = model(Tensor(np.asarray(batch, dtype=dtype)))
        loss, breakdown = total_loss(codes, S, eta)
        if not np.isfinite(breakdown.total):
            raise NumericError(f"non-finite loss at batch {bi}")
        loss.backward()
        optimizer.step()
        records.append(breakdown)
    return records


def train(
    model: MambaHash,
    images: np.ndarray,
    labels: Sequence,
    cfg: TrainConfig,
    eta: float | None = None,
    on_epoch: Callable[[int, list[LossBreakdown]], None] | None = None,
) -> list[list[LossBreakdown]]:
    """Run ``cfg.epochs`` epochs from a fresh optimizer seeded by ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed)
    opt = RMSProp(model.named_parameters(), cfg)
    history = []
    for epoch in range(cfg.epochs):
        records = train_epoch(model, images, labels, cfg, opt, rng, eta)
        history.append(records)
        log.info("epoch %d mean loss %.6f", epoch, np.mean([r.total for r in records]))
        if on_epoch is not None:
            on_epoch(epoch, records)
    return history
