"""Pairwise likelihood loss with a quantization penalty."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, DataError


@dataclass(frozen=True)
class LossBreakdown:
    nll_term: float
    quant_term: float
    total: float
    pair_count: int


def as_label_set(label) -> frozenset:
    if isinstance(label, (str, bytes)) or not isinstance(label, Iterable):
        return frozenset([label])
    return frozenset(label)


def similarity_matrix(labels: Sequence) -> np.ndarray:
    """0/1 matrix, 1 where two items share at least one label (diagonal is 1).

    ``labels`` holds one entry per item: a single label or a collection of labels.
    """
    if len(labels) == 0:
        raise DataError("similarity_matrix: empty batch")
    sets = [as_label_set(lab) for lab in labels]
    for i, s in enumerate(sets):
        if not s:
            raise DataError(f"similarity_matrix: item {i} has an empty label set")
    universe = sorted(set().union(*sets), key=repr)
    col = {lab: j for j, lab in enumerate(universe)}
    onehot = np.zeros((len(sets), len(universe)))
    for i, s in enumerate(sets):
        onehot[i, [col[lab] for lab in s]] = 1.0
    return ((onehot @ onehot.T) > 0).astype(np.float64)


def _upper_mask(n: int) -> np.ndarray:
    return np.triu(np.ones((n, n)), k=1)


def pairwise_nll(codes: Tensor, S: np.ndarray) -> Tensor:
    """Sum over pairs i<j of ``log(1 + e^theta) - s_ij * theta`` with ``theta = h_i.h_j / 2``."""
    n = codes.shape[0]
    S = np.asarray(S, dtype=codes.dtype)
    if S.shape != (n, n):
        raise ContractError(f"pairwise_nll: similarity matrix {S.shape} does not match batch size {n}")
    theta = 0.5 * (codes @ ad.transpose(codes))
    per_pair = ad.softplus(theta) - theta * S
    return ad.tsum(per_pair * _upper_mask(n).astype(codes.dtype))


def quantization_loss(codes: Tensor) -> Tensor:
    """``sum_i ||h_i - sign(h_i)||^2`` with sign(0) = +1 held constant."""
    diff = codes - ad.stop_gradient_sign(codes)
    return ad.tsum(ad.square(diff))


def total_loss(codes: Tensor, S: np.ndarray, eta: float) -> tuple[Tensor, LossBreakdown]:
    """Taped total loss and its scalar breakdown."""
    if eta < 0:
        raise ContractError(f"total_loss: eta must be >= 0, got {eta}")
    nll = pairwise_nll(codes, S)
    quant = quantization_loss(codes)
    total = nll + eta * quant
    n = codes.shape[0]
    breakdown = LossBreakdown(
        nll_term=nll.item(),
        quant_term=quant.item(),
        total=total.item(),
        pair_count=n * (n - 1) // 2,
    )
    return total, breakdown
