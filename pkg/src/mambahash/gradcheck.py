"""Central finite-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .autodiff import Tensor
from .errors import ContractError, NumericError


@dataclass
class GradCheckReport:
    analytic: np.ndarray
    numeric: np.ndarray
    rel_err: np.ndarray
    indices: np.ndarray
    tol: float

    @property
    def max_rel_err(self) -> float:
        return float(self.rel_err.max()) if self.rel_err.size else 0.0

    @property
    def flagged(self) -> np.ndarray:
        """Flat indices whose relative error exceeds ``tol``."""
        return self.indices[self.rel_err > self.tol]

    @property
    def passed(self) -> bool:
        return self.flagged.size == 0


def _scalar(f: Callable[[Tensor], Tensor], theta: Tensor) -> float:
    out = f(theta)
    if out.size != 1:
        raise ContractError(f"grad_check: f must return a scalar, got shape {out.shape}")
    val = float(out.data.reshape(-1)[0])
    if not np.isfinite(val):
        raise NumericError(f"grad_check: f(theta) is not finite ({val})")
    return val


def grad_check(
    f: Callable[[Tensor], Tensor],
    theta: Tensor,
    step: float = 1e-5,
    tol: float = 1e-4,
    indices: Sequence[int] | np.ndarray | None = None,
) -> GradCheckReport:
    """Compare the taped gradient of ``f`` at ``theta`` with central differences.

    ``theta`` is perturbed in place (and restored), so ``f`` may also close over
    it, e.g. a module parameter.  Error per coordinate is
    ``|g_ad - g_fd| / max(1, |g_fd|)``.  ``indices`` limits the check to a
    subset of flat coordinates.
    """
    if not theta.requires_grad:
        raise ContractError("grad_check: theta must require gradients")
    saved_grad = theta.grad
    theta.grad = None
    out = f(theta)
    if out.size != 1:
        raise ContractError(f"grad_check: f must return a scalar, got shape {out.shape}")
    if not np.isfinite(out.data).all():
        raise NumericError("grad_check: f(theta) is not finite")
    if out.requires_grad:
        out.backward()
    analytic_full = np.zeros_like(theta.data) if theta.grad is None else theta.grad.copy()
    theta.grad = saved_grad

    theta.data = np.ascontiguousarray(theta.data)
    flat = theta.data.reshape(-1)
    idx = np.arange(flat.size) if indices is None else np.asarray(indices, dtype=np.intp)
    numeric = np.empty(idx.size)
    for n, i in enumerate(idx):
        orig = flat[i]
        flat[i] = orig + step
        fp = _scalar(f, theta)
        flat[i] = orig - step
        fm = _scalar(f, theta)
        flat[i] = orig
        numeric[n] = (fp - fm) / (2.0 * step)
    analytic = analytic_full.reshape(-1)[idx]
    rel = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))
    return GradCheckReport(analytic, numeric, rel, idx, tol)
