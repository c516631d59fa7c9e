"""Quick in-process property checks behind ``mambahash selfcheck``."""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .gradcheck import grad_check
from .network import enhancement_ratio
from .objective import pairwise_nll
from .retrieval import binarize_pack, hamming_matrix, mean_average_precision
from .ssm import SelectiveScanInputs, discretize_zoh, selective_scan


def _loop_scan(x, delta, A, Bm, Cm):
    b, length, d = x.shape
    y = np.zeros_like(x)
    for bi in range(b):
        for ch in range(d):
            h = np.zeros(A.shape[1])
            for t in range(length):
                z = delta[bi, t, ch] * A[ch]
                h = np.exp(z) * h + np.expm1(z) / z * delta[bi, t, ch] * Bm[bi, t] * x[bi, t, ch]
                y[bi, t, ch] = Cm[bi, t] @ h
    return y


def check_scan(rng) -> str:
    worst = 0.0
    for _ in range(5):
        b, length, d, n = rng.integers(1, 4), rng.integers(1, 20), rng.integers(1, 5), rng.integers(1, 6)
        x, delta = rng.normal(size=(b, length, d)), rng.uniform(0.01, 1.0, size=(b, length, d))
        A = -rng.uniform(0.1, 2.0, size=(d, n))
        Bm, Cm = rng.normal(size=(b, length, n)), rng.normal(size=(b, length, n))
        y = selective_scan(SelectiveScanInputs(*map(Tensor, (x, delta, Bm, Cm))), Tensor(A)).data
        worst = max(worst, float(np.abs(y - _loop_scan(x, delta, A, Bm, Cm)).max()))
    assert worst <= 1e-10, worst
    return f"max abs diff {worst:.2e}"


def check_zoh(rng) -> str:
    a_bar, b_bar = discretize_zoh(Tensor([[-1.0]]), Tensor([[[1.0]]]), Tensor([[[math.log(2)]]]))
    assert abs(a_bar.data.item() - 0.5) < 1e-12 and abs(b_bar.data.item() - 0.5) < 1e-12
    return "A_bar = B_bar = 0.5"


def check_ratio(rng) -> str:
    got = [enhancement_ratio(k) for k in (16, 32, 48, 64)]
    assert got == [2.0, 4.0, 8.0, 16.0], got
    return "2, 4, 8, 16"


def check_hamming(rng) -> str:
    for k in (16, 32, 48, 64):
        a, b = rng.choice([-1.0, 1.0], size=(200, k)), rng.choice([-1.0, 1.0], size=(200, k))
        d = np.diag(hamming_matrix(binarize_pack(a), binarize_pack(b)))
        assert np.array_equal(2 * d, k - (a * b).sum(1))
    return "XOR-popcount == (K - <a,b>)/2"


def check_map(rng) -> str:
    q = binarize_pack(np.ones((1, 4)), [0])
    db = binarize_pack(np.array([[1, 1, 1, 1], [1, 1, 1, -1], [1, 1, -1, -1.0]]), [0, 1, 0])
    got = mean_average_precision(q, db)
    assert abs(got - 5 / 6) < 1e-12, got
    return f"AP = {got:.6f}"


def check_loss(rng) -> str:
    h = Tensor(np.zeros((2, 16)))
    v = pairwise_nll(h, np.eye(2)).item()
    assert v == math.log(2), v
    big = Tensor(np.full((2, 1024), 1.0), requires_grad=True)
    loss = pairwise_nll(big, np.zeros((2, 2)))
    loss.backward()
    assert np.isfinite(loss.data).all() and np.isfinite(big.grad).all()
    return "log 2 at theta=0; finite at |theta|=512"


def check_grad(rng) -> str:
    w = Tensor(rng.normal(size=(3, 3, 2, 2)), requires_grad=True)
    x = Tensor(rng.normal(size=(1, 5, 5, 2)))
    rep = grad_check(lambda t: ad.tsum(ad.tanh(ad.conv2d(x, t, None, 2, 1))), w)
    assert rep.passed, rep.max_rel_err
    return f"conv2d max rel err {rep.max_rel_err:.1e}"


CHECKS: dict[str, Callable[[np.random.Generator], str]] = {
    "scan_oracle": check_scan,
    "zoh_scalar": check_zoh,
    "ratio_law": check_ratio,
    "hamming_identity": check_hamming,
    "map_hand_case": check_map,
    "loss_values": check_loss,
    "gradient": check_grad,
}


def run_selfcheck(seed: int = 0) -> list[tuple[str, bool, str]]:
    rng = np.random.default_rng(seed)
    results = []
    for name, fn in CHECKS.items():
        try:
            results.append((name, True, fn(rng)))
        except AssertionError as exc:
            results.append((name, False, f"assertion failed: {exc}"))
    return results
