"""Capacity-normalized forecast error.

The headline score is ``nrmse_pct = 100 * sqrt(mean(((y - yhat) / cap) ** 2))``.
``eq2_literal_pct`` is the complementary ``(1 - sqrt(...)) * 100`` form; the
two always sum to 100.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class EvalResult:
    n: int
    nrmse_pct: float
    eq2_literal_pct: float
    mse: float

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(y, y_hat, cap: float) -> EvalResult:
    y = np.asarray(y, dtype=np.float64).ravel()
    y_hat = np.asarray(y_hat, dtype=np.float64).ravel()
    if y.size == 0:
        raise ValueError("cannot evaluate an empty prediction set")
    if y.shape != y_hat.shape:
        raise ValueError(f"length mismatch: {y.size} targets vs {y_hat.size} predictions")
    if not cap > 0:
        raise ValueError(f"capacity must be positive, got {cap}")
    resid = y - y_hat
    root = math.sqrt(float(np.mean((resid / cap) ** 2)))
    return EvalResult(
        n=int(y.size),
        nrmse_pct=100.0 * root,
        eq2_literal_pct=(1.0 - root) * 100.0,
        mse=float(np.mean(resid**2)),
    )
