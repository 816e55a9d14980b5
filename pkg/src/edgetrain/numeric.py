"""Precision-aware dense matrix primitives.

Matrices are plain 2-D numpy arrays whose dtype is either float32 or float64.
The helpers here refuse to mix widths so that nothing gets silently promoted,
and :class:`PrecisionPolicy` decides which width each group of training
variables lives at.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

WIDTHS = {32: np.float32, 64: np.float64}


class PrecisionError(ValueError):
    """Raised on shape or width mismatches between operands."""


class NonFiniteError(FloatingPointError):
    """Raised when a NaN or Inf shows up where training needs finite values."""


class VariableGroup(str, enum.Enum):
    INPUT_DATA = "input_data"
    ACTIVATIONS = "activations"
    PARAMETERS = "parameters"
    GRADIENTS = "gradients"
    OPTIMIZER_STATE = "optimizer_state"


class Scheme(str, enum.Enum):
    DOUBLE = "double"
    MIXED = "mixed"
    FLOAT = "float"


_MIXED_32 = frozenset({VariableGroup.INPUT_DATA, VariableGroup.ACTIVATIONS})


def _default_widths(scheme: Scheme) -> dict[VariableGroup, int]:
    if scheme is Scheme.DOUBLE:
        return {g: 64 for g in VariableGroup}
    if scheme is Scheme.FLOAT:
        return {g: 32 for g in VariableGroup}
    return {g: 32 if g in _MIXED_32 else 64 for g in VariableGroup}


@dataclass(frozen=True)
class PrecisionPolicy:
    """Width (32 or 64 bits) assigned to every :class:`VariableGroup`.

    ``PrecisionPolicy.from_scheme("mixed")`` keeps parameters, gradients and
    optimizer moments at 64 bits while input data and activations drop to 32.
    Pass ``widths`` to try a different partition.
    """

    scheme: Scheme
    widths: Mapping[VariableGroup, int] = field(default_factory=dict)

    def __post_init__(self):
        scheme = Scheme(self.scheme)
        widths = _default_widths(scheme)
        widths.update({VariableGroup(g): int(w) for g, w in dict(self.widths).items()})
        bad = {g: w for g, w in widths.items() if w not in WIDTHS}
        if bad:
            raise ValueError(f"unsupported widths: {bad}")
        object.__setattr__(self, "scheme", scheme)
        object.__setattr__(self, "widths", widths)

    @classmethod
    def from_scheme(cls, scheme: str | Scheme) -> "PrecisionPolicy":
        return cls(Scheme(scheme))

    def width(self, group: VariableGroup) -> int:
        return self.widths[VariableGroup(group)]

    def dtype(self, group: VariableGroup) -> type[np.floating]:
        return WIDTHS[self.width(group)]


def width_of(m: np.ndarray) -> int:
    if m.dtype == np.float64:
        return 64
    if m.dtype == np.float32:
        return 32
    raise PrecisionError(f"unsupported dtype {m.dtype}")


def matrix(data, width: int = 64) -> np.ndarray:
    """Build a 2-D matrix at the given width (vectors become a single row)."""
    m = np.array(data, dtype=WIDTHS[width])
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2 or m.size == 0:
        raise PrecisionError(f"expected a non-empty 2-D matrix, got shape {m.shape}")
    return m


def cast(m: np.ndarray, width: int) -> np.ndarray:
    """IEEE-754 round-to-nearest-even conversion; returns a copy."""
    with np.errstate(over="ignore"):
        return np.asarray(m).astype(WIDTHS[width], copy=True)


def apply_policy(group: VariableGroup, policy: PrecisionPolicy, m: np.ndarray) -> np.ndarray:
    """Return ``m`` at the width ``policy`` assigns to ``group``.

    Arrays already at the right width are returned as-is, so applying a
    policy twice is the same as applying it once.
    """
    target = policy.dtype(group)
    if m.dtype == target:
        return m
    with np.errstate(over="ignore"):
        return m.astype(target)


def _check_pair(a: np.ndarray, b: np.ndarray) -> None:
    if a.dtype != b.dtype:
        raise PrecisionError(f"width mismatch: {a.dtype} vs {b.dtype}")


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check_pair(a, b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise PrecisionError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form: same value as 1/(1+exp(-x)) without overflow in exp
    return 0.5 * np.tanh(0.5 * x) + 0.5


def dsigmoid(x: np.ndarray) -> np.ndarray:
    s = sigmoid(x)
    return s * (1 - s)


def dtanh(x: np.ndarray) -> np.ndarray:
    t = np.tanh(x)
    return 1 - t * t


_UNARY = {"sigmoid": sigmoid, "tanh": np.tanh, "dsigmoid": dsigmoid, "dtanh": dtanh}
_BINARY = {"add": np.add, "sub": np.subtract, "hadamard": np.multiply}


def elementwise(op: str, a: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    if op in _UNARY:
        if b is not None:
            raise TypeError(f"{op} takes one operand")
        width_of(a)
        return _UNARY[op](a)
    if op not in _BINARY:
        raise ValueError(f"unknown elementwise op {op!r}")
    if b is None:
        raise TypeError(f"{op} takes two operands")
    _check_pair(a, b)
    if a.shape != b.shape:
        raise PrecisionError(f"shape mismatch: {a.shape} vs {b.shape}")
    return _BINARY[op](a, b)


def check_finite(name: str, *arrays) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NonFiniteError(f"non-finite values in {name}")
