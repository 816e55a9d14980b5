from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

from .metrics import EvalResult

REPORT_VERSION = 1
TIMING_FIELDS = ("epoch_seconds", "total_seconds")


@dataclass
class TrainReport:
    """What one training run produced: loss curve, timings, test score."""

    model: str
    scheme: str
    losses: list[float] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)
    total_seconds: float = 0.0
    peak_memory_bytes: int = 0
    config: dict[str, Any] = field(default_factory=dict)
    split_hash: str = ""
    eval: EvalResult | None = None

    def to_dict(self, timing: bool = True) -> dict:
        d = asdict(self)
        d["format_version"] = REPORT_VERSION
        if not timing:
            for key in TIMING_FIELDS:
                d.pop(key)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainReport":
        d = dict(d)
        if d.pop("format_version", REPORT_VERSION) != REPORT_VERSION:
            raise ValueError("unsupported report format_version")
        ev = d.pop("eval", None)
        return cls(**d, eval=EvalResult(**ev) if ev else None)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def array_hash(*arrays: np.ndarray) -> str:
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(str((a.dtype.str, a.shape)).encode())
        h.update(a.tobytes())
    return h.hexdigest()
