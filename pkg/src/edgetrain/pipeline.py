"""prepare -> train -> evaluate -> report, shared by every CLI subcommand."""
from __future__ import annotations

import csv
import io
import json
import logging
import statistics
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from . import gbt, lstm
from .dataset import PowerSeries, SplitSpec, WindowedDataset, load_csv, make_windows, split, synthesize_pv
from .metrics import EvalResult, evaluate
from .numeric import PrecisionPolicy, Scheme
from .report import TrainReport, array_hash

log = logging.getLogger(__name__)

MODEL_FILE = "model.json"
REPORT_FILE = "report.json"
SCHEMES = ("double", "mixed", "float")


@dataclass
class RunConfig:
    """Everything one run needs. Field names double as config-file keys."""

    model: str = "lstm"
    data: str | None = None
    synth_days: int = 31
    cap: float = 5.0
    cloud_noise: float = 0.2
    k: int = 24
    h: int = 96
    split: float = 0.8
    normalization: str | None = None
    precision: str = "double"
    seed: int = 0
    # lstm
    hidden: int = 32
    epochs: int = 50
    batch: int = 16
    lr: float = 0.001
    optimizer: str = "adam"
    clip: float | None = 5.0
    # gbt
    rounds: int = 100
    depth: int = 6
    eta: float = 0.3
    lam: float = 1.0
    gamma: float = 0.0
    min_child: int = 1
    out: str = "runs/latest"

    def __post_init__(self):
        if self.model not in ("lstm", "gbt"):
            raise ValueError(f"model must be lstm or gbt, got {self.model!r}")
        if self.k < 1 or self.h < 1:
            raise ValueError("k and h must be >= 1")
        Scheme(self.precision)
        if self.normalization is None:
            self.normalization = "capacity" if self.model == "lstm" else "none"

    @classmethod
    def from_mapping(cls, values: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**values)

    def echo(self) -> dict:
        d = asdict(self)
        d.pop("out")
        return d

    def train_config(self, precision: str | None = None) -> lstm.TrainConfig:
        return lstm.TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch,
            lr=self.lr,
            precision=PrecisionPolicy.from_scheme(precision or self.precision),
            seed=self.seed,
            optimizer=self.optimizer,
            clip_norm=self.clip,
        )

    def gbt_config(self) -> gbt.GbtConfig:
        return gbt.GbtConfig(
            rounds=self.rounds, max_depth=self.depth, eta=self.eta, lam=self.lam,
            gamma=self.gamma, min_child=self.min_child,
        )


def load_series(cfg: RunConfig) -> PowerSeries:
    if cfg.data:
        return load_csv(cfg.data, cfg.cap)
    return synthesize_pv(cfg.synth_days, cfg.cap, cfg.cloud_noise, cfg.seed)


def prepare(cfg: RunConfig) -> tuple[WindowedDataset, WindowedDataset]:
    ds = make_windows(load_series(cfg), cfg.k, cfg.h, cfg.normalization)
    return split(ds, SplitSpec(cfg.split))


def split_hash(train_set: WindowedDataset, test_set: WindowedDataset) -> str:
    return array_hash(train_set.features, train_set.targets, test_set.features, test_set.targets)


def score(model, test_set: WindowedDataset) -> EvalResult:
    mod = lstm if isinstance(model, lstm.LstmModel) else gbt
    return evaluate(test_set.targets_kw(), mod.predict(model, test_set), test_set.cap)


def train_once(cfg: RunConfig, data=None, precision: str | None = None):
    """Train one model; returns ``(model, report)`` with the test score filled in."""
    train_set, test_set = data or prepare(cfg)
    if cfg.model == "lstm":
        init = lstm.init_model(cfg.hidden, cfg.k, seed=cfg.seed)
        model, report = lstm.train(init, train_set, cfg.train_config(precision))
    else:
        model, report = gbt.train(train_set, cfg.gbt_config())
    report.config = {**cfg.echo(), **({"precision": precision} if precision else {}), "fit": report.config}
    report.split_hash = split_hash(train_set, test_set)
    report.eval = score(model, test_set)
    return model, report


def save_run(model, report: TrainReport, out_dir, suffix: str = "") -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model_path = out / f"model{suffix}.json"
    report_path = out / f"report{suffix}.json"
    model_path.write_text(model.dumps())
    report_path.write_text(report.dumps())
    return model_path, report_path


def load_model(path):
    d = json.loads(Path(path).read_text())
    kind = d.get("kind")
    if kind == "gbt":
        return gbt.GbtModel.from_dict(d)
    if kind == "lstm":
        return lstm.LstmModel.from_dict(d)
    raise ValueError(f"{path}: unknown model kind {kind!r}")


def eval_saved(cfg: RunConfig, model_path=None) -> EvalResult:
    model = load_model(model_path or Path(cfg.out) / MODEL_FILE)
    _, test_set = prepare(cfg)
    return score(model, test_set)


@dataclass
class BenchRow:
    scheme: str
    total_seconds: float
    nrmse_pct: float
    runs: list[float]


def bench(cfg: RunConfig, repeats: int = 3, schemes=SCHEMES, noise_allowance: float = 0.10):
    """Train the same seed under each precision scheme ``repeats`` times.

    Returns ``(rows, reports)``; ``rows`` carry the median total time per
    scheme and ``reports`` the first run of each scheme.
    """
    if cfg.model != "lstm":
        raise ValueError("precision benchmarking applies to the lstm model only")
    data = prepare(cfg)
    want_hash = split_hash(*data)
    rows, reports = [], {}
    for scheme in schemes:
        times = []
        for r in range(repeats):
            _, report = train_once(cfg, data, precision=scheme)
            if report.split_hash != want_hash:
                raise RuntimeError(f"{scheme} run {r} saw a different train/test split")
            times.append(report.total_seconds)
            reports.setdefault(scheme, report)
            log.info("%s run %d: %.2fs", scheme, r + 1, report.total_seconds)
        rows.append(BenchRow(scheme, statistics.median(times), reports[scheme].eval.nrmse_pct, times))
    for msg in ordering_warnings(rows, noise_allowance):
        log.warning(msg)
    return rows, reports


def ordering_warnings(rows: list[BenchRow], noise_allowance: float = 0.10) -> list[str]:
    """Check Float <= Mixed <= Double (with a relative noise allowance)."""
    t = {r.scheme: r.total_seconds for r in rows}
    msgs = []
    for fast, slow in (("float", "mixed"), ("mixed", "double"), ("float", "double")):
        if fast in t and slow in t and t[fast] > t[slow] * (1 + noise_allowance):
            msgs.append(f"expected {fast} <= {slow}: {fast}={t[fast]:.3f}s {slow}={t[slow]:.3f}s")
    return msgs


def bench_table(rows: list[BenchRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scheme", "total_seconds", "nrmse_pct"])
    for r in rows:
        w.writerow([r.scheme, f"{r.total_seconds:.4f}", f"{r.nrmse_pct:.4f}"])
    return buf.getvalue()


def losses_csv(reports: list[TrainReport]) -> str:
    """Long-format ``scheme,epoch,loss`` rows, epochs numbered from 1."""
    if not reports:
        raise ValueError("no reports given")
    kinds = {r.model for r in reports}
    if len(kinds) > 1:
        raise ValueError(f"reports mix model kinds: {sorted(kinds)}")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scheme", "epoch", "loss"])
    for r in reports:
        for epoch, loss in enumerate(r.losses, start=1):
            w.writerow([r.scheme, epoch, repr(float(loss))])
    return buf.getvalue()


def read_report(path) -> TrainReport:
    try:
        d = json.loads(Path(path).read_text())
        if not isinstance(d.get("losses"), list) or "scheme" not in d:
            raise KeyError("losses/scheme")
        return TrainReport.from_dict(d)
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ValueError(f"{path}: not a training report ({exc})") from None

