"""Command-line entry point: ``edgetrain {gen-data,train,eval,bench,export-losses}``.

Exit codes: 0 success, 1 usage error, 2 runtime failure (bad data, divergence, I/O).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .dataset import DataError, synthesize_pv, write_csv
from .lstm import TrainingDiverged
from .numeric import NonFiniteError

EXIT_USAGE = 1
EXIT_RUNTIME = 2

log = logging.getLogger("edgetrain")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _run_flags(p: argparse.ArgumentParser) -> None:
    # SUPPRESS keeps unset flags out of the namespace so config-file values survive
    S = argparse.SUPPRESS
    p.add_argument("--config", help="JSON file of RunConfig keys; flags override it")
    p.add_argument("--model", choices=("lstm", "gbt"), default=S)
    p.add_argument("--data", metavar="CSV", default=S, help="timestamp,power_kw file")
    p.add_argument("--synth-days", dest="synth_days", type=int, default=S,
                   help="days of synthetic data when --data is absent (default 31)")
    p.add_argument("--cap", type=float, default=S, help="PV capacity in kW (default 5)")
    p.add_argument("--cloud-noise", dest="cloud_noise", type=float, default=S)
    p.add_argument("--k", type=int, default=S, help="feature length (default 24)")
    p.add_argument("--h", type=int, default=S, help="forecast horizon in steps (default 96)")
    p.add_argument("--split", type=float, default=S, help="train fraction (default 0.8)")
    p.add_argument("--normalization", choices=("none", "capacity"), default=S)
    p.add_argument("--precision", choices=pipeline.SCHEMES, default=S)
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--hidden", type=int, default=S)
    p.add_argument("--epochs", type=int, default=S)
    p.add_argument("--batch", type=int, default=S)
    p.add_argument("--lr", type=float, default=S)
    p.add_argument("--optimizer", choices=("adam", "sgd"), default=S)
    p.add_argument("--clip", type=float, default=S, help="global-norm clip; <= 0 disables")
    p.add_argument("--rounds", type=int, default=S)
    p.add_argument("--depth", type=int, default=S)
    p.add_argument("--eta", type=float, default=S)
    p.add_argument("--lam", type=float, default=S)
    p.add_argument("--gamma", type=float, default=S)
    p.add_argument("--min-child", dest="min_child", type=int, default=S)
    p.add_argument("--out", metavar="DIR", default=S)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="edgetrain", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="write a synthetic PV series as CSV")
    g.add_argument("--synth-days", dest="synth_days", type=int, default=31)
    g.add_argument("--cap", type=float, default=5.0)
    g.add_argument("--cloud-noise", dest="cloud_noise", type=float, default=0.2)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default="pv.csv", help="CSV path, or a directory to hold pv.csv")

    t = sub.add_parser("train", help="split, train, evaluate; writes model.json and report.json")
    _run_flags(t)
    t.add_argument("--eval-only", action="store_true", help="re-score the saved model in --out")

    e = sub.add_parser("eval", help="score a saved model on the configured test split")
    _run_flags(e)
    e.add_argument("--model-file", help="defaults to <out>/model.json")

    b = sub.add_parser("bench", help="train under double, mixed and float precision")
    _run_flags(b)
    b.add_argument("--repeats", type=int, default=3, help="runs per scheme; the median time is reported")

    x = sub.add_parser("export-losses", help="merge report loss curves into scheme,epoch,loss CSV")
    x.add_argument("reports", nargs="+")
    x.add_argument("--out", help="CSV path (default stdout)")
    return parser


def _run_config(args: argparse.Namespace) -> pipeline.RunConfig:
    values = {}
    if args.config:
        try:
            values.update(json.loads(Path(args.config).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
    skip = {"command", "config", "verbose", "eval_only", "model_file", "repeats"}
    values.update({k: v for k, v in vars(args).items() if k not in skip})
    if values.get("clip") is not None and values["clip"] <= 0:
        values["clip"] = None
    try:
        cfg = pipeline.RunConfig.from_mapping(values)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    if cfg.data and not Path(cfg.data).is_file():
        raise UsageError(f"data file not found: {cfg.data}")
    return cfg


def cmd_gen_data(args) -> int:
    out = Path(args.out)
    if out.suffix.lower() != ".csv":
        out = out / "pv.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    rows = write_csv(synthesize_pv(args.synth_days, args.cap, args.cloud_noise, args.seed), out)
    print(f"wrote {rows} rows to {out}")
    return 0


def _print_eval(ev) -> None:
    print(f"n={ev.n} nrmse={ev.nrmse_pct:.4f}% eq2_literal={ev.eq2_literal_pct:.4f}% mse={ev.mse:.6g}")


def cmd_train(args) -> int:
    cfg = _run_config(args)
    if args.eval_only:
        return _evaluate(cfg, None)
    model, report = pipeline.train_once(cfg)
    model_path, report_path = pipeline.save_run(model, report, cfg.out)
    print(f"{cfg.model}: {len(report.losses)} {'epochs' if cfg.model == 'lstm' else 'rounds'}, "
          f"{report.total_seconds:.2f}s, final loss {report.losses[-1]:.6g}")
    _print_eval(report.eval)
    print(f"model -> {model_path}\nreport -> {report_path}")
    return 0


def _evaluate(cfg, model_file) -> int:
    ev = pipeline.eval_saved(cfg, model_file)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval.json").write_text(json.dumps(ev.to_dict(), indent=2, sort_keys=True) + "\n")
    _print_eval(ev)
    return 0


def cmd_eval(args) -> int:
    return _evaluate(_run_config(args), args.model_file)


def cmd_bench(args) -> int:
    cfg = _run_config(args)
    if args.repeats < 1:
        raise UsageError("--repeats must be >= 1")
    rows, reports = pipeline.bench(cfg, repeats=args.repeats)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    table = pipeline.bench_table(rows)
    (out / "bench.csv").write_text(table)
    for scheme, report in reports.items():
        (out / f"report_{scheme}.json").write_text(report.dumps())
    (out / "losses.csv").write_text(pipeline.losses_csv(list(reports.values())))
    print(table, end="")
    for msg in pipeline.ordering_warnings(rows):
        print(f"warning: {msg}", file=sys.stderr)
    return 0


def cmd_export_losses(args) -> int:
    try:
        reports = [pipeline.read_report(p) for p in args.reports]
    except OSError as exc:
        raise UsageError(str(exc)) from None
    text = pipeline.losses_csv(reports)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "export-losses": cmd_export_losses,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"edgetrain: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, TrainingDiverged, NonFiniteError, OSError, ValueError, RuntimeError) as exc:
        print(f"edgetrain: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
