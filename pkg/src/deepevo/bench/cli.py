"""Command line: ``deepevo run|transfer|report``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys

from ..neuralops import CheckpointError
from .config import OUTPUT_ENV, ConfigError, default_output, load_config
from .outputs import emit_outputs, report_from_dir, timing_rows, timing_text
from .runner import PreflightError, pretrain_and_transfer, run_all

log = logging.getLogger("deepevo")


def _cutoffs(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"cutoffs must be comma-separated seconds, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="deepevo", description="Run learned-operator experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log each finished run")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("config", help="experiment config file (INI)")
        sp.add_argument("--seed-offset", type=int, default=0, help="added to every run seed")
        sp.add_argument("--out", default=None,
                        help=f"output directory (default: ${OUTPUT_ENV} or {default_output()!r})")
        sp.add_argument("--cutoffs", type=_cutoffs, default=None,
                        help="wall-clock cutoffs in seconds, e.g. 300,600")

    common(sub.add_parser("run", help="run every experiment in a config"))
    common(sub.add_parser("transfer", help="train on the first experiment, reuse frozen on the rest"))
    rp = sub.add_parser("report", help="print report tables from an output directory")
    rp.add_argument("dir")
    return p


def _load(args) -> list:
    specs = load_config(args.config)
    out = []
    for s in specs:
        s = s.with_seed_offset(args.seed_offset)
        changes = {}
        if args.out:
            changes["output"] = args.out
        if args.cutoffs is not None:
            changes["cutoffs"] = args.cutoffs
        out.append(dataclasses.replace(s, **changes) if changes else s)
    return out


def _on_run(rec) -> None:
    log.info("%s seed %d: final %.6g, %d evals", rec.experiment, rec.seed, rec.final, rec.evals)


def cmd_run(args) -> int:
    specs = _load(args)
    results = run_all(specs, _on_run)
    out_dir = args.out or specs[0].output
    paths = emit_outputs(results, out_dir)
    with open(paths["report_txt"]) as fh:
        sys.stdout.write(fh.read())
    print(f"outputs written to {out_dir}")
    return 0


def cmd_transfer(args) -> int:
    specs = _load(args)
    if len(specs) < 2:
        raise ConfigError("transfer needs a training experiment followed by at least one eval experiment")
    out_dir = args.out or specs[0].output
    report = pretrain_and_transfer(specs[0], specs[1:], os.path.join(out_dir, "operator.ckpt"), _on_run)
    results = [report.train] + report.evals
    emit_outputs(results, out_dir)
    sys.stdout.write(timing_text(timing_rows(results)))
    for name, steps in report.optimizer_steps.items():
        print(f"{name}: optimizer steps per frozen run {steps}")
    print(f"checkpoint {report.checkpoint}; outputs written to {out_dir}")
    return 0


def cmd_report(args) -> int:
    table, timing = report_from_dir(args.dir)
    sys.stdout.write(table.to_text())
    sys.stdout.write("\n")
    sys.stdout.write(timing_text(timing))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    handlers = {"run": cmd_run, "transfer": cmd_transfer, "report": cmd_report}
    try:
        return handlers[args.command](args)
    except (ConfigError, PreflightError, CheckpointError, FileNotFoundError, ValueError) as exc:
        print(f"deepevo: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
