"""CSV, plot-series and report-table output for experiment results.

Floats are written with ``repr`` so re-reading any file gives back the exact
in-memory values.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ..core import GenerationRecord
from .runner import ExperimentResult, RunRecord, TimingSummary

RUN_COLUMNS = ("generation", "best_train", "mean_train", "best_test", "cum_seconds", "evals")
SUMMARY_COLUMNS = ("experiment", "problem", "operator", "mode", "seed", "final_train", "final_test",
                   "final", "evals", "gen_seconds_mean", "gen_seconds_std", "gen_seconds_max",
                   "run_file")
AGGREGATE_COLUMNS = ("generation", "runs", "best_train_mean", "best_train_std",
                     "best_test_mean", "best_test_std", "cum_seconds_mean", "evals")
TIMING_COLUMNS = ("problem", "operator", "mode", "mean", "std", "max", "generations")


def _num(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return repr(float(x))


def cutoff_column(c: float) -> str:
    return f"cutoff_{c:g}s"


def _write(path: str, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow(row)


def _safe(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in name)


def run_filename(rec: RunRecord) -> str:
    return os.path.join("runs", f"{_safe(rec.experiment)}_seed{rec.seed}.csv")


def write_run_csv(rec: RunRecord, path: str) -> None:
    _write(path, RUN_COLUMNS, ([_num(r.generation), _num(r.best_train), _num(r.mean_train),
                                _num(r.best_test), _num(r.cum_seconds), _num(r.evals)]
                               for r in rec.rows))


def read_run_csv(path: str) -> list[GenerationRecord]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != RUN_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {header}")
        return [GenerationRecord(int(g), float(bt), float(mt), float(te), float(cs), int(ev))
                for g, bt, mt, te, cs, ev in reader]


def read_csv_dicts(path: str) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- report table -----------------------------------------------------------------------------

@dataclass
class ReportTable:
    """Mean (std) of the final fitness: rows are problems, columns operators."""

    rows: list[str] = field(default_factory=list)
    columns: list[str] = field(default_factory=list)
    cells: dict[tuple[str, str], tuple[float, float, int]] = field(default_factory=dict)

    @classmethod
    def from_values(cls, values: dict[tuple[str, str], Sequence[float]]) -> "ReportTable":
        t = cls()
        for (row, col), vals in values.items():
            if row not in t.rows:
                t.rows.append(row)
            if col not in t.columns:
                t.columns.append(col)
            v = np.asarray(vals, dtype=np.float64)
            t.cells[(row, col)] = (float(v.mean()), float(v.std()), int(v.size))
        return t

    def cell_text(self, row: str, col: str) -> str:
        if (row, col) not in self.cells:
            return "-"
        mean, std, _ = self.cells[(row, col)]
        return f"{mean:.4g} ({std:.3g})"

    def to_rows(self) -> list[list[str]]:
        return [[r] + [self.cell_text(r, c) for c in self.columns] for r in self.rows]

    def to_csv(self, path: str) -> None:
        _write(path, ["problem"] + [f"{c}_{s}" for c in self.columns for s in ("mean", "std", "n")],
               ([r] + [x for c in self.columns for x in self._raw(r, c)] for r in self.rows))

    def _raw(self, row: str, col: str) -> list[str]:
        if (row, col) not in self.cells:
            return ["", "", "0"]
        mean, std, n = self.cells[(row, col)]
        return [_num(mean), _num(std), str(n)]

    def to_text(self) -> str:
        return aligned(["problem"] + self.columns, self.to_rows())


def aligned(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    table = [list(header)] + [list(r) for r in rows]
    widths = [max(len(str(r[i])) for r in table) for i in range(len(header))]
    lines = ["  ".join(str(v).ljust(w) for v, w in zip(r, widths)).rstrip() for r in table]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def report_table(results: Sequence[ExperimentResult]) -> ReportTable:
    values: dict[tuple[str, str], list[float]] = {}
    for res in results:
        for r in res.runs:
            values.setdefault((r.problem, r.operator), []).append(r.final)
    return ReportTable.from_values(values)


def run_mode(res: ExperimentResult) -> str:
    """``baseline`` for fixed operators, else ``learning`` or ``frozen``."""
    spec = res.spec
    if spec.operator == "dnc":
        return "frozen" if spec.dnc.frozen else "learning"
    if spec.operator == "bert":
        return "frozen" if spec.bert.frozen else "learning"
    return "baseline"


def timing_rows(results: Sequence[ExperimentResult]) -> list[list[str]]:
    out = []
    for res in results:
        if not res.runs:
            continue
        t = res.timing()
        out.append([res.runs[0].problem, res.spec.operator, run_mode(res), _num(t.mean),
                    _num(t.std), _num(t.max), str(t.n)])
    return out


# -- emission ---------------------------------------------------------------------------------

def timing_text(rows: Sequence[Sequence[str]]) -> str:
    """Aligned timing table with seconds rounded for reading."""
    pretty = [list(r[:3]) + [f"{float(v):.4g}" for v in r[3:6]] + list(r[6:]) for r in rows]
    return aligned(TIMING_COLUMNS, pretty)


def _aggregate(runs: Sequence[RunRecord]) -> list[list[str]]:
    if not runs:
        return []
    n_gen = min(len(r.rows) for r in runs)
    out = []
    for g in range(n_gen):
        rows = [r.rows[g] for r in runs]
        bt = np.array([x.best_train for x in rows])
        te = np.array([x.best_test for x in rows])
        cs = np.array([x.cum_seconds for x in rows])
        out.append([_num(rows[0].generation), str(len(rows)), _num(bt.mean()), _num(bt.std()),
                    _num(te.mean()), _num(te.std()), _num(cs.mean()), _num(rows[0].evals)])
    return out


def emit_outputs(results: Sequence[ExperimentResult], out_dir: str,
                 cutoffs: Sequence[float] | None = None) -> dict[str, str]:
    """Write every output file under ``out_dir``; returns their paths by kind."""
    os.makedirs(out_dir, exist_ok=True)
    if cutoffs is None:
        cutoffs = sorted({c for res in results for c in res.spec.cutoffs})
    paths: dict[str, str] = {}
    summary = []
    for res in results:
        for rec in res.runs:
            rel = run_filename(rec)
            write_run_csv(rec, os.path.join(out_dir, rel))
            t = TimingSummary.of(rec.generation_seconds())
            snaps = rec.cutoffs
            summary.append([rec.experiment, rec.problem, rec.operator, run_mode(res), str(rec.seed),
                            _num(rec.final_train), _num(rec.final_test), _num(rec.final),
                            str(rec.evals), _num(t.mean), _num(t.std), _num(t.max), rel]
                           + [_num(snaps.get(c, math.nan)) for c in cutoffs])
        agg_path = os.path.join(out_dir, "aggregate", f"{_safe(res.spec.name)}.csv")
        _write(agg_path, AGGREGATE_COLUMNS, _aggregate(res.runs))
    paths["summary"] = os.path.join(out_dir, "summary.csv")
    _write(paths["summary"], list(SUMMARY_COLUMNS) + [cutoff_column(c) for c in cutoffs], summary)

    # one plot-data file per problem and series, one column per operator
    by_problem: dict[str, dict[str, list[RunRecord]]] = {}
    for res in results:
        for rec in res.runs:
            by_problem.setdefault(rec.problem, {}).setdefault(rec.operator, []).append(rec)
    for problem, ops in by_problem.items():
        for series in ("best_train", "best_test"):
            n_gen = min(len(r.rows) for runs in ops.values() for r in runs)
            cols = sorted(ops)
            rows = []
            for g in range(n_gen):
                vals = [np.mean([getattr(r.rows[g], series) for r in ops[c]]) for c in cols]
                rows.append([str(g)] + [_num(v) for v in vals])
            _write(os.path.join(out_dir, "plots", f"{_safe(problem)}_{series}.csv"),
                   ["generation"] + cols, rows)

    table = report_table(results)
    paths["report_csv"] = os.path.join(out_dir, "report.csv")
    paths["report_txt"] = os.path.join(out_dir, "report.txt")
    table.to_csv(paths["report_csv"])
    with open(paths["report_txt"], "w") as fh:
        fh.write(table.to_text())
    trows = timing_rows(results)
    paths["timing_csv"] = os.path.join(out_dir, "timing.csv")
    paths["timing_txt"] = os.path.join(out_dir, "timing.txt")
    _write(paths["timing_csv"], TIMING_COLUMNS, trows)
    with open(paths["timing_txt"], "w") as fh:
        fh.write(timing_text(trows))
    return paths


def report_from_dir(out_dir: str) -> tuple[ReportTable, list[list[str]]]:
    """Rebuild the report and timing tables from a directory written by :func:`emit_outputs`."""
    path = os.path.join(out_dir, "summary.csv")
    if not os.path.exists(path):
        raise FileNotFoundError(f"no summary.csv in {out_dir}")
    rows = read_csv_dicts(path)
    values: dict[tuple[str, str], list[float]] = {}
    seconds: dict[tuple[str, str, str], list[np.ndarray]] = {}
    for row in rows:
        values.setdefault((row["problem"], row["operator"]), []).append(float(row["final"]))
        runs = read_run_csv(os.path.join(out_dir, row["run_file"]))
        cum = np.array([r.cum_seconds for r in runs])
        seconds.setdefault((row["problem"], row["operator"], row["mode"]), []).append(np.diff(cum))
    timing = []
    for (problem, op, mode), parts in seconds.items():
        t = TimingSummary.of(np.concatenate(parts))
        timing.append([problem, op, mode, _num(t.mean), _num(t.std), _num(t.max), str(t.n)])
    return ReportTable.from_values(values), timing
