"""Seeded multi-run experiments over GA and GP operators."""

from __future__ import annotations

import dataclasses
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..bert_mutation import BertMutation, BertMutModel
from ..core import GenerationRecord, RunHistory
from ..dnc import DncCrossover
from ..ga import (
    AdaptiveUniform,
    EquiprobableUniform,
    MultiParentUniform,
    OnePoint,
    evolve,
)
from ..gp.evolve import (
    HoistMutation,
    MixedMutation,
    PointMutation,
    RegressionTask,
    SubtreeMutation,
    gp_evolve,
)
from ..gp.primitives import default_pset
from ..neuralops import CheckpointError, load_checkpoint
from ..problems import (
    BPP,
    GENERATED,
    GRAPHS,
    BinPackingProblem,
    ColoringProblem,
    bundled_bpp,
    bundled_graph,
    generated_dataset,
    load_csv,
    parse_bpp,
    parse_dimacs,
)
from .config import ExperimentSpec


class PreflightError(ValueError):
    """Raised before any run starts when an experiment cannot be set up."""


@dataclass
class RunRecord:
    experiment: str
    problem: str
    operator: str
    seed: int
    rows: list[GenerationRecord]
    cutoffs: dict[float, float] = field(default_factory=dict)
    stats: dict[str, float] = field(default_factory=dict)
    direction: str = "minimize"

    @property
    def final_train(self) -> float:
        return self.rows[-1].best_train

    @property
    def final_test(self) -> float:
        return self.rows[-1].best_test

    @property
    def final(self) -> float:
        """Reported fitness: test fitness when there is a test set, else train."""
        t = self.final_test
        return self.final_train if math.isnan(t) else t

    @property
    def evals(self) -> int:
        return self.rows[-1].evals

    def generation_seconds(self) -> np.ndarray:
        cum = np.array([r.cum_seconds for r in self.rows])
        return np.diff(cum)


def cutoff_snapshots(rows: Sequence[GenerationRecord], cutoffs: Sequence[float]) -> dict[float, float]:
    """Best train fitness of the last generation finished within each cutoff (nan if none)."""
    out = {}
    for c in cutoffs:
        done = [r for r in rows if r.cum_seconds <= c]
        out[c] = done[-1].best_train if done else math.nan
    return out


@dataclass
class TimingSummary:
    mean: float
    std: float
    max: float
    n: int

    @classmethod
    def of(cls, seconds: np.ndarray) -> "TimingSummary":
        s = np.asarray(seconds, dtype=np.float64)
        if s.size == 0:
            return cls(math.nan, math.nan, math.nan, 0)
        return cls(float(s.mean()), float(s.std()), float(s.max()), int(s.size))


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    runs: list[RunRecord]

    def final_values(self) -> np.ndarray:
        return np.array([r.final for r in self.runs])

    def summary(self) -> tuple[float, float]:
        v = self.final_values()
        return float(v.mean()), float(v.std())

    def timing(self) -> TimingSummary:
        return TimingSummary.of(np.concatenate([r.generation_seconds() for r in self.runs]))


# -- problem resolution -----------------------------------------------------------------

def _is_path(ref: str) -> bool:
    return os.sep in ref or "." in os.path.basename(ref)


def resolve_problem(spec: ExperimentSpec):
    """The GA problem adapter or GP regression task named by ``spec.problem``."""
    ref = spec.problem
    if _is_path(ref) and not os.path.exists(ref):
        raise PreflightError(f"[{spec.name}] data file not found: {ref}")
    if spec.paradigm == "gp":
        if ref in GENERATED:
            ds = generated_dataset(ref, spec.n_rows, spec.data_seed, spec.noise)
        elif _is_path(ref):
            ds = load_csv(ref, spec.target_column)
        else:
            raise PreflightError(f"[{spec.name}] unknown regression problem {ref!r}; "
                                 f"use one of {sorted(GENERATED)} or a CSV path")
        ds = ds.split(spec.test_fraction, spec.data_seed)
        pset = default_pset(ds.n_features, spec.const_range)
        return RegressionTask.from_arrays(ds.X, ds.y, ds.train_idx, ds.test_idx, pset)
    k = spec.colors or None
    if ref in GRAPHS:
        return ColoringProblem(bundled_graph(ref, k))
    if ref in BPP:
        return BinPackingProblem(bundled_bpp(ref))
    if _is_path(ref):
        with open(ref) as fh:
            text = fh.read()
        name = os.path.splitext(os.path.basename(ref))[0]
        if any(line.startswith("p ") for line in text.splitlines()):
            return ColoringProblem(parse_dimacs(text, k, name))
        return BinPackingProblem(parse_bpp(text, name))
    raise PreflightError(f"[{spec.name}] unknown GA problem {ref!r}; use one of "
                         f"{sorted(GRAPHS) + sorted(BPP)} or an instance file path")


def problem_label(spec: ExperimentSpec) -> str:
    ref = spec.problem
    return os.path.splitext(os.path.basename(ref))[0] if _is_path(ref) else ref


def preflight(spec: ExperimentSpec):
    """Resolve the problem and check the checkpoint, raising before any run."""
    try:
        problem = resolve_problem(spec)
    except (OSError, ValueError) as exc:
        if isinstance(exc, PreflightError):
            raise
        raise PreflightError(f"[{spec.name}] cannot load problem {spec.problem!r}: {exc}") from exc
    if spec.checkpoint:
        try:
            if spec.paradigm == "ga":
                if spec.operator != "dnc":
                    raise PreflightError(f"[{spec.name}] checkpoints apply to the dnc operator only")
                load_checkpoint(spec.checkpoint, expect={"alphabet": problem.alphabet,
                                                         "n_parents": spec.n_parents})
            else:
                if spec.operator != "bert":
                    raise PreflightError(f"[{spec.name}] checkpoints apply to the bert operator only")
                load_checkpoint(spec.checkpoint, expect=_bert_expect(problem))
        except (OSError, CheckpointError) as exc:
            raise PreflightError(f"[{spec.name}] checkpoint {spec.checkpoint!r} unusable: {exc}") from exc
    return problem


def _bert_expect(task: RegressionTask) -> dict:
    return BertMutModel.pset_hparams(task.pset)


# -- operators ------------------------------------------------------------------------------

def make_gp_operator(spec: ExperimentSpec, task: RegressionTask, seed: int):
    gp = spec.gp
    if spec.operator == "point":
        return PointMutation(gp.point_rate)
    if spec.operator == "subtree":
        return SubtreeMutation(gp.donor_depth, gp.max_size)
    if spec.operator == "hoist":
        return HoistMutation()
    if spec.operator == "mixed":
        return MixedMutation(gp.point_rate, gp.donor_depth, gp.max_size)
    cfg = dataclasses.replace(spec.bert, seed=seed)
    if spec.checkpoint:
        return BertMutation.from_checkpoint(spec.checkpoint, task.pset, cfg)
    return BertMutation.for_pset(task.pset, cfg)


def make_ga_operator(spec: ExperimentSpec, problem, seed: int):
    direction = problem.direction
    if spec.operator == "uniform":
        return EquiprobableUniform()
    if spec.operator == "one_point":
        return OnePoint()
    if spec.operator == "adaptive":
        return AdaptiveUniform(direction)
    if spec.operator == "multiparent":
        return MultiParentUniform(spec.n_parents)
    cfg = dataclasses.replace(spec.dnc, seed=seed, direction=direction, n_parents=spec.n_parents)
    if spec.checkpoint:
        return DncCrossover.from_checkpoint(spec.checkpoint, cfg, problem.alphabet)
    return DncCrossover.for_problem(cfg, problem.alphabet, problem.genome_length)


# -- running ---------------------------------------------------------------------------------

def run_once(spec: ExperimentSpec, problem, seed: int, on_operator: Callable | None = None) -> RunRecord:
    if spec.paradigm == "gp":
        op = make_gp_operator(spec, problem, seed)
        history: RunHistory = gp_evolve(dataclasses.replace(spec.gp, seed=seed), problem, op)
        direction = "minimize"
    else:
        op = make_ga_operator(spec, problem, seed)
        cfg = dataclasses.replace(spec.ga, seed=seed, direction=problem.direction)
        history = evolve(cfg, problem, op)
        direction = problem.direction
    if on_operator is not None:
        on_operator(op)
    return RunRecord(spec.name, problem_label(spec), spec.operator, seed, list(history.rows),
                     cutoff_snapshots(history.rows, spec.cutoffs), dict(history.stats), direction)


def run_experiment(spec: ExperimentSpec, on_run: Callable[[RunRecord], None] | None = None,
                   on_operator: Callable | None = None) -> ExperimentResult:
    """Run every seed of ``spec``; the problem is resolved (and checked) first."""
    problem = preflight(spec)
    runs = []
    for seed in spec.seeds:
        rec = run_once(spec, problem, seed, on_operator)
        runs.append(rec)
        if on_run is not None:
            on_run(rec)
    return ExperimentResult(spec, runs)


def run_all(specs: Sequence[ExperimentSpec], on_run=None) -> list[ExperimentResult]:
    for s in specs:  # fail before the first run
        preflight(s)
    return [run_experiment(s, on_run) for s in specs]


@dataclass
class TransferReport:
    train: ExperimentResult
    evals: list[ExperimentResult]
    checkpoint: str
    optimizer_steps: dict[str, list[int]]

    def timing_rows(self) -> list[tuple[str, str, TimingSummary]]:
        rows = [(self.train.spec.name, "learning", self.train.timing())]
        rows += [(r.spec.name, "frozen", r.timing()) for r in self.evals]
        return rows


def pretrain_and_transfer(train_spec: ExperimentSpec, eval_specs: Sequence[ExperimentSpec],
                          checkpoint_path: str | None = None, on_run=None) -> TransferReport:
    """Train the learned operator on one instance, then reuse it frozen on others.

    The checkpoint comes from the first training run. Eval problems are
    checked for compatibility before training starts.
    """
    if train_spec.operator not in ("dnc", "bert"):
        raise PreflightError("transfer needs a learned operator (dnc or bert)")
    train_problem = preflight(train_spec)
    for es in eval_specs:
        if (es.paradigm, es.operator) != (train_spec.paradigm, train_spec.operator):
            raise PreflightError(f"[{es.name}] must use {train_spec.paradigm}/{train_spec.operator} "
                                 "to reuse the trained operator")
        problem = preflight(dataclasses.replace(es, checkpoint=""))
        _check_compatible(train_spec, train_problem, es, problem)
    checkpoint_path = checkpoint_path or os.path.join(train_spec.output, f"{train_spec.name}.ckpt")
    os.makedirs(os.path.dirname(checkpoint_path) or ".", exist_ok=True)
    saved: list = []

    def keep_first(op):
        if not saved:
            op.save(checkpoint_path)
            saved.append(checkpoint_path)

    train = run_experiment(train_spec, on_run, on_operator=keep_first)
    steps: dict[str, list[int]] = {}
    results = []
    for es in eval_specs:
        frozen = _frozen(es, checkpoint_path)
        counts: list[int] = []
        results.append(run_experiment(frozen, on_run,
                                      on_operator=lambda op: counts.append(op.optimizer_steps)))
        steps[es.name] = counts
    return TransferReport(train, results, checkpoint_path, steps)


def _frozen(spec: ExperimentSpec, checkpoint: str) -> ExperimentSpec:
    if spec.paradigm == "ga":
        return dataclasses.replace(spec, checkpoint=checkpoint,
                                   dnc=dataclasses.replace(spec.dnc, frozen=True))
    return dataclasses.replace(spec, checkpoint=checkpoint,
                               bert=dataclasses.replace(spec.bert, frozen=True))


def _check_compatible(train_spec, train_problem, eval_spec, eval_problem) -> None:
    if train_spec.paradigm == "ga":
        if eval_problem.alphabet != train_problem.alphabet:
            raise PreflightError(f"[{eval_spec.name}] alphabet {eval_problem.alphabet} differs from "
                                 f"the training instance's {train_problem.alphabet}")
        if eval_spec.n_parents != train_spec.n_parents:
            raise PreflightError(f"[{eval_spec.name}] parent count {eval_spec.n_parents} differs "
                                 f"from the trained operator's {train_spec.n_parents}")
    else:
        a, b = _bert_expect(train_problem), _bert_expect(eval_problem)
        if a != b:
            raise PreflightError(f"[{eval_spec.name}] primitive set {b} differs from the "
                                 f"training set {a}")

