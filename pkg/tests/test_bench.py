import dataclasses
import math
import os

import numpy as np
import pytest

from deepevo.bench import cli
from deepevo.bench.config import (
    ConfigError,
    ExperimentSpec,
    emit_config,
    parse_config,
)
from deepevo.bench.outputs import (
    RUN_COLUMNS,
    SUMMARY_COLUMNS,
    emit_outputs,
    read_csv_dicts,
    read_run_csv,
    report_from_dir,
)
from deepevo.bench.runner import (
    PreflightError,
    TimingSummary,
    pretrain_and_transfer,
    preflight,
    run_all,
    run_experiment,
)

GA_SMALL = """
[{name}]
paradigm = ga
problem = {problem}
operator = {op}
repeats = {repeats}
ga.population_size = 12
ga.generations = 4
dnc.batch_size = 8
dnc.embed_dim = 8
dnc.hidden_dim = 8
dnc.attn_dim = 8
"""

GP_SMALL = """
[{name}]
problem = {problem}
operator = {op}
repeats = {repeats}
n_rows = 120
gp.population_size = 12
gp.generations = 4
gp.init_depth = 2, 4
gp.max_size = 48
bert.batch_size = 4
bert.dim = 16
bert.heads = 2
bert.ffn = 16
bert.max_len = 48
"""


def ga_spec(op="uniform", problem="gnp20", repeats=2, name=None, out="", **extra):
    text = GA_SMALL.format(name=name or op, problem=problem, op=op, repeats=repeats)
    text += "".join(f"{k} = {v}\n" for k, v in extra.items())
    spec = parse_config(text)[0]
    return dataclasses.replace(spec, output=out) if out else spec


def gp_spec(op="point", problem="non_analytic", repeats=2, name=None, out="", **extra):
    text = GP_SMALL.format(name=name or op, problem=problem, op=op, repeats=repeats)
    text += "".join(f"{k} = {v}\n" for k, v in extra.items())
    spec = parse_config(text)[0]
    return dataclasses.replace(spec, output=out) if out else spec


# config

def test_empty_config_gives_defaults():
    (spec,) = parse_config("")
    assert spec == ExperimentSpec(name="experiment", gp=spec.gp)
    assert spec.gp.population_size == 128 and spec.gp.generations == 200
    assert spec.gp.crossover_prob == 0.6 and spec.gp.mutation_prob == 0.1
    assert spec.test_fraction == 0.1 and spec.repeats == 10


def test_typed_errors():
    with pytest.raises(ConfigError, match="gp.generations = 'abc': expected int"):
        parse_config("[a]\ngp.generations = abc\n")
    with pytest.raises(ConfigError, match="unknown setting"):
        parse_config("[a]\ngp.colour = 3\n")
    with pytest.raises(ConfigError, match="operator"):
        parse_config("[a]\nparadigm = ga\noperator = bert\n")
    with pytest.raises(ConfigError):
        parse_config("generations = 3\n")


def test_mutation_prob_defaults_per_operator():
    probs = {op: parse_config(f"[a]\noperator = {op}\n")[0].gp.mutation_prob
             for op in ("bert", "subtree", "hoist", "point", "mixed")}
    assert probs == {"bert": 0.1, "subtree": 0.05, "hoist": 0.05, "point": 0.1, "mixed": 0.1}
    assert parse_config("[a]\noperator = hoist\ngp.mutation_prob = 0.2\n")[0].gp.mutation_prob == 0.2


def test_config_round_trip():
    specs = [gp_spec("bert", seeds="3, 4"), ga_spec("dnc", cutoffs="0.5, 2", n_parents=3),
             gp_spec("mixed", const_range="-2, 2", noise=0.5)]
    assert parse_config(emit_config(specs)) == specs


def test_seed_offset_and_env_output(monkeypatch):
    monkeypatch.setenv("DEEPEVO_OUT", "/tmp/somewhere")
    spec = parse_config("[a]\nrepeats = 3\n")[0]
    assert spec.output == "/tmp/somewhere"
    assert spec.with_seed_offset(10).seeds == (10, 11, 12)


# runner

def test_runs_repeatable_and_eval_counts():
    spec = ga_spec("uniform")
    a, b = run_experiment(spec), run_experiment(spec)
    assert [r.final for r in a.runs] == [r.final for r in b.runs]
    assert all(r.evals == 12 + 4 * 11 for r in a.runs)
    dnc = run_experiment(ga_spec("dnc"))
    assert [r.evals for r in dnc.runs] == [r.evals for r in a.runs]
    gp = run_experiment(gp_spec("point"))
    bert = run_experiment(gp_spec("bert"))
    assert [r.evals for r in gp.runs] == [r.evals for r in bert.runs] == [12 + 4 * 11] * 2


def test_single_repeat_zero_std():
    res = run_experiment(ga_spec("one_point", repeats=1))
    assert res.summary()[1] == 0.0


def test_missing_file_fails_before_any_run(tmp_path):
    ran = []
    good = ga_spec("uniform")
    bad = ga_spec("uniform", problem=str(tmp_path / "missing.col"), name="bad")
    with pytest.raises(PreflightError, match="not found"):
        run_all([good, bad], on_run=ran.append)
    assert ran == []


def test_timing_summary_matches_rows():
    res = run_experiment(gp_spec("mixed"))
    secs = np.concatenate([r.generation_seconds() for r in res.runs])
    assert (secs >= 0).all()
    t = res.timing()
    assert (t.mean, t.std, t.max, t.n) == (secs.mean(), secs.std(), secs.max(), secs.size)
    assert math.isnan(TimingSummary.of(np.array([])).mean)


# outputs

def test_outputs_round_trip_and_cutoffs(tmp_path):
    results = run_all([gp_spec("point", cutoffs="0.001, 100"), gp_spec("hoist")])
    paths = emit_outputs(results, str(tmp_path))
    rows = read_csv_dicts(paths["summary"])
    assert list(rows[0]) == list(SUMMARY_COLUMNS) + ["cutoff_0.001s", "cutoff_100s"]
    assert len(rows) == 4
    for row, rec in zip(rows, [r for res in results for r in res.runs]):
        back = read_run_csv(os.path.join(tmp_path, row["run_file"]))
        assert back == rec.rows
        assert float(row["final"]) == rec.final
    assert float(rows[0]["cutoff_100s"]) == results[0].runs[0].final_train
    assert os.path.exists(tmp_path / "plots" / "non_analytic_best_test.csv")
    table, timing = report_from_dir(str(tmp_path))
    assert "point" in table.to_text() and len(timing) == 2


def test_empty_results_write_headers_only(tmp_path):
    paths = emit_outputs([], str(tmp_path))
    with open(paths["summary"]) as fh:
        assert fh.read().strip() == ",".join(SUMMARY_COLUMNS)
    with open(paths["timing_csv"]) as fh:
        assert len(fh.read().strip().splitlines()) == 1
    assert RUN_COLUMNS[0] == "generation"


# transfer

def test_transfer_frozen_runs_do_not_train(tmp_path):
    train = ga_spec("dnc", problem="gnp20", name="train", out=str(tmp_path), colors=5)
    evals = [ga_spec("dnc", problem="gnp20", name="eval", out=str(tmp_path), colors=5,
                     data_seed=1)]
    report = pretrain_and_transfer(train, evals, str(tmp_path / "op.ckpt"))
    assert os.path.exists(report.checkpoint)
    assert report.optimizer_steps["eval"] == [0, 0]
    assert report.train.runs[0].stats["optimizer_steps"] > 0
    again = pretrain_and_transfer(train, evals, str(tmp_path / "op2.ckpt"))
    assert [r.final for r in again.evals[0].runs] == [r.final for r in report.evals[0].runs]


def test_transfer_alphabet_mismatch_preflight(tmp_path):
    train = ga_spec("dnc", problem="gnp20", name="train", out=str(tmp_path), colors=5)
    other = ga_spec("dnc", problem="triangle", name="eval", out=str(tmp_path))
    with pytest.raises(PreflightError, match="alphabet"):
        pretrain_and_transfer(train, [other], str(tmp_path / "op.ckpt"))
    assert not os.path.exists(tmp_path / "op.ckpt")


def test_checkpoint_mismatch_preflight(tmp_path):
    from deepevo.dnc import DncModel
    from deepevo.neuralops import save_checkpoint
    path = tmp_path / "m.ckpt"
    save_checkpoint(DncModel(3, 3, 2, 4, 4, 4), path)
    spec = ga_spec("dnc", problem="gnp20", checkpoint=str(path), colors=5)
    with pytest.raises(PreflightError, match="unusable"):
        preflight(spec)


# command line

def _write_cfg(tmp_path, text):
    path = tmp_path / "exp.ini"
    path.write_text(text)
    return str(path)


def test_cli_run_and_report(tmp_path, capsys):
    cfg = _write_cfg(tmp_path, GA_SMALL.format(name="u", problem="triangle", op="uniform", repeats=1))
    out = str(tmp_path / "out")
    assert cli.main(["run", cfg, "--out", out, "--cutoffs", "0.5,1"]) == 0
    assert "outputs written" in capsys.readouterr().out
    assert cli.main(["report", out]) == 0
    assert "uniform" in capsys.readouterr().out


def test_cli_errors_exit_2(tmp_path, capsys):
    bad = _write_cfg(tmp_path, "[a]\ngp.generations = abc\n")
    assert cli.main(["run", bad]) == 2
    assert "deepevo: error:" in capsys.readouterr().err
    assert cli.main(["report", str(tmp_path / "nowhere")]) == 2
    one = _write_cfg(tmp_path, GA_SMALL.format(name="u", problem="triangle", op="dnc", repeats=1))
    assert cli.main(["transfer", one]) == 2
    with pytest.raises(SystemExit):
        cli.main(["run", one, "--cutoffs", "a,b"])


def test_cli_transfer(tmp_path, capsys):
    text = (GA_SMALL.format(name="train", problem="gnp20", op="dnc", repeats=1) + "colors = 5\n"
            + GA_SMALL.format(name="eval", problem="gnp20", op="dnc", repeats=1) + "colors = 5\n")
    cfg = _write_cfg(tmp_path, text)
    out = str(tmp_path / "out")
    assert cli.main(["transfer", cfg, "--out", out]) == 0
    text = capsys.readouterr().out
    assert "eval: optimizer steps per frozen run [0]" in text
    assert os.path.exists(os.path.join(out, "operator.ckpt"))
