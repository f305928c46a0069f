"""Command-line surface: parsing, exit codes, and the sampler check."""

import math

import numpy as np
import pytest

from stochsec.cli import build_parser, main
from stochsec.plans import desk_plan, load_plan, save_plan

from test_experiment import tiny_plan


def test_parser_run_flags(tmp_path):
    args = build_parser().parse_args(
        ["run", "--preset", "desk", "--out", str(tmp_path), "--workers", "3",
         "--no-train", "--seed", "2"])
    assert args.command == "run"
    assert args.preset == "desk"
    assert args.workers == 3
    assert args.no_train
    assert args.seed == 2


def test_plan_and_preset_are_exclusive(tmp_path):
    plan_file = tmp_path / "p.txt"
    save_plan(desk_plan(), plan_file)
    with pytest.raises(SystemExit):
        build_parser().parse_args(
            ["run", "--plan", str(plan_file), "--preset", "desk",
             "--out", str(tmp_path)])
    with pytest.raises(SystemExit):
        build_parser().parse_args(["run", "--out", str(tmp_path)])


def test_unknown_command_rejected():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["purify"])


def test_run_command_end_to_end(tmp_path, capsys):
    plan_file = tmp_path / "plan.txt"
    save_plan(tiny_plan(), plan_file)
    out = tmp_path / "run"
    assert main(["run", "--plan", str(plan_file), "--out", str(out)]) == 0
    assert (out / "report.txt").exists()
    assert load_plan(out / "plan.txt") == tiny_plan()
    stdout = capsys.readouterr().out
    assert "run complete" in stdout
    assert "self-consistency audit: OK" in stdout


def test_no_train_exit_code(tmp_path, capsys):
    plan_file = tmp_path / "plan.txt"
    save_plan(tiny_plan(), plan_file)
    code = main(["run", "--plan", str(plan_file), "--out",
                 str(tmp_path / "fresh"), "--no-train"])
    assert code == 1
    assert "missing artifact" in capsys.readouterr().err


def test_adaptive_attack_needs_budget(tmp_path, capsys):
    plan_file = tmp_path / "plan.txt"
    save_plan(tiny_plan(), plan_file)
    code = main(["attack", "--plan", str(plan_file), "--out", str(tmp_path),
                 "--eps", "8", "--seed", "1", "--adaptive"])
    assert code == 2
    assert "--adaptive needs --n" in capsys.readouterr().err


def test_seed_restriction_runs_one_seed(tmp_path):
    plan_file = tmp_path / "plan.txt"
    save_plan(tiny_plan(), plan_file)
    out = tmp_path / "run"
    assert main(["run", "--plan", str(plan_file), "--out", str(out),
                 "--seed", "1"]) == 0
    assert (out / "clf_seed1.eblb").exists()
    metrics = (out / "metrics.csv").read_text().splitlines()[1:]
    assert {line.split(",")[2] for line in metrics} == {"1"}


def test_fpe_check_table(tmp_path, capsys):
    out = tmp_path / "fpe.csv"
    code = main(["fpe-check", "--out", str(out), "--lattice", "16",
                 "--chains", "2000", "--chain-steps", "300", "--time", "8.0"])
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "point,exact_density,evolved_density,sgld_histogram"
    assert len(lines) == 17
    table = np.array([[float(v) for v in line.split(",")] for line in lines[1:]])
    cell = 2 * math.pi / 16
    assert math.isclose(table[:, 1].sum() * cell, 1.0, rel_tol=1e-12)
    assert math.isclose(table[:, 2].sum() * cell, 1.0, rel_tol=1e-9)
    assert math.isclose(table[:, 3].sum() * cell, 1.0, rel_tol=1e-9)
    assert np.all(table[:, 1:] >= 0.0)
    # the solver has fully relaxed to the exact stationary density by t=8
    assert float(np.abs(table[:, 2] - table[:, 1]).max()) < 1e-4
    stdout = capsys.readouterr().out
    assert "solver-vs-exact L2" in stdout
    assert "sampler-vs-solver TV" in stdout
