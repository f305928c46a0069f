"""Command-line interface for training, attacking, defending, and validation.

Subcommands mirror the pipeline stages so any slice can run on its own:

  run        full sweep from a plan or preset
  train-clf  train one classifier seed
  train-ebm  train one energy model (budget n, seed)
  attack     craft adversarial examples for one (epsilon, seed)
  defend     purify + vote for one (epsilon, n, seed) cell
  evaluate   aggregate per-image CSVs into metrics/fits/bpda tables
  report     audit aggregates and emit summary tables
  fpe-check  validate the Langevin sampler against the spectral solver

Dataset files (CIFAR-10 binaries) are looked up under $STOCHSEC_DATA_DIR.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from .energy import AnalyticEnergy, SgldConfig, sgld_chain
from .experiment import (
    MissingArtifactError,
    _attack_job,
    _bpda_attack_job,
    _defend_job,
    _train_clf_job,
    _train_ebm_job,
    emit_report,
    evaluate_run,
    run_experiment,
)
from .plans import PRESETS, ExperimentPlan, load_plan, save_plan
from .spectral import (
    PeriodicLattice,
    evolve,
    gibbs_density,
    histogram_on_lattice,
    periodize_arccos,
    total_variation,
    uniform_density,
)


def _add_plan_source(parser: argparse.ArgumentParser) -> None:
    group = parser.add_mutually_exclusive_group(required=True)
    group.add_argument("--plan", type=Path, help="plan file (key = value sections)")
    group.add_argument("--preset", choices=sorted(PRESETS),
                       help="built-in plan preset")


def _resolve_plan(args) -> ExperimentPlan:
    if getattr(args, "plan", None) is not None:
        return load_plan(args.plan)
    return PRESETS[args.preset]()


def _restrict_seed(plan: ExperimentPlan, seed: int | None) -> ExperimentPlan:
    if seed is None:
        return plan
    import dataclasses

    return dataclasses.replace(plan, seeds=(seed,))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stochsec",
        description="Stochastic-security experiments: energy-based purification "
                    "of adversarial inputs, scored by accuracy and calibration.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a full sweep plan")
    _add_plan_source(p_run)
    p_run.add_argument("--out", type=Path, required=True, help="run directory")
    p_run.add_argument("--workers", type=int, default=1,
                       help="parallel workers for independent cells")
    p_run.add_argument("--no-train", action="store_true",
                       help="fail instead of training when checkpoints are missing")
    p_run.add_argument("--seed", type=int, default=None,
                       help="restrict the sweep to one seed")

    p_clf = sub.add_parser("train-clf", help="train one classifier seed")
    _add_plan_source(p_clf)
    p_clf.add_argument("--out", type=Path, required=True)
    p_clf.add_argument("--seed", type=int, required=True)

    p_ebm = sub.add_parser("train-ebm", help="train one energy model")
    _add_plan_source(p_ebm)
    p_ebm.add_argument("--out", type=Path, required=True)
    p_ebm.add_argument("--n", type=int, required=True,
                       help="SGLD steps per training batch")
    p_ebm.add_argument("--seed", type=int, required=True)

    p_att = sub.add_parser("attack", help="craft adversarial examples")
    _add_plan_source(p_att)
    p_att.add_argument("--out", type=Path, required=True)
    p_att.add_argument("--eps", type=int, required=True,
                       help="attack strength in /255 units")
    p_att.add_argument("--seed", type=int, required=True)
    p_att.add_argument("--adaptive", action="store_true",
                       help="attack through the defense (needs --n)")
    p_att.add_argument("--n", type=int, default=None,
                       help="energy-model budget for --adaptive")

    p_def = sub.add_parser("defend", help="purify and vote for one cell")
    _add_plan_source(p_def)
    p_def.add_argument("--out", type=Path, required=True)
    p_def.add_argument("--eps", type=int, required=True)
    p_def.add_argument("--n", type=int, required=True)
    p_def.add_argument("--seed", type=int, required=True)
    p_def.add_argument("--adaptive", action="store_true",
                       help="defend the adaptive-attack examples instead")

    p_eval = sub.add_parser("evaluate", help="aggregate per-image CSVs")
    _add_plan_source(p_eval)
    p_eval.add_argument("--out", type=Path, required=True)

    p_rep = sub.add_parser("report", help="audit and emit summary tables")
    _add_plan_source(p_rep)
    p_rep.add_argument("--out", type=Path, required=True)

    p_fpe = sub.add_parser("fpe-check",
                           help="sampler-vs-solver validation on a torus potential")
    p_fpe.add_argument("--out", type=Path, default=Path("fpe_check.csv"),
                       help="output CSV path")
    p_fpe.add_argument("--lattice", type=int, default=64, help="lattice points")
    p_fpe.add_argument("--chains", type=int, default=100_000)
    p_fpe.add_argument("--chain-steps", type=int, default=1500)
    p_fpe.add_argument("--time", type=float, default=10.0,
                       help="solver relaxation time")
    p_fpe.add_argument("--seed", type=int, default=0)
    return parser


def _cmd_run(args) -> int:
    plan = _restrict_seed(_resolve_plan(args), args.seed)
    out = run_experiment(plan, args.out, workers=args.workers,
                         no_train=args.no_train)
    print(f"run complete: {out}")
    print((out / "report.txt").read_text(), end="")
    return 0


def _cmd_train_clf(args) -> int:
    plan = _resolve_plan(args)
    args.out.mkdir(parents=True, exist_ok=True)
    _train_clf_job((plan, str(args.out), args.seed))
    print(f"classifier checkpoint: {args.out}/clf_seed{args.seed}.eblb")
    return 0


def _cmd_train_ebm(args) -> int:
    plan = _resolve_plan(args)
    args.out.mkdir(parents=True, exist_ok=True)
    _train_ebm_job((plan, str(args.out), args.n, args.seed))
    print(f"energy-model checkpoint: {args.out}/ebm_n{args.n}_seed{args.seed}.eblb")
    return 0


def _cmd_attack(args) -> int:
    plan = _resolve_plan(args)
    args.out.mkdir(parents=True, exist_ok=True)
    if args.adaptive:
        if args.n is None:
            print("error: --adaptive needs --n", file=sys.stderr)
            return 2
        _bpda_attack_job((plan, str(args.out), args.n, args.seed))
        print(f"adversarial batch: {args.out}/adv_bpda_n{args.n}_seed{args.seed}.eblb")
    else:
        _attack_job((plan, str(args.out), args.eps, args.seed))
        print(f"adversarial batch: {args.out}/adv_eps{args.eps}_seed{args.seed}.eblb")
    return 0


def _cmd_defend(args) -> int:
    plan = _resolve_plan(args)
    variant = "bpda" if args.adaptive else "pgd"
    _defend_job((plan, str(args.out), args.eps, args.n, args.seed, variant))
    tag = "_bpda" if args.adaptive else ""
    print(f"per-image table: {args.out}/images{tag}_eps{args.eps}_n{args.n}"
          f"_seed{args.seed}.csv")
    return 0


def _cmd_evaluate(args) -> int:
    plan = _resolve_plan(args)
    evaluate_run(plan, args.out)
    print(f"metrics: {args.out}/metrics.csv")
    print(f"fits: {args.out}/fits.csv")
    return 0


def _cmd_report(args) -> int:
    plan = _resolve_plan(args)
    emit_report(plan, args.out)
    print((Path(args.out) / "report.txt").read_text(), end="")
    return 0


def _cmd_fpe_check(args) -> int:
    lattice = PeriodicLattice(1, args.lattice, (2 * math.pi,))
    potential = periodize_arccos(lambda p: 2.0 * p[:, 0], lattice)
    exact = gibbs_density(potential)
    evolved = evolve(uniform_density(lattice), potential, args.time).density

    # Chain at inverse temperature 1: alpha = 0.01, sigma^2 = 2*alpha.
    model = AnalyticEnergy(
        energy_fn=lambda x: 2.0 * np.cos(x[:, 0]),
        grad_fn=lambda x: -2.0 * np.sin(x),
        dim=1, domain_lo=0.0, domain_hi=2 * math.pi)
    cfg = SgldConfig(n_steps=args.chain_steps, step_size=0.01,
                     noise_scale=math.sqrt(0.02), clamp=False)
    rng = np.random.default_rng(args.seed)
    x0 = rng.uniform(0.0, 2 * math.pi, size=(args.chains, 1))
    ends = np.atleast_2d(sgld_chain(model, x0, cfg, rng))
    hist_mass = histogram_on_lattice(lattice, ends)

    cell = lattice.cell_volume
    tv = total_variation(hist_mass, evolved.cell_masses())
    l2 = math.sqrt(float(((evolved.values - exact.values) ** 2).sum()) * cell)

    coords = lattice.axis_coordinates(0)
    lines = ["point,exact_density,evolved_density,sgld_histogram"]
    for i in range(args.lattice):
        lines.append(",".join([
            repr(float(coords[i])),
            repr(float(exact.values[i])),
            repr(float(evolved.values[i])),
            repr(float(hist_mass[i] / cell)),
        ]))
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text("\n".join(lines) + "\n", encoding="utf-8")

    print(f"lattice points: {args.lattice}")
    print(f"chains: {args.chains} x {args.chain_steps} steps")
    print(f"solver-vs-exact L2: {l2:.3e}")
    print(f"sampler-vs-solver TV: {tv:.4f}")
    print(f"table: {args.out}")
    return 0


_COMMANDS = {
    "run": _cmd_run,
    "train-clf": _cmd_train_clf,
    "train-ebm": _cmd_train_ebm,
    "attack": _cmd_attack,
    "defend": _cmd_defend,
    "evaluate": _cmd_evaluate,
    "report": _cmd_report,
    "fpe-check": _cmd_fpe_check,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except MissingArtifactError as exc:
        print(f"error: missing artifact: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
