"""Sweep orchestration: train, attack, defend, score, and report.

A run directory is self-describing: it holds the resolved plan, every
checkpoint and training log, one per-image CSV per sweep cell, the
aggregated metrics/fits tables, and the report tables.  All randomness
derives from (seed, role, indices) substreams, so reruns of the same
plan produce byte-identical CSVs regardless of worker count; workers
only change who computes a cell, never what it computes.  Every file is
written privately and published with an atomic rename.
"""

from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .attacks import bpda_eot_attack, in_threat_set, pgd_attack
from .autodiff import parameter_shapes
from .checkpoint import load_params, save_tensors, load_tensors
from .classifier import ClassifierModel, predicted_labels, softmax, train_classifier
from .defense import eot_defend
from .energy import EnergyModel
from .metrics import ece, fit_decay, project_full_purification, relative_error
from .pcd import train_ebm
from .plans import ExperimentPlan, plan_to_text
from .rng import substream

PER_IMAGE_HEADER = ("image_id,eps,n_train_sgld,clean_pred,adv_pred,post_pred,"
                    "confidence,correct_clean,correct_post")
METRICS_HEADER = "eps,n,seed,clean_acc,adv_acc,post_acc,rel_error,ece"
FITS_HEADER = "eps,slope,intercept,n_star"
BPDA_HEADER = "eps,n,seed,pgd_post_acc,bpda_post_acc"
CLF_LOG_HEADER = "epoch,train_acc,test_acc,lr"
EBM_LOG_HEADER = "batch,data_energy,sample_energy,grad_norm,lr,mode"


class MissingArtifactError(FileNotFoundError):
    """A required checkpoint or table is absent; names the artifact."""


def _fmt(value) -> str:
    """Canonical CSV cell: ints verbatim, floats as shortest round-trip."""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with io.open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _write_csv(path: Path, header: str, rows) -> None:
    lines = [header]
    lines.extend(",".join(row) for row in rows)
    _atomic_write(path, "\n".join(lines) + "\n")


def _read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    if not path.exists():
        raise MissingArtifactError(str(path))
    with io.open(path, "r", encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def _column(header: list[str], rows: list[list[str]], name: str,
            path: Path) -> list[str]:
    if name not in header:
        raise MissingArtifactError(f"{path}: missing column {name!r}")
    i = header.index(name)
    return [row[i] for row in rows]


# -- artifact names --------------------------------------------------------


def clf_checkpoint(out: Path, seed: int) -> Path:
    return out / f"clf_seed{seed}.eblb"


def clf_log_path(out: Path, seed: int) -> Path:
    return out / f"clf_train_seed{seed}.csv"


def ebm_checkpoint(out: Path, n: int, seed: int) -> Path:
    return out / f"ebm_n{n}_seed{seed}.eblb"


def ebm_log_path(out: Path, n: int, seed: int) -> Path:
    return out / f"ebm_train_n{n}_seed{seed}.csv"


def adv_path(out: Path, eps_255: int, seed: int) -> Path:
    return out / f"adv_eps{eps_255}_seed{seed}.eblb"


def bpda_adv_path(out: Path, n: int, seed: int) -> Path:
    return out / f"adv_bpda_n{n}_seed{seed}.eblb"


def per_image_path(out: Path, eps_255: int, n: int, seed: int,
                   variant: str = "pgd") -> Path:
    tag = "" if variant == "pgd" else "_bpda"
    return out / f"images{tag}_eps{eps_255}_n{n}_seed{seed}.csv"


# -- dataset / model plumbing ----------------------------------------------

_DATASET_CACHE: dict[str, object] = {}


def _dataset(plan: ExperimentPlan):
    key = plan_to_text(plan)
    if key not in _DATASET_CACHE:
        _DATASET_CACHE[key] = plan.load_dataset()
    return _DATASET_CACHE[key]


def attack_subset(plan: ExperimentPlan, dataset) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(test indices, inputs, labels) of the attacked subset, id-sorted."""
    total = len(dataset.test_labels)
    if total == 0:
        raise ValueError("plan has no test images to attack")
    if plan.attack_images >= total:
        ids = np.arange(total)
    else:
        rng = substream(plan.subset_seed, "subset")
        ids = np.sort(rng.choice(total, size=plan.attack_images, replace=False))
    return ids, dataset.test_inputs[ids], dataset.test_labels[ids]


def _param_names(params) -> list[str]:
    return [f"param_{i:03d}" for i in range(len(params))]


def load_classifier(plan: ExperimentPlan, out: Path, seed: int) -> ClassifierModel:
    path = clf_checkpoint(out, seed)
    if not path.exists():
        raise MissingArtifactError(str(path))
    ds = _dataset(plan)
    spec = plan.classifier_spec(ds.dim, ds.n_classes)
    names = [f"param_{i:03d}" for i in range(len(parameter_shapes(spec)))]
    return ClassifierModel(spec, load_params(path, names), ds.n_classes)


def load_ebm(plan: ExperimentPlan, out: Path, n: int, seed: int) -> EnergyModel:
    path = ebm_checkpoint(out, n, seed)
    if not path.exists():
        raise MissingArtifactError(str(path))
    ds = _dataset(plan)
    cfg = plan.ebm_config(ds.dim, n, seed)
    names = [f"param_{i:03d}" for i in range(len(parameter_shapes(cfg.spec)))]
    return EnergyModel(spec=cfg.spec, params=load_params(path, names),
                       beta=cfg.resolved_beta)


# -- phase jobs (top-level so process pools can pickle them) ----------------


def _train_clf_job(args) -> None:
    plan, out, seed = args
    out = Path(out)
    if clf_checkpoint(out, seed).exists():
        return
    ds = _dataset(plan)
    cfg = plan.classifier_config(ds.dim, ds.n_classes, seed)
    model, log = train_classifier(cfg, ds)
    rows = [[str(e.epoch), _fmt(e.train_acc), _fmt(e.test_acc), _fmt(e.lr)]
            for e in log]
    _write_csv(clf_log_path(out, seed), CLF_LOG_HEADER, rows)
    _save_atomic_params(clf_checkpoint(out, seed), model.params)


def _train_ebm_job(args) -> None:
    plan, out, n, seed = args
    out = Path(out)
    if ebm_checkpoint(out, n, seed).exists():
        return
    ds = _dataset(plan)
    cfg = plan.ebm_config(ds.dim, n, seed)
    result = train_ebm(cfg, ds.train_inputs)
    rows = [[str(e.batch), _fmt(e.data_energy), _fmt(e.sample_energy),
             _fmt(e.grad_norm), _fmt(e.lr), e.mode] for e in result.log]
    _write_csv(ebm_log_path(out, n, seed), EBM_LOG_HEADER, rows)
    _save_atomic_params(ebm_checkpoint(out, n, seed), result.model.params)


def _save_atomic_params(path: Path, params) -> None:
    tmp = path.with_name(path.name + ".tmp")
    save_tensors(tmp, dict(zip(_param_names(params), params)))
    os.replace(tmp, path)


def _attack_job(args) -> None:
    plan, out, eps_255, seed = args
    out = Path(out)
    if adv_path(out, eps_255, seed).exists():
        return
    ds = _dataset(plan)
    _, x, y = attack_subset(plan, ds)
    model = load_classifier(plan, out, seed)
    adv = pgd_attack(model, x, y, plan.attack_config(eps_255),
                     substream(seed, "attack", eps_255))
    if not in_threat_set(adv, x, plan.eps_value(eps_255)):
        raise AssertionError("attack output escaped the threat set")
    tmp = adv_path(out, eps_255, seed).with_suffix(".eblb.tmp")
    save_tensors(tmp, {"adv": adv})
    os.replace(tmp, adv_path(out, eps_255, seed))


def _bpda_attack_job(args) -> None:
    plan, out, n, seed = args
    out = Path(out)
    if bpda_adv_path(out, n, seed).exists():
        return
    ds = _dataset(plan)
    _, x, y = attack_subset(plan, ds)
    model = load_classifier(plan, out, seed)
    ebm = load_ebm(plan, out, n, seed)
    adv = bpda_eot_attack(ebm, model, x, y, plan.bpda_attack_config(),
                          plan.purification_chain(), plan.bpda_trials,
                          substream(seed, "bpda", n))
    if not in_threat_set(adv, x, plan.eps_value(plan.bpda_epsilon_255)):
        raise AssertionError("adaptive attack output escaped the threat set")
    tmp = bpda_adv_path(out, n, seed).with_suffix(".eblb.tmp")
    save_tensors(tmp, {"adv": adv})
    os.replace(tmp, bpda_adv_path(out, n, seed))


def _defend_job(args) -> None:
    plan, out, eps_255, n, seed, variant = args
    out = Path(out)
    target = per_image_path(out, eps_255, n, seed, variant)
    if target.exists():
        return
    ds = _dataset(plan)
    ids, x, y = attack_subset(plan, ds)
    model = load_classifier(plan, out, seed)
    ebm = load_ebm(plan, out, n, seed)
    source = (adv_path(out, eps_255, seed) if variant == "pgd"
              else bpda_adv_path(out, n, seed))
    adv = load_tensors(source)["adv"]
    clean_pred = predicted_labels(model, x)
    adv_pred = predicted_labels(model, adv)
    # Both attack variants share one defense stream per (eps, n, seed)
    # cell, so their defended outcomes differ only through the inputs.
    logits, post_pred = eot_defend(ebm, model, adv, plan.defense_config(),
                                   substream(seed, "defend", eps_255, n))
    confidence = softmax(logits).max(axis=1)
    rows = []
    eps = plan.eps_value(eps_255)
    for i in range(len(ids)):
        rows.append([
            str(int(ids[i])), _fmt(eps), str(n),
            str(int(clean_pred[i])), str(int(adv_pred[i])), str(int(post_pred[i])),
            _fmt(confidence[i]),
            str(int(clean_pred[i] == y[i])), str(int(post_pred[i] == y[i])),
        ])
    _write_csv(target, PER_IMAGE_HEADER, rows)


def _run_jobs(fn, argslist, workers: int) -> None:
    if workers <= 1 or len(argslist) <= 1:
        for args in argslist:
            fn(args)
        return
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for result in pool.map(fn, argslist):
            _ = result  # propagate exceptions in submission order


# -- aggregation -------------------------------------------------------------


@dataclass(frozen=True)
class CellAggregate:
    eps_255: int
    n: int
    seed: int
    clean_acc: float
    adv_acc: float
    post_acc: float
    rel_error: float | None
    ece_value: float


def _aggregate_cell(plan: ExperimentPlan, out: Path, eps_255: int, n: int,
                    seed: int, labels_by_id: np.ndarray,
                    variant: str = "pgd") -> CellAggregate:
    path = per_image_path(out, eps_255, n, seed, variant)
    header, rows = _read_csv(path)
    ids = np.array([int(v) for v in _column(header, rows, "image_id", path)])
    y = labels_by_id[ids]
    adv_pred = np.array([int(v) for v in _column(header, rows, "adv_pred", path)])
    correct_clean = np.array([int(v) for v in _column(header, rows, "correct_clean", path)])
    correct_post = np.array([int(v) for v in _column(header, rows, "correct_post", path)])
    confidence = np.array([float(v) for v in _column(header, rows, "confidence", path)])
    clean_acc = float(correct_clean.mean())
    adv_acc = float(np.mean(adv_pred == y))
    post_acc = float(correct_post.mean())
    rel = (relative_error(1.0 - post_acc, 1.0 - clean_acc)
           if clean_acc < 1.0 else None)
    return CellAggregate(eps_255=eps_255, n=n, seed=seed, clean_acc=clean_acc,
                         adv_acc=adv_acc, post_acc=post_acc, rel_error=rel,
                         ece_value=ece(confidence, correct_post))


def evaluate_run(plan: ExperimentPlan, out: Path) -> None:
    """Aggregate per-image CSVs into metrics.csv, fits.csv, and bpda.csv."""
    out = Path(out)
    ds = _dataset(plan)
    labels_by_id = ds.test_labels
    metrics_rows = []
    cells: dict[tuple[int, int, int], CellAggregate] = {}
    for eps_255 in plan.epsilons_255:
        for n in plan.sweep_sgld_steps:
            for seed in plan.seeds:
                agg = _aggregate_cell(plan, out, eps_255, n, seed, labels_by_id)
                cells[(eps_255, n, seed)] = agg
                metrics_rows.append([
                    _fmt(plan.eps_value(eps_255)), str(n), str(seed),
                    _fmt(agg.clean_acc), _fmt(agg.adv_acc), _fmt(agg.post_acc),
                    "" if agg.rel_error is None else _fmt(agg.rel_error),
                    _fmt(agg.ece_value),
                ])
    _write_csv(out / "metrics.csv", METRICS_HEADER, metrics_rows)

    fits_rows = []
    for eps_255 in plan.epsilons_255:
        pairs = []
        for n in plan.sweep_sgld_steps:
            rels = [cells[(eps_255, n, s)].rel_error for s in plan.seeds]
            rels = [r for r in rels if r is not None]
            if rels:
                mean_rel = float(np.mean(rels))
                if mean_rel > 0.0:
                    pairs.append((n, mean_rel))
        if len({n for n, _ in pairs}) >= 2:
            fit = fit_decay([p[0] for p in pairs], [p[1] for p in pairs])
            projection = project_full_purification(fit)
            fits_rows.append([
                _fmt(plan.eps_value(eps_255)), _fmt(fit.slope), _fmt(fit.intercept),
                "" if projection.n_star is None else str(projection.n_star),
            ])
        else:
            fits_rows.append([_fmt(plan.eps_value(eps_255)), "", "", ""])
    _write_csv(out / "fits.csv", FITS_HEADER, fits_rows)

    if plan.bpda_enabled:
        bpda_rows = []
        for n in plan.bpda_sgld_steps:
            for seed in plan.seeds:
                plain = cells[(plan.bpda_epsilon_255, n, seed)]
                adaptive = _aggregate_cell(plan, out, plan.bpda_epsilon_255, n,
                                           seed, labels_by_id, variant="bpda")
                bpda_rows.append([
                    _fmt(plan.eps_value(plan.bpda_epsilon_255)), str(n), str(seed),
                    _fmt(plain.post_acc), _fmt(adaptive.post_acc),
                ])
        _write_csv(out / "bpda.csv", BPDA_HEADER, bpda_rows)


# -- report -------------------------------------------------------------------


def _mean(values) -> float:
    return float(np.mean(np.asarray(values, dtype=np.float64)))


def emit_report(plan: ExperimentPlan, out: Path) -> None:
    """Audit the aggregates and write the summary tables.

    The audit recomputes every metrics.csv aggregate from its own
    per-image rows and requires byte-for-byte agreement after canonical
    formatting; a mismatch aborts the report.
    """
    out = Path(out)
    metrics_path = out / "metrics.csv"
    header, rows = _read_csv(metrics_path)
    if header != METRICS_HEADER.split(","):
        raise MissingArtifactError(
            f"{metrics_path}: expected columns {METRICS_HEADER}")
    ds = _dataset(plan)
    labels_by_id = ds.test_labels

    audited = 0
    table: dict[tuple[int, int, int], dict[str, float]] = {}
    eps_by_value = {_fmt(plan.eps_value(e)): e for e in plan.epsilons_255}
    for row in rows:
        record = dict(zip(header, row))
        eps_255 = eps_by_value[record["eps"]]
        n, seed = int(record["n"]), int(record["seed"])
        agg = _aggregate_cell(plan, out, eps_255, n, seed, labels_by_id)
        expected = {
            "clean_acc": _fmt(agg.clean_acc),
            "adv_acc": _fmt(agg.adv_acc),
            "post_acc": _fmt(agg.post_acc),
            "rel_error": "" if agg.rel_error is None else _fmt(agg.rel_error),
            "ece": _fmt(agg.ece_value),
        }
        for name, want in expected.items():
            if record[name] != want:
                raise AssertionError(
                    f"self-consistency audit failed at eps={record['eps']} "
                    f"n={n} seed={seed}: {name} is {record[name]}, "
                    f"recomputation gives {want}")
        audited += 1
        table[(eps_255, n, seed)] = {
            "clean_acc": agg.clean_acc, "adv_acc": agg.adv_acc,
            "post_acc": agg.post_acc,
            "rel_error": float("nan") if agg.rel_error is None else agg.rel_error,
            "ece": agg.ece_value,
        }

    seeds = plan.seeds

    acc_rows = []
    for eps_255 in plan.epsilons_255:
        for n in plan.sweep_sgld_steps:
            acc_rows.append([
                _fmt(plan.eps_value(eps_255)), str(n),
                _fmt(_mean([table[(eps_255, n, s)]["clean_acc"] for s in seeds])),
                _fmt(_mean([table[(eps_255, n, s)]["adv_acc"] for s in seeds])),
                _fmt(_mean([table[(eps_255, n, s)]["post_acc"] for s in seeds])),
            ])
    _write_csv(out / "accuracy_vs_eps.csv", "eps,n,clean_acc,adv_acc,post_acc",
               acc_rows)

    error_rows, rel_rows, ece_rows, projection_rows = [], [], [], []
    for eps_255 in plan.epsilons_255:
        eps_str = _fmt(plan.eps_value(eps_255))
        errs, rels = [], []
        for n in plan.sweep_sgld_steps:
            post_err = _mean([1.0 - table[(eps_255, n, s)]["post_acc"] for s in seeds])
            rel_vals = [table[(eps_255, n, s)]["rel_error"] for s in seeds]
            rel = float(np.mean(rel_vals))
            errs.append((n, post_err))
            rels.append((n, rel))
            ece_rows.append([eps_str, str(n),
                             _fmt(_mean([table[(eps_255, n, s)]["ece"] for s in seeds]))])
        err_fit = (fit_decay([p[0] for p in errs], [p[1] for p in errs])
                   if len(errs) >= 2 and all(p[1] > 0 for p in errs) else None)
        rel_ok = len(rels) >= 2 and all(np.isfinite(p[1]) and p[1] > 0 for p in rels)
        rel_fit = fit_decay([p[0] for p in rels], [p[1] for p in rels]) if rel_ok else None
        for n, post_err in errs:
            error_rows.append([eps_str, str(n), _fmt(post_err),
                               "" if err_fit is None else _fmt(np.exp(err_fit.log_error_at(n)))])
        for n, rel in rels:
            rel_rows.append([eps_str, str(n),
                             "" if not np.isfinite(rel) else _fmt(rel),
                             "" if rel_fit is None else _fmt(np.exp(rel_fit.log_error_at(n)))])
        if rel_fit is None:
            projection_rows.append([eps_str, "", "", "", "insufficient n points"])
        else:
            projection = project_full_purification(rel_fit)
            projection_rows.append([
                eps_str, _fmt(rel_fit.slope), _fmt(rel_fit.intercept),
                "" if projection.n_star is None else str(projection.n_star),
                projection.reason,
            ])
    _write_csv(out / "error_vs_n.csv", "eps,n,post_error,fitted_post_error", error_rows)
    _write_csv(out / "relative_error_vs_n.csv", "eps,n,rel_error,fitted_rel_error", rel_rows)
    _write_csv(out / "ece_vs_n.csv", "eps,n,ece", ece_rows)
    _write_csv(out / "projection.csv", "eps,slope,intercept,n_star,note", projection_rows)

    lines = [
        "stochastic-security run report",
        f"dataset = {plan.dataset_kind}",
        f"attack_images = {plan.attack_images}",
        f"sgld_steps = {list(plan.sweep_sgld_steps)}",
        f"epsilons_255 = {list(plan.epsilons_255)}",
        f"seeds = {list(plan.seeds)}",
        f"defense = {plan.defense_trials} trials x {plan.defense_steps} steps",
        f"self-consistency audit: OK ({audited} cells, all aggregates match "
        "their per-image rows)",
        "tables: accuracy_vs_eps.csv, error_vs_n.csv, relative_error_vs_n.csv, "
        "ece_vs_n.csv, projection.csv",
    ]
    if plan.bpda_enabled:
        lines.append(f"adaptive attack leg: eps_255 = {plan.bpda_epsilon_255}, "
                     f"budgets = {list(plan.bpda_sgld_steps)}, see bpda.csv")
    _atomic_write(out / "report.txt", "\n".join(lines) + "\n")


# -- driver -------------------------------------------------------------------


def run_experiment(plan: ExperimentPlan, out, workers: int = 1,
                   no_train: bool = False) -> Path:
    """Execute the full sweep and emit every table; returns the run dir."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    _atomic_write(out / "plan.txt", plan_to_text(plan))

    train_jobs = []
    for seed in plan.seeds:
        if not clf_checkpoint(out, seed).exists():
            if no_train:
                raise MissingArtifactError(str(clf_checkpoint(out, seed)))
            train_jobs.append(("clf", (plan, str(out), seed)))
    for n in plan.sweep_sgld_steps:
        for seed in plan.seeds:
            if not ebm_checkpoint(out, n, seed).exists():
                if no_train:
                    raise MissingArtifactError(str(ebm_checkpoint(out, n, seed)))
                train_jobs.append(("ebm", (plan, str(out), n, seed)))
    _run_jobs(_train_clf_job, [a for k, a in train_jobs if k == "clf"], workers)
    _run_jobs(_train_ebm_job, [a for k, a in train_jobs if k == "ebm"], workers)

    _run_jobs(_attack_job,
              [(plan, str(out), eps_255, seed)
               for eps_255 in plan.epsilons_255 for seed in plan.seeds],
              workers)
    if plan.bpda_enabled:
        _run_jobs(_bpda_attack_job,
                  [(plan, str(out), n, seed)
                   for n in plan.bpda_sgld_steps for seed in plan.seeds],
                  workers)

    defend_jobs = [(plan, str(out), eps_255, n, seed, "pgd")
                   for eps_255 in plan.epsilons_255
                   for n in plan.sweep_sgld_steps
                   for seed in plan.seeds]
    if plan.bpda_enabled:
        defend_jobs.extend(
            (plan, str(out), plan.bpda_epsilon_255, n, seed, "bpda")
            for n in plan.bpda_sgld_steps for seed in plan.seeds)
    _run_jobs(_defend_job, defend_jobs, workers)

    evaluate_run(plan, out)
    emit_report(plan, out)
    return out
