"""Experiment plans: the single source of truth for a full run.

A plan is a line-oriented ``key = value`` file with ``[section]``
headers, diff-able and hand-editable.  Loading then saving a plan
reproduces an equivalent file, and every run starts by writing its
resolved plan next to its outputs so results stay self-describing.
"""

from __future__ import annotations

import configparser
import io
import os
from dataclasses import dataclass, fields

import numpy as np

from .classifier import ClfTrainConfig
from .data import LabeledDataset, generate_toy_dataset, ingest_cifar10
from .defense import DefenseConfig
from .energy import SgldConfig
from .attacks import AttackConfig
from .nets import (
    conv_classifier_spec_32x32,
    conv_classifier_spec_8x8,
    conv_energy_spec_32x32,
    conv_energy_spec_8x8,
    dense_classifier_spec,
    dense_energy_spec,
)
from .pcd import EbmTrainConfig

DATA_DIR_ENV = "STOCHSEC_DATA_DIR"

_CLF_ARCHS = ("conv-8x8", "conv-32x32", "dense")
_EBM_ARCHS = ("conv-8x8", "conv-32x32", "dense")


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentPlan:
    """Everything a sweep over (epsilon, n, seed) needs, in primitives."""

    # dataset
    dataset_kind: str
    train_per_class: int
    test_per_class: int
    dataset_seed: int
    cifar_train_files: tuple[str, ...]
    cifar_test_files: tuple[str, ...]
    # classifier
    clf_arch: str
    clf_hidden: tuple[int, ...]
    clf_epochs: int
    clf_batch_size: int
    clf_learning_rates: tuple[float, ...]
    clf_switch_epochs: tuple[int, ...]
    clf_l2: float
    # energy models
    ebm_arch: str
    ebm_hidden: tuple[int, ...]
    ebm_total_batches: int
    ebm_batch_size: int
    ebm_buffer_capacity: int
    ebm_learning_rates: tuple[float, float]
    sgld_alpha: float
    sgld_sigma: float
    data_jitter: float
    # sweep
    sweep_sgld_steps: tuple[int, ...]
    epsilons_255: tuple[int, ...]
    seeds: tuple[int, ...]
    attack_images: int
    subset_seed: int
    # attack
    pgd_steps: int
    pgd_random_start: bool
    # defense
    defense_trials: int
    defense_steps: int
    # adaptive attack leg
    bpda_enabled: bool
    bpda_epsilon_255: int
    bpda_sgld_steps: tuple[int, ...]
    bpda_trials: int
    bpda_pgd_steps: int

    def __post_init__(self):
        if not self.sweep_sgld_steps:
            raise PlanError("sweep needs at least one SGLD budget")
        if len(set(self.seeds)) != len(self.seeds) or not self.seeds:
            raise PlanError("seeds must be non-empty and distinct")
        if len(set(self.epsilons_255)) != len(self.epsilons_255) or not self.epsilons_255:
            raise PlanError("epsilon grid must be non-empty and distinct")
        if any(e < 0 or e > 255 for e in self.epsilons_255):
            raise PlanError("epsilons are in /255 units within [0, 255]")
        if self.attack_images < 1:
            raise PlanError("attack_images must be >= 1")
        if self.clf_arch not in _CLF_ARCHS:
            raise PlanError(f"classifier arch must be one of {_CLF_ARCHS}")
        if self.ebm_arch not in _EBM_ARCHS:
            raise PlanError(f"energy-model arch must be one of {_EBM_ARCHS}")
        if self.bpda_enabled:
            missing = set(self.bpda_sgld_steps) - set(self.sweep_sgld_steps)
            if missing:
                raise PlanError(
                    f"adaptive-attack budgets {sorted(missing)} not in the sweep list")
            if self.bpda_epsilon_255 not in self.epsilons_255:
                raise PlanError("adaptive-attack epsilon must be on the sweep grid")

    # -- derived configuration ------------------------------------------

    @staticmethod
    def eps_value(eps_255: int) -> float:
        return eps_255 / 255.0

    def load_dataset(self) -> LabeledDataset:
        if self.dataset_kind == "cifar10":
            root = os.environ.get(DATA_DIR_ENV, ".")
            parts = [ingest_cifar10(os.path.join(root, name))
                     for name in self.cifar_train_files]
            tests = [ingest_cifar10(os.path.join(root, name))
                     for name in self.cifar_test_files]
            train_x = np.concatenate([p.train_inputs for p in parts])
            train_y = np.concatenate([p.train_labels for p in parts])
            test_x = (np.concatenate([p.train_inputs for p in tests])
                      if tests else np.zeros((0, train_x.shape[1])))
            test_y = (np.concatenate([p.train_labels for p in tests])
                      if tests else np.zeros(0, dtype=np.int64))
            return LabeledDataset(train_x, train_y, test_x, test_y, n_classes=10)
        return generate_toy_dataset(self.dataset_kind, self.train_per_class,
                                    self.test_per_class, self.dataset_seed)

    def classifier_spec(self, dim: int, n_classes: int):
        if self.clf_arch == "conv-8x8":
            return conv_classifier_spec_8x8()
        if self.clf_arch == "conv-32x32":
            return conv_classifier_spec_32x32()
        return dense_classifier_spec(dim, n_classes, self.clf_hidden)

    def ebm_spec(self, dim: int):
        if self.ebm_arch == "conv-8x8":
            return conv_energy_spec_8x8()
        if self.ebm_arch == "conv-32x32":
            return conv_energy_spec_32x32()
        return dense_energy_spec(dim, self.ebm_hidden)

    def classifier_config(self, dim: int, n_classes: int, seed: int) -> ClfTrainConfig:
        return ClfTrainConfig(
            spec=self.classifier_spec(dim, n_classes),
            epochs=self.clf_epochs,
            batch_size=self.clf_batch_size,
            learning_rates=self.clf_learning_rates,
            switch_epochs=self.clf_switch_epochs,
            l2_coeff=self.clf_l2,
            seed=seed,
        )

    def ebm_config(self, dim: int, n_steps: int, seed: int) -> EbmTrainConfig:
        return EbmTrainConfig(
            spec=self.ebm_spec(dim),
            total_batches=self.ebm_total_batches,
            batch_size=self.ebm_batch_size,
            chain=SgldConfig(n_steps=n_steps, step_size=self.sgld_alpha,
                             noise_scale=self.sgld_sigma),
            learning_rates=self.ebm_learning_rates,
            switch_batch=self.ebm_total_batches // 2,
            buffer_capacity=self.ebm_buffer_capacity,
            data_jitter=self.data_jitter,
            seed=seed,
        )

    def attack_config(self, eps_255: int) -> AttackConfig:
        return AttackConfig(epsilon=self.eps_value(eps_255),
                            n_steps=self.pgd_steps,
                            random_start=self.pgd_random_start)

    def bpda_attack_config(self) -> AttackConfig:
        return AttackConfig(epsilon=self.eps_value(self.bpda_epsilon_255),
                            n_steps=self.bpda_pgd_steps,
                            random_start=self.pgd_random_start)

    def defense_config(self) -> DefenseConfig:
        return DefenseConfig(
            chain=SgldConfig(n_steps=self.defense_steps, step_size=self.sgld_alpha,
                             noise_scale=self.sgld_sigma),
            n_trials=self.defense_trials)

    def purification_chain(self, n_steps: int | None = None) -> SgldConfig:
        return SgldConfig(n_steps=self.defense_steps if n_steps is None else n_steps,
                          step_size=self.sgld_alpha, noise_scale=self.sgld_sigma)


# -- presets -------------------------------------------------------------


def desk_plan() -> ExperimentPlan:
    """Desktop-scale sweep: faint 8x8 digits, small budgets, three seeds."""
    return ExperimentPlan(
        dataset_kind="synthetic-digits-8x8",
        train_per_class=200,
        test_per_class=40,
        dataset_seed=3,
        cifar_train_files=(),
        cifar_test_files=(),
        clf_arch="conv-8x8",
        clf_hidden=(),
        clf_epochs=60,
        clf_batch_size=100,
        clf_learning_rates=(1e-1, 1e-2, 1e-3),
        clf_switch_epochs=(36, 48),
        clf_l2=2e-4,
        ebm_arch="dense",
        ebm_hidden=(128, 64),
        ebm_total_batches=1500,
        ebm_batch_size=100,
        ebm_buffer_capacity=2000,
        ebm_learning_rates=(1e-3, 5e-4),
        sgld_alpha=0.01,
        sgld_sigma=0.01,
        data_jitter=0.005,
        sweep_sgld_steps=(5, 10, 20, 40),
        epsilons_255=(0, 2, 4, 8),
        seeds=(1, 2, 3),
        attack_images=200,
        subset_seed=0,
        pgd_steps=40,
        pgd_random_start=True,
        defense_trials=16,
        defense_steps=100,
        bpda_enabled=True,
        bpda_epsilon_255=8,
        bpda_sgld_steps=(5, 40),
        bpda_trials=8,
        bpda_pgd_steps=40,
    )


def paper_cifar10_plan() -> ExperimentPlan:
    """Full-scale CIFAR-10 sweep at the full training budgets.

    Needs the CIFAR-10 binary batches under $STOCHSEC_DATA_DIR and
    multiple machine-days of compute; kept for fidelity, not for desk
    runs.
    """
    return ExperimentPlan(
        dataset_kind="cifar10",
        train_per_class=0,
        test_per_class=0,
        dataset_seed=0,
        cifar_train_files=tuple(f"data_batch_{i}.bin" for i in range(1, 6)),
        cifar_test_files=("test_batch.bin",),
        clf_arch="conv-32x32",
        clf_hidden=(),
        clf_epochs=100,
        clf_batch_size=100,
        clf_learning_rates=(1e-1, 1e-2, 1e-3),
        clf_switch_epochs=(40, 60),
        clf_l2=2e-4,
        ebm_arch="conv-32x32",
        ebm_hidden=(),
        ebm_total_batches=250_000,
        ebm_batch_size=100,
        ebm_buffer_capacity=10_000,
        ebm_learning_rates=(1e-4, 5e-5),
        sgld_alpha=0.01,
        sgld_sigma=0.01,
        data_jitter=0.005,
        sweep_sgld_steps=(50, 75, 100, 150, 200),
        epsilons_255=tuple(range(12)),
        seeds=(0,),
        attack_images=1000,
        subset_seed=0,
        pgd_steps=40,
        pgd_random_start=True,
        defense_trials=150,
        defense_steps=1500,
        bpda_enabled=True,
        bpda_epsilon_255=8,
        bpda_sgld_steps=(50, 200),
        bpda_trials=8,
        bpda_pgd_steps=40,
    )


PRESETS = {
    "desk": desk_plan,
    "paper-cifar10": paper_cifar10_plan,
}


# -- serialization --------------------------------------------------------

_SECTIONS = {
    "dataset": ("dataset_kind", "train_per_class", "test_per_class",
                "dataset_seed", "cifar_train_files", "cifar_test_files"),
    "classifier": ("clf_arch", "clf_hidden", "clf_epochs", "clf_batch_size",
                   "clf_learning_rates", "clf_switch_epochs", "clf_l2"),
    "ebm": ("ebm_arch", "ebm_hidden", "ebm_total_batches", "ebm_batch_size",
            "ebm_buffer_capacity", "ebm_learning_rates", "sgld_alpha",
            "sgld_sigma", "data_jitter"),
    "sweep": ("sweep_sgld_steps", "epsilons_255", "seeds", "attack_images",
              "subset_seed"),
    "attack": ("pgd_steps", "pgd_random_start"),
    "defense": ("defense_trials", "defense_steps"),
    "bpda": ("bpda_enabled", "bpda_epsilon_255", "bpda_sgld_steps",
             "bpda_trials", "bpda_pgd_steps"),
}

_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentPlan)}


def _encode(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_encode(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _decode(name: str, raw: str):
    kind = _FIELD_TYPES[name]
    raw = raw.strip()
    if kind == "bool":
        if raw.lower() not in ("true", "false"):
            raise PlanError(f"{name}: expected true/false, got {raw!r}")
        return raw.lower() == "true"
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    if kind == "str":
        return raw
    # tuple types
    items = [p.strip() for p in raw.split(",") if p.strip()]
    if kind == "tuple[str, ...]":
        return tuple(items)
    if kind in ("tuple[int, ...]",):
        return tuple(int(p) for p in items)
    if kind in ("tuple[float, ...]", "tuple[float, float]"):
        return tuple(float(p) for p in items)
    raise PlanError(f"unhandled plan field type {kind!r} for {name}")


def plan_to_text(plan: ExperimentPlan) -> str:
    lines = []
    for section, names in _SECTIONS.items():
        lines.append(f"[{section}]")
        for name in names:
            lines.append(f"{name} = {_encode(getattr(plan, name))}")
        lines.append("")
    return "\n".join(lines)


def plan_from_text(text: str) -> ExperimentPlan:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise PlanError(f"malformed plan file: {exc}") from exc
    values = {}
    for section, names in _SECTIONS.items():
        if not parser.has_section(section):
            raise PlanError(f"plan is missing the [{section}] section")
        for name in names:
            if not parser.has_option(section, name):
                raise PlanError(f"plan is missing {name} in [{section}]")
            values[name] = _decode(name, parser.get(section, name))
        extras = set(parser.options(section)) - {n.lower() for n in names}
        if extras:
            raise PlanError(f"unknown keys in [{section}]: {sorted(extras)}")
    return ExperimentPlan(**values)


def save_plan(plan: ExperimentPlan, path) -> None:
    with io.open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(plan_to_text(plan))


def load_plan(path) -> ExperimentPlan:
    with io.open(path, "r", encoding="utf-8") as fh:
        return plan_from_text(fh.read())
