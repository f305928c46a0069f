"""Stochastic purification defense: Langevin transformation + EOT voting.

An attacked image is passed through a short Langevin chain under a
trained energy model ("purification"), several independent trials are
classified, and the logits are averaged before the argmax.  Averaging
uses exact compensated summation so the result is bit-identical under
any reordering of the trials.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import forward
from .classifier import ClassifierModel
from .energy import SgldConfig, sgld_chain


class DefenseTrialError(RuntimeError):
    """A purification trial failed; reports which one."""

    def __init__(self, trial: int, cause: Exception):
        super().__init__(f"purification trial {trial} failed: {cause}")
        self.trial = trial


@dataclass(frozen=True)
class DefenseConfig:
    """Expectation-over-transformation voting parameters."""

    chain: SgldConfig
    n_trials: int

    def __post_init__(self):
        if self.n_trials < 1:
            raise ValueError("need at least one trial")

    @property
    def langevin_steps(self) -> int:
        return self.chain.n_steps


def paper_defense_config() -> DefenseConfig:
    """Full-scale settings: 150 trials of 1500 Langevin steps at alpha=sigma=0.01."""
    return DefenseConfig(
        chain=SgldConfig(n_steps=1500, step_size=0.01, noise_scale=0.01),
        n_trials=150)


def purify(ebm, x: np.ndarray, chain: SgldConfig, rng: np.random.Generator) -> np.ndarray:
    """One stochastic transformation T(x): a seeded Langevin chain."""
    return sgld_chain(ebm, x, chain, rng)


def eot_defend(ebm, model: ClassifierModel, x: np.ndarray, cfg: DefenseConfig,
               rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Averaged logits over purification trials and the resulting labels.

    Trials run on independent child streams of `rng`, so trial ordering
    never affects which noise each trial sees; the mean itself is an
    exactly-rounded sum, making the output invariant to trial order.
    Returns (averaged logits (B, K), labels (B,)).
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    streams = rng.spawn(cfg.n_trials)
    per_trial = []
    for trial, stream in enumerate(streams):
        try:
            purified = np.atleast_2d(purify(ebm, x, cfg.chain, stream))
            logits, _, _ = forward(model.spec, model.params, purified)
        except Exception as exc:
            raise DefenseTrialError(trial, exc) from exc
        per_trial.append(logits)
    averaged = average_logits(per_trial)
    return averaged, np.argmax(averaged, axis=1)


def average_logits(per_trial: list[np.ndarray]) -> np.ndarray:
    """Arithmetic mean over trials, bit-identical under trial reordering."""
    stack = np.stack(per_trial)
    m, batch, classes = stack.shape
    out = np.empty((batch, classes))
    for b in range(batch):
        for k in range(classes):
            out[b, k] = math.fsum(stack[:, b, k]) / m
    return out
