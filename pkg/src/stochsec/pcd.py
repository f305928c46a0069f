"""Persistent-chain training of energy models.

One training batch: sample a data minibatch, draw persistent chain
states from the replay buffer, evolve them with the configured Langevin
chain, apply the contrastive gradient through the optimizer, and write
the evolved states back into their slots.  The optimizer starts as Adam
and switches to plain SGD at a configured batch; the full-scale schedule
runs 250,000 batches with the switch at 125,000.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import NetworkSpec, build_network, make_optimizer, optimizer_step
from .energy import (
    EnergyModel,
    ReplayBuffer,
    SgldConfig,
    contrastive_gradient,
    sgld_chain,
)
from .nets import conv_energy_spec_32x32
from .rng import substream


class TrainingDivergedError(RuntimeError):
    """Data/sample mean-energy gap blew past the guard threshold."""

    def __init__(self, batch: int, gap: float, bound: float):
        super().__init__(
            f"energy gap |{gap:.3e}| exceeded {bound:.1e} at batch {batch}; "
            "the persistent chains have diverged from the model distribution")
        self.batch = batch
        self.gap = gap


@dataclass
class EbmTrainConfig:
    """PCD hyperparameters: schedule, chain, buffer, stabilizers."""

    spec: NetworkSpec
    total_batches: int
    batch_size: int
    chain: SgldConfig
    optimizer_modes: tuple[str, str] = ("adam", "sgd")
    learning_rates: tuple[float, float] = (1e-4, 5e-5)
    switch_batch: int = 0
    buffer_capacity: int = 10_000
    reinit_prob: float = 0.0
    data_jitter: float = 0.005
    divergence_bound: float = 1e3
    beta: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.total_batches < 0:
            raise ValueError("total_batches must be >= 0")
        if not 0 <= self.switch_batch <= self.total_batches:
            raise ValueError("switch_batch must lie within total_batches")
        if self.data_jitter < 0:
            raise ValueError("data_jitter must be >= 0")
        if self.divergence_bound <= 0:
            raise ValueError("divergence_bound must be positive")

    def phase(self, batch: int) -> tuple[str, float]:
        """(optimizer mode, learning rate) in effect at this batch."""
        if batch < self.switch_batch:
            return self.optimizer_modes[0], self.learning_rates[0]
        return self.optimizer_modes[1], self.learning_rates[1]

    @property
    def resolved_beta(self) -> float:
        if self.beta is not None:
            return self.beta
        implied = self.chain.implied_beta
        return implied if np.isfinite(implied) else 1.0


def paper_ebm_config(n_steps: int, seed: int = 0) -> EbmTrainConfig:
    """Full-scale training schedule for one SGLD budget n."""
    if n_steps not in (50, 75, 100, 150, 200):
        raise ValueError("full-scale schedule supports n in {50, 75, 100, 150, 200}")
    return EbmTrainConfig(
        spec=conv_energy_spec_32x32(),
        total_batches=250_000,
        batch_size=100,
        chain=SgldConfig(n_steps=n_steps, step_size=0.01, noise_scale=0.01),
        optimizer_modes=("adam", "sgd"),
        learning_rates=(1e-4, 5e-5),
        switch_batch=125_000,
        buffer_capacity=10_000,
        reinit_prob=0.0,
        data_jitter=0.005,
        seed=seed,
    )


def desk_ebm_config(spec: NetworkSpec, n_steps: int, seed: int = 0,
                    total_batches: int = 1500, batch_size: int = 100,
                    buffer_capacity: int = 2000) -> EbmTrainConfig:
    """Scaled-down schedule with the same Adam-then-SGD shape."""
    return EbmTrainConfig(
        spec=spec,
        total_batches=total_batches,
        batch_size=batch_size,
        chain=SgldConfig(n_steps=n_steps, step_size=0.01, noise_scale=0.01),
        learning_rates=(1e-3, 5e-4),
        switch_batch=total_batches // 2,
        buffer_capacity=buffer_capacity,
        seed=seed,
    )


@dataclass(frozen=True)
class BatchLog:
    batch: int
    data_energy: float
    sample_energy: float
    grad_norm: float
    lr: float
    mode: str


@dataclass
class EbmTrainResult:
    model: EnergyModel
    log: list[BatchLog] = field(default_factory=list)
    jitter_scale: float = 0.0
    buffer: ReplayBuffer | None = None


def train_ebm(cfg: EbmTrainConfig, data: np.ndarray) -> EbmTrainResult:
    """Run the persistent-chain loop and return the model plus its log.

    Deterministic given cfg.seed: initialization, minibatch choice,
    buffer draws, chain noise, and jitter each use a fixed substream
    keyed by batch index.  A learning rate of zero skips the optimizer
    update entirely, leaving parameters bit-identical.
    """
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    if data.shape[0] == 0:
        raise ValueError("training data is empty")
    params = build_network(cfg.spec, substream(cfg.seed, "ebm", "init").integers(2 ** 31))
    model = EnergyModel(spec=cfg.spec, params=params, beta=cfg.resolved_beta)
    if data.min() < model.domain_lo or data.max() > model.domain_hi:
        raise ValueError("training data falls outside the model domain")
    buffer = ReplayBuffer(cfg.buffer_capacity, model.dim,
                          substream(cfg.seed, "ebm", "buffer-init"),
                          domain_lo=model.domain_lo, domain_hi=model.domain_hi,
                          reinit_prob=cfg.reinit_prob)
    log: list[BatchLog] = []
    opt = None
    opt_mode = None

    for batch in range(cfg.total_batches):
        mode, lr = cfg.phase(batch)
        if mode != opt_mode and lr > 0:
            opt = make_optimizer(mode, lr, params)
            opt_mode = mode
        rng_data = substream(cfg.seed, "ebm", "data", batch)
        idx = rng_data.integers(0, data.shape[0], size=cfg.batch_size)
        minibatch = data[idx]
        if cfg.data_jitter > 0:
            jitter = substream(cfg.seed, "ebm", "jitter", batch)
            minibatch = minibatch + cfg.data_jitter * jitter.standard_normal(minibatch.shape)
            minibatch = np.clip(minibatch, model.domain_lo, model.domain_hi)

        slots, states = buffer.draw(cfg.batch_size, substream(cfg.seed, "ebm", "draw", batch))
        evolved = sgld_chain(model, states, cfg.chain,
                             substream(cfg.seed, "ebm", "chain", batch))
        evolved = np.atleast_2d(evolved)

        result = contrastive_gradient(model, minibatch, evolved)
        gap = result.data_energy - result.sample_energy
        if abs(gap) > cfg.divergence_bound:
            raise TrainingDivergedError(batch, gap, cfg.divergence_bound)
        grad_norm = float(np.sqrt(sum(float((g ** 2).sum()) for g in result.grads)))
        if lr > 0:
            opt.learning_rate = lr
            params = optimizer_step(opt, params, result.grads)
            model = EnergyModel(spec=cfg.spec, params=params, beta=cfg.resolved_beta)
        buffer.store_back(slots, evolved)
        log.append(BatchLog(batch=batch, data_energy=result.data_energy,
                            sample_energy=result.sample_energy,
                            grad_norm=grad_norm, lr=lr, mode=mode))
    return EbmTrainResult(model=model, log=log, jitter_scale=cfg.data_jitter,
                          buffer=buffer)
