"""Energy-based model semantics and Langevin (SGLD) chain simulation.

The model density is the Gibbs distribution exp(-beta * E(x)) / Z over a
box domain.  Chains follow the Euler-Maruyama discretization

    x_{i+1} = x_i - alpha * grad E(x_i) + eps_i,   eps_i ~ N(0, sigma^2)

which at stationarity samples the Gibbs density at inverse temperature
beta = 2 * alpha / sigma^2.  A persistent replay buffer supplies chain
initial states during contrastive-divergence training.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import NetworkSpec, build_network, forward, forward_backward


class ChainDivergedError(RuntimeError):
    """Non-finite energy gradient during a chain; carries the step index."""

    def __init__(self, step: int):
        self.step = step
        super().__init__(f"non-finite energy gradient at SGLD step {step}")


@dataclass
class SgldConfig:
    """Discretization of the overdamped Langevin dynamics.

    `n_steps` may be zero (identity transformation, used by defenses).
    With sigma = 0 the chain is exact gradient descent on the energy.
    """

    n_steps: int
    step_size: float
    noise_scale: float
    clamp: bool = True

    def __post_init__(self):
        if self.n_steps < 0:
            raise ValueError("n_steps must be >= 0")
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be >= 0")

    @property
    def implied_beta(self) -> float:
        """Inverse temperature 2*alpha/sigma^2 the chain equilibrates to."""
        if self.noise_scale == 0:
            return math.inf
        return 2.0 * self.step_size / self.noise_scale ** 2


@dataclass
class EnergyModel:
    """Network-parameterized scalar potential over a box domain."""

    spec: NetworkSpec
    params: list[np.ndarray]
    beta: float = 1.0
    domain_lo: float = 0.0
    domain_hi: float = 1.0

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if not self.domain_lo < self.domain_hi:
            raise ValueError("domain bounds must satisfy lo < hi")
        if self.spec.output_shape != ():
            raise ValueError("energy network must have scalar per-sample output")

    @property
    def dim(self) -> int:
        return self.spec.input_size

    def energy(self, x: np.ndarray) -> np.ndarray:
        """Per-sample energies for a (B, d) batch."""
        y, _, _ = forward(self.spec, self.params, np.atleast_2d(x))
        return y

    def gradient(self, x: np.ndarray) -> np.ndarray:
        """Per-sample energy gradients, shape matching the (B, d) input."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        _, gx, _ = forward_backward(self.spec, self.params, x)
        return gx.reshape(x.shape)

    def energy_and_param_grad(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Per-sample energies and the batch-mean parameter gradient."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        y, _, gp = forward_backward(self.spec, self.params, x,
                                    cotangent=np.full(x.shape[0], 1.0 / x.shape[0]))
        energies, _, _ = forward(self.spec, self.params, x)
        return energies, gp


def make_energy_model(spec: NetworkSpec, seed: int, beta: float = 1.0,
                      domain_lo: float = 0.0, domain_hi: float = 1.0) -> EnergyModel:
    return EnergyModel(spec=spec, params=build_network(spec, seed), beta=beta,
                       domain_lo=domain_lo, domain_hi=domain_hi)


@dataclass
class AnalyticEnergy:
    """Closed-form potential with an explicit gradient, for oracles and
    the Fokker-Planck validation bridge."""

    energy_fn: object                      # (B, d) -> (B,)
    grad_fn: object                        # (B, d) -> (B, d)
    dim: int
    beta: float = 1.0
    domain_lo: float = 0.0
    domain_hi: float = 1.0

    def energy(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self.energy_fn(np.atleast_2d(x)), dtype=np.float64)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return np.asarray(self.grad_fn(x), dtype=np.float64).reshape(x.shape)


def sgld_chain(model, x0: np.ndarray, cfg: SgldConfig, rng: np.random.Generator,
               record_trajectory: bool = False) -> np.ndarray | tuple:
    """Evolve chains from x0 (one row per chain) for cfg.n_steps.

    With sigma = 0 no random numbers are drawn, so the chain reduces to
    plain gradient descent step by step.  With clamp, every iterate is
    projected back into the model's box domain.  Deterministic given the
    generator state.
    """
    x = np.array(np.atleast_2d(x0), dtype=np.float64)
    traj = [x.copy()] if record_trajectory else None
    alpha, sigma = cfg.step_size, cfg.noise_scale
    for step in range(cfg.n_steps):
        g = model.gradient(x)
        if not np.isfinite(g).all():
            raise ChainDivergedError(step)
        x = x - alpha * g
        if sigma > 0:
            x += sigma * rng.standard_normal(x.shape)
        if cfg.clamp:
            np.clip(x, model.domain_lo, model.domain_hi, out=x)
        if record_trajectory:
            traj.append(x.copy())
    if np.asarray(x0).ndim == 1:
        x = x[0]
    if record_trajectory:
        return x, traj
    return x


class ReplayBuffer:
    """Fixed-capacity store of persistent chain states.

    Initialized uniformly over the domain.  `draw` samples slots without
    replacement and independently re-initializes each drawn state with
    probability `reinit_prob` (0 by default: chains persist for the
    whole training run).  `store_back` writes evolved states into the
    slots they came from.
    """

    def __init__(self, capacity: int, dim: int, rng: np.random.Generator,
                 domain_lo: float = 0.0, domain_hi: float = 1.0,
                 reinit_prob: float = 0.0):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        if not 0.0 <= reinit_prob <= 1.0:
            raise ValueError("reinit_prob must lie in [0, 1]")
        self.capacity = capacity
        self.dim = dim
        self.domain_lo = domain_lo
        self.domain_hi = domain_hi
        self.reinit_prob = reinit_prob
        self.samples = rng.uniform(domain_lo, domain_hi, size=(capacity, dim))
        self.reinit_count = 0
        self.write_counts = np.zeros(capacity, dtype=np.int64)

    def draw(self, batch_size: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        if batch_size > self.capacity:
            raise ValueError(f"batch_size {batch_size} exceeds capacity {self.capacity}")
        idx = rng.choice(self.capacity, size=batch_size, replace=False)
        states = self.samples[idx].copy()
        if self.reinit_prob > 0:
            mask = rng.random(batch_size) < self.reinit_prob
            n_new = int(mask.sum())
            if n_new:
                states[mask] = rng.uniform(self.domain_lo, self.domain_hi,
                                           size=(n_new, self.dim))
                self.reinit_count += n_new
        return idx, states

    def store_back(self, indices: np.ndarray, states: np.ndarray) -> None:
        states = np.asarray(states, dtype=np.float64)
        if states.shape != (len(indices), self.dim):
            raise ValueError("stored states do not match drawn indices")
        self.samples[indices] = states
        self.write_counts[indices] += 1


@dataclass
class ContrastiveGrad:
    """Parameter gradient of the contrastive objective plus diagnostics."""

    grads: list[np.ndarray]
    data_energy: float
    sample_energy: float


def contrastive_gradient(model: EnergyModel, data_batch: np.ndarray,
                         sample_batch: np.ndarray) -> ContrastiveGrad:
    """beta * (mean grad_theta E over data - mean grad_theta E over samples).

    This is the descent direction for maximum-likelihood training: it
    lowers the energy of data and raises the energy of model samples.
    """
    data_batch = np.atleast_2d(data_batch)
    sample_batch = np.atleast_2d(sample_batch)
    if data_batch.shape[0] == 0 or sample_batch.shape[0] == 0:
        raise ValueError("batches must be non-empty")
    if data_batch.shape[1:] != sample_batch.shape[1:]:
        raise ValueError("data and sample batches must share dimensionality")

    e_data, g_data = model.energy_and_param_grad(data_batch)
    e_samp, g_samp = model.energy_and_param_grad(sample_batch)
    for tag, e in (("data", e_data), ("sample", e_samp)):
        bad = np.flatnonzero(~np.isfinite(e))
        if bad.size:
            raise ValueError(f"non-finite energy for {tag} batch elements {bad.tolist()}")
    grads = [model.beta * (gd - gs) for gd, gs in zip(g_data, g_samp)]
    return ContrastiveGrad(grads=grads, data_energy=float(e_data.mean()),
                           sample_energy=float(e_samp.mean()))


@dataclass
class Partition:
    z: float
    density: np.ndarray        # normalized density values on the lattice
    points: list[np.ndarray]   # per-axis coordinates
    weights: np.ndarray        # trapezoid quadrature weights, same shape as density


def brute_force_partition(model, resolution: int) -> Partition:
    """Trapezoidal quadrature of exp(-beta*E) over the domain box.

    Oracle-grade only: rejects dimension > 2.  The returned density
    satisfies sum(density * weights) == 1 by construction.
    """
    dim = model.dim
    if dim > 2:
        raise ValueError("brute-force partition limited to dimension <= 2")
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    axes = [np.linspace(model.domain_lo, model.domain_hi, resolution) for _ in range(dim)]
    h = (model.domain_hi - model.domain_lo) / (resolution - 1)
    w1 = np.full(resolution, h)
    w1[0] = w1[-1] = h / 2.0
    if dim == 1:
        pts = axes[0][:, None]
        weights = w1
    else:
        gx, gy = np.meshgrid(axes[0], axes[1], indexing="ij")
        pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
        weights = np.outer(w1, w1)
    energies = model.energy(pts).reshape(weights.shape)
    boltz = np.exp(-model.beta * energies)
    z = float((boltz * weights).sum())
    return Partition(z=z, density=boltz / z, points=axes, weights=weights)
