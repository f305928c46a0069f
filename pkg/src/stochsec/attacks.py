"""L-infinity PGD attacks, including the adaptive BPDA+EOT variant.

The threat model: perturbations confined to S = {x : ||x - x_plus||_inf
<= eps} intersected with the pixel box [0,1]^d.  Every emitted iterate
is projected back into S, and outputs are audited against S membership
exactly.  The adaptive attack differentiates through the stochastic
purification by treating it as the identity on the backward pass (BPDA)
while averaging gradients over purification draws (EOT).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import forward, forward_backward
from .classifier import ClassifierModel, softmax
from .energy import SgldConfig, sgld_chain


class AttackDivergedError(RuntimeError):
    """Non-finite attack gradient; reports the PGD iterate index."""

    def __init__(self, iterate: int):
        super().__init__(f"non-finite attack gradient at PGD iterate {iterate}")
        self.iterate = iterate


@dataclass(frozen=True)
class AttackConfig:
    """PGD hyperparameters for one attack strength."""

    epsilon: float
    step_size: float | None = None
    n_steps: int = 40
    random_start: bool = True

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1] (pixel scale)")
        if self.n_steps <= 0:
            raise ValueError("n_steps must be positive")
        if self.step_size is not None:
            if self.step_size <= 0:
                raise ValueError("step_size must be positive")
            if self.epsilon > 0 and self.step_size > 2 * self.epsilon:
                raise ValueError("step_size must not exceed 2*epsilon")

    @property
    def step(self) -> float:
        """Per-iterate step; default 2.5*eps/n_steps crosses the ball."""
        if self.step_size is not None:
            return self.step_size
        return 2.5 * self.epsilon / self.n_steps


def project_to_ball(x: np.ndarray, center: np.ndarray, epsilon: float) -> np.ndarray:
    """Project onto the eps-ball around center intersected with [0,1]^d.

    The result satisfies |proj - center| <= epsilon exactly in floating
    point: rounding in center +/- epsilon can overshoot the ball by an
    ulp, so offending components are nudged back toward the center until
    the audited inequality holds.
    """
    proj = np.clip(np.clip(x, center - epsilon, center + epsilon), 0.0, 1.0)
    center = np.broadcast_to(center, proj.shape)
    while True:
        overshoot = np.abs(proj - center) > epsilon
        if not overshoot.any():
            return proj
        proj = np.where(overshoot, np.nextafter(proj, center), proj)


def in_threat_set(x: np.ndarray, center: np.ndarray, epsilon: float) -> bool:
    """Exact S-membership audit."""
    x = np.asarray(x)
    if x.min() < 0.0 or x.max() > 1.0:
        return False
    return bool(np.abs(x - center).max() <= epsilon)


def _loss_cotangent(logits: np.ndarray, y: np.ndarray) -> np.ndarray:
    probs = softmax(logits)
    cot = probs.copy()
    cot[np.arange(len(y)), y] -= 1.0
    return cot


def pgd_attack(model: ClassifierModel, x_plus: np.ndarray, y: np.ndarray,
               cfg: AttackConfig, rng: np.random.Generator) -> np.ndarray:
    """Iterated signed-gradient ascent on cross-entropy, projected onto S.

    Operates on a whole (B, d) batch at once.  With epsilon == 0 the
    threat set is {x_plus} and the input is returned unchanged.
    """
    x_plus = np.atleast_2d(np.asarray(x_plus, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if cfg.epsilon == 0.0:
        return x_plus.copy()
    x = x_plus.copy()
    if cfg.random_start:
        x = project_to_ball(
            x + rng.uniform(-cfg.epsilon, cfg.epsilon, x.shape), x_plus, cfg.epsilon)
    for iterate in range(cfg.n_steps):
        logits, _, _ = forward(model.spec, model.params, x)
        cot = _loss_cotangent(logits, y)
        _, grad, _ = forward_backward(model.spec, model.params, x, cotangent=cot)
        grad = grad.reshape(x.shape)
        if not np.isfinite(grad).all():
            raise AttackDivergedError(iterate)
        x = project_to_ball(x + cfg.step * np.sign(grad), x_plus, cfg.epsilon)
    return x


def bpda_eot_attack(ebm, model: ClassifierModel, x_plus: np.ndarray, y: np.ndarray,
                    cfg: AttackConfig, defense_chain: SgldConfig, n_trials: int,
                    rng: np.random.Generator, gradient_at: str = "purified") -> np.ndarray:
    """PGD through the stochastic purification defense.

    Each iterate draws n_trials purified samples x_hat_i from the current
    point, forms the shared loss L(mean_i f(x_hat_i), y), and averages the
    per-draw input gradients; the purification itself is treated as the
    identity on the backward pass, so the averaged gradient applies to x
    directly.  `gradient_at` selects where the classifier Jacobian is
    evaluated: at the purified draws ("purified", the literal reading) or
    at the attacked point itself ("source", ablation).
    """
    if gradient_at not in ("purified", "source"):
        raise ValueError("gradient_at must be 'purified' or 'source'")
    if n_trials < 1:
        raise ValueError("need at least one purification trial")
    x_plus = np.atleast_2d(np.asarray(x_plus, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if cfg.epsilon == 0.0:
        return x_plus.copy()
    batch = x_plus.shape[0]
    x = x_plus.copy()
    if cfg.random_start:
        x = project_to_ball(
            x + rng.uniform(-cfg.epsilon, cfg.epsilon, x.shape), x_plus, cfg.epsilon)
    for iterate in range(cfg.n_steps):
        draws = [np.atleast_2d(sgld_chain(ebm, x, defense_chain, rng))
                 for _ in range(n_trials)]
        logit_stack = []
        for sample in draws:
            logits, _, _ = forward(model.spec, model.params, sample)
            logit_stack.append(logits)
        mean_logits = np.mean(logit_stack, axis=0)
        cot = _loss_cotangent(mean_logits, y)
        grad = np.zeros_like(x)
        for sample in draws:
            where = sample if gradient_at == "purified" else x
            _, gx, _ = forward_backward(model.spec, model.params, where, cotangent=cot)
            grad += gx.reshape(x.shape)
        grad /= n_trials
        if not np.isfinite(grad).all():
            raise AttackDivergedError(iterate)
        x = project_to_ball(x + cfg.step * np.sign(grad), x_plus, cfg.epsilon)
    if x_plus.shape[0] != batch:
        raise AssertionError("batch size changed during attack")
    return x
