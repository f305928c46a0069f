"""Discriminative model: softmax classifier trained with SGD + cross-entropy.

Independent from the energy models; exposes logits f(x) for the attack
and defense pipelines.  The full-scale preset trains for 100 epochs with
learning rates 1e-1/1e-2/1e-3 switching at epochs 40 and 60 and L2
coefficient 2e-4; desk presets scale the same shape down.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass

import numpy as np

from .autodiff import (
    NetworkSpec,
    build_network,
    forward,
    forward_backward,
    make_optimizer,
    optimizer_step,
)
from .data import LabeledDataset
from .nets import conv_classifier_spec_32x32, conv_classifier_spec_8x8
from .rng import stream_seed, substream


@dataclass(frozen=True)
class ClassifierModel:
    """Network plus parameters mapping inputs to |Y| logits."""

    spec: NetworkSpec
    params: list
    n_classes: int

    def __post_init__(self):
        if self.spec.output_shape != (self.n_classes,):
            raise ValueError(
                f"network emits {self.spec.output_shape}, expected ({self.n_classes},)")


def softmax(logits: np.ndarray) -> np.ndarray:
    """Rows sum to 1 within 1e-12; shift-invariant by construction."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def predict(model: ClassifierModel, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Logits and softmax likelihoods for a (B, d) batch."""
    y, _, _ = forward(model.spec, model.params, np.atleast_2d(x))
    if not np.isfinite(y).all():
        raise ValueError("classifier produced non-finite logits")
    return y, softmax(y)


def predicted_labels(model: ClassifierModel, x: np.ndarray) -> np.ndarray:
    logits, _ = predict(model, x)
    return np.argmax(logits, axis=1)


def accuracy(model: ClassifierModel, x: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(predicted_labels(model, x) == np.asarray(y)))


def cross_entropy_input_grad(model: ClassifierModel, x: np.ndarray,
                             y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample loss -log p_y and its gradient w.r.t. each input.

    The loss cotangent at the logits is softmax(f(x)) - onehot(y), so one
    reverse pass gives every row's input gradient at once.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.int64)
    logits, _, _ = forward(model.spec, model.params, x)
    probs = softmax(logits)
    losses = -np.log(np.clip(probs[np.arange(len(y)), y], 1e-300, None))
    cotangent = probs.copy()
    cotangent[np.arange(len(y)), y] -= 1.0
    _, grad_x, _ = forward_backward(model.spec, model.params, x, cotangent=cotangent)
    return losses, grad_x.reshape(x.shape)


@dataclass
class ClfTrainConfig:
    """SGD schedule for cross-entropy training."""

    spec: NetworkSpec
    epochs: int
    batch_size: int
    learning_rates: tuple[float, ...] = (1e-1, 1e-2, 1e-3)
    switch_epochs: tuple[int, ...] = (40, 60)
    l2_coeff: float = 2e-4
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if len(self.learning_rates) != len(self.switch_epochs) + 1:
            raise ValueError("need one learning rate per schedule segment")
        if list(self.switch_epochs) != sorted(self.switch_epochs):
            raise ValueError("switch epochs must be increasing")

    def learning_rate(self, epoch: int) -> float:
        return self.learning_rates[bisect_right(self.switch_epochs, epoch)]


def paper_classifier_config(seed: int = 0) -> ClfTrainConfig:
    """Full-scale schedule: 100 epochs, batch 100, lr steps at 40 and 60."""
    return ClfTrainConfig(spec=conv_classifier_spec_32x32(), epochs=100,
                          batch_size=100, learning_rates=(1e-1, 1e-2, 1e-3),
                          switch_epochs=(40, 60), l2_coeff=2e-4, seed=seed)


def desk_classifier_config(spec: NetworkSpec | None = None, seed: int = 0,
                           epochs: int = 30) -> ClfTrainConfig:
    """Scaled-down schedule with the same three-segment lr shape."""
    spec = spec if spec is not None else conv_classifier_spec_8x8()
    switches = (max(1, int(epochs * 0.4)), max(2, int(epochs * 0.6)))
    return ClfTrainConfig(spec=spec, epochs=epochs, batch_size=100,
                          learning_rates=(1e-1, 1e-2, 1e-3),
                          switch_epochs=switches, l2_coeff=2e-4, seed=seed)


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    train_acc: float
    test_acc: float
    lr: float


def train_classifier(cfg: ClfTrainConfig,
                     dataset: LabeledDataset) -> tuple[ClassifierModel, list[EpochLog]]:
    """Minibatch SGD on softmax cross-entropy with L2 weight decay.

    Deterministic given cfg.seed: initialization and every epoch's
    shuffle come from fixed substreams.  Zero epochs returns the
    untrained initialization unchanged.
    """
    x_train = dataset.train_inputs
    y_train = dataset.train_labels
    present = np.unique(y_train)
    missing = sorted(set(range(dataset.n_classes)) - set(present.tolist()))
    if missing:
        raise ValueError(f"training split has no samples for classes {missing}")

    params = build_network(cfg.spec, stream_seed(cfg.seed, "clf", "init"))
    model = ClassifierModel(cfg.spec, params, dataset.n_classes)
    opt = make_optimizer("sgd", cfg.learning_rate(0) if cfg.epochs else 1.0, params)
    log: list[EpochLog] = []

    n = len(y_train)
    for epoch in range(cfg.epochs):
        lr = cfg.learning_rate(epoch)
        opt.learning_rate = lr
        order = substream(cfg.seed, "clf", "shuffle", epoch).permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb, yb = x_train[idx], y_train[idx]
            logits, _, _ = forward(cfg.spec, params, xb)
            probs = softmax(logits)
            cot = probs
            cot[np.arange(len(yb)), yb] -= 1.0
            cot /= len(yb)
            _, _, grads = forward_backward(cfg.spec, params, xb, cotangent=cot)
            params = optimizer_step(opt, params, grads, l2_coeff=cfg.l2_coeff)
        model = ClassifierModel(cfg.spec, params, dataset.n_classes)
        log.append(EpochLog(
            epoch=epoch,
            train_acc=accuracy(model, x_train, y_train),
            test_acc=(accuracy(model, dataset.test_inputs, dataset.test_labels)
                      if len(dataset.test_labels) else float("nan")),
            lr=lr,
        ))
    return model, log
