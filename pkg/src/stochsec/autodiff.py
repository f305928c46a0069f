"""Dense-tensor computation graph with reverse-mode differentiation.

A network is a fixed sequence of layers drawn from a small vocabulary:
dense, 2-D convolution, leaky ReLU, and a per-sample sum reduction.  All
values are float64 numpy arrays with a leading batch axis.  Backward
passes are written by hand per layer and return gradients with respect
to both the input and the parameters; `finite_diff_check` validates them
against central finite differences.

First-order optimizers (plain SGD and Adam with bias correction) live
here too, since they operate directly on the parameter tensor set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class SpecCompositionError(ValueError):
    """Adjacent layer shapes do not compose; carries the offending layer index."""

    def __init__(self, layer_index: int, message: str):
        self.layer_index = layer_index
        super().__init__(f"layer {layer_index}: {message}")


class NonFiniteError(FloatingPointError):
    """A forward or backward pass produced NaN/Inf; carries the layer index."""

    def __init__(self, layer_index: int, message: str = "non-finite values"):
        self.layer_index = layer_index
        super().__init__(f"layer {layer_index}: {message}")


# ---------------------------------------------------------------------------
# layer descriptors


@dataclass(frozen=True)
class Dense:
    in_features: int
    out_features: int


@dataclass(frozen=True)
class Conv2d:
    out_channels: int
    in_channels: int
    kernel_h: int
    kernel_w: int
    stride: int = 1
    padding: int = 0


@dataclass(frozen=True)
class LeakyRelu:
    negative_slope: float = 0.2


@dataclass(frozen=True)
class SqueezeSum:
    """Sum all per-sample entries down to a scalar."""


Layer = Dense | Conv2d | LeakyRelu | SqueezeSum


@dataclass(frozen=True)
class NetworkSpec:
    """Input shape (per sample, no batch axis) plus the ordered layer list."""

    input_shape: tuple[int, ...]
    layers: tuple[Layer, ...]

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))

    @property
    def output_shape(self) -> tuple[int, ...]:
        return layer_shapes(self)[-1]

    @property
    def input_size(self) -> int:
        return int(np.prod(self.input_shape))


def _conv_out_hw(layer: Conv2d, h: int, w: int) -> tuple[int, int]:
    oh = (h + 2 * layer.padding - layer.kernel_h) // layer.stride + 1
    ow = (w + 2 * layer.padding - layer.kernel_w) // layer.stride + 1
    return oh, ow


def layer_shapes(spec: NetworkSpec) -> list[tuple[int, ...]]:
    """Per-sample shapes after each layer, starting with the input shape.

    Raises SpecCompositionError naming the first layer that does not fit.
    """
    shapes = [tuple(spec.input_shape)]
    cur = shapes[0]
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, Dense):
            if int(np.prod(cur)) != layer.in_features:
                raise SpecCompositionError(
                    i, f"dense expects {layer.in_features} inputs, upstream shape {cur} "
                       f"has {int(np.prod(cur))}")
            cur = (layer.out_features,)
        elif isinstance(layer, Conv2d):
            if len(cur) != 3 or cur[0] != layer.in_channels:
                raise SpecCompositionError(
                    i, f"conv2d expects (channels={layer.in_channels}, H, W), got {cur}")
            oh, ow = _conv_out_hw(layer, cur[1], cur[2])
            if oh < 1 or ow < 1:
                raise SpecCompositionError(
                    i, f"conv2d kernel {layer.kernel_h}x{layer.kernel_w} stride "
                       f"{layer.stride} pad {layer.padding} does not fit input {cur}")
            cur = (layer.out_channels, oh, ow)
        elif isinstance(layer, LeakyRelu):
            pass
        elif isinstance(layer, SqueezeSum):
            cur = ()
        else:
            raise SpecCompositionError(i, f"unknown layer type {type(layer).__name__}")
        shapes.append(cur)
    return shapes


def parameter_shapes(spec: NetworkSpec) -> list[tuple[int, ...]]:
    """Shapes of the parameter tensors in network order (weight then bias)."""
    layer_shapes(spec)  # validate composition first
    out = []
    for layer in spec.layers:
        if isinstance(layer, Dense):
            out.append((layer.out_features, layer.in_features))
            out.append((layer.out_features,))
        elif isinstance(layer, Conv2d):
            out.append((layer.out_channels, layer.in_channels, layer.kernel_h, layer.kernel_w))
            out.append((layer.out_channels,))
    return out


def parameter_names(spec: NetworkSpec) -> list[str]:
    names = []
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, (Dense, Conv2d)):
            names.append(f"layer{i}.weight")
            names.append(f"layer{i}.bias")
    return names


def parameter_count(spec: NetworkSpec) -> int:
    return sum(int(np.prod(s)) for s in parameter_shapes(spec))


def build_network(spec: NetworkSpec, seed: int) -> list[np.ndarray]:
    """Initialize parameters with uniform fan-in scaling, deterministic in seed."""
    rng = np.random.default_rng(seed)
    params = []
    for layer in spec.layers:
        if isinstance(layer, Dense):
            bound = 1.0 / math.sqrt(layer.in_features)
            params.append(rng.uniform(-bound, bound, size=(layer.out_features, layer.in_features)))
            params.append(rng.uniform(-bound, bound, size=(layer.out_features,)))
        elif isinstance(layer, Conv2d):
            fan_in = layer.in_channels * layer.kernel_h * layer.kernel_w
            bound = 1.0 / math.sqrt(fan_in)
            params.append(rng.uniform(
                -bound, bound,
                size=(layer.out_channels, layer.in_channels, layer.kernel_h, layer.kernel_w)))
            params.append(rng.uniform(-bound, bound, size=(layer.out_channels,)))
    layer_shapes(spec)  # validate after drawing so determinism is over the full spec
    return params


# ---------------------------------------------------------------------------
# forward / backward


def _conv_cols(x: np.ndarray, layer: Conv2d) -> np.ndarray:
    """im2col: (B, C, H, W) -> (B, OH, OW, C, kh, kw) view-backed patch tensor."""
    if layer.padding:
        x = np.pad(x, ((0, 0), (0, 0), (layer.padding,) * 2, (layer.padding,) * 2))
    win = sliding_window_view(x, (layer.kernel_h, layer.kernel_w), axis=(2, 3))
    return win[:, :, ::layer.stride, ::layer.stride].transpose(0, 2, 3, 1, 4, 5)


def _forward_layer(layer: Layer, params: list[np.ndarray], pi: int, x: np.ndarray):
    """Returns (y, cache, next param index)."""
    if isinstance(layer, Dense):
        w, b = params[pi], params[pi + 1]
        x2 = x.reshape(x.shape[0], -1)
        return x2 @ w.T + b, (x2, x.shape), pi + 2
    if isinstance(layer, Conv2d):
        w, b = params[pi], params[pi + 1]
        cols = _conv_cols(x, layer)          # (B, OH, OW, C, kh, kw)
        b_, oh, ow = cols.shape[0], cols.shape[1], cols.shape[2]
        flat = cols.reshape(b_, oh * ow, -1)
        wmat = w.reshape(w.shape[0], -1)
        y = flat @ wmat.T + b                # (B, OH*OW, out_ch)
        y = y.transpose(0, 2, 1).reshape(b_, w.shape[0], oh, ow)
        return y, (flat, x.shape, oh, ow), pi + 2
    if isinstance(layer, LeakyRelu):
        pos = x >= 0.0
        return np.where(pos, x, layer.negative_slope * x), pos, pi
    if isinstance(layer, SqueezeSum):
        return x.reshape(x.shape[0], -1).sum(axis=1), x.shape, pi
    raise TypeError(f"unknown layer {layer!r}")


def _backward_layer(layer: Layer, params: list[np.ndarray], pi: int, cache, dy: np.ndarray):
    """Returns (dx, [param grads in layer order])."""
    if isinstance(layer, Dense):
        w = params[pi]
        x2, x_shape = cache
        dw = dy.T @ x2
        db = dy.sum(axis=0)
        dx = (dy @ w).reshape(x_shape)
        return dx, [dw, db]
    if isinstance(layer, Conv2d):
        w = params[pi]
        flat, x_shape, oh, ow = cache
        b_ = flat.shape[0]
        dyf = dy.reshape(b_, w.shape[0], oh * ow).transpose(0, 2, 1)  # (B, L, out_ch)
        wmat = w.reshape(w.shape[0], -1)
        dw = np.einsum("blo,blk->ok", dyf, flat).reshape(w.shape)
        db = dyf.sum(axis=(0, 1))
        dcols = (dyf @ wmat).reshape(b_, oh, ow, layer.in_channels,
                                     layer.kernel_h, layer.kernel_w)
        dcols = dcols.transpose(0, 3, 1, 2, 4, 5)  # (B, C, OH, OW, kh, kw)
        hp = x_shape[2] + 2 * layer.padding
        wp = x_shape[3] + 2 * layer.padding
        dxp = np.zeros((b_, layer.in_channels, hp, wp))
        s = layer.stride
        for i in range(layer.kernel_h):
            for j in range(layer.kernel_w):
                dxp[:, :, i:i + s * oh:s, j:j + s * ow:s] += dcols[:, :, :, :, i, j]
        p = layer.padding
        dx = dxp[:, :, p:hp - p, p:wp - p] if p else dxp
        return dx, [dw, db]
    if isinstance(layer, LeakyRelu):
        pos = cache
        return dy * np.where(pos, 1.0, layer.negative_slope), []
    if isinstance(layer, SqueezeSum):
        x_shape = cache
        return np.broadcast_to(dy.reshape(-1, *([1] * (len(x_shape) - 1))), x_shape).copy(), []
    raise TypeError(f"unknown layer {layer!r}")


def _as_batch(x: np.ndarray, spec: NetworkSpec) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.shape == spec.input_shape:
        return x[None, ...], True
    if x.shape[1:] == spec.input_shape:
        return x, False
    # flat inputs are accepted whenever the per-sample size matches
    if x.ndim == 1 and x.size == spec.input_size:
        return x.reshape(1, *spec.input_shape), True
    if x.ndim == 2 and x.shape[1] == spec.input_size:
        return x.reshape(x.shape[0], *spec.input_shape), False
    raise ValueError(f"input shape {x.shape} does not match spec input {spec.input_shape}")


def forward(spec: NetworkSpec, params: list[np.ndarray], x: np.ndarray,
            keep_caches: bool = False, check_finite: bool = True):
    """Run the network on a batch; returns (y, caches, leaky masks)."""
    xb, _ = _as_batch(x, spec)
    caches, masks = [], []
    pi = 0
    cur = xb
    for i, layer in enumerate(spec.layers):
        cur, cache, pi = _forward_layer(layer, params, pi, cur)
        if check_finite and not np.isfinite(cur).all():
            raise NonFiniteError(i)
        if keep_caches:
            caches.append(cache)
        if isinstance(layer, LeakyRelu):
            masks.append(cache)
    return cur, caches, masks


def forward_backward(spec: NetworkSpec, params: list[np.ndarray], x: np.ndarray,
                     cotangent: np.ndarray | None = None):
    """Value plus gradients of a scalar contraction of the output.

    For per-sample scalar outputs the cotangent defaults to ones, so
    `grad_x` rows are the per-sample output gradients and `grad_params`
    is the sum of per-sample parameter gradients.  Vector outputs (e.g.
    classifier logits) require an explicit cotangent of matching shape.
    """
    xb, single = _as_batch(x, spec)
    y, caches, _ = forward(spec, params, xb, keep_caches=True)
    if cotangent is None:
        if y.ndim != 1:
            raise ValueError("vector-valued network output requires an explicit cotangent")
        dy = np.ones_like(y)
    else:
        dy = np.asarray(cotangent, dtype=np.float64)
        if single and dy.shape == y.shape[1:]:
            dy = dy[None, ...]
        if dy.shape != y.shape:
            raise ValueError(f"cotangent shape {dy.shape} does not match output {y.shape}")

    param_offsets = []
    pi = 0
    for layer in spec.layers:
        param_offsets.append(pi)
        if isinstance(layer, (Dense, Conv2d)):
            pi += 2
    grad_params = [np.zeros_like(p) for p in params]
    cur = dy
    for i in range(len(spec.layers) - 1, -1, -1):
        cur, pgrads = _backward_layer(spec.layers[i], params, param_offsets[i], caches[i], cur)
        if not np.isfinite(cur).all():
            raise NonFiniteError(i, "non-finite gradient")
        for k, g in enumerate(pgrads):
            grad_params[param_offsets[i] + k] = g

    if single:
        return y[0], cur[0], grad_params
    return y, cur, grad_params


# ---------------------------------------------------------------------------
# finite-difference oracle


@dataclass
class FiniteDiffReport:
    max_rel_error: float
    n_checked: int
    n_excluded: int


def finite_diff_check(spec: NetworkSpec, params: list[np.ndarray], x: np.ndarray,
                      h: float = 1e-5, cotangent: np.ndarray | None = None) -> FiniteDiffReport:
    """Compare reverse-mode gradients with central finite differences.

    The scalar under test is cotangent . output (cotangent of ones for
    scalar outputs).  A coordinate is excluded as non-comparable when
    the +h and -h evaluations disagree on any leaky ReLU activation
    sign, i.e. the perturbation straddles a kink.  Returns the max of
    |analytic - central| / (|analytic| + h) over comparable coordinates.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    xb, _ = _as_batch(x, spec)

    def value_and_masks(params_eval, x_eval):
        y, _, masks = forward(spec, params_eval, x_eval)
        if cotangent is None:
            val = float(y.sum())
        else:
            val = float((y * np.asarray(cotangent)).sum())
        return val, masks

    _, grad_x, grad_params = forward_backward(spec, params, xb, cotangent)

    max_err = 0.0
    checked = excluded = 0

    def probe(analytic_flat, get_value, n_coords):
        nonlocal max_err, checked, excluded
        for j in range(n_coords):
            vp, mp = get_value(j, +h)
            vm, mm = get_value(j, -h)
            if any((a != b).any() for a, b in zip(mp, mm)):
                excluded += 1
                continue
            num = (vp - vm) / (2.0 * h)
            err = abs(analytic_flat[j] - num) / (abs(analytic_flat[j]) + h)
            max_err = max(max_err, err)
            checked += 1

    flat_x = xb.reshape(-1)

    def x_value(j, delta):
        pert = flat_x.copy()
        pert[j] += delta
        return value_and_masks(params, pert.reshape(xb.shape))

    probe(grad_x.reshape(-1), x_value, flat_x.size)

    for pidx, p in enumerate(params):
        flat_p = p.reshape(-1)
        ga = grad_params[pidx].reshape(-1)

        def p_value(j, delta, pidx=pidx, flat_p=flat_p, p=p):
            pert = flat_p.copy()
            pert[j] += delta
            trial = list(params)
            trial[pidx] = pert.reshape(p.shape)
            return value_and_masks(trial, xb)

        probe(ga, p_value, flat_p.size)

    return FiniteDiffReport(max_err, checked, excluded)


# ---------------------------------------------------------------------------
# optimizers


@dataclass
class OptimizerState:
    """First-order optimizer: plain SGD or Adam with bias-corrected moments."""

    mode: str
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.mode not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer mode {self.mode!r}")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")


def make_optimizer(mode: str, learning_rate: float,
                   params: list[np.ndarray]) -> OptimizerState:
    state = OptimizerState(mode=mode, learning_rate=learning_rate)
    if mode == "adam":
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    return state


def optimizer_step(state: OptimizerState, params: list[np.ndarray],
                   grads: list[np.ndarray], l2_coeff: float = 0.0) -> list[np.ndarray]:
    """One update; returns new parameter list, mutates the optimizer state."""
    if state.learning_rate <= 0:
        raise ValueError("learning rate must be positive")
    if len(params) != len(grads):
        raise ValueError("parameter/gradient count mismatch")
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ValueError(f"gradient {i} shape {g.shape} != parameter shape {p.shape}")
        if not np.isfinite(g).all():
            raise ValueError(f"non-finite gradient at tensor {i}")

    lr = state.learning_rate
    state.step += 1
    out = []
    if state.mode == "sgd":
        for p, g in zip(params, grads):
            out.append(p - lr * (g + l2_coeff * p))
        return out

    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        g = g + l2_coeff * p
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        m_hat = state.m[i] / bc1
        v_hat = state.v[i] / bc2
        out.append(p - lr * m_hat / (np.sqrt(v_hat) + state.eps))
    return out
