"""Network architectures used across the experiments.

The full-scale energy architecture is the five-block conv stack for
3x32x32 inputs (strides and paddings chosen so the stack composes down
to one scalar): 3->32 3x3/s1/p1, 32->64 4x4/s2/p1, 64->128 4x4/s2/p1,
128->256 4x4/s2/p1, 256->1 4x4/s1/p0, then a per-sample sum squeeze.
Desk-scale stand-ins follow the same pattern at 8x8 or use small dense
stacks for 2-D toy data.
"""

from __future__ import annotations

from .autodiff import Conv2d, Dense, LeakyRelu, NetworkSpec, SqueezeSum


def conv_energy_spec_32x32() -> NetworkSpec:
    """Full-scale conv energy network over 3x32x32 pixel tensors."""
    return NetworkSpec(
        input_shape=(3, 32, 32),
        layers=(
            Conv2d(32, 3, 3, 3, stride=1, padding=1),
            LeakyRelu(0.2),
            Conv2d(64, 32, 4, 4, stride=2, padding=1),
            LeakyRelu(0.2),
            Conv2d(128, 64, 4, 4, stride=2, padding=1),
            LeakyRelu(0.2),
            Conv2d(256, 128, 4, 4, stride=2, padding=1),
            LeakyRelu(0.2),
            Conv2d(1, 256, 4, 4, stride=1, padding=0),
            SqueezeSum(),
        ),
    )


def conv_energy_spec_8x8(width: int = 16) -> NetworkSpec:
    """Desk-scale conv energy network over 1x8x8 images."""
    return NetworkSpec(
        input_shape=(1, 8, 8),
        layers=(
            Conv2d(width, 1, 3, 3, stride=1, padding=1),
            LeakyRelu(0.2),
            Conv2d(2 * width, width, 4, 4, stride=2, padding=1),
            LeakyRelu(0.2),
            Conv2d(4 * width, 2 * width, 4, 4, stride=2, padding=1),
            LeakyRelu(0.2),
            Conv2d(1, 4 * width, 2, 2, stride=1, padding=0),
            SqueezeSum(),
        ),
    )


def dense_energy_spec(dim: int, hidden: tuple[int, ...] = (128, 64)) -> NetworkSpec:
    """Small dense energy network for low-dimensional domains."""
    layers: list = []
    prev = dim
    for h in hidden:
        layers += [Dense(prev, h), LeakyRelu(0.2)]
        prev = h
    layers += [Dense(prev, 1), SqueezeSum()]
    return NetworkSpec(input_shape=(dim,), layers=tuple(layers))


def conv_classifier_spec_8x8(n_classes: int = 10, width: int = 16) -> NetworkSpec:
    """Desk-scale conv classifier over 1x8x8 images."""
    return NetworkSpec(
        input_shape=(1, 8, 8),
        layers=(
            Conv2d(width, 1, 3, 3, stride=1, padding=1),
            LeakyRelu(0.2),
            Conv2d(2 * width, width, 4, 4, stride=2, padding=1),
            LeakyRelu(0.2),
            Dense(2 * width * 4 * 4, 64),
            LeakyRelu(0.2),
            Dense(64, n_classes),
        ),
    )


def dense_classifier_spec(dim: int, n_classes: int,
                          hidden: tuple[int, ...] = (64, 32)) -> NetworkSpec:
    layers: list = []
    prev = dim
    for h in hidden:
        layers += [Dense(prev, h), LeakyRelu(0.2)]
        prev = h
    layers.append(Dense(prev, n_classes))
    return NetworkSpec(input_shape=(dim,), layers=tuple(layers))


def conv_classifier_spec_32x32(n_classes: int = 10, width: int = 32) -> NetworkSpec:
    """Stand-in conv classifier for 3x32x32 inputs (full-scale preset label)."""
    return NetworkSpec(
        input_shape=(3, 32, 32),
        layers=(
            Conv2d(width, 3, 3, 3, stride=1, padding=1),
            LeakyRelu(0.2),
            Conv2d(2 * width, width, 4, 4, stride=2, padding=1),
            LeakyRelu(0.2),
            Conv2d(4 * width, 2 * width, 4, 4, stride=2, padding=1),
            LeakyRelu(0.2),
            Dense(4 * width * 8 * 8, 256),
            LeakyRelu(0.2),
            Dense(256, n_classes),
        ),
    )
