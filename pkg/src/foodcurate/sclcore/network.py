"""Pure-numpy network modules with hand-written backward passes.

The encoder is deliberately small: two 3x3 conv blocks (ReLU + 2x2 average
pool), global average pooling, and a linear map to the embedding dimension.
Everything runs in float64 so gradient checks against finite differences are
meaningful, and all randomness is confined to seeded initialization.
"""

from __future__ import annotations

import numpy as np

from .ops import SclError, normalize_rows


class Parameter:
    """A named array plus its gradient accumulator."""

    def __init__(self, name: str, value: np.ndarray) -> None:
        self.name = name
        self.value = value.astype(np.float64)
        self.grad = np.zeros_like(self.value)


def sgd_step(params: list[Parameter], lr: float, weight_decay: float) -> None:
    """Plain SGD with L2 weight decay; biases are decayed too (they start at 0)."""
    for p in params:
        p.value -= lr * (p.grad + weight_decay * p.value)


def zero_grads(params: list[Parameter]) -> None:
    for p in params:
        p.grad[...] = 0.0


def _im2col(x: np.ndarray, k: int, pad: int) -> np.ndarray:
    # x (B, C, H, W) -> (B, C*k*k, H*W) built from k*k shifted slabs, so the
    # convolution itself is one batched GEMM with no output transpose.
    b, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((b, c, k * k, h * w))
    for i in range(k):
        for j in range(k):
            cols[:, :, i * k + j, :] = xp[:, :, i : i + h, j : j + w].reshape(b, c, h * w)
    return cols.reshape(b, c * k * k, h * w)


def _col2im(dcols: np.ndarray, shape: tuple, k: int, pad: int) -> np.ndarray:
    b, c, h, w = shape
    d = dcols.reshape(b, c, k * k, h * w)
    dxp = np.zeros((b, c, h + 2 * pad, w + 2 * pad))
    for i in range(k):
        for j in range(k):
            dxp[:, :, i : i + h, j : j + w] += d[:, :, i * k + j, :].reshape(b, c, h, w)
    return dxp[:, :, pad : pad + h, pad : pad + w]


class Conv3x3:
    """Stride-1, padding-1 convolution keeping the spatial size."""

    def __init__(self, name: str, c_in: int, c_out: int, rng: np.random.Generator) -> None:
        scale = np.sqrt(2.0 / (c_in * 9))
        self.w = Parameter(f"{name}.w", rng.normal(0.0, scale, size=(c_out, c_in, 3, 3)))
        self.b = Parameter(f"{name}.b", np.zeros(c_out))
        self._cache: tuple | None = None

    def params(self) -> list[Parameter]:
        return [self.w, self.b]

    def forward(self, x: np.ndarray) -> np.ndarray:
        b, c, h, w = x.shape
        cols = _im2col(x, 3, 1)
        wmat = self.w.value.reshape(self.w.value.shape[0], -1)
        y = wmat[None] @ cols  # (B, C_out, H*W)
        y += self.b.value[None, :, None]
        self._cache = (x.shape, cols)
        return y.reshape(b, -1, h, w)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        x_shape, cols = self._cache
        b, c, h, w = x_shape
        c_out = self.w.value.shape[0]
        dyf = dy.reshape(b, c_out, h * w)
        wmat = self.w.value.reshape(c_out, -1)
        self.w.grad += np.tensordot(dyf, cols, axes=([0, 2], [0, 2])).reshape(
            self.w.value.shape
        )
        self.b.grad += dyf.sum(axis=(0, 2))
        return _col2im(wmat.T[None] @ dyf, x_shape, 3, 1)


class ReLU:
    def __init__(self) -> None:
        self._mask: np.ndarray | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._mask = x > 0
        return x * self._mask

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return dy * self._mask


class AvgPool2:
    """2x2 average pooling with stride 2; spatial dims must be even."""

    def forward(self, x: np.ndarray) -> np.ndarray:
        b, c, h, w = x.shape
        if h % 2 or w % 2:
            raise SclError(f"pooling needs even spatial dims, got {h}x{w}")
        self._shape = x.shape
        return x.reshape(b, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def backward(self, dy: np.ndarray) -> np.ndarray:
        b, c, h2, w2 = dy.shape
        spread = np.broadcast_to(dy[:, :, :, None, :, None], (b, c, h2, 2, w2, 2))
        return spread.reshape(b, c, 2 * h2, 2 * w2) / 4.0


class GlobalAvgPool:
    def forward(self, x: np.ndarray) -> np.ndarray:
        self._shape = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, dy: np.ndarray) -> np.ndarray:
        b, c, h, w = self._shape
        return np.broadcast_to(dy[:, :, None, None], self._shape) / (h * w)


class BatchNormVec:
    """Per-feature batch normalization (no affine) over (B, C) rows.

    Pooled conv features share a large common baseline across images; without
    this decorrelation the embedding space starts collapsed and contrastive
    training stalls.  Training mode normalizes with batch statistics and
    tracks running ones; eval mode is a pure per-sample function of the
    stored statistics.
    """

    EPS = 1e-8

    def __init__(self, dim: int, momentum: float = 0.1) -> None:
        self.dim = dim
        self.momentum = momentum
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)
        self._train = False

    def buffers(self) -> list[tuple[str, np.ndarray]]:
        return [("running_mean", self.running_mean), ("running_var", self.running_var)]

    def set_training(self, training: bool) -> None:
        self._train = training

    def forward(self, x: np.ndarray) -> np.ndarray:
        if self._train:
            mu = x.mean(axis=0)
            var = x.var(axis=0)
            self.running_mean += self.momentum * (mu - self.running_mean)
            self.running_var += self.momentum * (var - self.running_var)
            self._sigma = np.sqrt(var + self.EPS)
            self._y = (x - mu) / self._sigma
            return self._y
        return (x - self.running_mean) / np.sqrt(self.running_var + self.EPS)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        # only valid straight after a training-mode forward
        y = self._y
        mean_dy = dy.mean(axis=0)
        mean_dyy = (dy * y).mean(axis=0)
        return (dy - mean_dy - y * mean_dyy) / self._sigma


class Dense:
    def __init__(
        self,
        name: str,
        d_in: int,
        d_out: int,
        rng: np.random.Generator | None = None,
    ) -> None:
        if rng is None:  # zero init: the class head starts uniform
            w = np.zeros((d_in, d_out))
        else:
            w = rng.normal(0.0, np.sqrt(2.0 / d_in), size=(d_in, d_out))
        self.w = Parameter(f"{name}.w", w)
        self.b = Parameter(f"{name}.b", np.zeros(d_out))
        self._x: np.ndarray | None = None

    def params(self) -> list[Parameter]:
        return [self.w, self.b]

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        return x @ self.w.value + self.b.value

    def backward(self, dy: np.ndarray) -> np.ndarray:
        self.w.grad += self._x.T @ dy
        self.b.grad += dy.sum(axis=0)
        return dy @ self.w.value.T


class Encoder:
    """stem pool -> conv(3x3) -> ReLU -> pool -> conv(3x3) -> ReLU -> pool -> GAP -> linear.

    The parameter-free stem (repeated 2x2 average pooling) downsamples inputs
    before the first convolution; stem_pools=1 halves each side.  forward()
    returns raw embeddings; embed() returns the unit-norm rows the rest of
    the model consumes.
    """

    def __init__(
        self,
        in_channels: int = 3,
        conv_channels: tuple[int, int] = (8, 16),
        embed_dim: int = 64,
        seed: int = 0,
        stem_pools: int = 1,
    ) -> None:
        rng = np.random.default_rng(seed)
        self.in_channels = in_channels
        self.conv_channels = tuple(conv_channels)
        self.embed_dim = embed_dim
        self.stem_pools = stem_pools
        self.conv1 = Conv3x3("enc.conv1", in_channels, conv_channels[0], rng)
        self.relu1 = ReLU()
        self.pool1 = AvgPool2()
        self.conv2 = Conv3x3("enc.conv2", conv_channels[0], conv_channels[1], rng)
        self.relu2 = ReLU()
        self.pool2 = AvgPool2()
        self.gap = GlobalAvgPool()
        self.norm = BatchNormVec(conv_channels[1])
        self.out = Dense("enc.out", conv_channels[1], embed_dim, rng)
        # normalizing the raw embedding keeps per-dimension batch variance at
        # one, so the contrastive stage cannot collapse to a single point
        self.out_norm = BatchNormVec(embed_dim)
        self._layers = [AvgPool2() for _ in range(stem_pools)] + [
            self.conv1,
            self.relu1,
            self.pool1,
            self.conv2,
            self.relu2,
            self.pool2,
            self.gap,
            self.norm,
            self.out,
            self.out_norm,
        ]

    def params(self) -> list[Parameter]:
        return self.conv1.params() + self.conv2.params() + self.out.params()

    def buffers(self) -> list[tuple[str, np.ndarray]]:
        out = [(f"enc.norm.{name}", arr) for name, arr in self.norm.buffers()]
        out += [(f"enc.out_norm.{name}", arr) for name, arr in self.out_norm.buffers()]
        return out

    def set_training(self, training: bool) -> None:
        self.norm.set_training(training)
        self.out_norm.set_training(training)

    def forward(self, x: np.ndarray) -> np.ndarray:
        for layer in self._layers:
            x = layer.forward(x)
        return x

    def backward(self, dy: np.ndarray) -> np.ndarray:
        for layer in reversed(self._layers):
            dy = layer.backward(dy)
        return dy

    def embed(self, x: np.ndarray) -> np.ndarray:
        """Unit-norm embeddings for prepared (B, C, H, W) float inputs (eval mode)."""
        self.set_training(False)
        return normalize_rows(self.forward(x))


class ProjectionHead:
    """One-hidden-layer MLP mapping embeddings to the contrastive space."""

    def __init__(
        self, embed_dim: int = 64, hidden_dim: int = 64, proj_dim: int = 32, seed: int = 1
    ) -> None:
        rng = np.random.default_rng(seed)
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.proj_dim = proj_dim
        self.fc1 = Dense("proj.fc1", embed_dim, hidden_dim, rng)
        self.relu = ReLU()
        self.fc2 = Dense("proj.fc2", hidden_dim, proj_dim, rng)

    def params(self) -> list[Parameter]:
        return self.fc1.params() + self.fc2.params()

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.fc2.forward(self.relu.forward(self.fc1.forward(x)))

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return self.fc1.backward(self.relu.backward(self.fc2.backward(dy)))


class LinearHead:
    """Affine class scorer over frozen embeddings; starts at zero (uniform softmax)."""

    def __init__(self, embed_dim: int, n_classes: int) -> None:
        if n_classes < 2:
            raise SclError(f"need at least 2 classes, got {n_classes}")
        self.embed_dim = embed_dim
        self.n_classes = n_classes
        self.fc = Dense("head.fc", embed_dim, n_classes, rng=None)

    def params(self) -> list[Parameter]:
        return self.fc.params()

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.fc.forward(x)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return self.fc.backward(dy)


def images_to_tensor(views: np.ndarray) -> np.ndarray:
    """uint8 (B, H, W, C) image stack -> float64 (B, C, H, W) scaled to [0, 1]."""
    v = np.asarray(views)
    if v.ndim != 4:
        raise SclError(f"expected (B, H, W, C), got shape {v.shape}")
    return v.astype(np.float64).transpose(0, 3, 1, 2) / 255.0
