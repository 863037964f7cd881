"""Convolutional heatmap regressor with hand-written forward and backward passes.

Activations use NHWC layout. Inputs in [0, 1] are shifted by -0.5 before the
first layer. Convolution weights have shape (k, k, C_in, C_out),
stride 1 and "same" zero padding. Max-pooling is 2x2 with stride 2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, TrainingDivergence
from .geom import NUM_KEYPOINTS


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # "conv", "relu" or "maxpool"
    in_channels: int = 0
    out_channels: int = 0
    kernel: int = 0

    def __post_init__(self):
        if self.kind not in ("conv", "relu", "maxpool"):
            raise ContractError(f"unknown layer kind {self.kind!r}")
        if self.kind == "conv" and (self.kernel < 1 or self.kernel % 2 == 0):
            raise ContractError(f"conv kernel must be odd and positive, got {self.kernel}")


def conv(cin: int, cout: int, k: int) -> LayerSpec:
    return LayerSpec("conv", cin, cout, k)


RELU = LayerSpec("relu")
MAXPOOL = LayerSpec("maxpool")


def default_layers(width: float = 1.0, in_channels: int = 3) -> list[LayerSpec]:
    """Eight convolutions, two pools, linear 14-channel output at 1/4 resolution."""
    c = [max(1, int(round(n * width))) for n in (16, 32, 64, 64, 64, 128, 128)]
    return [
        conv(in_channels, c[0], 5), RELU, MAXPOOL,
        conv(c[0], c[1], 5), RELU, MAXPOOL,
        conv(c[1], c[2], 3), RELU,
        conv(c[2], c[3], 3), RELU,
        conv(c[3], c[4], 3), RELU,
        conv(c[4], c[5], 3), RELU,
        conv(c[5], c[6], 1), RELU,
        conv(c[6], NUM_KEYPOINTS, 1),
    ]


# --- layer kernels ------------------------------------------------------------

def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    """Rows of (k, k, C) patches around every pixel, zero padded."""
    n, h, w, c = x.shape
    if k == 1:
        return x.reshape(n * h * w, c)
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    win = sliding_window_view(xp, (k, k), axis=(1, 2)).transpose(0, 1, 2, 4, 5, 3)
    return np.ascontiguousarray(win).reshape(n * h * w, k * k * c)


def _conv_input_grad(g: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. a same-padded conv input: correlate with the flipped kernel."""
    k, _, cin, cout = w.shape
    flipped = w[::-1, ::-1].transpose(0, 1, 3, 2).reshape(k * k * cout, cin)
    n, h, wd, _ = g.shape
    return (_im2col(g, k) @ flipped).reshape(n, h, wd, cin)


def _pool_windows(x: np.ndarray) -> np.ndarray:
    n, h, w, c = x.shape
    return x.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, h // 2, w // 2, c, 4)


INPUT_OFFSET = 0.5


class Regressor:
    """Layered network mapping (N, H, W, C) images to (N, h, w, 14) heatmaps.

    Hidden kernels are drawn with variance 2/fan_in; the output layer's are
    scaled by ``output_gain`` (zero by default, so training starts from an
    all-zero prediction). Biases start at zero.
    """

    def __init__(self, layers: list[LayerSpec], input_size: tuple[int, int, int] = (256, 256, 3),
                 dtype=np.float32, seed: int | None = 0, output_gain: float = 0.0):
        self.layers = list(layers)
        self.input_size = tuple(input_size)
        self.dtype = np.dtype(dtype)
        self._check_architecture()
        self.params: list[tuple[np.ndarray, np.ndarray] | None] = []
        rng = np.random.default_rng(seed)
        last = self.conv_indices[-1] if self.conv_indices else -1
        for i, spec in enumerate(self.layers):
            if spec.kind == "conv":
                fan_in = spec.kernel * spec.kernel * spec.in_channels
                shape = (spec.kernel, spec.kernel, spec.in_channels, spec.out_channels)
                std = np.sqrt(2.0 / fan_in) * (output_gain if i == last else 1.0)
                w = rng.normal(0.0, std, shape).astype(self.dtype)
                self.params.append((w, np.zeros(spec.out_channels, dtype=self.dtype)))
            else:
                self.params.append(None)
        self._cache: list | None = None

    def _check_architecture(self):
        h, w, c = self.input_size
        for i, spec in enumerate(self.layers):
            if spec.kind == "conv":
                if spec.in_channels != c:
                    raise ContractError(f"layer {i}: expects {spec.in_channels} channels, receives {c}")
                c = spec.out_channels
            elif spec.kind == "maxpool":
                if h % 2 or w % 2:
                    raise ContractError(f"layer {i}: maxpool needs even size, got {w}x{h}")
                h, w = h // 2, w // 2
        self.output_size = (h, w, c)

    @property
    def conv_indices(self) -> list[int]:
        return [i for i, s in enumerate(self.layers) if s.kind == "conv"]

    def copy(self) -> "Regressor":
        other = Regressor.__new__(Regressor)
        other.layers = list(self.layers)
        other.input_size = self.input_size
        other.output_size = self.output_size
        other.dtype = self.dtype
        other.params = [None if p is None else (p[0].copy(), p[1].copy()) for p in self.params]
        other._cache = None
        return other

    def astype(self, dtype) -> "Regressor":
        other = self.copy()
        other.dtype = np.dtype(dtype)
        other.params = [None if p is None else (p[0].astype(dtype), p[1].astype(dtype)) for p in self.params]
        return other

    # --- evaluation -------------------------------------------------------

    def forward(self, x: np.ndarray, keep_cache: bool = True) -> np.ndarray:
        x = np.asarray(x)
        if x.ndim == 3:
            x = x[None]
        if x.shape[1:] != self.input_size:
            raise ContractError(f"input shape {x.shape[1:]} does not match network input {self.input_size}")
        x = x.astype(self.dtype) - self.dtype.type(INPUT_OFFSET)
        cache = []
        for spec, p in zip(self.layers, self.params):
            if spec.kind == "conv":
                w, b = p
                n, h, wd, _ = x.shape
                cols = _im2col(x, spec.kernel)
                out = (cols @ w.reshape(-1, spec.out_channels) + b).reshape(n, h, wd, spec.out_channels)
                cache.append((cols, x.shape))
            elif spec.kind == "relu":
                out = np.maximum(x, 0)
                cache.append(out)
            else:
                win = _pool_windows(x)
                arg = np.argmax(win, axis=-1)
                out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
                cache.append((arg, x.shape))
            x = out
        self._cache = cache if keep_cache else None
        return x

    def scale_output(self, factor: float) -> "Regressor":
        """Copy whose output is multiplied by ``factor`` (the last layer is linear)."""
        other = self.copy()
        i = self.conv_indices[-1]
        w, b = other.params[i]
        other.params[i] = ((w * factor).astype(self.dtype), (b * factor).astype(self.dtype))
        return other

    def heatmaps(self, image: np.ndarray) -> np.ndarray:
        """Single image (H, W, C) -> heatmap stack (14, h, w)."""
        return self.forward(image, keep_cache=False)[0].transpose(2, 0, 1)

    def backward(self, upstream: np.ndarray) -> list[tuple[np.ndarray, np.ndarray] | None]:
        """Gradients of the loss for every conv layer, given dLoss/dOutput.

        Must follow a ``forward`` call on the inputs the loss was computed from.
        """
        if self._cache is None:
            raise ContractError("backward called without a cached forward pass")
        g = np.asarray(upstream, dtype=self.dtype)
        grads: list = [None] * len(self.layers)
        first_conv = self.conv_indices[0]
        for i in range(len(self.layers) - 1, -1, -1):
            spec, entry = self.layers[i], self._cache[i]
            if spec.kind == "conv":
                cols, in_shape = entry
                w = self.params[i][0]
                g2 = g.reshape(-1, spec.out_channels)
                grads[i] = ((cols.T @ g2).reshape(w.shape), g2.sum(axis=0))
                if i == first_conv:
                    break
                g = _conv_input_grad(g, w)
            elif spec.kind == "relu":
                g = g * (entry > 0)
            else:
                arg, in_shape = entry
                n, h, w_, c = in_shape
                gw = np.zeros(arg.shape + (4,), dtype=g.dtype)
                np.put_along_axis(gw, arg[..., None], g[..., None], axis=-1)
                g = gw.reshape(n, h // 2, w_ // 2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(in_shape)
        return grads


def init_velocity(model: Regressor) -> list:
    return [None if p is None else (np.zeros_like(p[0]), np.zeros_like(p[1])) for p in model.params]


def sgd_step(model: Regressor, grads: list, velocity: list, lr: float, momentum: float) -> None:
    """Classical momentum, in place: v <- momentum*v - lr*g; w <- w + v."""
    for i, (g, v) in enumerate(zip(grads, velocity)):
        if g is None:
            continue
        for name, gt in zip(("weight", "bias"), g):
            if not np.all(np.isfinite(gt)):
                raise TrainingDivergence(f"non-finite {name} gradient in layer {i} ({model.layers[i].kind})")
    for i, (g, v) in enumerate(zip(grads, velocity)):
        if g is None:
            continue
        w, b = model.params[i]
        for param, grad, vel in ((w, g[0], v[0]), (b, g[1], v[1])):
            vel *= momentum
            vel -= lr * grad
            param += vel
