"""Gaussian heatmap targets, the squared-error loss, and argmax decoding.

A heatmap stack is an array of shape (14, h, w). Cell (i, j) (column i, row j)
corresponds to input pixel (i*s, j*s) where s = input_width / heatmap_width.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .geom import NUM_KEYPOINTS, KeypointSet


@dataclass(frozen=True)
class GaussianSpec:
    sigma: float = 1.5
    stack_size: tuple[int, int] = (64, 64)
    input_size: tuple[int, int] = (256, 256)

    def __post_init__(self):
        if self.sigma <= 0:
            raise ContractError("sigma must be positive")
        (w, h), (W, H) = self.stack_size, self.input_size
        if W % w or H % h:
            raise ContractError(f"input size {self.input_size} not divisible by stack size {self.stack_size}")
        if W // w != H // h:
            raise ContractError("heatmap stride must be equal along both axes")

    @property
    def stride(self) -> int:
        return self.input_size[0] // self.stack_size[0]

    @property
    def peak(self) -> float:
        return 1.0 / (2.0 * np.pi * self.sigma ** 2)


def synthesize(kps: KeypointSet, spec: GaussianSpec = GaussianSpec()) -> np.ndarray:
    """Ground-truth stack: a normalised Gaussian per visible keypoint, zeros otherwise."""
    w, h = spec.stack_size
    centers = kps.points / spec.stride
    gx = np.exp(-(np.arange(w)[None, :] - centers[:, 0:1]) ** 2 / (2 * spec.sigma ** 2))
    gy = np.exp(-(np.arange(h)[None, :] - centers[:, 1:2]) ** 2 / (2 * spec.sigma ** 2))
    stack = spec.peak * gy[:, :, None] * gx[:, None, :]
    stack[~kps.visible] = 0.0
    return stack


def loss_and_grad(pred: np.ndarray, gt: np.ndarray) -> tuple[float, np.ndarray]:
    """Sum of squared differences and its gradient with respect to ``pred``."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ContractError(f"prediction shape {pred.shape} != target shape {gt.shape}")
    diff = pred - gt
    return float(np.sum(np.square(diff, dtype=np.float64))), 2.0 * diff


def default_min_peak(spec: GaussianSpec) -> float:
    return 0.1 * spec.peak


def decode(stack: np.ndarray, spec: GaussianSpec = GaussianSpec(), min_peak: float | None = None,
           subpixel: bool = False) -> KeypointSet:
    """Per-channel argmax (first occurrence in row-major order) mapped to input pixels.

    Channels whose maximum is below ``min_peak`` come back not-visible. With
    ``subpixel`` a 1-D quadratic fit through the peak and its neighbours refines
    each axis.
    """
    stack = np.asarray(stack)
    if stack.ndim != 3 or stack.shape[0] != NUM_KEYPOINTS:
        raise ContractError(f"expected a ({NUM_KEYPOINTS}, h, w) stack, got {stack.shape}")
    if min_peak is None:
        min_peak = default_min_peak(spec)
    k, h, w = stack.shape
    flat = stack.reshape(k, -1)
    idx = np.argmax(flat, axis=1)
    peaks = flat[np.arange(k), idx]
    rows, cols = np.divmod(idx, w)
    xy = np.column_stack([cols, rows]).astype(np.float64)
    if subpixel:
        for c in range(k):
            j, i = rows[c], cols[c]
            if 0 < i < w - 1:
                xy[c, 0] += _parabola_offset(*stack[c, j, i - 1:i + 2])
            if 0 < j < h - 1:
                xy[c, 1] += _parabola_offset(*stack[c, j - 1:j + 2, i])
    return KeypointSet(xy * spec.stride, peaks >= min_peak)


def _parabola_offset(left: float, mid: float, right: float) -> float:
    denom = left - 2 * mid + right
    if denom >= 0:
        return 0.0
    return float(np.clip(0.5 * (left - right) / denom, -0.5, 0.5))
