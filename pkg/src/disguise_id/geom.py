"""Images, keypoint sets and the four geometric transforms used for augmentation.

Images are float arrays of shape (H, W, C) with intensities in [0, 1].
Keypoint coordinates are continuous pixel coordinates with the centre of pixel
(0, 0) at (0.0, 0.0), x to the right and y downward. A point is in bounds when
0 <= x <= W - 1 and 0 <= y <= H - 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage

from .errors import BoundsError, ContractError

NUM_KEYPOINTS = 14
NOSE = 10

KEYPOINT_NAMES = (
    "left eyebrow outer corner",
    "left eyebrow inner corner",
    "right eyebrow inner corner",
    "right eyebrow outer corner",
    "left eye outer corner",
    "left eye center",
    "left eye inner corner",
    "right eye inner corner",
    "right eye center",
    "right eye outer corner",
    "nose",
    "lip left corner",
    "lip centre",
    "lip right corner",
)

# Label permutation applied by a horizontal mirror (0-based indices).
FLIP_PERMUTATION = np.array([3, 2, 1, 0, 9, 8, 7, 6, 5, 4, 10, 13, 12, 11])


@dataclass(frozen=True)
class KeypointSet:
    """Fourteen ordered (x, y) points plus per-point visibility.

    Index ``i`` holds point P(i+1). Coordinates of non-visible points are kept
    (they still follow every transform) but carry no meaning for scoring.
    """

    points: np.ndarray
    visible: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64).reshape(-1, 2)
        if pts.shape != (NUM_KEYPOINTS, 2):
            raise ContractError(f"expected {NUM_KEYPOINTS} keypoints, got {pts.shape[0]}")
        vis = np.ones(NUM_KEYPOINTS, dtype=bool) if self.visible is None else np.array(self.visible, dtype=bool)
        if vis.shape != (NUM_KEYPOINTS,):
            raise ContractError(f"expected {NUM_KEYPOINTS} visibility flags, got {vis.size}")
        pts.setflags(write=False)
        vis.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "visible", vis)

    def __eq__(self, other):
        if not isinstance(other, KeypointSet):
            return NotImplemented
        return np.array_equal(self.points, other.points) and np.array_equal(self.visible, other.visible)

    def with_bounds(self, width: int, height: int) -> "KeypointSet":
        """Clear visibility for points outside ``[0, width-1] x [0, height-1]``."""
        return KeypointSet(self.points, self.visible & in_bounds(self.points, width, height))

    def transformed(self, amap: "AffineMap") -> "KeypointSet":
        return KeypointSet(amap.apply(self.points), self.visible)


def in_bounds(points: np.ndarray, width: int, height: int) -> np.ndarray:
    x, y = points[:, 0], points[:, 1]
    return (x >= 0) & (x <= width - 1) & (y >= 0) & (y <= height - 1)


@dataclass(frozen=True)
class AffineMap:
    """2x3 matrix mapping source coordinates to destination coordinates."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64).reshape(2, 3)
        if abs(np.linalg.det(m[:, :2])) < 1e-12:
            raise ContractError("affine map is singular")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "AffineMap":
        return cls(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))

    @classmethod
    def translation(cls, dx: float, dy: float) -> "AffineMap":
        return cls(np.array([[1.0, 0.0, dx], [0.0, 1.0, dy]]))

    @classmethod
    def scaling(cls, sx: float, sy: float) -> "AffineMap":
        return cls(np.array([[sx, 0.0, 0.0], [0.0, sy, 0.0]]))

    @classmethod
    def rotation(cls, degrees: float, center: tuple[float, float]) -> "AffineMap":
        """Visually counter-clockwise rotation (y axis points down)."""
        t = np.deg2rad(degrees)
        c, s = np.cos(t), np.sin(t)
        cx, cy = center
        lin = np.array([[c, s], [-s, c]])
        off = np.array([cx, cy]) - lin @ np.array([cx, cy])
        return cls(np.column_stack([lin, off]))

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.matrix[:, :2].T + self.matrix[:, 2]

    def inverse(self) -> "AffineMap":
        lin_inv = np.linalg.inv(self.matrix[:, :2])
        return AffineMap(np.column_stack([lin_inv, -lin_inv @ self.matrix[:, 2]]))

    def then(self, other: "AffineMap") -> "AffineMap":
        """Composition: apply ``self`` first, then ``other``."""
        lin = other.matrix[:, :2] @ self.matrix[:, :2]
        off = other.matrix[:, :2] @ self.matrix[:, 2] + other.matrix[:, 2]
        return AffineMap(np.column_stack([lin, off]))


def as_image(data: np.ndarray) -> np.ndarray:
    """Validate and normalise an image array to float (H, W, C)."""
    img = np.asarray(data)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ContractError(f"image must be HxW, HxWx1 or HxWx3, got shape {img.shape}")
    if not np.issubdtype(img.dtype, np.floating):
        img = img.astype(np.float64)
    return img


def _warp(img: np.ndarray, inverse: AffineMap, out_size: tuple[int, int], mode: str) -> np.ndarray:
    """Bilinear resampling: output pixel p reads source location ``inverse(p)``."""
    w, h = out_size
    ys, xs = np.mgrid[0:h, 0:w]
    src = inverse.apply(np.column_stack([xs.ravel(), ys.ravel()]).astype(np.float64))
    coords = [src[:, 1], src[:, 0]]
    out = np.empty((h, w, img.shape[2]), dtype=img.dtype)
    for c in range(img.shape[2]):
        out[:, :, c] = ndimage.map_coordinates(img[:, :, c], coords, order=1, mode=mode, cval=0.0).reshape(h, w)
    return np.clip(out, 0.0, 1.0)


def crop(img: np.ndarray, kps: KeypointSet, origin: tuple[int, int], size: tuple[int, int]):
    """Cut a ``size = (w, h)`` rectangle whose top-left pixel is ``origin = (x, y)``."""
    img = as_image(img)
    x0, y0 = (int(v) for v in origin)
    w, h = (int(v) for v in size)
    H, W = img.shape[:2]
    if x0 < 0 or y0 < 0 or w < 1 or h < 1 or x0 + w > W or y0 + h > H:
        raise BoundsError(f"crop rectangle origin={origin} size={size} exceeds image {W}x{H}")
    out = img[y0:y0 + h, x0:x0 + w].copy()
    return out, kps.transformed(AffineMap.translation(-x0, -y0)).with_bounds(w, h)


def flip_horizontal(img: np.ndarray, kps: KeypointSet):
    """Mirror left-right and swap left/right keypoint labels.

    Visibility is carried along unchanged: the in-bounds interval is symmetric
    under ``x -> (W-1) - x``.
    """
    img = as_image(img)
    W = img.shape[1]
    pts = kps.points.copy()
    pts[:, 0] = (W - 1) - pts[:, 0]
    return img[:, ::-1].copy(), KeypointSet(pts[FLIP_PERMUTATION], kps.visible[FLIP_PERMUTATION])


def rotate(img: np.ndarray, kps: KeypointSet, degrees: float):
    """Rotate about the image centre; uncovered pixels become 0."""
    if abs(degrees) > 180:
        raise ContractError(f"rotation angle {degrees} outside [-180, 180]")
    img = as_image(img)
    H, W = img.shape[:2]
    amap = AffineMap.rotation(degrees, ((W - 1) / 2.0, (H - 1) / 2.0))
    out = img.copy() if degrees == 0 else _warp(img, amap.inverse(), (W, H), mode="constant")
    return out, kps.transformed(amap).with_bounds(W, H)


def resize(img: np.ndarray, kps: KeypointSet, new_size: tuple[int, int]):
    """Bilinear resize to ``new_size = (w, h)``; coordinates scale by w'/w, h'/h."""
    img = as_image(img)
    w2, h2 = (int(v) for v in new_size)
    if w2 < 1 or h2 < 1:
        raise ContractError(f"resize target {new_size} must be at least 1x1")
    H, W = img.shape[:2]
    if (w2, h2) == (W, H):
        return img.copy(), kps
    amap = AffineMap.scaling(w2 / W, h2 / H)
    # Edge clamping: upscaled border pixels read slightly past the last source pixel.
    out = _warp(img, amap.inverse(), (w2, h2), mode="nearest")
    return out, kps.transformed(amap).with_bounds(w2, h2)


def load_png(path: str | Path) -> np.ndarray:
    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("RGB") if im.mode not in ("L", "RGB") else im, dtype=np.float64)
    return as_image(arr / 255.0)


def save_png(img: np.ndarray, path: str | Path) -> None:
    img = as_image(img)
    u8 = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    PILImage.fromarray(u8[:, :, 0] if u8.shape[2] == 1 else u8).save(path, format="PNG")
