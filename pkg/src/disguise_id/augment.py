"""Random crop, flip, rotation and resize applied jointly to image and keypoints."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .geom import FLIP_PERMUTATION, AffineMap, KeypointSet, as_image, crop, flip_horizontal, resize, rotate
from .synth import AnnotatedFace


@dataclass(frozen=True)
class AugmentConfig:
    crop_size: tuple[int, int] = (248, 248)
    rotation_range: float = 40.0
    flip_prob: float = 0.5
    output_size: tuple[int, int] = (256, 256)
    enabled: bool = True

    def __post_init__(self):
        if not 0 <= self.rotation_range <= 180:
            raise ContractError("rotation_range must lie in [0, 180]")
        if not 0 <= self.flip_prob <= 1:
            raise ContractError("flip_prob must lie in [0, 1]")


def _check_size(img: np.ndarray, crop_size) -> None:
    H, W = img.shape[:2]
    if crop_size[0] > W or crop_size[1] > H:
        raise ContractError(f"image {W}x{H} smaller than crop {crop_size[0]}x{crop_size[1]}")


def _origin_range(coords: np.ndarray, extent: int, span: int) -> tuple[int, int] | None:
    """Integer origins in [0, extent - span] whose window holds every coordinate."""
    lo = max(0, math.ceil(coords.max() - (span - 1)))
    hi = min(extent - span, math.floor(coords.min()))
    return (lo, hi) if lo <= hi else None


def sample_parameters(face: AnnotatedFace, cfg: AugmentConfig, rng_seed) -> dict:
    """Draw the random quantities for one augmentation; exposed for distribution checks."""
    img = as_image(face.image)
    H, W = img.shape[:2]
    cw, ch = cfg.crop_size
    rng = np.random.default_rng(rng_seed)
    pts = face.keypoints.points[face.keypoints.visible]
    xr = yr = None
    if len(pts):
        xr, yr = _origin_range(pts[:, 0], W, cw), _origin_range(pts[:, 1], H, ch)
    if xr is None or yr is None:
        xr, yr = (0, W - cw), (0, H - ch)
    x0 = int(rng.integers(xr[0], xr[1] + 1))
    y0 = int(rng.integers(yr[0], yr[1] + 1))
    flip = bool(rng.random() < cfg.flip_prob)
    angle = float(rng.uniform(-cfg.rotation_range, cfg.rotation_range))
    return {"origin": (x0, y0), "flip": flip, "degrees": angle}


def augment_sample(face: AnnotatedFace, cfg: AugmentConfig, rng_seed) -> AnnotatedFace:
    """crop -> flip -> rotate -> resize, deterministic for a given seed."""
    if not cfg.enabled:
        return face
    _check_size(as_image(face.image), cfg.crop_size)
    params = sample_parameters(face, cfg, rng_seed)
    img, kps = crop(face.image, face.keypoints, params["origin"], cfg.crop_size)
    occluded = face.occluded
    if params["flip"]:
        img, kps = flip_horizontal(img, kps)
        occluded = occluded[FLIP_PERMUTATION]
    img, kps = rotate(img, kps, params["degrees"])
    img, kps = resize(img, kps, cfg.output_size)
    return dataclasses.replace(face, image=img, keypoints=kps, occluded=occluded)


def center_crop_resize(img: np.ndarray, kps: KeypointSet | None, cfg: AugmentConfig):
    """Deterministic evaluation preprocessing.

    Returns ``(image, keypoints, amap)`` where ``amap`` maps source-image
    coordinates to network-input coordinates. Images already at the output size
    pass through untouched.
    """
    img = as_image(img)
    H, W = img.shape[:2]
    if kps is None:
        kps = KeypointSet(np.zeros((14, 2)), np.zeros(14, dtype=bool))
    if (W, H) == tuple(cfg.output_size):
        return img, kps, AffineMap.identity()
    cw, ch = min(cfg.crop_size[0], W), min(cfg.crop_size[1], H)
    x0, y0 = (W - cw) // 2, (H - ch) // 2
    img, kps = crop(img, kps, (x0, y0), (cw, ch))
    img, kps = resize(img, kps, cfg.output_size)
    amap = AffineMap.translation(-x0, -y0).then(AffineMap.scaling(cfg.output_size[0] / cw, cfg.output_size[1] / ch))
    return img, kps, amap
