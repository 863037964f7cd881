"""Nose-referenced star-net angles, the L1 angle similarity, and gallery matching."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, SimilarityError
from .geom import NOSE, NUM_KEYPOINTS, KeypointSet

K_MIN = 6
ANGLE_POINTS = tuple(i for i in range(NUM_KEYPOINTS) if i != NOSE)


@dataclass(frozen=True)
class StarNet:
    """Orientation of every non-nose keypoint as seen from the nose.

    ``angles[i]`` is NaN wherever ``valid[i]`` is false.
    """

    angles: np.ndarray
    valid: np.ndarray

    def to_json(self) -> list[dict]:
        return [{"index": int(ANGLE_POINTS[i]), "valid": bool(v), "angle_rad": float(a) if v else None}
                for i, (a, v) in enumerate(zip(self.angles, self.valid))]

    @classmethod
    def from_angles(cls, angles, valid=None) -> "StarNet":
        a = np.asarray(angles, dtype=np.float64)
        v = np.isfinite(a) if valid is None else np.asarray(valid, dtype=bool)
        return cls(np.where(v, a, np.nan), v)


def build_starnet(kps: KeypointSet) -> StarNet:
    if not kps.visible[NOSE]:
        raise ContractError("nose keypoint is not visible; star-net undefined")
    d = kps.points[list(ANGLE_POINTS)] - kps.points[NOSE]
    vis = kps.visible[list(ANGLE_POINTS)]
    valid = vis & ~((d[:, 0] == 0) & (d[:, 1] == 0))
    angles = np.where(valid, np.arctan2(d[:, 1], d[:, 0]), np.nan)
    return StarNet(angles, valid)


def angle_delta(theta, phi, wrap: bool = True):
    d = np.abs(np.asarray(theta) - np.asarray(phi))
    if wrap:
        d = d % (2 * math.pi)
        d = np.minimum(d, 2 * math.pi - d)
    return d


def similarity(a: StarNet, b: StarNet, wrap: bool = True, k_min: int = K_MIN) -> tuple[float, int]:
    """Sum of absolute angle differences over indices valid in both; returns ``(tau, count)``."""
    common = a.valid & b.valid
    count = int(common.sum())
    if count < k_min:
        raise SimilarityError(f"only {count} common valid angles (need {k_min})")
    return float(np.sum(angle_delta(a.angles[common], b.angles[common], wrap))), count


@dataclass(frozen=True)
class GalleryEntry:
    subject_id: int
    starnet: StarNet


def identify(probe: StarNet, gallery: list[GalleryEntry], wrap: bool = True,
             k_min: int = K_MIN) -> tuple[int, list[float]]:
    """Subject with minimum tau; ties go to the lowest subject id."""
    if not gallery:
        raise ContractError("gallery is empty")
    taus = [similarity(probe, e.starnet, wrap, k_min)[0] for e in gallery]
    best = min(range(len(gallery)), key=lambda i: (taus[i], gallery[i].subject_id))
    return gallery[best].subject_id, taus
