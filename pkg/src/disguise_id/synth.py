"""Schematic annotated faces with disguises and simple or cluttered backgrounds.

Faces are drawn from filled primitives (head ellipse, brows, eyes, nose, mouth)
so that every keypoint has an exact analytic location. Disguise overlays are
painted after the features; covered keypoints keep their true coordinates and
get an ``occluded`` flag.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import ContractError, ParseError
from .geom import NUM_KEYPOINTS, KeypointSet, load_png, save_png


class Disguise(str, Enum):
    NONE = "none"
    SUNGLASSES = "sunglasses"
    CAP = "cap"
    SCARF = "scarf"
    BEARD = "beard"
    GLASSES_CAP = "glasses+cap"
    GLASSES_SCARF = "glasses+scarf"
    GLASSES_BEARD = "glasses+beard"
    CAP_SCARF = "cap+scarf"
    CAP_BEARD = "cap+beard"
    CAP_GLASSES_SCARF = "cap+glasses+scarf"

    @property
    def parts(self) -> frozenset[str]:
        return frozenset() if self is Disguise.NONE else frozenset(self.value.split("+"))


DISGUISES = tuple(d for d in Disguise if d is not Disguise.NONE)

SPLITS = ("train", "val", "test")
_SPLIT_CYCLE = ("train", "val", "train", "test")


@dataclass(frozen=True)
class SynthConfig:
    """Generator ranges, in pixels at ``image_size`` (defaults tuned for 132 px)."""

    image_size: int = 132
    head_a: tuple[float, float] = (38.0, 46.0)
    head_b: tuple[float, float] = (48.0, 56.0)
    eye_span: tuple[float, float] = (26.0, 40.0)
    eye_height: tuple[float, float] = (6.0, 18.0)
    brow_offset: tuple[float, float] = (9.0, 16.0)
    nose_length: tuple[float, float] = (16.0, 30.0)
    mouth_width: tuple[float, float] = (18.0, 36.0)
    mouth_offset: tuple[float, float] = (10.0, 20.0)
    position_jitter: float = 6.0
    scale_jitter: float = 0.05
    clutter_shapes: tuple[int, int] = (20, 60)
    separation_margin: float = 0.15

    def scaled(self, image_size: int) -> "SynthConfig":
        """Same face proportions at a different image size."""
        f = image_size / self.image_size
        kw = {}
        for name in ("head_a", "head_b", "eye_span", "eye_height", "brow_offset",
                     "nose_length", "mouth_width", "mouth_offset"):
            lo, hi = getattr(self, name)
            kw[name] = (lo * f, hi * f)
        return SynthConfig(image_size=image_size, position_jitter=self.position_jitter * f,
                           scale_jitter=self.scale_jitter, clutter_shapes=self.clutter_shapes,
                           separation_margin=self.separation_margin, **kw)


@dataclass(frozen=True)
class FaceParams:
    subject_id: int
    eye_span: float
    eye_height: float
    brow_offset: float
    nose_length: float
    mouth_width: float
    mouth_offset: float
    head_axes: tuple[float, float]
    skin: tuple[float, float, float] = (0.85, 0.7, 0.6)

    @classmethod
    def sample(cls, subject_id: int, rng: np.random.Generator, cfg: SynthConfig = SynthConfig()) -> "FaceParams":
        while True:
            p = cls(
                subject_id=subject_id,
                eye_span=rng.uniform(*cfg.eye_span),
                eye_height=rng.uniform(*cfg.eye_height),
                brow_offset=rng.uniform(*cfg.brow_offset),
                nose_length=rng.uniform(*cfg.nose_length),
                mouth_width=rng.uniform(*cfg.mouth_width),
                mouth_offset=rng.uniform(*cfg.mouth_offset),
                head_axes=(rng.uniform(*cfg.head_a), rng.uniform(*cfg.head_b)),
                skin=tuple(float(v) for v in rng.uniform([0.55, 0.4, 0.3], [0.95, 0.8, 0.7])),
            )
            if p.is_valid():
                return p

    def is_valid(self) -> bool:
        a, b = self.head_axes
        lengths = (self.eye_span, self.eye_height, self.brow_offset, self.nose_length,
                   self.mouth_width, self.mouth_offset, a, b)
        if min(lengths) <= 0:
            return False
        pts = canonical_keypoints(self)
        # Every keypoint (plus a margin for drawn extents) must sit inside the head ellipse.
        r = (pts[:, 0] / (a - 4)) ** 2 + (pts[:, 1] / (b - 6)) ** 2
        return bool(np.all(r < 1.0))


def _eye_half_width(p: FaceParams) -> float:
    return 0.22 * p.eye_span


def canonical_keypoints(p: FaceParams, scale: float = 1.0) -> np.ndarray:
    """Analytic keypoint locations relative to the head centre."""
    ew = _eye_half_width(p)
    half = p.eye_span / 2
    ye = -p.eye_height
    yb = ye - p.brow_offset
    yn = ye + p.nose_length
    ym = yn + p.mouth_offset
    mw = p.mouth_width / 2
    pts = np.array([
        [-half - 1.25 * ew, yb + 2.0],
        [-half + 0.9 * ew, yb],
        [half - 0.9 * ew, yb],
        [half + 1.25 * ew, yb + 2.0],
        [-half - ew, ye],
        [-half, ye],
        [-half + ew, ye],
        [half - ew, ye],
        [half, ye],
        [half + ew, ye],
        [0.0, yn],
        [-mw, ym],
        [0.0, ym],
        [mw, ym],
    ])
    return pts * scale


def star_angles(points: np.ndarray) -> np.ndarray:
    """Nose-referenced orientations of the 13 non-nose points."""
    d = np.delete(points, 10, axis=0) - points[10]
    return np.arctan2(d[:, 1], d[:, 0])


def _angle_distance(a: np.ndarray, b: np.ndarray) -> float:
    d = np.abs(a - b) % (2 * np.pi)
    return float(np.sum(np.minimum(d, 2 * np.pi - d)))


def sample_subjects(n: int, seed: int, cfg: SynthConfig = SynthConfig()) -> list[FaceParams]:
    """Draw ``n`` subjects whose star-net angle vectors are pairwise >= margin apart."""
    rng = np.random.default_rng([seed, 0x5B])
    subjects: list[FaceParams] = []
    angles: list[np.ndarray] = []
    for sid in range(n):
        for _ in range(10_000):
            p = FaceParams.sample(sid, rng, cfg)
            ang = star_angles(canonical_keypoints(p))
            if all(_angle_distance(ang, other) >= cfg.separation_margin for other in angles):
                break
        else:
            raise ContractError(f"could not place subject {sid} at separation {cfg.separation_margin}")
        subjects.append(p)
        angles.append(ang)
    return subjects


@dataclass
class AnnotatedFace:
    image: np.ndarray
    keypoints: KeypointSet
    subject_id: int
    disguise: Disguise
    background: str
    occluded: np.ndarray = field(default_factory=lambda: np.zeros(NUM_KEYPOINTS, dtype=bool))


# --- rasterisation helpers -------------------------------------------------

class _Canvas:
    def __init__(self, size: int, rgb):
        self.size = size
        self.ys, self.xs = np.mgrid[0:size, 0:size].astype(np.float64)
        self.img = np.empty((size, size, 3))
        self.img[:] = rgb

    def paint(self, mask: np.ndarray, rgb) -> np.ndarray:
        self.img[mask] = rgb
        return mask

    def ellipse(self, cx, cy, a, b, angle=0.0) -> np.ndarray:
        c, s = math.cos(angle), math.sin(angle)
        dx, dy = self.xs - cx, self.ys - cy
        u = (c * dx + s * dy) / a
        v = (-s * dx + c * dy) / b
        return u * u + v * v <= 1.0

    def rect(self, x0, y0, x1, y1) -> np.ndarray:
        return (self.xs >= x0) & (self.xs <= x1) & (self.ys >= y0) & (self.ys <= y1)

    def segment(self, p0, p1, half_width) -> np.ndarray:
        (x0, y0), (x1, y1) = p0, p1
        dx, dy = x1 - x0, y1 - y0
        L2 = dx * dx + dy * dy
        t = np.clip(((self.xs - x0) * dx + (self.ys - y0) * dy) / max(L2, 1e-12), 0.0, 1.0)
        px, py = x0 + t * dx, y0 + t * dy
        return (self.xs - px) ** 2 + (self.ys - py) ** 2 <= half_width ** 2

    def triangle(self, p0, p1, p2) -> np.ndarray:
        def side(a, b):
            return (b[0] - a[0]) * (self.ys - a[1]) - (b[1] - a[1]) * (self.xs - a[0])
        s0, s1, s2 = side(p0, p1), side(p1, p2), side(p2, p0)
        return ((s0 >= 0) & (s1 >= 0) & (s2 >= 0)) | ((s0 <= 0) & (s1 <= 0) & (s2 <= 0))


def _draw_clutter(cv: _Canvas, rng: np.random.Generator, count: int) -> None:
    """Random shapes, about half of them look-alikes of eyes, brows and mouths."""
    n = cv.size
    for _ in range(count):
        kind = rng.integers(6)
        rgb = rng.uniform(0.0, 1.0, 3)
        c = rng.uniform(0, n, 2)
        if kind == 0:
            cv.paint(cv.ellipse(*c, *rng.uniform(2, n / 8, 2), rng.uniform(0, np.pi)), rgb)
        elif kind == 1:
            w, h = rng.uniform(3, n / 5, 2)
            cv.paint(cv.rect(c[0], c[1], c[0] + w, c[1] + h), rgb)
        elif kind == 2:
            p1 = c + rng.uniform(-n / 4, n / 4, 2)
            cv.paint(cv.segment(c, p1, rng.uniform(0.8, 2.5)), rgb * 0.4)
        elif kind == 3:
            r = rng.uniform(4, 9)
            cv.paint(cv.ellipse(c[0], c[1], r, r * 0.45), (0.97, 0.97, 0.97))
            cv.paint(cv.ellipse(c[0], c[1], r * 0.36, r * 0.36), rgb * 0.3)
        elif kind == 4:
            half = rng.uniform(5, 12)
            cv.paint(cv.segment(c - [half, rng.uniform(-2, 2)], c + [half, 0], 1.6), rgb * 0.3)
        else:
            cv.paint(cv.ellipse(c[0], c[1], rng.uniform(8, 18), rng.uniform(2.5, 4.5)),
                     (rng.uniform(0.5, 0.8), rng.uniform(0.1, 0.3), rng.uniform(0.15, 0.35)))


FEATURE_MASK_NAMES = ("brow_left", "brow_right", "eye_left", "eye_right", "nose", "mouth")


def render_face(params: FaceParams, disguise: Disguise | str, background: str, rng_seed,
                cfg: SynthConfig = SynthConfig(), return_masks: bool = False):
    """Render one face. With ``return_masks`` also return per-feature pixel masks
    (before disguises are painted), used to check keypoint placement."""
    disguise = Disguise(disguise)
    if background not in ("simple", "complex"):
        raise ContractError(f"background must be 'simple' or 'complex', got {background!r}")
    rng = np.random.default_rng(rng_seed)
    n = cfg.image_size
    bg = rng.uniform(0.1, 0.9, 3)
    cv = _Canvas(n, bg)
    if background == "complex":
        _draw_clutter(cv, rng, int(rng.integers(cfg.clutter_shapes[0], cfg.clutter_shapes[1] + 1)))

    scale = 1.0 + rng.uniform(-cfg.scale_jitter, cfg.scale_jitter)
    cx, cy = (n - 1) / 2 + rng.uniform(-cfg.position_jitter, cfg.position_jitter, 2)
    pts = canonical_keypoints(params, scale) + [cx, cy]
    a, b = params.head_axes[0] * scale, params.head_axes[1] * scale
    ew = _eye_half_width(params) * scale
    eh = 0.45 * ew
    skin = np.array(params.skin)

    masks = {}
    # neck then head
    cv.paint(cv.rect(cx - 0.45 * a, cy + 0.6 * b, cx + 0.45 * a, n + 1), skin * 0.9)
    cv.paint(cv.ellipse(cx, cy, a, b), skin)
    hair = rng.uniform(0.0, 0.35, 3)
    top = cv.ellipse(cx, cy, a + 1, b + 1) & (cv.ys < cy - b * 0.72)
    cv.paint(top, hair)
    brow_rgb = hair * 0.6
    masks["brow_left"] = cv.paint(cv.segment(pts[0], pts[1], 1.6 * scale), brow_rgb)
    masks["brow_right"] = cv.paint(cv.segment(pts[2], pts[3], 1.6 * scale), brow_rgb)
    iris = rng.uniform(0.0, 0.4, 3)
    for side, centre in (("eye_left", pts[5]), ("eye_right", pts[8])):
        sclera = cv.paint(cv.ellipse(centre[0], centre[1], ew, eh), (0.97, 0.97, 0.97))
        cv.paint(cv.ellipse(centre[0], centre[1], 0.8 * eh, 0.8 * eh) & sclera, iris)
        masks[side] = sclera
    nose_top = (pts[10][0], pts[10][1] - 0.75 * params.nose_length * scale)
    nw = 0.18 * params.nose_length * scale + 2
    masks["nose"] = cv.paint(
        cv.triangle(nose_top, (pts[10][0] - nw, pts[10][1]), (pts[10][0] + nw, pts[10][1])), skin * 0.72)
    mh = 2.2 * scale + 0.06 * params.mouth_width * scale
    masks["mouth"] = cv.paint(cv.ellipse(pts[12][0], pts[12][1], params.mouth_width * scale / 2, mh),
                              (0.7, 0.2, 0.25))

    cover = np.zeros((n, n), dtype=bool)
    parts = disguise.parts
    if "beard" in parts:
        chin = cv.ellipse(cx, cy, a, b) & (cv.ys > pts[12][1] + mh + 1.5)
        cheeks = cv.ellipse(cx, cy, a, b) & (np.abs(cv.xs - cx) > params.mouth_width * scale / 2 + 3) & (
            cv.ys > pts[10][1])
        region = chin | cheeks
        beard_rgb = hair * 0.8
        cv.paint(region, beard_rgb)
        speckle = region & (rng.random((n, n)) < 0.3)
        cv.paint(speckle, np.clip(beard_rgb + 0.15, 0, 1))
        cover |= region
    if "scarf" in parts:
        top_y = pts[10][1] + 0.4 * params.mouth_offset * scale
        region = cv.rect(cx - a - 8, top_y, cx + a + 8, n + 1)
        scarf_rgb = rng.uniform(0.2, 0.9, 3)
        cv.paint(region, scarf_rgb)
        stripes = region & ((cv.ys.astype(int) // 4) % 2 == 0)
        cv.paint(stripes, scarf_rgb * 0.7)
        cover |= region
    if "cap" in parts:
        brow_low = pts[[0, 1, 2, 3], 1].max() + 1.6 * scale + 1.0
        region = cv.ellipse(cx, cy, a + 3, b + 3) & (cv.ys <= brow_low)
        region |= cv.rect(cx - a - 3, brow_low - 3 * scale, cx + a + 12 * scale, brow_low)  # brim
        cv.paint(region, rng.uniform(0.0, 1.0, 3))
        cover |= region
    if "sunglasses" in parts:
        region = cv.rect(pts[4][0] - 4, pts[5][1] - eh - 3, pts[9][0] + 4, pts[5][1] + eh + 3)
        cv.paint(region, (0.05, 0.05, 0.08))
        cover |= region
    if "glasses" in parts:
        r = ew + 3.5
        frame = np.zeros((n, n), dtype=bool)
        for centre in (pts[5], pts[8]):
            ring = cv.ellipse(centre[0], centre[1], r + 1.2, 0.75 * r + 1.2) & ~cv.ellipse(
                centre[0], centre[1], r, 0.75 * r)
            frame |= ring
        frame |= cv.segment((pts[5][0] + r, pts[5][1]), (pts[8][0] - r, pts[8][1]), 0.9)
        cv.paint(frame, (0.1, 0.1, 0.1))
        cover |= frame

    img = np.clip(cv.img, 0.0, 1.0)
    kps = KeypointSet(pts).with_bounds(n, n)
    ij = np.clip(np.round(pts).astype(int), 0, n - 1)
    occluded = cover[ij[:, 1], ij[:, 0]]
    face = AnnotatedFace(img, kps, params.subject_id, disguise, background, occluded)
    return (face, masks) if return_masks else face


def generate_face(params: FaceParams, disguise: Disguise | str, background: str, rng_seed,
                  cfg: SynthConfig = SynthConfig()) -> AnnotatedFace:
    return render_face(params, disguise, background, rng_seed, cfg)


# --- scenes with several faces ---------------------------------------------

@dataclass
class Scene:
    image: np.ndarray
    boxes: list[tuple[int, int, int, int]]  # (x, y, w, h)
    faces: list[KeypointSet]


def generate_scene(subjects: list[FaceParams], background: str, rng_seed,
                   cfg: SynthConfig = SynthConfig()) -> Scene:
    """Place one rendered face per subject side by side on a shared canvas."""
    rng = np.random.default_rng(rng_seed)
    n = cfg.image_size
    k = len(subjects)
    img = np.zeros((n, n * k, 3))
    boxes, faces = [], []
    for slot, p in enumerate(subjects):
        disguise = DISGUISES[int(rng.integers(len(DISGUISES)))]
        face = generate_face(p, disguise, background, [int(rng.integers(2**31)), slot], cfg)
        x0 = slot * n
        img[:, x0:x0 + n] = face.image
        boxes.append((x0, 0, n, n))
        pts = face.keypoints.points + [x0, 0]
        faces.append(KeypointSet(pts, face.keypoints.visible))
    return Scene(img, boxes, faces)


# --- datasets and manifests -------------------------------------------------

@dataclass
class Record:
    image_path: str
    subject_id: int
    disguise: str
    background: str
    keypoints: list[list[float]]
    visible: list[bool]
    occluded: list[bool]
    split: str

    @property
    def keypoint_set(self) -> KeypointSet:
        return KeypointSet(np.array(self.keypoints), np.array(self.visible))


@dataclass
class DatasetManifest:
    records: list[Record]
    root: Path = Path(".")

    def split(self, name: str) -> list[Record]:
        return [r for r in self.records if r.split == name]

    def load_image(self, rec: Record) -> np.ndarray:
        return load_png(self.root / rec.image_path)

    def __eq__(self, other):
        if not isinstance(other, DatasetManifest):
            return NotImplemented
        return self.records == other.records


_RECORD_FIELDS = ("image_path", "subject_id", "disguise", "background", "keypoints", "visible", "occluded", "split")


def _parse_record(obj, index: int) -> Record:
    if not isinstance(obj, dict):
        raise ParseError(f"record {index}: expected a JSON object")
    missing = [k for k in _RECORD_FIELDS if k not in obj]
    if missing:
        raise ParseError(f"record {index}: missing field(s) {', '.join(missing)}")
    for key in ("keypoints", "visible", "occluded"):
        if not isinstance(obj[key], list) or len(obj[key]) != NUM_KEYPOINTS:
            got = len(obj[key]) if isinstance(obj[key], list) else type(obj[key]).__name__
            raise ParseError(f"record {index}: {key} must have {NUM_KEYPOINTS} entries, got {got}")
    try:
        kps = [[float(x), float(y)] for x, y in obj["keypoints"]]
        Disguise(obj["disguise"])
    except (TypeError, ValueError) as exc:
        raise ParseError(f"record {index}: {exc}") from None
    if obj["split"] not in SPLITS:
        raise ParseError(f"record {index}: unknown split {obj['split']!r}")
    return Record(str(obj["image_path"]), int(obj["subject_id"]), obj["disguise"], obj["background"], kps,
                  [bool(v) for v in obj["visible"]], [bool(v) for v in obj["occluded"]], obj["split"])


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    records = []
    with open(path, encoding="utf-8") as fh:
        for index, line in enumerate(ln for ln in fh if ln.strip()):
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"record {index}: invalid JSON ({exc.msg})") from None
            records.append(_parse_record(obj, index))
    return DatasetManifest(records, path.parent)


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in manifest.records:
            fh.write(json.dumps(asdict(rec), separators=(",", ":")) + "\n")


def assign_splits(subject_ids: list[int], seed: int) -> list[str]:
    """2:1:1 train/val/test assignment, spreading each subject over the splits."""
    rng = np.random.default_rng([seed, 0x59])
    order = []
    for sid in sorted(set(subject_ids)):
        idx = [i for i, s in enumerate(subject_ids) if s == sid]
        order.extend(rng.permutation(idx).tolist())
    out = [""] * len(subject_ids)
    for k, i in enumerate(order):
        out[i] = _SPLIT_CYCLE[k % 4]
    return out


def generate_dataset(n_subjects: int, per_subject: int, background: str, seed: int, out_dir: str | Path,
                     cfg: SynthConfig = SynthConfig()) -> DatasetManifest:
    """Render one reference plus ``per_subject`` disguised images per subject and
    write PNGs and ``manifest.jsonl`` under ``out_dir``."""
    if n_subjects < 1 or per_subject < 1:
        raise ContractError("n_subjects and per_subject must be >= 1")
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    subjects = sample_subjects(n_subjects, seed, cfg)
    plan = []
    for p in subjects:
        plan.append((p, Disguise.NONE))
        plan.extend((p, DISGUISES[j % len(DISGUISES)]) for j in range(per_subject))
    splits = assign_splits([p.subject_id for p, _ in plan], seed)
    records = []
    for index, ((p, disguise), split) in enumerate(zip(plan, splits)):
        face = generate_face(p, disguise, background, [seed, index], cfg)
        rel = f"images/{index:05d}.png"
        save_png(face.image, out_dir / rel)
        records.append(Record(rel, p.subject_id, disguise.value, background,
                              face.keypoints.points.tolist(), face.keypoints.visible.tolist(),
                              face.occluded.tolist(), split))
    manifest = DatasetManifest(records, out_dir)
    save_manifest(manifest, out_dir / "manifest.jsonl")
    return manifest
