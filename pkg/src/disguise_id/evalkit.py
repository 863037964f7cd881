"""Keypoint accuracy (PCK), gallery identification and multi-face evaluation."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Protocol, Sequence

import numpy as np

from .augment import AugmentConfig, center_crop_resize
from .errors import ContractError
from .geom import NUM_KEYPOINTS, AffineMap, KeypointSet, crop, resize
from .heatmaps import GaussianSpec, decode
from .network import Regressor
from .starnet import GalleryEntry, StarNet, build_starnet, identify

DEFAULT_DISTANCES = (5.0, 10.0, 15.0)
CURVE_DISTANCES = tuple(float(d) for d in range(0, 16))


@dataclass(frozen=True)
class PckConfig:
    distances: tuple[float, ...] = DEFAULT_DISTANCES
    curve: tuple[float, ...] = CURVE_DISTANCES

    def __post_init__(self):
        for name in ("distances", "curve"):
            d = list(getattr(self, name))
            if any(v < 0 for v in d) or d != sorted(d):
                raise ContractError(f"{name} must be non-negative and sorted")
        if any(v <= 0 for v in self.distances):
            raise ContractError("distances must be positive")


def pck_table(detections: Sequence[KeypointSet], truths: Sequence[KeypointSet],
              distances: Iterable[float]) -> tuple[np.ndarray, np.ndarray]:
    """Per-point accuracy (%) at each distance.

    Returns ``(table, counts)`` with ``table`` of shape (14, len(distances)) and
    ``counts`` the number of visible ground-truth points per keypoint. Rows with
    no visible truth are NaN.
    """
    if len(detections) != len(truths):
        raise ContractError(f"{len(detections)} detections for {len(truths)} ground truths")
    d = np.asarray(list(distances), dtype=np.float64)
    if not detections:
        return np.full((NUM_KEYPOINTS, d.size), np.nan), np.zeros(NUM_KEYPOINTS, dtype=int)
    det = np.stack([k.points for k in detections])
    det_vis = np.stack([k.visible for k in detections])
    gt = np.stack([k.points for k in truths])
    gt_vis = np.stack([k.visible for k in truths])
    dist = np.linalg.norm(det - gt, axis=2)
    dist[~det_vis] = np.inf
    hits = (dist[:, :, None] <= d[None, None, :]) & gt_vis[:, :, None]
    counts = gt_vis.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        table = 100.0 * hits.sum(axis=0) / counts[:, None]
    return table, counts


def mean_pck(detections, truths, d: float = 5.0) -> float:
    table, _ = pck_table(detections, truths, [d])
    return float(np.nanmean(table[:, 0])) if np.any(np.isfinite(table)) else float("nan")


# --- detectors ----------------------------------------------------------------

class Detector(Protocol):
    """Maps a batch of network-input images (N, H, W, C) to keypoint sets in
    the same pixel space."""

    def detect_batch(self, images: np.ndarray) -> list[KeypointSet]: ...


class RegressorDetector:
    def __init__(self, model: Regressor, sigma: float = 1.5, min_peak: float | None = None,
                 batch_size: int = 32, subpixel: bool = False):
        self.model = model
        h, w, _ = model.input_size
        oh, ow, _ = model.output_size
        self.spec = GaussianSpec(sigma, (ow, oh), (w, h))
        self.min_peak = min_peak
        self.batch_size = batch_size
        self.subpixel = subpixel

    @property
    def input_size(self) -> tuple[int, int]:
        h, w, _ = self.model.input_size
        return (w, h)

    def detect_batch(self, images: np.ndarray) -> list[KeypointSet]:
        out = []
        for i in range(0, len(images), self.batch_size):
            hm = self.model.forward(images[i:i + self.batch_size], keep_cache=False)
            out.extend(decode(h.transpose(2, 0, 1), self.spec, self.min_peak, self.subpixel) for h in hm)
        return out


# --- report types ---------------------------------------------------------------

def _clean(v: float) -> float | None:
    return None if v is None or not np.isfinite(v) else float(v)


@dataclass
class PckResult:
    distances: list[float]
    table: list[list[float | None]]
    average: list[float | None]
    curve_distances: list[float]
    curve: list[list[float | None]]
    counts: list[int]
    n_samples: int

    @classmethod
    def compute(cls, detections, truths, cfg: PckConfig) -> "PckResult":
        table, counts = pck_table(detections, truths, cfg.distances)
        curve, _ = pck_table(detections, truths, cfg.curve)
        with np.errstate(all="ignore"):
            avg = [_clean(np.nanmean(table[:, j])) if np.any(np.isfinite(table[:, j])) else None
                   for j in range(table.shape[1])]
        return cls(list(cfg.distances), [[_clean(v) for v in row] for row in table], avg,
                   list(cfg.curve), [[_clean(v) for v in row] for row in curve],
                   [int(c) for c in counts], len(truths))


@dataclass
class DisguiseAccuracy:
    accuracy: float
    n: int


@dataclass
class IdentificationResult:
    gallery_size: int
    accuracy: float
    n_probes: int
    per_disguise: dict[str, DisguiseAccuracy]
    probes: list[dict] = field(default_factory=list)


@dataclass
class EvalReport:
    pck: PckResult | None = None
    slices: dict[str, PckResult] = field(default_factory=dict)
    identification: IdentificationResult | None = None
    multiface: dict[str, PckResult] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True, allow_nan=False) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        ident = d.get("identification")
        if ident is not None:
            ident = IdentificationResult(
                ident["gallery_size"], ident["accuracy"], ident["n_probes"],
                {k: DisguiseAccuracy(**v) for k, v in ident["per_disguise"].items()}, ident["probes"])
        return cls(
            PckResult(**d["pck"]) if d.get("pck") else None,
            {k: PckResult(**v) for k, v in d.get("slices", {}).items()},
            ident,
            {k: PckResult(**v) for k, v in d.get("multiface", {}).items()},
        )

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls.from_dict(json.loads(text))

    def merge(self, other: "EvalReport") -> "EvalReport":
        return EvalReport(other.pck or self.pck, {**self.slices, **other.slices},
                          other.identification or self.identification, {**self.multiface, **other.multiface})


# --- single-face keypoint evaluation -----------------------------------------------

def _load_split(manifest, split: str, limit: int | None):
    recs = manifest.split(split) if split != "all" else list(manifest.records)
    return recs[:limit] if limit is not None else recs


def preprocess_records(manifest, records, aug: AugmentConfig):
    images, truths = [], []
    for rec in records:
        img, kps, _ = center_crop_resize(manifest.load_image(rec), rec.keypoint_set, aug)
        images.append(img)
        truths.append(kps)
    return np.stack(images).astype(np.float32) if images else np.zeros((0,)), truths


def evaluate_detector(detector: Detector, manifest, aug: AugmentConfig, cfg: PckConfig = PckConfig(),
                      split: str = "test", limit: int | None = None) -> EvalReport:
    """PCK of ``detector`` on one split, overall and sliced by background and disguise.

    Empty slices are omitted.
    """
    records = _load_split(manifest, split, limit)
    if not records:
        raise ContractError(f"split {split!r} is empty")
    images, truths = preprocess_records(manifest, records, aug)
    dets = detector.detect_batch(images)
    report = EvalReport(pck=PckResult.compute(dets, truths, cfg))
    groups: dict[str, list[int]] = {}
    for i, rec in enumerate(records):
        groups.setdefault(f"background:{rec.background}", []).append(i)
        groups.setdefault(f"disguise:{rec.disguise}", []).append(i)
    for name in sorted(groups):
        idx = groups[name]
        report.slices[name] = PckResult.compute([dets[i] for i in idx], [truths[i] for i in idx], cfg)
    return report


# --- identification ------------------------------------------------------------------

@dataclass
class Probe:
    subject_id: int
    disguise: str
    starnet: StarNet | None  # None when the star-net could not be built


def safe_starnet(kps: KeypointSet) -> StarNet | None:
    try:
        return build_starnet(kps)
    except ContractError:
        return None


def rank1_identification(probes: Sequence[Probe], references: dict[int, StarNet | None], gallery_size: int = 5,
                         seed: int = 0, wrap: bool = True, k_min: int = 6,
                         keep_probes: bool = True) -> IdentificationResult:
    """Rank-1 accuracy of each probe against its own reference plus
    ``gallery_size - 1`` other subjects drawn with seed ``(seed, probe_index)``.

    A probe whose star-net is missing, or that shares fewer than ``k_min``
    valid angles with some gallery entry, counts as a miss.
    """
    subjects = sorted(references)
    if len(subjects) < gallery_size:
        raise ContractError(f"{len(subjects)} reference subjects, gallery needs {gallery_size}")
    hits: dict[str, list[bool]] = {}
    rows = []
    for index, probe in enumerate(probes):
        if probe.subject_id not in references:
            raise ContractError(f"probe {index}: subject {probe.subject_id} has no reference")
        others = [s for s in subjects if s != probe.subject_id]
        rng = np.random.default_rng([seed, index])
        chosen = [probe.subject_id] + [others[i] for i in sorted(rng.choice(len(others), gallery_size - 1,
                                                                              replace=False))]
        predicted, taus = None, []
        refs = [references[s] for s in chosen]
        if probe.starnet is not None and all(r is not None for r in refs):
            gallery = [GalleryEntry(s, r) for s, r in zip(chosen, refs)]
            try:
                predicted, taus = identify(probe.starnet, gallery, wrap, k_min)
            except ContractError:
                predicted, taus = None, []
        ok = predicted == probe.subject_id
        hits.setdefault(probe.disguise, []).append(ok)
        if keep_probes:
            rows.append({"index": index, "subject_id": probe.subject_id, "disguise": probe.disguise,
                         "gallery": chosen, "taus": [float(t) for t in taus], "predicted": predicted,
                         "correct": bool(ok),
                         "starnet": probe.starnet.to_json() if probe.starnet is not None else None})
    all_hits = [h for v in hits.values() for h in v]
    per = {k: DisguiseAccuracy(100.0 * float(np.mean(v)), len(v)) for k, v in sorted(hits.items())}
    acc = 100.0 * float(np.mean(all_hits)) if all_hits else 0.0
    return IdentificationResult(gallery_size, acc, len(all_hits), per, rows)


def evaluate_identification(detector: Detector, manifest, aug: AugmentConfig, gallery_size: int = 5,
                            seed: int = 0, split: str = "test", wrap: bool = True, k_min: int = 6) -> EvalReport:
    """Detect keypoints on every reference and every disguised probe in ``split``,
    then score rank-1 identification."""
    refs = [r for r in manifest.records if r.disguise == "none"]
    probes = [r for r in _load_split(manifest, split, None) if r.disguise != "none"]
    if len({r.subject_id for r in refs}) < gallery_size:
        raise ContractError(f"need at least {gallery_size} subjects with references")
    ref_imgs, _ = preprocess_records(manifest, refs, aug)
    references: dict[int, StarNet | None] = {}
    for rec, kps in zip(refs, detector.detect_batch(ref_imgs)):
        references.setdefault(rec.subject_id, safe_starnet(kps))
    probe_list = []
    if probes:
        probe_imgs, _ = preprocess_records(manifest, probes, aug)
        for rec, kps in zip(probes, detector.detect_batch(probe_imgs)):
            probe_list.append(Probe(rec.subject_id, rec.disguise, safe_starnet(kps)))
    return EvalReport(identification=rank1_identification(probe_list, references, gallery_size, seed, wrap, k_min))


# --- multiple faces per image ------------------------------------------------------

Box = tuple[int, int, int, int]  # x, y, w, h


class FaceBoxProvider(Protocol):
    def __call__(self, image: np.ndarray) -> list[Box]: ...


class OracleBoxProvider:
    """Returns the generator's own face boxes for scenes it was built from."""

    def __init__(self, scenes):
        self._boxes = {self._key(s.image): list(s.boxes) for s in scenes}

    @staticmethod
    def _key(image: np.ndarray) -> bytes:
        import hashlib

        return hashlib.sha256(np.ascontiguousarray(image).tobytes()).digest()

    def __call__(self, image: np.ndarray) -> list[Box]:
        return list(self._boxes.get(self._key(image), []))


def box_to_input_map(box: Box, input_size: tuple[int, int]) -> AffineMap:
    """Scene coordinates -> network-input coordinates for a crop of ``box``."""
    x, y, w, h = box
    return AffineMap.translation(-x, -y).then(AffineMap.scaling(input_size[0] / w, input_size[1] / h))


def _match_face(box: Box, faces: Sequence[KeypointSet]) -> int | None:
    x, y, w, h = box
    for i, f in enumerate(faces):
        cx, cy = f.points[f.visible].mean(axis=0) if f.visible.any() else f.points.mean(axis=0)
        if x <= cx < x + w and y <= cy < y + h:
            return i
    return None


def evaluate_multiface(detector: Detector, scenes, provider: FaceBoxProvider, input_size: tuple[int, int],
                       cfg: PckConfig = PckConfig(), log: Callable[[str], None] | None = None) -> EvalReport:
    """Crop every provided box, detect, map back to scene pixels and score
    against the face whose keypoints fall in the box. Results are grouped by
    the number of faces in the scene ("2-face", "3-face", ...)."""
    groups: dict[int, tuple[list, list]] = {}
    for si, scene in enumerate(scenes):
        boxes = provider(scene.image)
        if not boxes:
            if log:
                log(f"scene {si}: no face boxes, skipped")
            continue
        crops, maps, truths = [], [], []
        for box in boxes:
            j = _match_face(box, scene.faces)
            if j is None:
                if log:
                    log(f"scene {si}: box {box} matches no annotated face")
                continue
            x, y, w, h = box
            img, _ = crop(scene.image, scene.faces[j], (x, y), (w, h))
            img, _ = resize(img, scene.faces[j], input_size)
            crops.append(img)
            maps.append(box_to_input_map(box, input_size).inverse())
            truths.append(scene.faces[j])
        if not crops:
            continue
        dets = detector.detect_batch(np.stack(crops).astype(np.float32))
        back = [KeypointSet(m.apply(d.points), d.visible) for d, m in zip(dets, maps)]
        g = groups.setdefault(len(scene.faces), ([], []))
        g[0].extend(back)
        g[1].extend(truths)
    return EvalReport(multiface={f"{n}-face": PckResult.compute(d, t, cfg) for n, (d, t) in sorted(groups.items())})


# --- report files ----------------------------------------------------------------------

def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def _pck_csv(res: PckResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["point"] + [f"d={d:g}" for d in res.distances])
    for i, row in enumerate(res.table):
        w.writerow([f"P{i + 1}"] + [_fmt(v) for v in row])
    w.writerow(["All"] + [_fmt(v) for v in res.average])
    return buf.getvalue()


def _curves_csv(res: PckResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["point", "d", "accuracy"])
    for i, row in enumerate(res.curve):
        for d, v in zip(res.curve_distances, row):
            w.writerow([f"P{i + 1}", f"{d:g}", _fmt(v)])
    return buf.getvalue()


def _identification_csv(res: IdentificationResult | None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["disguise", "accuracy", "n"])
    if res is not None:
        for name, acc in res.per_disguise.items():
            w.writerow([name, _fmt(acc.accuracy), acc.n])
        w.writerow(["all", _fmt(res.accuracy), res.n_probes])
    return buf.getvalue()


_SERIES_COLORS = {"background:simple": "#d62728", "background:complex": "#2ca02c"}


def _curves_svg(report: EvalReport) -> str:
    series = [(k, report.slices[k], c) for k, c in _SERIES_COLORS.items() if k in report.slices]
    if not series and report.pck is not None:
        series = [("all", report.pck, "#d62728")]
    pw, ph, pad = 160, 120, 24
    cols = 7
    width, height = cols * (pw + pad) + pad, 2 * (ph + pad + 14) + pad + 20
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}">',
           f'<rect width="{width}" height="{height}" fill="white"/>']
    for p in range(14):
        ox = pad + (p % cols) * (pw + pad)
        oy = pad + 14 + (p // cols) * (ph + pad + 14)
        out.append(f'<text x="{ox}" y="{oy - 4}" font-size="11" font-family="sans-serif">P{p + 1}</text>')
        out.append(f'<rect x="{ox}" y="{oy}" width="{pw}" height="{ph}" fill="none" stroke="#999"/>')
        for _, res, color in series:
            ds = res.curve_distances
            dmax = max(ds[-1], 1e-9)
            pts = [f"{ox + pw * d / dmax:.2f},{oy + ph * (1 - v / 100):.2f}"
                   for d, v in zip(ds, res.curve[p]) if v is not None]
            if pts:
                out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{" ".join(pts)}"/>')
    ly = height - 8
    for i, (name, _, color) in enumerate(series):
        out.append(f'<text x="{pad + i * 160}" y="{ly}" font-size="11" font-family="sans-serif" '
                   f'fill="{color}">{name}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_report(report: EvalReport, out_dir: str | Path) -> list[Path]:
    """Write report.json, table_pck.csv, curves.csv, identification.csv and curves.svg."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    empty = PckResult(list(DEFAULT_DISTANCES), [[None] * 3 for _ in range(NUM_KEYPOINTS)], [None] * 3,
                      list(CURVE_DISTANCES), [[None] * len(CURVE_DISTANCES) for _ in range(NUM_KEYPOINTS)],
                      [0] * NUM_KEYPOINTS, 0)
    pck = report.pck or empty
    files = {
        "report.json": report.to_json(),
        "table_pck.csv": _pck_csv(pck),
        "curves.csv": _curves_csv(pck),
        "identification.csv": _identification_csv(report.identification),
        "curves.svg": _curves_svg(report),
    }
    written = []
    for name, text in files.items():
        path = out_dir / name
        path.write_text(text, encoding="utf-8", newline="\n")
        written.append(path)
    return written
