"""Command-line entry point: ``disguise-id {synth,train,detect,identify,evaluate}``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from collections import Counter
from pathlib import Path

import numpy as np

from . import __version__
from .augment import center_crop_resize
from .checkpoint import load_checkpoint
from .config import dump_config, load_config
from .errors import CheckpointError, ContractError, ParseError, TrainingDivergence
from .evalkit import (
    OracleBoxProvider, RegressorDetector, emit_report, evaluate_detector, evaluate_identification,
    evaluate_multiface,
)
from .geom import KeypointSet, load_png
from .starnet import GalleryEntry, build_starnet, identify

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_CONTRACT, EXIT_DIVERGED = 0, 2, 3, 4, 5

log = logging.getLogger("disguise_id")


def _write_config(cfg, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.ini").write_text(dump_config(cfg), encoding="utf-8")


def cmd_synth(args) -> int:
    from .synth import SynthConfig, generate_dataset

    cfg = load_config(args.config)
    s = cfg.synth
    size = args.image_size or s.image_size
    scfg = dataclasses.replace(SynthConfig().scaled(size), separation_margin=s.separation_margin)
    subjects = args.subjects if args.subjects is not None else s.subjects
    per = args.per_subject if args.per_subject is not None else s.per_subject
    seed = args.seed if args.seed is not None else s.seed
    background = args.background or s.background
    manifest = generate_dataset(subjects, per, background, seed, args.out, scfg)
    counts = Counter(r.split for r in manifest.records)
    print(Path(args.out) / "manifest.jsonl")
    print(f"records {len(manifest.records)} train {counts['train']} val {counts['val']} test {counts['test']}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .network import Regressor, default_layers
    from .synth import load_manifest
    from .train import train

    cfg = load_config(args.config)
    overrides = {k: v for k, v in (("epochs", args.epochs), ("seed", args.seed)) if v is not None}
    if overrides:
        cfg.train = dataclasses.replace(cfg.train, **overrides)
    manifest = load_manifest(args.manifest)
    w, h = cfg.input_size
    model = Regressor(default_layers(cfg.model.width), (h, w, 3), seed=cfg.model.init_seed)
    out = Path(args.out)
    _write_config(cfg, out)
    _, tlog = train(model, manifest, cfg.train, cfg.augment, cfg.gaussian, out)
    print(f"best epoch {tlog.best_epoch}; checkpoints and train_log.csv in {out}")
    return EXIT_OK


def _detector(path, args):
    model, prep = load_checkpoint(path)
    return RegressorDetector(model, sigma=args.sigma, min_peak=args.min_peak), prep


def _detect_image(detector, prep, image: np.ndarray) -> KeypointSet:
    x, _, amap = center_crop_resize(image, None, prep)
    k = detector.detect_batch(x[None].astype(np.float32))[0]
    return KeypointSet(amap.inverse().apply(k.points), k.visible)


def _draw_overlay(image: np.ndarray, kps: KeypointSet, path: str) -> None:
    from PIL import Image, ImageDraw

    rgb = image if image.shape[2] == 3 else np.repeat(image[:, :, :1], 3, axis=2)
    im = Image.fromarray(np.round(np.clip(rgb, 0, 1) * 255).astype(np.uint8))
    draw = ImageDraw.Draw(im)
    nose = kps.points[10]
    for i, ((x, y), v) in enumerate(zip(kps.points, kps.visible)):
        if not v:
            continue
        if kps.visible[10] and i != 10:
            draw.line([tuple(nose), (x, y)], fill=(255, 255, 0), width=1)
        draw.ellipse([x - 2, y - 2, x + 2, y + 2], fill=(255, 0, 0))
    im.save(path, format="PNG")


def cmd_detect(args) -> int:
    detector, prep = _detector(args.checkpoint, args)
    image = load_png(args.image)
    kps = _detect_image(detector, prep, image)
    for i, ((x, y), v) in enumerate(zip(kps.points, kps.visible)):
        print(f"P{i + 1} {x:.2f} {y:.2f} {'visible' if v else 'not-visible'}")
    if args.overlay:
        _draw_overlay(image, kps, args.overlay)
    return EXIT_OK


def _gallery_item(text: str, index: int) -> tuple[int, str]:
    sid, sep, path = text.partition("=")
    if sep and sid.strip().lstrip("-").isdigit():
        return int(sid), path
    return index, text


def cmd_identify(args) -> int:
    detector, prep = _detector(args.checkpoint, args)
    probe = build_starnet(_detect_image(detector, prep, load_png(args.probe)))
    gallery, paths = [], []
    for i, item in enumerate(args.gallery):
        sid, path = _gallery_item(item, i)
        gallery.append(GalleryEntry(sid, build_starnet(_detect_image(detector, prep, load_png(path)))))
        paths.append(path)
    best, taus = identify(probe, gallery, wrap=not args.no_wrap, k_min=args.k_min)
    for entry, path, tau in zip(gallery, paths, taus):
        print(f"subject {entry.subject_id} tau {tau:.6f} {path}")
    print(f"identified subject {best}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .synth import SynthConfig, generate_scene, load_manifest, sample_subjects

    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.eval = dataclasses.replace(cfg.eval, seed=args.seed)
    detector, prep = _detector(args.checkpoint, args)
    manifest = load_manifest(args.manifest)
    e = cfg.eval
    report = evaluate_detector(detector, manifest, prep, cfg.pck, split=e.split)
    n_ref = len({r.subject_id for r in manifest.records if r.disguise == "none"})
    if n_ref >= e.gallery_size:
        report = report.merge(evaluate_identification(detector, manifest, prep, e.gallery_size, e.seed, e.split,
                                                      e.wrap, e.k_min))
    else:
        log.warning("identification skipped: %d reference subjects < gallery size %d", n_ref, e.gallery_size)
    if args.multiface:
        size = manifest.load_image(manifest.records[0]).shape[0]
        background = Counter(r.background for r in manifest.records).most_common(1)[0][0]
        scfg = SynthConfig().scaled(size)
        people = sample_subjects(3 * e.multiface_scenes, e.seed + 1, scfg)
        scenes = []
        for k in (2, 3):
            for i in range(e.multiface_scenes):
                chosen = [people[(i * 3 + j) % len(people)] for j in range(k)]
                scenes.append(generate_scene(chosen, background, [e.seed, k, i], scfg))
        provider = OracleBoxProvider(scenes)
        report = report.merge(evaluate_multiface(detector, scenes, provider, detector.input_size, cfg.pck,
                                                 log=log.warning))
    out = Path(args.out)
    _write_config(cfg, out)
    for path in emit_report(report, out):
        print(path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="disguise-id", description="Facial keypoint detection and "
                                "star-net identification of disguised faces.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic annotated face dataset")
    s.add_argument("--subjects", type=int, help="number of subjects")
    s.add_argument("--per-subject", type=int, help="disguised images per subject (plus one reference)")
    s.add_argument("--background", choices=("simple", "complex"))
    s.add_argument("--seed", type=int)
    s.add_argument("--image-size", type=int, help="square image size in pixels")
    s.add_argument("--config", help="run configuration file")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train the keypoint regressor")
    t.add_argument("--manifest", required=True)
    t.add_argument("--config", help="run configuration file")
    t.add_argument("--epochs", type=int, help="override [train] epochs")
    t.add_argument("--seed", type=int, help="override [train] seed")
    t.add_argument("--out", required=True, help="directory for checkpoints, log and config echo")
    t.set_defaults(func=cmd_train)

    def detector_flags(q):
        q.add_argument("--checkpoint", required=True)
        q.add_argument("--sigma", type=float, default=1.5, help="heatmap Gaussian sigma (cells)")
        q.add_argument("--min-peak", type=float, help="visibility threshold on the heatmap peak")

    d = sub.add_parser("detect", help="print the 14 keypoints of one image")
    detector_flags(d)
    d.add_argument("--image", required=True)
    d.add_argument("--overlay", help="write a PNG with keypoints and star-net drawn on the image")
    d.set_defaults(func=cmd_detect)

    i = sub.add_parser("identify", help="match a probe image against gallery images")
    detector_flags(i)
    i.add_argument("--probe", required=True)
    i.add_argument("--gallery", required=True, nargs="+", metavar="[ID=]PATH",
                   help="gallery images; ids default to their position")
    i.add_argument("--no-wrap", action="store_true", help="use the plain |a-b| angle difference")
    i.add_argument("--k-min", type=int, default=6, help="minimum shared valid angles")
    i.set_defaults(func=cmd_identify)

    e = sub.add_parser("evaluate", help="write PCK and identification reports")
    detector_flags(e)
    e.add_argument("--manifest", required=True)
    e.add_argument("--config", help="run configuration file")
    e.add_argument("--seed", type=int, help="override [eval] seed")
    e.add_argument("--multiface", action="store_true", help="also score 2- and 3-face scenes")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_evaluate)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except TrainingDivergence as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ParseError, ContractError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
