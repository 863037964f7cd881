"""Run configuration: ``[section]`` blocks of ``key = value`` lines.

Two presets set the defaults: ``full`` (264 px source images cropped to 248
and resized to 256, 64x64 heatmaps, full-width network, the long
learning-rate schedule against un-scaled targets) and ``desk`` (132 px source,
124 crop, 128 input, 32x32 heatmaps, half-width network, a schedule that
trains in CPU minutes). Any key may be overridden.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field
from pathlib import Path

from .augment import AugmentConfig
from .errors import ParseError
from .evalkit import PckConfig
from .heatmaps import GaussianSpec
from .train import TrainConfig


@dataclass
class SynthSettings:
    image_size: int = 264
    subjects: int = 25
    per_subject: int = 10
    background: str = "simple"
    seed: int = 0
    separation_margin: float = 0.15


@dataclass
class ModelSettings:
    width: float = 1.0
    sigma: float = 1.5
    init_seed: int = 0


@dataclass
class EvalSettings:
    gallery_size: int = 5
    seed: int = 0
    split: str = "test"
    wrap: bool = True
    k_min: int = 6
    multiface_scenes: int = 20


@dataclass
class RunConfig:
    preset: str = "full"
    synth: SynthSettings = field(default_factory=SynthSettings)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    model: ModelSettings = field(default_factory=ModelSettings)
    train: TrainConfig = field(default_factory=TrainConfig)
    pck: PckConfig = field(default_factory=PckConfig)
    eval: EvalSettings = field(default_factory=EvalSettings)

    @property
    def input_size(self) -> tuple[int, int]:
        return tuple(self.augment.output_size)

    @property
    def gaussian(self) -> GaussianSpec:
        w, h = self.input_size
        return GaussianSpec(self.model.sigma, (w // 4, h // 4), (w, h))


def preset(name: str) -> RunConfig:
    if name == "full":
        return RunConfig(preset="full", train=TrainConfig(target_scale=1.0))
    if name == "desk":
        return RunConfig(
            preset="desk",
            synth=SynthSettings(image_size=132),
            augment=AugmentConfig(crop_size=(124, 124), output_size=(128, 128), enabled=False),
            model=ModelSettings(width=0.5),
            train=TrainConfig(base_lr=3e-4, lr_after_drop=3e-5, drop_epoch=25, epochs=30),
        )
    raise ParseError(f"unknown preset {name!r} (expected 'full' or 'desk')")


SECTIONS = {"synth": "synth", "augment": "augment", "model": "model", "train": "train", "pck": "pck", "eval": "eval"}


def _convert(raw: str, current, where: str):
    raw = raw.strip()
    try:
        if isinstance(current, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if isinstance(current, tuple):
            parts = [p for p in raw.replace(",", " ").split() if p]
            kind = type(current[0]) if current else float
            return tuple(kind(p) for p in parts)
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float) or current is None:
            return None if raw.lower() in ("none", "auto") else float(raw)
        return raw
    except ValueError as exc:
        raise ParseError(f"{where}: {exc}") from None


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, default_section="\x00unused")
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ParseError(f"{source}: {exc}") from None
    name = "full"
    if cp.has_section("run"):
        unknown = set(cp["run"]) - {"preset"}
        if unknown:
            raise ParseError(f"{source}: unknown key(s) in [run]: {', '.join(sorted(unknown))}")
        name = cp["run"].get("preset", "full").strip()
    cfg = preset(name)
    for section in cp.sections():
        if section == "run":
            continue
        if section not in SECTIONS:
            raise ParseError(f"{source}: unknown section [{section}]")
        obj = getattr(cfg, section)
        known = {f.name: f for f in dataclasses.fields(obj)}
        updates = {}
        for key, raw in cp[section].items():
            if key not in known:
                raise ParseError(f"{source}: unknown key {key!r} in [{section}]")
            updates[key] = _convert(raw, getattr(obj, key), f"{source} [{section}] {key}")
        try:
            setattr(cfg, section, dataclasses.replace(obj, **updates))
        except (ValueError, TypeError) as exc:
            raise ParseError(f"{source} [{section}]: {exc}") from None
    return cfg


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return preset("full")
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), str(path))


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(repr(v) if isinstance(v, float) else str(v) for v in value)
    if value is None:
        return "auto"
    return repr(value) if isinstance(value, float) else str(value)


def dump_config(cfg: RunConfig) -> str:
    """Fully resolved configuration in the same file format."""
    buf = io.StringIO()
    buf.write(f"[run]\npreset = {cfg.preset}\n")
    for section in SECTIONS:
        buf.write(f"\n[{section}]\n")
        obj = getattr(cfg, section)
        for f in dataclasses.fields(obj):
            buf.write(f"{f.name} = {_render(getattr(obj, f.name))}\n")
    return buf.getvalue()
