"""Synthetic text-segment rendering with per-character attribute labels.

Each sample is a short run of words rendered at natural width on a flat
background. Every visible character carries its own box and six attribute
labels (font, color, bold, italic, underline, strike), so character
reordering and mixed-attribute samples come for free.
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from .errors import ConfigError, DataError, InvalidSpecError

logger = logging.getLogger(__name__)

MANIFEST_VERSION = 1
MIXED = "mixed"
NUM_COLORS = 14

COLOR_TABLE: dict[int, tuple[str, tuple[int, int, int]]] = dict(enumerate([
    ("black", (0, 0, 0)),
    ("white", (255, 255, 255)),
    ("red", (220, 30, 30)),
    ("green", (20, 150, 40)),
    ("blue", (30, 60, 225)),
    ("yellow", (245, 215, 0)),
    ("orange", (250, 140, 0)),
    ("purple", (125, 40, 170)),
    ("brown", (125, 75, 30)),
    ("gray", (128, 128, 128)),
    ("cyan", (0, 200, 215)),
    ("magenta", (220, 0, 200)),
    ("dark-red", (125, 0, 0)),
    ("dark-blue", (0, 0, 115)),
]))

FLAG_NAMES = ("bold", "italic", "underline", "strike")
ATTRIBUTES = ("font", "color") + FLAG_NAMES

# horizontal shear used when a family has no italic face
_SYNTH_SHEAR = 0.22


@dataclass(frozen=True)
class AttributeLabel:
    font_id: int
    color_id: int
    bold: bool = False
    italic: bool = False
    underline: bool = False
    strike: bool = False

    def to_dict(self) -> dict:
        return {
            "font_id": self.font_id, "color_id": self.color_id,
            "bold": self.bold, "italic": self.italic,
            "underline": self.underline, "strike": self.strike,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AttributeLabel":
        missing = {"font_id", "color_id", *FLAG_NAMES} - set(d)
        if missing:
            raise DataError(f"attribute label missing fields: {sorted(missing)}")
        return cls(int(d["font_id"]), int(d["color_id"]), bool(d["bold"]),
                   bool(d["italic"]), bool(d["underline"]), bool(d["strike"]))

    def as_targets(self) -> tuple[int, ...]:
        """Class indices in ``ATTRIBUTES`` order."""
        return (self.font_id, self.color_id, int(self.bold), int(self.italic),
                int(self.underline), int(self.strike))


@dataclass(frozen=True)
class CharBox:
    x0: int
    y0: int
    x1: int
    y1: int
    char: str
    label: AttributeLabel

    @property
    def box(self) -> tuple[int, int, int, int]:
        return (self.x0, self.y0, self.x1, self.y1)

    def to_dict(self) -> dict:
        return {"box": list(self.box), "char": self.char, "label": self.label.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "CharBox":
        x0, y0, x1, y1 = (int(v) for v in d["box"])
        return cls(x0, y0, x1, y1, d["char"], AttributeLabel.from_dict(d["label"]))


SegmentLabel = Union[AttributeLabel, str]


@dataclass
class TextSegmentSample:
    image: np.ndarray  # H x W x 3, uint8
    chars: list[CharBox]
    text: str
    segment_label: SegmentLabel

    @property
    def is_mixed(self) -> bool:
        return self.segment_label == MIXED


@dataclass(frozen=True)
class SegmentSpec:
    """What to render: text plus one label per non-whitespace character."""

    text: str
    labels: tuple[AttributeLabel, ...]
    font_size: int = 24


@dataclass
class CanvasPolicy:
    margin: tuple[int, int] = (2, 8)  # vertical margin range, px
    side_margin: tuple[int, int] = (2, 10)
    min_contrast: float = 0.35


# ---------------------------------------------------------------- fonts


@dataclass(frozen=True)
class FontFamily:
    name: str
    faces: tuple[tuple[str, str], ...]  # (style, path); style in regular/bold/italic/bolditalic

    def path(self, style: str) -> Optional[str]:
        return dict(self.faces).get(style)


def default_font_dir() -> Path:
    return Path(str(resources.files("taco") / "assets" / "fonts"))


def _style_key(style_name: str) -> str:
    s = style_name.lower()
    bold = "bold" in s
    italic = "italic" in s or "oblique" in s
    return {(False, False): "regular", (True, False): "bold",
            (False, True): "italic", (True, True): "bolditalic"}[(bold, italic)]


def load_font_families(font_dir=None, names: Optional[Sequence[str]] = None,
                       limit: Optional[int] = None) -> list[FontFamily]:
    """Group the TrueType/OpenType files in ``font_dir`` into families.

    Families without a regular face are dropped. The result is sorted by
    family name so font ids are stable across machines.
    """
    font_dir = Path(font_dir) if font_dir else default_font_dir()
    if not font_dir.is_dir():
        raise ConfigError(f"font directory not found: {font_dir}")
    grouped: dict[str, dict[str, str]] = {}
    for p in sorted(font_dir.iterdir()):
        if p.suffix.lower() not in (".ttf", ".otf"):
            continue
        try:
            family, style = ImageFont.truetype(str(p), 12).getname()
        except OSError:
            logger.warning("skipping unreadable font %s", p)
            continue
        grouped.setdefault(family, {}).setdefault(_style_key(style), str(p))
    families = [FontFamily(name, tuple(sorted(faces.items())))
                for name, faces in sorted(grouped.items()) if "regular" in faces]
    if names:
        by_name = {f.name: f for f in families}
        unknown = [n for n in names if n not in by_name]
        if unknown:
            raise ConfigError(f"fonts not found in {font_dir}: {unknown}")
        families = [by_name[n] for n in names]
    if limit is not None:
        families = families[:limit]
    if not families:
        raise ConfigError(f"no usable font families in {font_dir}")
    return families


@lru_cache(maxsize=512)
def _truetype(path: str, size: int) -> ImageFont.FreeTypeFont:
    return ImageFont.truetype(path, size)


class FontSet:
    """Font families indexed by ``font_id``."""

    def __init__(self, families: Sequence[FontFamily]):
        self.families = list(families)

    @classmethod
    def from_dir(cls, font_dir=None, names=None, limit=None) -> "FontSet":
        return cls(load_font_families(font_dir, names, limit))

    def __len__(self) -> int:
        return len(self.families)

    @property
    def table(self) -> dict[int, str]:
        return {i: f.name for i, f in enumerate(self.families)}

    def face(self, font_id: int, bold: bool, italic: bool, size: int):
        """Return ``(font, synthetic_bold, synthetic_italic)``.

        Missing variants fall back to the nearest available face and the
        absent property is synthesized at draw time.
        """
        if not 0 <= font_id < len(self.families):
            raise ConfigError(f"no font asset for font_id {font_id} "
                              f"({len(self.families)} families loaded)")
        fam = self.families[font_id]
        want = {(False, False): "regular", (True, False): "bold",
                (False, True): "italic", (True, True): "bolditalic"}[(bold, italic)]
        for style in (want, "italic" if italic else None, "bold" if bold else None, "regular"):
            if style and fam.path(style):
                got = style
                break
        synth_bold = bold and "bold" not in got
        synth_italic = italic and "italic" not in got
        return _truetype(fam.path(got), size), synth_bold, synth_italic


# ------------------------------------------------------------- rendering


def _luminance(rgb) -> float:
    r, g, b = rgb
    return (0.2126 * r + 0.7152 * g + 0.0722 * b) / 255.0


def pick_background(text_colors: Sequence[int], rng: np.random.Generator,
                    min_contrast: float = 0.35) -> int:
    """Sample a palette color contrasting with every text color."""
    lums = [_luminance(COLOR_TABLE[c][1]) for c in text_colors]
    scores = {cid: min(abs(_luminance(rgb) - l) for l in lums)
              for cid, (_, rgb) in COLOR_TABLE.items() if cid not in text_colors}
    ok = sorted(c for c, s in scores.items() if s >= min_contrast)
    if not ok:
        return max(scores, key=scores.get)
    return int(ok[rng.integers(len(ok))])


def rule_thickness(font_size: int) -> int:
    return max(1, round(font_size / 15))


def _glyph_mask(ch, font, synth_bold, synth_italic, height, baseline, pad, advance,
                underline, strike, font_size):
    """Render one character (plus its rules) into an L-mode mask."""
    width = int(np.ceil(advance)) + 2 * pad
    mask = Image.new("L", (width, height), 0)
    draw = ImageDraw.Draw(mask)
    draw.text((pad, baseline), ch, font=font, fill=255, anchor="ls",
              stroke_width=1 if synth_bold else 0, stroke_fill=255)
    if synth_italic:
        # x_in = x_out + k * (y_out - baseline): leans the glyph right about the baseline
        mask = mask.transform(mask.size, Image.AFFINE,
                              (1, _SYNTH_SHEAR, -_SYNTH_SHEAR * baseline, 0, 1, 0),
                              resample=Image.BILINEAR)
        draw = ImageDraw.Draw(mask)
    t = rule_thickness(font_size)
    x_end = pad + max(1, int(round(advance))) - 1
    if underline:
        _, descent = font.getmetrics()
        y_bot = min(height, baseline + max(descent, t + 1))
        draw.rectangle([pad, y_bot - t, x_end, y_bot - 1], fill=255)
    if strike:
        x_height = -font.getbbox("x", anchor="ls")[1]
        y_top = int(round(baseline - x_height / 2 - t / 2))
        draw.rectangle([pad, y_top, x_end, y_top + t - 1], fill=255)
    return mask


def render_segment(spec: SegmentSpec, fonts: FontSet, rng: np.random.Generator,
                   canvas: Optional[CanvasPolicy] = None) -> TextSegmentSample:
    """Render ``spec`` and return the image with per-character boxes.

    ``rng`` drives only canvas choices (margins, background), so the same
    spec and seed always produce identical pixels.
    """
    canvas = canvas or CanvasPolicy()
    if not spec.text or not spec.text.strip():
        raise InvalidSpecError("segment text is empty or whitespace-only")
    glyphs = [c for c in spec.text if not c.isspace()]
    if len(spec.labels) != len(glyphs):
        raise InvalidSpecError(
            f"{len(spec.labels)} labels for {len(glyphs)} visible characters")
    size = int(spec.font_size)
    faces = [fonts.face(l.font_id, l.bold, l.italic, size) for l in spec.labels]

    ascent = max(f.getmetrics()[0] for f, _, _ in faces)
    descent = max(f.getmetrics()[1] for f, _, _ in faces)
    descent = max(descent, 2 * rule_thickness(size))
    top = int(rng.integers(canvas.margin[0], canvas.margin[1] + 1))
    bottom = int(rng.integers(canvas.margin[0], canvas.margin[1] + 1))
    left = int(rng.integers(canvas.side_margin[0], canvas.side_margin[1] + 1))
    right = int(rng.integers(canvas.side_margin[0], canvas.side_margin[1] + 1))
    height = top + ascent + descent + bottom
    baseline = top + ascent

    # layout pass: pen positions for glyphs and spaces
    pad = max(4, size // 3)
    pen, layout, gi = float(left + pad), [], 0
    prev_face = faces[0]
    for ch in spec.text:
        if ch.isspace():
            pen += prev_face[0].getlength(" ")
            continue
        face = faces[gi]
        adv = face[0].getlength(ch) + (1 if face[1] else 0)
        layout.append((ch, int(round(pen)), adv, face, spec.labels[gi]))
        pen += adv
        prev_face = face
        gi += 1
    width = int(np.ceil(pen)) + right + pad + int(round(_SYNTH_SHEAR * ascent))

    text_colors = sorted({l.color_id for l in spec.labels})
    bg = pick_background(text_colors, rng, canvas.min_contrast)
    img = Image.new("RGB", (width, height), COLOR_TABLE[bg][1])

    chars = []
    for ch, x, adv, (font, sb, si), label in layout:
        mask = _glyph_mask(ch, font, sb, si, height, baseline, pad, adv,
                           label.underline, label.strike, size)
        ox = x - pad
        color = Image.new("RGB", mask.size, COLOR_TABLE[label.color_id][1])
        img.paste(color, (ox, 0), mask)
        bbox = mask.getbbox()
        if bbox is None:
            # glyph without ink (e.g. unsupported char): fall back to its advance cell
            bbox = (pad, baseline - 1, pad + max(1, int(round(adv))), baseline)
        x0 = max(0, bbox[0] + ox)
        x1 = min(width, bbox[2] + ox)
        y0 = max(0, bbox[1])
        y1 = min(height, bbox[3])
        chars.append(CharBox(x0, y0, max(x1, x0 + 1), max(y1, y0 + 1), ch, label))

    distinct = set(spec.labels)
    seg_label = spec.labels[0] if len(distinct) == 1 else MIXED
    return TextSegmentSample(np.asarray(img, dtype=np.uint8).copy(), chars, spec.text, seg_label)


# -------------------------------------------------------------- datasets


@dataclass
class DatagenConfig:
    count: int = 500
    mixed_fraction: float = 0.10
    font_dir: Optional[str] = None
    fonts: list = field(default_factory=list)  # family names; empty means all
    num_fonts: int = 4
    corpus: Optional[str] = None
    font_size: tuple[int, int] = (18, 30)
    min_words: int = 1
    max_words: int = 6
    bold_prob: float = 0.3
    italic_prob: float = 0.3
    underline_prob: float = 0.2
    strike_prob: float = 0.2
    margin: tuple[int, int] = (2, 8)
    workers: int = 1

    def validate(self):
        if self.count < 1:
            raise ConfigError("datagen.count must be >= 1")
        if not 0.0 <= self.mixed_fraction <= 1.0:
            raise ConfigError("datagen.mixed_fraction must be in [0, 1]")
        if not 1 <= self.min_words <= self.max_words:
            raise ConfigError("datagen word range must satisfy 1 <= min_words <= max_words")
        if not 0 < self.font_size[0] <= self.font_size[1]:
            raise ConfigError("datagen.font_size must be a positive (low, high) range")
        for name in ("bold_prob", "italic_prob", "underline_prob", "strike_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"datagen.{name} must be in [0, 1]")


def load_corpus(path=None) -> list[str]:
    if path is None:
        text = (resources.files("taco") / "assets" / "corpus.txt").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    words = text.split()
    if not words:
        raise DataError(f"corpus is empty: {path or 'bundled corpus'}")
    return words


def random_label(rng: np.random.Generator, num_fonts: int, cfg: DatagenConfig) -> AttributeLabel:
    return AttributeLabel(
        font_id=int(rng.integers(num_fonts)),
        color_id=int(rng.integers(NUM_COLORS)),
        bold=bool(rng.random() < cfg.bold_prob),
        italic=bool(rng.random() < cfg.italic_prob),
        underline=bool(rng.random() < cfg.underline_prob),
        strike=bool(rng.random() < cfg.strike_prob),
    )


def _perturb(label: AttributeLabel, rng: np.random.Generator, num_fonts: int,
             n_changes: int = 2) -> AttributeLabel:
    """Return a label differing from ``label`` in ``n_changes`` attributes."""
    candidates = [a for a in ATTRIBUTES if a != "font" or num_fonts > 1]
    picked = rng.choice(len(candidates), size=min(n_changes, len(candidates)), replace=False)
    d = label.to_dict()
    for i in sorted(picked):
        attr = candidates[i]
        if attr == "font":
            d["font_id"] = int((label.font_id + rng.integers(1, num_fonts)) % num_fonts)
        elif attr == "color":
            d["color_id"] = int((label.color_id + rng.integers(1, NUM_COLORS)) % NUM_COLORS)
        else:
            d[attr] = not d[attr]
    return AttributeLabel.from_dict(d)


def sample_spec(rng: np.random.Generator, words: Sequence[str], num_fonts: int,
                cfg: DatagenConfig, mixed: bool) -> SegmentSpec:
    while True:
        n = int(rng.integers(cfg.min_words, cfg.max_words + 1))
        start = int(rng.integers(0, max(1, len(words) - n + 1)))
        seg_words = list(words[start:start + n])
        n_glyphs = sum(len(w) for w in seg_words)
        if not mixed or n_glyphs >= 2:
            break
    base = random_label(rng, num_fonts, cfg)
    labels = [base] * n_glyphs
    if mixed:
        alt = _perturb(base, rng, num_fonts)
        if len(seg_words) > 1:
            # split on a word boundary
            k = int(rng.integers(1, len(seg_words)))
            split = sum(len(w) for w in seg_words[:k])
        else:
            split = int(rng.integers(1, n_glyphs))
        labels = [base] * split + [alt] * (n_glyphs - split)
        if rng.random() < 0.5:
            labels = labels[::-1]
    size = int(rng.integers(cfg.font_size[0], cfg.font_size[1] + 1))
    return SegmentSpec(" ".join(seg_words), tuple(labels), size)


@dataclass
class ManifestEntry:
    image: str  # path relative to the manifest directory
    text: str
    segment_label: SegmentLabel
    chars: list[CharBox]
    width: int
    height: int

    def to_dict(self) -> dict:
        seg = self.segment_label if self.segment_label == MIXED else self.segment_label.to_dict()
        return {"image": self.image, "text": self.text, "segment_label": seg,
                "chars": [c.to_dict() for c in self.chars],
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d: dict) -> "ManifestEntry":
        seg = d["segment_label"]
        seg = MIXED if seg == MIXED else AttributeLabel.from_dict(seg)
        return cls(d["image"], d["text"], seg, [CharBox.from_dict(c) for c in d["chars"]],
                   int(d["width"]), int(d["height"]))

    @property
    def is_mixed(self) -> bool:
        return self.segment_label == MIXED


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    font_table: dict[int, str]
    color_table: dict[int, tuple[str, tuple[int, int, int]]] = field(
        default_factory=lambda: dict(COLOR_TABLE))
    root: Path = Path(".")

    @property
    def mixed_fraction(self) -> float:
        if not self.entries:
            return 0.0
        return sum(e.is_mixed for e in self.entries) / len(self.entries)

    def header(self) -> dict:
        return {
            "version": MANIFEST_VERSION,
            "font_table": {str(k): v for k, v in sorted(self.font_table.items())},
            "color_table": {str(k): [n, list(rgb)] for k, (n, rgb) in sorted(self.color_table.items())},
            "mixed_fraction": self.mixed_fraction,
            "count": len(self.entries),
        }

    def dumps(self) -> str:
        lines = [json.dumps(self.header(), sort_keys=True, ensure_ascii=False)]
        lines += [json.dumps(e.to_dict(), sort_keys=True, ensure_ascii=False) for e in self.entries]
        return "\n".join(lines) + "\n"

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.dumps(), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        with open(path, encoding="utf-8") as fh:
            lines = [ln for ln in fh.read().splitlines() if ln.strip()]
        if not lines:
            raise DataError(f"manifest {path} has no header line")
        try:
            head = json.loads(lines[0])
            if head.get("version") != MANIFEST_VERSION:
                raise DataError(f"unsupported manifest version {head.get('version')!r}")
            font_table = {int(k): v for k, v in head["font_table"].items()}
            color_table = {int(k): (v[0], tuple(v[1])) for k, v in head["color_table"].items()}
            entries = [ManifestEntry.from_dict(json.loads(ln)) for ln in lines[1:]]
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise DataError(f"malformed manifest {path}: {exc}") from exc
        return cls(entries, font_table, color_table, root=path.parent)

    def image_path(self, entry: ManifestEntry) -> Path:
        return self.root / entry.image

    def load_image(self, entry: ManifestEntry) -> np.ndarray:
        with Image.open(self.image_path(entry)) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()

    def load_sample(self, index: int) -> TextSegmentSample:
        e = self.entries[index]
        return TextSegmentSample(self.load_image(e), list(e.chars), e.text, e.segment_label)

    @property
    def num_fonts(self) -> int:
        return len(self.font_table)


def _render_one(args):
    idx, seed, cfg, families, words, mixed, out_dir = args
    rng = np.random.default_rng([seed, idx])
    fonts = FontSet(families)
    spec = sample_spec(rng, words, len(fonts), cfg, mixed)
    sample = render_segment(spec, fonts, rng, CanvasPolicy(margin=cfg.margin))
    rel = f"images/{idx:06d}.png"
    Image.fromarray(sample.image).save(Path(out_dir) / rel, format="PNG")
    h, w = sample.image.shape[:2]
    return ManifestEntry(rel, sample.text, sample.segment_label, sample.chars, w, h)


def generate_dataset(cfg: DatagenConfig, out_dir, seed: int = 0,
                     count: Optional[int] = None) -> DatasetManifest:
    """Render ``count`` samples into ``out_dir`` and write ``manifest.jsonl``.

    Exactly ``round(mixed_fraction * count)`` samples are mixed; which ones
    is decided by a seeded permutation. Per-sample randomness comes from
    ``(seed, index)``, so the output does not depend on ``cfg.workers``.
    """
    cfg.validate()
    count = cfg.count if count is None else int(count)
    if count < 1:
        raise ConfigError("count must be >= 1")
    out_dir = Path(out_dir)
    try:
        (out_dir / "images").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out_dir}: {exc}") from exc
    if not os.access(out_dir, os.W_OK):
        raise DataError(f"output directory not writable: {out_dir}")

    families = load_font_families(cfg.font_dir, cfg.fonts or None, cfg.num_fonts or None)
    words = load_corpus(cfg.corpus)

    n_mixed = int(round(cfg.mixed_fraction * count))
    order = np.random.default_rng([seed, 0x6D6978]).permutation(count)
    mixed_idx = set(int(i) for i in order[:n_mixed])
    jobs = [(i, seed, cfg, families, words, i in mixed_idx, str(out_dir)) for i in range(count)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            entries = list(pool.map(_render_one, jobs, chunksize=16))
    else:
        entries = [_render_one(j) for j in jobs]

    manifest = DatasetManifest(entries, {i: f.name for i, f in enumerate(families)},
                               dict(COLOR_TABLE), root=out_dir)
    manifest.save(out_dir / "manifest.jsonl")
    logger.info("wrote %d samples (%d mixed) to %s", count, n_mixed, out_dir)
    return manifest


# ------------------------------------------------------------ validation


@dataclass(frozen=True)
class Violation:
    kind: str  # bounds | label | file | table | order
    index: int
    message: str


def _label_table_problems(label: AttributeLabel, manifest: DatasetManifest):
    out = set()
    if not 0 <= label.font_id < len(manifest.font_table) or label.font_id not in manifest.font_table:
        out.add(("font_id", label.font_id))
    if label.color_id not in manifest.color_table or not 0 <= label.color_id < NUM_COLORS:
        out.add(("color_id", label.color_id))
    return out


def validate_manifest(manifest: Union[DatasetManifest, str, Path],
                      check_files: bool = True) -> list[Violation]:
    """Return every violation found; an empty list means the manifest is valid."""
    if not isinstance(manifest, DatasetManifest):
        manifest = DatasetManifest.load(manifest)
    report: list[Violation] = []
    for i, e in enumerate(manifest.entries):
        if check_files:
            p = manifest.image_path(e)
            if not p.is_file():
                report.append(Violation("file", i, f"missing image {e.image}"))
            else:
                try:
                    with Image.open(p) as im:
                        size = im.size
                except OSError as exc:
                    report.append(Violation("file", i, f"cannot decode {e.image}: {exc}"))
                else:
                    if size != (e.width, e.height):
                        report.append(Violation(
                            "file", i, f"{e.image} is {size}, manifest says {(e.width, e.height)}"))
        for c in e.chars:
            if not (0 <= c.x0 < c.x1 <= e.width and 0 <= c.y0 < c.y1 <= e.height):
                report.append(Violation("bounds", i, f"box {c.box} of {c.char!r} outside "
                                                     f"{e.width}x{e.height}"))
        if any(b.x0 < a.x0 for a, b in zip(e.chars, e.chars[1:])):
            report.append(Violation("order", i, "boxes not ordered left-to-right"))
        labels = {c.label for c in e.chars}
        if e.is_mixed:
            if len(labels) < 2:
                report.append(Violation("label", i, "mixed sample with fewer than 2 distinct labels"))
        elif labels and labels != {e.segment_label}:
            report.append(Violation("label", i, "character labels differ from segment label"))
        problems = set()
        for lab in labels | ({e.segment_label} if not e.is_mixed else set()):
            problems |= _label_table_problems(lab, manifest)
        for name, value in sorted(problems):
            report.append(Violation("table", i, f"{name}={value} not in table"))
    return report
