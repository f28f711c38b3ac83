"""View generation for contrastive pre-training.

Three operators make up the augmentation family: character reordering,
random crop with aspect-preserving rescale onto the fixed canvas, and color
jitter. Images are float32 ``H x W x 3`` arrays in ``[0, 1]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
import torchvision.transforms.functional as TF

from .datagen import TextSegmentSample
from .errors import ConfigError

CANVAS = (32, 256)


@dataclass
class AugmentConfig:
    crop_ratio_h: tuple[float, float] = (0.8, 1.0)
    crop_ratio_w: tuple[float, float] = (0.6, 1.0)
    jitter_strengths: tuple[float, float, float, float] = (0.4, 0.4, 0.4, 0.1)
    jitter_prob: float = 0.8
    reorder_prob: float = 0.5
    reorder_unit: str = "char"  # or "word"
    canvas: tuple[int, int] = CANVAS
    use_crop: bool = True
    use_jitter: bool = True
    use_reorder: bool = True

    def validate(self):
        for name in ("jitter_prob", "reorder_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"augment.{name} must be in [0, 1]")
        for name in ("crop_ratio_h", "crop_ratio_w"):
            lo, hi = getattr(self, name)
            if not 0.0 < lo <= hi <= 1.0:
                raise ConfigError(f"augment.{name} must be an interval within (0, 1]")
        if len(self.jitter_strengths) != 4 or min(self.jitter_strengths) < 0:
            raise ConfigError("augment.jitter_strengths must be 4 non-negative reals")
        if self.jitter_strengths[3] > 0.5:
            raise ConfigError("augment hue strength must be <= 0.5")
        if self.reorder_unit not in ("char", "word"):
            raise ConfigError("augment.reorder_unit must be 'char' or 'word'")
        if min(self.canvas) < 1:
            raise ConfigError("augment.canvas must be positive")

    @classmethod
    def identity(cls, **kw) -> "AugmentConfig":
        """All randomness gated off; views reduce to canvas fitting."""
        base = dict(crop_ratio_h=(1.0, 1.0), crop_ratio_w=(1.0, 1.0),
                    jitter_prob=0.0, reorder_prob=0.0)
        base.update(kw)
        return cls(**base)


@dataclass
class ViewTriple:
    view_i: np.ndarray
    view_j: np.ndarray
    view_k: np.ndarray  # color jitter only, full content
    source_id: int = -1


def to_float(image: np.ndarray) -> np.ndarray:
    if image.dtype == np.uint8:
        return image.astype(np.float32) / 255.0
    return image.astype(np.float32, copy=False)


def _resize(image: np.ndarray, h: int, w: int) -> np.ndarray:
    if image.shape[:2] == (h, w):
        return image
    t = torch.from_numpy(np.ascontiguousarray(image)).permute(2, 0, 1)[None]
    out = F.interpolate(t, size=(h, w), mode="bilinear", align_corners=False, antialias=True)
    return out[0].permute(1, 2, 0).clamp_(0.0, 1.0).numpy()


def fit_size(h: int, w: int, canvas: Sequence[int] = CANVAS) -> tuple[int, int]:
    """Largest (h', w') with the aspect of (h, w) fitting the canvas; sides floored."""
    ch, cw = canvas
    if h * cw >= w * ch:  # height-limited
        return ch, max(1, min(cw, (w * ch) // h))
    return max(1, min(ch, (h * cw) // w)), cw


def border_median(image: np.ndarray) -> np.ndarray:
    edges = np.concatenate([image[0], image[-1], image[:, 0], image[:, -1]], axis=0)
    return np.median(edges, axis=0).astype(image.dtype)


def canvas_fit(image: np.ndarray, canvas: Sequence[int] = CANVAS,
               pad_color: Optional[np.ndarray] = None, return_size: bool = False):
    """Scale isotropically onto the canvas, left-aligned and vertically centered."""
    image = to_float(image)
    h, w = image.shape[:2]
    nh, nw = fit_size(h, w, canvas)
    if pad_color is None:
        pad_color = border_median(image)
    out = np.empty((canvas[0], canvas[1], 3), dtype=np.float32)
    out[...] = pad_color
    top = (canvas[0] - nh) // 2
    out[top:top + nh, :nw] = _resize(image, nh, nw)
    if return_size:
        return out, (nh, nw)
    return out


def crop_box(shape, rng: np.random.Generator, config: AugmentConfig) -> tuple[int, int, int, int]:
    """Sample ``(top, left, height, width)`` of a crop region."""
    h, w = shape[:2]
    rh = rng.uniform(*config.crop_ratio_h)
    rw = rng.uniform(*config.crop_ratio_w)
    ch = min(h, max(1, int(round(rh * h))))
    cw = min(w, max(1, int(round(rw * w))))
    top = int(rng.integers(0, h - ch + 1))
    left = int(rng.integers(0, w - cw + 1))
    return top, left, ch, cw


def random_crop_scale(image: np.ndarray, rng: np.random.Generator,
                      config: AugmentConfig, return_size: bool = False):
    image = to_float(image)
    top, left, ch, cw = crop_box(image.shape, rng, config)
    crop = image[top:top + ch, left:left + cw]
    return canvas_fit(crop, config.canvas, return_size=return_size)


_JITTER_OPS = ("brightness", "contrast", "saturation", "hue")


def apply_jitter(image: np.ndarray, factors: Sequence[float],
                 order: Sequence[int] = (0, 1, 2, 3)) -> np.ndarray:
    """Apply brightness/contrast/saturation factors and a hue shift in ``order``.

    Identity factors (1, 1, 1, 0) are skipped so they leave pixels untouched.
    """
    t = torch.from_numpy(np.ascontiguousarray(to_float(image))).permute(2, 0, 1)
    for k in order:
        f = float(factors[k])
        if k == 0 and f != 1.0:
            t = TF.adjust_brightness(t, f)
        elif k == 1 and f != 1.0:
            t = TF.adjust_contrast(t, f)
        elif k == 2 and f != 1.0:
            t = TF.adjust_saturation(t, f)
        elif k == 3 and f != 0.0:
            t = TF.adjust_hue(t, f)
    return t.clamp(0.0, 1.0).permute(1, 2, 0).numpy().astype(np.float32, copy=False)


def sample_jitter(rng: np.random.Generator, strengths: Sequence[float]):
    b, c, s, h = strengths
    factors = (rng.uniform(1 - b, 1 + b), rng.uniform(1 - c, 1 + c),
               rng.uniform(max(0.0, 1 - s), 1 + s), rng.uniform(-h, h))
    return factors, tuple(int(i) for i in rng.permutation(4))


def color_jitter(image: np.ndarray, rng: np.random.Generator, config: AugmentConfig) -> np.ndarray:
    image = to_float(image)
    gate = rng.random()
    factors, order = sample_jitter(rng, config.jitter_strengths)
    if gate >= config.jitter_prob:
        return image
    strengths = config.jitter_strengths
    factors = tuple(f if s > 0 else (0.0 if k == 3 else 1.0)
                    for k, (f, s) in enumerate(zip(factors, strengths)))
    return apply_jitter(image, factors, order)


def reorder_slots(sample: TextSegmentSample, unit: str = "char") -> list[tuple[int, int, int, int]]:
    """Horizontal slots (x0, y0, x1, y1) to permute, spanning the full text line."""
    if not sample.chars:
        return []
    y0 = min(c.y0 for c in sample.chars)
    y1 = max(c.y1 for c in sample.chars)
    if unit == "char":
        return [(c.x0, y0, c.x1, y1) for c in sample.chars]
    slots, gi = [], 0
    for word in sample.text.split():
        group = sample.chars[gi:gi + len(word)]
        gi += len(word)
        if group:
            slots.append((min(c.x0 for c in group), y0, max(c.x1 for c in group), y1))
    return slots


def permute_regions(image: np.ndarray, slots, perm: Sequence[int]) -> np.ndarray:
    """Paste the content of slot ``perm[d]`` into slot ``d``, resizing as needed."""
    image = to_float(image)
    out = image.copy()
    for d, s in enumerate(perm):
        if d == s:
            continue
        sx0, sy0, sx1, sy1 = slots[s]
        dx0, dy0, dx1, dy1 = slots[d]
        out[dy0:dy1, dx0:dx1] = _resize(image[sy0:sy1, sx0:sx1], dy1 - dy0, dx1 - dx0)
    return out


def reorder_characters(sample: TextSegmentSample, rng: np.random.Generator, prob: float,
                       unit: str = "char", image: Optional[np.ndarray] = None) -> np.ndarray:
    image = to_float(sample.image if image is None else image)
    slots = reorder_slots(sample, unit)
    if len(slots) < 2:
        return image
    gate = rng.random()
    perm = rng.permutation(len(slots))
    if gate >= prob:
        return image
    return permute_regions(image, slots, perm)


def make_view_triple(sample: TextSegmentSample, rng: np.random.Generator,
                     config: AugmentConfig, source_id: int = -1) -> ViewTriple:
    """Two fully augmented views plus the intact, jitter-only view.

    The three views use independent child streams of ``rng`` (i, j, k).
    """
    rng_i, rng_j, rng_k = rng.spawn(3)
    base = to_float(sample.image)

    def full(r):
        img = base
        if config.use_reorder:
            img = reorder_characters(sample, r, config.reorder_prob, config.reorder_unit, img)
        if config.use_crop:
            img = random_crop_scale(img, r, config)
        else:
            img = canvas_fit(img, config.canvas)
        if config.use_jitter:
            img = color_jitter(img, r, config)
        return img

    jit = color_jitter(base, rng_k, config) if config.use_jitter else base
    view_k = canvas_fit(jit, config.canvas)
    return ViewTriple(full(rng_i), full(rng_j), view_k, source_id)
