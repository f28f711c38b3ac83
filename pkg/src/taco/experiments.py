"""Desk-scale comparisons: pre-train variants, then linear-probe each backbone."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional

from . import pipeline
from .config import RunConfig
from .datagen import DatasetManifest, generate_dataset

logger = logging.getLogger(__name__)

RANDOM_INIT = "random_init"

# the three backbones compared by the acceptance gate
STANDARD_VARIANTS = {
    "full": {},
    "no_crop": {"augment.use_crop": False},
    RANDOM_INIT: None,
}

# desk-scale settings shared by every variant; see README for the budget
DESK_OVERRIDES = {
    "model.widths": [16, 32, 64, 128],
    "pipeline.epochs": 60,
}


@dataclass
class VariantResult:
    name: str
    font_f1: float
    average_accuracy: float
    report: dict
    pretrain_seconds: float = 0.0
    curve: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"name": self.name, "font_f1": self.font_f1,
                "average_accuracy": self.average_accuracy, "report": self.report,
                "pretrain_seconds": self.pretrain_seconds, "curve": self.curve}


def desk_config(seed: int = 0, overrides: Optional[Mapping] = None) -> RunConfig:
    """Defaults sized for a single CPU, plus dotted-key ``overrides``."""
    cfg = RunConfig(seed=seed)
    for key, value in (overrides or {}).items():
        cfg.set(key, value, "flag")
    return cfg.validate()


def ensure_dataset(work_dir, count: int = 500, seed: int = 0, num_fonts: int = 4) -> DatasetManifest:
    path = Path(work_dir) / "data" / "manifest.jsonl"
    if path.is_file():
        m = DatasetManifest.load(path)
        if len(m.entries) == count and m.num_fonts == num_fonts:
            return m
    cfg = desk_config(seed, {"datagen.count": count, "datagen.num_fonts": num_fonts})
    return generate_dataset(cfg.datagen, path.parent, seed=seed)


def run_variant(name: str, manifest: DatasetManifest, work_dir, overrides: Optional[Mapping],
                base: Optional[Mapping] = None, seed: int = 0) -> VariantResult:
    """Pre-train with ``overrides`` (None means random init), then linear-probe."""
    out = Path(work_dir) / name
    cached = out / "result.json"
    cfg = desk_config(seed, {**(base or {}), **(overrides or {})})
    if cached.is_file():
        data = json.loads(cached.read_text())
        if data.get("config") == cfg.to_dict():
            return VariantResult(**data["result"])
    seconds, curve, ckpt = 0.0, [], None
    if overrides is not None:
        t0 = time.perf_counter()
        res = pipeline.pretrain(cfg, manifest, out)
        seconds = time.perf_counter() - t0
        curve, ckpt = res.epoch_totals(), res.checkpoint
    le = pipeline.linear_eval(cfg, manifest, ckpt, random_init=overrides is None)
    result = VariantResult(name, le.report["font"].f1, le.report.average_accuracy,
                           le.report.to_dict(), seconds, curve)
    out.mkdir(parents=True, exist_ok=True)
    cached.write_text(json.dumps({"config": cfg.to_dict(), "result": result.to_dict()}, indent=2))
    logger.info("%s: font F1 %.2f, average accuracy %.2f", name, result.font_f1,
                result.average_accuracy)
    return result


def compare(work_dir, variants: Mapping[str, Optional[Mapping]] = None,
            base: Optional[Mapping] = None, count: int = 500, seed: int = 0) -> dict:
    manifest = ensure_dataset(work_dir, count, seed)
    variants = STANDARD_VARIANTS if variants is None else variants
    return {name: run_variant(name, manifest, work_dir, ov, base, seed)
            for name, ov in variants.items()}
