"""Encoder with embedded MAEM, SimSiam-style heads and attribute classifiers."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn

from .augment import CANVAS
from .datagen import ATTRIBUTES, COLOR_TABLE, NUM_COLORS
from .errors import ConfigError, DataError, ShapeError
from .maem import MAEM, MaemConfig

CHECKPOINT_FORMAT = "taco-checkpoint/1"


@dataclass
class ModelConfig:
    widths: tuple[int, ...] = (32, 64, 128, 256)
    depths: tuple[int, ...] = (1, 1, 1, 1)
    stem_stride: int = 2
    proj_dim: int = 256
    pred_dim: int = 64

    @property
    def embedding_dim(self) -> int:
        return self.widths[-1]

    def validate(self, maem: Optional[MaemConfig] = None, canvas=CANVAS):
        if len(self.widths) != len(self.depths) or not self.widths:
            raise ConfigError("model.widths and model.depths must have equal non-zero length")
        if min(self.depths) < 1 or min(self.widths) < 1:
            raise ConfigError("model widths/depths must be positive")
        if maem is not None and maem.enabled:
            maem.validate()
            s = maem.insert_stage
            if not 1 <= s <= len(self.widths):
                raise ConfigError(f"maem.insert_stage {s} is not a backbone stage "
                                  f"(1..{len(self.widths)})")
            h, w = stage_resolution(canvas, s, self.stem_stride)
            if h % maem.patch_size or w % maem.patch_size:
                raise ConfigError(f"stage {s} output {h}x{w} not divisible by "
                                  f"maem.patch_size {maem.patch_size}")
            if self.widths[s - 1] % maem.num_heads:
                raise ConfigError(f"stage {s} width {self.widths[s - 1]} not divisible by "
                                  f"maem.num_heads {maem.num_heads}")


def stage_resolution(canvas, stage: int, stem_stride: int = 2) -> tuple[int, int]:
    """Spatial size after ``stage`` (1-indexed); stages after the first halve it."""
    h, w = canvas
    for _ in range(stem_stride // 2):
        h, w = (h + 1) // 2, (w + 1) // 2
    for _ in range(stage - 1):
        h, w = (h + 1) // 2, (w + 1) // 2
    return h, w


class BasicBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(cout)
        self.relu = nn.ReLU()
        self.shortcut = nn.Identity()
        if stride != 1 or cin != cout:
            self.shortcut = nn.Sequential(nn.Conv2d(cin, cout, 1, stride, bias=False),
                                          nn.BatchNorm2d(cout))

    def forward(self, x):
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return self.relu(out + self.shortcut(x))


class Encoder(nn.Module):
    """Residual CNN backbone; MAEM sits after stage ``maem.insert_stage``."""

    def __init__(self, cfg: ModelConfig, maem: MaemConfig, canvas=CANVAS):
        super().__init__()
        cfg.validate(maem, canvas)
        self.canvas = tuple(canvas)
        w0 = cfg.widths[0]
        self.stem = nn.Sequential(
            nn.Conv2d(3, w0, 3, cfg.stem_stride, 1, bias=False),
            nn.BatchNorm2d(w0),
            nn.ReLU(),
        )
        stages, cin = [], w0
        for i, (w, d) in enumerate(zip(cfg.widths, cfg.depths)):
            blocks = [BasicBlock(cin, w, 1 if i == 0 else 2)]
            blocks += [BasicBlock(w, w) for _ in range(d - 1)]
            stages.append(nn.Sequential(*blocks))
            cin = w
        self.stages = nn.ModuleList(stages)
        self.maem_stage = maem.insert_stage if maem.enabled else None
        if maem.enabled:
            self.maem = MAEM.from_config(cfg.widths[maem.insert_stage - 1], maem)
        else:
            self.maem = nn.Identity()
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.embedding_dim = cfg.embedding_dim
        self.register_buffer("pixel_mean", torch.tensor(0.5))
        self.register_buffer("pixel_std", torch.tensor(0.25))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != 3 or tuple(x.shape[2:]) != self.canvas:
            raise ShapeError(f"expected (B, 3, {self.canvas[0]}, {self.canvas[1]}) input, "
                             f"got {tuple(x.shape)}")
        x = self.stem((x - self.pixel_mean) / self.pixel_std)
        for i, stage in enumerate(self.stages, start=1):
            x = stage(x)
            if i == self.maem_stage:
                x = self.maem(x)
        return self.pool(x).flatten(1)


class ProjectionMLP(nn.Module):
    def __init__(self, in_dim: int, dim: int = 256):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(in_dim, dim, bias=False), nn.BatchNorm1d(dim), nn.ReLU(),
            nn.Linear(dim, dim, bias=False), nn.BatchNorm1d(dim), nn.ReLU(),
            nn.Linear(dim, dim, bias=False), nn.BatchNorm1d(dim),
        )

    @property
    def output_norm(self) -> nn.BatchNorm1d:
        return self.net[-1]

    def forward(self, x):
        return self.net(x)


class PredictionMLP(nn.Module):
    def __init__(self, dim: int = 256, hidden: int = 64):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(dim, hidden, bias=False), nn.BatchNorm1d(hidden), nn.ReLU(),
            nn.Linear(hidden, dim),
        )

    def forward(self, x):
        return self.net(x)


class AttributeHeads(nn.Module):
    """Six independent linear classifiers over the pooled feature."""

    def __init__(self, in_dim: int, num_fonts: int, num_colors: int = NUM_COLORS):
        super().__init__()
        sizes = {"font": num_fonts, "color": num_colors,
                 "bold": 2, "italic": 2, "underline": 2, "strike": 2}
        self.heads = nn.ModuleDict({a: nn.Linear(in_dim, sizes[a]) for a in ATTRIBUTES})

    @property
    def sizes(self) -> dict[str, int]:
        return {a: self.heads[a].out_features for a in ATTRIBUTES}

    def forward(self, feature: torch.Tensor) -> dict[str, torch.Tensor]:
        return {a: self.heads[a](feature) for a in ATTRIBUTES}


class TacoModel(nn.Module):
    def __init__(self, cfg: ModelConfig = None, maem: MaemConfig = None, num_fonts: int = 4,
                 font_table: Optional[dict] = None, color_table: Optional[dict] = None,
                 canvas=CANVAS):
        super().__init__()
        self.cfg = cfg or ModelConfig()
        self.maem_cfg = maem or MaemConfig()
        self.canvas = tuple(canvas)
        self.font_table = dict(font_table) if font_table else {i: f"font{i}" for i in range(num_fonts)}
        self.color_table = dict(color_table) if color_table else dict(COLOR_TABLE)
        if len(self.font_table) != num_fonts:
            raise ConfigError("font_table size does not match num_fonts")
        self.encoder = Encoder(self.cfg, self.maem_cfg, canvas)
        self.projector = ProjectionMLP(self.cfg.embedding_dim, self.cfg.proj_dim)
        self.predictor = PredictionMLP(self.cfg.proj_dim, self.cfg.pred_dim)
        self.heads = AttributeHeads(self.cfg.embedding_dim, num_fonts, len(self.color_table))

    @property
    def num_fonts(self) -> int:
        return len(self.font_table)

    def encode(self, x):
        return self.encoder(x)

    def project(self, feature):
        return self.projector(feature)

    def predict_head(self, z):
        return self.predictor(z)

    def attribute_heads(self, feature):
        return self.heads(feature)

    def forward(self, x):
        return self.heads(self.encoder(x))

    def backbone_parameters(self):
        return self.encoder.parameters()

    def parameter_counts(self) -> dict[str, int]:
        count = lambda m: sum(p.numel() for p in m.parameters())
        return {"encoder": count(self.encoder), "maem": count(self.encoder.maem),
                "projector": count(self.projector), "predictor": count(self.predictor),
                "heads": count(self.heads)}


def images_to_tensor(images: Sequence[np.ndarray], dtype=torch.float32) -> torch.Tensor:
    """Stack ``H x W x 3`` float images into a ``(B, 3, H, W)`` tensor."""
    arr = np.stack([np.asarray(im, dtype=np.float32) for im in images])
    return torch.from_numpy(arr).permute(0, 3, 1, 2).contiguous().to(dtype)


def encoder_fingerprint(model: TacoModel) -> str:
    """Hash of every encoder parameter and buffer, for freeze assertions."""
    import hashlib
    h = hashlib.sha256()
    for name, t in sorted(model.encoder.state_dict().items()):
        h.update(name.encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def save_checkpoint(model: TacoModel, path, extra: Optional[dict] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "model_config": asdict(model.cfg),
        "maem_config": asdict(model.maem_cfg),
        "canvas": list(model.canvas),
        "font_table": {int(k): v for k, v in model.font_table.items()},
        "color_table": {int(k): [n, list(rgb)] for k, (n, rgb) in model.color_table.items()},
        "state_dict": model.state_dict(),
        "extra": extra or {},
    }
    torch.save(payload, path)
    return path


def load_checkpoint(path) -> TacoModel:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    mc = payload["model_config"]
    cfg = ModelConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in mc.items()})
    maem = MaemConfig(**payload["maem_config"])
    color_table = {int(k): (v[0], tuple(v[1])) for k, v in payload["color_table"].items()}
    font_table = {int(k): v for k, v in payload["font_table"].items()}
    model = TacoModel(cfg, maem, len(font_table), font_table, color_table,
                      canvas=tuple(payload["canvas"]))
    model.load_state_dict(payload["state_dict"])
    model.checkpoint_extra = payload.get("extra", {})
    return model
