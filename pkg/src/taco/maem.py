"""Masked attributes enhancement: per-channel patch masking + patch self-attention.

Feature maps use the torch layout ``(B, C, H, W)``. A map is cut into
``P x P`` patches; with ``h`` heads the channels are split into ``h`` slices
and every (patch, slice) pair becomes one token of length ``C/h * P * P``.
Within a token, values are ordered channel-major, then row-major inside the
patch: ``index = c_local * P * P + py * P + px``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn as nn

from .errors import ConfigError, ShapeError


@dataclass
class MaemConfig:
    enabled: bool = True
    patch_size: int = 4
    num_heads: int = 4
    delta: float = 0.2
    residual: bool = False
    insert_stage: int = 1
    shared_qkv_conv: bool = False

    def validate(self):
        if self.patch_size < 1 or self.num_heads < 1:
            raise ConfigError("maem.patch_size and maem.num_heads must be >= 1")
        if not 0.0 <= self.delta < 1.0:
            raise ConfigError("maem.delta must be in [0, 1)")


def check_shape(C: int, H: int, W: int, P: int, heads: int):
    if H % P:
        raise ShapeError(f"height {H} not divisible by patch size {P}")
    if W % P:
        raise ShapeError(f"width {W} not divisible by patch size {P}")
    if C % heads:
        raise ShapeError(f"channels {C} not divisible by num_heads {heads}")


def patchify(x: torch.Tensor, P: int, heads: int) -> torch.Tensor:
    """``(B, C, H, W) -> (B, heads, H*W/P^2, C*P^2/heads)``."""
    B, C, H, W = x.shape
    check_shape(C, H, W, P, heads)
    gh, gw = H // P, W // P
    t = x.reshape(B, heads, C // heads, gh, P, gw, P)
    t = t.permute(0, 1, 3, 5, 2, 4, 6)  # B, heads, gh, gw, c_local, py, px
    return t.reshape(B, heads, gh * gw, (C // heads) * P * P)


def unpatchify(seq: torch.Tensor, H: int, W: int, P: int) -> torch.Tensor:
    """Inverse of :func:`patchify`; heads are concatenated along channels."""
    B, heads, T, D = seq.shape
    if H % P or W % P:
        raise ShapeError(f"feature size {H}x{W} not divisible by patch size {P}")
    gh, gw = H // P, W // P
    if T != gh * gw:
        raise ShapeError(f"sequence length {T} does not match {gh}x{gw} patch grid")
    if D % (P * P):
        raise ShapeError(f"token length {D} not divisible by P^2={P * P}")
    c_local = D // (P * P)
    t = seq.reshape(B, heads, gh, gw, c_local, P, P)
    t = t.permute(0, 1, 4, 2, 5, 3, 6)  # B, heads, c_local, gh, py, gw, px
    return t.reshape(B, heads * c_local, H, W)


@dataclass
class PatchMask:
    mask: torch.Tensor  # bool (C, grid_h, grid_w); True = masked
    p: float

    def pixel_mask(self, P: int) -> torch.Tensor:
        return self.mask.repeat_interleave(P, dim=1).repeat_interleave(P, dim=2)


def sample_patch_mask(grid: tuple[int, int], C: int, delta: float,
                      generator: Optional[torch.Generator] = None) -> PatchMask:
    """Draw ``p ~ U(0, delta)`` once, then mask ``round(p * G)`` cells per channel."""
    if not 0.0 <= delta < 1.0:
        raise ConfigError("delta must be in [0, 1)")
    gh, gw = grid
    G = gh * gw
    p = float(torch.rand((), generator=generator)) * delta
    k = int(round(p * G))
    mask = torch.zeros(C, G, dtype=torch.bool)
    if k > 0:
        idx = torch.rand(C, G, generator=generator).argsort(dim=1)[:, :k]
        mask.scatter_(1, idx, True)
    return PatchMask(mask.view(C, gh, gw), p)


def conv_block(channels: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(channels, channels, kernel_size=1, bias=False),
        nn.BatchNorm2d(channels),
        nn.ReLU(),
    )


class MAEM(nn.Module):
    def __init__(self, channels: int, patch_size: int = 4, num_heads: int = 4,
                 delta: float = 0.2, residual: bool = False, shared_qkv_conv: bool = False):
        super().__init__()
        if channels % num_heads:
            raise ShapeError(f"channels {channels} not divisible by num_heads {num_heads}")
        self.channels = channels
        self.patch_size = patch_size
        self.num_heads = num_heads
        self.delta = delta
        self.residual = residual
        self.shared_qkv_conv = shared_qkv_conv
        if shared_qkv_conv:
            self.qkv = conv_block(channels)
        else:
            self.q_conv = conv_block(channels)
            self.k_conv = conv_block(channels)
            self.v_conv = conv_block(channels)

    @classmethod
    def from_config(cls, channels: int, cfg: MaemConfig) -> "MAEM":
        return cls(channels, cfg.patch_size, cfg.num_heads, cfg.delta,
                   cfg.residual, cfg.shared_qkv_conv)

    def apply_mask(self, x: torch.Tensor, generator=None) -> torch.Tensor:
        B, C, H, W = x.shape
        P = self.patch_size
        keep = torch.stack([
            ~sample_patch_mask((H // P, W // P), C, self.delta, generator).pixel_mask(P)
            for _ in range(B)
        ]).to(x.device)
        return x * keep.to(x.dtype)

    def forward(self, x: torch.Tensor, mask: Optional[bool] = None, generator=None,
                return_attention: bool = False):
        """Masking defaults to on in training mode and off in eval mode.

        Normalization follows the module's own train/eval state.
        """
        B, C, H, W = x.shape
        P, h = self.patch_size, self.num_heads
        check_shape(C, H, W, P, h)
        if mask is None:
            mask = self.training
        xm = self.apply_mask(x, generator) if (mask and self.delta > 0) else x
        if self.shared_qkv_conv:
            q = k = v = self.qkv(xm)
        else:
            q, k, v = self.q_conv(xm), self.k_conv(xm), self.v_conv(xm)
        q, k, v = (patchify(t, P, h) for t in (q, k, v))
        scale = 1.0 / math.sqrt(C * P * P / h)
        attn = torch.softmax(q @ k.transpose(-2, -1) * scale, dim=-1)
        out = unpatchify(attn @ v, H, W, P)
        if self.residual:
            out = out + x
        if return_attention:
            return out, attn
        return out


def maem_forward(x: torch.Tensor, module: MAEM, mode: str = "infer",
                 generator: Optional[torch.Generator] = None, return_attention: bool = False):
    """Run ``module`` with masking switched by ``mode`` ("train" or "infer")."""
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    return module(x, mask=(mode == "train"), generator=generator,
                  return_attention=return_attention)
