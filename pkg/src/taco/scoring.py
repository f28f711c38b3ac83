"""Pair scoring and the contrastive / fine-tuning objectives.

The pair score of sample ``l`` is built from the intact view ``z_k``:

    p~_l = (d(z_k, z_i) + d(z_k, h(z_j))) / 2
    p_l  = -|p~_l - mean(p~)|
    P    = softmax(p / tau)

and weights the symmetric negative-cosine loss between the two augmented
views. ``KL(uniform || P) / log N`` keeps the weights from collapsing onto a
few pairs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import torch
import torch.nn.functional as F

from .datagen import ATTRIBUTES, AttributeLabel
from .errors import ConfigError, DataError, ShapeError

KL_EPS = 1e-8
FINETUNE_WEIGHTS = {"font": 5.0, "color": 1.0, "bold": 1.0, "italic": 1.0,
                    "underline": 1.0, "strike": 1.0}
SCORE_GRAD_MODES = ("kl_only", "full", "none")


class _Counter:
    def __init__(self):
        self.value = 0

    def add(self, n: int):
        self.value += int(n)

    def reset(self):
        self.value = 0


# rows with zero norm seen by neg_cosine; they score 0 instead of NaN
zero_norm_events = _Counter()


def neg_cosine(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """``-<x, y> / (|x| |y|)`` over the last dimension.

    Uses ``sqrt(|x|^2 |y|^2)`` so that ``d(x, x)`` is exactly -1 in floating
    point. A zero-norm row gives 0 and bumps ``zero_norm_events``.
    """
    dot = (x * y).sum(dim=-1)
    nx2 = (x * x).sum(dim=-1)
    ny2 = (y * y).sum(dim=-1)
    denom2 = nx2 * ny2
    zero = (nx2 == 0) | (ny2 == 0)
    if bool(zero.any()):
        zero_norm_events.add(int(zero.sum()))
        denom2 = torch.where(zero, torch.ones_like(denom2), denom2)
        d = -dot / denom2.sqrt()
        d = torch.where(zero, torch.zeros_like(d), d)
    else:
        if not bool(torch.isfinite(denom2).all()):
            denom = nx2.sqrt() * ny2.sqrt()  # squared norms overflowed
            return (-dot / denom).clamp(-1.0, 1.0)
        d = -dot / denom2.sqrt()
    return d.clamp(-1.0, 1.0)


@dataclass
class PairScoreVector:
    P: torch.Tensor
    p_tilde: torch.Tensor
    p: torch.Tensor
    tau: float


def scores_from_similarities(p_tilde: torch.Tensor, tau: float = 1.0) -> PairScoreVector:
    """Stage II: zero-mean, negate the absolute deviation, softmax with temperature."""
    if tau <= 0:
        raise ValueError("tau must be > 0")
    if p_tilde.dim() != 1 or p_tilde.shape[0] < 2:
        raise ShapeError("pair scoring needs a batch of N >= 2 (disable PSM for N = 1)")
    # |p~_l - mean| as the mean of pairwise differences: exactly symmetric for N = 2
    p = -(p_tilde[:, None] - p_tilde[None, :]).mean(dim=1).abs()
    return PairScoreVector(torch.softmax(p / tau, dim=0), p_tilde, p, tau)


def _apply(predictor, z):
    return predictor(z) if predictor is not None else z


def pair_scores(z_i: torch.Tensor, z_j: torch.Tensor, z_k: torch.Tensor,
                predictor: Optional[Callable] = None, tau: float = 1.0,
                h_j: Optional[torch.Tensor] = None) -> PairScoreVector:
    """Score each (z_i, z_j) pair against the intact view ``z_k``.

    ``predictor=None`` means identity; ``h_j`` may be passed to reuse an
    already computed prediction.
    """
    if z_i.shape[0] < 2:
        raise ShapeError("pair scoring needs a batch of N >= 2 (disable PSM for N = 1)")
    if h_j is None:
        h_j = _apply(predictor, z_j)
    p_tilde = 0.5 * (neg_cosine(z_k, z_i) + neg_cosine(z_k, h_j))
    return scores_from_similarities(p_tilde, tau)


def scored_symmetric_loss(z_i: torch.Tensor, z_j: torch.Tensor, predictor: Optional[Callable],
                          P: torch.Tensor, h_i: Optional[torch.Tensor] = None,
                          h_j: Optional[torch.Tensor] = None) -> torch.Tensor:
    """``1/2 sum_l P_l (d(z_i, h(z_j)) + d(z_j, h(z_i)))`` with stop-gradient on targets."""
    N = z_i.shape[0]
    if P.shape != (N,) or z_j.shape[0] != N:
        raise ShapeError(f"score vector of shape {tuple(P.shape)} for batch of {N}")
    if h_i is None:
        h_i = _apply(predictor, z_i)
    if h_j is None:
        h_j = _apply(predictor, z_j)
    d = neg_cosine(z_i.detach(), h_j) + neg_cosine(z_j.detach(), h_i)
    return 0.5 * (P * d).sum()


def kl_uniform(P: torch.Tensor) -> torch.Tensor:
    """``KL(R || P) / log N`` with ``R`` uniform; ``P`` is floored at 1e-8."""
    N = P.shape[0]
    if N < 2:
        raise ShapeError("KL to uniform is undefined for N < 2")
    # log R through the same float path as log P, so uniform P gives exactly 0
    log_r = torch.log(torch.full_like(P, 1.0 / N))
    logs = log_r - torch.log(P.clamp_min(KL_EPS))
    return logs.sum() / (N * math.log(N))


@dataclass
class LossBreakdown:
    l_cos: torch.Tensor
    kl_term: torch.Tensor
    total: torch.Tensor
    lam: float
    scores: Optional[PairScoreVector] = None

    def floats(self) -> dict[str, float]:
        return {"l_cos": float(self.l_cos.detach()), "kl": float(self.kl_term.detach()),
                "total": float(self.total.detach())}


def total_loss(z_i: torch.Tensor, z_j: torch.Tensor, z_k: Optional[torch.Tensor],
               predictor: Optional[Callable] = None, tau: float = 1.0, lam: float = 2.0,
               score_grad_mode: str = "kl_only", psm_enabled: bool = True) -> LossBreakdown:
    """Scored symmetric loss plus ``lam`` times the KL-to-uniform term.

    ``score_grad_mode`` decides where the scores carry gradient: ``kl_only``
    (default) treats them as constants inside the cosine term, ``full`` lets
    them carry gradient everywhere and ``none`` detaches them everywhere.
    With ``psm_enabled=False`` the weights are uniform and the KL term is 0,
    which is plain SimSiam.
    """
    if score_grad_mode not in SCORE_GRAD_MODES:
        raise ValueError(f"score_grad_mode must be one of {SCORE_GRAD_MODES}")
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    N = z_i.shape[0]
    h_i = _apply(predictor, z_i)
    h_j = _apply(predictor, z_j)
    if not psm_enabled:
        P = torch.full((N,), 1.0 / N, dtype=z_i.dtype, device=z_i.device)
        l_cos = scored_symmetric_loss(z_i, z_j, None, P, h_i, h_j)
        kl = torch.zeros((), dtype=z_i.dtype, device=z_i.device)
        return LossBreakdown(l_cos, kl, l_cos + lam * kl, lam, None)
    scores = pair_scores(z_i, z_j, z_k, tau=tau, h_j=h_j)
    P = scores.P
    P_cos = P if score_grad_mode == "full" else P.detach()
    P_kl = P.detach() if score_grad_mode == "none" else P
    l_cos = scored_symmetric_loss(z_i, z_j, None, P_cos, h_i, h_j)
    kl = kl_uniform(P_kl)
    return LossBreakdown(l_cos, kl, l_cos + lam * kl, lam, scores)


def labels_to_targets(labels: Sequence[AttributeLabel]) -> torch.Tensor:
    return torch.tensor([l.as_targets() for l in labels], dtype=torch.long)


def finetune_loss(logits: dict[str, torch.Tensor],
                  labels: Union[torch.Tensor, Sequence[AttributeLabel]],
                  weights: Optional[dict[str, float]] = None,
                  return_parts: bool = False):
    """Weighted sum of per-attribute mean cross-entropies (font weighted 5x)."""
    weights = weights or FINETUNE_WEIGHTS
    targets = labels if isinstance(labels, torch.Tensor) else labels_to_targets(labels)
    if targets.dim() != 2 or targets.shape[1] != len(ATTRIBUTES):
        raise ShapeError(f"targets must be (B, {len(ATTRIBUTES)}), got {tuple(targets.shape)}")
    parts = {}
    for col, attr in enumerate(ATTRIBUTES):
        lg = logits[attr]
        t = targets[:, col]
        bad = ((t < 0) | (t >= lg.shape[1])).nonzero()
        if len(bad):
            i = int(bad[0, 0])
            raise DataError(f"sample {i}: {attr} label {int(t[i])} outside [0, {lg.shape[1]})")
        parts[attr] = F.cross_entropy(lg, t)
    total = sum(weights[a] * parts[a] for a in ATTRIBUTES)
    if return_parts:
        return total, parts
    return total


@dataclass
class LossConfig:
    tau: float = 1.0
    lam: float = 2.0
    score_grad_mode: str = "kl_only"
    psm_enabled: bool = True

    def validate(self):
        if self.tau <= 0:
            raise ConfigError("loss.tau must be > 0")
        if self.lam < 0:
            raise ConfigError("loss.lambda must be >= 0")
        if self.score_grad_mode not in SCORE_GRAD_MODES:
            raise ConfigError(f"loss.score_grad_mode must be one of {SCORE_GRAD_MODES}")
