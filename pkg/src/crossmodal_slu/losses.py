"""Cross-modal coupling losses, classification loss, and their weighted sum.

All distances are squared Euclidean: d(x1, x2) = sum_i (x1_i - x2_i)^2.

* l2:      d(x1, x2) for a (acoustic, text) pair of the same utterance
* ranking: t * d + (1 - t) * max{0, margin - d} over mined pairs
* triplet: max{0, margin + d(anchor, pos) - d(anchor, neg)}
* total:   ce_acoustic + text_loss_weight * ce_text + embedding_loss_weight * L_E

The tensor functions are shape-polymorphic (inputs [..., D]) and dtype-safe at
float64, which the finite-difference gradient checks rely on.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, fields
from enum import Enum

import numpy as np
import torch

from .encoders import Embedding, Modality
from .errors import TrainingDiverged, ValidationError


class Coupling(str, Enum):
    NONE = "none"
    L2 = "l2"
    RANKING = "ranking"
    TRIPLET = "triplet"
    ADVERSARIAL = "adversarial"


@dataclass(frozen=True)
class LossConfig:
    coupling: Coupling = Coupling.TRIPLET
    margin: float = 1.0
    text_loss_weight: float = 1.0  # weight of the text-branch CE term
    embedding_loss_weight: float = 1.0  # weight of the coupling term
    distance_kind: str = "squared_euclidean"

    def __post_init__(self):
        if self.margin < 0:
            raise ValidationError(f"margin must be non-negative, got {self.margin}")
        if not np.isfinite([self.text_loss_weight, self.embedding_loss_weight]).all():
            raise ValidationError("loss weights must be finite")
        if self.text_loss_weight < 0 or self.embedding_loss_weight < 0:
            raise ValidationError("loss weights must be non-negative")
        if self.distance_kind != "squared_euclidean":
            raise ValidationError(f"unsupported distance: {self.distance_kind!r}")
        object.__setattr__(self, "coupling", Coupling(self.coupling))

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["coupling"] = self.coupling.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LossConfig":
        return cls(**d)


@dataclass
class PairExample:
    """A cross-modal pair: acoustic x1, text x2, same_intent flag t."""

    x1: Embedding
    x2: Embedding
    same_intent: bool

    def __post_init__(self):
        if self.x1.modality is not Modality.ACOUSTIC or self.x2.modality is not Modality.TEXT:
            raise ValidationError("pair must be (acoustic, text)")
        if (self.x1.intent == self.x2.intent) != self.same_intent:
            raise ValidationError(
                f"same_intent={self.same_intent} contradicts intents "
                f"{self.x1.intent!r} / {self.x2.intent!r}"
            )


@dataclass
class TripletExample:
    """Acoustic anchor, same-intent text positive, different-intent text negative."""

    anchor: Embedding
    positive: Embedding
    negative: Embedding

    def __post_init__(self):
        if self.anchor.modality is not Modality.ACOUSTIC:
            raise ValidationError("anchor must be acoustic")
        if self.positive.modality is not Modality.TEXT or self.negative.modality is not Modality.TEXT:
            raise ValidationError("positive and negative must be text")
        if self.anchor.intent != self.positive.intent:
            raise ValidationError("positive must share the anchor's intent")
        if self.anchor.intent == self.negative.intent:
            raise ValidationError("negative must have a different intent")


def _check_dims(*tensors: torch.Tensor) -> None:
    dims = {t.shape[-1] for t in tensors}
    if len(dims) != 1:
        raise ValidationError(f"dimension mismatch: {sorted(dims)}")


def _reduce(values: torch.Tensor, reduction: str) -> torch.Tensor:
    if reduction == "mean":
        return values.mean()
    if reduction == "none":
        return values
    raise ValidationError(f"unknown reduction {reduction!r}")


def distance(x1: torch.Tensor, x2: torch.Tensor) -> torch.Tensor:
    """Squared Euclidean distance over the last dimension."""
    x1 = torch.as_tensor(x1)
    x2 = torch.as_tensor(x2)
    _check_dims(x1, x2)
    return ((x1 - x2) ** 2).sum(dim=-1)


def l2_loss(x1: torch.Tensor, x2: torch.Tensor, reduction: str = "mean") -> torch.Tensor:
    """Coupling by plain distance between an utterance's two embeddings."""
    return _reduce(distance(x1, x2), reduction)


def ranking_loss(
    x1: torch.Tensor,
    x2: torch.Tensor,
    same_intent: torch.Tensor,
    margin: float = 1.0,
    reduction: str = "mean",
) -> torch.Tensor:
    """Pull same-intent pairs together, push cross-intent pairs past the margin."""
    if margin < 0:
        raise ValidationError(f"margin must be non-negative, got {margin}")
    d = distance(x1, x2)
    t = torch.as_tensor(same_intent, dtype=d.dtype, device=d.device)
    per_pair = t * d + (1.0 - t) * torch.clamp(margin - d, min=0.0)
    return _reduce(per_pair, reduction)


def triplet_loss(
    anchor: torch.Tensor,
    positive: torch.Tensor,
    negative: torch.Tensor,
    margin: float = 1.0,
    reduction: str = "mean",
) -> torch.Tensor:
    """Hinge on d(anchor, positive) - d(anchor, negative) with a margin."""
    if margin < 0:
        raise ValidationError(f"margin must be non-negative, got {margin}")
    per_triplet = torch.clamp(
        margin + distance(anchor, positive) - distance(anchor, negative), min=0.0
    )
    return _reduce(per_triplet, reduction)


def classification_loss(
    probs: torch.Tensor, target, reduction: str = "mean"
) -> torch.Tensor:
    """Negative log probability of the target intent.

    ``probs`` is a valid distribution ([K] or [N, K]); targets out of range
    are an error. Training uses logits + cross-entropy internally, which is
    the same quantity.
    """
    probs = torch.as_tensor(probs)
    target = torch.as_tensor(target, dtype=torch.long)
    if probs.ndim == 1:
        probs = probs[None, :]
        target = target.reshape(1)
    if probs.ndim != 2 or target.ndim != 1 or target.shape[0] != probs.shape[0]:
        raise ValidationError(
            f"incompatible shapes: probs {tuple(probs.shape)}, target {tuple(target.shape)}"
        )
    if ((target < 0) | (target >= probs.shape[1])).any():
        raise ValidationError("target intent index out of range")
    picked = probs.gather(1, target[:, None])[:, 0]
    return _reduce(-torch.log(picked), reduction)


def combined_loss(
    ce_acoustic: torch.Tensor,
    ce_text: torch.Tensor,
    embedding_loss: torch.Tensor,
    cfg: LossConfig,
) -> torch.Tensor:
    """Weighted total seen by the acoustic branch; fails fast on divergence."""
    components = [torch.as_tensor(c) for c in (ce_acoustic, ce_text, embedding_loss)]
    for name, c in zip(("ce_acoustic", "ce_text", "embedding_loss"), components):
        if not torch.isfinite(c).all():
            raise TrainingDiverged(f"non-finite loss component {name}: {c}")
    ce_a, ce_t, emb = components
    return ce_a + cfg.text_loss_weight * ce_t + cfg.embedding_loss_weight * emb


def pairs_to_tensors(
    pairs, dtype: torch.dtype = torch.float32
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Stack PairExamples into (x1, x2, same_intent) tensors."""
    if not pairs:
        raise ValidationError("empty pair list")
    x1 = torch.as_tensor(np.stack([p.x1.vector for p in pairs]), dtype=dtype)
    x2 = torch.as_tensor(np.stack([p.x2.vector for p in pairs]), dtype=dtype)
    t = torch.tensor([float(p.same_intent) for p in pairs], dtype=dtype)
    return x1, x2, t


def triplets_to_tensors(
    triplets, dtype: torch.dtype = torch.float32
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Stack TripletExamples into (anchor, positive, negative) tensors."""
    if not triplets:
        raise ValidationError("empty triplet list")
    a = torch.as_tensor(np.stack([t.anchor.vector for t in triplets]), dtype=dtype)
    p = torch.as_tensor(np.stack([t.positive.vector for t in triplets]), dtype=dtype)
    n = torch.as_tensor(np.stack([t.negative.vector for t in triplets]), dtype=dtype)
    return a, p, n
