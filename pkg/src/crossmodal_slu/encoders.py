"""Acoustic encoder, shared intent classifier, and the embedding container.

The acoustic encoder is a multi-layer Bi-LSTM; a fixed-size utterance summary
is obtained by max-pooling the last layer's states over valid (unpadded)
frames, then projecting into the shared 768-dimensional space where text
embeddings live. The classifier head is a single linear layer + softmax and is
applied identically to acoustic and text embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from enum import Enum
from typing import Sequence

import numpy as np
import torch
from torch import nn
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

from .errors import ValidationError
from .features import FeatureSequence

EMBEDDING_DIM = 768


class Modality(str, Enum):
    ACOUSTIC = "acoustic"
    TEXT = "text"


@dataclass
class Embedding:
    """A vector in the shared latent space, tagged with its modality."""

    vector: np.ndarray
    modality: Modality
    utterance_id: str = ""
    intent: str | None = None

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float32)
        if self.vector.shape != (EMBEDDING_DIM,):
            raise ValidationError(
                f"embedding must have shape ({EMBEDDING_DIM},), got {self.vector.shape}"
            )
        if not np.isfinite(self.vector).all():
            raise ValidationError(f"non-finite embedding for {self.utterance_id!r}")


@dataclass(frozen=True)
class AcousticEncoderConfig:
    num_layers: int = 4
    hidden_units: int = 512  # per direction
    input_dim: int = 40
    output_dim: int = EMBEDDING_DIM
    bidirectional: bool = True

    def __post_init__(self):
        if self.num_layers < 1 or self.hidden_units < 1 or self.input_dim < 1:
            raise ValidationError(f"invalid acoustic encoder config: {self}")

    @property
    def state_dim(self) -> int:
        return self.hidden_units * (2 if self.bidirectional else 1)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "AcousticEncoderConfig":
        return cls(**d)


@dataclass(frozen=True)
class ClassifierConfig:
    num_intents: int
    input_dim: int = EMBEDDING_DIM

    def __post_init__(self):
        if self.num_intents < 2:
            raise ValidationError(f"need at least 2 intents, got {self.num_intents}")

    def to_dict(self) -> dict:
        return {"num_intents": self.num_intents, "input_dim": self.input_dim}

    @classmethod
    def from_dict(cls, d: dict) -> "ClassifierConfig":
        return cls(**d)


def masked_max_pool(states: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
    """Per-dimension max over valid time steps of a padded [B, T, H] batch.

    Padded positions are replaced with -inf before the max, so padding can
    never win. Zero-length sequences are an error.
    """
    if states.ndim != 3:
        raise ValidationError(f"states must be [B, T, H], got shape {tuple(states.shape)}")
    lengths = torch.as_tensor(lengths, dtype=torch.long, device=states.device)
    if (lengths < 1).any():
        raise ValidationError("zero-length sequence in batch")
    if (lengths > states.shape[1]).any():
        raise ValidationError("length exceeds padded time dimension")
    mask = torch.arange(states.shape[1], device=states.device)[None, :] < lengths[:, None]
    filled = states.masked_fill(~mask[:, :, None], float("-inf"))
    return filled.max(dim=1).values


class AcousticEncoder(nn.Module):
    """Bi-LSTM over MFCC frames -> masked temporal max-pool -> linear projection.

    The Bi-LSTM emits hidden_units per direction, so the pooled vector has
    2 * hidden_units dimensions; the projection maps it to output_dim (768) to
    match the text embeddings. Input is a padded [B, T, input_dim] batch with
    an explicit length vector; packing makes the backward direction start at
    each sequence's true last frame.
    """

    def __init__(self, cfg: AcousticEncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.lstm = nn.LSTM(
            input_size=cfg.input_dim,
            hidden_size=cfg.hidden_units,
            num_layers=cfg.num_layers,
            batch_first=True,
            bidirectional=cfg.bidirectional,
        )
        self.projection = nn.Linear(cfg.state_dim, cfg.output_dim)

    def last_layer_states(
        self, frames: torch.Tensor, lengths: torch.Tensor
    ) -> torch.Tensor:
        """Padded [B, T', state_dim] last-layer states (T' = max valid length)."""
        if frames.ndim != 3 or frames.shape[2] != self.cfg.input_dim:
            raise ValidationError(
                f"expected frames [B, T, {self.cfg.input_dim}], got {tuple(frames.shape)}"
            )
        lengths = torch.as_tensor(lengths, dtype=torch.long)
        if (lengths < 1).any():
            raise ValidationError("zero-length sequence in batch")
        packed = pack_padded_sequence(
            frames, lengths.cpu(), batch_first=True, enforce_sorted=False
        )
        states, _ = self.lstm(packed)
        padded, _ = pad_packed_sequence(states, batch_first=True)
        return padded

    def forward(self, frames: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        states = self.last_layer_states(frames, lengths)
        lengths = torch.as_tensor(lengths, dtype=torch.long, device=states.device)
        pooled = masked_max_pool(states, lengths)
        return self.projection(pooled)


class IntentClassifier(nn.Module):
    """Shared linear head; identical parameters score both modalities."""

    def __init__(self, cfg: ClassifierConfig):
        super().__init__()
        self.cfg = cfg
        self.linear = nn.Linear(cfg.input_dim, cfg.num_intents)

    def forward(self, embeddings: torch.Tensor) -> torch.Tensor:
        if embeddings.shape[-1] != self.cfg.input_dim:
            raise ValidationError(
                f"classifier expects dim {self.cfg.input_dim}, got {embeddings.shape[-1]}"
            )
        return self.linear(embeddings)


def build_acoustic_encoder(cfg: AcousticEncoderConfig, seed: int = 0) -> AcousticEncoder:
    """Construct an encoder with seeded parameter initialization."""
    torch.manual_seed(seed)
    return AcousticEncoder(cfg)


def build_classifier(cfg: ClassifierConfig, seed: int = 0) -> IntentClassifier:
    torch.manual_seed(seed)
    return IntentClassifier(cfg)


def collate_features(
    sequences: Sequence[FeatureSequence], dtype: torch.dtype = torch.float32
) -> tuple[torch.Tensor, torch.Tensor]:
    """Pad feature sequences to a [B, T_max, F] batch plus a length vector."""
    if not sequences:
        raise ValidationError("empty feature batch")
    lengths = torch.tensor([s.length for s in sequences], dtype=torch.long)
    if (lengths < 1).any():
        raise ValidationError("zero-length feature sequence in batch")
    t_max = int(lengths.max())
    feat_dim = sequences[0].frames.shape[1]
    batch = torch.zeros(len(sequences), t_max, feat_dim, dtype=dtype)
    for i, seq in enumerate(sequences):
        batch[i, : seq.length] = torch.as_tensor(seq.frames, dtype=dtype)
    return batch, lengths


def encode_acoustic(
    encoder: AcousticEncoder,
    sequences: Sequence[FeatureSequence],
    intents: Sequence[str] | None = None,
    batch_size: int = 64,
) -> list[Embedding]:
    """Embed feature sequences (inference mode), returning tagged vectors."""
    encoder.eval()
    out: list[Embedding] = []
    with torch.no_grad():
        for start in range(0, len(sequences), batch_size):
            chunk = sequences[start : start + batch_size]
            frames, lengths = collate_features(chunk)
            vectors = encoder(frames, lengths).cpu().numpy()
            for i, seq in enumerate(chunk):
                out.append(
                    Embedding(
                        vector=vectors[i],
                        modality=Modality.ACOUSTIC,
                        utterance_id=seq.utterance_id,
                        intent=intents[start + i] if intents is not None else None,
                    )
                )
    return out


def classify(
    classifier: IntentClassifier, embedding: Embedding | np.ndarray | torch.Tensor
) -> np.ndarray:
    """Probability vector over intents for one embedding (softmax output)."""
    if isinstance(embedding, Embedding):
        vec = torch.as_tensor(embedding.vector)
    else:
        vec = torch.as_tensor(np.asarray(embedding, dtype=np.float32))
    if vec.ndim != 1:
        raise ValidationError(f"classify expects a single vector, got shape {tuple(vec.shape)}")
    with torch.no_grad():
        logits = classifier(vec[None, :])
        probs = torch.softmax(logits, dim=-1)[0]
    return probs.cpu().numpy()
