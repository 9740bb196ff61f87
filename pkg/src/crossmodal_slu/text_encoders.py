"""Text-side encoders producing 768-dim embeddings from transcripts.

Three interchangeable encoders:

* ``hash``  - deterministic hashed bag-of-words with fixed random projections;
  parameter-free, fully offline, used by the synthetic pipeline and tests.
* ``bow``   - trainable hashed EmbeddingBag; offline, used to exercise the
  fine-tune/freeze machinery with real parameters.
* any other id - a pretrained transformer resolved through ``transformers``
  (e.g. ``bert-base-cased``); the last layer's [CLS] representation is the
  embedding.

Encoders are frozen by default: inference runs under no_grad and parameters
are excluded from optimization. Construction and forward calls are counted on
the base class so a training run can prove it never touched the text branch.
"""

from __future__ import annotations

import hashlib
import re

import numpy as np
import torch
from torch import nn

from .encoders import EMBEDDING_DIM, Embedding, Modality
from .errors import TextEncoderUnavailable, ValidationError

_TOKEN_RE = re.compile(r"[a-z0-9']+")


def _tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def _stable_token_hash(token: str) -> int:
    return int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "big")


class TextEncoder(nn.Module):
    """Base class: maps a batch of transcripts to a [N, 768] tensor.

    Class-level counters record how many encoders were constructed and how
    many forward calls ran, across all subclasses.
    """

    constructions = 0
    invocations = 0

    def __init__(self, fine_tune: bool = False):
        super().__init__()
        self.fine_tune = fine_tune
        TextEncoder.constructions += 1

    @classmethod
    def reset_counters(cls) -> None:
        TextEncoder.constructions = 0
        TextEncoder.invocations = 0

    @property
    def embedding_dim(self) -> int:
        return EMBEDDING_DIM

    def _encode(self, texts: list[str]) -> torch.Tensor:
        raise NotImplementedError

    def forward(self, texts) -> torch.Tensor:
        texts = list(texts)
        if not texts:
            raise ValidationError("empty transcript batch")
        if any(not t for t in texts):
            raise ValidationError("transcripts must be non-empty")
        TextEncoder.invocations += 1
        if self.fine_tune:
            return self._encode(texts)
        with torch.no_grad():
            return self._encode(texts)


class HashTextEncoder(TextEncoder):
    """Mean of per-token fixed random vectors, L2-normalized; no parameters.

    Each token's vector comes from a generator seeded by a stable hash of the
    token, so the mapping is identical across processes and runs.
    """

    def __init__(self, seed: int = 0):
        super().__init__(fine_tune=False)
        self.seed = seed
        self._token_cache: dict[str, np.ndarray] = {}

    def _token_vector(self, token: str) -> np.ndarray:
        vec = self._token_cache.get(token)
        if vec is None:
            rng = np.random.default_rng((_stable_token_hash(token) ^ self.seed) & (2**63 - 1))
            vec = rng.standard_normal(EMBEDDING_DIM)
            self._token_cache[token] = vec
        return vec

    def _encode(self, texts: list[str]) -> torch.Tensor:
        out = np.zeros((len(texts), EMBEDDING_DIM), dtype=np.float64)
        for i, text in enumerate(texts):
            tokens = _tokenize(text)
            if not tokens:
                raise ValidationError(f"transcript {text!r} has no tokens")
            acc = np.zeros(EMBEDDING_DIM)
            for tok in tokens:
                acc += self._token_vector(tok)
            acc /= len(tokens)
            out[i] = acc / np.linalg.norm(acc)
        return torch.as_tensor(out, dtype=torch.float32)


class BagOfWordsTextEncoder(TextEncoder):
    """Trainable hashed bag-of-words encoder (EmbeddingBag over hash buckets)."""

    def __init__(self, buckets: int = 4096, seed: int = 0, fine_tune: bool = False):
        torch.manual_seed(seed)
        super().__init__(fine_tune=fine_tune)
        self.buckets = buckets
        self.bag = nn.EmbeddingBag(buckets, EMBEDDING_DIM, mode="mean")
        if not fine_tune:
            self.bag.weight.requires_grad_(False)

    def _encode(self, texts: list[str]) -> torch.Tensor:
        indices: list[int] = []
        offsets: list[int] = []
        for text in texts:
            tokens = _tokenize(text)
            if not tokens:
                raise ValidationError(f"transcript {text!r} has no tokens")
            offsets.append(len(indices))
            indices.extend(_stable_token_hash(tok) % self.buckets for tok in tokens)
        return self.bag(
            torch.tensor(indices, dtype=torch.long), torch.tensor(offsets, dtype=torch.long)
        )


class PretrainedTransformerEncoder(TextEncoder):
    """[CLS]-token embedding from a pretrained transformer (via ``transformers``)."""

    def __init__(self, model_id: str = "bert-base-cased", fine_tune: bool = False):
        super().__init__(fine_tune=fine_tune)
        self.model_id = model_id
        try:
            from transformers import AutoModel, AutoTokenizer
        except ImportError as exc:
            raise TextEncoderUnavailable(
                "the 'transformers' package is required for pretrained text encoders; "
                "install it with: pip install crossmodal-slu[bert]"
            ) from exc
        try:
            self.tokenizer = AutoTokenizer.from_pretrained(model_id)
            self.model = AutoModel.from_pretrained(model_id)
        except Exception as exc:
            raise TextEncoderUnavailable(
                f"could not resolve pretrained text encoder {model_id!r}: {exc}. "
                "Pre-download it on a machine with network access "
                "(python -c \"from transformers import AutoModel; "
                f"AutoModel.from_pretrained('{model_id}')\") or point model_id at a local "
                "directory containing the saved model."
            ) from exc
        hidden = self.model.config.hidden_size
        if hidden != EMBEDDING_DIM:
            raise ValidationError(
                f"text encoder {model_id!r} emits {hidden}-dim vectors; expected {EMBEDDING_DIM}"
            )
        if not fine_tune:
            self.model.eval()
            for p in self.model.parameters():
                p.requires_grad_(False)

    def _encode(self, texts: list[str]) -> torch.Tensor:
        batch = self.tokenizer(texts, padding=True, truncation=True, return_tensors="pt")
        output = self.model(**batch)
        return output.last_hidden_state[:, 0, :]


def build_text_encoder(
    model_id: str = "hash", fine_tune: bool = False, seed: int = 0
) -> TextEncoder:
    """Resolve a text encoder by id ('hash', 'bow', or a pretrained model id)."""
    if model_id == "hash":
        return HashTextEncoder(seed=seed)
    if model_id == "bow":
        return BagOfWordsTextEncoder(seed=seed, fine_tune=fine_tune)
    return PretrainedTransformerEncoder(model_id=model_id, fine_tune=fine_tune)


def encode_text(
    transcripts,
    model_id_or_encoder: str | TextEncoder = "hash",
    utterance_ids=None,
    intents=None,
) -> list[Embedding]:
    """Embed transcripts in evaluation mode, returning tagged vectors."""
    if isinstance(model_id_or_encoder, TextEncoder):
        encoder = model_id_or_encoder
    else:
        encoder = build_text_encoder(model_id_or_encoder)
    encoder.eval()
    with torch.no_grad():
        vectors = encoder(list(transcripts)).cpu().numpy()
    out = []
    for i in range(vectors.shape[0]):
        out.append(
            Embedding(
                vector=vectors[i],
                modality=Modality.TEXT,
                utterance_id=utterance_ids[i] if utterance_ids is not None else "",
                intent=intents[i] if intents is not None else None,
            )
        )
    return out
