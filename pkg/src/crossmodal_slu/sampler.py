"""In-batch mining of cross-modal pair and triplet examples.

Mining operates on intent labels and returns indices, so the trainer can
gather gradient-carrying tensors; the typed wrappers attach actual embeddings
for API-level use. Negatives are sampled uniformly within the batch.
"""

from __future__ import annotations

import warnings
from typing import Sequence

import numpy as np

from .encoders import Embedding
from .errors import ValidationError
from .losses import PairExample, TripletExample

MINING_STRATEGIES = ("uniform",)


def _check_strategy(strategy: str) -> None:
    if strategy not in MINING_STRATEGIES:
        raise ValidationError(
            f"unknown mining strategy {strategy!r}; available: {MINING_STRATEGIES}"
        )


def mine_pair_indices(
    intents: Sequence[str], seed: int = 0, strategy: str = "uniform"
) -> list[tuple[int, int, int]]:
    """Mined (acoustic_idx, text_idx, same_intent) triples.

    Every utterance yields a positive pair with its own text embedding and,
    when another intent is present in the batch, one negative pair with a
    uniformly sampled cross-intent text embedding. A single-intent batch
    yields positives only, with a warning.
    """
    _check_strategy(strategy)
    if len(intents) < 2:
        raise ValidationError(f"need a batch of at least 2, got {len(intents)}")
    rng = np.random.default_rng(seed)
    if len(set(intents)) < 2:
        warnings.warn("single-intent batch: mined positive pairs only", stacklevel=2)
    out: list[tuple[int, int, int]] = []
    for i, intent in enumerate(intents):
        out.append((i, i, 1))
        negatives = [j for j, other in enumerate(intents) if other != intent]
        if negatives:
            out.append((i, int(rng.choice(negatives)), 0))
    return out


def mine_triplet_indices(
    intents: Sequence[str], seed: int = 0, strategy: str = "uniform"
) -> list[tuple[int, int, int]]:
    """Mined (anchor, positive, negative) index triples, one per utterance.

    The positive is a uniformly sampled same-intent text embedding (the
    anchor's own transcript is allowed); the negative is a uniformly sampled
    different-intent text embedding. A single-intent batch has no valid
    negatives and yields an empty list, with a warning.
    """
    _check_strategy(strategy)
    rng = np.random.default_rng(seed)
    if len(set(intents)) < 2:
        warnings.warn("single-intent batch: no valid triplet negatives", stacklevel=2)
        return []
    out: list[tuple[int, int, int]] = []
    for i, intent in enumerate(intents):
        positives = [j for j, other in enumerate(intents) if other == intent]
        negatives = [j for j, other in enumerate(intents) if other != intent]
        out.append((i, int(rng.choice(positives)), int(rng.choice(negatives))))
    return out


def _split_batch(batch) -> tuple[list[Embedding], list[Embedding], list[str]]:
    acoustic, text, intents = [], [], []
    for a_emb, t_emb, intent in batch:
        acoustic.append(a_emb)
        text.append(t_emb)
        intents.append(intent)
    return acoustic, text, intents


def mine_pairs(
    batch: Sequence[tuple[Embedding, Embedding, str]],
    seed: int = 0,
    strategy: str = "uniform",
) -> list[PairExample]:
    """Typed pair mining over (acoustic, text, intent) batch entries."""
    acoustic, text, intents = _split_batch(batch)
    indices = mine_pair_indices(intents, seed=seed, strategy=strategy)
    return [
        PairExample(x1=acoustic[i], x2=text[j], same_intent=bool(t)) for i, j, t in indices
    ]


def mine_triplets(
    batch: Sequence[tuple[Embedding, Embedding, str]],
    seed: int = 0,
    strategy: str = "uniform",
) -> list[TripletExample]:
    """Typed triplet mining over (acoustic, text, intent) batch entries."""
    acoustic, text, intents = _split_batch(batch)
    indices = mine_triplet_indices(intents, seed=seed, strategy=strategy)
    return [
        TripletExample(anchor=acoustic[i], positive=text[j], negative=text[k])
        for i, j, k in indices
    ]
