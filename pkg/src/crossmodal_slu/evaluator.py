"""Evaluation metrics, embedding export, and the synthetic desk-scale dataset.

Evaluation uses the acoustic branch only; the text pipeline exists purely for
training and is never invoked here. The synthetic generator produces short
harmonic tones whose timbre varies by intent (pairs of intents deliberately
share a fundamental so they are acoustically close), plus template
transcripts, so the entire pipeline can run end-to-end in minutes with no
external downloads.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from scipy.io import wavfile

from .encoders import collate_features
from .errors import ValidationError
from .features import (
    FeatureConfig,
    Manifest,
    UtteranceRecord,
    featurize_records,
    load_manifest,
    make_split,
    write_manifest,
)
from .trainer import Checkpoint, load_checkpoint


@dataclass
class EvalResult:
    """Intent-classification metrics over one manifest."""

    accuracy: float
    num_examples: int
    intent_vocab: list[str]
    confusion: np.ndarray  # [true, predicted]
    per_intent: dict[str, dict[str, float | None]]
    predictions: list[tuple[str, str, str]]  # (utterance_id, true, predicted)

    def to_json_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "num_examples": self.num_examples,
            "intent_vocab": self.intent_vocab,
            "confusion": self.confusion.tolist(),
            "per_intent": self.per_intent,
            "predictions": [list(p) for p in self.predictions],
        }


def _predict(
    checkpoint: Checkpoint, manifest: Manifest, batch_size: int = 64
) -> list[str]:
    feats = featurize_records(manifest.records, checkpoint.feature_config)
    encoder = checkpoint.acoustic_encoder
    classifier = checkpoint.classifier
    encoder.eval()
    classifier.eval()
    predicted: list[str] = []
    with torch.no_grad():
        for start in range(0, len(feats), batch_size):
            chunk = feats[start : start + batch_size]
            frames, lengths = collate_features(chunk)
            logits = classifier(encoder(frames, lengths))
            for k in logits.argmax(dim=1).tolist():
                predicted.append(checkpoint.intent_vocab[k])
    return predicted


def _resolve_manifest(checkpoint: Checkpoint, manifest: str | Path | Manifest) -> Manifest:
    if isinstance(manifest, Manifest):
        loaded = manifest
        extra = set(r.intent for r in loaded.records) - set(checkpoint.intent_vocab)
        if extra:
            raise ValidationError(
                f"manifest intents {sorted(extra)} are not in the checkpoint vocabulary"
            )
        return loaded
    return load_manifest(manifest, checkpoint.intent_vocab)


def evaluate(
    checkpoint: Checkpoint | str | Path,
    manifest: str | Path | Manifest,
    batch_size: int = 64,
) -> EvalResult:
    """Accuracy, per-intent precision/recall, and the full confusion matrix.

    A manifest intent outside the checkpoint's vocabulary is an error.
    """
    if not isinstance(checkpoint, Checkpoint):
        checkpoint = load_checkpoint(checkpoint)
    loaded = _resolve_manifest(checkpoint, manifest)
    if not loaded.records:
        raise ValidationError("cannot evaluate an empty manifest")
    predicted = _predict(checkpoint, loaded, batch_size)

    vocab = checkpoint.intent_vocab
    index = {intent: i for i, intent in enumerate(vocab)}
    confusion = np.zeros((len(vocab), len(vocab)), dtype=np.int64)
    predictions = []
    for rec, pred in zip(loaded.records, predicted):
        confusion[index[rec.intent], index[pred]] += 1
        predictions.append((rec.id, rec.intent, pred))

    correct = int(np.trace(confusion))
    per_intent: dict[str, dict[str, float | None]] = {}
    for intent, i in index.items():
        support = int(confusion[i].sum())
        predicted_count = int(confusion[:, i].sum())
        tp = int(confusion[i, i])
        per_intent[intent] = {
            "support": support,
            "precision": tp / predicted_count if predicted_count else None,
            "recall": tp / support if support else None,
        }
    return EvalResult(
        accuracy=correct / len(loaded.records),
        num_examples=len(loaded.records),
        intent_vocab=list(vocab),
        confusion=confusion,
        per_intent=per_intent,
        predictions=predictions,
    )


def false_positive_rate(
    confusion: np.ndarray,
    intent_vocab: Sequence[str],
    true_intent: str,
    predicted_intent: str,
) -> float | None:
    """Directional confusion rate: fraction of true-A utterances predicted as B.

    Returns None (absent) when intent A has zero support.
    """
    vocab = list(intent_vocab)
    for intent in (true_intent, predicted_intent):
        if intent not in vocab:
            raise ValidationError(f"intent {intent!r} not in vocabulary")
    row = confusion[vocab.index(true_intent)]
    support = int(row.sum())
    if support == 0:
        return None
    return float(row[vocab.index(predicted_intent)]) / support


def confusion_to_csv(result: EvalResult, path: str | Path) -> Path:
    """Confusion matrix as CSV with intent labels on both axes."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["true\\predicted", *result.intent_vocab])
        for intent, row in zip(result.intent_vocab, result.confusion):
            writer.writerow([intent, *row.tolist()])
    return path


def metrics_to_json(result: EvalResult, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(result.to_json_dict(), indent=2), encoding="utf-8")
    return path


def export_embeddings(
    checkpoint: Checkpoint | str | Path,
    manifest: str | Path | Manifest,
    out_path: str | Path,
    batch_size: int = 64,
) -> Path:
    """Write (utterance_id, intent, 768-d acoustic embedding) rows as TSV."""
    if not isinstance(checkpoint, Checkpoint):
        checkpoint = load_checkpoint(checkpoint)
    loaded = _resolve_manifest(checkpoint, manifest)
    feats = featurize_records(loaded.records, checkpoint.feature_config)
    encoder = checkpoint.acoustic_encoder
    encoder.eval()

    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    dim = checkpoint.run_config.acoustic.output_dim
    header = ["utterance_id", "intent", *[f"e{i:03d}" for i in range(dim)]]
    with out_path.open("w", encoding="utf-8") as fh:
        fh.write("\t".join(header) + "\n")
        with torch.no_grad():
            for start in range(0, len(feats), batch_size):
                chunk = feats[start : start + batch_size]
                frames, lengths = collate_features(chunk)
                vectors = encoder(frames, lengths).cpu().numpy()
                for rec, vec in zip(loaded.records[start : start + len(chunk)], vectors):
                    values = "\t".join(f"{v:.8e}" for v in vec)
                    fh.write(f"{rec.id}\t{rec.intent}\t{values}\n")
    return out_path


def read_embedding_export(path: str | Path) -> tuple[list[str], list[str], np.ndarray]:
    """Parse an export TSV back into (ids, intents, vectors)."""
    ids: list[str] = []
    intents: list[str] = []
    rows: list[list[float]] = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if header[:2] != ["utterance_id", "intent"]:
            raise ValidationError(f"not an embedding export: {path}")
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            ids.append(parts[0])
            intents.append(parts[1])
            rows.append([float(v) for v in parts[2:]])
    return ids, intents, np.asarray(rows)


def embedding_distance_stats(
    vectors: np.ndarray, intents: Sequence[str]
) -> tuple[float, float]:
    """Mean pairwise squared distance within intents vs across intents."""
    vectors = np.asarray(vectors)
    labels = np.asarray(intents)
    diffs = ((vectors[:, None, :] - vectors[None, :, :]) ** 2).sum(axis=2)
    same = labels[:, None] == labels[None, :]
    upper = np.triu(np.ones_like(same, dtype=bool), k=1)
    intra = diffs[same & upper]
    inter = diffs[~same & upper]
    if intra.size == 0 or inter.size == 0:
        raise ValidationError("need at least two intents with two members each")
    return float(intra.mean()), float(inter.mean())


# --- synthetic desk-scale dataset ------------------------------------------

# Intent pairs share a fundamental frequency (acoustically close) but differ
# in harmonic timbre; transcripts share intent keywords so text embeddings of
# one intent cluster.
_SYNTHETIC_INTENTS: list[dict] = [
    {
        "name": "increase_brightness",
        "fundamental_hz": 392.0,
        "harmonics": ((1, 1.0), (2, 0.6), (4, 0.35)),
        "templates": [
            "please increase the brightness",
            "turn the brightness up",
            "make it brighter in here",
            "increase brightness a little",
            "could you brighten the room",
        ],
    },
    {
        "name": "decrease_brightness",
        "fundamental_hz": 392.0,
        "harmonics": ((1, 1.0), (3, 0.6), (5, 0.35)),
        "templates": [
            "please decrease the brightness",
            "turn the brightness down",
            "make it dimmer in here",
            "decrease brightness a little",
            "could you dim the room",
        ],
    },
    {
        "name": "increase_volume",
        "fundamental_hz": 587.0,
        "harmonics": ((1, 1.0), (2, 0.6), (4, 0.35)),
        "templates": [
            "please increase the volume",
            "turn the volume up",
            "make the music louder",
            "increase volume a bit",
            "could you raise the sound",
        ],
    },
    {
        "name": "decrease_volume",
        "fundamental_hz": 587.0,
        "harmonics": ((1, 1.0), (3, 0.6), (5, 0.35)),
        "templates": [
            "please decrease the volume",
            "turn the volume down",
            "make the music quieter",
            "decrease volume a bit",
            "could you lower the sound",
        ],
    },
    {
        "name": "play_music",
        "fundamental_hz": 880.0,
        "harmonics": ((1, 1.0), (2, 0.6), (4, 0.35)),
        "templates": [
            "play some music",
            "start the music please",
            "put a song on",
            "play my playlist",
            "start playing music",
        ],
    },
    {
        "name": "stop_music",
        "fundamental_hz": 880.0,
        "harmonics": ((1, 1.0), (3, 0.6), (5, 0.35)),
        "templates": [
            "stop the music",
            "pause the music please",
            "turn the song off",
            "stop playing music",
            "silence the music",
        ],
    },
]


@dataclass
class SyntheticDataset:
    root: Path
    train_manifest: Path
    valid_manifest: Path
    test_manifest: Path
    full_manifest: Path
    vocab_path: Path
    intent_vocab: list[str] = field(default_factory=list)


def _synthesize_tone(
    rng: np.random.Generator, spec: dict, sample_rate: int
) -> np.ndarray:
    duration = rng.uniform(0.5, 0.9)
    n = int(duration * sample_rate)
    t = np.arange(n) / sample_rate
    fundamental = spec["fundamental_hz"] * rng.uniform(0.99, 1.01)
    wave = np.zeros(n)
    for mult, amp in spec["harmonics"]:
        wave += amp * np.sin(2 * np.pi * fundamental * mult * t + rng.uniform(0, 2 * np.pi))
    envelope = np.minimum(1.0, np.minimum(t / 0.05, (duration - t) / 0.05))
    wave = wave * np.clip(envelope, 0.0, 1.0)
    wave += 0.01 * rng.standard_normal(n)
    wave = 0.6 * wave / np.max(np.abs(wave))
    return wave


def make_synthetic_dataset(
    out_dir: str | Path,
    num_intents: int = 2,
    per_intent: int = 50,
    seed: int = 0,
    sample_rate: int = 16000,
) -> SyntheticDataset:
    """Generate wav files + manifests for a small separable intent set.

    Deterministic for a fixed seed (identical audio bytes). Splits follow the
    standard 80-10-10 stratified scheme with the same seed.
    """
    if not (2 <= num_intents <= len(_SYNTHETIC_INTENTS)):
        raise ValidationError(
            f"num_intents must be in [2, {len(_SYNTHETIC_INTENTS)}], got {num_intents}"
        )
    out_dir = Path(out_dir)
    wav_dir = out_dir / "wavs"
    wav_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    records: list[UtteranceRecord] = []
    for spec in _SYNTHETIC_INTENTS[:num_intents]:
        for k in range(per_intent):
            utt_id = f"{spec['name']}-{k:04d}"
            wave = _synthesize_tone(rng, spec, sample_rate)
            wav_path = wav_dir / f"{utt_id}.wav"
            wavfile.write(wav_path, sample_rate, (wave * 32767).astype(np.int16))
            transcript = spec["templates"][k % len(spec["templates"])]
            records.append(
                UtteranceRecord(
                    id=utt_id, audio_path=wav_path.resolve(), transcript=transcript,
                    intent=spec["name"],
                )
            )

    train, valid, test = make_split(records, seed=seed)
    paths = {
        "full": write_manifest(records, out_dir / "full.jsonl"),
        "train": write_manifest(train, out_dir / "train.jsonl"),
        "valid": write_manifest(valid, out_dir / "valid.jsonl"),
        "test": write_manifest(test, out_dir / "test.jsonl"),
    }
    vocab = sorted({r.intent for r in records})
    vocab_path = out_dir / "intents.txt"
    vocab_path.write_text("\n".join(vocab) + "\n", encoding="utf-8")
    return SyntheticDataset(
        root=out_dir,
        train_manifest=paths["train"],
        valid_manifest=paths["valid"],
        test_manifest=paths["test"],
        full_manifest=paths["full"],
        vocab_path=vocab_path,
        intent_vocab=vocab,
    )
