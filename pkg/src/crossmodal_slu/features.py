"""Dataset manifests, stratified splitting, and MFCC feature extraction.

Manifests are JSONL files with one utterance per line (fields ``id``,
``audio``, ``text``, ``intent``; audio paths are relative to the manifest's
directory). Feature extraction turns PCM audio into framed MFCC matrices and
is a pure function of (samples, rate, config), so extracted features can be
memoized to an on-disk cache keyed by utterance id and config hash.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import tempfile
import warnings
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np
from scipy.fft import dct, rfft
from scipy.io import wavfile
from scipy.signal import get_window, resample_poly

from .errors import ManifestError, ValidationError

MANIFEST_FIELDS = ("id", "audio", "text", "intent")


@dataclass(frozen=True)
class UtteranceRecord:
    """One manifest row: audio path, transcript, and intent label."""

    id: str
    audio_path: Path
    transcript: str
    intent: str

    def __post_init__(self):
        if not self.transcript:
            raise ValidationError(f"utterance {self.id!r} has an empty transcript")


@dataclass
class Manifest:
    """Loaded manifest: records plus the intent vocabulary in effect."""

    records: list[UtteranceRecord]
    intent_vocab: list[str]

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[UtteranceRecord]:
        return iter(self.records)


def load_manifest(
    path: str | Path,
    intent_vocab: str | Sequence[str] = "infer",
    check_audio: bool = True,
) -> Manifest:
    """Read a JSONL manifest.

    With ``intent_vocab="infer"`` the vocabulary is the sorted set of observed
    labels; passing a fixed vocabulary makes unknown labels an error. Each
    record's audio path is resolved relative to the manifest directory and,
    unless ``check_audio`` is disabled, must point at a readable file.
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    fixed_vocab = None if intent_vocab == "infer" else set(intent_vocab)

    records: list[UtteranceRecord] = []
    seen_intents: set[str] = set()
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{line_no}: invalid JSON ({exc.msg})") from exc
            if not isinstance(row, dict):
                raise ManifestError(f"{path}:{line_no}: expected an object per line")
            missing = [k for k in MANIFEST_FIELDS if k not in row]
            if missing:
                raise ManifestError(
                    f"{path}:{line_no}: missing field(s) {', '.join(missing)}"
                )
            intent = str(row["intent"])
            if fixed_vocab is not None and intent not in fixed_vocab:
                raise ValidationError(
                    f"{path}:{line_no}: intent {intent!r} not in the fixed vocabulary"
                )
            audio_path = (path.parent / str(row["audio"])).resolve()
            if check_audio and not audio_path.is_file():
                raise ManifestError(f"{path}:{line_no}: audio file not found: {audio_path}")
            try:
                record = UtteranceRecord(
                    id=str(row["id"]),
                    audio_path=audio_path,
                    transcript=str(row["text"]),
                    intent=intent,
                )
            except ValidationError as exc:
                raise ManifestError(f"{path}:{line_no}: {exc}") from exc
            records.append(record)
            seen_intents.add(intent)

    vocab = sorted(seen_intents) if fixed_vocab is None else sorted(fixed_vocab)
    return Manifest(records=records, intent_vocab=vocab)


def write_manifest(records: Iterable[UtteranceRecord], path: str | Path) -> Path:
    """Write records as JSONL; audio paths are stored relative to the manifest dir."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            audio = os.path.relpath(rec.audio_path, path.parent)
            fh.write(
                json.dumps(
                    {"id": rec.id, "audio": audio, "text": rec.transcript, "intent": rec.intent},
                    ensure_ascii=False,
                )
                + "\n"
            )
    return path


def make_split(
    records: Sequence[UtteranceRecord],
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> tuple[list[UtteranceRecord], list[UtteranceRecord], list[UtteranceRecord]]:
    """Deterministic stratified train/valid/test split.

    Each intent is shuffled and sliced independently so small intents cannot be
    starved; an intent with fewer records than splits goes entirely to train
    (with a warning). Splits are disjoint and cover all records.
    """
    if not records:
        raise ValidationError("cannot split an empty record list")
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise ValidationError(f"need three non-negative fractions, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValidationError(f"fractions must sum to 1, got {fractions}")

    by_intent: dict[str, list[int]] = {}
    for idx, rec in enumerate(records):
        by_intent.setdefault(rec.intent, []).append(idx)

    rng = np.random.default_rng(seed)
    train_idx: list[int] = []
    valid_idx: list[int] = []
    test_idx: list[int] = []
    for intent in sorted(by_intent):
        idxs = np.array(by_intent[intent])
        rng.shuffle(idxs)
        n = len(idxs)
        if n < 3:
            warnings.warn(
                f"intent {intent!r} has only {n} record(s); assigning all to train",
                stacklevel=2,
            )
            train_idx.extend(idxs.tolist())
            continue
        n_valid = math.floor(n * fractions[1])
        n_test = math.floor(n * fractions[2])
        valid_idx.extend(idxs[:n_valid].tolist())
        test_idx.extend(idxs[n_valid : n_valid + n_test].tolist())
        train_idx.extend(idxs[n_valid + n_test :].tolist())

    pick = lambda idxs: [records[i] for i in sorted(idxs)]
    return pick(train_idx), pick(valid_idx), pick(test_idx)


@dataclass(frozen=True)
class FeatureConfig:
    """Framed-MFCC extraction knobs.

    Every field participates in :meth:`config_hash`, so two runs with equal
    hashes produce bit-identical features. The fields past ``sample_rate_hz``
    pin details the standard MFCC recipe leaves open.
    """

    window_ms: float = 25.0
    hop_ms: float = 10.0
    num_mfcc: int = 40
    num_mel_bins: int = 80
    sample_rate_hz: int = 16000
    preemphasis: float = 0.97
    log_floor: float = 1e-10
    lifter: int = 0
    mel_fmin_hz: float = 0.0
    mel_fmax_hz: float | None = None  # None -> Nyquist

    def __post_init__(self):
        if not (self.window_ms > self.hop_ms > 0):
            raise ValidationError(
                f"need window_ms > hop_ms > 0, got {self.window_ms}/{self.hop_ms}"
            )
        if self.num_mfcc > self.num_mel_bins:
            raise ValidationError(
                f"num_mfcc ({self.num_mfcc}) must not exceed num_mel_bins ({self.num_mel_bins})"
            )
        if self.sample_rate_hz <= 0:
            raise ValidationError("sample_rate_hz must be positive")

    @property
    def window_samples(self) -> int:
        return int(round(self.sample_rate_hz * self.window_ms / 1000.0))

    @property
    def hop_samples(self) -> int:
        return int(round(self.sample_rate_hz * self.hop_ms / 1000.0))

    @property
    def n_fft(self) -> int:
        return 1 << (self.window_samples - 1).bit_length()

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureConfig":
        return cls(**d)

    def config_hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


@dataclass
class FeatureSequence:
    """MFCC frames for one utterance: a [T, num_mfcc] float32 matrix."""

    frames: np.ndarray
    utterance_id: str = ""

    def __post_init__(self):
        if self.frames.ndim != 2:
            raise ValidationError(f"frames must be 2-D, got shape {self.frames.shape}")
        if not np.isfinite(self.frames).all():
            raise ValidationError(f"non-finite feature values for {self.utterance_id!r}")

    @property
    def length(self) -> int:
        return self.frames.shape[0]


def num_frames(num_samples: int, window_samples: int, hop_samples: int) -> int:
    """Frame count for framing without padding: 1 + floor((N - window) / hop)."""
    if num_samples < window_samples:
        raise ValidationError(
            f"audio of {num_samples} samples is shorter than one window ({window_samples})"
        )
    return 1 + (num_samples - window_samples) // hop_samples


def load_audio(path: str | Path) -> tuple[np.ndarray, int]:
    """Read a wav file as float64 samples in [-1, 1] (channels averaged)."""
    rate, data = wavfile.read(path)
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        samples = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        samples = (data.astype(np.float64) - 128.0) / 128.0
    else:
        samples = data.astype(np.float64)
    if samples.ndim > 1:
        samples = samples.mean(axis=1)
    return samples, int(rate)


def resample_audio(samples: np.ndarray, rate: int, target_rate: int) -> np.ndarray:
    """Polyphase resampling to target_rate (identity when rates match)."""
    if rate == target_rate:
        return samples
    g = math.gcd(rate, target_rate)
    return resample_poly(samples, target_rate // g, rate // g)


def _mel_from_hz(freq_hz):
    return 2595.0 * np.log10(1.0 + np.asarray(freq_hz, dtype=np.float64) / 700.0)


def _hz_from_mel(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: FeatureConfig) -> np.ndarray:
    """Triangular mel filterbank on the HTK mel scale, shape [num_mel_bins, n_fft//2 + 1]."""
    fmax = cfg.mel_fmax_hz if cfg.mel_fmax_hz is not None else cfg.sample_rate_hz / 2.0
    mel_edges = np.linspace(
        _mel_from_hz(cfg.mel_fmin_hz), _mel_from_hz(fmax), cfg.num_mel_bins + 2
    )
    hz_edges = _hz_from_mel(mel_edges)
    fft_freqs = np.linspace(0.0, cfg.sample_rate_hz / 2.0, cfg.n_fft // 2 + 1)

    fb = np.zeros((cfg.num_mel_bins, fft_freqs.size))
    for i in range(cfg.num_mel_bins):
        left, center, right = hz_edges[i], hz_edges[i + 1], hz_edges[i + 2]
        up = (fft_freqs - left) / max(center - left, 1e-12)
        down = (right - fft_freqs) / max(right - center, 1e-12)
        fb[i] = np.maximum(0.0, np.minimum(up, down))
    return fb


def extract_mfcc(
    samples: np.ndarray,
    rate: int,
    cfg: FeatureConfig,
    utterance_id: str = "",
) -> FeatureSequence:
    """Framed MFCCs for one utterance.

    Audio at a different rate than the config is resampled first. The frame
    count of the (possibly resampled) audio is 1 + floor((N - window) / hop);
    audio shorter than one window, or containing NaN, is an error.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 1:
        raise ValidationError(f"expected mono samples, got shape {samples.shape}")
    if not np.isfinite(samples).all():
        raise ValidationError(f"non-finite samples in audio for {utterance_id!r}")
    samples = resample_audio(samples, rate, cfg.sample_rate_hz)

    win = cfg.window_samples
    hop = cfg.hop_samples
    t = num_frames(samples.size, win, hop)

    if cfg.preemphasis:
        samples = np.concatenate(
            ([samples[0]], samples[1:] - cfg.preemphasis * samples[:-1])
        )
    frames = np.lib.stride_tricks.sliding_window_view(samples, win)[::hop][:t]
    window = get_window("hamming", win, fftbins=True)
    spectrum = np.abs(rfft(frames * window, n=cfg.n_fft, axis=1)) ** 2
    mel = spectrum @ mel_filterbank(cfg).T
    log_mel = np.log(np.maximum(mel, cfg.log_floor))
    coeffs = dct(log_mel, type=2, axis=1, norm="ortho")[:, : cfg.num_mfcc]
    if cfg.lifter:
        n = np.arange(cfg.num_mfcc)
        coeffs = coeffs * (1.0 + (cfg.lifter / 2.0) * np.sin(np.pi * n / cfg.lifter))
    return FeatureSequence(frames=coeffs.astype(np.float32), utterance_id=utterance_id)


class FeatureCache:
    """On-disk memo of extracted features, keyed by (utterance id, config hash).

    One ``.npy`` file per utterance; writes go to a temp file in the same
    directory and are renamed into place, so a reader never sees a partial
    record and round-trips are bit-exact.
    """

    def __init__(self, root: str | Path, cfg: FeatureConfig):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.cfg = cfg
        self._cfg_hash = cfg.config_hash()

    def path_for(self, utterance_id: str) -> Path:
        digest = hashlib.sha256(utterance_id.encode("utf-8")).hexdigest()[:24]
        return self.root / f"{digest}-{self._cfg_hash}.npy"

    def get(self, utterance_id: str) -> np.ndarray | None:
        path = self.path_for(utterance_id)
        if not path.is_file():
            return None
        return np.load(path)

    def put(self, utterance_id: str, frames: np.ndarray) -> None:
        path = self.path_for(utterance_id)
        fd, tmp = tempfile.mkstemp(dir=self.root, suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                np.save(fh, frames)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise


def featurize_records(
    records: Sequence[UtteranceRecord],
    cfg: FeatureConfig,
    cache: FeatureCache | None = None,
) -> list[FeatureSequence]:
    """Extract (or fetch cached) features for records, preserving order."""
    out = []
    for rec in records:
        cached = cache.get(rec.id) if cache is not None else None
        if cached is not None:
            out.append(FeatureSequence(frames=cached, utterance_id=rec.id))
            continue
        samples, rate = load_audio(rec.audio_path)
        seq = extract_mfcc(samples, rate, cfg, utterance_id=rec.id)
        if cache is not None:
            cache.put(rec.id, seq.frames)
        out.append(seq)
    return out
