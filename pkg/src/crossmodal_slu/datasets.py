"""Dataset preparation: turn a raw corpus layout into standard manifests.

Each prepare function writes train/valid/test JSONL manifests plus an
``intents.txt`` vocabulary file into the output directory.

* fsc: the published Fluent Speech Commands layout
  (``data/{train,valid,test}_data.csv`` with path/transcription/action/
  object/location columns); the intent label is "action|object|location"
  and the published splits are kept as-is.
* snips: no canonical on-disk layout is assumed; the dataset directory must
  contain either ``all.jsonl`` (our manifest schema) or ``metadata.csv``
  (columns id,audio,text,intent). Records then get a seeded stratified
  80-10-10 split.
* synthetic: generated from scratch, no external files.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

from .errors import ValidationError
from .evaluator import SyntheticDataset, make_synthetic_dataset
from .features import UtteranceRecord, load_manifest, make_split, write_manifest

FSC_SPLITS = ("train", "valid", "test")
FSC_COLUMNS = ("path", "transcription", "action", "object", "location")


@dataclass
class PreparedDataset:
    out_dir: Path
    train_manifest: Path
    valid_manifest: Path
    test_manifest: Path
    vocab_path: Path
    intent_vocab: list[str]
    num_records: int


def _write_vocab(out_dir: Path, vocab: list[str]) -> Path:
    path = out_dir / "intents.txt"
    path.write_text("\n".join(vocab) + "\n", encoding="utf-8")
    return path


def _finalize(
    out_dir: Path,
    train: list[UtteranceRecord],
    valid: list[UtteranceRecord],
    test: list[UtteranceRecord],
) -> PreparedDataset:
    out_dir.mkdir(parents=True, exist_ok=True)
    all_records = train + valid + test
    vocab = sorted({r.intent for r in all_records})
    return PreparedDataset(
        out_dir=out_dir,
        train_manifest=write_manifest(train, out_dir / "train.jsonl"),
        valid_manifest=write_manifest(valid, out_dir / "valid.jsonl"),
        test_manifest=write_manifest(test, out_dir / "test.jsonl"),
        vocab_path=_write_vocab(out_dir, vocab),
        intent_vocab=vocab,
        num_records=len(all_records),
    )


def _read_fsc_csv(csv_path: Path, dataset_dir: Path) -> list[UtteranceRecord]:
    records = []
    with csv_path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in FSC_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ValidationError(f"{csv_path}: missing column(s) {missing}")
        for i, row in enumerate(reader):
            intent = f"{row['action']}|{row['object']}|{row['location']}"
            records.append(
                UtteranceRecord(
                    id=f"{csv_path.stem}-{i:06d}",
                    audio_path=(dataset_dir / row["path"]).resolve(),
                    transcript=row["transcription"],
                    intent=intent,
                )
            )
    return records


def prepare_fsc(dataset_dir: str | Path, out_dir: str | Path) -> PreparedDataset:
    """Manifests from the published FSC layout, keeping its own splits."""
    dataset_dir = Path(dataset_dir)
    csv_paths = {s: dataset_dir / "data" / f"{s}_data.csv" for s in FSC_SPLITS}
    absent = [str(p) for p in csv_paths.values() if not p.is_file()]
    if absent:
        raise ValidationError(
            "unrecognized fsc layout; expected these files to exist: " + ", ".join(absent)
        )
    splits = {s: _read_fsc_csv(p, dataset_dir) for s, p in csv_paths.items()}
    return _finalize(Path(out_dir), splits["train"], splits["valid"], splits["test"])


def _read_metadata_csv(path: Path) -> list[UtteranceRecord]:
    records = []
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        needed = ("id", "audio", "text", "intent")
        missing = [c for c in needed if c not in (reader.fieldnames or [])]
        if missing:
            raise ValidationError(f"{path}: missing column(s) {missing}")
        for row in reader:
            records.append(
                UtteranceRecord(
                    id=row["id"],
                    audio_path=(path.parent / row["audio"]).resolve(),
                    transcript=row["text"],
                    intent=row["intent"],
                )
            )
    return records


def prepare_snips(
    dataset_dir: str | Path,
    out_dir: str | Path,
    seed: int = 0,
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1),
) -> PreparedDataset:
    """Manifests for a Snips-style corpus with a seeded 80-10-10 split."""
    dataset_dir = Path(dataset_dir)
    jsonl = dataset_dir / "all.jsonl"
    meta = dataset_dir / "metadata.csv"
    if jsonl.is_file():
        records = load_manifest(jsonl).records
    elif meta.is_file():
        records = _read_metadata_csv(meta)
    else:
        raise ValidationError(
            f"unrecognized snips layout in {dataset_dir}; expected one of: "
            f"{jsonl} (JSONL with id/audio/text/intent per line) or "
            f"{meta} (CSV with columns id,audio,text,intent)"
        )
    if not records:
        raise ValidationError(f"no records found under {dataset_dir}")
    train, valid, test = make_split(records, fractions=fractions, seed=seed)
    return _finalize(Path(out_dir), train, valid, test)


def prepare_synthetic(
    out_dir: str | Path, num_intents: int = 2, per_intent: int = 50, seed: int = 0
) -> PreparedDataset:
    """Self-contained synthetic corpus; see make_synthetic_dataset."""
    ds: SyntheticDataset = make_synthetic_dataset(
        out_dir, num_intents=num_intents, per_intent=per_intent, seed=seed
    )
    return PreparedDataset(
        out_dir=ds.root,
        train_manifest=ds.train_manifest,
        valid_manifest=ds.valid_manifest,
        test_manifest=ds.test_manifest,
        vocab_path=ds.vocab_path,
        intent_vocab=ds.intent_vocab,
        num_records=sum(1 for _ in ds.full_manifest.open()),
    )


def prepare(
    kind: str,
    out_dir: str | Path,
    dataset_dir: str | Path | None = None,
    seed: int = 0,
    num_intents: int = 2,
    per_intent: int = 50,
) -> PreparedDataset:
    if kind == "fsc":
        if dataset_dir is None:
            raise ValidationError("fsc preparation needs --data-dir")
        return prepare_fsc(dataset_dir, out_dir)
    if kind == "snips":
        if dataset_dir is None:
            raise ValidationError("snips preparation needs --data-dir")
        return prepare_snips(dataset_dir, out_dir, seed=seed)
    if kind == "synthetic":
        return prepare_synthetic(out_dir, num_intents=num_intents, per_intent=per_intent, seed=seed)
    raise ValidationError(f"unknown dataset kind {kind!r}; expected fsc, snips, or synthetic")
