"""Joint training: optimizer setup, schedules, early stopping, checkpoints.

One trainer thread owns all parameter state. Per batch, the acoustic branch
sees ce_acoustic + text_loss_weight * ce_text + a coupling term; with
adversarial coupling, a discriminator step and a generator (fooling) step
alternate within the batch. Runs are reproducible from (config, seed) on a
fixed device. The text encoder is built lazily: a baseline run (coupling
"none", text weight 0) never constructs or invokes it.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from . import sampler
from .adversarial import (
    Discriminator,
    DiscriminatorConfig,
    build_discriminator,
    discriminator_step,
    generator_step,
)
from .config import RunConfig, ScheduleConfig
from .encoders import (
    AcousticEncoder,
    AcousticEncoderConfig,
    ClassifierConfig,
    IntentClassifier,
    build_acoustic_encoder,
    build_classifier,
    collate_features,
)
from .errors import TrainingDiverged, ValidationError
from .features import (
    FeatureCache,
    FeatureConfig,
    FeatureSequence,
    Manifest,
    featurize_records,
    load_manifest,
)
from .losses import Coupling, LossConfig, combined_loss, l2_loss, ranking_loss, triplet_loss
from .text_encoders import TextEncoder, build_text_encoder

CHECKPOINT_FORMAT_VERSION = 1


@dataclass
class TrainState:
    """Bookkeeping for early stopping and checkpoint selection."""

    epoch: int = 0
    best_valid_loss: float = math.inf
    patience_counter: int = 0
    seed: int = 0
    model_state: dict | None = None
    optimizer_state: dict | None = None


def early_stop_check(
    state: TrainState, current_valid_loss: float, patience: int, min_delta: float = 1e-4
) -> str:
    """Update state with this epoch's validation loss; return "continue" or "stop".

    An improvement must beat the running best by more than ``min_delta``;
    ``patience`` consecutive non-improvements stop the run.
    """
    if patience < 1:
        raise ValidationError(f"patience must be at least 1, got {patience}")
    if current_valid_loss < state.best_valid_loss - min_delta:
        state.best_valid_loss = current_valid_loss
        state.patience_counter = 0
        return "continue"
    state.patience_counter += 1
    return "stop" if state.patience_counter >= patience else "continue"


def one_cycle_lr(
    step: int,
    total_steps: int,
    max_lr: float,
    div_factor: float = 25.0,
    final_div_factor: float = 1e4,
) -> float:
    """Triangular one-cycle rate: linear warmup to max_lr at the midpoint
    step, then linear anneal. Starts at max_lr / div_factor and ends at
    (max_lr / div_factor) / final_div_factor."""
    if total_steps < 1 or not (0 <= step < total_steps):
        raise ValidationError(f"step {step} outside schedule of {total_steps} steps")
    initial = max_lr / div_factor
    final = initial / final_div_factor
    if total_steps == 1:
        return max_lr
    pos = step / (total_steps - 1)
    if pos <= 0.5:
        return initial + (max_lr - initial) * (pos / 0.5)
    return max_lr + (final - max_lr) * ((pos - 0.5) / 0.5)


class PlateauDecay:
    """Halve (by ``factor``) the rate after ``patience`` stagnant epochs."""

    def __init__(self, factor: float = 0.5, patience: int = 3, min_delta: float = 1e-4):
        self.factor = factor
        self.patience = patience
        self.min_delta = min_delta
        self.best = math.inf
        self.stagnant = 0
        self.multiplier = 1.0

    def update(self, valid_loss: float) -> float:
        if valid_loss < self.best - self.min_delta:
            self.best = valid_loss
            self.stagnant = 0
        else:
            self.stagnant += 1
            if self.stagnant >= self.patience:
                self.multiplier *= self.factor
                self.stagnant = 0
        return self.multiplier


def schedule_lr(
    schedule: ScheduleConfig,
    step: int,
    total_steps: int = 1,
    valid_loss_history: Sequence[float] = (),
) -> float:
    """Learning-rate multiplier relative to the base (peak) rate.

    one_cycle uses the step position; plateau_decay replays the validation
    loss history and ignores the step.
    """
    if schedule.kind == "one_cycle":
        return (
            one_cycle_lr(
                step, total_steps, schedule.max_lr, schedule.div_factor, schedule.final_div_factor
            )
            / schedule.max_lr
        )
    decay = PlateauDecay(schedule.plateau_factor, schedule.plateau_patience)
    multiplier = 1.0
    for loss in valid_loss_history:
        multiplier = decay.update(loss)
    return multiplier


@dataclass
class TrainResult:
    checkpoint_path: Path
    metrics_path: Path
    history: list[dict]
    best_valid_loss: float
    epochs_run: int
    stopped_early: bool
    intent_vocab: list[str] = field(default_factory=list)


def save_checkpoint(
    path: str | Path,
    run_config: RunConfig,
    intent_vocab: Sequence[str],
    encoder: AcousticEncoder,
    classifier: IntentClassifier,
    epoch: int,
    valid_loss: float,
    discriminator: Discriminator | None = None,
) -> Path:
    """Versioned checkpoint: parameters plus the full config and hashes.

    The text encoder is referenced by model id inside the config, never
    serialized.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "run_config": run_config.to_dict(),
        "config_hash": run_config.config_hash(),
        "feature_config_hash": run_config.features.config_hash(),
        "intent_vocab": list(intent_vocab),
        "acoustic_state": encoder.state_dict(),
        "classifier_state": classifier.state_dict(),
        "discriminator_state": discriminator.state_dict() if discriminator else None,
        "epoch": epoch,
        "valid_loss": float(valid_loss),
    }
    torch.save(payload, path)
    return path


@dataclass
class Checkpoint:
    run_config: RunConfig
    intent_vocab: list[str]
    acoustic_encoder: AcousticEncoder
    classifier: IntentClassifier
    feature_config: FeatureConfig
    epoch: int
    valid_loss: float
    config_hash: str
    discriminator: Discriminator | None = None

    @property
    def text_model_id(self) -> str:
        return self.run_config.text.model_id


def load_checkpoint(path: str | Path) -> Checkpoint:
    payload = torch.load(path, map_location="cpu", weights_only=True)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValidationError(
            f"unsupported checkpoint format {version!r} (expected {CHECKPOINT_FORMAT_VERSION})"
        )
    run_config = RunConfig.from_dict(payload["run_config"])
    if payload["feature_config_hash"] != run_config.features.config_hash():
        raise ValidationError("checkpoint feature-config hash does not match its config")
    encoder = AcousticEncoder(run_config.acoustic)
    encoder.load_state_dict(payload["acoustic_state"])
    encoder.eval()
    vocab = list(payload["intent_vocab"])
    classifier = IntentClassifier(
        ClassifierConfig(num_intents=len(vocab), input_dim=run_config.acoustic.output_dim)
    )
    classifier.load_state_dict(payload["classifier_state"])
    classifier.eval()
    discriminator = None
    if payload.get("discriminator_state") is not None:
        disc_cfg = DiscriminatorConfig(
            **{**run_config.discriminator.to_dict(), "input_dim": run_config.acoustic.output_dim}
        )
        discriminator = Discriminator(disc_cfg)
        discriminator.load_state_dict(payload["discriminator_state"])
    return Checkpoint(
        run_config=run_config,
        intent_vocab=vocab,
        acoustic_encoder=encoder,
        classifier=classifier,
        feature_config=run_config.features,
        epoch=int(payload["epoch"]),
        valid_loss=float(payload["valid_loss"]),
        config_hash=payload["config_hash"],
        discriminator=discriminator,
    )


def _read_vocab_file(path: str | Path) -> list[str]:
    with open(path, "r", encoding="utf-8") as fh:
        vocab = [line.strip() for line in fh if line.strip()]
    if not vocab:
        raise ValidationError(f"vocabulary file {path} is empty")
    return vocab


def _batched_validation(
    encoder: AcousticEncoder,
    classifier: IntentClassifier,
    feats: Sequence[FeatureSequence],
    targets: torch.Tensor,
    batch_size: int,
) -> tuple[float, float]:
    """Acoustic-branch CE loss and accuracy; the text pipeline plays no part."""
    encoder.eval()
    classifier.eval()
    total_loss = 0.0
    correct = 0
    with torch.no_grad():
        for start in range(0, len(feats), batch_size):
            chunk = feats[start : start + batch_size]
            frames, lengths = collate_features(chunk)
            logits = classifier(encoder(frames, lengths))
            chunk_targets = targets[start : start + len(chunk)]
            total_loss += float(F.cross_entropy(logits, chunk_targets, reduction="sum"))
            correct += int((logits.argmax(dim=1) == chunk_targets).sum())
    encoder.train()
    classifier.train()
    return total_loss / len(feats), correct / len(feats)


class _FrozenTextCache:
    """Per-utterance memo of frozen text embeddings (skipped when fine-tuning)."""

    def __init__(self, encoder: TextEncoder):
        self.encoder = encoder
        self.store: dict[str, torch.Tensor] = {}

    def __call__(self, records) -> torch.Tensor:
        if self.encoder.fine_tune:
            return self.encoder([r.transcript for r in records])
        missing = [r for r in records if r.id not in self.store]
        if missing:
            vectors = self.encoder([r.transcript for r in missing])
            for rec, vec in zip(missing, vectors):
                self.store[rec.id] = vec
        return torch.stack([self.store[r.id] for r in records])


def train(cfg: RunConfig) -> TrainResult:
    """Run the full training loop described by ``cfg``.

    Returns the best-validation-loss checkpoint and the per-epoch metrics
    log (JSONL with every loss component and validation accuracy). On a
    non-finite loss the last good parameters are checkpointed and
    TrainingDiverged is raised.
    """
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(cfg.seed)
    shuffle_rng = np.random.default_rng(cfg.seed)

    if cfg.acoustic.input_dim != cfg.features.num_mfcc:
        raise ValidationError(
            f"acoustic input_dim {cfg.acoustic.input_dim} != num_mfcc {cfg.features.num_mfcc}"
        )

    vocab_spec = _read_vocab_file(cfg.data.intent_vocab) if cfg.data.intent_vocab else "infer"
    train_manifest = load_manifest(cfg.data.train_manifest, vocab_spec)
    vocab = train_manifest.intent_vocab
    valid_manifest = load_manifest(cfg.data.valid_manifest, vocab)
    if not train_manifest.records:
        raise ValidationError("training split is empty")
    if not valid_manifest.records:
        raise ValidationError("validation split is empty")
    if len(vocab) < 2:
        raise ValidationError(f"need at least 2 intents, found {vocab}")
    intent_index = {intent: i for i, intent in enumerate(vocab)}

    cache = FeatureCache(cfg.data.feature_cache, cfg.features) if cfg.data.feature_cache else None
    train_feats = featurize_records(train_manifest.records, cfg.features, cache)
    valid_feats = featurize_records(valid_manifest.records, cfg.features, cache)
    train_targets = torch.tensor(
        [intent_index[r.intent] for r in train_manifest.records], dtype=torch.long
    )
    valid_targets = torch.tensor(
        [intent_index[r.intent] for r in valid_manifest.records], dtype=torch.long
    )

    encoder = build_acoustic_encoder(cfg.acoustic, cfg.seed)
    classifier = build_classifier(
        ClassifierConfig(num_intents=len(vocab), input_dim=cfg.acoustic.output_dim),
        cfg.seed + 1,
    )
    encoder.train()
    classifier.train()

    coupling = cfg.loss.coupling
    need_text = coupling in (
        Coupling.L2,
        Coupling.RANKING,
        Coupling.TRIPLET,
        Coupling.ADVERSARIAL,
    ) or cfg.loss.text_loss_weight > 0
    text_cache = None
    if need_text:
        text_encoder = build_text_encoder(cfg.text.model_id, cfg.text.fine_tune, cfg.text.seed)
        if text_encoder.embedding_dim != cfg.acoustic.output_dim:
            raise ValidationError(
                f"text embedding dim {text_encoder.embedding_dim} != acoustic output dim "
                f"{cfg.acoustic.output_dim}"
            )
        text_cache = _FrozenTextCache(text_encoder)

    param_groups = [
        {
            "params": list(encoder.parameters()) + list(classifier.parameters()),
            "lr": cfg.optimizer.lr_acoustic,
        }
    ]
    if text_cache is not None and cfg.text.fine_tune:
        trainable = [p for p in text_cache.encoder.parameters() if p.requires_grad]
        if trainable:
            param_groups.append({"params": trainable, "lr": cfg.optimizer.lr_text})
    optimizer = torch.optim.Adam(
        param_groups, betas=cfg.optimizer.betas, eps=cfg.optimizer.epsilon
    )
    base_lrs = [group["lr"] for group in optimizer.param_groups]

    disc = disc_optimizer = None
    if coupling is Coupling.ADVERSARIAL:
        disc_cfg = DiscriminatorConfig(
            **{**cfg.discriminator.to_dict(), "input_dim": cfg.acoustic.output_dim}
        )
        disc = build_discriminator(disc_cfg, cfg.seed + 2)
        disc_optimizer = torch.optim.Adam(disc.parameters(), lr=disc_cfg.learning_rate)

    batch_size = cfg.training.batch_size
    batches_per_epoch = math.ceil(len(train_feats) / batch_size)
    total_steps = batches_per_epoch * cfg.training.max_epochs
    plateau = (
        PlateauDecay(
            cfg.optimizer.schedule.plateau_factor,
            cfg.optimizer.schedule.plateau_patience,
            cfg.training.min_delta,
        )
        if cfg.optimizer.schedule.kind == "plateau_decay"
        else None
    )

    def snapshot() -> dict:
        snap = {
            "acoustic": copy.deepcopy(encoder.state_dict()),
            "classifier": copy.deepcopy(classifier.state_dict()),
        }
        if disc is not None:
            snap["discriminator"] = copy.deepcopy(disc.state_dict())
        return snap

    def save_from_snapshot(snap: dict, path: Path, epoch: int, valid_loss: float) -> Path:
        probe_encoder = AcousticEncoder(cfg.acoustic)
        probe_encoder.load_state_dict(snap["acoustic"])
        probe_classifier = IntentClassifier(
            ClassifierConfig(num_intents=len(vocab), input_dim=cfg.acoustic.output_dim)
        )
        probe_classifier.load_state_dict(snap["classifier"])
        probe_disc = None
        if "discriminator" in snap:
            probe_disc = Discriminator(disc.cfg)
            probe_disc.load_state_dict(snap["discriminator"])
        return save_checkpoint(
            path, cfg, vocab, probe_encoder, probe_classifier, epoch, valid_loss, probe_disc
        )

    state = TrainState(seed=cfg.seed)
    history: list[dict] = []
    metrics_path = out_dir / "metrics.jsonl"
    best_path = out_dir / "checkpoint_best.pt"
    last_good = snapshot()
    global_step = 0
    stopped_early = False

    with metrics_path.open("w", encoding="utf-8") as metrics_file:
        try:
            for epoch in range(1, cfg.training.max_epochs + 1):
                order = shuffle_rng.permutation(len(train_feats))
                sums = {"ce_acoustic": 0.0, "ce_text": 0.0, "coupling": 0.0, "total": 0.0, "disc": 0.0}
                seen = 0
                for start in range(0, len(order), batch_size):
                    idx = order[start : start + batch_size].tolist()
                    if len(idx) < 2:
                        continue  # singleton tail cannot feed pair/triplet mining
                    records = [train_manifest.records[i] for i in idx]
                    feats = [train_feats[i] for i in idx]
                    targets = train_targets[idx]
                    intents = [r.intent for r in records]

                    if cfg.optimizer.schedule.kind == "one_cycle":
                        lr_now = one_cycle_lr(
                            global_step,
                            total_steps,
                            cfg.optimizer.schedule.max_lr,
                            cfg.optimizer.schedule.div_factor,
                            cfg.optimizer.schedule.final_div_factor,
                        )
                        scale = lr_now / cfg.optimizer.schedule.max_lr
                        optimizer.param_groups[0]["lr"] = lr_now
                        for group, base in list(zip(optimizer.param_groups, base_lrs))[1:]:
                            group["lr"] = base * scale

                    frames, lengths = collate_features(feats)
                    acoustic_emb = encoder(frames, lengths)
                    ce_acoustic = F.cross_entropy(classifier(acoustic_emb), targets)

                    ce_text = torch.zeros(())
                    text_emb = None
                    if text_cache is not None:
                        text_emb = text_cache(records)
                        if cfg.loss.text_loss_weight > 0:
                            ce_text = F.cross_entropy(classifier(text_emb), targets)

                    mining_seed = (cfg.seed * 1_000_003 + global_step) % (2**32)
                    disc_loss_value = 0.0
                    embedding_term = torch.zeros(())
                    if coupling is Coupling.L2:
                        embedding_term = l2_loss(acoustic_emb, text_emb.detach())
                    elif coupling is Coupling.RANKING:
                        pairs = sampler.mine_pair_indices(intents, seed=mining_seed)
                        i_idx = torch.tensor([p[0] for p in pairs])
                        j_idx = torch.tensor([p[1] for p in pairs])
                        t_flag = torch.tensor([float(p[2]) for p in pairs])
                        embedding_term = ranking_loss(
                            acoustic_emb[i_idx],
                            text_emb.detach()[j_idx],
                            t_flag,
                            margin=cfg.loss.margin,
                        )
                    elif coupling is Coupling.TRIPLET:
                        triplets = sampler.mine_triplet_indices(intents, seed=mining_seed)
                        if triplets:
                            a_idx = torch.tensor([t[0] for t in triplets])
                            p_idx = torch.tensor([t[1] for t in triplets])
                            n_idx = torch.tensor([t[2] for t in triplets])
                            embedding_term = triplet_loss(
                                acoustic_emb[a_idx],
                                text_emb.detach()[p_idx],
                                text_emb.detach()[n_idx],
                                margin=cfg.loss.margin,
                            )
                    elif coupling is Coupling.ADVERSARIAL:
                        disc_loss_value = discriminator_step(
                            disc, disc_optimizer, text_emb.detach(), acoustic_emb.detach()
                        )
                        embedding_term = generator_step(
                            disc, acoustic_emb, cfg.discriminator.adv_weight
                        )

                    if coupling is Coupling.ADVERSARIAL:
                        # generator_step already applied adv_weight
                        unit_cfg = LossConfig(
                            coupling=coupling,
                            margin=cfg.loss.margin,
                            text_loss_weight=cfg.loss.text_loss_weight,
                            embedding_loss_weight=1.0,
                        )
                        total = combined_loss(ce_acoustic, ce_text, embedding_term, unit_cfg)
                    else:
                        total = combined_loss(ce_acoustic, ce_text, embedding_term, cfg.loss)

                    optimizer.zero_grad()
                    total.backward()
                    optimizer.step()

                    n = len(idx)
                    seen += n
                    sums["ce_acoustic"] += float(ce_acoustic.detach()) * n
                    sums["ce_text"] += float(ce_text.detach()) * n
                    sums["coupling"] += float(embedding_term.detach()) * n
                    sums["total"] += float(total.detach()) * n
                    sums["disc"] += disc_loss_value * n
                    global_step += 1

                valid_loss, valid_accuracy = _batched_validation(
                    encoder, classifier, valid_feats, valid_targets, batch_size
                )
                record = {
                    "epoch": epoch,
                    "train_ce_acoustic": sums["ce_acoustic"] / max(seen, 1),
                    "train_ce_text": sums["ce_text"] / max(seen, 1),
                    "train_coupling": sums["coupling"] / max(seen, 1),
                    "train_disc": sums["disc"] / max(seen, 1),
                    "train_total": sums["total"] / max(seen, 1),
                    "valid_loss": valid_loss,
                    "valid_accuracy": valid_accuracy,
                    "lr": optimizer.param_groups[0]["lr"],
                }
                history.append(record)
                metrics_file.write(json.dumps(record) + "\n")
                metrics_file.flush()

                prev_best = state.best_valid_loss
                decision = early_stop_check(
                    state, valid_loss, cfg.training.patience, cfg.training.min_delta
                )
                state.epoch = epoch
                if state.best_valid_loss < prev_best:
                    save_checkpoint(
                        best_path, cfg, vocab, encoder, classifier, epoch, valid_loss, disc
                    )
                last_good = snapshot()
                if plateau is not None:
                    multiplier = plateau.update(valid_loss)
                    for group, base in zip(optimizer.param_groups, base_lrs):
                        group["lr"] = base * multiplier
                if decision == "stop":
                    stopped_early = True
                    break
        except TrainingDiverged:
            save_from_snapshot(
                last_good, out_dir / "checkpoint_last_good.pt", state.epoch, state.best_valid_loss
            )
            raise

    if not best_path.is_file():
        raise ValidationError("training produced no checkpoint")
    return TrainResult(
        checkpoint_path=best_path,
        metrics_path=metrics_path,
        history=history,
        best_valid_loss=state.best_valid_loss,
        epochs_run=state.epoch,
        stopped_early=stopped_early,
        intent_vocab=vocab,
    )
