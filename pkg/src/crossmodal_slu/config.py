"""Run configuration: every knob of a training run in one serializable tree.

A run config fully determines a run (seeds included). It round-trips through
YAML; the CLI layers ``--set key.path=value`` overrides on top of the file,
which in turn overrides the per-dataset defaults.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import yaml

from .adversarial import DiscriminatorConfig
from .encoders import AcousticEncoderConfig
from .errors import ValidationError
from .features import FeatureConfig
from .losses import Coupling, LossConfig


@dataclass(frozen=True)
class ScheduleConfig:
    kind: str = "plateau_decay"  # or "one_cycle"
    plateau_factor: float = 0.5
    plateau_patience: int = 3
    max_lr: float = 6e-3
    div_factor: float = 25.0
    final_div_factor: float = 1e4

    def __post_init__(self):
        if self.kind not in ("plateau_decay", "one_cycle"):
            raise ValidationError(f"unknown schedule kind {self.kind!r}")
        if not (0 < self.plateau_factor <= 1):
            raise ValidationError(f"plateau_factor must be in (0, 1], got {self.plateau_factor}")


@dataclass(frozen=True)
class OptimizerConfig:
    beta1: float = 0.9
    beta2: float = 0.98
    epsilon: float = 1e-9
    lr_acoustic: float = 1e-3
    lr_text: float = 2e-5  # used only when text fine-tuning is enabled
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)

    def __post_init__(self):
        if self.lr_acoustic <= 0 or self.lr_text <= 0:
            raise ValidationError("learning rates must be positive")

    @property
    def betas(self) -> tuple[float, float]:
        return (self.beta1, self.beta2)


@dataclass(frozen=True)
class TextConfig:
    model_id: str = "hash"
    fine_tune: bool = False
    seed: int = 0


@dataclass(frozen=True)
class DataConfig:
    train_manifest: str = ""
    valid_manifest: str = ""
    test_manifest: str = ""
    intent_vocab: str | None = None  # path to one-label-per-line file; None -> infer
    feature_cache: str | None = None


@dataclass(frozen=True)
class TrainingConfig:
    batch_size: int = 64
    max_epochs: int = 50
    patience: int = 7
    min_delta: float = 1e-4

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValidationError("batch_size must be at least 2")
        if self.patience < 1:
            raise ValidationError("patience must be at least 1")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 42
    out_dir: str = "runs/default"
    data: DataConfig = field(default_factory=DataConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    acoustic: AcousticEncoderConfig = field(default_factory=AcousticEncoderConfig)
    text: TextConfig = field(default_factory=TextConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["loss"]["coupling"] = self.loss.coupling.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown config key(s): {sorted(unknown)}")

        def build(klass, payload):
            if payload is None:
                return klass()
            if not isinstance(payload, dict):
                raise ValidationError(f"expected a mapping for {klass.__name__}, got {payload!r}")
            allowed = {f.name for f in fields(klass)}
            bad = set(payload) - allowed
            if bad:
                raise ValidationError(
                    f"unknown key(s) {sorted(bad)} in {klass.__name__} section"
                )
            return klass(**payload)

        opt_payload = d.get("optimizer") or {}
        if "schedule" in opt_payload:
            opt_payload = dict(opt_payload)
            opt_payload["schedule"] = build(ScheduleConfig, opt_payload["schedule"])
        return cls(
            seed=d.get("seed", 42),
            out_dir=d.get("out_dir", "runs/default"),
            data=build(DataConfig, d.get("data")),
            features=build(FeatureConfig, d.get("features")),
            acoustic=build(AcousticEncoderConfig, d.get("acoustic")),
            text=build(TextConfig, d.get("text")),
            loss=build(LossConfig, d.get("loss")),
            discriminator=build(DiscriminatorConfig, d.get("discriminator")),
            optimizer=build(OptimizerConfig, opt_payload),
            training=build(TrainingConfig, d.get("training")),
        )

    def config_hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def default_run_config(profile: str = "synthetic") -> RunConfig:
    """Per-dataset defaults bundling the published hyperparameters.

    ``fsc``: 4-layer encoder, lr 1e-3 with plateau decay, discriminator
    256 units x 2 layers at weight 0.1. ``snips``: 3-layer encoder, one-cycle
    schedule peaking at 6e-3, discriminator 512 x 1 at weight 0.3.
    ``synthetic``: a small, fast configuration for the generated dataset.
    """
    if profile == "fsc":
        return RunConfig(
            acoustic=AcousticEncoderConfig(num_layers=4, hidden_units=512),
            text=TextConfig(model_id="bert-base-cased"),
            discriminator=DiscriminatorConfig(num_units=256, num_layers=2, adv_weight=0.1),
            optimizer=OptimizerConfig(schedule=ScheduleConfig(kind="plateau_decay")),
            training=TrainingConfig(batch_size=64),
        )
    if profile == "snips":
        return RunConfig(
            acoustic=AcousticEncoderConfig(num_layers=3, hidden_units=512),
            text=TextConfig(model_id="bert-base-cased"),
            discriminator=DiscriminatorConfig(num_units=512, num_layers=1, adv_weight=0.3),
            optimizer=OptimizerConfig(schedule=ScheduleConfig(kind="one_cycle", max_lr=6e-3)),
            training=TrainingConfig(batch_size=32),
        )
    if profile == "synthetic":
        return RunConfig(
            acoustic=AcousticEncoderConfig(num_layers=2, hidden_units=64),
            text=TextConfig(model_id="hash"),
            discriminator=DiscriminatorConfig(num_units=64, num_layers=1, adv_weight=0.1),
            optimizer=OptimizerConfig(schedule=ScheduleConfig(kind="plateau_decay")),
            training=TrainingConfig(batch_size=16, max_epochs=20),
        )
    raise ValidationError(f"unknown profile {profile!r}; expected fsc, snips, or synthetic")


def apply_overrides(tree: dict, overrides: Sequence[str]) -> dict:
    """Apply ``key.path=value`` overrides; values are parsed as YAML scalars."""
    for item in overrides:
        if "=" not in item:
            raise ValidationError(f"override must look like key.path=value, got {item!r}")
        key_path, raw_value = item.split("=", 1)
        keys = key_path.strip().split(".")
        node = tree
        for key in keys[:-1]:
            nxt = node.get(key)
            if not isinstance(nxt, dict):
                nxt = {}
                node[key] = nxt
            node = nxt
        node[keys[-1]] = yaml.safe_load(raw_value)
    return tree


def load_run_config(
    path: str | Path | None = None,
    overrides: Sequence[str] = (),
    profile: str | None = None,
) -> RunConfig:
    """Build a config: profile defaults <- YAML file <- --set overrides."""
    base = default_run_config(profile) if profile else RunConfig()
    tree = base.to_dict()
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            loaded = yaml.safe_load(fh) or {}
        if not isinstance(loaded, dict):
            raise ValidationError(f"config file {path} must contain a mapping")
        file_profile = loaded.pop("profile", None)
        if file_profile and not profile:
            tree = default_run_config(file_profile).to_dict()
        _deep_update(tree, loaded)
    apply_overrides(tree, overrides)
    return RunConfig.from_dict(tree)


def save_run_config(cfg: RunConfig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=False)
    return path


def _deep_update(base: dict, extra: dict) -> dict:
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _deep_update(base[key], value)
        else:
            base[key] = value
    return base
