"""Modality discriminator and alternating adversarial coupling.

The discriminator D maps an embedding to the probability that it came from
the text side (target 1 = text, 0 = acoustic). Training alternates:

* discriminator step - descend BCE with targets (text -> 1, acoustic -> 0)
  on detached embeddings; only D's parameters move.
* generator step - the acoustic branch adds adv_weight * BCE(D(acoustic), 1)
  to its total loss (non-saturating fooling objective); D's parameters are
  left untouched by this step.

Probabilities are clipped to [eps, 1 - eps] before any log.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import torch
from torch import nn

from .encoders import EMBEDDING_DIM
from .errors import TrainingDiverged, ValidationError

PROB_EPS = 1e-7


@dataclass(frozen=True)
class DiscriminatorConfig:
    num_units: int = 256
    num_layers: int = 2
    adv_weight: float = 0.1
    input_dim: int = EMBEDDING_DIM
    learning_rate: float = 1e-3

    def __post_init__(self):
        if self.num_layers < 1:
            raise ValidationError(f"need at least 1 layer, got {self.num_layers}")
        if self.num_units < 1:
            raise ValidationError(f"need at least 1 unit, got {self.num_units}")
        if self.adv_weight < 0:
            raise ValidationError(f"adv_weight must be non-negative, got {self.adv_weight}")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "DiscriminatorConfig":
        return cls(**d)


class Discriminator(nn.Module):
    """MLP with LeakyReLU hidden layers and a sigmoid output."""

    def __init__(self, cfg: DiscriminatorConfig):
        super().__init__()
        self.cfg = cfg
        layers: list[nn.Module] = []
        width = cfg.input_dim
        for _ in range(cfg.num_layers):
            layers.append(nn.Linear(width, cfg.num_units))
            layers.append(nn.LeakyReLU(0.2))
            width = cfg.num_units
        layers.append(nn.Linear(width, 1))
        self.net = nn.Sequential(*layers)

    def forward(self, embeddings: torch.Tensor) -> torch.Tensor:
        if embeddings.shape[-1] != self.cfg.input_dim:
            raise ValidationError(
                f"discriminator expects dim {self.cfg.input_dim}, got {embeddings.shape[-1]}"
            )
        return torch.sigmoid(self.net(embeddings).squeeze(-1))


def build_discriminator(cfg: DiscriminatorConfig, seed: int = 0) -> Discriminator:
    torch.manual_seed(seed)
    return Discriminator(cfg)


def discriminate(disc: Discriminator, embeddings: torch.Tensor) -> torch.Tensor:
    """Probability that each embedding is from the text domain, in (0, 1)."""
    with torch.no_grad():
        return disc(torch.as_tensor(embeddings))


def _bce(probs: torch.Tensor, target: float) -> torch.Tensor:
    p = torch.clamp(probs, PROB_EPS, 1.0 - PROB_EPS)
    if target == 1.0:
        return -torch.log(p).mean()
    if target == 0.0:
        return -torch.log(1.0 - p).mean()
    raise ValidationError(f"binary target expected, got {target}")


def discriminator_loss(
    disc: Discriminator, text_batch: torch.Tensor, acoustic_batch: torch.Tensor
) -> torch.Tensor:
    """BCE toward (text -> 1, acoustic -> 0); equals -2*log(0.5) when D outputs 0.5."""
    if text_batch.shape[0] == 0 or acoustic_batch.shape[0] == 0:
        raise ValidationError("both batches must be non-empty")
    return _bce(disc(text_batch), 1.0) + _bce(disc(acoustic_batch), 0.0)


def discriminator_step(
    disc: Discriminator,
    optimizer: torch.optim.Optimizer,
    text_batch: torch.Tensor,
    acoustic_batch: torch.Tensor,
) -> float:
    """One ascent step on the discrimination objective; encoders untouched.

    Inputs are detached so no gradient reaches the encoders, and only the
    discriminator's optimizer moves parameters.
    """
    loss = discriminator_loss(disc, text_batch.detach(), acoustic_batch.detach())
    if not torch.isfinite(loss):
        raise TrainingDiverged(f"discriminator loss is non-finite: {loss}")
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    return float(loss.detach())


def generator_step(
    disc: Discriminator, acoustic_batch: torch.Tensor, adv_weight: float
) -> torch.Tensor:
    """Weighted fooling term for the acoustic branch's total loss.

    Non-saturating form: BCE of D(acoustic) against target 1. The gradient
    flows through D into the acoustic embeddings, but D's parameters are not
    updated by this step (the caller's optimizer excludes them).
    """
    loss = adv_weight * _bce(disc(acoustic_batch), 1.0)
    if not torch.isfinite(loss):
        raise TrainingDiverged(f"generator fooling loss is non-finite: {loss}")
    return loss


def discriminator_accuracy(
    disc: Discriminator, text_batch: torch.Tensor, acoustic_batch: torch.Tensor
) -> float:
    """Fraction of embeddings whose modality D labels correctly at 0.5."""
    with torch.no_grad():
        correct = (disc(text_batch) > 0.5).sum() + (disc(acoustic_batch) <= 0.5).sum()
    return float(correct) / (text_batch.shape[0] + acoustic_batch.shape[0])


def fit_discriminator(
    disc: Discriminator,
    optimizer: torch.optim.Optimizer,
    sample_text,
    sample_acoustic,
    steps: int,
) -> float:
    """Train D alone on freshly sampled batches; returns the last loss."""
    loss = float("nan")
    for _ in range(steps):
        loss = discriminator_step(disc, optimizer, sample_text(), sample_acoustic())
    return loss


def cloud_dynamics(
    seed: int = 0,
    dim: int = 16,
    shift: float = 6.0,
    pretrain_steps: int = 150,
    rounds: int = 200,
    batch_size: int = 256,
    eval_size: int = 2000,
    disc_lr: float = 2e-3,
    gen_lr: float = 5e-2,
    num_units: int = 32,
) -> dict:
    """Alternating-training dynamics on two synthetic Gaussian clouds.

    Frozen text embeddings ~ N(0, I); acoustic inputs ~ N(shift * u, I) for a
    random unit direction u, mapped through a trainable linear layer
    (identity-initialized). D is pretrained alone until it separates the
    clouds, then D and the linear map alternate; as the map pulls its output
    cloud onto the text cloud, D's accuracy should fall toward chance.

    Returns initial/final discriminator accuracy and the per-round trajectory.
    """
    torch.manual_seed(seed)
    direction = torch.randn(dim)
    direction = direction / direction.norm()
    mu_acoustic = shift * direction

    def sample_text(n=batch_size):
        return torch.randn(n, dim)

    def sample_acoustic_input(n=batch_size):
        return torch.randn(n, dim) + mu_acoustic

    generator = nn.Linear(dim, dim)
    with torch.no_grad():
        generator.weight.copy_(torch.eye(dim))
        generator.bias.zero_()

    disc = Discriminator(
        DiscriminatorConfig(num_units=num_units, num_layers=1, adv_weight=1.0, input_dim=dim)
    )
    opt_d = torch.optim.Adam(disc.parameters(), lr=disc_lr)
    opt_g = torch.optim.Adam(generator.parameters(), lr=gen_lr)

    fit_discriminator(
        disc,
        opt_d,
        sample_text,
        lambda: generator(sample_acoustic_input()).detach(),
        pretrain_steps,
    )
    initial_accuracy = discriminator_accuracy(
        disc, sample_text(eval_size), generator(sample_acoustic_input(eval_size)).detach()
    )

    trajectory = []
    for _ in range(rounds):
        discriminator_step(
            disc, opt_d, sample_text(), generator(sample_acoustic_input()).detach()
        )
        fooling = generator_step(disc, generator(sample_acoustic_input()), adv_weight=1.0)
        opt_g.zero_grad()
        fooling.backward()
        opt_g.step()
        trajectory.append(
            discriminator_accuracy(
                disc, sample_text(), generator(sample_acoustic_input()).detach()
            )
        )

    final_accuracy = discriminator_accuracy(
        disc, sample_text(eval_size), generator(sample_acoustic_input(eval_size)).detach()
    )
    return {
        "initial_accuracy": initial_accuracy,
        "final_accuracy": final_accuracy,
        "trajectory": trajectory,
    }
