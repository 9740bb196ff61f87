"""Self-verification suites behind the ``verify`` CLI command.

Each check re-derives expected behavior through an independent route (hand
formulas, central finite differences, brute-force scans, exhaustive
enumeration, or a full synthetic training run) and compares it against the
library's primary implementation. The same harnesses back the acceptance
tests, so the CLI and the test suite agree by construction.
"""

from __future__ import annotations

import itertools
import math
import tempfile
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .adversarial import (
    Discriminator,
    DiscriminatorConfig,
    cloud_dynamics,
    discriminator_loss,
    generator_step,
)
from .config import DataConfig, RunConfig, default_run_config
from .encoders import AcousticEncoder, AcousticEncoderConfig, masked_max_pool
from .errors import ValidationError
from .evaluator import (
    EvalResult,
    embedding_distance_stats,
    evaluate,
    export_embeddings,
    make_synthetic_dataset,
    read_embedding_export,
)
from .losses import (
    Coupling,
    LossConfig,
    classification_loss,
    combined_loss,
    distance,
    l2_loss,
    ranking_loss,
    triplet_loss,
)
from .sampler import mine_pair_indices, mine_triplet_indices
from .trainer import TrainResult, train

IDENTITY_TOL = 1e-9
GRAD_H = 1e-5
GRAD_REL_TOL = 1e-4
GRAD_POINTS = 20
POOLING_TRIALS = 100
PADDING_TOL = 1e-5
SAMPLER_MAX_BATCH = 8
SAMPLER_NUM_INTENTS = 3
SYNTH_MIN_ACCURACY = 0.95
ADV_INITIAL_MIN = 0.9
ADV_FINAL_BAND = (0.4, 0.6)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


# --- loss identities ---------------------------------------------------------

def check_loss_identities() -> CheckResult:
    """Closed-form loss values reproduced exactly at double precision."""
    t64 = lambda *xs: torch.tensor(xs, dtype=torch.float64)
    failures = []

    def expect(name, got, want):
        if abs(float(got) - want) > IDENTITY_TOL:
            failures.append(f"{name}: got {float(got)!r}, want {want!r}")

    e1, e2 = t64(1.0, 0.0), t64(0.0, 1.0)
    expect("distance identity", distance(e1, e1), 0.0)
    expect("distance unit pair", distance(e1, e2), 2.0)
    expect("l2 identity", l2_loss(e1, e1), 0.0)
    expect("l2 unit pair", l2_loss(e1, e2), 2.0)

    expect("ranking t=1", ranking_loss(e1, e2, t64(1.0), margin=1.0), 2.0)
    # t=0 with d = 0.2 and margin 1.0 -> 0.8
    x1, x2 = t64(0.0, 0.0), t64(math.sqrt(0.2), 0.0)
    expect("ranking t=0 inside margin", ranking_loss(x1, x2, t64(0.0), margin=1.0), 0.8)
    expect("ranking t=0 saturated", ranking_loss(e1, e2, t64(0.0), margin=1.0), 0.0)

    a, p = t64(0.0, 0.0), t64(1.0, 0.0)
    expect("triplet equal distances", triplet_loss(a, p, t64(0.0, 1.0), margin=0.3), 0.3)
    n = t64(math.sqrt(0.5), 0.0)
    expect("triplet 0.2+1.0-0.5", triplet_loss(a, p, n, margin=0.2), 0.7)
    expect("triplet saturated", triplet_loss(a, t64(0.1, 0.0), t64(5.0, 0.0), margin=0.2), 0.0)
    expect("triplet degenerate p=n", triplet_loss(a, p, p, margin=0.7), 0.7)

    uniform6 = torch.full((6,), 1.0 / 6.0, dtype=torch.float64)
    expect("ce uniform", classification_loss(uniform6, 3), math.log(6.0))
    onehot = torch.zeros(4, dtype=torch.float64)
    onehot[2] = 1.0
    expect("ce perfect", classification_loss(onehot, 2), 0.0)

    cfg0 = LossConfig(coupling=Coupling.NONE, text_loss_weight=0.0, embedding_loss_weight=0.0)
    expect("combined baseline", combined_loss(t64(1.25)[0], t64(9.0)[0], t64(9.0)[0], cfg0), 1.25)
    cfg1 = LossConfig(coupling=Coupling.L2, text_loss_weight=1.0, embedding_loss_weight=0.5)
    expect(
        "combined weighted",
        combined_loss(t64(1.0)[0], t64(0.5)[0], t64(2.0)[0], cfg1),
        2.5,
    )

    if failures:
        return CheckResult("loss identities", False, "; ".join(failures))
    return CheckResult("loss identities", True, f"all identities within {IDENTITY_TOL}")


# --- gradient checks ---------------------------------------------------------

def finite_difference_gradient(
    loss_fn: Callable[[], torch.Tensor], tensor: torch.Tensor, h: float = GRAD_H
) -> torch.Tensor:
    """Central-difference gradient of a scalar loss wrt one tensor, in place."""
    grad = torch.zeros_like(tensor)
    flat = tensor.reshape(-1)
    grad_flat = grad.reshape(-1)
    for i in range(flat.numel()):
        original = flat[i].item()
        with torch.no_grad():
            flat[i] = original + h
        plus = float(loss_fn())
        with torch.no_grad():
            flat[i] = original - h
        minus = float(loss_fn())
        with torch.no_grad():
            flat[i] = original
        grad_flat[i] = (plus - minus) / (2.0 * h)
    return grad


def gradient_relative_error(
    loss_fn: Callable[[], torch.Tensor], tensors: Sequence[torch.Tensor], h: float = GRAD_H
) -> float:
    """Norm-based relative error between autograd and finite differences."""
    for t in tensors:
        if t.grad is not None:
            t.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = torch.cat([t.grad.reshape(-1).clone() for t in tensors])
    numeric = torch.cat(
        [finite_difference_gradient(loss_fn, t, h).reshape(-1) for t in tensors]
    )
    scale = max(float(analytic.norm()), float(numeric.norm()))
    if scale == 0.0:
        return 0.0
    return float((analytic - numeric).norm()) / scale


def _hinge_safe(value: float, boundary: float = 0.0, clearance: float = 1e-3) -> bool:
    return abs(value - boundary) > clearance


def coupling_loss_gradient_errors(
    num_points: int = GRAD_POINTS, seed: int = 0, dim: int = 8
) -> dict[str, list[float]]:
    """Relative errors for every coupling loss at random non-boundary points."""
    g = torch.Generator().manual_seed(seed)
    errors: dict[str, list[float]] = {"l2": [], "ranking": [], "triplet": []}

    def randpt(scale: float) -> torch.Tensor:
        return (scale * torch.randn(dim, generator=g, dtype=torch.float64)).requires_grad_(True)

    while len(errors["l2"]) < num_points:
        x1, x2 = randpt(1.0), randpt(1.0)
        errors["l2"].append(gradient_relative_error(lambda: l2_loss(x1, x2), [x1, x2]))

    margin = 1.0
    while len(errors["ranking"]) < num_points:
        # alternate same-intent, hinge-active, and hinge-saturated regimes
        k = len(errors["ranking"])
        t_val = 1.0 if k % 3 == 0 else 0.0
        scale = 0.15 if k % 3 == 1 else 1.0
        x1, x2 = randpt(scale), randpt(scale)
        if t_val == 0.0 and not _hinge_safe(margin - float(distance(x1, x2))):
            continue
        t = torch.tensor(t_val, dtype=torch.float64)
        errors["ranking"].append(
            gradient_relative_error(lambda: ranking_loss(x1, x2, t, margin=margin), [x1, x2])
        )

    while len(errors["triplet"]) < num_points:
        k = len(errors["triplet"])
        scale = 0.3 if k % 2 == 0 else 1.0  # mix active and saturated hinges
        a, p, n = randpt(scale), randpt(scale), randpt(scale)
        gap = margin + float(distance(a, p)) - float(distance(a, n))
        if not _hinge_safe(gap):
            continue
        errors["triplet"].append(
            gradient_relative_error(lambda: triplet_loss(a, p, n, margin=margin), [a, p, n])
        )
    return errors


def adversarial_gradient_errors(
    num_points: int = GRAD_POINTS, seed: int = 0, dim: int = 6
) -> dict[str, list[float]]:
    """Relative errors for the discriminator and generator objectives."""
    errors: dict[str, list[float]] = {"discriminator": [], "generator": []}
    for k in range(num_points):
        torch.manual_seed(seed * 7919 + k)
        disc = Discriminator(
            DiscriminatorConfig(num_units=4, num_layers=1, adv_weight=1.0, input_dim=dim)
        ).double()
        text = torch.randn(4, dim, dtype=torch.float64)
        acoustic = torch.randn(4, dim, dtype=torch.float64) + 0.5
        params = [p for p in disc.parameters()]
        errors["discriminator"].append(
            gradient_relative_error(lambda: discriminator_loss(disc, text, acoustic), params)
        )

        acoustic_in = acoustic.clone().requires_grad_(True)
        errors["generator"].append(
            gradient_relative_error(
                lambda: generator_step(disc, acoustic_in, adv_weight=0.7), [acoustic_in]
            )
        )
    return errors


def check_gradients() -> CheckResult:
    all_errors = coupling_loss_gradient_errors()
    all_errors.update(adversarial_gradient_errors())
    worst = {name: max(errs) for name, errs in all_errors.items()}
    bad = {name: err for name, err in worst.items() if err >= GRAD_REL_TOL}
    detail = ", ".join(f"{name} max rel err {err:.2e}" for name, err in worst.items())
    return CheckResult("gradient checks", not bad, detail)


# --- pooling oracle ----------------------------------------------------------

def brute_force_max_pool(states: torch.Tensor, lengths: Sequence[int]) -> torch.Tensor:
    """Per-dimension max over valid frames via explicit python loops."""
    batch, _, width = states.shape
    out = torch.empty(batch, width, dtype=states.dtype)
    for b in range(batch):
        for j in range(width):
            best = states[b, 0, j]
            for t in range(1, int(lengths[b])):
                if states[b, t, j] > best:
                    best = states[b, t, j]
            out[b, j] = best
    return out


def pooling_oracle_trial(seed: int) -> bool:
    """Masked pooling vs brute force on one tiny random model; exact match."""
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    cfg = AcousticEncoderConfig(
        num_layers=int(rng.integers(1, 3)),
        hidden_units=int(rng.integers(1, 5)),  # <= 4 per direction -> <= 8 state dims
        input_dim=int(rng.integers(2, 6)),
        output_dim=5,
        bidirectional=True,
    )
    model = AcousticEncoder(cfg)
    batch = int(rng.integers(1, 5))
    lengths = torch.tensor([int(rng.integers(1, 11)) for _ in range(batch)])
    frames = torch.randn(batch, int(lengths.max()), cfg.input_dim)
    with torch.no_grad():
        states = model.last_layer_states(frames, lengths)
        pooled = masked_max_pool(states, lengths)
        oracle = brute_force_max_pool(states, lengths)
    return bool(torch.equal(pooled, oracle))


def padding_invariance_deviation(seed: int) -> float:
    """Max |embedding(x alone) - embedding(x padded in a larger batch)|."""
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    cfg = AcousticEncoderConfig(
        num_layers=2, hidden_units=8, input_dim=6, output_dim=10, bidirectional=True
    )
    model = AcousticEncoder(cfg)
    short_len = int(rng.integers(3, 20))
    long_len = short_len + int(rng.integers(5, 40))
    short = torch.randn(1, short_len, cfg.input_dim)
    other = torch.randn(1, long_len, cfg.input_dim)
    with torch.no_grad():
        alone = model(short, torch.tensor([short_len]))
        padded = torch.zeros(2, long_len, cfg.input_dim)
        padded[0, :short_len] = short[0]
        padded[1] = other[0]
        batched = model(padded, torch.tensor([short_len, long_len]))
    return float((alone[0] - batched[0]).abs().max())


def check_pooling_oracle() -> CheckResult:
    exact = sum(pooling_oracle_trial(seed) for seed in range(POOLING_TRIALS))
    max_dev = max(padding_invariance_deviation(seed) for seed in range(10))
    passed = exact == POOLING_TRIALS and max_dev < PADDING_TOL
    return CheckResult(
        "pooling oracle",
        passed,
        f"{exact}/{POOLING_TRIALS} exact matches, padding deviation {max_dev:.2e}",
    )


# --- sampler invariants ------------------------------------------------------

def sampler_exhaustive_violations(
    max_batch: int = SAMPLER_MAX_BATCH, num_intents: int = SAMPLER_NUM_INTENTS
) -> list[str]:
    """Check every intent assignment of batches up to max_batch over the
    intent set; returns human-readable violations (empty when clean)."""
    intents = [f"intent_{c}" for c in "abc"[:num_intents]]
    violations: list[str] = []
    for n in range(2, max_batch + 1):
        for assignment in itertools.product(range(num_intents), repeat=n):
            labels = [intents[a] for a in assignment]
            distinct = len(set(labels))
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                pairs = mine_pair_indices(labels, seed=n)
                triplets = mine_triplet_indices(labels, seed=n)

            expected_pairs = n + (n if distinct > 1 else 0)
            if len(pairs) != expected_pairs:
                violations.append(f"{labels}: {len(pairs)} pairs, expected {expected_pairs}")
            for i, j, t in pairs:
                if t not in (0, 1) or (labels[i] == labels[j]) != bool(t):
                    violations.append(f"{labels}: pair ({i},{j},{t}) flag mismatch")
            if distinct == 1 and triplets:
                violations.append(f"{labels}: single-intent batch mined triplets")
            if distinct > 1 and len(triplets) != n:
                violations.append(f"{labels}: {len(triplets)} triplets, expected {n}")
            for a, p, q in triplets:
                if labels[a] != labels[p] or labels[a] == labels[q]:
                    violations.append(f"{labels}: triplet ({a},{p},{q}) intent mismatch")
            if len(violations) > 20:
                return violations
    return violations


def check_sampler_invariants() -> CheckResult:
    violations = sampler_exhaustive_violations()
    total = sum(SAMPLER_NUM_INTENTS**n for n in range(2, SAMPLER_MAX_BATCH + 1))
    detail = f"{total} batches enumerated" if not violations else "; ".join(violations[:3])
    return CheckResult("sampler invariants", not violations, detail)


# --- synthetic end-to-end ----------------------------------------------------

def synthetic_run_config(
    data_dir: Path,
    out_dir: Path,
    coupling: str = "triplet",
    seed: int = 7,
    max_epochs: int = 20,
    text_loss_weight: float = 1.0,
    embedding_loss_weight: float = 1.0,
) -> RunConfig:
    """The small-model profile pointed at a generated dataset."""
    base = default_run_config("synthetic")
    tree = base.to_dict()
    tree["seed"] = seed
    tree["out_dir"] = str(out_dir)
    tree["data"] = {
        "train_manifest": str(data_dir / "train.jsonl"),
        "valid_manifest": str(data_dir / "valid.jsonl"),
        "test_manifest": str(data_dir / "test.jsonl"),
        "intent_vocab": str(data_dir / "intents.txt"),
        "feature_cache": str(out_dir / "feature_cache"),
    }
    tree["loss"] = {
        "coupling": coupling,
        "margin": 1.0,
        "text_loss_weight": text_loss_weight,
        "embedding_loss_weight": embedding_loss_weight,
    }
    tree["training"]["max_epochs"] = max_epochs
    return RunConfig.from_dict(tree)


def run_synthetic_end_to_end(
    workdir: str | Path,
    num_intents: int = 2,
    per_intent: int = 100,
    coupling: str = "triplet",
    seed: int = 7,
    max_epochs: int = 20,
    text_loss_weight: float = 1.0,
    embedding_loss_weight: float = 1.0,
) -> tuple[TrainResult, EvalResult, tuple[float, float]]:
    """Generate data, train, evaluate on the test split, export embeddings.

    Returns (train result, eval result, (mean intra-intent distance, mean
    inter-intent distance)) computed from the TSV export.
    """
    workdir = Path(workdir)
    data = make_synthetic_dataset(
        workdir / "data", num_intents=num_intents, per_intent=per_intent, seed=seed
    )
    cfg = synthetic_run_config(
        data.root,
        workdir / "run",
        coupling=coupling,
        seed=seed,
        max_epochs=max_epochs,
        text_loss_weight=text_loss_weight,
        embedding_loss_weight=embedding_loss_weight,
    )
    result = train(cfg)
    eval_result = evaluate(result.checkpoint_path, data.test_manifest)
    export_path = export_embeddings(
        result.checkpoint_path, data.test_manifest, workdir / "run" / "test_embeddings.tsv"
    )
    _, intents, vectors = read_embedding_export(export_path)
    stats = embedding_distance_stats(vectors, intents)
    return result, eval_result, stats


def check_synthetic_end_to_end(workdir: str | Path | None = None) -> CheckResult:
    if workdir is None:
        workdir = tempfile.mkdtemp(prefix="crossmodal-slu-verify-")
    _, eval_result, (intra, inter) = run_synthetic_end_to_end(workdir)
    passed = eval_result.accuracy >= SYNTH_MIN_ACCURACY and intra < inter
    return CheckResult(
        "synthetic end-to-end",
        passed,
        f"test accuracy {eval_result.accuracy:.3f}, intra {intra:.2f} < inter {inter:.2f}",
    )


def check_adversarial_dynamics() -> CheckResult:
    out = cloud_dynamics()
    ok = (
        out["initial_accuracy"] > ADV_INITIAL_MIN
        and ADV_FINAL_BAND[0] <= out["final_accuracy"] <= ADV_FINAL_BAND[1]
    )
    return CheckResult(
        "adversarial dynamics",
        ok,
        f"discriminator accuracy {out['initial_accuracy']:.3f} -> {out['final_accuracy']:.3f}",
    )


def run_all(workdir: str | Path | None = None) -> list[CheckResult]:
    """Every property suite; the CLI prints one pass/fail line per entry."""
    return [
        check_loss_identities(),
        check_gradients(),
        check_pooling_oracle(),
        check_sampler_invariants(),
        check_adversarial_dynamics(),
        check_synthetic_end_to_end(workdir),
    ]
