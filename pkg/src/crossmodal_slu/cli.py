"""Command-line interface: prepare, train, eval, export, verify.

Exit codes: 0 success, 1 usage error, 2 validation error, 3 training
divergence. Every command is reproducible from its config file alone; the
config embeds all seeds.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import load_run_config, save_run_config
from .datasets import prepare
from .errors import (
    CrossmodalSluError,
    ManifestError,
    TextEncoderUnavailable,
    TrainingDiverged,
    ValidationError,
)
from .evaluator import (
    confusion_to_csv,
    evaluate,
    export_embeddings,
    metrics_to_json,
    read_embedding_export,
)
from .trainer import train
from .verify import run_all

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_DIVERGED = 3


class _Parser(argparse.ArgumentParser):
    """argparse variant whose usage failures exit with code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    parser = _Parser(prog="crossmodal-slu", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p_prepare = sub.add_parser("prepare", help="build manifests (and synthetic audio)")
    p_prepare.add_argument("--kind", required=True, choices=("fsc", "snips", "synthetic"))
    p_prepare.add_argument("--out-dir", required=True)
    p_prepare.add_argument("--data-dir", help="raw dataset directory (fsc/snips)")
    p_prepare.add_argument("--seed", type=int, default=0)
    p_prepare.add_argument("--num-intents", type=int, default=2, help="synthetic only")
    p_prepare.add_argument("--per-intent", type=int, default=50, help="synthetic only")

    p_train = sub.add_parser("train", help="run a training job from a config")
    p_train.add_argument("--config", help="YAML run config")
    p_train.add_argument(
        "--profile", choices=("fsc", "snips", "synthetic"), help="base defaults"
    )
    p_train.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY.PATH=VALUE",
        help="config override (repeatable); precedence: --set > file > profile defaults",
    )

    p_eval = sub.add_parser("eval", help="intent accuracy and confusion matrix")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--manifest", required=True)
    p_eval.add_argument("--out", help="write the metrics record as JSON here")
    p_eval.add_argument("--confusion-csv", help="write the confusion matrix as CSV here")

    p_export = sub.add_parser("export", help="acoustic embeddings as TSV")
    p_export.add_argument("--checkpoint", required=True)
    p_export.add_argument("--manifest", required=True)
    p_export.add_argument("--out", required=True)
    p_export.add_argument(
        "--plot", help="optional scatter of a 2-D PCA projection (unverified convenience)"
    )

    p_verify = sub.add_parser("verify", help="run the property suites")
    p_verify.add_argument("--workdir", help="where the synthetic run writes its files")
    return parser


def _cmd_prepare(args) -> int:
    ds = prepare(
        kind=args.kind,
        out_dir=args.out_dir,
        dataset_dir=args.data_dir,
        seed=args.seed,
        num_intents=args.num_intents,
        per_intent=args.per_intent,
    )
    print(f"prepared {ds.num_records} records under {ds.out_dir}")
    print(f"vocabulary: {len(ds.intent_vocab)} intents -> {ds.vocab_path}")
    for name, path in (
        ("train", ds.train_manifest),
        ("valid", ds.valid_manifest),
        ("test", ds.test_manifest),
    ):
        print(f"{name} manifest: {path}")
    return EXIT_OK


def _cmd_train(args) -> int:
    cfg = load_run_config(args.config, overrides=args.overrides, profile=args.profile)
    save_run_config(cfg, Path(cfg.out_dir) / "run_config.yaml")
    result = train(cfg)
    print(f"best checkpoint: {result.checkpoint_path}")
    print(f"metrics log: {result.metrics_path}")
    print(
        f"finished after {result.epochs_run} epoch(s); "
        f"best validation loss {result.best_valid_loss:.4f}"
        + (" (early stop)" if result.stopped_early else "")
    )
    return EXIT_OK


def _cmd_eval(args) -> int:
    result = evaluate(args.checkpoint, args.manifest)
    print(f"accuracy: {result.accuracy:.4f} over {result.num_examples} utterances")
    if args.out:
        print(f"metrics record: {metrics_to_json(result, args.out)}")
    if args.confusion_csv:
        print(f"confusion matrix: {confusion_to_csv(result, args.confusion_csv)}")
    return EXIT_OK


def _plot_projection(tsv_path: str, plot_path: str) -> None:
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as exc:
        raise ValidationError("--plot needs matplotlib (pip install matplotlib)") from exc
    import numpy as np

    _, intents, vectors = read_embedding_export(tsv_path)
    centered = vectors - vectors.mean(axis=0, keepdims=True)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    projected = centered @ vt[:2].T
    fig, ax = plt.subplots(figsize=(6, 5))
    for intent in sorted(set(intents)):
        mask = np.array([i == intent for i in intents])
        ax.scatter(projected[mask, 0], projected[mask, 1], s=12, label=intent)
    ax.legend(fontsize=7)
    ax.set_title("acoustic embeddings (PCA)")
    fig.tight_layout()
    fig.savefig(plot_path, dpi=150)
    plt.close(fig)


def _cmd_export(args) -> int:
    path = export_embeddings(args.checkpoint, args.manifest, args.out)
    print(f"embeddings: {path}")
    if args.plot:
        _plot_projection(args.out, args.plot)
        print(f"projection plot: {args.plot}")
    return EXIT_OK


def _cmd_verify(args) -> int:
    results = run_all(args.workdir)
    failed = False
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"[{status}] {r.name}: {r.detail}")
        failed = failed or not r.passed
    return EXIT_VALIDATION if failed else EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "prepare": _cmd_prepare,
        "train": _cmd_train,
        "eval": _cmd_eval,
        "export": _cmd_export,
        "verify": _cmd_verify,
    }
    try:
        return handlers[args.command](args)
    except TrainingDiverged as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ValidationError, ManifestError, TextEncoderUnavailable) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except CrossmodalSluError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
