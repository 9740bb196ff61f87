"""Spoken-intent classification with cross-modal embedding alignment.

An acoustic Bi-LSTM encoder is trained so its utterance embeddings live in
the same 768-dim latent space as pretrained text-encoder embeddings, coupled
by one of four mechanisms (plain distance, pairwise ranking, triplet, or an
adversarial modality discriminator); a shared linear head classifies intents
from either modality, and only the acoustic branch is kept for inference.
"""

from .adversarial import (
    Discriminator,
    DiscriminatorConfig,
    discriminate,
    discriminator_step,
    generator_step,
)
from .config import RunConfig, default_run_config, load_run_config, save_run_config
from .encoders import (
    EMBEDDING_DIM,
    AcousticEncoder,
    AcousticEncoderConfig,
    ClassifierConfig,
    Embedding,
    IntentClassifier,
    Modality,
    classify,
    encode_acoustic,
    masked_max_pool,
)
from .errors import (
    CrossmodalSluError,
    ManifestError,
    TextEncoderUnavailable,
    TrainingDiverged,
    ValidationError,
)
from .evaluator import (
    EvalResult,
    embedding_distance_stats,
    evaluate,
    export_embeddings,
    false_positive_rate,
    make_synthetic_dataset,
)
from .features import (
    FeatureCache,
    FeatureConfig,
    FeatureSequence,
    Manifest,
    UtteranceRecord,
    extract_mfcc,
    load_manifest,
    make_split,
)
from .losses import (
    Coupling,
    LossConfig,
    PairExample,
    TripletExample,
    classification_loss,
    combined_loss,
    distance,
    l2_loss,
    ranking_loss,
    triplet_loss,
)
from .sampler import mine_pair_indices, mine_pairs, mine_triplet_indices, mine_triplets
from .text_encoders import TextEncoder, build_text_encoder, encode_text
from .trainer import (
    Checkpoint,
    TrainResult,
    TrainState,
    early_stop_check,
    load_checkpoint,
    one_cycle_lr,
    schedule_lr,
    train,
)

__version__ = "0.1.0"
