"""Exception types shared across the package."""


class CrossmodalSluError(Exception):
    """Base class for all errors raised by this package."""


class ManifestError(CrossmodalSluError):
    """A manifest file is missing, malformed, or violates its schema."""


class ValidationError(CrossmodalSluError):
    """Inputs or configuration violate a documented contract."""


class TrainingDiverged(CrossmodalSluError):
    """A loss component became non-finite during training."""


class TextEncoderUnavailable(CrossmodalSluError):
    """The requested pretrained text encoder could not be resolved."""
