"""Feature bundles, class/attribute semantics, validation, synthetic data."""

from .bundle import (
    BundleError,
    BundleFormatError,
    BundleShapeError,
    NonFinitePayloadError,
    PayloadLengthError,
    load_bundle,
    load_dataset,
    load_semantics,
    read_arrays,
    save_bundle,
    write_arrays,
)
from .core import (
    SPLIT_NAMES,
    AttributeSemantics,
    ClassSemantics,
    FeatureBundle,
    Split,
    ValidationReport,
    validate,
)
from .synthetic import SynthSpec, SyntheticTruth, generate_synthetic
