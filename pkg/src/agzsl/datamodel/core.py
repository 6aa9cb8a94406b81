from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np


class Split(IntEnum):
    TRAIN_SOURCE = 0
    TEST_SOURCE = 1
    TEST_TARGET = 2


SPLIT_NAMES = {Split.TRAIN_SOURCE: "train-source", Split.TEST_SOURCE: "test-source",
               Split.TEST_TARGET: "test-target"}


@dataclass
class FeatureBundle:
    """Region features for N samples.

    ``features`` is (N, r, d); ``labels`` are 1-based class indices with source
    classes first; ``split`` holds one :class:`Split` code per sample.
    """

    features: np.ndarray
    labels: np.ndarray
    split: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.split = np.asarray(self.split, dtype=np.int64)

    @property
    def num_samples(self) -> int:
        return self.features.shape[0]

    @property
    def num_regions(self) -> int:
        return self.features.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[2]

    def indices(self, split: Split) -> np.ndarray:
        return np.flatnonzero(self.split == int(split))

    def subset(self, idx: np.ndarray) -> FeatureBundle:
        return FeatureBundle(self.features[idx], self.labels[idx], self.split[idx])


@dataclass
class ClassSemantics:
    """Attribute presence scores, (C^s, A) for source and (C^t, A) for target classes."""

    source: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        self.source = np.asarray(self.source, dtype=np.float64)
        self.target = np.asarray(self.target, dtype=np.float64)

    @property
    def num_source(self) -> int:
        return self.source.shape[0]

    @property
    def num_target(self) -> int:
        return self.target.shape[0]

    @property
    def num_classes(self) -> int:
        return self.num_source + self.num_target

    @property
    def num_attributes(self) -> int:
        return self.source.shape[1]

    def all(self) -> np.ndarray:
        """Rows ordered by class index 1..C^s+C^t."""
        return np.concatenate([self.source, self.target], axis=0)

    def vector(self, label: int) -> np.ndarray:
        return self.all()[label - 1]


@dataclass
class AttributeSemantics:
    vectors: np.ndarray  # (A, g)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)

    @property
    def num_attributes(self) -> int:
        return self.vectors.shape[0]


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def validate(bundle: FeatureBundle, class_sem: ClassSemantics,
             attr_sem: AttributeSemantics) -> ValidationReport:
    """Check every data invariant; violations are returned, never raised."""
    report = ValidationReport()
    bad = report.violations.append

    feats = bundle.features
    if feats.ndim != 3:
        bad(f"features must be N x r x d, got shape {feats.shape}")
    elif feats.shape[0] == 0:
        bad("bundle has no samples")
    if not np.isfinite(feats).all():
        bad("non-finite feature values")
    n = feats.shape[0] if feats.ndim else 0
    if bundle.labels.shape != (n,) or bundle.split.shape != (n,):
        bad("labels/split length differs from sample count")
        return report

    cs, ct = class_sem.source, class_sem.target
    if cs.ndim != 2 or ct.ndim != 2 or cs.shape[0] < 1 or ct.shape[0] < 1:
        bad("class semantics need at least one source and one target class")
        return report
    if cs.shape[1] != ct.shape[1]:
        bad("attribute count mismatch between source and target class semantics")
    if cs.shape[1] < 2:
        bad("need at least 2 attributes")
    if not (np.isfinite(cs).all() and np.isfinite(ct).all()):
        bad("non-finite class semantics")

    av = attr_sem.vectors
    if av.ndim != 2 or av.shape[1] < 2:
        bad("attribute vectors must be A x g with g >= 2")
    elif not np.isfinite(av).all():
        bad("non-finite attribute vectors")
    elif av.shape[0] != cs.shape[1]:
        bad(f"attribute count mismatch: class semantics A={cs.shape[1]}, "
            f"attribute vectors A={av.shape[0]}")

    valid_split = np.isin(bundle.split, [int(s) for s in Split])
    if not valid_split.all():
        bad("unknown split tag")
    n_src, n_all = class_sem.num_source, class_sem.num_classes
    is_target = bundle.split == int(Split.TEST_TARGET)
    lab = bundle.labels
    src_ok = (lab >= 1) & (lab <= n_src)
    tgt_ok = (lab > n_src) & (lab <= n_all)
    if (~np.where(is_target, tgt_ok, src_ok) & valid_split).any():
        bad("label/split mismatch")
    return report
