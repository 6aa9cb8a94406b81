"""Deterministic fine-grained GZSL data with planted attribute structure.

Each attribute owns a unit direction in the first ``signal_dims`` coordinates
of region-feature space (directions are orthonormal when there is room). A
region of a class-c sample picks one attribute with probability proportional
to ``a_c`` and carries ``a_c[k] * u_k``; Gaussian noise of scale ``noise`` is
added to every coordinate, so the trailing nuisance coordinates hold nothing
but noise.

Every class has ``active_attributes`` high scores with a unique maximum of
1.0. A target class copies half (rounded up) of its high attributes from a
parent source class and draws the rest from attributes the parent lacks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..numcore import Rng
from .core import AttributeSemantics, ClassSemantics, FeatureBundle, Split

_SEMANTICS_STREAM = 1
_DIRECTIONS_STREAM = 2
_ATTR_VECTORS_STREAM = 3
_SAMPLES_STREAM = 4


@dataclass(frozen=True)
class SynthSpec:
    num_source: int = 8
    num_target: int = 4
    num_attributes: int = 12
    num_regions: int = 9
    feature_dim: int = 64
    attr_dim: int = 16
    samples_per_class: int = 40
    noise: float = 0.1
    seed: int = 0
    train_fraction: float = 0.75
    active_attributes: int = 4
    signal_dims: int | None = None

    def __post_init__(self):
        counts = (self.num_source, self.num_target, self.num_attributes, self.num_regions,
                  self.feature_dim, self.attr_dim, self.samples_per_class, self.active_attributes)
        if min(counts) < 1:
            raise ValueError("all counts must be positive")
        if self.noise < 0:
            raise ValueError("noise must be >= 0")
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must lie in (0, 1)")
        # a target class keeps ceil(k/2) of its parent's attributes and needs floor(k/2) fresh ones
        k = self.active_attributes
        if k + k // 2 > self.num_attributes:
            raise ValueError("num_attributes must be at least 1.5 * active_attributes")
        if self.signal_dims is not None and not 1 <= self.signal_dims <= self.feature_dim:
            raise ValueError("signal_dims must lie in [1, feature_dim]")

    @property
    def signal(self) -> int:
        return self.signal_dims if self.signal_dims is not None else max(1, self.feature_dim // 2)


@dataclass
class SyntheticTruth:
    """Ground truth kept alongside generated data for oracles and sanity checks."""

    directions: np.ndarray        # (A, d) attribute directions u_k
    region_attributes: np.ndarray  # (N, r) 0-based attribute planted in each region
    parents: np.ndarray           # (C^t,) 1-based parent source class of each target class


def _scores(rng: Rng, active: np.ndarray, num_attributes: int) -> np.ndarray:
    a = rng.uniform(0.0, 0.05, num_attributes)
    a[active] = rng.uniform(0.4, 0.8, active.size)
    a[active[0]] = 1.0
    return a


def _class_semantics(spec: SynthSpec, rng: Rng) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    A, k = spec.num_attributes, spec.active_attributes
    seen: set[frozenset] = set()

    def fresh(draw):
        # distinct attribute sets whenever the budget of draws allows it
        for _ in range(200):
            active = draw()
            key = frozenset(active.tolist())
            if key not in seen:
                break
        seen.add(key)
        return active

    source_sets = [fresh(lambda: rng.permutation(A)[:k]) for _ in range(spec.num_source)]
    source = np.stack([_scores(rng, s, A) for s in source_sets])

    shared = (k + 1) // 2
    parents = np.arange(spec.num_target) % spec.num_source
    target = []
    for p in parents:
        parent_set = source_sets[p]
        others = np.setdiff1d(np.arange(A), parent_set)

        def draw(parent_set=parent_set, others=others):
            keep = parent_set[rng.permutation(k)[:shared]]
            extra = others[rng.permutation(others.size)[:k - shared]]
            return np.concatenate([keep, extra])[rng.permutation(k)]

        target.append(_scores(rng, fresh(draw), A))
    return source, np.stack(target), parents + 1


def _directions(spec: SynthSpec, rng: Rng) -> np.ndarray:
    A, ds = spec.num_attributes, spec.signal
    raw = rng.normal((ds, A))
    if ds >= A:
        q, r = np.linalg.qr(raw)
        basis = q * np.sign(np.diag(r))
    else:
        basis = raw / np.linalg.norm(raw, axis=0, keepdims=True)
    out = np.zeros((A, spec.feature_dim))
    out[:, :ds] = basis.T
    return out


def generate_synthetic(spec: SynthSpec = SynthSpec(), with_truth: bool = False):
    """Build ``(FeatureBundle, ClassSemantics, AttributeSemantics)``.

    With ``with_truth=True`` a :class:`SyntheticTruth` is appended.
    """
    root = Rng(spec.seed)
    source, target, parents = _class_semantics(spec, root.child(_SEMANTICS_STREAM))
    directions = _directions(spec, root.child(_DIRECTIONS_STREAM))
    attr_vectors = root.child(_ATTR_VECTORS_STREAM).normal((spec.num_attributes, spec.attr_dim))

    sample_rng = root.child(_SAMPLES_STREAM)
    all_sem = np.concatenate([source, target])
    n_cls, per, r = all_sem.shape[0], spec.samples_per_class, spec.num_regions
    n_train = min(per - 1, max(1, int(round(spec.train_fraction * per))))

    feats, labels, split, planted = [], [], [], []
    for c in range(n_cls):
        a = all_sem[c]
        attrs = sample_rng.choice(spec.num_attributes, size=(per, r), p=a / a.sum())
        clean = a[attrs][..., None] * directions[attrs]
        noise = spec.noise * sample_rng.normal((per, r, spec.feature_dim))
        feats.append(clean + noise)
        planted.append(attrs)
        labels.append(np.full(per, c + 1))
        if c < spec.num_source:
            tags = np.full(per, int(Split.TEST_SOURCE))
            tags[sample_rng.permutation(per)[:n_train]] = int(Split.TRAIN_SOURCE)
        else:
            tags = np.full(per, int(Split.TEST_TARGET))
        split.append(tags)

    bundle = FeatureBundle(np.concatenate(feats), np.concatenate(labels), np.concatenate(split))
    class_sem = ClassSemantics(source, target)
    attr_sem = AttributeSemantics(attr_vectors)
    if with_truth:
        return bundle, class_sem, attr_sem, SyntheticTruth(directions, np.concatenate(planted), parents)
    return bundle, class_sem, attr_sem
