"""Source/target class similarity by pointwise mutual information.

Class score vectors become distributions over attributes (row softmax); the
product of target and source distributions, normalised to unit mass, is read
as a joint table whose PMI against its own marginals measures how strongly a
source class co-occurs with a target class. Positive PMI, max-scaled, becomes
the soft label used by the target-class loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datamodel import ClassSemantics

DEFAULT_FLOOR = -30.0


@dataclass
class PmiMatrix:
    values: np.ndarray  # (C^s, C^t)
    floor: float = DEFAULT_FLOOR


@dataclass
class SoftTargets:
    targets: np.ndarray  # (C^s, C^t), entries in [0, 1]


def class_distributions(class_sem: np.ndarray) -> np.ndarray:
    """Row-wise softmax over attributes."""
    z = np.asarray(class_sem, dtype=np.float64)
    z = np.exp(z - z.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def joint_distribution(z_target: np.ndarray, z_source: np.ndarray):
    """Normalised ``Z_t @ Z_s.T`` (C^t x C^s) and its (target, source) marginals."""
    if z_target.shape[1] != z_source.shape[1]:
        raise ValueError("source and target distributions disagree on attribute count")
    joint = z_target @ z_source.T
    total = joint.sum()
    if not total > 0:
        raise ValueError("joint table has zero mass")
    joint = joint / total
    return joint, (joint.sum(axis=1), joint.sum(axis=0))


def pmi_matrix(joint: np.ndarray, marginals, floor: float = DEFAULT_FLOOR) -> PmiMatrix:
    """``log J[t, s] / (P_t P_s)`` transposed to (C^s, C^t); zero cells take ``floor``."""
    p_target, p_source = marginals
    expected = np.outer(p_target, p_source)
    with np.errstate(divide="ignore"):
        values = np.where(joint > 0, np.log(np.where(joint > 0, joint, 1.0) / expected), floor)
    return PmiMatrix(np.maximum(values, floor).T.copy(), floor)


def soft_targets(pmi: PmiMatrix, tol: float = 1e-12) -> SoftTargets:
    """Positive part of PMI scaled so the largest entry is 1.

    Values within ``tol`` of zero count as independence; without this,
    rounding noise on an independent table would be scaled up to 1.
    """
    pos = np.where(pmi.values > tol, pmi.values, 0.0)
    top = pos.max()
    return SoftTargets(pos / top if top > 0 else pos)


def compute_soft_targets(class_sem: ClassSemantics, floor: float = DEFAULT_FLOOR):
    """Full pipeline from class semantics; returns ``(PmiMatrix, SoftTargets)``."""
    joint, marginals = joint_distribution(class_distributions(class_sem.target),
                                          class_distributions(class_sem.source))
    pmi = pmi_matrix(joint, marginals, floor)
    return pmi, soft_targets(pmi)
