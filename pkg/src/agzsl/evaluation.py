"""GZSL/ZSL scoring, per-class Top-1, harmonic mean and attention export."""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import numcore as nc
from .afgn import fit_downstream, synthesize_features
from .agan import candidate_embeddings, candidate_logits, forward
from .datamodel import Split
from .datamodel.bundle import write_arrays
from .numcore import Rng

PROTOCOLS = ("AGAN-GZSL", "AGAN-ZSL", "AFGN-GZSL", "AFGN-ZSL")


class EmptySplitError(ValueError):
    pass


def harmonic_mean(s: float, t: float) -> float:
    """2ST / (S + T), defined as 0 when S + T = 0."""
    if s < 0 or t < 0:
        raise ValueError("accuracies must be non-negative")
    total = s + t
    return 0.0 if total == 0 else 2.0 * s * t / total


def score_gzsl(scores: np.ndarray, num_source: int, mode: str = "gzsl") -> np.ndarray:
    """1-based predictions from an (N, C^s + C^t) score matrix.

    ``gzsl`` takes the argmax over every class, ``zsl`` over the target slice
    only. ``np.argmax`` returns the first maximum, so ties go to the lowest
    class index.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[0] == 0:
        raise EmptySplitError("no samples to score")
    if mode == "gzsl":
        return np.argmax(scores, axis=1) + 1
    if mode == "zsl":
        if num_source >= scores.shape[1]:
            raise ValueError("score matrix has no target columns")
        return np.argmax(scores[:, num_source:], axis=1) + num_source + 1
    raise ValueError(f"unknown scoring mode {mode!r}")


def per_class_top1(preds: np.ndarray, labels: np.ndarray, classes) -> tuple[np.ndarray, float]:
    """Within-class accuracy (percent) for each class, and their unweighted mean."""
    preds, labels = np.asarray(preds), np.asarray(labels)
    acc = []
    for c in classes:
        mask = labels == c
        if not mask.any():
            raise EmptySplitError(f"class {c} has no samples")
        acc.append(100.0 * np.mean(preds[mask] == c))
    acc = np.asarray(acc, dtype=np.float64)
    return acc, float(acc.mean()) if acc.size else 0.0


@dataclass
class EvalReport:
    protocol: str
    classes: np.ndarray     # 1-based labels the accuracy vector refers to
    per_class: np.ndarray   # percent
    S: float
    T: float
    H: float

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"unknown protocol {self.protocol!r}")

    def to_text(self) -> str:
        """Flat ``key = value`` lines; floats use repr so the file round-trips exactly."""
        lines = [f"protocol = {self.protocol}", f"S = {self.S!r}", f"T = {self.T!r}", f"H = {self.H!r}"]
        lines += [f"class_{int(c)} = {float(a)!r}" for c, a in zip(self.classes, self.per_class)]
        return "\n".join(lines) + "\n"

    def table(self) -> str:
        return f"{self.protocol:<10} S={self.S:6.2f}  T={self.T:6.2f}  H={self.H:6.2f}"

    def save(self, path: str | os.PathLike) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_text())
        return path


def _report(protocol: str, preds: np.ndarray, labels: np.ndarray, split: np.ndarray,
            num_source: int, num_target: int) -> EvalReport:
    source_cls = np.arange(1, num_source + 1)
    target_cls = np.arange(num_source + 1, num_source + num_target + 1)
    tt = split == Split.TEST_TARGET
    acc_t, t = per_class_top1(preds[tt], labels[tt], target_cls)
    if protocol.endswith("ZSL") and not protocol.endswith("GZSL"):
        return EvalReport(protocol, target_cls, acc_t, 0.0, t, 0.0)
    ts = split == Split.TEST_SOURCE
    acc_s, s = per_class_top1(preds[ts], labels[ts], source_cls)
    return EvalReport(protocol, np.concatenate([source_cls, target_cls]),
                      np.concatenate([acc_s, acc_t]), s, t, harmonic_mean(s, t))


def _test_indices(trainer, protocol: str) -> np.ndarray:
    split = trainer.bundle.split
    if protocol.endswith("GZSL"):
        idx = np.flatnonzero((split == Split.TEST_SOURCE) | (split == Split.TEST_TARGET))
    else:
        idx = np.flatnonzero(split == Split.TEST_TARGET)
    if idx.size == 0:
        raise EmptySplitError(f"no test samples for {protocol}")
    return idx


def evaluate(trainer, protocol: str = "AGAN-GZSL", seed: int | None = None) -> EvalReport:
    """Score the trainer's test splits under one protocol.

    AGAN protocols read the classifier logit of each class from the pass
    conditioned on that class. AFGN protocols fit a softmax classifier on
    synthesized features (all classes for GZSL, target classes for ZSL) and
    apply it to the per-class conditioned embeddings.
    """
    if protocol not in PROTOCOLS:
        raise ValueError(f"unknown protocol {protocol!r}")
    from .trainer import STREAM_SYNTH

    cfg = trainer.config
    bundle, cs = trainer.bundle, trainer.class_sem
    ns, nt = cs.num_source, cs.num_target
    idx = _test_indices(trainer, protocol)
    feats = bundle.features[idx]
    mode = "gzsl" if protocol.endswith("GZSL") else "zsl"
    one_step = cfg.one_step_attention_only
    if protocol.startswith("AGAN"):
        scores = candidate_logits(trainer.agan, feats, trainer.class_vectors,
                                  trainer.attr_sem.vectors, one_step)
    else:
        seed = cfg.seed if seed is None else seed
        classes = np.arange(1, ns + nt + 1) if mode == "gzsl" else np.arange(ns + 1, ns + nt + 1)
        synth = synthesize_features(trainer.afgn, trainer.class_vectors[classes - 1],
                                    cfg.afgn.features_per_class, Rng(seed, STREAM_SYNTH), labels=classes)
        clf = fit_downstream(synth, classes, lr=cfg.afgn.downstream_lr,
                             max_steps=cfg.afgn.downstream_max_steps)
        emb = candidate_embeddings(trainer.agan, feats, trainer.class_vectors[classes - 1],
                                   trainer.attr_sem.vectors, one_step)
        scores = np.full((idx.size, ns + nt), -np.inf)
        with nc.no_grad():
            for j, c in enumerate(classes):
                scores[:, c - 1] = clf.logits(emb[j]).value[:, j]
    preds = score_gzsl(scores, ns, mode)
    return _report(protocol, preds, bundle.labels[idx], bundle.split[idx], ns, nt)


def evaluate_all(trainer, protocols=PROTOCOLS) -> dict[str, EvalReport]:
    return {p: evaluate(trainer, p) for p in protocols}


# ---------------------------------------------------------------- attention maps


@dataclass
class AttentionMap:
    sample: np.ndarray     # (N,) sample indices into the bundle
    alpha: np.ndarray      # (N, r) first-level weights
    alpha2: np.ndarray     # (N, r) second-level weights, rows sum to 1
    attribute: np.ndarray  # (N, r) 0-based dominant attribute per region
    h_t: np.ndarray        # (N, r) its attribute-attention probability


def attention_maps(trainer, indices=None) -> AttentionMap:
    """Eval-mode attention of each sample, conditioned on its own class scores."""
    bundle = trainer.bundle
    idx = np.arange(bundle.num_samples) if indices is None else np.asarray(indices)
    a = trainer.class_vectors[bundle.labels[idx] - 1]
    with nc.no_grad():
        trace = forward(trainer.agan, bundle.features[idx], a, trainer.attr_sem.vectors)
    if trace.alpha2 is None:
        raise ValueError("the model has no second attention level")
    return AttentionMap(idx, trace.alpha.value, trace.alpha2.value, trace.t_argmax,
                        trace.h_t.value)


def export_attention(trainer, indices, path: str | os.PathLike) -> Path:
    """Write attention maps as a bundle plus ``attention.tsv`` beside it."""
    amap = attention_maps(trainer, indices)
    path = write_arrays(path, dict(sample=amap.sample.astype(np.int64), alpha=amap.alpha,
                                   alpha2=amap.alpha2, attribute=amap.attribute.astype(np.int64),
                                   h_t=amap.h_t),
                        meta=dict(kind="attention"), precision="f64")
    rows = ["sample\tregion\talpha\talpha2\tattribute\th_t"]
    n, r = amap.alpha.shape
    for i in range(n):
        for j in range(r):
            rows.append(f"{amap.sample[i]}\t{j}\t{float(amap.alpha[i, j])!r}\t"
                        f"{float(amap.alpha2[i, j])!r}\t{amap.attribute[i, j]}\t{float(amap.h_t[i, j])!r}")
    (path / "attention.tsv").write_text("\n".join(rows) + "\n")
    return path


def attention_hit_rate(trainer, region_attributes: np.ndarray, indices=None) -> float:
    """Fraction of samples whose top-alpha2 region carries the class's top attribute.

    Only samples in which at least one region carries that attribute are
    counted. ``region_attributes`` is the planted (N, r) 0-based attribute
    table for the whole bundle.
    """
    amap = attention_maps(trainer, indices)
    labels = trainer.bundle.labels[amap.sample]
    top_attr = np.argmax(trainer.class_vectors[labels - 1], axis=1)
    planted = np.asarray(region_attributes)[amap.sample]
    carries = planted == top_attr[:, None]
    eligible = carries.any(axis=1)
    if not eligible.any():
        raise EmptySplitError("no sample carries its class's top attribute")
    best = np.argmax(amap.alpha2, axis=1)
    hits = carries[np.arange(best.size), best]
    return float(hits[eligible].mean())
