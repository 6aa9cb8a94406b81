"""Attribute guided attention network.

Region features pass through a stochastic encoder whose KL to a standard
normal bounds the information kept per region. The bounded regions are
densely matched against projected attribute vectors, weighted by a two-level
attention (region relevance times each region's strongest attribute, then a
class-score modulated refinement), averaged over regions and classified.

All forward functions are batched: region tensors are (N, r, ·).
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import NamedTuple

import numpy as np

from . import numcore as nc
from .numcore import Parameter, Rng, Tensor


@dataclass
class AganConfig:
    m: int = 16
    encoder_hidden: int | None = None     # defaults to d
    projector_hidden: int | None = None   # defaults to 2g
    attention_hidden: int | None = None   # K, T_i and refine-K width; defaults to A
    classifier_hidden: int = 32
    lambda_alpha: float = 10.0
    lambda_p: float = 0.2
    lambda_m1: float = 0.1
    gamma: float = 0.05
    beta_kl: float = 10.0

    def __post_init__(self):
        if self.lambda_alpha < 0:
            raise ValueError("lambda_alpha must be non-negative")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if self.m < 1 or self.classifier_hidden < 1:
            raise ValueError("widths must be positive")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def init_uniform(rng: Rng, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, shape)


class AganModel:
    """Parameters of the embedding network, keyed by stable names."""

    def __init__(self, config: AganConfig, *, num_regions: int, feature_dim: int, attr_dim: int,
                 num_attributes: int, num_source: int, num_target: int, rng: Rng):
        self.config = config
        self.num_regions = r = num_regions
        self.feature_dim = d = feature_dim
        self.attr_dim = g = attr_dim
        self.num_attributes = A = num_attributes
        self.num_source = num_source
        self.num_target = num_target
        m = config.m
        he = config.encoder_hidden or d
        hq = config.projector_hidden or 2 * g
        ha = config.attention_hidden or A
        hc = config.classifier_hidden
        C = num_source + num_target

        spec = [
            # stochastic encoder: d -> he -> (mu, logvar)
            ("encoder.w1", (d, he), d), ("encoder.b1", (he,), d),
            ("encoder.w2", (he, 2 * m), he), ("encoder.b2", (2 * m,), he),
            # attribute projector: g -> hq -> m
            ("projector.w1", (g, hq), g), ("projector.b1", (hq,), g),
            ("projector.w2", (hq, m), hq), ("projector.b2", (m,), hq),
            # first-level region attention
            ("region_attn.w_b", (A, ha), A), ("region_attn.b_b", (ha,), A),
            ("region_attn.w_a", (ha, 1), ha),
            # per-region attribute attention, one group per region
            ("attr_attn.w_ta", (r, A, ha), A), ("attr_attn.b_ta", (r, ha), A),
            ("attr_attn.w_tb", (r, ha, A), ha), ("attr_attn.b_tb", (r, A), ha),
            # second-level region attention
            ("refine_attn.w_b", (A, ha), A), ("refine_attn.b_b", (ha,), A),
            ("refine_attn.w_a", (ha, 1), ha),
            # classifier: m -> hc -> C^s + C^t
            ("classifier.w1", (m, hc), m), ("classifier.b1", (hc,), m),
            ("classifier.w2", (hc, C), hc), ("classifier.b2", (C,), hc),
        ]
        self.params: dict[str, Parameter] = {
            name: Parameter(init_uniform(rng, shape, fan_in), name=name)
            for name, shape, fan_in in spec
        }

    def __getitem__(self, name: str) -> Parameter:
        return self.params[name]

    def parameters(self, prefix: str | tuple[str, ...] = "") -> list[Parameter]:
        return [p for n, p in self.params.items() if n.startswith(prefix)]

    @property
    def num_classes(self) -> int:
        return self.num_source + self.num_target


@dataclass
class EmbeddingTrace:
    features: Tensor       # F'' (N, r, m)
    kl: Tensor             # scalar, mean KL per region
    kl_per_sample: np.ndarray
    attributes: Tensor     # V' (A, m)
    fv: Tensor             # (N, r, A)
    pi: Tensor             # (N, r)
    t: Tensor              # (N, r, A)
    h_t: Tensor            # (N, r)
    t_argmax: np.ndarray   # (N, r)
    alpha: Tensor          # (N, r)
    f1: Tensor             # (N, r, m)
    fv2: Tensor | None     # (N, r, A)
    fv_weighted: Tensor | None
    alpha2: Tensor | None  # (N, r)
    f2: Tensor | None      # (N, r, m)
    fs: Tensor             # (N, m)
    logits: Tensor         # (N, C^s + C^t)


# ---------------------------------------------------------------- building blocks


def _as_batch(raw) -> Tensor:
    raw = nc.as_tensor(raw)
    if raw.ndim == 2:
        raw = nc.reshape(raw, (1,) + raw.shape)
    if raw.ndim != 3:
        raise nc.ShapeError(f"region features must be (N, r, d), got {raw.shape}")
    return raw


def bound_features(model: AganModel, raw, rng: Rng | None = None, train_mode: bool = False,
                   noise: np.ndarray | None = None):
    """Encode regions as N(mu, sigma^2); return ``(F'', mean KL, per-sample KL)``.

    Train mode draws the reparameterised sample ``mu + sigma * eps`` (``noise``
    overrides the draw); eval mode returns ``mu``.
    """
    raw = _as_batch(raw)
    n, r, d = raw.shape
    if d != model.feature_dim:
        raise nc.ShapeError(f"expected feature dim {model.feature_dim}, got {d}")
    m = model.config.m
    x = nc.reshape(raw, (n * r, d))
    h = nc.relu(nc.linear(x, model["encoder.w1"], model["encoder.b1"]))
    out = nc.linear(h, model["encoder.w2"], model["encoder.b2"])
    mu = nc.take(out, 0, m, axis=1)
    logvar = nc.take(out, m, 2 * m, axis=1)
    var = nc.exp(logvar)
    if train_mode:
        if noise is None:
            noise = rng.normal((n * r, m))
        feats = mu + nc.exp(nc.scale(logvar, 0.5)) * nc.Tensor(np.reshape(noise, (n * r, m)))
    else:
        feats = mu
    per_region = nc.scale(nc.sum(nc.square(mu) + var - logvar - 1.0, axis=1), 0.5)
    kl = nc.mean(per_region)
    kl_per_sample = per_region.value.reshape(n, r).mean(axis=1)
    return nc.reshape(feats, (n, r, m)), kl, kl_per_sample


def kl_standard_normal(mu: np.ndarray, logvar: np.ndarray) -> np.ndarray:
    """Closed-form KL(N(mu, e^logvar) || N(0, I)) summed over the last axis."""
    return 0.5 * np.sum(mu ** 2 + np.exp(logvar) - logvar - 1.0, axis=-1)


def project_attributes(model: AganModel, attr_vectors) -> Tensor:
    """V' = Q(v), one m-dim row per attribute."""
    v = nc.as_tensor(attr_vectors)
    h = nc.relu(nc.linear(v, model["projector.w1"], model["projector.b1"]))
    return nc.linear(h, model["projector.w2"], model["projector.b2"])


def _relevance(regions: Tensor, attributes: Tensor) -> Tensor:
    n, r, m = regions.shape
    a = attributes.shape[0]
    if attributes.shape[1] != m:
        raise nc.ShapeError(f"attribute width {attributes.shape[1]} != region width {m}")
    flat = nc.matmul(nc.reshape(regions, (n * r, m)), nc.transpose(attributes))
    return nc.reshape(flat, (n, r, a))


def region_attention(scores_in: Tensor, w_b: Tensor, b_b: Tensor, w_a: Tensor) -> Tensor:
    """Softmax over regions of ``tanh(x_i W_B + b) W_A``; input (N, r, A), output (N, r)."""
    n, r, a = scores_in.shape
    h = nc.tanh(nc.linear(nc.reshape(scores_in, (n * r, a)), w_b, b_b))
    return nc.softmax(nc.reshape(nc.matmul(h, w_a), (n, r)), axis=1)


def grouped_attention(fv, w_ta, b_ta, w_tb, b_tb) -> Tensor:
    """Attribute attention of every region with its own two-layer network.

    ``fv`` is (N, r, A); weights are stacked per region: ``w_ta`` (r, A, h),
    ``w_tb`` (r, h, A). Output rows are softmax distributions over A.
    """
    fv = nc.as_tensor(fv)
    groups = w_ta.shape[0]
    if fv.ndim != 3 or fv.shape[1] != groups or w_tb.shape[0] != groups:
        raise nc.ShapeError(f"grouped attention has {groups} groups but input is {fv.shape}")
    hidden = nc.tanh(nc.grouped_linear(fv, w_ta, b_ta))
    return nc.softmax(nc.grouped_linear(hidden, w_tb, b_tb), axis=2)


def fuse_and_attend_one(model: AganModel, features: Tensor, attributes: Tensor) -> dict:
    """First attention level; returns fv, pi, t, h_t, t_argmax, alpha, f1."""
    m = features.shape[2]
    fv = _relevance(features, attributes)
    pi = region_attention(fv, model["region_attn.w_b"], model["region_attn.b_b"],
                          model["region_attn.w_a"])
    t = grouped_attention(fv, model["attr_attn.w_ta"], model["attr_attn.b_ta"],
                          model["attr_attn.w_tb"], model["attr_attn.b_tb"])
    h_t, t_argmax = nc.max_with_index(t, axis=2)
    alpha = nc.scale(pi * h_t, model.config.lambda_alpha)
    f1 = features + nc.expand(alpha, 2, m) * features
    return dict(fv=fv, pi=pi, t=t, h_t=h_t, t_argmax=t_argmax, alpha=alpha, f1=f1)


def refine_attend_two(model: AganModel, f1: Tensor, attributes: Tensor, class_vectors) -> dict:
    """Second attention level conditioned on per-sample class scores (N, A)."""
    n, r, m = f1.shape
    a = nc.as_tensor(class_vectors)
    if a.shape != (n, attributes.shape[0]):
        raise nc.ShapeError(f"class vectors must be {(n, attributes.shape[0])}, got {a.shape}")
    fv2 = _relevance(f1, attributes)
    weighted = fv2 * nc.expand(a, 1, r)
    alpha2 = region_attention(weighted, model["refine_attn.w_b"], model["refine_attn.b_b"],
                              model["refine_attn.w_a"])
    f2 = f1 + nc.expand(alpha2, 2, m) * f1
    return dict(fv2=fv2, fv_weighted=weighted, alpha2=alpha2, f2=f2)


def assemble_embedding(f2) -> Tensor:
    """Mean over regions: (N, r, m) -> (N, m)."""
    return nc.mean(nc.as_tensor(f2), axis=1)


def classify_scores(model: AganModel, fs) -> Tensor:
    """Raw logits over all C^s + C^t classes."""
    h = nc.relu(nc.linear(nc.as_tensor(fs), model["classifier.w1"], model["classifier.b1"]))
    return nc.linear(h, model["classifier.w2"], model["classifier.b2"])


def source_probabilities(logits: Tensor, num_source: int) -> Tensor:
    return nc.softmax(nc.take(logits, 0, num_source, axis=1), axis=1)


def target_probabilities(logits: Tensor, num_source: int) -> Tensor:
    return nc.sigmoid(nc.take(logits, num_source, logits.shape[1], axis=1))


def forward(model: AganModel, raw, class_vectors, attr_vectors, *, rng: Rng | None = None,
            train_mode: bool = False, noise: np.ndarray | None = None,
            one_step: bool = False) -> EmbeddingTrace:
    """Full forward pass; ``class_vectors`` holds one class score row per sample."""
    feats, kl, kl_ps = bound_features(model, raw, rng, train_mode, noise)
    attributes = project_attributes(model, attr_vectors)
    first = fuse_and_attend_one(model, feats, attributes)
    if one_step:
        second = dict(fv2=None, fv_weighted=None, alpha2=None, f2=None)
        fs = assemble_embedding(first["f1"])
    else:
        second = refine_attend_two(model, first["f1"], attributes, class_vectors)
        fs = assemble_embedding(second["f2"])
    return EmbeddingTrace(features=feats, kl=kl, kl_per_sample=kl_ps, attributes=attributes,
                          fs=fs, logits=classify_scores(model, fs), **first, **second)


# ---------------------------------------------------------------- losses


class AganLosses(NamedTuple):
    ce: Tensor
    u: Tensor
    m1: Tensor
    kl_term: Tensor
    total: Tensor


def cross_entropy_source(logits: Tensor, labels: np.ndarray, num_source: int) -> Tensor:
    """Mean softmax cross-entropy over the source slice; labels are 1-based."""
    labels = np.asarray(labels)
    if (labels < 1).any() or (labels > num_source).any():
        raise ValueError("label outside the source class range")
    logp = nc.log_softmax(nc.take(logits, 0, num_source, axis=1), axis=1)
    return nc.neg(nc.mean(nc.pick(logp, labels - 1)))


def target_bce(logits: Tensor, soft: np.ndarray, num_source: int) -> Tensor:
    """One-vs-rest binary cross-entropy on the target slice against soft labels (N, C^t)."""
    z = nc.take(logits, num_source, logits.shape[1], axis=1)
    y = np.asarray(soft, dtype=np.float64)
    if y.shape != z.shape:
        raise nc.ShapeError(f"soft labels {y.shape} do not match target logits {z.shape}")
    # -y log s(z) - (1-y) log(1-s(z)) == y softplus(-z) + (1-y) softplus(z)
    loss = nc.Tensor(y) * nc.softplus(nc.neg(z)) + nc.Tensor(1.0 - y) * nc.softplus(z)
    return nc.mean(loss)


def mutual_loss(a, b) -> Tensor:
    """Batch mean of 0.5 * ||a - b||^2; whichever side is a constant gets no gradient."""
    a, b = nc.as_tensor(a), nc.as_tensor(b)
    return nc.scale(nc.sum_squares(a - b), 0.5 / a.shape[0])


def agan_losses(trace: EmbeddingTrace, labels: np.ndarray, soft_targets: np.ndarray | None,
                x_tilde: np.ndarray | None, config: AganConfig, num_source: int) -> AganLosses:
    """Loss terms of the embedding objective.

    ``soft_targets`` is the (C^s, C^t) matrix; pass ``None`` to drop the target
    loss. ``x_tilde`` holds generated features for the batch as constants;
    ``None`` drops the mutual term.
    """
    labels = np.asarray(labels)
    ce = cross_entropy_source(trace.logits, labels, num_source)
    zero = nc.Tensor(0.0)
    if soft_targets is not None:
        u = target_bce(trace.logits, np.asarray(soft_targets)[labels - 1], num_source)
    else:
        u = zero
    m1 = mutual_loss(trace.fs, nc.Tensor(x_tilde)) if x_tilde is not None else zero
    kl_term = nc.scale(nc.relu(trace.kl - config.gamma), config.beta_kl)
    total = ce + nc.scale(u, config.lambda_p) + nc.scale(m1, config.lambda_m1) + kl_term
    return AganLosses(ce, u, m1, kl_term, total)


# ---------------------------------------------------------------- test-time scoring


def candidate_embeddings(model: AganModel, raw, candidates: np.ndarray, attr_vectors,
                         one_step: bool = False) -> np.ndarray:
    """Eval-mode embeddings conditioned on each candidate class: (C, N, m)."""
    candidates = np.asarray(candidates, dtype=np.float64)
    with nc.no_grad():
        feats, _, _ = bound_features(model, raw)
        attributes = project_attributes(model, attr_vectors)
        first = fuse_and_attend_one(model, feats, attributes)
        n = feats.shape[0]
        if one_step:
            fs = assemble_embedding(first["f1"]).value
            return np.repeat(fs[None], candidates.shape[0], axis=0)
        out = []
        for a in candidates:
            second = refine_attend_two(model, first["f1"], attributes, np.tile(a, (n, 1)))
            out.append(assemble_embedding(second["f2"]).value)
    return np.stack(out)


def candidate_logits(model: AganModel, raw, candidates: np.ndarray, attr_vectors,
                     one_step: bool = False) -> np.ndarray:
    """Score matrix (N, C): entry (n, c) is logit c of the pass conditioned on class c."""
    emb = candidate_embeddings(model, raw, candidates, attr_vectors, one_step)
    with nc.no_grad():
        cols = [classify_scores(model, emb[c]).value[:, c] for c in range(emb.shape[0])]
    return np.stack(cols, axis=1)
