"""Conditional feature generator with a linear Wasserstein critic.

The generator maps noise plus class scores through one hidden layer to the
embedding space; the critic is a single affine map of ``(x, a)``. Because the
critic is affine, its input gradient is the constant weight block ``w_x`` and
the gradient penalty has a closed form in ``w_x`` alone.

After training, features are synthesized for every class and a softmax
classifier is fit on them for test-time prediction.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import NamedTuple

import numpy as np

from . import numcore as nc
from .agan import cross_entropy_source, init_uniform, mutual_loss
from .numcore import Adam, Parameter, Rng, Tensor


@dataclass
class AfgnConfig:
    z: int = 16
    generator_hidden: int = 64
    lambda_gp: float = 10.0
    lambda_cls: float = 0.1
    lambda_m2: float = 0.2
    n_critic: int = 5
    features_per_class: int = 400
    downstream_lr: float = 1e-2
    downstream_max_steps: int = 2000

    def __post_init__(self):
        for name in ("z", "generator_hidden", "n_critic", "features_per_class",
                     "downstream_max_steps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        for name in ("lambda_gp", "lambda_cls", "lambda_m2", "downstream_lr"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


class AfgnModel:
    def __init__(self, config: AfgnConfig, *, embed_dim: int, num_attributes: int, rng: Rng):
        self.config = config
        self.embed_dim = m = embed_dim
        self.num_attributes = A = num_attributes
        zin, hg = config.z + A, config.generator_hidden
        spec = [
            ("generator.w1", (zin, hg), zin), ("generator.b1", (hg,), zin),
            ("generator.w2", (hg, m), hg), ("generator.b2", (m,), hg),
            ("critic.w", (m + A, 1), m + A), ("critic.b", (1,), m + A),
        ]
        self.params: dict[str, Parameter] = {
            name: Parameter(init_uniform(rng, shape, fan_in), name=name)
            for name, shape, fan_in in spec
        }
        self.downstream: DownstreamClassifier | None = None

    def __getitem__(self, name: str) -> Parameter:
        return self.params[name]

    def parameters(self, prefix: str = "") -> list[Parameter]:
        return [p for n, p in self.params.items() if n.startswith(prefix)]

    @property
    def critic_input_weights(self) -> np.ndarray:
        return self.params["critic.w"].value[: self.embed_dim, 0]


def generate(model: AfgnModel, class_vectors, rng: Rng | None = None,
             noise: np.ndarray | None = None) -> Tensor:
    """x~ = G(eps || a) for a batch of class score rows (N, A)."""
    a = nc.as_tensor(class_vectors)
    if a.ndim == 1:
        a = nc.reshape(a, (1, a.shape[0]))
    n = a.shape[0]
    if noise is None:
        noise = rng.normal((n, model.config.z))
    x = nc.concat([nc.Tensor(np.reshape(noise, (n, model.config.z))), a], axis=1)
    h = nc.leaky_relu(nc.linear(x, model["generator.w1"], model["generator.b1"]))
    return nc.linear(h, model["generator.w2"], model["generator.b2"])


def critic(model: AfgnModel, x, class_vectors) -> Tensor:
    """D(x, a) per row, shape (N,)."""
    x, a = nc.as_tensor(x), nc.as_tensor(class_vectors)
    out = nc.linear(nc.concat([x, a], axis=1), model["critic.w"], model["critic.b"])
    return nc.reshape(out, (x.shape[0],))


def critic_input_gradient(model: AfgnModel, x_hat: np.ndarray, class_vectors: np.ndarray) -> np.ndarray:
    """Gradient of D with respect to its feature input at each row of ``x_hat``."""
    n = np.asarray(x_hat).shape[0]
    return np.tile(model.critic_input_weights, (n, 1))


def interpolate(fs: np.ndarray, x_tilde: np.ndarray, rng: Rng) -> np.ndarray:
    """x^ = eta * f_s + (1 - eta) * x~ with one eta ~ U(0, 1) per row."""
    eta = rng.uniform(0.0, 1.0, (fs.shape[0], 1))
    return eta * fs + (1.0 - eta) * x_tilde


def gradient_penalty(model: AfgnModel, fs, x_tilde, class_vectors, rng: Rng | None = None,
                     lambda_gp: float | None = None) -> Tensor:
    """lambda * (||grad_x D(x^, a)||_2 - 1)^2, averaged over the batch.

    The critic is affine, so the gradient at every interpolate is ``w_x`` and
    the batch average equals the single closed-form value.
    """
    lam = model.config.lambda_gp if lambda_gp is None else lambda_gp
    fs_v = np.asarray(nc.as_tensor(fs).value)
    xt_v = np.asarray(nc.as_tensor(x_tilde).value)
    if fs_v.shape != xt_v.shape:
        raise nc.ShapeError("f_s and x~ batches differ in shape")
    if rng is not None:
        interpolate(fs_v, xt_v, rng)  # keeps the noise stream aligned with the sampled form
    w_x = nc.take(model["critic.w"], 0, model.embed_dim, axis=0)
    norm = nc.sqrt(nc.sum_squares(w_x))
    return nc.scale(nc.square(norm - 1.0), lam)


class AfgnLosses(NamedTuple):
    critic_loss: Tensor
    gen_loss: Tensor
    wasserstein: Tensor
    gp: Tensor
    cls: Tensor
    m2: Tensor


def critic_objective(model: AfgnModel, fs: np.ndarray, class_vectors: np.ndarray,
                     rng: Rng | None = None, noise: np.ndarray | None = None) -> tuple[Tensor, Tensor, Tensor]:
    """Negated critic objective ``-(E D(f_s) - E D(x~) - GP)`` with x~ held constant.

    Returns ``(loss, wasserstein estimate, gp)``.
    """
    with nc.no_grad():
        x_tilde = generate(model, class_vectors, rng, noise).value
    real = nc.mean(critic(model, fs, class_vectors))
    fake = nc.mean(critic(model, x_tilde, class_vectors))
    wdist = real - fake
    gp = gradient_penalty(model, fs, x_tilde, class_vectors, rng)
    return gp - wdist, wdist, gp


def generator_objective(model: AfgnModel, fs: np.ndarray, class_vectors: np.ndarray,
                        labels: np.ndarray, classifier, rng: Rng | None = None,
                        noise: np.ndarray | None = None, lambda_cls: float | None = None,
                        lambda_m2: float | None = None) -> tuple[Tensor, Tensor, Tensor]:
    """``-E D(x~) + lambda_cls * L_cls + lambda_m2 * L_m2``; returns ``(loss, L_cls, L_m2)``.

    ``classifier`` maps a feature tensor to logits over all classes and must
    treat its own weights as constants.
    """
    cfg = model.config
    lam_cls = cfg.lambda_cls if lambda_cls is None else lambda_cls
    lam_m2 = cfg.lambda_m2 if lambda_m2 is None else lambda_m2
    x_tilde = generate(model, class_vectors, rng, noise)
    adv = nc.neg(nc.mean(critic(model, x_tilde, class_vectors)))
    labels = np.asarray(labels)
    num_source = getattr(classifier, "num_source")
    cls = cross_entropy_source(classifier(x_tilde), labels, num_source)
    m2 = mutual_loss(x_tilde, nc.Tensor(fs))
    loss = adv + nc.scale(cls, lam_cls) + nc.scale(m2, lam_m2)
    return loss, cls, m2


def afgn_losses(model: AfgnModel, fs: np.ndarray, class_vectors: np.ndarray, labels: np.ndarray,
                classifier, rng: Rng, lambda_cls: float | None = None,
                lambda_m2: float | None = None) -> AfgnLosses:
    """Both adversarial objectives on one batch (fresh noise for each)."""
    c_loss, wdist, gp = critic_objective(model, fs, class_vectors, rng)
    g_loss, cls, m2 = generator_objective(model, fs, class_vectors, labels, classifier, rng,
                                          lambda_cls=lambda_cls, lambda_m2=lambda_m2)
    return AfgnLosses(c_loss, g_loss, wdist, gp, cls, m2)


class FrozenClassifier:
    """Wraps the embedding network's classifier with its weights as constants."""

    def __init__(self, agan_model):
        self.num_source = agan_model.num_source
        self.weights = {k: Tensor(agan_model[k].value) for k in
                        ("classifier.w1", "classifier.b1", "classifier.w2", "classifier.b2")}

    def __call__(self, x: Tensor) -> Tensor:
        w = self.weights
        h = nc.relu(nc.linear(x, w["classifier.w1"], w["classifier.b1"]))
        return nc.linear(h, w["classifier.w2"], w["classifier.b2"])


# ---------------------------------------------------------------- test time


@dataclass
class SyntheticSet:
    features: np.ndarray  # (C * per_class, m)
    labels: np.ndarray    # 1-based class indices


def synthesize_features(model: AfgnModel, class_vectors: np.ndarray, per_class: int | None,
                        rng: Rng, labels: np.ndarray | None = None) -> SyntheticSet:
    """``per_class`` generated features for each row of ``class_vectors``.

    Class ``i`` draws its noise from its own substream ``rng.child(i)``, so the
    output for a class does not depend on which other classes are requested.
    """
    class_vectors = np.asarray(class_vectors, dtype=np.float64)
    per_class = model.config.features_per_class if per_class is None else per_class
    if labels is None:
        labels = np.arange(1, class_vectors.shape[0] + 1)
    feats, labs = [], []
    with nc.no_grad():
        for i, (a, lab) in enumerate(zip(class_vectors, labels)):
            noise = rng.child(int(lab)).normal((per_class, model.config.z))
            feats.append(generate(model, np.tile(a, (per_class, 1)), noise=noise).value)
            labs.append(np.full(per_class, lab))
    return SyntheticSet(np.concatenate(feats), np.concatenate(labs))


class DownstreamClassifier:
    """Affine softmax classifier over a fixed list of class labels."""

    def __init__(self, classes: np.ndarray, dim: int):
        self.classes = np.asarray(classes)
        self.w = Parameter(np.zeros((dim, self.classes.size)), name="downstream.w")
        self.b = Parameter(np.zeros(self.classes.size), name="downstream.b")
        self.history: list[float] = []

    def logits(self, x) -> Tensor:
        return nc.linear(nc.as_tensor(x), self.w, self.b)

    def loss(self, x, labels: np.ndarray) -> Tensor:
        col = np.searchsorted(self.classes, labels)
        return nc.neg(nc.mean(nc.pick(nc.log_softmax(self.logits(x), axis=1), col)))

    def predict(self, x) -> np.ndarray:
        with nc.no_grad():
            return self.classes[np.argmax(self.logits(x).value, axis=1)]


def fit_downstream(synthetic: SyntheticSet, classes: np.ndarray, lr: float = 1e-2,
                   max_steps: int = 2000, tol: float = 1e-5, window: int = 20) -> DownstreamClassifier:
    """Full-batch Adam on softmax cross-entropy until the loss plateaus.

    ``classes`` (sorted labels) fixes the output width: all classes for GZSL,
    target classes only for ZSL. Samples of other classes are ignored. Stops
    when the relative loss change over ``window`` steps drops below ``tol``.
    """
    classes = np.sort(np.asarray(classes))
    keep = np.isin(synthetic.labels, classes)
    x, y = synthetic.features[keep], synthetic.labels[keep]
    for c in classes:
        if not (y == c).any():
            raise ValueError(f"class {c} has no synthetic samples")
    clf = DownstreamClassifier(classes, x.shape[1])
    opt = Adam([clf.w, clf.b], lr=lr, beta1=0.9, beta2=0.999)
    xt = Tensor(x)
    for _ in range(max_steps):
        loss = clf.loss(xt, y)
        clf.history.append(loss.item())
        if len(clf.history) > window:
            prev = clf.history[-1 - window]
            if abs(prev - clf.history[-1]) <= tol * abs(prev):
                break
        opt.step(nc.backward(loss, [clf.w, clf.b]))
    return clf
