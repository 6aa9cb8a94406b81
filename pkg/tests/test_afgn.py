import numpy as np
import pytest

from agzsl import numcore as nc
from agzsl.afgn import (
    AfgnConfig,
    AfgnModel,
    FrozenClassifier,
    SyntheticSet,
    critic,
    critic_objective,
    fit_downstream,
    generate,
    generator_objective,
    gradient_penalty,
    synthesize_features,
)
from agzsl.agan import AganConfig, AganModel, mutual_loss
from agzsl.numcore import Rng, grad_check


def small_afgn(seed=0, m=4, A=5, **cfg):
    return AfgnModel(AfgnConfig(z=3, generator_hidden=6, **cfg), embed_dim=m, num_attributes=A, rng=Rng(seed))


def set_critic(model, w_x, w_a=None, b=0.0):
    A = model.num_attributes
    w_a = np.zeros(A) if w_a is None else w_a
    model["critic.w"].assign(np.concatenate([w_x, w_a])[:, None])
    model["critic.b"].assign(np.array([b]))


def sampled_penalty(model, fs, x_tilde, a, lam, rng):
    """Penalty from finite-difference critic gradients at random interpolates."""
    eta = rng.uniform(size=(fs.shape[0], 1))
    x_hat = eta * fs + (1 - eta) * x_tilde
    h = 1e-6
    total = 0.0
    for i in range(fs.shape[0]):
        g = np.zeros(fs.shape[1])
        for k in range(fs.shape[1]):
            e = np.zeros(fs.shape[1])
            e[k] = h
            up = critic(model, (x_hat[i] + e)[None], a[i][None]).item()
            dn = critic(model, (x_hat[i] - e)[None], a[i][None]).item()
            g[k] = (up - dn) / (2 * h)
        total += lam * (np.linalg.norm(g) - 1) ** 2
    return total / fs.shape[0]


class TestGradientPenalty:
    def test_unit_norm_critic(self):
        model = small_afgn()
        set_critic(model, np.array([0.6, 0.8, 0.0, 0.0]), np.ones(5))
        fs, xt = np.ones((3, 4)), np.zeros((3, 4))
        assert gradient_penalty(model, fs, xt, np.ones((3, 5))).item() == pytest.approx(0.0, abs=1e-15)

    def test_zero_critic(self):
        model = small_afgn()
        set_critic(model, np.zeros(4))
        fs, xt = np.ones((3, 4)), np.zeros((3, 4))
        assert gradient_penalty(model, fs, xt, np.ones((3, 5)), lambda_gp=10.0).item() == 10.0

    def test_matches_sampled_finite_difference_penalty(self):
        rng = np.random.default_rng(0)
        for seed in range(5):
            model = small_afgn(seed)
            fs, xt, a = rng.normal(size=(4, 4)), rng.normal(size=(4, 4)), rng.uniform(size=(4, 5))
            got = gradient_penalty(model, fs, xt, a, Rng(seed), lambda_gp=10.0).item()
            ref = sampled_penalty(model, fs, xt, a, 10.0, rng)
            assert got == pytest.approx(ref, rel=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(nc.ShapeError):
            gradient_penalty(small_afgn(), np.ones((2, 4)), np.ones((3, 4)), np.ones((2, 5)))


class TestGenerator:
    def test_output_shape_and_noise_dependence(self):
        model = small_afgn()
        a = np.random.default_rng(0).uniform(size=(6, 5))
        x1 = generate(model, a, Rng(1)).value
        x2 = generate(model, a, Rng(2)).value
        assert x1.shape == (6, 4)
        assert not np.allclose(x1, x2)

    def test_frozen_noise_is_deterministic(self):
        model = small_afgn()
        a, eps = np.ones((2, 5)), np.random.default_rng(0).normal(size=(2, 3))
        assert generate(model, a, noise=eps).value.tobytes() == generate(model, a, noise=eps).value.tobytes()


class TestObjectives:
    def setup_method(self):
        self.model = small_afgn(seed=3)
        rng = np.random.default_rng(4)
        self.fs = rng.normal(size=(5, 4))
        self.a = rng.uniform(size=(5, 5))
        self.labels = rng.integers(1, 4, 5)
        self.eps = rng.normal(size=(5, 3))
        agan = AganModel(AganConfig(m=4, classifier_hidden=6), num_regions=2, feature_dim=3, attr_dim=2,
                         num_attributes=5, num_source=3, num_target=2, rng=Rng(5))
        self.classifier = FrozenClassifier(agan)

    def test_critic_gradient(self):
        def objective():
            return critic_objective(self.model, self.fs, self.a, noise=self.eps)[0]

        assert grad_check(objective, self.model.parameters("critic.")) <= 1e-6

    def test_generator_gradient(self):
        def objective():
            return generator_objective(self.model, self.fs, self.a, self.labels, self.classifier,
                                       noise=self.eps)[0]

        assert grad_check(objective, self.model.parameters("generator.")) <= 1e-6

    def test_critic_objective_value(self):
        loss, wdist, gp = critic_objective(self.model, self.fs, self.a, noise=self.eps)
        x_tilde = generate(self.model, self.a, noise=self.eps).value
        w = self.model["critic.w"].value[:, 0]
        d = lambda x: np.c_[x, self.a] @ w + self.model["critic.b"].value[0]
        assert wdist.item() == pytest.approx(np.mean(d(self.fs)) - np.mean(d(x_tilde)), abs=1e-12)
        assert loss.item() == pytest.approx(gp.item() - wdist.item(), abs=1e-12)

    def test_generator_terms_match_shared_mutual_loss(self):
        _, _, m2 = generator_objective(self.model, self.fs, self.a, self.labels, self.classifier,
                                       noise=self.eps)
        x_tilde = generate(self.model, self.a, noise=self.eps).value
        assert m2.item() == mutual_loss(self.fs, x_tilde).item()
        assert m2.item() == pytest.approx(0.5 * np.mean(np.sum((x_tilde - self.fs) ** 2, axis=1)), rel=1e-12)

    def test_zero_weights_reduce_to_adversarial_term(self):
        loss, _, _ = generator_objective(self.model, self.fs, self.a, self.labels, self.classifier,
                                         noise=self.eps, lambda_cls=0.0, lambda_m2=0.0)
        x_tilde = generate(self.model, self.a, noise=self.eps)
        assert loss.item() == pytest.approx(-nc.mean(critic(self.model, x_tilde, self.a)).item(), abs=1e-14)

    def test_critic_step_leaves_generator_untouched(self):
        params = self.model.parameters("generator.")
        loss, _, _ = critic_objective(self.model, self.fs, self.a, noise=self.eps)
        for g in nc.backward(loss, params):
            assert not g.any()

    def test_classifier_weights_are_constants(self):
        assert all(not isinstance(w, nc.Parameter) for w in self.classifier.weights.values())


class TestSynthesis:
    def test_counts_and_labels(self):
        model = small_afgn()
        syn = synthesize_features(model, np.eye(5)[:3], 7, Rng(0), labels=np.array([4, 5, 6]))
        assert syn.features.shape == (21, 4)
        assert np.bincount(syn.labels).tolist() == [0, 0, 0, 0, 7, 7, 7]

    def test_class_output_independent_of_other_requests(self):
        model = small_afgn()
        a = np.random.default_rng(0).uniform(size=(4, 5))
        full = synthesize_features(model, a, 5, Rng(9), labels=np.arange(1, 5))
        part = synthesize_features(model, a[2:], 5, Rng(9), labels=np.arange(3, 5))
        np.testing.assert_array_equal(full.features[full.labels == 3], part.features[part.labels == 3])


class TestDownstream:
    def test_separable_clusters(self):
        rng = np.random.default_rng(0)
        centers = np.array([[3.0, 0.0], [-3.0, 0.0], [0.0, 3.0]])
        labels = np.repeat([2, 5, 7], 30)
        x = centers[np.repeat(np.arange(3), 30)] + 0.3 * rng.normal(size=(90, 2))
        clf = fit_downstream(SyntheticSet(x, labels), np.array([2, 5, 7]), lr=0.05, max_steps=500)
        assert np.mean(clf.predict(x) == labels) == 1.0
        assert clf.history[-1] < clf.history[0]

    def test_subset_of_classes(self):
        x = np.array([[1.0], [-1.0], [5.0]])
        clf = fit_downstream(SyntheticSet(x, np.array([1, 2, 3])), np.array([1, 2]), max_steps=50)
        assert clf.w.shape == (1, 2)

    def test_missing_class(self):
        with pytest.raises(ValueError):
            fit_downstream(SyntheticSet(np.ones((2, 1)), np.array([1, 1])), np.array([1, 2]))

    def test_plateau_stops_early(self):
        # overlapping classes have a finite loss minimum, so the loss flattens out
        x = np.random.default_rng(1).normal(size=(40, 2))
        labels = np.repeat([1, 2], 20)
        clf = fit_downstream(SyntheticSet(x, labels), np.array([1, 2]), lr=0.05, max_steps=5000)
        assert len(clf.history) < 5000


class TestConfig:
    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            AfgnConfig(lambda_gp=-1.0)
