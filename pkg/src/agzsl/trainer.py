"""Alternating optimisation of the embedding network and the feature generator.

One step: update the embedding network on a source batch (generated features
held constant), then ``n_critic`` critic updates and one generator update
(embeddings held constant). Every random draw comes from a substream keyed
by the global step, so a run is a pure function of (config, data, steps) and
resuming from a checkpoint reproduces an uninterrupted run bit for bit.
"""

from __future__ import annotations

import hashlib
import itertools
import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from . import numcore as nc
from . import pmi
from .afgn import AfgnConfig, AfgnModel, FrozenClassifier, critic_objective, generate, generator_objective
from .agan import AganConfig, AganModel, agan_losses, forward
from .datamodel import AttributeSemantics, ClassSemantics, FeatureBundle, Split, validate
from .datamodel.bundle import read_arrays, write_arrays
from .numcore import Adam, Rng

log = logging.getLogger(__name__)

STREAM_INIT_AGAN = 10
STREAM_INIT_AFGN = 11
STREAM_EPOCH = 20
STREAM_STEP = 21
STREAM_SYNTH = 30

CHECKPOINT_VERSION = 1

ABLATION_FLAGS = ("disable_L_u", "one_step_attention_only", "disable_L_cls",
                  "disable_L_m1", "disable_L_m2")


class DataError(ValueError):
    """Training data violates the data contract."""


class CheckpointError(ValueError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 32
    epochs: int = 300
    seed: int = 0
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    disable_L_u: bool = False
    one_step_attention_only: bool = False
    disable_L_cls: bool = False
    disable_L_m1: bool = False
    disable_L_m2: bool = False
    agan: AganConfig = field(default_factory=AganConfig)
    afgn: AfgnConfig = field(default_factory=AfgnConfig)

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")

    # flat key = value text, one field per line
    def to_flat(self) -> dict[str, object]:
        out = {f.name: getattr(self, f.name) for f in fields(self) if f.name not in ("agan", "afgn")}
        out.update(asdict(self.agan))
        out.update(asdict(self.afgn))
        return out

    def to_text(self) -> str:
        return "".join(f"{k} = {_fmt(v)}\n" for k, v in self.to_flat().items())

    @classmethod
    def from_flat(cls, values: dict[str, object]) -> "TrainConfig":
        own = {f.name: f for f in fields(cls) if f.name not in ("agan", "afgn")}
        agan_f = {f.name: f for f in fields(AganConfig)}
        afgn_f = {f.name: f for f in fields(AfgnConfig)}
        top, ag, af = {}, {}, {}
        for key, raw in values.items():
            if key in own:
                top[key] = _parse(raw, own[key].type)
            elif key in agan_f:
                ag[key] = _parse(raw, agan_f[key].type)
            elif key in afgn_f:
                af[key] = _parse(raw, afgn_f[key].type)
            else:
                raise KeyError(f"unknown config key {key!r}")
        return cls(agan=AganConfig(**ag), afgn=AfgnConfig(**af), **top)

    @classmethod
    def from_text(cls, text: str) -> "TrainConfig":
        values = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config line {lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            values[key] = value
        return cls.from_flat(values)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "TrainConfig":
        return cls.from_text(Path(path).read_text())

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text(self.to_text())

    def config_hash(self) -> str:
        """Hash of everything that shapes the trajectory (run length excluded)."""
        flat = self.to_flat()
        flat.pop("epochs")
        text = "".join(f"{k}={_fmt(v)};" for k, v in sorted(flat.items()))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def replace(self, **changes) -> "TrainConfig":
        flat = self.to_flat()
        flat.update(changes)
        return TrainConfig.from_flat({k: _fmt(v) for k, v in flat.items()})


def _fmt(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(raw, annotation: str):
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    ann = str(annotation)
    if text.lower() == "none" and "None" in ann:
        return None
    if ann.startswith("bool"):
        if text.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"not a boolean: {raw!r}")
        return text.lower() in ("true", "1", "yes")
    if ann.startswith("int"):
        return int(text)
    if ann.startswith("float"):
        return float(text)
    return text


@dataclass
class LossRecord:
    ce: float
    u: float
    m1: float
    kl: float
    kl_term: float
    agan_total: float
    critic_loss: float
    wasserstein: float
    gp: float
    gen_loss: float
    cls: float
    m2: float

    def values(self) -> list[float]:
        return [getattr(self, f.name) for f in fields(self)]


class Trainer:
    """Owns both networks, their optimisers and the step counter."""

    def __init__(self, config: TrainConfig, bundle: FeatureBundle, class_sem: ClassSemantics,
                 attr_sem: AttributeSemantics):
        report = validate(bundle, class_sem, attr_sem)
        if not report.ok:
            raise DataError("; ".join(report.violations))
        self.config = config
        self.bundle = bundle
        self.class_sem = class_sem
        self.attr_sem = attr_sem
        self.class_vectors = class_sem.all()
        self.train_idx = bundle.indices(Split.TRAIN_SOURCE)
        if self.train_idx.size == 0:
            raise DataError("no train-source samples")

        seed = config.seed
        self.agan = AganModel(config.agan, num_regions=bundle.num_regions,
                              feature_dim=bundle.feature_dim, attr_dim=attr_sem.vectors.shape[1],
                              num_attributes=class_sem.num_attributes,
                              num_source=class_sem.num_source, num_target=class_sem.num_target,
                              rng=Rng(seed, STREAM_INIT_AGAN))
        self.afgn = AfgnModel(config.afgn, embed_dim=config.agan.m,
                              num_attributes=class_sem.num_attributes,
                              rng=Rng(seed, STREAM_INIT_AFGN))
        adam = dict(lr=config.lr, beta1=config.beta1, beta2=config.beta2)
        self.agan_opt = Adam(self.agan.parameters(), **adam)
        self.critic_opt = Adam(self.afgn.parameters("critic."), **adam)
        self.gen_opt = Adam(self.afgn.parameters("generator."), **adam)
        self.step = 0
        self.history: list[dict[str, float]] = []
        self._soft: np.ndarray | None = None
        self._epoch_cache: tuple[int, np.ndarray] | None = None

    # ------------------------------------------------------------ data

    @property
    def soft_targets(self) -> np.ndarray:
        if self._soft is None:
            self._soft = pmi.compute_soft_targets(self.class_sem)[1].targets
        return self._soft

    @property
    def steps_per_epoch(self) -> int:
        return math.ceil(self.train_idx.size / self.config.batch_size)

    def epoch_order(self, epoch: int) -> np.ndarray:
        """Class-balanced order: per-class shuffles interleaved round-robin."""
        if self._epoch_cache is not None and self._epoch_cache[0] == epoch:
            return self._epoch_cache[1]
        rng = Rng(self.config.seed, (STREAM_EPOCH, epoch))
        labels = self.bundle.labels[self.train_idx]
        queues = []
        for c in np.unique(labels):
            members = self.train_idx[labels == c]
            queues.append(list(members[rng.permutation(members.size)]))
        order = []
        while any(queues):
            for q in queues:
                if q:
                    order.append(q.pop(0))
        order = np.asarray(order)
        self._epoch_cache = (epoch, order)
        return order

    def batch_indices(self, step: int) -> np.ndarray:
        spe, ns = self.steps_per_epoch, self.config.batch_size
        order = self.epoch_order(step // spe)
        pos = step % spe
        return order[pos * ns:(pos + 1) * ns]

    # ------------------------------------------------------------ optimisation

    def train_step(self, features: np.ndarray, labels: np.ndarray) -> LossRecord:
        """One alternating update on an explicit source batch."""
        labels = np.asarray(labels)
        if (labels < 1).any() or (labels > self.class_sem.num_source).any():
            raise DataError("training batch contains a non-source label")
        cfg = self.config
        rng = Rng(cfg.seed, (STREAM_STEP, self.step))
        a = self.class_vectors[labels - 1]
        num_source = self.class_sem.num_source

        # embedding network; generated features are constants here
        x_tilde = None
        if not cfg.disable_L_m1:
            with nc.no_grad():
                x_tilde = generate(self.afgn, a, rng).value
        soft = None if cfg.disable_L_u else self.soft_targets
        trace = forward(self.agan, features, a, self.attr_sem.vectors, rng=rng, train_mode=True,
                        one_step=cfg.one_step_attention_only)
        losses = agan_losses(trace, labels, soft, x_tilde, cfg.agan, num_source)
        self.agan_opt.step(nc.backward(losses.total, self.agan_opt.params))
        fs = trace.fs.value

        # critic, then generator; embeddings are constants here
        for _ in range(cfg.afgn.n_critic):
            c_loss, wdist, gp = critic_objective(self.afgn, fs, a, rng)
            self.critic_opt.step(nc.backward(c_loss, self.critic_opt.params))
        g_loss, cls, m2 = generator_objective(
            self.afgn, fs, a, labels, FrozenClassifier(self.agan), rng,
            lambda_cls=0.0 if cfg.disable_L_cls else None,
            lambda_m2=0.0 if cfg.disable_L_m2 else None)
        self.gen_opt.step(nc.backward(g_loss, self.gen_opt.params))

        self.step += 1
        return LossRecord(
            ce=losses.ce.item(), u=losses.u.item(), m1=losses.m1.item(), kl=trace.kl.item(),
            kl_term=losses.kl_term.item(), agan_total=losses.total.item(),
            critic_loss=c_loss.item(), wasserstein=wdist.item(), gp=gp.item(),
            gen_loss=g_loss.item(), cls=cls.item(), m2=m2.item())

    def next_step(self) -> LossRecord:
        idx = self.batch_indices(self.step)
        return self.train_step(self.bundle.features[idx], self.bundle.labels[idx])

    def run_steps(self, n: int) -> list[LossRecord]:
        return [self.next_step() for _ in range(n)]

    def fit(self, epochs: int | None = None,
            callback: Callable[["Trainer", int], dict | None] | None = None) -> list[dict[str, float]]:
        """Train whole epochs; appends one averaged loss row per epoch to ``history``.

        ``callback(trainer, epoch)`` may return extra metrics to merge into the row.
        """
        epochs = self.config.epochs if epochs is None else epochs
        spe = self.steps_per_epoch
        for _ in range(epochs):
            epoch = self.step // spe
            records = self.run_steps(spe - self.step % spe)
            row = {"epoch": float(epoch)}
            for f in fields(LossRecord):
                row[f.name] = float(np.mean([getattr(r, f.name) for r in records]))
            if not all(np.isfinite(v) for v in row.values()):
                raise nc.NumericalError(f"non-finite loss in epoch {epoch}")
            if callback is not None:
                row.update(callback(self, epoch) or {})
            self.history.append(row)
            log.debug("epoch %d: %s", epoch, row)
        return self.history

    # ------------------------------------------------------------ checkpoints

    def _dims(self) -> dict[str, int]:
        return dict(num_regions=self.bundle.num_regions, feature_dim=self.bundle.feature_dim,
                    attr_dim=int(self.attr_sem.vectors.shape[1]),
                    num_attributes=self.class_sem.num_attributes,
                    num_source=self.class_sem.num_source, num_target=self.class_sem.num_target)

    def save_checkpoint(self, path: str | os.PathLike) -> Path:
        arrays = {}
        arrays.update({k: p.value for k, p in self.agan.params.items()})
        arrays.update({k: p.value for k, p in self.afgn.params.items()})
        arrays.update(self.agan_opt.state_arrays("opt.agan"))
        arrays.update(self.critic_opt.state_arrays("opt.critic"))
        arrays.update(self.gen_opt.state_arrays("opt.generator"))
        meta = dict(kind="checkpoint", checkpoint_version=CHECKPOINT_VERSION,
                    config_hash=self.config.config_hash(), config=self.config.to_text(),
                    step=self.step, seed=self.config.seed, dims=self._dims(),
                    opt_steps=[self.agan_opt.t, self.critic_opt.t, self.gen_opt.t],
                    history=self.history)
        return write_arrays(path, arrays, meta, precision="f64")

    def load_checkpoint(self, path: str | os.PathLike) -> None:
        arrays, meta = read_arrays(path)
        if meta.get("kind") != "checkpoint" or meta.get("checkpoint_version") != CHECKPOINT_VERSION:
            raise CheckpointError("not a compatible checkpoint")
        if meta.get("config_hash") != self.config.config_hash():
            raise CheckpointError("checkpoint was written under a different configuration")
        if meta.get("dims") != self._dims():
            raise CheckpointError(f"checkpoint dimensions {meta.get('dims')} do not match data {self._dims()}")
        for params in (self.agan.params, self.afgn.params):
            for k, p in params.items():
                if k not in arrays:
                    raise CheckpointError(f"checkpoint lacks parameter {k}")
                p.assign(arrays[k])
        t_agan, t_critic, t_gen = meta["opt_steps"]
        self.agan_opt.load_state_arrays("opt.agan", arrays, t_agan)
        self.critic_opt.load_state_arrays("opt.critic", arrays, t_critic)
        self.gen_opt.load_state_arrays("opt.generator", arrays, t_gen)
        self.step = int(meta["step"])
        self.history = list(meta.get("history", []))
        self._epoch_cache = None

    @classmethod
    def from_checkpoint(cls, path: str | os.PathLike, bundle: FeatureBundle,
                        class_sem: ClassSemantics, attr_sem: AttributeSemantics) -> "Trainer":
        _, meta = read_arrays(path)
        if "config" not in meta:
            raise CheckpointError("checkpoint has no embedded configuration")
        trainer = cls(TrainConfig.from_text(meta["config"]), bundle, class_sem, attr_sem)
        trainer.load_checkpoint(path)
        return trainer


def fit(config: TrainConfig, bundle: FeatureBundle, class_sem: ClassSemantics,
        attr_sem: AttributeSemantics, callback=None) -> Trainer:
    trainer = Trainer(config, bundle, class_sem, attr_sem)
    trainer.fit(callback=callback)
    return trainer


def parameter_digest(params) -> str:
    h = hashlib.sha256()
    for p in params:
        h.update(p.name.encode())
        h.update(np.ascontiguousarray(p.value).tobytes())
    return h.hexdigest()


DEFAULT_SWEEP = {"gamma": [0.01, 0.05], "lambda_p": [0.1, 0.2, 0.3, 0.4]}


def sweep(base: TrainConfig, grid: dict[str, list], bundle: FeatureBundle, class_sem: ClassSemantics,
          attr_sem: AttributeSemantics, score=None) -> list[tuple[dict[str, object], float]]:
    """Train one run per point of the grid's Cartesian product and score it.

    ``score(trainer)`` defaults to the AGAN-GZSL harmonic mean on the test
    splits. Results come back in grid order; pick the best with ``max``.
    """
    if score is None:
        from .evaluation import evaluate

        def score(trainer):
            return evaluate(trainer, "AGAN-GZSL").H

    keys = list(grid)
    results = []
    for values in itertools.product(*(grid[k] for k in keys)):
        overrides = dict(zip(keys, values))
        trainer = fit(base.replace(**overrides), bundle, class_sem, attr_sem)
        results.append((overrides, float(score(trainer))))
    return results
