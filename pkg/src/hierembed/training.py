"""Optimization loop: lazy AdamW, linear decay schedule, checkpoints, resume."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .encoder import EmbeddingModel, EncoderConfig, SparseGradient
from .exceptions import ConfigInvalid, NonFiniteGradient, NoTrainingData
from .hierarchy import HierarchyForest
from .loss import FLAT, HIERARCHICAL, LossParams, batch_loss_and_gradient
from .mining import (
    MinerConfig,
    Minibatch,
    build_anchor_groups,
    build_pair_groups,
    build_synonym_groups,
)
from .utils import fmt_float, make_rng

log = logging.getLogger(__name__)

MIXED = "mixed"
LOSS_MODES = (FLAT, HIERARCHICAL, MIXED)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 2e-3
    weight_decay: float = 0.01
    batch_size: int = 256
    epochs: int = 1
    loss_mode: str = HIERARCHICAL
    params: LossParams = field(default_factory=LossParams)
    miner: MinerConfig = field(default_factory=MinerConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    seed: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigInvalid("learning_rate must be > 0")
        if self.weight_decay < 0:
            raise ConfigInvalid("weight_decay must be >= 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigInvalid("batch_size and epochs must be >= 1")
        if self.checkpoint_every < 0:
            raise ConfigInvalid("checkpoint_every must be >= 0")
        if self.loss_mode not in LOSS_MODES:
            raise ConfigInvalid(f"loss_mode must be one of {LOSS_MODES}")

    # Flat key set shared by config files and CLI flags.
    _NESTED = {
        "alpha": ("params", "alpha"),
        "beta": ("params", "beta"),
        "lambda": ("params", "lam"),
        "margin": ("miner", "margin"),
        "per_category_counts": ("miner", "per_category_counts"),
        "miner_direction": ("miner", "direction"),
        "dim": ("encoder", "dim"),
        "n_buckets": ("encoder", "n_buckets"),
        "ngram_min": ("encoder", "ngram_min"),
        "ngram_max": ("encoder", "ngram_max"),
        "include_word_unigrams": ("encoder", "include_word_unigrams"),
        "hash_seed": ("encoder", "hash_seed"),
    }
    _TOP = ("learning_rate", "weight_decay", "batch_size", "epochs", "loss_mode", "seed",
            "checkpoint_every")

    @classmethod
    def keys(cls) -> tuple[str, ...]:
        return cls._TOP + tuple(cls._NESTED)

    @classmethod
    def from_flat(cls, data: Mapping[str, Any]) -> "TrainConfig":
        unknown = set(data) - set(cls.keys())
        if unknown:
            raise ConfigInvalid(f"unknown config keys: {sorted(unknown)}")
        top = {k: data[k] for k in cls._TOP if k in data}
        nested: dict[str, dict] = {"params": {}, "miner": {}, "encoder": {}}
        for key, (part, name) in cls._NESTED.items():
            if key in data:
                nested[part][name] = data[key]
        try:
            return cls(
                params=LossParams(**{k: float(v) for k, v in nested["params"].items()}),
                miner=MinerConfig(**nested["miner"]),
                encoder=EncoderConfig(**nested["encoder"]),
                **top,
            )
        except TypeError as exc:
            raise ConfigInvalid(str(exc)) from None

    def to_flat(self) -> dict[str, Any]:
        out = {k: getattr(self, k) for k in self._TOP}
        for key, (part, name) in self._NESTED.items():
            out[key] = getattr(getattr(self, part), name)
        out["per_category_counts"] = {str(k): v for k, v in out["per_category_counts"].items()}
        return out


def lr_at(config: TrainConfig, step: int, total_steps: int) -> float:
    """Linearly decayed learning rate, no warmup."""
    if total_steps < 1 or not 0 <= step <= total_steps:
        raise ValueError("need 0 <= step <= total_steps and total_steps >= 1")
    return config.learning_rate * (1.0 - step / total_steps)


@dataclass
class OptimizerState:
    """AdamW moments, stored densely but only ever touched row by row."""

    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros(cls, config: EncoderConfig) -> "OptimizerState":
        shape = (config.n_buckets, config.dim)
        return cls(np.zeros(shape), np.zeros(shape))

    def save(self, path: str | Path, **extra) -> None:
        touched = np.flatnonzero(np.any(self.first_moment != 0, axis=1)
                                 | np.any(self.second_moment != 0, axis=1))
        with open(path, "wb") as fh:
            np.savez(fh, touched=touched, m=self.first_moment[touched], v=self.second_moment[touched],
                     step_count=self.step_count, shape=np.asarray(self.first_moment.shape),
                     hyper=np.asarray([self.beta1, self.beta2, self.epsilon]), **extra)

    @classmethod
    def load(cls, path: str | Path) -> "OptimizerState":
        with np.load(path) as data:
            shape = tuple(int(x) for x in data["shape"])
            m, v = np.zeros(shape), np.zeros(shape)
            m[data["touched"]] = data["m"]
            v[data["touched"]] = data["v"]
            b1, b2, eps = (float(x) for x in data["hyper"])
            return cls(m, v, int(data["step_count"]), b1, b2, eps)


def apply_update(model: EmbeddingModel, state: OptimizerState, gradient: SparseGradient,
                 lr: float, weight_decay: float) -> None:
    """One decoupled-weight-decay Adam step on the buckets present in ``gradient``.

    Buckets absent from the gradient are neither moved nor decayed.
    """
    g = gradient.values
    if not np.all(np.isfinite(g)):
        raise NonFiniteGradient("gradient has non-finite entries")
    b = gradient.buckets
    if len(b) and (b.min() < 0 or b.max() >= model.config.n_buckets):
        raise ValueError("gradient bucket out of range")
    state.step_count += 1
    t = state.step_count
    m = state.beta1 * state.first_moment[b] + (1.0 - state.beta1) * g
    v = state.beta2 * state.second_moment[b] + (1.0 - state.beta2) * g * g
    state.first_moment[b] = m
    state.second_moment[b] = v
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    w = model.weights[b].astype(np.float64)
    w_new = w - lr * m_hat / (np.sqrt(v_hat) + state.epsilon) - lr * weight_decay * w
    model.weights[b] = w_new.astype(model.weights.dtype)


# ---------------------------------------------------------------------------
# Training loop


@dataclass
class TrainingLog:
    rows: list[tuple[int, float, float]] = field(default_factory=list)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "lr", "loss"])
            for step, lr, loss in self.rows:
                w.writerow([step, fmt_float(lr), fmt_float(loss)])

    @property
    def losses(self) -> np.ndarray:
        return np.asarray([r[2] for r in self.rows])


@dataclass
class TrainResult:
    model: EmbeddingModel
    log: TrainingLog
    checkpoints: list[Path]
    total_steps: int


@dataclass(frozen=True)
class _Stream:
    """One source of minibatches: hierarchy anchors or flat pairs."""

    kind: str  # "anchors" or "pairs"
    items: tuple
    batch_size: int

    @property
    def n_batches(self) -> int:
        return math.ceil(len(self.items) / self.batch_size)

    def batch(self, seed: int, epoch: int, index: int) -> list:
        order = make_rng(seed, "shuffle", self.kind, epoch).permutation(len(self.items))
        chunk = order[index * self.batch_size:(index + 1) * self.batch_size]
        return [self.items[int(i)] for i in chunk]


def _schedule(streams: list[_Stream]) -> list[tuple[int, int]]:
    """Round-robin ``(stream, batch index)`` order for one epoch."""
    out: list[tuple[int, int]] = []
    longest = max(s.n_batches for s in streams)
    for i in range(longest):
        for si, s in enumerate(streams):
            if i < s.n_batches:
                out.append((si, i))
    return out


def _anchor_items(forests: Sequence[HierarchyForest]) -> tuple:
    return tuple((fi, code) for fi, f in enumerate(forests) for code in f.sorted_codes)


class Trainer:
    """Runs :class:`TrainConfig` over forests and flat positive-pair lists."""

    def __init__(self, config: TrainConfig, forests: Sequence[HierarchyForest] = (),
                 pairs: Sequence[tuple[str, str]] = ()):
        self.config = config
        self.forests = list(forests)
        self.pairs = [tuple(p) for p in pairs]
        self.streams = self._streams()
        if not self.streams:
            raise NoTrainingData("no forest anchors or flat pairs to train on")
        self.plan = _schedule(self.streams)
        self.total_steps = config.epochs * len(self.plan)

    def _streams(self) -> list[_Stream]:
        cfg = self.config
        anchors = _anchor_items(self.forests)
        out = []
        if cfg.loss_mode in (HIERARCHICAL, MIXED) and anchors:
            out.append(_Stream("anchors", anchors, cfg.batch_size))
        if cfg.loss_mode == FLAT and anchors:
            out.append(_Stream("synonyms", anchors, cfg.batch_size))
        if cfg.loss_mode in (FLAT, MIXED) and self.pairs:
            out.append(_Stream("pairs", tuple(self.pairs), cfg.batch_size))
        if cfg.loss_mode == MIXED and anchors and not self.pairs:
            out.append(_Stream("synonyms", anchors, cfg.batch_size))
        return out

    def step_batch(self, model: EmbeddingModel, step: int) -> tuple[Minibatch, str]:
        """Minibatch and loss mode for global ``step`` (0-based)."""
        cfg = self.config
        epoch, pos = divmod(step, len(self.plan))
        si, bi = self.plan[pos]
        stream = self.streams[si]
        items = stream.batch(cfg.seed, epoch, bi)
        miner = replace(cfg.miner, seed=int(make_rng(cfg.seed, "miner", step).integers(2 ** 63)))
        if stream.kind == "pairs":
            return build_pair_groups(model, items, miner, key=step), FLAT
        groups = []
        for fi, forest in enumerate(self.forests):
            codes = [c for f, c in items if f == fi]
            if not codes:
                continue
            if stream.kind == "anchors":
                groups += build_anchor_groups(forest, codes, miner).groups
            else:
                groups += build_synonym_groups(model, forest, codes, miner).groups
        return Minibatch(groups), HIERARCHICAL if stream.kind == "anchors" else FLAT

    def run(self, out: str | Path | None = None, *, model: EmbeddingModel | None = None,
            state: OptimizerState | None = None, start_step: int = 0) -> TrainResult:
        cfg = self.config
        if model is None:
            model = EmbeddingModel.initialize(cfg.encoder, cfg.seed)
        if state is None:
            state = OptimizerState.zeros(cfg.encoder)
        train_log = TrainingLog()
        checkpoints: list[Path] = []
        for step in range(start_step, self.total_steps):
            batch, mode = self.step_batch(model, step)
            loss, grad = batch_loss_and_gradient(model, batch, cfg.params, mode)
            lr = lr_at(cfg, step, self.total_steps)
            apply_update(model, state, grad, lr, cfg.weight_decay)
            if not math.isfinite(loss):
                raise NonFiniteGradient(f"non-finite loss at step {step + 1}")
            train_log.rows.append((step + 1, lr, loss))
            log.debug("step %d lr %.3g loss %.6f", step + 1, lr, loss)
            if out is not None and cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
                checkpoints.append(save_checkpoint(model, state, checkpoint_path(out, step + 1)))
        if out is not None:
            model.save(out)
        return TrainResult(model, train_log, checkpoints, self.total_steps)

    def resume(self, checkpoint: str | Path, out: str | Path | None = None) -> TrainResult:
        model, state = load_checkpoint(checkpoint)
        if model.config != self.config.encoder:
            raise ConfigInvalid("checkpoint encoder config differs from the training config")
        return self.run(out, model=model, state=state, start_step=state.step_count)


def checkpoint_path(out: str | Path, step: int) -> Path:
    out = Path(out)
    return out.with_name(f"{out.stem}.step{step:06d}{out.suffix or '.hprb'}")


def _state_path(model_path: Path) -> Path:
    return model_path.with_name(model_path.name + ".opt.npz")


def save_checkpoint(model: EmbeddingModel, state: OptimizerState, path: str | Path) -> Path:
    """Write the model file plus an ``.opt.npz`` optimizer sidecar."""
    path = Path(path)
    if not (np.all(np.isfinite(model.weights)) and np.all(np.isfinite(state.first_moment))
            and np.all(np.isfinite(state.second_moment))):
        raise NonFiniteGradient("non-finite weights or moments at checkpoint")
    model.save(path)
    state.save(_state_path(path))
    return path


def load_checkpoint(path: str | Path) -> tuple[EmbeddingModel, OptimizerState]:
    path = Path(path)
    return EmbeddingModel.load(path), OptimizerState.load(_state_path(path))


def train(forests: Sequence[HierarchyForest] | HierarchyForest = (),
          pairs: Sequence[tuple[str, str]] = (), config: TrainConfig = TrainConfig(),
          out: str | Path | None = None, log_path: str | Path | None = None) -> TrainResult:
    """Train a fresh model; optionally write ``out`` (plus checkpoints) and the CSV log."""
    if isinstance(forests, HierarchyForest):
        forests = [forests]
    result = Trainer(config, forests, pairs).run(out)
    if log_path is not None:
        result.log.write_csv(log_path)
    return result
