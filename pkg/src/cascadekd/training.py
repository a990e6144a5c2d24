"""Optimization: Adam with bias correction, trapezoidal learning-rate
schedules, gradient accumulation over micro-batches, supervised
fine-tuning of a classifier head, and zero-shot evaluation.

Pretraining uses linear warmup to the peak rate followed by linear decay
to zero; a stage may instead warm up over all of its steps. Fine-tuning
uses a constant rate. The batch loss is the example-weighted mean of
micro-batch losses, so gradients match single-pass full-batch training
whenever each example contributes equally to its micro-batch mean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, Mapping, Optional, Sequence, Tuple

import numpy as np

from .corpus import Batch
from .encoder import ClassifierHead, EncoderModel, classify
from .errors import (
    EmptyEvalSetError,
    InvalidConfigError,
    LabelOutOfRangeError,
    NonFiniteLossError,
    ShapeMismatchError,
    StepOutOfRangeError,
)
from .tensor import Tensor, backward, cross_entropy, no_grad

# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OptimizerConfig:
    """Adam hyperparameters plus batch geometry."""

    peak_lr: float
    batch_size: int = 256
    micro_batch_size: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-9
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.peak_lr < 0:
            raise InvalidConfigError("peak_lr must be >= 0")
        if not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise InvalidConfigError("betas must lie in [0, 1)")
        if self.epsilon <= 0:
            raise InvalidConfigError("epsilon must be > 0")
        if self.weight_decay < 0:
            raise InvalidConfigError("weight_decay must be >= 0")
        if self.batch_size < 1 or self.micro_batch_size < 1:
            raise InvalidConfigError("batch sizes must be >= 1")
        if self.batch_size % self.micro_batch_size != 0:
            raise InvalidConfigError(
                f"batch_size {self.batch_size} not divisible by "
                f"micro_batch_size {self.micro_batch_size}")


@dataclass(frozen=True)
class ScheduleConfig:
    """Trapezoidal schedule: linear 0 -> peak over [0, warmup], linear
    peak -> 0 over [warmup, total]. In full-warmup mode the ramp covers
    every step and there is no decay."""

    STANDARD = "standard"
    FULL_WARMUP = "full_warmup"

    total_steps: int
    warmup_steps: int
    mode: str = STANDARD

    def __post_init__(self):
        if self.mode not in (self.STANDARD, self.FULL_WARMUP):
            raise InvalidConfigError(f"unknown schedule mode {self.mode!r}")
        if self.total_steps < 1:
            raise InvalidConfigError("total_steps must be >= 1")
        if not 0 <= self.warmup_steps <= self.total_steps:
            raise InvalidConfigError(
                f"warmup_steps {self.warmup_steps} outside [0, {self.total_steps}]")
        if self.mode == self.FULL_WARMUP and self.warmup_steps != self.total_steps:
            raise InvalidConfigError("full warmup requires warmup_steps == total_steps")

    @classmethod
    def full_warmup(cls, total_steps: int) -> "ScheduleConfig":
        return cls(total_steps=total_steps, warmup_steps=total_steps,
                   mode=cls.FULL_WARMUP)


def lr_at(schedule: ScheduleConfig, peak_lr: float, step: int) -> float:
    """Learning rate at an integer step of the schedule."""
    if not 0 <= step <= schedule.total_steps:
        raise StepOutOfRangeError(
            f"step {step} outside [0, {schedule.total_steps}]")
    if schedule.mode == ScheduleConfig.FULL_WARMUP:
        return peak_lr * step / schedule.total_steps
    warmup, total = schedule.warmup_steps, schedule.total_steps
    if warmup > 0 and step <= warmup:
        return peak_lr * step / warmup
    return peak_lr * (total - step) / (total - warmup)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """First/second moment estimates keyed by parameter name."""

    step_count: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: Sequence[Tuple[str, Tensor]]) -> "AdamState":
        state = cls()
        for name, p in params:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        return state


def adam_step(params: Sequence[Tuple[str, Tensor]],
              grads: Sequence[np.ndarray],
              state: AdamState, lr: float, config: OptimizerConfig) -> None:
    """One bias-corrected Adam update, in place.

    With both betas zero this reduces to p -= lr * g / (|g| + eps).
    """
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - config.beta1 ** t
    bc2 = 1.0 - config.beta2 ** t
    for (name, p), g in zip(params, grads):
        if g.shape != p.data.shape:
            raise ShapeMismatchError(
                f"gradient shape {g.shape} != parameter {name!r} shape {p.data.shape}")
        if config.weight_decay != 0.0:
            g = g + config.weight_decay * p.data
        m = state.m[name]
        v = state.v[name]
        m *= config.beta1
        m += (1.0 - config.beta1) * g
        v *= config.beta2
        v += (1.0 - config.beta2) * (g * g)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + config.epsilon)


class Adam:
    """Stateful wrapper binding named parameters to an AdamState."""

    def __init__(self, params: Sequence[Tuple[str, Tensor]], config: OptimizerConfig):
        names = [name for name, _ in params]
        if len(set(names)) != len(names):
            raise InvalidConfigError("duplicate parameter names")
        self.params = list(params)
        self.config = config
        self.state = AdamState.for_params(self.params)

    def step(self, lr: float) -> None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data)
                 for _, p in self.params]
        adam_step(self.params, grads, self.state, lr, self.config)

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None


# ---------------------------------------------------------------------------
# gradient accumulation
# ---------------------------------------------------------------------------


def accumulate_and_step(loss_fn: Callable[[Batch], Tensor],
                        micro_batches: Iterable[Batch],
                        optimizer: Adam,
                        schedule: Optional[ScheduleConfig] = None,
                        step: int = 0,
                        lr: Optional[float] = None) -> float:
    """Accumulate gradients over micro-batches, then take one Adam step.

    Each micro-batch loss is weighted by its share of the examples, so the
    returned loss is the example-weighted batch mean. The step's rate
    comes from the schedule unless `lr` is given directly.
    """
    micros = list(micro_batches)
    if not micros:
        raise InvalidConfigError("no micro-batches to accumulate")
    if lr is None:
        if schedule is None:
            raise InvalidConfigError("need a schedule or an explicit lr")
        lr = lr_at(schedule, optimizer.config.peak_lr, step)
    total_examples = sum(len(m) for m in micros)
    optimizer.zero_grad()
    total = 0.0
    for micro in micros:
        weight = len(micro) / total_examples
        loss = loss_fn(micro)
        backward(loss * weight)
        total += loss.item() * weight
    if not math.isfinite(total):
        raise NonFiniteLossError(f"accumulated loss is {total}")
    optimizer.step(lr)
    optimizer.zero_grad()
    return total


# ---------------------------------------------------------------------------
# fine-tuning and evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FineTuneConfig:
    """Supervised fine-tuning at a constant learning rate."""

    optimizer: OptimizerConfig
    epochs: int = 3
    num_classes: int = 3
    seed: int = 0
    dropout: bool = True

    def __post_init__(self):
        if self.epochs < 0:
            raise InvalidConfigError("epochs must be >= 0")
        if self.num_classes < 2:
            raise InvalidConfigError("num_classes must be >= 2")


def _check_labels(batch: Batch, num_classes: int) -> np.ndarray:
    if batch.labels is None:
        raise InvalidConfigError("batch has no labels")
    if len(batch.labels) and not (0 <= batch.labels.min() and batch.labels.max() < num_classes):
        raise LabelOutOfRangeError(
            f"labels outside [0, {num_classes}): "
            f"[{batch.labels.min()}, {batch.labels.max()}]")
    return batch.labels


def fine_tune(model: EncoderModel, data: Batch,
              config: FineTuneConfig) -> tuple[EncoderModel, ClassifierHead]:
    """Train a fresh classifier head (and the encoder's trainable weights)
    on labeled data; epoch order is a seeded shuffle, the final partial
    batch is kept. With zero epochs the head keeps its random init."""
    _check_labels(data, config.num_classes)
    if len(data) == 0:
        raise EmptyEvalSetError("no training examples")
    rng = np.random.default_rng(config.seed)
    head = ClassifierHead(model.config.hidden_dim, config.num_classes,
                          seed=int(rng.integers(2**63)))
    params = model.trainable_parameters() + \
        [(f"head.{name}", p) for name, p in head.parameters()]
    optimizer = Adam(params, config.optimizer)
    batch_size = config.optimizer.batch_size
    for _ in range(config.epochs):
        order = rng.permutation(len(data))
        for start in range(0, len(data), batch_size):
            batch = data.take(order[start:start + batch_size])
            dropout_seed = int(rng.integers(2**63))

            def loss_fn(micro: Batch) -> Tensor:
                logits = classify(model, head, micro.token_ids, micro.attention_mask,
                                  training_mode=config.dropout, dropout_seed=dropout_seed)
                return cross_entropy(logits, micro.labels)

            micros = batch.split(config.optimizer.micro_batch_size)
            accumulate_and_step(loss_fn, micros, optimizer,
                                lr=config.optimizer.peak_lr)
    return model, head


def predict(model: EncoderModel, head: ClassifierHead, batch: Batch) -> np.ndarray:
    """Argmax class per example, dropout off, no gradient tracking."""
    with no_grad():
        logits = classify(model, head, batch.token_ids, batch.attention_mask)
    return np.argmax(logits.data, axis=1)


def accuracy(model: EncoderModel, head: ClassifierHead, batch: Batch) -> float:
    if len(batch) == 0:
        raise EmptyEvalSetError("no examples to score")
    labels = _check_labels(batch, head.num_classes)
    return float(np.mean(predict(model, head, batch) == labels))


@dataclass(frozen=True)
class EvalResult:
    """Per-language accuracy plus their unweighted mean."""

    per_language: Dict[str, float]
    average: float


def zero_shot_eval(model: EncoderModel, head: ClassifierHead,
                   eval_sets: Mapping[str, Batch]) -> EvalResult:
    """Score the classifier on each language's eval set. The average
    weights every language equally, regardless of set size."""
    if not eval_sets:
        raise EmptyEvalSetError("no eval sets given")
    per_language = {}
    for lang, batch in eval_sets.items():
        if len(batch) == 0:
            raise EmptyEvalSetError(f"eval set for {lang!r} is empty")
        per_language[lang] = accuracy(model, head, batch)
    average = sum(per_language.values()) / len(per_language)
    return EvalResult(per_language=per_language, average=average)
