"""Training and evaluation protocol for the recall models.

Data is generated online: batch ``k`` of a job is drawn from the named stream
``("train", n, T, k)`` and evaluation instances from ``("eval", n, T, i)``, so
the two never share a stream. Parameters are float32 during training.
"""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter
from .models import ModelConfig, init_params, model_forward
from .rng import DEFAULT_SEED, stream
from .task import TaskConfig, batch, batch_arrays

PROFILES = ("full", "fast")
EVAL_INSTANCES = {"full": 200, "fast": 100}
TOTAL_STEPS = {"full": 8000, "fast": 2000}


class TrainConfigError(ValueError):
    pass


class TrainingError(RuntimeError):
    """Raised on non-finite gradients or loss; carries the step and the curve so far."""

    def __init__(self, message: str, step: int, losses: list[float] | None = None):
        super().__init__(f"{message} (step {step})")
        self.step = step
        self.losses = losses or []


@dataclass(frozen=True)
class TrainConfig:
    lr_peak: float = 3e-4
    weight_decay: float = 0.01
    clip_norm: float = 1.0
    warmup_steps: int = 200
    total_steps: int = 8000
    batch_size: int = 64
    final_lr_fraction: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = DEFAULT_SEED
    profile: str = "full"

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise TrainConfigError(f"profile must be one of {PROFILES}, got {self.profile!r}")
        if self.total_steps < 0 or self.warmup_steps < 0:
            raise TrainConfigError("step counts must be non-negative")
        if self.total_steps and self.warmup_steps >= self.total_steps:
            raise TrainConfigError(f"warmup_steps={self.warmup_steps} must be below total_steps={self.total_steps}")
        if not 0 < self.final_lr_fraction <= 1:
            raise TrainConfigError("final_lr_fraction must lie in (0, 1]")
        if self.batch_size < 1:
            raise TrainConfigError("batch_size must be positive")

    @classmethod
    def for_profile(cls, profile: str, **kw) -> "TrainConfig":
        if profile not in PROFILES:
            raise TrainConfigError(f"profile must be one of {PROFILES}, got {profile!r}")
        kw.setdefault("total_steps", TOTAL_STEPS[profile])
        return cls(profile=profile, **kw)

    @property
    def eval_instances(self) -> int:
        return EVAL_INSTANCES[self.profile]

    def to_dict(self) -> dict:
        return asdict(self)


def lr_at(step: int, config: TrainConfig) -> float:
    """Linear warmup from 0, then cosine decay to ``final_lr_fraction * lr_peak`` at ``total_steps``."""
    peak, W, total = config.lr_peak, config.warmup_steps, config.total_steps
    if step < 0 or step > total:
        raise ValueError(f"step {step} outside [0, {total}]")
    if step < W:
        return peak * step / W
    floor = config.final_lr_fraction * peak
    span = total - W
    frac = 1.0 if span == 0 else (step - W) / span
    return floor + (peak - floor) * 0.5 * (1.0 + math.cos(math.pi * frac))


@dataclass
class AdamWState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))


def clip_gradients(grads: Mapping[str, np.ndarray], clip_norm: float) -> tuple[dict[str, np.ndarray], float]:
    """Scale so the global norm is at most ``clip_norm``; returns (grads, pre-clip norm)."""
    norm = global_norm(grads)
    if norm > clip_norm:
        s = clip_norm / norm
        return {k: g * np.asarray(s, dtype=g.dtype) for k, g in grads.items()}, norm
    return dict(grads), norm


def adamw_update(
    params: dict[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    step: int,
    config: TrainConfig,
    state: AdamWState | None = None,
    lr: float | None = None,
) -> tuple[dict[str, np.ndarray], AdamWState]:
    """One clipped AdamW step. ``step`` is 1-based; ``lr`` defaults to ``lr_at(step)``.

    Decoupled decay: ``p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)``.
    Returns new parameter arrays; the inputs are not modified.
    """
    if state is None:
        state = AdamWState()
    missing = [k for k in params if k not in grads]
    if missing:
        raise KeyError(f"no gradient for parameters {missing}")
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in {k}", step)
    grads, _ = clip_gradients({k: grads[k] for k in params}, config.clip_norm)
    lr = lr_at(step, config) if lr is None else lr
    b1, b2 = config.beta1, config.beta2
    state.t += 1
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    out = {}
    for k, p in params.items():
        g = grads[k]
        m = state.m.get(k)
        v = state.v.get(k)
        m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
        v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
        state.m[k], state.v[k] = m, v
        upd = (m / c1) / (np.sqrt(v / c2) + config.eps) + config.weight_decay * p
        out[k] = (p - lr * upd).astype(p.dtype, copy=False)
    return out, state


# --- training -----------------------------------------------------------------


@dataclass
class TrainResult:
    params: dict[str, Parameter]
    losses: list[float]
    grad_norms: list[float]
    seconds: float

    @property
    def final_loss(self) -> float:
        return self.losses[-1] if self.losses else float("nan")


def training_batch(task: TaskConfig, train: TrainConfig, step: int) -> tuple[np.ndarray, np.ndarray]:
    return batch_arrays(batch(task, train.batch_size, train.seed, "train", task.n, task.T, step))


def loss_and_grads(model: ModelConfig, params: dict[str, Parameter], tokens, targets, V: int):
    with ad.Tape() as tape:
        logits = model_forward(model, params, tokens)
        loss = ad.cross_entropy_last_position(logits, targets, range(V))
        grads = ad.gradients(tape, loss, params)
    return float(loss.data), grads


def train(
    model: ModelConfig,
    task: TaskConfig,
    config: TrainConfig,
    params: dict[str, Parameter] | None = None,
    progress: Callable[[int, float], None] | None = None,
) -> TrainResult:
    """Train one model on AR(n, V) at length T; deterministic in ``config.seed``."""
    if task.T > model.t_max:
        raise TrainConfigError(f"task length {task.T} exceeds model t_max={model.t_max}")
    if task.model_vocab > model.vocab:
        raise TrainConfigError(f"task needs {task.model_vocab} token ids, model has {model.vocab}")
    if params is None:
        params = init_params(model, stream(config.seed, "init", model.label))
    t0 = time.perf_counter()
    state = AdamWState()
    losses: list[float] = []
    norms: list[float] = []
    for step in range(1, config.total_steps + 1):
        tokens, targets = training_batch(task, config, step)
        loss, grads = loss_and_grads(model, params, tokens, targets, task.V)
        if not math.isfinite(loss):
            raise TrainingError("non-finite loss", step, losses)
        losses.append(loss)
        arrays = {k: p.value.data for k, p in params.items()}
        norms.append(min(global_norm(grads), config.clip_norm))
        try:
            new, state = adamw_update(arrays, grads, step, config, state)
        except TrainingError as exc:
            raise TrainingError(str(exc).rsplit(" (step", 1)[0], step, losses) from None
        for k, arr in new.items():
            params[k].value.data = arr
        if progress is not None:
            progress(step, loss)
    return TrainResult(params, losses, norms, time.perf_counter() - t0)


# --- evaluation ---------------------------------------------------------------


@dataclass(frozen=True)
class EvalResult:
    arch: str
    n: int
    T: int
    accuracy: float
    instances: int
    seed: int

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError(f"accuracy {self.accuracy} outside [0, 1]")


def restricted_argmax(logits: np.ndarray, V: int) -> np.ndarray:
    """Argmax over ids ``0..V-1`` only; ``np.argmax`` returns the lowest id on ties."""
    return np.argmax(np.asarray(logits)[..., :V], axis=-1)


def evaluation_set(n: int, T: int, instances: int, seed: int, V: int = 32):
    return batch(TaskConfig(n, T, V), instances, seed, "eval", n, T)


def evaluate_predictor(predict: Callable[[np.ndarray], np.ndarray], n: int, T: int, instances: int,
                       seed: int = DEFAULT_SEED, V: int = 32, arch: str = "custom", chunk: int = 100) -> EvalResult:
    """Accuracy of ``predict(tokens[B, T]) -> answers[B]`` on the held-out stream."""
    tokens, targets = batch_arrays(evaluation_set(n, T, instances, seed, V))
    correct = 0
    for i in range(0, instances, chunk):
        correct += int(np.sum(predict(tokens[i:i + chunk]) == targets[i:i + chunk]))
    return EvalResult(arch, n, T, correct / instances if instances else 0.0, instances, seed)


def evaluate(params: dict[str, Parameter], model: ModelConfig, n: int, T: int, instances: int,
             seed: int = DEFAULT_SEED, V: int = 32) -> EvalResult:
    def predict(tokens):
        return restricted_argmax(model_forward(model, params, tokens).data, V)

    return evaluate_predictor(predict, n, T, instances, seed, V, model.label)


# --- recall capacity ----------------------------------------------------------


@dataclass(frozen=True)
class NStar:
    n_star: int
    boundary: bool  # n_star equals the largest tested n
    threshold: float

    def __int__(self) -> int:
        return self.n_star


def n_star_from_accuracies(grid: Sequence[int], accuracies: Sequence[float], threshold: float = 0.90) -> NStar:
    """Largest ``n`` in ``grid`` whose accuracy reaches ``threshold``; 0 if none."""
    if len(grid) == 0:
        raise ValueError("empty n grid")
    if len(grid) != len(accuracies):
        raise ValueError("grid and accuracies differ in length")
    passing = [n for n, a in zip(grid, accuracies) if a is not None and a >= threshold]
    best = max(passing, default=0)
    return NStar(best, best == max(grid), threshold)


def find_n_star(
    model: ModelConfig,
    n_grid: Iterable[int],
    T: int,
    config: TrainConfig,
    threshold: float = 0.90,
    runner: Callable[[ModelConfig, int, int, TrainConfig], EvalResult] | None = None,
    descending_stop: bool = False,
) -> tuple[NStar, dict[int, EvalResult]]:
    """Train one model per grid point and return ``n*`` plus every evaluation.

    With ``descending_stop`` the grid is scanned from the largest ``n`` down and
    stops at the first passing point. The result is the same ``n*`` because
    ``n*`` is the largest passing ``n``; smaller points are left unevaluated.
    """
    grid = sorted(set(int(n) for n in n_grid))
    if not grid:
        raise ValueError("empty n grid")
    runner = runner or train_and_evaluate
    results: dict[int, EvalResult] = {}
    order = grid[::-1] if descending_stop else grid
    for n in order:
        if 3 * n + 2 > T:
            continue
        res = runner(model, n, T, config)
        results[n] = res
        if descending_stop and res.accuracy >= threshold:
            break
    tested = sorted(results)
    if not tested:
        raise ValueError(f"no grid point fits in T={T}")
    ns = n_star_from_accuracies(tested, [results[n].accuracy for n in tested], threshold)
    return NStar(ns.n_star, ns.n_star == max(n for n in grid if 3 * n + 2 <= T), threshold), results


def train_and_evaluate(model: ModelConfig, n: int, T: int, config: TrainConfig) -> EvalResult:
    task = TaskConfig(n, T)
    result = train(model, task, config)
    return evaluate(result.params, model, n, T, config.eval_instances, config.seed, task.V)


# --- CSV ----------------------------------------------------------------------

LOSS_COLUMNS = ("step", "loss")
EVAL_COLUMNS = ("arch", "n", "T", "accuracy", "instances", "seed")


def loss_curve_csv(losses: Sequence[float]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOSS_COLUMNS)
    for i, loss in enumerate(losses, start=1):
        w.writerow([i, repr(float(loss))])
    return buf.getvalue()


def eval_results_csv(results: Iterable[EvalResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EVAL_COLUMNS)
    for r in results:
        w.writerow([r.arch, r.n, r.T, repr(r.accuracy), r.instances, r.seed])
    return buf.getvalue()


def with_steps(config: TrainConfig, steps: int) -> TrainConfig:
    return replace(config, total_steps=steps, warmup_steps=min(config.warmup_steps, max(steps - 1, 0)))
