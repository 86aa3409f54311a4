"""Deterministic desk-scale fine-tuning: stacked adapter layers, AdamW,
loss curves and method comparisons."""

from __future__ import annotations

import hashlib
import math
import statistics
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from cersa_forge import adapters, report
from cersa_forge.adapters import AdapterKind, AdapterLayer
from cersa_forge.tasks import SynthTask, TaskData, base_matrix, gen_task

ACTIVATIONS = ("tanh", "relu")
HEADS = ("mse", "softmax-ce")


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"loss became {loss} at step {step}")
        self.step = step
        self.loss = loss


@dataclass(frozen=True)
class ModelSpec:
    dims: tuple[tuple[int, int], ...]
    kinds: tuple[AdapterKind, ...]
    activation: str = "tanh"
    head: str = "mse"

    def __post_init__(self):
        if not self.dims:
            raise ValueError("model needs at least one layer")
        for (_, out), (nxt, _) in zip(self.dims, self.dims[1:]):
            if out != nxt:
                raise ValueError(f"layer dims do not chain: {self.dims}")
        if len(self.kinds) != len(self.dims):
            raise ValueError(f"{len(self.kinds)} adapter kinds for {len(self.dims)} layers")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if self.head not in HEADS:
            raise ValueError(f"head must be one of {HEADS}")

    @classmethod
    def uniform(cls, dims, kind: AdapterKind, activation="tanh", head="mse") -> "ModelSpec":
        dims = tuple(tuple(d) for d in dims)
        return cls(dims, (kind,) * len(dims), activation, head)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-2
    weight_decay: float = 0.0
    steps: int = 500
    batch_size: int = 64
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ValueError("learning rate and weight decay must be non-negative")
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch size must be at least 1")


class Model:
    def __init__(self, spec: ModelSpec, layers: list[AdapterLayer]):
        self.spec = spec
        self.layers = layers

    def _act(self, z):
        return np.tanh(z) if self.spec.activation == "tanh" else np.maximum(z, 0.0)

    def _act_grad(self, z, h):
        return 1.0 - h * h if self.spec.activation == "tanh" else (z > 0).astype(z.dtype)

    def forward(self, x, keep: bool = False):
        cache = []
        h = x
        last = len(self.layers) - 1
        for idx, layer in enumerate(self.layers):
            z = layer.forward(h)
            out = z if idx == last else self._act(z)
            cache.append((h, z, out))
            h = out
        return (h, cache) if keep else h

    def loss(self, out, y) -> tuple[float, np.ndarray]:
        """Loss and its gradient with respect to the network output."""
        if self.spec.head == "mse":
            diff = out - y
            with np.errstate(over="ignore", invalid="ignore"):
                return float(np.mean(diff * diff)), 2.0 * diff / diff.size
        labels = y[:, 0].astype(np.intp)
        shifted = out - out.max(axis=1, keepdims=True)
        logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        n = out.shape[0]
        loss = -float(logp[np.arange(n), labels].mean())
        g = np.exp(logp)
        g[np.arange(n), labels] -= 1.0
        return loss, g / n

    def loss_and_grads(self, x, y):
        out, cache = self.forward(x, keep=True)
        loss, g = self.loss(out, y)
        if not math.isfinite(loss):
            return loss, None
        grads = [None] * len(self.layers)
        last = len(self.layers) - 1
        for idx in range(last, -1, -1):
            h_in, z, h_out = cache[idx]
            if idx != last:
                g = g * self._act_grad(z, h_out)
            grads[idx], g = self.layers[idx].grad(h_in, g)
        return loss, grads

    def trainable_count(self) -> int:
        return sum(layer.trainable_count() for layer in self.layers)

    def frozen_digest(self) -> str:
        h = hashlib.sha256()
        for idx, layer in enumerate(self.layers):
            for name in sorted(layer.frozen):
                h.update(f"{idx}/{name}".encode())
                h.update(np.ascontiguousarray(layer.frozen[name]).tobytes())
        return h.hexdigest()

    def metrics(self, x, y) -> dict[str, float]:
        out = self.forward(x)
        loss, _ = self.loss(out, y)
        result = {"loss": loss}
        if self.spec.head == "softmax-ce":
            result["accuracy"] = float(np.mean(out.argmax(axis=1) == y[:, 0].astype(np.intp)))
        return result


def base_weights(spec: ModelSpec, data: TaskData | None, seed: int):
    """Pre-trained stand-in weights: the task's base matrix for a single
    teacher layer, otherwise seeded matrices with a decaying spectrum."""
    if data is not None and data.base is not None and len(spec.dims) == 1:
        n, m = spec.dims[0]
        if data.base.shape != (m, n):
            raise ValueError(f"task base is {data.base.shape}, layer needs {(m, n)}")
        return [(data.base, np.zeros(m))]
    rng = np.random.default_rng([seed, 7])
    out = []
    for n, m in spec.dims:
        out.append((base_matrix(rng, m, n, max(1, min(m, n) // 4)), np.zeros(m)))
    return out


def build_model(spec: ModelSpec, weights, seed: int = 0) -> Model:
    layers = [
        adapters.build(kind, w, b, seed=seed * 1000 + idx)
        for idx, (kind, (w, b)) in enumerate(zip(spec.kinds, weights))
    ]
    return Model(spec, layers)


class AdamW:
    """Adam with weight decay applied directly to the parameters rather than
    folded into the gradient."""

    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.t = 0
        self.m: dict[tuple[int, str], np.ndarray] = {}
        self.v: dict[tuple[int, str], np.ndarray] = {}

    def step(self, model: Model, grads: Sequence[dict[str, np.ndarray]]) -> None:
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1**self.t
        bc2 = 1.0 - c.beta2**self.t
        for idx, (layer, layer_grads) in enumerate(zip(model.layers, grads)):
            for name, g in layer_grads.items():
                p = layer.params[name]
                key = (idx, name)
                m = self.m.setdefault(key, np.zeros_like(p))
                v = self.v.setdefault(key, np.zeros_like(p))
                m *= c.beta1
                m += (1.0 - c.beta1) * g
                v *= c.beta2
                v += (1.0 - c.beta2) * g * g
                update = (m / bc1) / (np.sqrt(v / bc2) + c.eps)
                p -= c.learning_rate * update
                p -= c.learning_rate * c.weight_decay * p


@dataclass
class RunRecord:
    label: str
    losses: list[float]
    final_train: dict[str, float]
    final_test: dict[str, float]
    trainable_count: int
    threads: int | None
    config: dict
    wall_seconds: float | None = None
    step_seconds: list[float] | None = field(default=None, repr=False)

    def to_json(self) -> str:
        d = asdict(self)
        d.pop("step_seconds")
        return report.to_json(d)

    def loss_csv(self) -> str:
        return report.to_csv(("step", "loss"), enumerate(self.losses, start=1))

    def timing_csv(self) -> str:
        return report.to_csv(("step", "seconds"), enumerate(self.step_seconds or [], start=1))


def _batches(n: int, batch: int, rng: np.random.Generator):
    batch = min(batch, n)
    while True:
        order = rng.permutation(n)
        for start in range(0, n - batch + 1, batch):
            # sorted rows: a full batch sums in the same order every epoch
            yield np.sort(order[start : start + batch])


def train_run(
    model: Model,
    cfg: TrainConfig,
    data: TaskData,
    label: str = "",
    callback: Callable[[int, Model], None] | None = None,
    checkpoint_every: int = 0,
    timing: bool = False,
    threads: int | None = None,
) -> RunRecord:
    """Train ``model`` in place. ``callback(step, model)`` fires before the
    first step, every ``checkpoint_every`` steps and after the last."""
    rng = np.random.default_rng(cfg.seed)
    opt = AdamW(cfg)
    batches = _batches(data.x_train.shape[0], cfg.batch_size, rng)
    losses = []
    step_seconds = [] if timing else None
    start = time.perf_counter() if timing else 0.0
    if callback is not None:
        callback(0, model)
    for step in range(1, cfg.steps + 1):
        t0 = time.perf_counter() if timing else 0.0
        idx = next(batches)
        loss, grads = model.loss_and_grads(data.x_train[idx], data.y_train[idx])
        if not math.isfinite(loss):
            raise TrainingDiverged(step, loss)
        losses.append(loss)
        opt.step(model, grads)
        if timing:
            step_seconds.append(time.perf_counter() - t0)
        if callback is not None and (
            step == cfg.steps or (checkpoint_every and step % checkpoint_every == 0)
        ):
            callback(step, model)
    final_train = model.metrics(data.x_train, data.y_train)
    final_test = model.metrics(data.x_test, data.y_test)
    if not all(math.isfinite(v) for v in final_train.values()):
        raise TrainingDiverged(cfg.steps, final_train["loss"])
    return RunRecord(
        label=label,
        losses=losses,
        final_train=final_train,
        final_test=final_test,
        trainable_count=model.trainable_count(),
        threads=threads,
        config=asdict(cfg),
        wall_seconds=(time.perf_counter() - start) if timing else None,
        step_seconds=step_seconds,
    )


@dataclass
class ComparisonRow:
    label: str
    trainable_count: int | None
    test_metric: float
    train_loss: float
    per_seed: list[float]
    rank: int = 0
    error: str | None = None
    curve: list[float] = field(default_factory=list, repr=False)


def _metric(record: RunRecord, classification: bool) -> float:
    return record.final_test["accuracy"] if classification else record.final_test["loss"]


def compare_methods(
    kinds: Sequence[AdapterKind],
    dims,
    task: SynthTask,
    cfg: TrainConfig,
    seeds: Sequence[int] = (0,),
    activation: str = "tanh",
    head: str = "mse",
    threads: int | None = None,
) -> list[ComparisonRow]:
    """Train each kind on the same data and base weights for every seed and
    rank the kinds by median final test metric (loss ascending, accuracy
    descending). A failing kind is reported with its error, not raised."""
    classification = task.generator == "blobs-classification"
    results: dict[int, list[RunRecord]] = {i: [] for i in range(len(kinds))}
    errors: dict[int, str] = {}
    for seed in seeds:
        data = gen_task(replace(task, seed=seed))
        base = None
        for i, kind in enumerate(kinds):
            if i in errors:
                continue
            spec = ModelSpec.uniform(dims, kind, activation, head)
            if base is None:
                base = base_weights(spec, data, seed)
            try:
                model = build_model(spec, base, seed)
                rec = train_run(model, replace(cfg, seed=seed), data, kind.label(), threads=threads)
            except (ValueError, TrainingDiverged) as exc:
                errors[i] = f"{type(exc).__name__}: {exc}"
                continue
            results[i].append(rec)
    rows = []
    for i, kind in enumerate(kinds):
        if i in errors:
            rows.append(ComparisonRow(kind.label(), None, math.nan, math.nan, [], error=errors[i]))
            continue
        recs = results[i]
        per_seed = [_metric(r, classification) for r in recs]
        rows.append(
            ComparisonRow(
                label=kind.label(),
                trainable_count=recs[0].trainable_count,
                test_metric=statistics.median(per_seed),
                train_loss=statistics.median(r.final_train["loss"] for r in recs),
                per_seed=per_seed,
                curve=recs[0].losses,
            )
        )
    ok = [r for r in rows if r.error is None]
    ok.sort(key=lambda r: (-r.test_metric if classification else r.test_metric, r.trainable_count))
    for pos, row in enumerate(ok, start=1):
        row.rank = pos
    return rows


COMPARISON_COLUMNS = ("rank", "label", "trainable_count", "median_test_metric", "median_train_loss", "error")


def comparison_csv(rows: Sequence[ComparisonRow]) -> str:
    ordered = sorted(rows, key=lambda r: (r.rank == 0, r.rank))
    return report.to_csv(
        COMPARISON_COLUMNS,
        [[r.rank or "", r.label, r.trainable_count, r.test_metric, r.train_loss, r.error] for r in ordered],
    )


def forgetting_rate(baseline_acc, post_acc) -> float:
    """Mean relative accuracy drop; negative when accuracy improved."""
    base = np.asarray(baseline_acc, dtype=np.float64)
    post = np.asarray(post_acc, dtype=np.float64)
    if base.shape != post.shape or base.ndim != 1:
        raise ValueError(f"accuracy vectors differ in shape: {base.shape} vs {post.shape}")
    if base.size == 0:
        raise ValueError("no tasks to average over")
    if np.any(base <= 0):
        raise ValueError("baseline accuracies must be positive")
    return float(np.mean((base - post) / base))
