"""Seeded synthetic fine-tuning tasks.

Teacher tasks start from a "pre-trained" base matrix with a decaying
spectrum and define the target weight as a change inside the base's top
``rank`` singular directions:

* ``lowrank-teacher``: ``W* = W0 + U_p D V_p^T`` with a random dense D whose
  entries scale with ``sqrt(s_i s_j)``, so strong directions move most.
* ``rotated-teacher``: ``W* = W0 + U_p (R - I) diag(s_p) V_p^T`` with R a
  random rotation, so the target singular vectors are rotated within the
  principal subspace. A diagonal rescaling of the frozen bases cannot
  express this, a dense core can.
* ``blobs-classification``: Gaussian clusters with integer labels.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

GENERATORS = ("blobs-classification", "lowrank-teacher", "rotated-teacher")


@dataclass(frozen=True)
class SynthTask:
    generator: str
    in_dim: int
    out_dim: int
    n_train: int = 256
    n_test: int = 256
    noise: float = 0.0
    seed: int = 0
    rank: int = 4
    perturb: float = 0.5
    angle: float = 0.6
    spread: float = 2.0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TaskData:
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    classification: bool
    base: np.ndarray | None = None
    teacher: np.ndarray | None = None


def random_orthogonal(rng: np.random.Generator, n: int, k: int | None = None) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    q = q * np.sign(np.diag(r))
    return q if k is None else q[:, :k]


def base_spectrum(p: int, rank: int) -> np.ndarray:
    """A strong leading block of ``rank`` values over a weak geometric tail."""
    rank = min(rank, p)
    head = 3.0 * 0.85 ** np.arange(rank)
    tail = 0.08 * 0.8 ** np.arange(p - rank)
    return np.concatenate([head, tail])


def base_matrix(rng: np.random.Generator, m: int, n: int, rank: int) -> np.ndarray:
    p = min(m, n)
    u = random_orthogonal(rng, m, p)
    v = random_orthogonal(rng, n, p)
    return (u * base_spectrum(p, rank)) @ v.T


def cayley_rotation(rng: np.random.Generator, k: int, angle: float) -> np.ndarray:
    g = rng.standard_normal((k, k))
    skew = angle * (g - g.T) / 2.0
    eye = np.eye(k)
    return np.linalg.solve(eye - skew, eye + skew)


def _check(task: SynthTask) -> None:
    if task.generator not in GENERATORS:
        raise ValueError(f"unknown generator {task.generator!r}; expected one of {GENERATORS}")
    for name in ("in_dim", "out_dim", "n_train", "n_test", "rank"):
        if getattr(task, name) <= 0:
            raise ValueError(f"{name} must be positive, got {getattr(task, name)}")
    if task.noise < 0:
        raise ValueError(f"noise must be non-negative, got {task.noise}")
    if task.generator != "blobs-classification" and task.rank > min(task.in_dim, task.out_dim):
        raise ValueError(f"teacher rank {task.rank} exceeds min(in_dim, out_dim)")


def gen_task(task: SynthTask) -> TaskData:
    _check(task)
    rng = np.random.default_rng(task.seed)
    n_all = task.n_train + task.n_test
    if task.generator == "blobs-classification":
        centers = task.spread * rng.standard_normal((task.out_dim, task.in_dim))
        labels = rng.integers(0, task.out_dim, size=n_all)
        x = centers[labels] + rng.standard_normal((n_all, task.in_dim)) * max(task.noise, 1e-12)
        y = labels.astype(np.float64)[:, None]
        return TaskData(
            x[: task.n_train], y[: task.n_train], x[task.n_train :], y[task.n_train :], True
        )

    m, n, k = task.out_dim, task.in_dim, task.rank
    p = min(m, n)
    u = random_orthogonal(rng, m, p)
    v = random_orthogonal(rng, n, p)
    sigma = base_spectrum(p, k)
    w0 = (u * sigma) @ v.T
    up, vp = u[:, :k], v[:, :k]
    if task.generator == "lowrank-teacher":
        # relative change: each entry scales with the strength of its directions
        scale = np.sqrt(np.outer(sigma[:k], sigma[:k]))
        delta = task.perturb * scale * rng.standard_normal((k, k)) / np.sqrt(k)
        teacher = w0 + up @ delta @ vp.T
    else:
        rot = cayley_rotation(rng, k, task.angle)
        teacher = w0 + up @ ((rot - np.eye(k)) * sigma[:k]) @ vp.T
    x = rng.standard_normal((n_all, n))
    y = x @ teacher.T + task.noise * rng.standard_normal((n_all, m))
    return TaskData(
        x[: task.n_train],
        y[: task.n_train],
        x[task.n_train :],
        y[task.n_train :],
        False,
        base=w0,
        teacher=teacher,
    )
