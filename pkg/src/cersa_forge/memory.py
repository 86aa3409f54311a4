"""Closed-form fine-tuning memory accounting.

Counts are in parameters and converted to bytes at 4 bytes per parameter
(single precision). Gradients cover the trainable parameters and the
optimizer keeps two moment buffers per trainable parameter, so every method
totals ``weights + 3 * trainable``. Activations and data are not counted.

Per adapted m x n matrix (r = rank, e = SVFT sparse parameter count):

======== ================= =========
method   weights           trainable
======== ================= =========
FT       mn                mn
CERSA    mr + nr + r^2     r^2
SVFit    2mn + m           r
SVFT     2mn + e           e
LoRA     mn + mr + nr      mr + nr
======== ================= =========

CERSA with a frozen middle band (k_beta < k_alpha) stores
``m k_alpha + n k_alpha + (k_alpha - k_beta)`` frozen values plus the
``k_beta^2`` core.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

from cersa_forge import report

BYTES_PER_PARAM = 4
MB = 2**20
METHODS = ("FT", "CERSA", "SVFit", "SVFT", "LoRA", "FrozenUV")


@dataclass(frozen=True)
class MemoryReport:
    method: str
    weight_params: int
    trainable_params: int
    frozen_params: int
    weights_bytes: int
    gradient_bytes: int
    optimizer_bytes: int
    total_bytes: int
    bytes_per_param: int = BYTES_PER_PARAM

    @classmethod
    def from_counts(cls, method: str, weight_params: int, trainable_params: int) -> "MemoryReport":
        bpp = BYTES_PER_PARAM
        weights = weight_params * bpp
        gradient = trainable_params * bpp
        optimizer = 2 * gradient
        return cls(
            method=method,
            weight_params=weight_params,
            trainable_params=trainable_params,
            frozen_params=weight_params - trainable_params,
            weights_bytes=weights,
            gradient_bytes=gradient,
            optimizer_bytes=optimizer,
            total_bytes=weights + gradient + optimizer,
        )

    @property
    def total_params(self) -> int:
        """Total in parameter units, as written in the closed-form table."""
        return self.total_bytes // self.bytes_per_param

    def mb(self) -> dict[str, float]:
        return {
            "weights_mb": self.weights_bytes / MB,
            "gradient_mb": self.gradient_bytes / MB,
            "optimizer_mb": self.optimizer_bytes / MB,
            "total_mb": self.total_bytes / MB,
        }


def _per_matrix(method: str, m: int, n: int, rank: int | None, core: int | None, e: int | None):
    if m <= 0 or n <= 0:
        raise ValueError(f"dimensions must be positive, got {m}x{n}")
    if method == "FT":
        return m * n, m * n
    if method == "SVFT":
        if e is None or e < 1:
            raise ValueError("SVFT needs a positive sparse parameter count e")
        return 2 * m * n + e, e
    if rank is None:
        raise ValueError(f"{method} needs a rank")
    if rank < 1:
        raise ValueError(f"{method}: rank must be at least 1, got {rank} (no trainable subspace)")
    r = rank
    if method == "LoRA":
        return m * n + m * r + n * r, m * r + n * r
    if method == "SVFit":
        return 2 * m * n + m, r
    if method in ("CERSA", "FrozenUV"):
        kc = r if core is None else core
        if not 1 <= kc <= r:
            raise ValueError(f"core rank {kc} outside [1, {r}]")
        return m * r + n * r + (r - kc) + kc * kc, kc * kc
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def memory_report(
    method: str,
    dims: Sequence[tuple[int, int]],
    rank: int | None = None,
    ranks: Sequence[int] | None = None,
    core_ranks: Sequence[int] | None = None,
    e: int | None = None,
) -> MemoryReport:
    """Sum the closed-form counts over every adapted matrix in ``dims``.

    ``ranks`` gives a per-matrix rank (layer-wise selection); otherwise the
    uniform ``rank`` applies. ``core_ranks`` sets the CERSA trainable core
    rank per matrix when it differs from the retained rank.
    """
    dims = list(dims)
    if ranks is not None and len(ranks) != len(dims):
        raise ValueError(f"{len(ranks)} ranks given for {len(dims)} matrices")
    if core_ranks is not None and len(core_ranks) != len(dims):
        raise ValueError(f"{len(core_ranks)} core ranks given for {len(dims)} matrices")
    weights = trainable = 0
    for idx, (m, n) in enumerate(dims):
        r = ranks[idx] if ranks is not None else rank
        kc = core_ranks[idx] if core_ranks is not None else None
        w, t = _per_matrix(method, int(m), int(n), r, kc, e)
        weights += w
        trainable += t
    return MemoryReport.from_counts(method, weights, trainable)


def cersa_compression(m: int, n: int, r: int, core: int | None = None) -> float:
    """Fine-tuning memory over pre-trained weight memory for one matrix."""
    kc = r if core is None else core
    return (m * r + n * r + (r - kc) + 4 * kc * kc) / (m * n)


@dataclass(frozen=True)
class CompressionPoint:
    alpha: float | None
    rank: int
    rate: float


def lora_reference_rate(m: int, n: int, rank: int = 32) -> float:
    return (m * n + 4 * rank * (m + n)) / (m * n)


def compression_curve(
    m: int,
    n: int,
    ranks: Sequence[int] | None = None,
    alphas: Sequence[float] | None = None,
    sigma=None,
) -> list[CompressionPoint]:
    """Compression rate at each explicit rank, or at the rank each retention
    rate in ``alphas`` selects on the spectrum ``sigma``. Points are sorted
    by rank."""
    if m <= 0 or n <= 0:
        raise ValueError(f"dimensions must be positive, got {m}x{n}")
    points = []
    if alphas is not None:
        from cersa_forge.spectrum import energy_profile, select_rank

        if sigma is None:
            raise ValueError("retention rates need a spectrum to select ranks from")
        profile = energy_profile(sigma)
        for a in alphas:
            r = select_rank(profile, a)
            points.append(CompressionPoint(float(a), r, cersa_compression(m, n, r)))
    if ranks is not None:
        for r in ranks:
            if r < 1:
                raise ValueError(f"rank must be at least 1, got {r}")
            points.append(CompressionPoint(None, int(r), cersa_compression(m, n, int(r))))
    return sorted(points, key=lambda p: (p.rank, -1.0 if p.alpha is None else p.alpha))


def _excess(m: int, n: int, r: int) -> int:
    return 4 * r * r + (m + n) * r - m * n


def break_even_rank(m: int, n: int) -> int:
    """Largest r with ``(m + n) r + 4 r^2 < m n``, from the positive root of
    the quadratic in exact integer arithmetic."""
    if m <= 0 or n <= 0:
        raise ValueError(f"dimensions must be positive, got {m}x{n}")
    disc = (m + n) ** 2 + 16 * m * n
    # floor((sqrt(disc) - (m + n)) / 8) == floor((isqrt(disc) - (m + n)) / 8)
    r = (math.isqrt(disc) - (m + n)) // 8
    if _excess(m, n, r) == 0:
        r -= 1  # the root itself is not a strict saving
    return max(r, 0)


def break_even_scan(m: int, n: int) -> int:
    best = 0
    for r in range(1, min(m, n) + 1):
        if _excess(m, n, r) < 0:
            best = r
        else:
            break
    return best


REPORT_COLUMNS = (
    "method",
    "weight_params",
    "trainable_params",
    "frozen_params",
    "weights_bytes",
    "gradient_bytes",
    "optimizer_bytes",
    "total_bytes",
    "total_mb",
)


def reports_csv(reports: Sequence[MemoryReport]) -> str:
    rows = [
        [
            r.method,
            r.weight_params,
            r.trainable_params,
            r.frozen_params,
            r.weights_bytes,
            r.gradient_bytes,
            r.optimizer_bytes,
            r.total_bytes,
            r.total_bytes / MB,
        ]
        for r in reports
    ]
    return report.to_csv(REPORT_COLUMNS, rows)


def reports_json(reports: Sequence[MemoryReport]) -> str:
    return report.to_json({"reports": [{**asdict(r), **r.mb()} for r in reports]})


def curve_csv(points: Sequence[CompressionPoint]) -> str:
    rows = [["" if p.alpha is None else p.alpha, p.rank, p.rate] for p in points]
    return report.to_csv(("alpha_or_rank", "r", "c"), rows)
