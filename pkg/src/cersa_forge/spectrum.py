"""Cumulative spectral energy and layer-wise rank selection."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from cersa_forge import report


class ZeroEnergyError(ValueError):
    """The spectrum carries no energy, so no principal subspace exists."""


@dataclass(frozen=True)
class EnergyProfile:
    sigma_sq: np.ndarray
    cumulative: np.ndarray
    total: float

    @property
    def n_total(self) -> int:
        return self.sigma_sq.shape[0]

    def ratio(self) -> np.ndarray:
        """Fraction of total energy held by each prefix of the spectrum."""
        return self.cumulative / self.total


@dataclass(frozen=True)
class RankSelection:
    alpha: float
    beta: float
    k_alpha: int
    k_beta: int
    r1: int
    r2: int
    r3: int
    n_total: int

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RankSelection":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__})


def energy_profile(sigma) -> EnergyProfile:
    s = np.asarray(sigma, dtype=np.float64).ravel()
    if s.size == 0:
        raise ValueError("empty spectrum")
    if not np.all(np.isfinite(s)) or np.any(s < 0):
        raise ValueError("singular values must be finite and non-negative")
    if np.any(np.diff(s) > 0):
        raise ValueError("singular values must be sorted in descending order")
    sq = s * s
    cumulative = np.cumsum(sq)
    # total is the last prefix sum so that the final ratio is exactly 1
    total = float(cumulative[-1])
    if total <= 0.0:
        raise ZeroEnergyError("spectrum has zero total energy")
    return EnergyProfile(sq, cumulative, total)


def _check_threshold(threshold: float, name: str = "threshold") -> None:
    if not (0.0 < threshold <= 1.0):
        raise ValueError(f"{name} must lie in (0, 1], got {threshold!r}")


def select_rank(profile: EnergyProfile, threshold: float) -> int:
    """Smallest k whose top-k energy fraction reaches ``threshold``."""
    _check_threshold(threshold)
    hits = np.flatnonzero(profile.ratio() >= threshold)
    return int(hits[0]) + 1


def check_thresholds(alpha: float, beta: float) -> None:
    _check_threshold(alpha, "alpha")
    _check_threshold(beta, "beta")
    if beta > alpha:
        raise ValueError(
            f"trainable threshold exceeds retention threshold (beta={beta} > alpha={alpha})"
        )


def make_selection(profile: EnergyProfile, alpha: float, beta: float) -> RankSelection:
    check_thresholds(alpha, beta)
    k_alpha = select_rank(profile, alpha)
    k_beta = select_rank(profile, beta)
    n = profile.n_total
    return RankSelection(
        alpha=float(alpha),
        beta=float(beta),
        k_alpha=k_alpha,
        k_beta=k_beta,
        r1=k_beta,
        r2=k_alpha - k_beta,
        r3=n - k_alpha,
        n_total=n,
    )


@dataclass(frozen=True)
class RankRow:
    layer_label: str
    threshold: float
    k: int
    n_total: int


class LayerError(ValueError):
    def __init__(self, label: str, cause: Exception):
        super().__init__(f"layer {label!r}: {cause}")
        self.label = label
        self.cause = cause


def layer_rank_report(
    layers: Iterable[tuple[str, Sequence[float]]], thresholds: Sequence[float]
) -> list[RankRow]:
    """Cutoff index per layer and retention threshold, in input order."""
    thresholds = list(thresholds)
    rows = []
    for label, sigma in layers:
        try:
            profile = energy_profile(sigma)
            ks = [select_rank(profile, t) for t in thresholds]
        except ValueError as exc:
            raise LayerError(label, exc) from exc
        rows.extend(RankRow(label, float(t), k, profile.n_total) for t, k in zip(thresholds, ks))
    return rows


RANK_COLUMNS = ("layer_label", "threshold", "k", "n_total")


def rank_report_csv(rows: Sequence[RankRow]) -> str:
    return report.to_csv(RANK_COLUMNS, [[r.layer_label, r.threshold, r.k, r.n_total] for r in rows])


def rank_report_json(rows: Sequence[RankRow]) -> str:
    return report.to_json({"rows": [asdict(r) for r in rows]})
