"""Principal-subspace comparisons between two versions of a weight."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cersa_forge import report
from cersa_forge.linalg import as_matrix, grassmann, svd
from cersa_forge.spectrum import energy_profile, select_rank


def _pair(w_before, w_after):
    a = as_matrix(w_before, "before weight")
    b = as_matrix(w_after, "after weight")
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    for name, w in (("before", a), ("after", b)):
        if not np.any(w):
            raise ValueError(f"{name} weight is the zero matrix")
    return svd(a), svd(b)


def subspace_similarity(w_before, w_after, retention: float) -> tuple[float, float]:
    """Similarity of the top-k left and right singular subspaces, with k the
    rank that ``retention`` selects on the spectrum of ``w_before``."""
    fa, fb = _pair(w_before, w_after)
    k = select_rank(energy_profile(fa.sigma), retention)
    psi_u = grassmann(fa.u, fb.u, k, k)
    psi_v = grassmann(fa.vt.T, fb.vt.T, k, k)
    return psi_u, psi_v


@dataclass(frozen=True)
class SimilarityGrid:
    """``values[i-1, j-1]`` is the similarity of top-i before vs top-j after."""

    values: np.ndarray
    label_before: str
    label_after: str
    side: str = "u"

    def rows(self):
        n_i, n_j = self.values.shape
        for i in range(n_i):
            for j in range(n_j):
                yield i + 1, j + 1, float(self.values[i, j])

    def to_csv(self) -> str:
        return report.to_csv(("i", "j", "psi"), self.rows())


def _grid(basis_a, basis_b, max_i, max_j):
    out = np.empty((max_i, max_j))
    for i in range(1, max_i + 1):
        for j in range(1, max_j + 1):
            out[i - 1, j - 1] = grassmann(basis_a, basis_b, i, j)
    return out


def similarity_grid(
    w_before,
    w_after,
    max_i: int,
    max_j: int,
    side: str = "u",
    labels: tuple[str, str] = ("before", "after"),
) -> SimilarityGrid:
    """Similarity for every pair of top-i / top-j singular bases; ``side``
    picks output (``"u"``) or input (``"v"``) singular vectors."""
    fa, fb = _pair(w_before, w_after)
    p = min(fa.u.shape[1], fb.u.shape[1])
    if not (1 <= max_i <= p and 1 <= max_j <= p):
        raise ValueError(f"grid bounds ({max_i}, {max_j}) must lie in [1, {p}]")
    if side == "u":
        a, b = fa.u, fb.u
    elif side == "v":
        a, b = fa.vt.T, fb.vt.T
    else:
        raise ValueError(f"side must be 'u' or 'v', got {side!r}")
    return SimilarityGrid(_grid(a, b, max_i, max_j), labels[0], labels[1], side)
