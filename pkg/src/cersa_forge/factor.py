"""Three-region factorization of a weight matrix.

A weight ``W`` is split by its spectrum into a discarded tail, a frozen
middle band (kept as a diagonal) and a trainable square core over the
leading singular directions. The frozen bases ``u_p`` and ``v_pt`` never
change, so any value of the core keeps the adapted weight inside the
original principal row and column spaces.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from cersa_forge.linalg import SvdFactors, as_matrix, grassmann, svd, truncate
from cersa_forge.spectrum import RankSelection, check_thresholds, energy_profile, make_selection


@dataclass
class CersaFactors:
    u_p: np.ndarray
    v_pt: np.ndarray
    s_core: np.ndarray
    sigma_frozen: np.ndarray
    selection: RankSelection
    core_start: int = 0

    @property
    def k_retained(self) -> int:
        return self.u_p.shape[1]

    @property
    def k_core(self) -> int:
        return self.s_core.shape[0]

    @property
    def core_slice(self) -> slice:
        return slice(self.core_start, self.core_start + self.k_core)

    def frozen_indices(self) -> np.ndarray:
        idx = np.arange(self.k_retained)
        return np.concatenate([idx[: self.core_start], idx[self.core_start + self.k_core :]])

    def check_shapes(self) -> None:
        m, k = self.u_p.shape
        kc = self.s_core.shape
        problems = []
        if self.v_pt.shape[0] != k:
            problems.append(f"v_pt has {self.v_pt.shape[0]} rows, u_p has {k} columns")
        if len(kc) != 2 or kc[0] != kc[1]:
            problems.append(f"s_core must be square, got {kc}")
        elif self.core_start < 0 or self.core_start + kc[0] > k:
            problems.append(f"core block [{self.core_start}, {self.core_start + kc[0]}) exceeds rank {k}")
        elif self.sigma_frozen.shape != (k - kc[0],):
            problems.append(
                f"sigma_frozen has shape {self.sigma_frozen.shape}, expected ({k - kc[0]},)"
            )
        if problems:
            raise ValueError("inconsistent factor shapes: " + "; ".join(problems))

    def middle(self) -> np.ndarray:
        """The k x k block matrix sitting between the frozen bases."""
        self.check_shapes()
        k = self.k_retained
        block = np.zeros((k, k))
        frozen = self.frozen_indices()
        block[frozen, frozen] = self.sigma_frozen
        block[self.core_slice, self.core_slice] = self.s_core
        return block


def _build(f: SvdFactors, selection: RankSelection, core_start: int, k_core: int) -> CersaFactors:
    kept = truncate(f, selection.k_alpha)
    sigma = kept.sigma
    core = np.diag(sigma[core_start : core_start + k_core])
    frozen = np.concatenate([sigma[:core_start], sigma[core_start + k_core :]])
    return CersaFactors(
        u_p=kept.u,
        v_pt=kept.vt,
        s_core=core,
        sigma_frozen=frozen,
        selection=selection,
        core_start=core_start,
    )


def factorize(w, alpha: float, beta: float) -> CersaFactors:
    """Keep the top-``k_alpha`` directions of ``w``, train the top ``k_beta``
    of them through a dense core initialised with their singular values."""
    check_thresholds(alpha, beta)
    w = as_matrix(w, "weight")
    f = svd(w)
    selection = make_selection(energy_profile(f.sigma), alpha, beta)
    return _build(f, selection, 0, selection.k_beta)


def split_variant(w, alpha: float, take_top: bool, rank: int | None = None) -> CersaFactors:
    """Train either the leading or the trailing ``rank`` directions of the
    retained subspace, freezing the rest.

    ``rank`` defaults to half the retained rank; the two candidate blocks
    must not overlap.
    """
    check_thresholds(alpha, alpha)
    w = as_matrix(w, "weight")
    f = svd(w)
    profile = energy_profile(f.sigma)
    base = make_selection(profile, alpha, alpha)
    k = base.k_alpha
    r = k // 2 if rank is None else int(rank)
    if r < 1:
        raise ValueError(f"split rank must be at least 1, got {r}")
    if 2 * r > k:
        raise ValueError(f"retained rank {k} too small for two disjoint blocks of rank {r}")
    beta = float(profile.cumulative[r - 1] / profile.total)
    selection = replace(
        base, beta=beta, k_beta=r, r1=r, r2=k - r, r3=base.n_total - k
    )
    start = 0 if take_top else k - r
    return _build(f, selection, start, r)


def effective_weight(f: CersaFactors) -> np.ndarray:
    return (f.u_p @ f.middle()) @ f.v_pt


def reconstruction_error(w, f: CersaFactors) -> float:
    return float(np.linalg.norm(as_matrix(w) - effective_weight(f)))


SPAN_TOL = 1e-6


def theorem1_core(m_mat, q, q_prime) -> np.ndarray:
    """Core ``S`` with ``m_mat = q @ S @ q_prime.T`` for bases spanning the
    rank-k singular subspaces of ``m_mat`` (k = number of basis columns).

    Built as ``S = R diag(sigma) R'^T`` with ``R = q^T U`` and
    ``R' = q'^T V``, the change-of-basis rotations between the given bases
    and the singular vectors.
    """
    m_mat = as_matrix(m_mat)
    q = as_matrix(q, "q")
    q_prime = as_matrix(q_prime, "q_prime")
    k = q.shape[1]
    if q_prime.shape[1] != k:
        raise ValueError(f"bases have different ranks: {k} vs {q_prime.shape[1]}")
    if q.shape[0] != m_mat.shape[0] or q_prime.shape[0] != m_mat.shape[1]:
        raise ValueError(
            f"basis shapes {q.shape}, {q_prime.shape} do not fit matrix {m_mat.shape}"
        )
    top = truncate(svd(m_mat), k)
    u, v = top.u, top.vt.T
    psi_u = grassmann(q, u, k, k)
    psi_v = grassmann(q_prime, v, k, k)
    if psi_u < 1.0 - SPAN_TOL or psi_v < 1.0 - SPAN_TOL:
        raise ValueError(
            "bases do not span the singular subspaces "
            f"(psi_u={psi_u:.9f}, psi_v={psi_v:.9f})"
        )
    r = q.T @ u
    r_prime = q_prime.T @ v
    return (r * top.sigma) @ r_prime.T
