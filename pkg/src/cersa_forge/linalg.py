"""Dense matrix helpers and a one-sided Jacobi SVD.

Matrices are plain ``numpy.ndarray`` objects of dtype float64; the helpers
here validate shape and finiteness at the boundary and otherwise lean on
numpy for elementwise work. The SVD does not call LAPACK.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_SWEEPS = 30
OFF_DIAG_TOL = 1e-12


class ConvergenceError(RuntimeError):
    """Raised when the Jacobi sweeps hit the iteration cap."""

    def __init__(self, sweeps: int, residual: float):
        super().__init__(
            f"one-sided Jacobi did not converge after {sweeps} sweeps "
            f"(max relative off-diagonal {residual:.3e})"
        )
        self.sweeps = sweeps
        self.residual = residual


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce ``a`` into a finite 2-D float64 array."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "left operand")
    b = as_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise ValueError(
            f"dimension mismatch: {a.shape[0]}x{a.shape[1]} times {b.shape[0]}x{b.shape[1]}"
        )
    return a @ b


def frobenius(a) -> float:
    return float(np.sqrt(np.sum(np.square(a))))


@dataclass(frozen=True)
class SvdFactors:
    """Thin SVD ``a = u @ diag(sigma) @ vt`` with ``sigma`` descending."""

    u: np.ndarray
    sigma: np.ndarray
    vt: np.ndarray

    @property
    def rank_bound(self) -> int:
        return self.sigma.shape[0]

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.sigma) @ self.vt


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    # Chess-tournament ordering: every column pair appears once per sweep and
    # each round holds disjoint pairs, so a round can be rotated in one shot.
    players = list(range(n)) + ([-1] if n % 2 else [])
    size = len(players)
    rounds = []
    for _ in range(size - 1):
        left, right = [], []
        for k in range(size // 2):
            i, j = players[k], players[size - 1 - k]
            if i >= 0 and j >= 0:
                left.append(min(i, j))
                right.append(max(i, j))
        rounds.append((np.array(left, dtype=np.intp), np.array(right, dtype=np.intp)))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def _complete_basis(q: np.ndarray, keep: np.ndarray) -> np.ndarray:
    """Replace columns of ``q`` not flagged in ``keep`` with an orthonormal
    completion of the kept columns (two-pass Gram-Schmidt on unit vectors)."""
    m, p = q.shape
    out = q.copy()
    basis = [out[:, j] for j in range(p) if keep[j]]
    candidates = iter(range(m))
    for j in range(p):
        if keep[j]:
            continue
        while True:
            e = np.zeros(m)
            e[next(candidates)] = 1.0
            for _ in range(2):
                for b in basis:
                    e -= (b @ e) * b
            norm = np.linalg.norm(e)
            if norm > 1e-8:
                break
        e /= norm
        out[:, j] = e
        basis.append(e)
    return out


def _jacobi_tall(a: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One-sided Jacobi on a tall (m >= n) matrix; returns (u, sigma, v)."""
    m, n = a.shape
    g = a.copy()
    v = np.eye(n)
    rounds = _round_robin(n)
    scale = frobenius(a)
    # Columns whose squared norms fall below this are numerically zero.
    floor = (np.finfo(float).eps * scale) ** 2
    converged = n < 2
    worst = 0.0
    for sweep in range(MAX_SWEEPS):
        if converged:
            break
        rotated = False
        worst = 0.0
        for left, right in rounds:
            gl, gr = g[:, left], g[:, right]
            alpha = np.einsum("ij,ij->j", gl, gl)
            beta = np.einsum("ij,ij->j", gr, gr)
            gamma = np.einsum("ij,ij->j", gl, gr)
            denom = np.sqrt(alpha * beta)
            active = (np.abs(gamma) > OFF_DIAG_TOL * denom) & (denom > floor)
            if not np.any(active):
                continue
            with np.errstate(divide="ignore", invalid="ignore"):
                rel = np.where(denom > floor, np.abs(gamma) / denom, 0.0)
            worst = max(worst, float(rel.max()))
            rotated = True
            gamma_safe = np.where(active, gamma, 1.0)
            zeta = (beta - alpha) / (2.0 * gamma_safe)
            t = np.sign(zeta) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            t = np.where(zeta == 0.0, 1.0, t)
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            c = np.where(active, c, 1.0)
            s = np.where(active, s, 0.0)
            g[:, left], g[:, right] = c * gl - s * gr, s * gl + c * gr
            vl, vr = v[:, left], v[:, right]
            v[:, left], v[:, right] = c * vl - s * vr, s * vl + c * vr
        if not rotated:
            converged = True
    if not converged:
        raise ConvergenceError(MAX_SWEEPS, worst)

    sigma = np.sqrt(np.einsum("ij,ij->j", g, g))
    order = np.argsort(-sigma, kind="stable")
    sigma, g, v = sigma[order], g[:, order], v[:, order]
    tiny = max(m, n) * np.finfo(float).eps * (sigma[0] if n else 0.0)
    keep = sigma > tiny
    sigma = np.where(keep, sigma, 0.0)
    u = np.zeros((m, n))
    u[:, keep] = g[:, keep] / sigma[keep]
    if not np.all(keep):
        u = _complete_basis(u, keep)
    return u, sigma, v


def _fix_signs(u: np.ndarray, vt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[idx, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return u * signs, vt * signs[:, None]


def svd(a) -> SvdFactors:
    """Thin SVD of ``a`` by one-sided Jacobi rotations.

    Each left singular vector is flipped so that its largest-magnitude entry
    is positive, with ``vt`` compensating, which makes the output unique for
    distinct singular values. An all-zero input returns zero singular values
    and identity blocks.
    """
    a = as_matrix(a)
    m, n = a.shape
    if m == 0 or n == 0:
        raise ValueError("svd of an empty matrix")
    p = min(m, n)
    if not np.any(a):
        return SvdFactors(np.eye(m, p), np.zeros(p), np.eye(p, n))
    if m >= n:
        u, sigma, v = _jacobi_tall(a)
        vt = v.T
    else:
        v, sigma, u = _jacobi_tall(a.T)
        vt = v.T
    u, vt = _fix_signs(u, vt)
    return SvdFactors(np.ascontiguousarray(u), sigma, np.ascontiguousarray(vt))


def truncate(f: SvdFactors, k: int) -> SvdFactors:
    p = f.sigma.shape[0]
    if not 1 <= k <= p:
        raise ValueError(f"truncation rank {k} outside [1, {p}]")
    return SvdFactors(f.u[:, :k].copy(), f.sigma[:k].copy(), f.vt[:k, :].copy())


def orthonormality_residual(q: np.ndarray) -> float:
    """Frobenius norm of ``q.T @ q - I``."""
    return frobenius(q.T @ q - np.eye(q.shape[1]))


def grassmann(u_a, u_b, i: int, j: int, tol: float = 1e-8) -> float:
    """Subspace similarity between the top-``i`` columns of ``u_a`` and the
    top-``j`` columns of ``u_b``: ``||A_i^T B_j||_F^2 / min(i, j)``.

    Returns 1 for identical spans and 0 for orthogonal ones.
    """
    u_a = as_matrix(u_a, "first basis")
    u_b = as_matrix(u_b, "second basis")
    if u_a.shape[0] != u_b.shape[0]:
        raise ValueError(
            f"bases live in different spaces: {u_a.shape[0]} vs {u_b.shape[0]} rows"
        )
    if not 1 <= i <= u_a.shape[1] or not 1 <= j <= u_b.shape[1]:
        raise ValueError(
            f"column counts ({i}, {j}) out of range for bases with "
            f"{u_a.shape[1]} and {u_b.shape[1]} columns"
        )
    a, b = u_a[:, :i], u_b[:, :j]
    for name, q in (("first", a), ("second", b)):
        res = orthonormality_residual(q)
        if res > tol * max(1, q.shape[1]):
            raise ValueError(f"{name} basis is not orthonormal (residual {res:.3e})")
    psi = float(np.sum(np.square(a.T @ b))) / min(i, j)
    # inputs already passed the orthonormality check, so any excess is round-off
    return min(psi, 1.0)
