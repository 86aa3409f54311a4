"""Fine-tuning parameterizations of a single affine layer.

Every adapter maps a batch ``x`` (batch x in_dim) to ``x @ W_eff.T + bias``
and differs only in how ``W_eff`` is stored and which tensors are trainable:

========== ============================== =========================
kind       frozen tensors                 trainable tensors
========== ============================== =========================
FullFT     (none)                         weight
LoRA       base                           lora_b, lora_a
SvfitArray u, vt                          sigma
FrozenUV   u, vt                          core
Cersa      u_p, v_pt, sigma_frozen        s_core
========== ============================== =========================

The bias is trainable for every kind and never factorized.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Union

import numpy as np

from cersa_forge import factor
from cersa_forge.linalg import as_matrix, svd, truncate
from cersa_forge.spectrum import RankSelection, check_thresholds


@dataclass(frozen=True)
class FullFT:
    name = "full_ft"

    def label(self) -> str:
        return "FullFT"


@dataclass(frozen=True)
class LoRA:
    rank: int
    name = "lora"

    def label(self) -> str:
        return f"LoRA(r={self.rank})"


@dataclass(frozen=True)
class SvfitArray:
    rank: int
    name = "svfit_array"

    def label(self) -> str:
        return f"SvfitArray(r={self.rank})"


@dataclass(frozen=True)
class FrozenUV:
    rank: int
    name = "frozen_uv"

    def label(self) -> str:
        return f"FrozenUV(r={self.rank})"


@dataclass(frozen=True)
class Cersa:
    """Three-region adapter. With ``split_rank`` set, only ``split_rank``
    retained directions are trained, taken from the top of the retained
    spectrum or (``take_top=False``) from its bottom."""

    alpha: float
    beta: float
    split_rank: int | None = None
    take_top: bool = True
    name = "cersa"

    def label(self) -> str:
        if self.split_rank is None:
            return f"Cersa(a={self.alpha:g},b={self.beta:g})"
        where = "top" if self.take_top else "bottom"
        return f"Cersa(a={self.alpha:g},{where}-{self.split_rank})"


AdapterKind = Union[FullFT, LoRA, SvfitArray, FrozenUV, Cersa]
KIND_TYPES = {cls.name: cls for cls in (FullFT, LoRA, SvfitArray, FrozenUV, Cersa)}


def validate_kind(kind: AdapterKind) -> None:
    if isinstance(kind, (LoRA, SvfitArray, FrozenUV)) and kind.rank < 1:
        raise ValueError(f"{kind.label()}: rank must be at least 1")
    if isinstance(kind, Cersa):
        check_thresholds(kind.alpha, kind.beta)
        if kind.split_rank is not None and kind.split_rank < 1:
            raise ValueError(f"{kind.label()}: split rank must be at least 1")
    if not isinstance(kind, tuple(KIND_TYPES.values())):
        raise TypeError(f"unknown adapter kind {kind!r}")


def kind_to_dict(kind: AdapterKind) -> dict:
    return {"kind": kind.name, **asdict(kind)}


def kind_from_dict(d: dict) -> AdapterKind:
    d = dict(d)
    name = d.pop("kind")
    try:
        cls = KIND_TYPES[name]
    except KeyError:
        raise ValueError(f"unknown adapter kind {name!r}; expected one of {sorted(KIND_TYPES)}")
    kind = cls(**d)
    validate_kind(kind)
    return kind


class AdapterLayer:
    """Base class: subclasses fill ``frozen`` and ``params`` and implement
    the weight path of forward and backward."""

    def __init__(self, kind: AdapterKind, out_dim: int, in_dim: int, bias):
        self.kind = kind
        self.out_dim = out_dim
        self.in_dim = in_dim
        self.frozen: dict[str, np.ndarray] = {}
        self.params: dict[str, np.ndarray] = {"bias": np.array(bias, dtype=np.float64)}
        self.selection: RankSelection | None = None

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = as_matrix(x, "input")
        if x.shape[1] != self.in_dim:
            raise ValueError(f"input has {x.shape[1]} features, layer expects {self.in_dim}")
        return x

    def forward(self, x) -> np.ndarray:
        x = self._check_input(x)
        return self._apply(x) + self.params["bias"]

    def grad(self, x, upstream) -> tuple[dict[str, np.ndarray], np.ndarray]:
        x = self._check_input(x)
        g = as_matrix(upstream, "upstream gradient")
        if g.shape != (x.shape[0], self.out_dim):
            raise ValueError(
                f"upstream gradient has shape {g.shape}, expected {(x.shape[0], self.out_dim)}"
            )
        grads, dx = self._backward(x, g)
        grads["bias"] = g.sum(axis=0)
        return grads, dx

    def trainable_count(self, include_bias: bool = True) -> int:
        return sum(v.size for k, v in self.params.items() if include_bias or k != "bias")

    def frozen_count(self) -> int:
        return sum(v.size for v in self.frozen.values())

    def effective_weight(self) -> np.ndarray:
        raise NotImplementedError

    def _apply(self, x: np.ndarray) -> np.ndarray:
        return x @ self.effective_weight().T

    def _backward(self, x, g):
        raise NotImplementedError


class FullLayer(AdapterLayer):
    def __init__(self, kind, w0, bias0):
        super().__init__(kind, *w0.shape, bias0)
        self.params["weight"] = w0.copy()

    def effective_weight(self):
        return self.params["weight"]

    def _backward(self, x, g):
        w = self.params["weight"]
        return {"weight": g.T @ x}, g @ w


class LoRALayer(AdapterLayer):
    def __init__(self, kind, w0, bias0, rng):
        super().__init__(kind, *w0.shape, bias0)
        r = kind.rank
        self.frozen["base"] = w0.copy()
        self.params["lora_b"] = np.zeros((self.out_dim, r))
        self.params["lora_a"] = rng.standard_normal((r, self.in_dim)) / np.sqrt(r)

    def effective_weight(self):
        return self.frozen["base"] + self.params["lora_b"] @ self.params["lora_a"]

    def _apply(self, x):
        a, b = self.params["lora_a"], self.params["lora_b"]
        return x @ self.frozen["base"].T + (x @ a.T) @ b.T

    def _backward(self, x, g):
        a, b = self.params["lora_a"], self.params["lora_b"]
        h = x @ a.T
        gb = g @ b
        grads = {"lora_b": g.T @ h, "lora_a": gb.T @ x}
        return grads, g @ self.frozen["base"] + gb @ a


def _truncated_basis(w0: np.ndarray, rank: int, kind: AdapterKind):
    p = min(w0.shape)
    if rank > p:
        raise ValueError(f"{kind.label()}: rank {rank} exceeds min dimension {p}")
    return truncate(svd(w0), rank)


class SvfitLayer(AdapterLayer):
    def __init__(self, kind, w0, bias0):
        super().__init__(kind, *w0.shape, bias0)
        f = _truncated_basis(w0, kind.rank, kind)
        self.frozen["u"] = f.u
        self.frozen["vt"] = f.vt
        self.params["sigma"] = f.sigma.copy()

    def effective_weight(self):
        return (self.frozen["u"] * self.params["sigma"]) @ self.frozen["vt"]

    def _apply(self, x):
        return ((x @ self.frozen["vt"].T) * self.params["sigma"]) @ self.frozen["u"].T

    def _backward(self, x, g):
        h = x @ self.frozen["vt"].T
        gu = g @ self.frozen["u"]
        grads = {"sigma": np.einsum("bi,bi->i", h, gu)}
        return grads, (gu * self.params["sigma"]) @ self.frozen["vt"]


class FrozenUVLayer(AdapterLayer):
    def __init__(self, kind, w0, bias0):
        super().__init__(kind, *w0.shape, bias0)
        f = _truncated_basis(w0, kind.rank, kind)
        self.frozen["u"] = f.u
        self.frozen["vt"] = f.vt
        self.params["core"] = np.diag(f.sigma)

    def effective_weight(self):
        return (self.frozen["u"] @ self.params["core"]) @ self.frozen["vt"]

    def _apply(self, x):
        return ((x @ self.frozen["vt"].T) @ self.params["core"].T) @ self.frozen["u"].T

    def _backward(self, x, g):
        h = x @ self.frozen["vt"].T
        gu = g @ self.frozen["u"]
        grads = {"core": gu.T @ h}
        return grads, (gu @ self.params["core"]) @ self.frozen["vt"]


class CersaLayer(AdapterLayer):
    def __init__(self, kind, w0, bias0):
        super().__init__(kind, *w0.shape, bias0)
        if kind.split_rank is None:
            f = factor.factorize(w0, kind.alpha, kind.beta)
        else:
            f = factor.split_variant(w0, kind.alpha, kind.take_top, kind.split_rank)
        self.core_start = f.core_start
        self.selection = f.selection
        self.frozen["u_p"] = f.u_p
        self.frozen["v_pt"] = f.v_pt
        self.frozen["sigma_frozen"] = f.sigma_frozen
        self.params["s_core"] = f.s_core

    def factors(self) -> factor.CersaFactors:
        """Snapshot of the current factorization."""
        return factor.CersaFactors(
            u_p=self.frozen["u_p"],
            v_pt=self.frozen["v_pt"],
            s_core=self.params["s_core"].copy(),
            sigma_frozen=self.frozen["sigma_frozen"],
            selection=self.selection,
            core_start=self.core_start,
        )

    def effective_weight(self):
        return factor.effective_weight(self.factors())

    def _split(self):
        k = self.frozen["u_p"].shape[1]
        kc = self.params["s_core"].shape[0]
        core = slice(self.core_start, self.core_start + kc)
        idx = np.arange(k)
        frozen = np.concatenate([idx[: self.core_start], idx[self.core_start + kc :]])
        return core, frozen

    def _apply(self, x):
        core, frozen = self._split()
        h = x @ self.frozen["v_pt"].T
        z = np.empty_like(h)
        z[:, core] = h[:, core] @ self.params["s_core"].T
        z[:, frozen] = h[:, frozen] * self.frozen["sigma_frozen"]
        return z @ self.frozen["u_p"].T

    def _backward(self, x, g):
        core, frozen = self._split()
        h = x @ self.frozen["v_pt"].T
        gu = g @ self.frozen["u_p"]
        grads = {"s_core": gu[:, core].T @ h[:, core]}
        dh = np.empty_like(gu)
        dh[:, core] = gu[:, core] @ self.params["s_core"]
        dh[:, frozen] = gu[:, frozen] * self.frozen["sigma_frozen"]
        return grads, dh @ self.frozen["v_pt"]


def build(kind: AdapterKind, w0, bias0=None, seed: int = 0) -> AdapterLayer:
    validate_kind(kind)
    w0 = as_matrix(w0, "base weight")
    bias0 = np.zeros(w0.shape[0]) if bias0 is None else np.asarray(bias0, dtype=np.float64)
    if bias0.shape != (w0.shape[0],):
        raise ValueError(f"bias has shape {bias0.shape}, expected ({w0.shape[0]},)")
    if isinstance(kind, FullFT):
        return FullLayer(kind, w0, bias0)
    if isinstance(kind, LoRA):
        return LoRALayer(kind, w0, bias0, np.random.default_rng(seed))
    if isinstance(kind, SvfitArray):
        return SvfitLayer(kind, w0, bias0)
    if isinstance(kind, FrozenUV):
        return FrozenUVLayer(kind, w0, bias0)
    return CersaLayer(kind, w0, bias0)


def forward(layer: AdapterLayer, x) -> np.ndarray:
    return layer.forward(x)


def grad(layer: AdapterLayer, x, upstream):
    return layer.grad(x, upstream)


def trainable_count(layer: AdapterLayer, include_bias: bool = True) -> int:
    return layer.trainable_count(include_bias)


def closed_form_trainable(kind: AdapterKind, m: int, n: int, k_beta: int | None = None) -> int:
    """Trainable weight parameters (bias excluded) for an m x n layer."""
    if isinstance(kind, FullFT):
        return m * n
    if isinstance(kind, LoRA):
        return kind.rank * (m + n)
    if isinstance(kind, SvfitArray):
        return kind.rank
    if isinstance(kind, FrozenUV):
        return kind.rank**2
    if k_beta is None:
        raise ValueError("Cersa trainable count needs the selected core rank")
    return k_beta**2
