"""Forward pass of a LoRA mixture-of-experts linear layer."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from ..numerics import softmax_topk


@dataclass
class LoraMoeLayer:
    """Frozen base ``w0`` (m x n) plus ``s`` low-rank experts ``A_j B_j``.

    ``A_j`` is (m x r), ``B_j`` is (r x n) and the router ``w_router`` is
    (n x s), producing expert logits ``x @ w_router``.
    """

    w0: np.ndarray
    a: List[np.ndarray]
    b: List[np.ndarray]
    w_router: np.ndarray
    top_k: int = 1

    @property
    def num_experts(self) -> int:
        return len(self.a)

    @classmethod
    def init(cls, w0: np.ndarray, num_experts: int, rank: int, top_k: int = 1, seed: int = 0) -> "LoraMoeLayer":
        """Gaussian ``A``, zero ``B``: the layer starts out equal to ``w0``."""
        m, n = w0.shape
        if not 1 <= rank < min(m, n):
            raise ValueError(f"rank must be in [1, {min(m, n)}), got {rank}")
        rng = np.random.default_rng(seed)
        a = [rng.normal(0.0, 1.0 / np.sqrt(rank), (m, rank)) for _ in range(num_experts)]
        b = [np.zeros((rank, n)) for _ in range(num_experts)]
        router = rng.normal(0.0, 1.0 / np.sqrt(n), (n, num_experts))
        return cls(np.asarray(w0, dtype=np.float64), a, b, router, top_k)


def lora_moe_forward(layer: LoraMoeLayer, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    m, n = layer.w0.shape
    if x.shape != (n,):
        raise ValueError(f"input has shape {x.shape}, expected ({n},)")
    if len(layer.a) != len(layer.b) or layer.w_router.shape != (n, layer.num_experts):
        raise ValueError("expert / router dimensions are inconsistent")
    if not 1 <= layer.top_k <= layer.num_experts:
        raise ValueError(f"top_k must be in [1, {layer.num_experts}]")
    gates = softmax_topk(x @ layer.w_router, layer.top_k)
    out = layer.w0 @ x
    for j in np.flatnonzero(gates):
        a, b = layer.a[j], layer.b[j]
        if a.shape[0] != m or b.shape[1] != n or a.shape[1] != b.shape[0]:
            raise ValueError(f"expert {j} has mismatched shapes {a.shape} and {b.shape}")
        out = out + gates[j] * (a @ (b @ x))
    return out
