"""A small pre-LayerNorm transformer classifier with hand-written backprop.

Architecture, per block ``l``::

    h  = LN1(x);  x = x + Attn(h) @ Wo^T       (Attn uses Wq, Wk, Wv)
    h2 = LN2(x);  x = x + gelu(h2 @ Wup^T) @ Wdown^T

followed by a final LayerNorm on the last position and a linear head. All
weight matrices are stored as (out_features, in_features). Attention is
bidirectional; only the last position feeds the classifier.

A block's *flattened gradient* concatenates the row-major gradients of
``wq, wk, wv, wo, w_up, w_down`` in that order. LayerNorm gains/biases,
embeddings and the head are trained but never scored or pruned.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

BLOCK_MATRICES = ("wq", "wk", "wv", "wo", "w_up", "w_down")
_GELU_C = np.sqrt(2.0 / np.pi)
_LN_EPS = 1e-5


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class ToyConfig:
    num_blocks: int = 4
    d_model: int = 32
    n_heads: int = 2
    d_ff: int = 64
    vocab: int = 16
    seq_len: int = 16
    num_classes: int = 4
    rng_seed: int = 0

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")

    @property
    def block_dim(self) -> int:
        return 4 * self.d_model * self.d_model + 2 * self.d_model * self.d_ff

    def to_dict(self) -> dict:
        return asdict(self)


def _matrix_shapes(cfg: ToyConfig) -> Dict[str, Tuple[int, int]]:
    d, f = cfg.d_model, cfg.d_ff
    return {"wq": (d, d), "wk": (d, d), "wv": (d, d), "wo": (d, d), "w_up": (f, d), "w_down": (d, f)}


class ToyTransformer:
    """Parameters live in ``self.params``, a flat name -> float64 array dict."""

    def __init__(self, config: ToyConfig = ToyConfig(), params: Optional[Dict[str, np.ndarray]] = None):
        self.config = config
        self.params = params if params is not None else self._init_params()

    def _init_params(self) -> Dict[str, np.ndarray]:
        cfg = self.config
        rng = np.random.default_rng(cfg.rng_seed)
        d = cfg.d_model
        p: Dict[str, np.ndarray] = {
            "tok_emb": rng.normal(0.0, 1.0, (cfg.vocab, d)),
            "pos_emb": rng.normal(0.0, 1.0, (cfg.seq_len, d)),
        }
        for b in range(cfg.num_blocks):
            p[f"block{b}.ln1_g"] = np.ones(d)
            p[f"block{b}.ln1_b"] = np.zeros(d)
            p[f"block{b}.ln2_g"] = np.ones(d)
            p[f"block{b}.ln2_b"] = np.zeros(d)
            for name, shape in _matrix_shapes(cfg).items():
                p[f"block{b}.{name}"] = rng.normal(0.0, 1.0 / np.sqrt(shape[1]), shape)
        p["lnf_g"] = np.ones(d)
        p["lnf_b"] = np.zeros(d)
        p["w_head"] = rng.normal(0.0, 1.0 / np.sqrt(d), (cfg.num_classes, d))
        p["b_head"] = np.zeros(cfg.num_classes)
        return p

    def copy(self) -> "ToyTransformer":
        return ToyTransformer(self.config, copy.deepcopy(self.params))

    def block_matrix_names(self, block: int) -> List[str]:
        return [f"block{block}.{name}" for name in BLOCK_MATRICES]

    def prunable_names(self) -> List[str]:
        return [n for b in range(self.config.num_blocks) for n in self.block_matrix_names(b)]

    def block_vector(self, block: int) -> np.ndarray:
        return np.concatenate([self.params[n].ravel() for n in self.block_matrix_names(block)])

    def set_block_vector(self, block: int, flat: np.ndarray) -> None:
        offset = 0
        for n in self.block_matrix_names(block):
            size = self.params[n].size
            self.params[n] = np.asarray(flat[offset : offset + size], dtype=np.float64).reshape(
                self.params[n].shape
            ).copy()
            offset += size

    # ------------------------------------------------------------------ forward

    def forward(self, tokens: np.ndarray, record_inputs: bool = False):
        """Return logits (B, C) and a cache for :meth:`backward`.

        With ``record_inputs`` the cache also maps every prunable matrix name to
        the activations it consumed, shaped (B*T, in_features).
        """
        cfg = self.config
        p = self.params
        tokens = np.asarray(tokens)
        B, T = tokens.shape
        H = cfg.n_heads
        dh = cfg.d_model // H
        x = p["tok_emb"][tokens] + p["pos_emb"][None, :T]
        cache = {"tokens": tokens, "blocks": []}
        inputs = {} if record_inputs else None
        for b in range(cfg.num_blocks):
            pre = f"block{b}."
            bc = {}
            h, bc["ln1"] = _layernorm(x, p[pre + "ln1_g"], p[pre + "ln1_b"])
            q = _split_heads(h @ p[pre + "wq"].T, H)
            k = _split_heads(h @ p[pre + "wk"].T, H)
            v = _split_heads(h @ p[pre + "wv"].T, H)
            att = (q @ k.transpose(0, 1, 3, 2)) / np.sqrt(dh)
            att = att - att.max(axis=-1, keepdims=True)
            probs = np.exp(att)
            probs /= probs.sum(axis=-1, keepdims=True)
            a = _merge_heads(probs @ v)
            x = x + a @ p[pre + "wo"].T
            h2, bc["ln2"] = _layernorm(x, p[pre + "ln2_g"], p[pre + "ln2_b"])
            u = h2 @ p[pre + "w_up"].T
            z = _gelu(u)
            x = x + z @ p[pre + "w_down"].T
            bc.update(h=h, q=q, k=k, v=v, probs=probs, a=a, h2=h2, u=u, z=z)
            cache["blocks"].append(bc)
            if inputs is not None:
                flat = lambda arr: arr.reshape(B * T, -1)
                inputs[pre + "wq"] = inputs[pre + "wk"] = inputs[pre + "wv"] = flat(h)
                inputs[pre + "wo"] = flat(a)
                inputs[pre + "w_up"] = flat(h2)
                inputs[pre + "w_down"] = flat(z)
        last = x[:, -1, :]
        y, cache["lnf"] = _layernorm(last, p["lnf_g"], p["lnf_b"])
        logits = y @ p["w_head"].T + p["b_head"]
        cache.update(y=y, T=T)
        if inputs is not None:
            cache["inputs"] = inputs
        return logits, cache

    def logits(self, tokens: np.ndarray) -> np.ndarray:
        return self.forward(tokens)[0]

    # ----------------------------------------------------------------- backward

    def backward(self, cache, dlogits: np.ndarray, per_sample: bool = False) -> Dict[str, np.ndarray]:
        """Backpropagate ``dlogits`` (B, C).

        With ``per_sample`` every gradient keeps a leading batch axis, so row
        ``i`` is the gradient of whatever scalar ``dlogits[i]`` belongs to.
        """
        cfg = self.config
        p = self.params
        B = dlogits.shape[0]
        T = cache["T"]
        H = cfg.n_heads
        dh = cfg.d_model // H
        sum_bt = "bto,bti->boi" if per_sample else "bto,bti->oi"
        sum_vec = (lambda arr: arr.reshape(B, -1, arr.shape[-1]).sum(axis=1)) if per_sample else (
            lambda arr: arr.reshape(-1, arr.shape[-1]).sum(axis=0)
        )
        grads: Dict[str, np.ndarray] = {}

        y = cache["y"]
        grads["w_head"] = np.einsum("bo,bi->boi" if per_sample else "bo,bi->oi", dlogits, y)
        grads["b_head"] = dlogits.copy() if per_sample else dlogits.sum(axis=0)
        dy = dlogits @ p["w_head"]
        dlast, grads["lnf_g"], grads["lnf_b"] = _layernorm_backward(dy, cache["lnf"], p["lnf_g"], per_sample, sum_vec)
        dx = np.zeros((B, T, cfg.d_model))
        dx[:, -1, :] = dlast

        for b in reversed(range(cfg.num_blocks)):
            pre = f"block{b}."
            bc = cache["blocks"][b]
            # MLP branch.
            dz = dx @ p[pre + "w_down"]
            grads[pre + "w_down"] = np.einsum(sum_bt, dx, bc["z"])
            du = dz * _gelu_grad(bc["u"])
            grads[pre + "w_up"] = np.einsum(sum_bt, du, bc["h2"])
            dh2 = du @ p[pre + "w_up"]
            dres, grads[pre + "ln2_g"], grads[pre + "ln2_b"] = _layernorm_backward(
                dh2, bc["ln2"], p[pre + "ln2_g"], per_sample, sum_vec
            )
            dx = dx + dres
            # Attention branch.
            grads[pre + "wo"] = np.einsum(sum_bt, dx, bc["a"])
            da = _split_heads(dx @ p[pre + "wo"], H)
            probs, q, k, v = bc["probs"], bc["q"], bc["k"], bc["v"]
            dprobs = da @ v.transpose(0, 1, 3, 2)
            dv = probs.transpose(0, 1, 3, 2) @ da
            datt = probs * (dprobs - np.sum(dprobs * probs, axis=-1, keepdims=True))
            datt /= np.sqrt(dh)
            dq = datt @ k
            dk = datt.transpose(0, 1, 3, 2) @ q
            h = bc["h"]
            dh_total = np.zeros_like(h)
            for name, dproj in (("wq", dq), ("wk", dk), ("wv", dv)):
                dproj = _merge_heads(dproj)
                grads[pre + name] = np.einsum(sum_bt, dproj, h)
                dh_total += dproj @ p[pre + name]
            dres, grads[pre + "ln1_g"], grads[pre + "ln1_b"] = _layernorm_backward(
                dh_total, bc["ln1"], p[pre + "ln1_g"], per_sample, sum_vec
            )
            dx = dx + dres

        tokens = cache["tokens"]
        if per_sample:
            tok = np.zeros((B,) + p["tok_emb"].shape)
            for i in range(B):
                np.add.at(tok[i], tokens[i], dx[i])
            grads["tok_emb"] = tok
            pos = np.zeros((B,) + p["pos_emb"].shape)
            pos[:, :T] = dx
            grads["pos_emb"] = pos
        else:
            tok = np.zeros_like(p["tok_emb"])
            np.add.at(tok, tokens.ravel(), dx.reshape(-1, cfg.d_model))
            grads["tok_emb"] = tok
            pos = np.zeros_like(p["pos_emb"])
            pos[:T] = dx.sum(axis=0)
            grads["pos_emb"] = pos
        return grads

    def loss_and_grads(self, tokens, labels) -> Tuple[float, Dict[str, np.ndarray]]:
        """Mean cross-entropy over the batch and its parameter gradients."""
        logits, cache = self.forward(tokens)
        losses, dlogits = cross_entropy(logits, labels)
        grads = self.backward(cache, dlogits / len(labels))
        return float(losses.mean()), grads

    def per_sample_block_grads(self, tokens, labels) -> List[np.ndarray]:
        """Per-sample flattened block gradients: ``num_blocks`` arrays of (B, d_l)."""
        logits, cache = self.forward(tokens)
        _, dlogits = cross_entropy(logits, labels)
        grads = self.backward(cache, dlogits, per_sample=True)
        B = len(labels)
        return [
            np.concatenate([grads[n].reshape(B, -1) for n in self.block_matrix_names(b)], axis=1)
            for b in range(self.config.num_blocks)
        ]

    def sample_losses(self, tokens, labels) -> np.ndarray:
        return cross_entropy(self.logits(tokens), labels)[0]


# ---------------------------------------------------------------------- helpers


def cross_entropy(logits: np.ndarray, labels) -> Tuple[np.ndarray, np.ndarray]:
    """Per-sample CE losses and d(loss_i)/d(logits_i)."""
    labels = np.asarray(labels)
    shifted = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(len(labels))
    losses = logsum - shifted[rows, labels]
    probs = np.exp(shifted - logsum[:, None])
    probs[rows, labels] -= 1.0
    return losses, probs


def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    B, T, d = x.shape
    return x.reshape(B, T, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    B, H, T, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, T, H * dh)


def _layernorm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = (x - mu) * inv
    return xhat * g + b, (xhat, inv)


def _layernorm_backward(dy, cache, g, per_sample, sum_vec):
    xhat, inv = cache
    if dy.ndim == 2:
        dg = dy * xhat if per_sample else (dy * xhat).sum(axis=0)
        db = dy.copy() if per_sample else dy.sum(axis=0)
    else:
        dg = sum_vec(dy * xhat)
        db = sum_vec(dy)
    dxhat = dy * g
    dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, dg, db


def _gelu(u):
    return 0.5 * u * (1.0 + np.tanh(_GELU_C * (u + 0.044715 * u**3)))


def _gelu_grad(u):
    t = np.tanh(_GELU_C * (u + 0.044715 * u**3))
    return 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * u * u)
