"""Adam training, evaluation and gradient dumping for the toy transformer."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from ..gradient_store import GradientSet, write_gradient_set
from .model import ToyTransformer, TrainingDivergedError, cross_entropy
from .task import SyntheticTask


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    lr: float = 3e-3
    batch_size: int = 32
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0


def evaluate(model: ToyTransformer, tokens, labels, batch_size: int = 256) -> Tuple[float, float]:
    """Accuracy and mean cross-entropy. Argmax ties resolve to the lowest class."""
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ValueError("cannot evaluate an empty split")
    correct = 0
    loss_total = 0.0
    for start in range(0, len(labels), batch_size):
        logits = model.logits(tokens[start : start + batch_size])
        batch_labels = labels[start : start + batch_size]
        losses, _ = cross_entropy(logits, batch_labels)
        correct += int(np.sum(np.argmax(logits, axis=1) == batch_labels))
        loss_total += float(losses.sum())
    return correct / len(labels), loss_total / len(labels)


def train(model: ToyTransformer, task: SyntheticTask, cfg: TrainConfig = TrainConfig()):
    """Train a copy of ``model`` on the task's train split.

    Returns ``(trained_model, loss_curve)`` where ``loss_curve[0]`` is the
    full-train-set loss before training and ``loss_curve[e]`` after epoch e.
    """
    if cfg.epochs < 1:
        raise ValueError("epochs must be >= 1")
    model = model.copy()
    X, y = task.split("train")
    rng = np.random.default_rng(cfg.seed)
    m = {k: np.zeros_like(v) for k, v in model.params.items()}
    s = {k: np.zeros_like(v) for k, v in model.params.items()}
    step = 0
    curve: List[float] = [evaluate(model, X, y)[1]]
    for _ in range(cfg.epochs):
        order = rng.permutation(len(y))
        for start in range(0, len(y), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grads = model.loss_and_grads(X[idx], y[idx])
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"loss became {loss} at step {step}")
            step += 1
            for name, grad in grads.items():
                m[name] = cfg.beta1 * m[name] + (1 - cfg.beta1) * grad
                s[name] = cfg.beta2 * s[name] + (1 - cfg.beta2) * grad * grad
                mhat = m[name] / (1 - cfg.beta1**step)
                shat = s[name] / (1 - cfg.beta2**step)
                model.params[name] = model.params[name] - cfg.lr * mhat / (np.sqrt(shat) + cfg.eps)
        epoch_loss = evaluate(model, X, y)[1]
        if not np.isfinite(epoch_loss):
            raise TrainingDivergedError(f"train loss became {epoch_loss}")
        curve.append(epoch_loss)
    return model, curve


def per_sample_gradients(model: ToyTransformer, tokens, labels, chunk: int = 64) -> List[np.ndarray]:
    """Per-sample block gradients as ``num_blocks`` float64 arrays of shape (n, d_l).

    Chunks are processed in order and concatenated, so the result does not
    depend on ``chunk``.
    """
    labels = np.asarray(labels)
    parts: List[List[np.ndarray]] = [[] for _ in range(model.config.num_blocks)]
    for start in range(0, len(labels), chunk):
        blocks = model.per_sample_block_grads(tokens[start : start + chunk], labels[start : start + chunk])
        for b, g in enumerate(blocks):
            parts[b].append(g)
    d = model.config.block_dim
    return [np.concatenate(p, axis=0) if p else np.zeros((0, d)) for p in parts]


def gradient_set(model: ToyTransformer, task: SyntheticTask, model_id: str = "toy") -> GradientSet:
    Xtr, ytr = task.split("train")
    Xva, yva = task.split("val")
    if len(ytr) == 0 or len(yva) == 0:
        raise ValueError("train and val splits must be nonempty")
    train = per_sample_gradients(model, Xtr, ytr)
    val = per_sample_gradients(model, Xva, yva)
    return GradientSet(train=train, val=val, model_id=model_id, layer_dims=[model.config.block_dim] * len(train))


def dump_gradients(model: ToyTransformer, task: SyntheticTask, directory, model_id: str = "toy") -> GradientSet:
    gs = gradient_set(model, task, model_id)
    write_gradient_set(gs, directory)
    return gs
