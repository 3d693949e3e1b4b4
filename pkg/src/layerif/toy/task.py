"""Synthetic modular-sum classification over random token sequences."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Tuple

import numpy as np

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class TaskConfig:
    """Label = (sum of the last ``num_terms`` tokens) mod ``num_classes``."""

    vocab: int = 16
    seq_len: int = 16
    num_classes: int = 4
    num_terms: int = 2
    sizes: Tuple[int, int, int] = (512, 64, 256)
    rng_seed: int = 0


@dataclass
class SyntheticTask:
    config: TaskConfig
    tokens: Dict[str, np.ndarray]
    labels: Dict[str, np.ndarray]

    def split(self, name: str) -> Tuple[np.ndarray, np.ndarray]:
        return self.tokens[name], self.labels[name]

    def to_json(self) -> str:
        cfg = self.config
        payload = {
            "format_version": 1,
            "config": {
                "vocab": cfg.vocab,
                "seq_len": cfg.seq_len,
                "num_classes": cfg.num_classes,
                "num_terms": cfg.num_terms,
                "sizes": list(cfg.sizes),
                "rng_seed": cfg.rng_seed,
            },
            "splits": {
                s: {"tokens": self.tokens[s].tolist(), "labels": self.labels[s].tolist()} for s in SPLITS
            },
        }
        return json.dumps(payload, separators=(",", ":")) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "SyntheticTask":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        c = payload["config"]
        cfg = TaskConfig(
            vocab=c["vocab"],
            seq_len=c["seq_len"],
            num_classes=c["num_classes"],
            num_terms=c["num_terms"],
            sizes=tuple(c["sizes"]),
            rng_seed=c["rng_seed"],
        )
        tokens = {s: np.asarray(payload["splits"][s]["tokens"], dtype=np.int64).reshape(-1, cfg.seq_len) for s in SPLITS}
        labels = {s: np.asarray(payload["splits"][s]["labels"], dtype=np.int64) for s in SPLITS}
        return cls(cfg, tokens, labels)


def label_of(seq: np.ndarray, cfg: TaskConfig) -> np.ndarray:
    return np.asarray(seq)[..., -cfg.num_terms :].sum(axis=-1) % cfg.num_classes


def generate_task(cfg: TaskConfig = TaskConfig()) -> SyntheticTask:
    if min(cfg.sizes) < 1:
        raise ValueError(f"split sizes must be >= 1, got {cfg.sizes}")
    if not 1 <= cfg.num_terms <= cfg.seq_len:
        raise ValueError("num_terms must be in [1, seq_len]")
    rng = np.random.default_rng(cfg.rng_seed)
    total = sum(cfg.sizes)
    seen = set()
    rows = []
    while len(rows) < total:
        seq = rng.integers(0, cfg.vocab, size=cfg.seq_len)
        key = seq.tobytes()
        if key in seen:
            continue
        seen.add(key)
        rows.append(seq)
    all_tokens = np.stack(rows).astype(np.int64)
    tokens, labels = {}, {}
    start = 0
    for name, size in zip(SPLITS, cfg.sizes):
        tokens[name] = all_tokens[start : start + size]
        labels[name] = label_of(tokens[name], cfg).astype(np.int64)
        start += size
    return SyntheticTask(cfg, tokens, labels)
