"""On-disk format for per-sample, per-layer flattened gradients.

Layout of a gradient directory::

    manifest.json          model_id, num_layers, layer_dims, num_train,
                           num_val, dtype ("f32"), endianness ("little"),
                           format_version (1)
    train_layer_{l}.bin    raw little-endian float32, row-major (num_train x d_l)
    val_layer_{l}.bin      raw little-endian float32, row-major (num_val x d_l)

Layers are numbered from 0. Gradients are held as float32 in memory (exactly
what is on disk); consumers upcast to float64 for arithmetic.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List

import numpy as np

FORMAT_VERSION = 1
DTYPE_TAG = "f32"
ENDIANNESS_TAG = "little"
MANIFEST_KEYS = (
    "model_id",
    "num_layers",
    "layer_dims",
    "num_train",
    "num_val",
    "dtype",
    "endianness",
    "format_version",
)
_DISK_DTYPE = np.dtype("<f4")


class GradientStoreError(ValueError):
    pass


@dataclass(frozen=True)
class Manifest:
    model_id: str
    num_layers: int
    layer_dims: List[int]
    num_train: int
    num_val: int
    dtype: str = DTYPE_TAG
    endianness: str = ENDIANNESS_TAG
    format_version: int = FORMAT_VERSION

    def to_json(self) -> str:
        payload = {key: getattr(self, key) for key in MANIFEST_KEYS}
        return json.dumps(payload, indent=2) + "\n"

    @classmethod
    def from_dict(cls, payload: dict) -> "Manifest":
        missing = [k for k in MANIFEST_KEYS if k not in payload]
        extra = [k for k in payload if k not in MANIFEST_KEYS]
        if missing or extra:
            raise GradientStoreError(f"manifest keys mismatch: missing={missing} unexpected={extra}")
        m = cls(
            model_id=str(payload["model_id"]),
            num_layers=int(payload["num_layers"]),
            layer_dims=[int(d) for d in payload["layer_dims"]],
            num_train=int(payload["num_train"]),
            num_val=int(payload["num_val"]),
            dtype=payload["dtype"],
            endianness=payload["endianness"],
            format_version=int(payload["format_version"]),
        )
        m.check()
        return m

    def check(self) -> None:
        if self.dtype != DTYPE_TAG:
            raise GradientStoreError(f"unsupported dtype {self.dtype!r}, expected {DTYPE_TAG!r}")
        if self.endianness != ENDIANNESS_TAG:
            raise GradientStoreError(f"unsupported endianness {self.endianness!r}")
        if self.format_version != FORMAT_VERSION:
            raise GradientStoreError(f"unsupported format_version {self.format_version}")
        if self.num_layers != len(self.layer_dims):
            raise GradientStoreError(
                f"num_layers={self.num_layers} but {len(self.layer_dims)} layer_dims given"
            )
        if any(d <= 0 for d in self.layer_dims) or self.num_train < 0 or self.num_val < 0:
            raise GradientStoreError("layer dims must be positive and sample counts non-negative")


@dataclass
class GradientSet:
    """Per-layer gradient matrices for the train and validation splits."""

    train: List[np.ndarray]
    val: List[np.ndarray]
    model_id: str = "unknown"
    layer_dims: List[int] = field(default_factory=list)

    def __post_init__(self):
        self.train = [np.ascontiguousarray(t, dtype=np.float32) for t in self.train]
        self.val = [np.ascontiguousarray(v, dtype=np.float32) for v in self.val]
        if not self.layer_dims:
            self.layer_dims = [t.shape[1] for t in self.train]
        self.validate()

    @property
    def num_layers(self) -> int:
        return len(self.train)

    @property
    def num_train(self) -> int:
        return self.train[0].shape[0] if self.train else 0

    @property
    def num_val(self) -> int:
        return self.val[0].shape[0] if self.val else 0

    def validate(self) -> None:
        if len(self.train) != len(self.val):
            raise GradientStoreError("train and val must have the same number of layers")
        if len(self.layer_dims) != len(self.train):
            raise GradientStoreError("layer_dims length does not match the layer count")
        for l, (tr, va, d) in enumerate(zip(self.train, self.val, self.layer_dims)):
            for split, mat, rows in (("train", tr, self.num_train), ("val", va, self.num_val)):
                if mat.ndim != 2 or mat.shape != (rows, d):
                    raise GradientStoreError(
                        f"{split} layer {l} has shape {mat.shape}, expected {(rows, d)}"
                    )
                _check_finite(mat, split, l)

    def manifest(self) -> Manifest:
        return Manifest(
            model_id=self.model_id,
            num_layers=self.num_layers,
            layer_dims=list(self.layer_dims),
            num_train=self.num_train,
            num_val=self.num_val,
        )

    def train64(self, layer: int) -> np.ndarray:
        return self.train[layer].astype(np.float64)

    def val64(self, layer: int) -> np.ndarray:
        return self.val[layer].astype(np.float64)

    def digest(self) -> str:
        """SHA-256 over the manifest and every shard, in file order."""
        h = hashlib.sha256(self.manifest().to_json().encode())
        for tr, va in zip(self.train, self.val):
            h.update(tr.astype(_DISK_DTYPE).tobytes())
            h.update(va.astype(_DISK_DTYPE).tobytes())
        return h.hexdigest()


def _check_finite(mat: np.ndarray, split: str, layer: int) -> None:
    bad = ~np.isfinite(mat)
    if bad.any():
        row = int(np.argwhere(bad)[0][0])
        raise GradientStoreError(f"non-finite gradient in {split} layer {layer}, row {row}")


def shard_name(split: str, layer: int) -> str:
    return f"{split}_layer_{layer}.bin"


def write_gradient_set(gs: GradientSet, directory) -> None:
    gs.validate()
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for l in range(gs.num_layers):
        for split, mat in (("train", gs.train[l]), ("val", gs.val[l])):
            (directory / shard_name(split, l)).write_bytes(mat.astype(_DISK_DTYPE).tobytes())
    (directory / "manifest.json").write_text(gs.manifest().to_json(), encoding="utf-8")


def read_manifest(directory) -> Manifest:
    path = Path(directory) / "manifest.json"
    if not path.is_file():
        raise GradientStoreError(f"missing manifest: {path}")
    return Manifest.from_dict(json.loads(path.read_text(encoding="utf-8")))


def read_gradient_set(directory) -> GradientSet:
    directory = Path(directory)
    manifest = read_manifest(directory)
    shards = {"train": [], "val": []}
    for l, d in enumerate(manifest.layer_dims):
        for split, rows in (("train", manifest.num_train), ("val", manifest.num_val)):
            path = directory / shard_name(split, l)
            if not path.is_file():
                raise GradientStoreError(f"missing shard {path}")
            expected = rows * d * _DISK_DTYPE.itemsize
            size = path.stat().st_size
            if size != expected:
                raise GradientStoreError(f"{path}: expected {expected} bytes, found {size}")
            mat = np.frombuffer(path.read_bytes(), dtype=_DISK_DTYPE).reshape(rows, d)
            _check_finite(mat, split, l)
            shards[split].append(mat.astype(np.float32))
    extra = sorted(
        p.name
        for p in directory.glob("*_layer_*.bin")
        if p.name not in {shard_name(s, l) for s in ("train", "val") for l in range(manifest.num_layers)}
    )
    if extra:
        raise GradientStoreError(f"shards not described by manifest: {extra}")
    return GradientSet(
        train=shards["train"],
        val=shards["val"],
        model_id=manifest.model_id,
        layer_dims=list(manifest.layer_dims),
    )
