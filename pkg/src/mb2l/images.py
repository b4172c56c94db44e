"""Low-level (trainable) and high-level (frozen) image encoders.

The low-level path is a small residual conv stack trained jointly with the
rest of the model.  The high-level path stands in for a pretrained backbone:
a seeded random conv stack whose parameters never receive updates — gradients
still flow *through* it into the foveation gate, they just never touch its
weights.  Real backbone features can be substituted via the precomputed
feature-file hook at evaluation time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DataFormatError, InvalidParameterError

__all__ = [
    "ImageEncoderConfig",
    "ShallowResidualEncoder",
    "FrozenRandomEncoder",
    "build_image_encoder",
    "encode_image_low",
    "encode_image_high",
    "save_precomputed_features",
    "load_precomputed_features",
]

ENCODER_KINDS = ("shallow_trainable", "frozen_high")


@dataclass(frozen=True)
class ImageEncoderConfig:
    kind: str
    depth: int = 2
    width: int = 16
    out_dim: int = 64
    seed: int = 0
    in_channels: int = 3
    bias: bool = True

    def __post_init__(self):
        if self.kind not in ENCODER_KINDS:
            raise InvalidParameterError(f"kind must be one of {ENCODER_KINDS}, got {self.kind!r}")
        if self.depth < 1 or self.width < 1 or self.out_dim < 1:
            raise InvalidParameterError("depth, width and out_dim must all be >= 1")
        if self.in_channels not in (1, 3):
            raise InvalidParameterError("in_channels must be 1 or 3")


def _he(rng, shape, fan_in, dtype):
    return (np.sqrt(2.0 / fan_in) * rng.standard_normal(shape)).astype(dtype)


def _as_image_batch(x, in_channels: int) -> tuple[Tensor, bool]:
    x = ad.as_tensor(x)
    squeeze = x.ndim == 3
    if squeeze:
        x = ad.reshape(x, (1,) + x.shape)
    if x.ndim != 4 or x.shape[3] != in_channels:
        raise InvalidParameterError(
            f"expected (H, W, {in_channels}) or (B, H, W, {in_channels}), got {x.shape}"
        )
    return x, squeeze


class ShallowResidualEncoder:
    """Strided stem + `depth` residual blocks at halving resolution + GAP + linear.

    Input spatial size must be divisible by 2^(depth+1).
    """

    def __init__(self, cfg: ImageEncoderConfig, dtype=np.float32):
        if cfg.kind != "shallow_trainable":
            raise InvalidParameterError(f"ShallowResidualEncoder needs kind=shallow_trainable, got {cfg.kind!r}")
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        w = cfg.width
        bias = cfg.bias
        self.stem_w = ad.parameter(_he(rng, (3, 3, cfg.in_channels, w), 9 * cfg.in_channels, dtype))
        self.stem_b = ad.parameter(np.zeros(w, dtype=dtype)) if bias else None
        self.blocks = []
        for _ in range(cfg.depth):
            c1 = ad.parameter(_he(rng, (3, 3, w, w), 9 * w, dtype))
            c2 = ad.parameter(_he(rng, (3, 3, w, w), 9 * w, dtype))
            b1 = ad.parameter(np.zeros(w, dtype=dtype)) if bias else None
            b2 = ad.parameter(np.zeros(w, dtype=dtype)) if bias else None
            self.blocks.append((c1, b1, c2, b2))
        self.head_w = ad.parameter(_he(rng, (w, cfg.out_dim), w, dtype))
        self.head_b = ad.parameter(np.zeros(cfg.out_dim, dtype=dtype)) if bias else None

    def __call__(self, x) -> Tensor:
        x, squeeze = _as_image_batch(x, self.cfg.in_channels)
        h = ad.conv2d(x, self.stem_w, bias=self.stem_b, stride=2, padding=1)
        h = ad.gelu(h)
        for c1, b1, c2, b2 in self.blocks:
            h = ad.avg_pool2d(h, 2)
            r = ad.conv2d(h, c1, bias=b1, stride=1, padding=1)
            r = ad.conv2d(ad.gelu(r), c2, bias=b2, stride=1, padding=1)
            h = ad.gelu(h + r)
        pooled = h.mean(axis=(1, 2))  # (B, width)
        out = pooled @ self.head_w
        if self.head_b is not None:
            out = out + self.head_b
        return out[0] if squeeze else out

    def parameters(self, prefix: str = "img_low") -> dict[str, Tensor]:
        out = {f"{prefix}.stem_w": self.stem_w, f"{prefix}.head_w": self.head_w}
        if self.stem_b is not None:
            out[f"{prefix}.stem_b"] = self.stem_b
            out[f"{prefix}.head_b"] = self.head_b
        for i, (c1, b1, c2, b2) in enumerate(self.blocks):
            out[f"{prefix}.block{i}.c1"] = c1
            out[f"{prefix}.block{i}.c2"] = c2
            if b1 is not None:
                out[f"{prefix}.block{i}.b1"] = b1
                out[f"{prefix}.block{i}.b2"] = b2
        return out


class FrozenRandomEncoder:
    """Seeded random conv stack; a deterministic function of (image, seed).

    Parameters are constants: they never appear in parameters() and never
    hold gradients, but gradients do flow through to the input image.
    """

    def __init__(self, cfg: ImageEncoderConfig, dtype=np.float32):
        if cfg.kind != "frozen_high":
            raise InvalidParameterError(f"FrozenRandomEncoder needs kind=frozen_high, got {cfg.kind!r}")
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self._convs = []
        cin = cfg.in_channels
        width = cfg.width
        for _ in range(cfg.depth):
            w = ad.Tensor(_he(rng, (3, 3, cin, width), 9 * cin, dtype))
            b = ad.Tensor(np.zeros(width, dtype=dtype))
            self._convs.append((w, b))
            cin = width
            width *= 2
        self._head = ad.Tensor(_he(rng, (cin, cfg.out_dim), cin, dtype))

    def __call__(self, x) -> Tensor:
        x, squeeze = _as_image_batch(x, self.cfg.in_channels)
        h = x
        for w, b in self._convs:
            h = ad.gelu(ad.conv2d(h, w, bias=b, stride=2, padding=1))
        out = h.mean(axis=(1, 2)) @ self._head
        return out[0] if squeeze else out

    def parameters(self, prefix: str = "img_high") -> dict[str, Tensor]:
        return {}  # frozen: nothing trainable

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(self._convs):
            out[f"conv{i}.w"] = w.data
            out[f"conv{i}.b"] = b.data
        out["head"] = self._head.data
        return out

    def state_bytes(self) -> bytes:
        return b"".join(a.tobytes() for a in self.state_arrays().values())


def build_image_encoder(cfg: ImageEncoderConfig, dtype=np.float32):
    if cfg.kind == "shallow_trainable":
        return ShallowResidualEncoder(cfg, dtype=dtype)
    return FrozenRandomEncoder(cfg, dtype=dtype)


def encode_image_low(img, cfg: ImageEncoderConfig) -> Tensor:
    """One image through a freshly built trainable encoder (seeded, so
    repeated calls are bit-identical)."""
    if cfg.kind != "shallow_trainable":
        raise InvalidParameterError(f"encode_image_low needs kind=shallow_trainable, got {cfg.kind!r}")
    return ShallowResidualEncoder(cfg, dtype=np.float64)(np.asarray(img, dtype=np.float64))


def encode_image_high(img, cfg: ImageEncoderConfig) -> Tensor:
    """One image through the frozen stand-in encoder."""
    if cfg.kind != "frozen_high":
        raise InvalidParameterError(f"encode_image_high needs kind=frozen_high, got {cfg.kind!r}")
    return FrozenRandomEncoder(cfg, dtype=np.float64)(np.asarray(img, dtype=np.float64))


# ---------------------------------------------------------------------------
# precomputed-feature hook (substitute for a real pretrained backbone)


def save_precomputed_features(path, features: np.ndarray, source: str = "unknown") -> None:
    """Write an N x dim float32 array with a sidecar .meta description."""
    arr = np.asarray(features, dtype=np.float32)
    if arr.ndim != 2:
        raise InvalidParameterError(f"features must be 2-d (N, dim), got {arr.shape}")
    path = Path(path)
    path.write_bytes(arr.astype("<f4").tobytes())
    meta = {"count": int(arr.shape[0]), "dim": int(arr.shape[1]), "source": str(source)}
    path.with_suffix(path.suffix + ".meta").write_text(json.dumps(meta, indent=1))


def load_precomputed_features(path) -> np.ndarray:
    path = Path(path)
    meta_path = path.with_suffix(path.suffix + ".meta")
    if not path.exists() or not meta_path.exists():
        raise DataFormatError(f"missing feature file or sidecar: {path}(.meta)")
    try:
        meta = json.loads(meta_path.read_text())
        count, dim = int(meta["count"]), int(meta["dim"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"malformed feature metadata {meta_path}: {exc}") from exc
    raw = np.frombuffer(path.read_bytes(), dtype="<f4")
    if raw.size != count * dim:
        raise DataFormatError(
            f"feature file holds {raw.size} floats, metadata promises {count}x{dim}"
        )
    return raw.reshape(count, dim).astype(np.float32)
