"""Channel-prior EEG encoding with a low/high dual stream and cross-attention.

The visual cortex splits early (occipital) and late (parietal) processing;
this module mirrors that with two per-channel weight vectors initialized from
10-10 electrode geography, two small temporal encoders, and a cross-attention
step that lets the high-level stream consult low-level tokens:

    E_low  = w_low  * E        E_high = w_high * E        (row scaling)
    tokens_low  = f_low(E_low)
    high_tokens = CrossAttn(tokens_low, f_high(E_high))
    embeddings  = mean over tokens, per stream
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import InvalidParameterError
from .foveation import _logit

__all__ = [
    "EEGEpoch",
    "ChannelPrior",
    "CrossAttentionParams",
    "LevelEmbeddings",
    "split_channels",
    "cross_attention",
    "encode_eeg",
    "encode_eeg_batch",
    "default_channel_prior",
    "make_encoder",
    "EEG_ENCODERS",
    "TemporalConvEncoder",
    "ShallowConvEncoder",
    "DepthwiseConvEncoder",
    "FlattenTokens",
    "LOW_LEVEL_CHANNELS",
    "HIGH_LEVEL_CHANNELS",
]

# occipital / parieto-occipital sites feed the low-level stream; parietal and
# the occipito-parietal junction feed the high-level stream
LOW_LEVEL_CHANNELS = frozenset({"O1", "Oz", "O2", "PO7", "PO3", "POz", "PO4", "PO8"})
HIGH_LEVEL_CHANNELS = frozenset({"P7", "P5", "P3", "P1", "Pz", "P2", "P4", "P6", "P8", "PO7", "PO8"})

IN_GROUP_INIT = 0.99  # "1.0" group starts just inside the sigmoid so gradients stay alive
OUT_GROUP_INIT = 0.3


@dataclass(frozen=True)
class EEGEpoch:
    data: np.ndarray = field(repr=False)
    channel_names: tuple[str, ...]
    sampling_rate: float = 250.0

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 2:
            raise InvalidParameterError(f"epoch data must be (channels, samples), got shape {arr.shape}")
        names = tuple(self.channel_names)
        if arr.shape[0] != len(names):
            raise InvalidParameterError(
                f"{arr.shape[0]} data rows but {len(names)} channel names"
            )
        if arr.shape[1] < 1:
            raise InvalidParameterError("epoch needs at least one sample")
        if not np.all(np.isfinite(arr)):
            raise InvalidParameterError("epoch contains non-finite samples")
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "channel_names", names)

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]


@dataclass
class LevelEmbeddings:
    low: Tensor
    high: Tensor


class ChannelPrior:
    """Per-channel low/high weights, sigmoid-reparameterized in [0, 1]."""

    def __init__(self, w_low, w_high, channel_names=None, trainable: bool = True):
        w_low = np.asarray(w_low, dtype=np.float64)
        w_high = np.asarray(w_high, dtype=np.float64)
        if w_low.ndim != 1 or w_low.shape != w_high.shape:
            raise InvalidParameterError("w_low and w_high must be 1-d with matching length")
        if min(w_low.min(), w_high.min()) < 0.0 or max(w_low.max(), w_high.max()) > 1.0:
            raise InvalidParameterError("initial channel weights must lie in [0, 1]")
        if channel_names is not None and len(channel_names) != w_low.shape[0]:
            raise InvalidParameterError("channel name count does not match weight length")
        self.channel_names = tuple(channel_names) if channel_names is not None else None
        self._raw_low = ad.parameter(_logit(w_low))
        self._raw_high = ad.parameter(_logit(w_high))
        self.trainable = bool(trainable)
        self._raw_low.requires_grad = self.trainable
        self._raw_high.requires_grad = self.trainable

    @property
    def n_channels(self) -> int:
        return self._raw_low.shape[0]

    def weights_low(self) -> Tensor:
        return ad.sigmoid(self._raw_low)

    def weights_high(self) -> Tensor:
        return ad.sigmoid(self._raw_high)

    @property
    def low_values(self) -> np.ndarray:
        return self.weights_low().data

    @property
    def high_values(self) -> np.ndarray:
        return self.weights_high().data

    def parameters(self, prefix: str = "channel_prior") -> dict[str, Tensor]:
        return {f"{prefix}.raw_low": self._raw_low, f"{prefix}.raw_high": self._raw_high}


def default_channel_prior(channel_names, trainable: bool = True) -> ChannelPrior:
    """Physiology-flavoured initialization from 10-10 electrode names.

    Occipital sites start near 1 on the low stream, parietal sites near 1 on
    the high stream, everything else (and unknown names) at 0.3.
    """
    names = list(channel_names)
    if not names:
        raise InvalidParameterError("channel name list is empty")
    w_low = np.array([IN_GROUP_INIT if n in LOW_LEVEL_CHANNELS else OUT_GROUP_INIT for n in names])
    w_high = np.array([IN_GROUP_INIT if n in HIGH_LEVEL_CHANNELS else OUT_GROUP_INIT for n in names])
    return ChannelPrior(w_low, w_high, channel_names=names, trainable=trainable)


def split_channels(epoch: EEGEpoch, prior: ChannelPrior) -> tuple[EEGEpoch, EEGEpoch]:
    """Row-scale the epoch by the prior's current low/high weights."""
    if prior.n_channels != epoch.n_channels:
        raise InvalidParameterError(
            f"prior has {prior.n_channels} channels, epoch has {epoch.n_channels}"
        )
    low = epoch.data * prior.low_values[:, None]
    high = epoch.data * prior.high_values[:, None]
    return (
        EEGEpoch(low, epoch.channel_names, epoch.sampling_rate),
        EEGEpoch(high, epoch.channel_names, epoch.sampling_rate),
    )


# ---------------------------------------------------------------------------
# cross-attention


class CrossAttentionParams:
    """Single-head attention projections W_Q, W_K, W_V: (d_in, d)."""

    def __init__(self, d_in: int, d: int, seed: int = 0, dtype=np.float32):
        if d < 1 or d_in < 1:
            raise InvalidParameterError("attention dims must be >= 1")
        rng = np.random.default_rng(seed)
        std = np.sqrt(2.0 / (d_in + d))
        self.d_in = int(d_in)
        self.d = int(d)
        self.w_q = ad.parameter((std * rng.standard_normal((d_in, d))).astype(dtype))
        self.w_k = ad.parameter((std * rng.standard_normal((d_in, d))).astype(dtype))
        self.w_v = ad.parameter((std * rng.standard_normal((d_in, d))).astype(dtype))

    @classmethod
    def from_matrices(cls, w_q, w_k, w_v) -> "CrossAttentionParams":
        w_q, w_k, w_v = (np.asarray(m, dtype=np.float64) for m in (w_q, w_k, w_v))
        if not (w_q.shape == w_k.shape == w_v.shape) or w_q.ndim != 2:
            raise InvalidParameterError("W_Q, W_K, W_V must share a (d_in, d) shape")
        obj = cls.__new__(cls)
        obj.d_in, obj.d = w_q.shape
        obj.w_q = ad.parameter(w_q)
        obj.w_k = ad.parameter(w_k)
        obj.w_v = ad.parameter(w_v)
        return obj

    def parameters(self, prefix: str = "attn") -> dict[str, Tensor]:
        return {f"{prefix}.w_q": self.w_q, f"{prefix}.w_k": self.w_k, f"{prefix}.w_v": self.w_v}


def cross_attention(x, y, params: CrossAttentionParams) -> Tensor:
    """softmax((X W_Q)(Y W_K)^T / sqrt(d)) (Y W_V).

    x: (n, d_in) or (B, n, d_in) query tokens; y: matching key/value tokens.
    """
    x, y = ad.as_tensor(x), ad.as_tensor(y)
    if x.shape[-1] != params.d_in or y.shape[-1] != params.d_in:
        raise InvalidParameterError(
            f"token dim mismatch: x {x.shape[-1]}, y {y.shape[-1]}, params expect {params.d_in}"
        )
    if x.ndim != y.ndim or x.ndim not in (2, 3):
        raise InvalidParameterError("x and y must both be (n, d_in) or (B, n, d_in)")
    q = x @ params.w_q
    k = y @ params.w_k
    v = y @ params.w_v
    scores = (q @ ad.swapaxes(k, -1, -2)) / np.sqrt(float(params.d))
    return ad.softmax(scores, axis=-1) @ v


# ---------------------------------------------------------------------------
# encoders


def _he_init(rng, shape, fan_in, dtype):
    return (np.sqrt(2.0 / fan_in) * rng.standard_normal(shape)).astype(dtype)


class TemporalConvEncoder:
    """Default projection-style encoder: two strided temporal convs.

    (B, C, T) -> (B, T/4 tokens, token_dim)
    """

    kind = "temporal_conv"

    def __init__(self, n_channels: int, token_dim: int = 32, width: int = 16, seed: int = 0,
                 bias: bool = True, dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.n_channels = n_channels
        self.token_dim = token_dim
        self.w1 = ad.parameter(_he_init(rng, (7, n_channels, width), 7 * n_channels, dtype))
        self.w2 = ad.parameter(_he_init(rng, (5, width, token_dim), 5 * width, dtype))
        self.b1 = ad.parameter(np.zeros(width, dtype=dtype)) if bias else None
        self.b2 = ad.parameter(np.zeros(token_dim, dtype=dtype)) if bias else None

    def __call__(self, x) -> Tensor:
        x, squeeze = _batched(x, self.n_channels)
        h = ad.gelu(ad.conv1d(x, self.w1, bias=self.b1, stride=2, padding=3))
        h = ad.gelu(ad.conv1d(h, self.w2, bias=self.b2, stride=2, padding=2))
        tokens = ad.swapaxes(h, 1, 2)  # (B, t, token_dim)
        return tokens[0] if squeeze else tokens

    def parameters(self, prefix: str = "f") -> dict[str, Tensor]:
        out = {f"{prefix}.w1": self.w1, f"{prefix}.w2": self.w2}
        if self.b1 is not None:
            out[f"{prefix}.b1"] = self.b1
            out[f"{prefix}.b2"] = self.b2
        return out


class ShallowConvEncoder:
    """Single wide strided conv; the cheapest registered variant."""

    kind = "shallow_conv"

    def __init__(self, n_channels: int, token_dim: int = 32, width: int = 16, seed: int = 0,
                 bias: bool = True, dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.n_channels = n_channels
        self.token_dim = token_dim
        self.w = ad.parameter(_he_init(rng, (11, n_channels, token_dim), 11 * n_channels, dtype))
        self.b = ad.parameter(np.zeros(token_dim, dtype=dtype)) if bias else None

    def __call__(self, x) -> Tensor:
        x, squeeze = _batched(x, self.n_channels)
        h = ad.gelu(ad.conv1d(x, self.w, bias=self.b, stride=4, padding=5))
        tokens = ad.swapaxes(h, 1, 2)
        return tokens[0] if squeeze else tokens

    def parameters(self, prefix: str = "f") -> dict[str, Tensor]:
        out = {f"{prefix}.w": self.w}
        if self.b is not None:
            out[f"{prefix}.b"] = self.b
        return out


class DepthwiseConvEncoder:
    """Per-channel temporal filter followed by a 1x1 channel mixer."""

    kind = "depthwise_conv"

    def __init__(self, n_channels: int, token_dim: int = 32, width: int = 16, seed: int = 0,
                 bias: bool = True, dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.n_channels = n_channels
        self.token_dim = token_dim
        self.wd = ad.parameter(_he_init(rng, (n_channels, 7), 7, dtype))
        self.wp = ad.parameter(_he_init(rng, (1, n_channels, token_dim), n_channels, dtype))
        self.bp = ad.parameter(np.zeros(token_dim, dtype=dtype)) if bias else None

    def __call__(self, x) -> Tensor:
        x, squeeze = _batched(x, self.n_channels)
        h = ad.gelu(ad.depthwise_conv1d(x, self.wd, stride=2, padding=3))
        h = ad.gelu(ad.conv1d(h, self.wp, bias=self.bp))
        tokens = ad.swapaxes(h, 1, 2)
        return tokens[0] if squeeze else tokens

    def parameters(self, prefix: str = "f") -> dict[str, Tensor]:
        out = {f"{prefix}.wd": self.wd, f"{prefix}.wp": self.wp}
        if self.bp is not None:
            out[f"{prefix}.bp"] = self.bp
        return out


class FlattenTokens:
    """Parameter-free encoder emitting one token = the flattened epoch.

    Handy for hand-verifiable compositions in tests and demos.
    """

    kind = "flatten"

    def __init__(self, n_channels: int, n_samples: int):
        self.n_channels = n_channels
        self.n_samples = n_samples
        self.token_dim = n_channels * n_samples

    def __call__(self, x) -> Tensor:
        x, squeeze = _batched(x, self.n_channels)
        tokens = ad.reshape(x, (x.shape[0], 1, self.token_dim))
        return tokens[0] if squeeze else tokens

    def parameters(self, prefix: str = "f") -> dict[str, Tensor]:
        return {}


def _batched(x, n_channels: int) -> tuple[Tensor, bool]:
    x = ad.as_tensor(x)
    squeeze = x.ndim == 2
    if squeeze:
        x = ad.reshape(x, (1,) + x.shape)
    if x.ndim != 3 or x.shape[1] != n_channels:
        raise InvalidParameterError(
            f"expected ({n_channels}, T) or (B, {n_channels}, T), got {x.shape}"
        )
    return x, squeeze


EEG_ENCODERS = {
    "temporal_conv": TemporalConvEncoder,
    "shallow_conv": ShallowConvEncoder,
    "depthwise_conv": DepthwiseConvEncoder,
}


def make_encoder(kind: str, n_channels: int, **kwargs):
    cls = EEG_ENCODERS.get(kind)
    if cls is None:
        raise InvalidParameterError(f"unknown EEG encoder {kind!r}, expected one of {sorted(EEG_ENCODERS)}")
    return cls(n_channels, **kwargs)


# ---------------------------------------------------------------------------
# full encoding path


def encode_eeg_batch(data, prior: ChannelPrior | None, f_low, f_high,
                     attn: CrossAttentionParams | None) -> LevelEmbeddings:
    """Batched two-stream encoding; data is (B, C, T) array or tensor.

    With ``prior=None`` the channel weighting is skipped (uniform weights);
    with ``attn=None`` the high stream is just the pooled f_high tokens.
    Returned embeddings are (B, d_L) and (B, d_H).
    """
    x = ad.as_tensor(data)
    if x.ndim != 3:
        raise InvalidParameterError(f"expected (B, C, T), got {x.shape}")
    if prior is not None:
        if prior.n_channels != x.shape[1]:
            raise InvalidParameterError(
                f"prior has {prior.n_channels} channels, data has {x.shape[1]}"
            )
        wl = ad.astype(ad.reshape(prior.weights_low(), (1, x.shape[1], 1)), x.dtype)
        wh = ad.astype(ad.reshape(prior.weights_high(), (1, x.shape[1], 1)), x.dtype)
        x_low, x_high = x * wl, x * wh
    else:
        x_low = x_high = x
    low_tokens = f_low(x_low)    # (B, t, d_L)
    high_tokens = f_high(x_high)
    if attn is not None:
        high_tokens = cross_attention(low_tokens, high_tokens, attn)
    return LevelEmbeddings(low=ad.tmean(low_tokens, axis=1), high=ad.tmean(high_tokens, axis=1))


def encode_eeg(epoch: EEGEpoch, prior: ChannelPrior, f_low, f_high,
               attn: CrossAttentionParams) -> LevelEmbeddings:
    """Single-epoch encoding: channel split, dual encoders, cross-attention,
    mean pooling to one vector per level."""
    out = encode_eeg_batch(epoch.data[None, :, :], prior, f_low, f_high, attn)
    return LevelEmbeddings(low=out.low[0], high=out.high[0])
