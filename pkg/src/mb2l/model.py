"""Full two-level alignment model wiring foveation, EEG encoding, image
encoding, and the bidirectional contrastive heads together.

Component switches (used by the ablation harness):

  * ``abvp_on``: low-level images pass through the learnable foveated
    fusion of the original with its degraded copy.  Off = identity path —
    the (possibly degraded) image goes straight to the shallow encoder.
  * ``bvfe_on``: channel-prior weighting plus cross-attention between the
    two EEG streams.  Off = uniform channel weights and the high stream is
    the raw high encoder output.
  * ``mbcl_on``: both alignment levels with trainable image pathways.
    Off = single-level alignment of EEG against the frozen high-level
    image features only (no trainable image parameters at all).

``abvp_on`` without ``mbcl_on`` is rejected up front: the foveated pathway
only receives gradient through the low-level (trainable image) branch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .alignment import (
    ContrastiveConfig,
    LearnableTemperature,
    ProjectionHead,
    info_nce_bidirectional,
    total_loss,
)
from .autodiff import Tensor
from .eeg import (
    CrossAttentionParams,
    default_channel_prior,
    encode_eeg_batch,
    make_encoder,
    EEG_ENCODERS,
)
from .errors import InvalidParameterError
from .foveation import (
    DEGRADATION_KINDS,
    PRIOR_KINDS,
    FoveaPrior,
    degrade_image,
    radial_map,
    validate_image,
)
from .images import FrozenRandomEncoder, ImageEncoderConfig, ShallowResidualEncoder

__all__ = ["ModelConfig", "AlignmentModel", "build_model", "config_for_samples"]

_DTYPES = {"float32": np.float32, "float64": np.float64}


@dataclass(frozen=True)
class ModelConfig:
    channel_names: tuple[str, ...]
    n_samples: int
    image_size: int = 64
    token_dim: int = 32
    embed_dim: int = 64
    eeg_encoder: str = "temporal_conv"
    eeg_width: int = 16
    image_depth: int = 2
    image_width: int = 16
    frozen_depth: int = 2
    frozen_width: int = 8
    frozen_out_dim: int = 64
    prior: str = "logistic"
    degradation: str = "blur"
    abvp_on: bool = True
    bvfe_on: bool = True
    mbcl_on: bool = True
    tau: float = 0.07
    alpha_low: float = 1.0
    alpha_high: float = 0.5
    include_positive_in_denominator: bool = True
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        object.__setattr__(self, "channel_names", tuple(self.channel_names))
        if not self.channel_names:
            raise InvalidParameterError("need at least one channel")
        if self.n_samples < 4:
            raise InvalidParameterError("n_samples must be >= 4")
        if self.abvp_on and not self.mbcl_on:
            raise InvalidParameterError(
                "abvp_on requires mbcl_on: the foveated pathway is trained "
                "through the low-level branch"
            )
        if self.prior not in PRIOR_KINDS:
            raise InvalidParameterError(f"prior must be one of {PRIOR_KINDS}")
        if self.degradation not in DEGRADATION_KINDS:
            raise InvalidParameterError(f"degradation must be one of {DEGRADATION_KINDS}")
        if self.eeg_encoder not in EEG_ENCODERS:
            raise InvalidParameterError(f"eeg_encoder must be one of {sorted(EEG_ENCODERS)}")
        if self.dtype not in _DTYPES:
            raise InvalidParameterError("dtype must be 'float32' or 'float64'")
        stride = 2 ** (self.image_depth + 1)
        if self.image_size % stride:
            raise InvalidParameterError(
                f"image_size {self.image_size} must be divisible by {stride} "
                f"(stem stride x {self.image_depth} pooling stages)"
            )
        if self.tau <= 0:
            raise InvalidParameterError("tau must be positive")

    def contrastive(self) -> ContrastiveConfig:
        return ContrastiveConfig(
            tau=self.tau,
            alpha_low=self.alpha_low,
            alpha_high=self.alpha_high,
            include_positive_in_denominator=self.include_positive_in_denominator,
        )


class AlignmentModel:
    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        self.np_dtype = _DTYPES[cfg.dtype]
        base = cfg.seed * 97
        s = cfg.image_size

        self.fovea_prior = None
        self._radial = None
        if cfg.abvp_on:
            self.fovea_prior = FoveaPrior.from_config(cfg.prior, shape=(s, s))
            self._radial = radial_map(s, s).values

        self.channel_prior = None
        self.attn = None
        if cfg.bvfe_on:
            self.channel_prior = default_channel_prior(cfg.channel_names)
            self.attn = CrossAttentionParams(
                cfg.token_dim, cfg.token_dim, seed=base + 1, dtype=self.np_dtype
            )

        n_ch = len(cfg.channel_names)
        self.f_low = make_encoder(
            cfg.eeg_encoder, n_ch, token_dim=cfg.token_dim, width=cfg.eeg_width,
            seed=base + 2, dtype=self.np_dtype,
        )
        self.f_high = make_encoder(
            cfg.eeg_encoder, n_ch, token_dim=cfg.token_dim, width=cfg.eeg_width,
            seed=base + 3, dtype=self.np_dtype,
        )

        self.frozen = FrozenRandomEncoder(
            ImageEncoderConfig(
                kind="frozen_high", depth=cfg.frozen_depth, width=cfg.frozen_width,
                out_dim=cfg.frozen_out_dim, seed=base + 4,
            ),
            dtype=self.np_dtype,
        )

        self.image_low = None
        self.head_img_low = self.head_img_high = self.head_eeg_low = None
        if cfg.mbcl_on:
            self.image_low = ShallowResidualEncoder(
                ImageEncoderConfig(
                    kind="shallow_trainable", depth=cfg.image_depth,
                    width=cfg.image_width, out_dim=cfg.embed_dim, seed=base + 5,
                ),
                dtype=self.np_dtype,
            )
            self.head_img_low = ProjectionHead(
                cfg.embed_dim, cfg.embed_dim, seed=base + 6, dtype=self.np_dtype
            )
            self.head_img_high = ProjectionHead(
                cfg.frozen_out_dim, cfg.embed_dim, seed=base + 7, dtype=self.np_dtype
            )
            self.head_eeg_low = ProjectionHead(
                cfg.token_dim, cfg.embed_dim, seed=base + 8, dtype=self.np_dtype
            )
            eeg_high_out = cfg.embed_dim
        else:
            # single-level mode aligns EEG straight against the frozen
            # image features, so the head must land in that space
            eeg_high_out = cfg.frozen_out_dim
        self.head_eeg_high = ProjectionHead(
            cfg.token_dim, eeg_high_out, seed=base + 9, dtype=self.np_dtype
        )

        self.temperature = LearnableTemperature(cfg.tau, dtype=self.np_dtype)
        self.contrastive = cfg.contrastive()

    # -- parameter plumbing --------------------------------------------------
    def parameters(self) -> dict[str, Tensor]:
        """All trainable tensors by name; the frozen encoder never appears."""
        out: dict[str, Tensor] = {}
        if self.fovea_prior is not None:
            out.update(self.fovea_prior.parameters("prior"))
        if self.channel_prior is not None:
            out.update(self.channel_prior.parameters("channel_prior"))
        if self.attn is not None:
            out.update(self.attn.parameters("attn"))
        out.update(self.f_low.parameters("f_low"))
        out.update(self.f_high.parameters("f_high"))
        if self.image_low is not None:
            out.update(self.image_low.parameters("img_low"))
            out.update(self.head_img_low.parameters("head_img_low"))
            out.update(self.head_img_high.parameters("head_img_high"))
            out.update(self.head_eeg_low.parameters("head_eeg_low"))
        out.update(self.head_eeg_high.parameters("head_eeg_high"))
        out.update(self.temperature.parameters("loss"))
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: np.array(v.data, copy=True) for k, v in self.parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = sorted(set(params) - set(state))
        extra = sorted(set(state) - set(params))
        if missing or extra:
            raise InvalidParameterError(
                f"state mismatch: missing {missing}, unexpected {extra}"
            )
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=p.data.dtype)
            if arr.shape != p.data.shape:
                raise InvalidParameterError(
                    f"{name}: shape {arr.shape} does not match {p.data.shape}"
                )
            p.data = arr

    # -- forward passes --------------------------------------------------------
    def prepare_images(self, images) -> dict[str, np.ndarray]:
        """Constant (gradient-free) per-image work: validation, the degraded
        copy, and frozen high-level features.  Cacheable across epochs."""
        if isinstance(images, np.ndarray) and images.ndim == 4:
            stack = [images[i] for i in range(images.shape[0])]
        else:
            stack = list(images)
        s = self.cfg.image_size
        arrs, degs = [], []
        for img in stack:
            arr = validate_image(img)
            if arr.shape[0] != s or arr.shape[1] != s:
                raise InvalidParameterError(
                    f"expected {s}x{s} images, got {arr.shape[:2]}"
                )
            arrs.append(arr.astype(self.np_dtype))
            degs.append(degrade_image(arr, self.cfg.degradation).astype(self.np_dtype))
        original = np.stack(arrs)
        degraded = np.stack(degs)
        frozen = self.frozen(original).data
        return {"original": original, "degraded": degraded, "frozen": frozen}

    def embed_images(self, prep: dict) -> tuple[Tensor | None, Tensor]:
        if not self.cfg.mbcl_on:
            return None, ad.as_tensor(prep["frozen"])
        if self.cfg.abvp_on:
            r = None if self.fovea_prior.kind == "free" else self._radial
            w = ad.astype(self.fovea_prior.gate(r), self.np_dtype)
            w4 = ad.reshape(w, (1,) + w.shape + (1,))
            x = w4 * ad.as_tensor(prep["degraded"]) + (1.0 - w4) * ad.as_tensor(prep["original"])
        else:
            x = ad.as_tensor(prep["degraded"])
        z_low = self.head_img_low(self.image_low(x))
        z_high = self.head_img_high(ad.as_tensor(prep["frozen"]))
        return z_low, z_high

    def embed_eeg(self, batch) -> tuple[Tensor | None, Tensor]:
        data = np.asarray(batch, dtype=self.np_dtype)
        emb = encode_eeg_batch(data, self.channel_prior, self.f_low, self.f_high, self.attn)
        z_high = self.head_eeg_high(emb.high)
        if not self.cfg.mbcl_on:
            return None, z_high
        return self.head_eeg_low(emb.low), z_high

    def loss(self, prep: dict, eeg_batch) -> Tensor:
        zi_low, zi_high = self.embed_images(prep)
        ze_low, ze_high = self.embed_eeg(eeg_batch)
        tau = self.temperature.tau()
        loss_high = info_nce_bidirectional(zi_high, ze_high, self.contrastive, tau=tau)
        if not self.cfg.mbcl_on:
            return loss_high
        loss_low = info_nce_bidirectional(zi_low, ze_low, self.contrastive, tau=tau)
        return total_loss(loss_low, loss_high, self.contrastive)

    # -- evaluation ------------------------------------------------------------
    def eval_embeddings(self, samples) -> dict[str, tuple[np.ndarray, np.ndarray]]:
        """Plain-array (eeg, image) embedding pairs per level for retrieval.

        Levels: ``low`` and ``high`` normally; only ``high`` when mbcl is off.
        """
        prep = self.prepare_images([s.image for s in samples])
        eeg = np.stack([np.asarray(s.epoch.data) for s in samples])
        zi_low, zi_high = self.embed_images(prep)
        ze_low, ze_high = self.embed_eeg(eeg)
        out = {"high": (ze_high.data.copy(), zi_high.data.copy())}
        if self.cfg.mbcl_on:
            out["low"] = (ze_low.data.copy(), zi_low.data.copy())
        return out


def build_model(cfg: ModelConfig) -> AlignmentModel:
    return AlignmentModel(cfg)


def config_for_samples(samples, **overrides) -> ModelConfig:
    """Infer channel names, T, and image size from data; overrides win."""
    if not samples:
        raise InvalidParameterError("need at least one sample")
    first = samples[0]
    fields = dict(
        channel_names=first.epoch.channel_names,
        n_samples=first.epoch.n_samples,
        image_size=first.image.shape[0],
    )
    fields.update(overrides)
    return ModelConfig(**fields)
