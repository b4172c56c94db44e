"""Foveated adaptive blur with learnable radial priors.

The human visual system resolves detail at the fovea and progressively less
toward the periphery.  This module mimics that: a radial weight field w(r)
decides, per pixel, how much of a degraded copy of the image replaces the
original:

    fused = w * degraded + (1 - w) * original

with w produced by one of four priors (logistic / exponential / quadratic
ramps in normalized retinal eccentricity r, or a free per-pixel grid).  The
prior parameters live in autodiff tensors so the gate shape can be trained
end to end.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from PIL import Image
from scipy import ndimage

from . import autodiff as ad
from .autodiff import Tensor
from .errors import InvalidParameterError

__all__ = [
    "GaussianKernel",
    "RadialMap",
    "FoveaPrior",
    "build_gaussian_kernel",
    "default_blur_kernel",
    "radial_map",
    "blur_image",
    "gating_weight",
    "fuse",
    "apply_abvp",
    "degrade_image",
    "validate_image",
    "DEGRADATION_KINDS",
    "PRIOR_KINDS",
]

PRIOR_KINDS = ("logistic", "exp", "quad", "free")
DEGRADATION_KINDS = (
    "blur",
    "color_jitter",
    "gray",
    "gaussian_noise",
    "low_resolution",
    "mosaic",
    "none",
)

# raw logit magnitude at which sigmoid saturates to exactly 0.0/1.0 in float64
_LOGIT_CLAMP = 40.0


def validate_image(img) -> np.ndarray:
    """Check (H, W, C) layout with C in {1, 3}, finite values in [0, 1]."""
    arr = np.asarray(img)
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise InvalidParameterError(f"image must be (H, W, C) with C in {{1, 3}}, got {arr.shape}")
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float64)
    if not np.all(np.isfinite(arr)):
        raise InvalidParameterError("image contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise InvalidParameterError("image values must lie in [0, 1]")
    return arr


# ---------------------------------------------------------------------------
# Gaussian kernel


@dataclass(frozen=True)
class GaussianKernel:
    sigma: float
    radius: int
    weights: np.ndarray = field(repr=False)

    def __post_init__(self):
        side = 2 * self.radius + 1
        if self.weights.shape != (side, side):
            raise InvalidParameterError(
                f"kernel weights must be {side}x{side} for radius {self.radius}"
            )


def build_gaussian_kernel(sigma: float, radius: int) -> GaussianKernel:
    """Normalized isotropic Gaussian on the integer grid [-radius, radius]^2."""
    sigma = float(sigma)
    radius = int(radius)
    if sigma <= 0.0:
        raise InvalidParameterError(f"sigma must be positive, got {sigma}")
    if radius < 0:
        raise InvalidParameterError(f"radius must be >= 0, got {radius}")
    m, n = np.meshgrid(
        np.arange(-radius, radius + 1), np.arange(-radius, radius + 1), indexing="ij"
    )
    w = np.exp(-(m**2 + n**2) / (2.0 * sigma**2))
    w /= w.sum()
    return GaussianKernel(sigma=sigma, radius=radius, weights=w)


def default_blur_kernel(height: int, width: int) -> GaussianKernel:
    """Kernel scaled to the image: sigma = 0.05 * min side, radius = ceil(3 sigma)."""
    if height < 1 or width < 1:
        raise InvalidParameterError("image dimensions must be positive")
    sigma = 0.05 * min(height, width)
    return build_gaussian_kernel(sigma, int(np.ceil(3.0 * sigma)))


def blur_image(img, kernel: GaussianKernel) -> np.ndarray:
    """Convolve each channel with the kernel.

    Border handling duplicates the edge row/column (symmetric padding), so a
    constant image stays constant and a normalized kernel keeps unit mass at
    the borders.
    """
    arr = validate_image(img)
    if kernel.radius == 0:
        return arr.copy()
    out = np.empty_like(arr)
    for c in range(arr.shape[2]):
        # ndimage 'reflect' is the edge-duplicating scheme: (c b a | a b c)
        out[:, :, c] = ndimage.convolve(arr[:, :, c], kernel.weights.astype(arr.dtype), mode="reflect")
    return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------------------
# radial eccentricity map


@dataclass(frozen=True)
class RadialMap:
    height: int
    width: int
    center: tuple[float, float]
    values: np.ndarray = field(repr=False)


def radial_map(height: int, width: int, center: tuple[float, float] | None = None) -> RadialMap:
    """Per-pixel distance from the fixation point, normalized so max = 1.

    Default fixation is the geometric image center, which is fractional for
    even dimensions.
    """
    if height < 1 or width < 1:
        raise InvalidParameterError("radial map dimensions must be positive")
    if center is None:
        center = ((height - 1) / 2.0, (width - 1) / 2.0)
    ci, cj = float(center[0]), float(center[1])
    if not (0.0 <= ci <= height - 1 and 0.0 <= cj <= width - 1):
        raise InvalidParameterError(f"center {center} lies outside a {height}x{width} grid")
    ii, jj = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    dist = np.sqrt((ii - ci) ** 2 + (jj - cj) ** 2)
    corners = [
        np.hypot(0 - ci, 0 - cj),
        np.hypot(0 - ci, width - 1 - cj),
        np.hypot(height - 1 - ci, 0 - cj),
        np.hypot(height - 1 - ci, width - 1 - cj),
    ]
    max_dist = max(corners)
    if max_dist == 0.0:
        values = np.zeros((height, width))
    else:
        values = dist / max_dist
    return RadialMap(height=height, width=width, center=(ci, cj), values=values)


# ---------------------------------------------------------------------------
# learnable priors


def _logit(p: np.ndarray | float) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    inner = np.clip(p, 1e-12, 1.0 - 1e-12)
    raw = np.log(inner) - np.log1p(-inner)
    # exact 0/1 inputs saturate to the clamp, where the sigmoid round-trips
    # to exactly 0.0/1.0 in float64
    raw = np.where(p >= 1.0, _LOGIT_CLAMP, raw)
    raw = np.where(p <= 0.0, -_LOGIT_CLAMP, raw)
    return np.clip(raw, -_LOGIT_CLAMP, _LOGIT_CLAMP)


class FoveaPrior:
    """Radial gating prior with trainable parameters.

    kinds:
      - ``logistic``: w(r) = sigmoid(slope * (r - fovea_radius))
      - ``exp``:      w(r) = clip(1 - exp(-decay * max(r - fovea_radius, 0)), 0, 1)
      - ``quad``:     w(r) = clip(max(r - fovea_radius, 0) ** exponent, 0, 1)
      - ``free``:     per-pixel weight grid, independent of r

    fovea_radius is stored as an unconstrained scalar mapped through a
    sigmoid; slope is unconstrained; decay and exponent are stored in log
    space so they stay positive; the free grid is stored unconstrained and
    mapped through a sigmoid per pixel.
    """

    def __init__(self, kind: str, params: dict[str, Tensor], trainable: bool = True):
        if kind not in PRIOR_KINDS:
            raise InvalidParameterError(f"unknown prior kind {kind!r}, expected one of {PRIOR_KINDS}")
        self.kind = kind
        self._params = params
        for p in params.values():
            p.requires_grad = bool(trainable)

    # -- constructors ------------------------------------------------------
    @classmethod
    def logistic(cls, slope: float = 10.0, fovea_radius: float = 0.25, trainable: bool = True) -> "FoveaPrior":
        return cls(
            "logistic",
            {
                "slope": ad.parameter(np.float64(slope)),
                "raw_fovea": ad.parameter(_logit(fovea_radius)),
            },
            trainable,
        )

    @classmethod
    def exp(cls, decay: float = 5.0, fovea_radius: float = 0.25, trainable: bool = True) -> "FoveaPrior":
        if decay <= 0:
            raise InvalidParameterError("decay must be positive")
        return cls(
            "exp",
            {
                "log_decay": ad.parameter(np.log(np.float64(decay))),
                "raw_fovea": ad.parameter(_logit(fovea_radius)),
            },
            trainable,
        )

    @classmethod
    def quad(cls, exponent: float = 2.0, fovea_radius: float = 0.25, trainable: bool = True) -> "FoveaPrior":
        if exponent <= 0:
            raise InvalidParameterError("exponent must be positive")
        return cls(
            "quad",
            {
                "log_exponent": ad.parameter(np.log(np.float64(exponent))),
                "raw_fovea": ad.parameter(_logit(fovea_radius)),
            },
            trainable,
        )

    @classmethod
    def free(cls, grid: np.ndarray, trainable: bool = True) -> "FoveaPrior":
        grid = np.asarray(grid, dtype=np.float64)
        if grid.ndim != 2:
            raise InvalidParameterError("free prior grid must be 2-d (H, W)")
        if grid.min() < 0.0 or grid.max() > 1.0:
            raise InvalidParameterError("free prior grid values must lie in [0, 1]")
        return cls("free", {"raw_grid": ad.parameter(_logit(grid))}, trainable)

    @classmethod
    def from_config(cls, kind: str, shape: tuple[int, int] | None = None, trainable: bool = True, **kwargs) -> "FoveaPrior":
        if kind == "free":
            if shape is None:
                raise InvalidParameterError("free prior needs the image shape")
            grid = kwargs.pop("grid", np.full(shape, 0.5))
            return cls.free(grid, trainable=trainable)
        factory = {"logistic": cls.logistic, "exp": cls.exp, "quad": cls.quad}.get(kind)
        if factory is None:
            raise InvalidParameterError(f"unknown prior kind {kind!r}")
        return factory(trainable=trainable, **kwargs)

    # -- views on current parameter values ----------------------------------
    @property
    def fovea_radius(self) -> float:
        if self.kind == "free":
            raise InvalidParameterError("free prior has no fovea radius")
        return float(ad.sigmoid(self._params["raw_fovea"]).data)

    @property
    def slope(self) -> float:
        return float(self._params["slope"].data)

    @property
    def decay(self) -> float:
        return float(np.exp(self._params["log_decay"].data))

    @property
    def exponent(self) -> float:
        return float(np.exp(self._params["log_exponent"].data))

    @property
    def grid_weights(self) -> np.ndarray:
        return ad.sigmoid(self._params["raw_grid"]).data

    def parameters(self, prefix: str = "prior") -> dict[str, Tensor]:
        return {f"{prefix}.{k}": v for k, v in self._params.items()}

    # -- gating --------------------------------------------------------------
    def gate(self, r) -> Tensor:
        """Gating weights as a graph tensor.  ``r`` is ignored by ``free``."""
        if self.kind == "free":
            return ad.sigmoid(self._params["raw_grid"])
        r = ad.as_tensor(np.asarray(r, dtype=np.float64))
        r0 = ad.sigmoid(self._params["raw_fovea"])
        if self.kind == "logistic":
            return ad.sigmoid(self._params["slope"] * (r - r0))
        excess = ad.relu(r - r0)
        if self.kind == "exp":
            decay = ad.exp(self._params["log_decay"])
            return ad.clip(1.0 - ad.exp(-decay * excess), 0.0, 1.0)
        exponent = ad.exp(self._params["log_exponent"])
        return ad.clip(ad.power_t(excess, exponent), 0.0, 1.0)


def gating_weight(prior: FoveaPrior, r=None) -> np.ndarray | float:
    """Plain-array view of prior.gate for radial priors.

    The free prior is indexed by pixel rather than eccentricity, so for it
    this ignores ``r`` and returns the whole per-pixel weight grid.
    """
    if prior.kind == "free":
        return prior.grid_weights
    if r is None:
        raise InvalidParameterError("radial priors need an eccentricity value r")
    out = prior.gate(np.asarray(r, dtype=np.float64)).data
    return float(out) if out.ndim == 0 else out


def fuse(img, degraded, weights) -> Tensor:
    """Per-pixel convex combination: weights * degraded + (1 - weights) * img.

    ``weights`` is an (H, W) grid in [0, 1] (array or graph tensor),
    broadcast across channels.  Output lies between the two inputs pixelwise.
    """
    arr = validate_image(img)
    deg = validate_image(degraded)
    if deg.shape != arr.shape:
        raise InvalidParameterError(f"shape mismatch: image {arr.shape} vs degraded {deg.shape}")
    h, w = arr.shape[:2]
    wt = weights if isinstance(weights, Tensor) else ad.as_tensor(np.asarray(weights, dtype=arr.dtype))
    if wt.shape != (h, w):
        raise InvalidParameterError(f"weights shape {wt.shape} does not match image ({h}, {w})")
    if not isinstance(weights, Tensor) and (wt.data.min() < 0.0 or wt.data.max() > 1.0):
        raise InvalidParameterError("fusion weights must lie in [0, 1]")
    w3 = ad.reshape(wt, (h, w, 1))
    return w3 * ad.as_tensor(deg) + (1.0 - w3) * ad.as_tensor(arr)


# ---------------------------------------------------------------------------
# fusion and degradations


def apply_abvp(
    img,
    prior: FoveaPrior,
    kernel: GaussianKernel | None = None,
    center: tuple[float, float] | None = None,
    degraded: np.ndarray | None = None,
) -> Tensor:
    """Fuse an image with its degraded copy under the prior's gate.

    Returns a graph tensor so gradients reach the prior parameters; take
    ``.data`` for the plain array.  ``degraded`` defaults to Gaussian blur
    with the image-scaled kernel.
    """
    arr = validate_image(img)
    h, w = arr.shape[:2]
    if degraded is None:
        if kernel is None:
            kernel = default_blur_kernel(h, w)
        degraded = blur_image(arr, kernel)
    else:
        degraded = validate_image(degraded)
        if degraded.shape != arr.shape:
            raise InvalidParameterError("degraded copy must match the image shape")

    if prior.kind == "free":
        if prior._params["raw_grid"].shape != (h, w):
            raise InvalidParameterError(
                f"free prior grid {prior._params['raw_grid'].shape} does not match image ({h}, {w})"
            )
        gate = prior.gate(None)
    else:
        gate = prior.gate(radial_map(h, w, center).values)
    return fuse(arr, degraded, gate)


def degrade_image(img, kind: str, seed: int = 0) -> np.ndarray:
    """Deterministic whole-image degradation of the given kind."""
    arr = validate_image(img).astype(np.float64)
    h, w, c = arr.shape
    if kind not in DEGRADATION_KINDS:
        raise InvalidParameterError(f"unknown degradation {kind!r}, expected one of {DEGRADATION_KINDS}")
    if kind == "none":
        return arr.copy()
    if kind == "blur":
        return blur_image(arr, default_blur_kernel(h, w))
    if kind == "gray":
        if c == 1:
            return arr.copy()
        y = 0.299 * arr[:, :, 0] + 0.587 * arr[:, :, 1] + 0.114 * arr[:, :, 2]
        return np.repeat(y[:, :, None], 3, axis=2)
    if kind == "gaussian_noise":
        rng = np.random.default_rng(seed)
        return np.clip(arr + 0.1 * rng.standard_normal(arr.shape), 0.0, 1.0)
    if kind == "color_jitter":
        rng = np.random.default_rng(seed)
        scale = rng.uniform(0.6, 1.4, size=(1, 1, c))
        shift = rng.uniform(-0.2, 0.2, size=(1, 1, c))
        return np.clip(arr * scale + shift, 0.0, 1.0)
    if kind == "low_resolution":
        factor = 4
        im = Image.fromarray((arr * 255.0).round().astype(np.uint8).squeeze())
        small = im.resize((max(w // factor, 1), max(h // factor, 1)), Image.BILINEAR)
        big = small.resize((w, h), Image.BILINEAR)
        out = np.asarray(big, dtype=np.float64) / 255.0
        return out.reshape(h, w, c)
    # mosaic: block-average pixelation
    block = 8
    out = arr.copy()
    for i0 in range(0, h, block):
        for j0 in range(0, w, block):
            patch = arr[i0 : i0 + block, j0 : j0 + block]
            out[i0 : i0 + block, j0 : j0 + block] = patch.mean(axis=(0, 1), keepdims=True)
    return out
