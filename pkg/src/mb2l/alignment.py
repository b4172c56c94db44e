"""Projection heads and the multi-level bidirectional InfoNCE objective.

Each modality/level pair gets its own 2-layer projection head into a shared
latent space; the loss is symmetric InfoNCE over cosine similarities with a
learnable temperature, and the two levels combine through fixed alpha
weights:

    L_total = alpha_low * L(Z_I_low, Z_E_low) + alpha_high * L(Z_I_high, Z_E_high)
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import InvalidParameterError, NumericalError

__all__ = [
    "ProjectionHead",
    "ContrastiveConfig",
    "LearnableTemperature",
    "project",
    "cosine_sim",
    "normalize_rows",
    "info_nce_bidirectional",
    "total_loss",
]

_NORM_EPS = 1e-12


class ProjectionHead:
    """affine -> GELU -> affine.  hidden_dim defaults to 2 * out_dim."""

    def __init__(self, in_dim: int, out_dim: int, hidden_dim: int | None = None,
                 seed: int = 0, bias: bool = True, dtype=np.float32):
        if in_dim < 1 or out_dim < 1:
            raise InvalidParameterError("projection dims must be >= 1")
        hidden = hidden_dim if hidden_dim is not None else 2 * out_dim
        rng = np.random.default_rng(seed)
        self.in_dim, self.hidden_dim, self.out_dim = in_dim, hidden, out_dim
        s1 = np.sqrt(2.0 / (in_dim + hidden))
        s2 = np.sqrt(2.0 / (hidden + out_dim))
        self.w1 = ad.parameter((s1 * rng.standard_normal((in_dim, hidden))).astype(dtype))
        self.w2 = ad.parameter((s2 * rng.standard_normal((hidden, out_dim))).astype(dtype))
        self.b1 = ad.parameter(np.zeros(hidden, dtype=dtype)) if bias else None
        self.b2 = ad.parameter(np.zeros(out_dim, dtype=dtype)) if bias else None

    @classmethod
    def identity(cls, dim: int, dtype=np.float64) -> "ProjectionHead":
        """Square head whose affines are exact identities (testing aid)."""
        head = cls(dim, dim, hidden_dim=dim, bias=True, dtype=dtype)
        head.w1 = ad.parameter(np.eye(dim, dtype=dtype))
        head.w2 = ad.parameter(np.eye(dim, dtype=dtype))
        head.b1 = ad.parameter(np.zeros(dim, dtype=dtype))
        head.b2 = ad.parameter(np.zeros(dim, dtype=dtype))
        return head

    def __call__(self, x) -> Tensor:
        x = ad.as_tensor(x)
        squeeze = x.ndim == 1
        if squeeze:
            x = ad.reshape(x, (1, x.shape[0]))
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise InvalidParameterError(f"expected (..., {self.in_dim}) input, got {x.shape}")
        h = x @ self.w1
        if self.b1 is not None:
            h = h + self.b1
        h = ad.gelu(h)
        out = h @ self.w2
        if self.b2 is not None:
            out = out + self.b2
        return out[0] if squeeze else out

    def parameters(self, prefix: str = "head") -> dict[str, Tensor]:
        out = {f"{prefix}.w1": self.w1, f"{prefix}.w2": self.w2}
        if self.b1 is not None:
            out[f"{prefix}.b1"] = self.b1
            out[f"{prefix}.b2"] = self.b2
        return out


def project(x, head: ProjectionHead) -> Tensor:
    return head(x)


@dataclass(frozen=True)
class ContrastiveConfig:
    tau: float = 0.07  # initial temperature; trained through LearnableTemperature
    alpha_low: float = 1.0
    alpha_high: float = 0.5
    include_positive_in_denominator: bool = True

    def __post_init__(self):
        if self.tau <= 0.0:
            raise InvalidParameterError("tau must be positive")
        if self.alpha_low < 0.0 or self.alpha_high < 0.0:
            raise InvalidParameterError("alphas must be >= 0")


class LearnableTemperature:
    """Temperature stored as a learnable log inverse temperature.

    The raw parameter is ln(1/tau); tau = exp(-raw), always positive.
    """

    def __init__(self, tau_init: float = 0.07, dtype=np.float64):
        if tau_init <= 0.0:
            raise InvalidParameterError("tau must be positive")
        self.log_inv_tau = ad.parameter(np.asarray(np.log(1.0 / tau_init), dtype=dtype))

    def tau(self) -> Tensor:
        return ad.exp(-self.log_inv_tau)

    @property
    def value(self) -> float:
        return float(np.exp(-self.log_inv_tau.data))

    def parameters(self, prefix: str = "loss") -> dict[str, Tensor]:
        return {f"{prefix}.log_inv_tau": self.log_inv_tau}


def cosine_sim(a, b) -> float:
    """Plain cosine similarity of two vectors; zero vectors score 0."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise InvalidParameterError(f"length mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        warnings.warn("cosine_sim of a zero vector is defined as 0", stacklevel=2)
        return 0.0
    return float(a @ b / (na * nb))


def normalize_rows(x) -> np.ndarray:
    """Unit-normalize rows of a plain array; zero rows stay zero (warned)."""
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        warnings.warn("zero rows left unnormalized in similarity computation", stacklevel=2)
    return x / np.where(norms == 0.0, 1.0, norms)


def _normalize_rows_t(z: Tensor) -> Tensor:
    sq = (z * z).sum(axis=1, keepdims=True)
    return z / ad.sqrt(sq + _NORM_EPS)


def info_nce_bidirectional(z_img, z_eeg, cfg: ContrastiveConfig, tau=None) -> Tensor:
    """Symmetric InfoNCE: (1/2N) sum_j [L_img->eeg(j) + L_eeg->img(j)].

    Row j of each batch is a matched pair.  ``tau`` may be a graph tensor
    (learnable); when omitted, cfg.tau is used as a constant.  The positive
    similarity sits in the denominator by default; with the flag off it is
    masked out (which is undefined at N=1).
    """
    zi, ze = ad.as_tensor(z_img), ad.as_tensor(z_eeg)
    if zi.ndim != 2 or ze.ndim != 2 or zi.shape != ze.shape:
        raise InvalidParameterError(f"batches must share an (N, d) shape: {zi.shape} vs {ze.shape}")
    n = zi.shape[0]
    if n < 1:
        raise InvalidParameterError("empty batch")
    if not cfg.include_positive_in_denominator and n == 1:
        raise InvalidParameterError("excluding the positive leaves an empty denominator at N=1")

    if tau is None:
        tau = cfg.tau
    tau = ad.as_tensor(tau)

    # einsum keeps sim(a,b) and sim(b,a).T bit-equal, which makes the
    # modality-swap symmetry exact rather than approximate
    sims = ad.pairwise_dot(_normalize_rows_t(zi), _normalize_rows_t(ze))
    base = sims / tau
    positives = base[(np.arange(n), np.arange(n))]
    logits = base
    if not cfg.include_positive_in_denominator:
        logits = base + (-1e9 * np.eye(n, dtype=base.dtype))
    loss_i2e = ad.logsumexp(logits, axis=1) - positives
    loss_e2i = ad.logsumexp(ad.swapaxes(logits, 0, 1), axis=1) - positives
    return ((loss_i2e + loss_e2i) * 0.5).mean()


def total_loss(loss_low, loss_high, cfg: ContrastiveConfig) -> Tensor:
    """alpha-weighted sum of the two level losses."""
    low = ad.as_tensor(loss_low)
    high = ad.as_tensor(loss_high)
    if not (np.all(np.isfinite(low.data)) and np.all(np.isfinite(high.data))):
        raise NumericalError("level losses must be finite")
    return cfg.alpha_low * low + cfg.alpha_high * high
