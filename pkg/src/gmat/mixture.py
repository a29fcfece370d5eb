"""Gaussian mixture attention core.

Prototypes are learnable diagonal Gaussians in the working space (the codec
latent, or the data space when no codec is used).  A batch is soft-assigned to
prototypes by a softmin over Mahalanobis distances; the responsibility-weighted
combination of prototype draws reconstructs the batch.  Four loss terms hang
off this machinery: reconstruction MSE, a KL alignment between each prototype
and the responsibility-weighted batch statistics, and two certainty
regularizers over the responsibility rows and columns.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError

VAR_FLOOR = 1e-6        # floor for batch variances inside the KL target
STARVED_MASS = 1e-12    # responsibility column mass below which KL is skipped
LOG_CLAMP = 1e-12       # clamp inside the certainty-regularizer logs


@dataclass
class PrototypeSet:
    """Learnable mixture parameters: per-prototype mean and log-scale rows."""

    means: Tensor       # (M, d)
    log_scales: Tensor  # (M, d); scale sigma = exp(log_scales) > 0

    @property
    def count(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def sigmas(self) -> Tensor:
        return self.log_scales.exp()

    def params(self) -> list[Tensor]:
        return [self.means, self.log_scales]

    def copy(self) -> "PrototypeSet":
        return PrototypeSet(Tensor(self.means.data.copy()),
                            Tensor(self.log_scales.data.copy()))


def init_prototypes(m: int, d: int, strategy: str = "zeros",
                    rng: np.random.Generator | None = None,
                    data: np.ndarray | None = None,
                    scale: float = 1.0) -> PrototypeSet:
    """Create M prototypes of width d; log-scales start at 0 (sigma = 1).

    Strategies: ``zeros``, ``data-mean`` (all means at the mean of ``data``),
    ``random-normal`` (i.i.d. N(0, scale^2), needs ``rng``).
    """
    if m < 1 or d < 1:
        raise ContractError(f"prototype count and dim must be >= 1, got M={m}, d={d}")
    if strategy == "zeros":
        means = np.zeros((m, d))
    elif strategy == "data-mean":
        if data is None:
            raise ContractError("data-mean initialization requires data")
        means = np.tile(np.asarray(data, dtype=np.float64).mean(axis=0), (m, 1))
    elif strategy == "random-normal":
        if rng is None:
            raise ContractError("random-normal initialization requires rng")
        means = scale * rng.standard_normal((m, d))
    else:
        raise ContractError(f"unknown init strategy {strategy!r}")
    return PrototypeSet(Tensor(means), Tensor(np.zeros((m, d))))


def distances(x: Tensor | np.ndarray, protos: PrototypeSet) -> Tensor:
    """Batch Mahalanobis distances, shape (N, M), diagonal covariance."""
    x = ad.lift(x)
    n, d = x.shape
    m = protos.count
    diff = x.reshape(n, 1, d) - protos.means.reshape(1, m, d)
    scaled = diff / protos.sigmas().reshape(1, m, d)
    return (scaled * scaled).sum(axis=2).sqrt()


def mahalanobis(x: np.ndarray, proto_index: int, protos: PrototypeSet) -> float:
    """Distance of a single point to one prototype (convenience, not differentiable)."""
    x = np.asarray(x, dtype=np.float64)
    diff = x - protos.means.data[proto_index]
    sig = np.exp(protos.log_scales.data[proto_index])
    return float(np.sqrt(np.sum((diff / sig) ** 2)))


def softmin(d: Tensor, axis: int = 1) -> Tensor:
    """Softmax of negated inputs, stabilized by the shift-by-max identity.

    The shift is subtracted before exponentiation, so adding an (exactly
    representable) constant to a row leaves its weights bitwise unchanged.
    The max-selection path carries a gradient whose contributions cancel
    analytically (softmax is invariant in the shift).
    """
    neg = -d
    # Detached shift: carries no gradient (the softmax is invariant in it)
    # and keeps duplicated entries bitwise symmetric in the backward pass.
    shift = ad.lift(neg.data.max(axis=axis, keepdims=True))
    shifted = (neg - shift).exp()
    return shifted / shifted.sum(axis=axis, keepdims=True)


def responsibilities(x: Tensor | np.ndarray, protos: PrototypeSet) -> Tensor:
    """Row-stochastic (N, M) softmin weights over prototype distances."""
    return softmin(distances(x, protos), axis=1)


def reconstruct(protos: PrototypeSet, w: Tensor, mode: str = "deterministic",
                rng: np.random.Generator | None = None) -> Tensor:
    """Responsibility-weighted combination of the prototypes, shape (N, d).

    ``sample`` draws one reparameterized point per (sample, prototype) pair;
    ``deterministic`` combines the means directly (evaluation, replay
    centroids).
    """
    if mode == "deterministic":
        return w @ protos.means
    if mode != "sample":
        raise ContractError(f"unknown reconstruction mode {mode!r}")
    if rng is None:
        raise ContractError("sample mode requires rng")
    n = w.shape[0]
    m, d = protos.count, protos.dim
    mu = protos.means.reshape(1, m, d).broadcast_to((n, m, d))
    ls = protos.log_scales.reshape(1, m, d).broadcast_to((n, m, d))
    draws = ad.gaussian_sample(mu, ls, rng)
    return (w.reshape(n, m, 1) * draws).sum(axis=1)


def recon_loss(x: Tensor | np.ndarray, z: Tensor) -> Tensor:
    """Mean over samples of the squared L2 reconstruction residual."""
    x = ad.lift(x)
    if x.shape != z.shape:
        raise ContractError(f"recon shape mismatch: {x.shape} vs {z.shape}")
    diff = x - z
    return (diff * diff).sum() * (1.0 / x.shape[0])


@dataclass
class BatchStats:
    """Responsibility-weighted per-prototype batch statistics (constants)."""

    mean: np.ndarray      # (M, d)
    var: np.ndarray       # (M, d), biased, about the weighted mean
    starved: np.ndarray   # (M,) bool: column mass < STARVED_MASS


def weighted_batch_stats(x: np.ndarray, w: np.ndarray) -> BatchStats:
    """Weighted mean/variance of the batch under each prototype's column.

    Computed outside the autodiff record: the KL target is a per-batch
    constant.  Starved prototypes (vanishing column mass) are flagged so the
    KL can skip them; that is a signal, not a failure.
    """
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    mass = w.sum(axis=0)
    starved = mass < STARVED_MASS
    safe = np.where(starved, 1.0, mass)
    mean = (w.T @ x) / safe[:, None]
    var = (w.T @ (x * x)) / safe[:, None] - mean * mean
    var = np.maximum(var, 0.0)
    return BatchStats(mean=mean, var=var, starved=starved)


def kl_alignment_loss(stats: BatchStats, protos: PrototypeSet) -> Tensor:
    """Closed-form diagonal-Gaussian KL(P_i || Q_i) summed over prototypes.

    P_i is the weighted batch statistic (constant, variance floored at
    VAR_FLOOR), Q_i the prototype Gaussian.  Starved prototypes contribute 0.
    """
    var_p = np.maximum(stats.var, VAR_FLOOR)
    mu_p = stats.mean
    keep = (~stats.starved).astype(np.float64)[:, None]
    ls = protos.log_scales
    inv_var_q = (ls * -2.0).exp()
    delta = ad.lift(mu_p) - protos.means
    term = ls - 0.5 * np.log(var_p) \
        + (ad.lift(var_p) + delta * delta) * inv_var_q * 0.5 - 0.5
    total = (term * keep).sum()
    # Analytically >= 0; the clamp only absorbs last-ulp rounding.
    return ad.maximum(total, 0.0)


def interpretability_losses(w: Tensor) -> tuple[Tensor, Tensor]:
    """Certainty regularizers: negative log of row maxima (r1, averaged over
    samples) and of column maxima (r2, averaged over prototypes)."""
    n, m = w.shape
    row_max = ad.maximum(w.max(axis=1), LOG_CLAMP)
    col_max = ad.maximum(w.max(axis=0), LOG_CLAMP)
    r1 = -(row_max.log().sum()) * (1.0 / n)
    r2 = -(col_max.log().sum()) * (1.0 / m)
    return r1, r2


@dataclass
class LossWeights:
    """Relative weights of the combined objective (all must be >= 0)."""

    beta_kl: float = 1.0
    lambda_r1: float = 0.1
    lambda_r2: float = 0.1
    lambda_ce: float = 1.0

    def validate(self) -> "LossWeights":
        for name in ("beta_kl", "lambda_r1", "lambda_r2", "lambda_ce"):
            if getattr(self, name) < 0:
                raise ContractError(f"loss weight {name} must be >= 0")
        return self


@dataclass
class GmatLossBundle:
    """Unweighted loss components plus their configured weighted sum."""

    recon: Tensor
    kl: Tensor
    r1: Tensor
    r2: Tensor
    total: Tensor
    ce: Tensor | None = None

    def floats(self) -> dict[str, float | None]:
        out = {k: float(getattr(self, k).data) for k in ("recon", "kl", "r1", "r2", "total")}
        out["ce"] = float(self.ce.data) if self.ce is not None else None
        return out


def total_loss(recon: Tensor, kl: Tensor, r1: Tensor, r2: Tensor,
               weights: LossWeights, ce: Tensor | None = None) -> GmatLossBundle:
    """Assemble the weighted objective; components are recorded unweighted."""
    weights.validate()
    total = recon + weights.beta_kl * kl + weights.lambda_r1 * r1 + weights.lambda_r2 * r2
    if ce is not None:
        total = total + weights.lambda_ce * ce
    return GmatLossBundle(recon=recon, kl=kl, r1=r1, r2=r2, total=total, ce=ce)
