"""Full model: optional codec around the prototype mixture, plus loss assembly.

When no codec is configured the mixture operates directly on the input space
(the pure-mixture mode used for low-dimensional stream experiments).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import codec as cd
from . import mixture as mx
from .autodiff import Tensor
from .errors import ContractError


@dataclass
class GmatModel:
    protos: mx.PrototypeSet
    codec: cd.Codec | None = None
    centroids: cd.ClassCentroids | None = None
    weights: mx.LossWeights = None  # type: ignore[assignment]

    def __post_init__(self):
        if self.weights is None:
            self.weights = mx.LossWeights()
        self.weights.validate()
        if self.codec is not None and self.codec.latent_dim != self.protos.dim:
            raise ContractError(
                f"codec latent width {self.codec.latent_dim} must equal "
                f"prototype dim {self.protos.dim}")

    @property
    def input_dim(self) -> int:
        return self.codec.input_dim if self.codec is not None else self.protos.dim

    def params(self) -> list[Tensor]:
        ps = list(self.protos.params())
        if self.codec is not None:
            ps.extend(self.codec.params())
        return ps

    def copy(self) -> "GmatModel":
        return GmatModel(self.protos.copy(),
                         self.codec.copy() if self.codec is not None else None,
                         self.centroids.copy() if self.centroids is not None else None,
                         mx.LossWeights(**vars(self.weights)))

    # --- forward passes -------------------------------------------------
    def encode(self, x) -> Tensor:
        x = ad.lift(x)
        if self.codec is None:
            if x.shape[1] != self.protos.dim:
                raise ContractError(
                    f"expected width {self.protos.dim}, got {x.shape[1]}")
            return x
        return cd.encode(self.codec, x)

    def decode(self, z: Tensor) -> Tensor:
        return z if self.codec is None else cd.decode(self.codec, z)

    def reconstruct(self, x, rng=None, sample: bool = False) -> Tensor:
        """Input-space reconstruction of a batch (deterministic by default)."""
        h = self.encode(x)
        w = mx.responsibilities(h, self.protos)
        mode = "sample" if sample else "deterministic"
        z = mx.reconstruct(self.protos, w, mode=mode, rng=rng)
        return self.decode(z)

    def latents(self, x: np.ndarray) -> np.ndarray:
        return self.encode(np.asarray(x, dtype=np.float64)).data

    def responsibilities_np(self, x: np.ndarray) -> np.ndarray:
        h = self.latents(x)
        return mx.responsibilities(h, self.protos).data

    def assign(self, x: np.ndarray) -> np.ndarray:
        """Hard cluster per sample: argmax responsibility == argmin distance;
        ties break to the lowest prototype index."""
        h = self.latents(x)
        d = mx.distances(h, self.protos).data
        return np.argmin(d, axis=1)

    # --- training objective ----------------------------------------------
    def loss(self, x: np.ndarray, labels: np.ndarray | None = None,
             rng: np.random.Generator | None = None, sample: bool = True,
             n_real: int | None = None) -> tuple[mx.GmatLossBundle, Tensor]:
        """Loss bundle for one batch.

        Rows past ``n_real`` are replay samples: they join the unsupervised
        terms but are excluded from centroid updates and the label-matching
        cross-entropy.  ``labels`` (when given) parallels the real rows.
        Centroids are refreshed from the batch before the cross-entropy is
        taken, and act as constants inside the step.
        """
        x = np.asarray(x, dtype=np.float64)
        n = x.shape[0]
        n_real = n if n_real is None else n_real
        xt = ad.lift(x)
        h = self.encode(xt)
        w = mx.responsibilities(h, self.protos)
        mode = "sample" if sample and rng is not None else "deterministic"
        z = mx.reconstruct(self.protos, w, mode=mode, rng=rng)
        recon = mx.recon_loss(xt, self.decode(z))
        stats = mx.weighted_batch_stats(h.data, w.data)
        kl = mx.kl_alignment_loss(stats, self.protos)
        r1, r2 = mx.interpretability_losses(w)

        ce = None
        if labels is not None and self.centroids is not None \
                and self.weights.lambda_ce > 0:
            labels = np.asarray(labels)
            if len(labels) != n_real:
                raise ContractError("labels must parallel the real rows")
            cd.update_centroids(self.centroids, h.data[:n_real], labels)
            if len(self.centroids.centroids) >= 2:
                if n_real == n:
                    ce = cd.label_match_loss(h, self.centroids, labels)
                else:
                    mask = np.arange(n) < n_real
                    padded = np.concatenate(
                        [labels, np.zeros(n - n_real, dtype=labels.dtype)])
                    ce = _masked_label_loss(h, self.centroids, padded, mask, n_real)

        return mx.total_loss(recon, kl, r1, r2, self.weights, ce=ce), w


def _masked_label_loss(latents: Tensor, cc: cd.ClassCentroids,
                       labels: np.ndarray, mask: np.ndarray,
                       n_real: int) -> Tensor:
    """Cross-entropy restricted to ``mask`` rows (replay rows contribute 0)."""
    n, d = latents.shape
    cmat = cc.matrix()
    k = cmat.shape[0]
    diff = latents.reshape(n, 1, d) - ad.lift(cmat.reshape(1, k, d))
    sq = (diff * diff).sum(axis=2)
    neg = -sq
    log_p = neg - ad.logsumexp(neg, axis=1, keepdims=True)
    onehot = cd._class_onehot(cc, labels, mask=mask)
    return -(ad.lift(onehot) * log_p).sum() * (1.0 / n_real)


def build_model(input_dim: int, latent_dim: int, hidden: list[int],
                use_codec: bool, init_m: int, init_strategy: str,
                rng: np.random.Generator, data: np.ndarray | None = None,
                init_scale: float = 1.0,
                weights: mx.LossWeights | None = None,
                track_labels: bool = False,
                centroid_decay: float = 0.9) -> GmatModel:
    """Wire a codec (or identity) to a fresh prototype set."""
    if use_codec:
        codec = cd.build_codec(input_dim, hidden, latent_dim, rng)
        proto_dim = latent_dim
        proto_data = None
        if init_strategy == "data-mean" and data is not None:
            proto_data = cd.encode(codec, np.asarray(data, dtype=np.float64)).data
    else:
        codec = None
        proto_dim = input_dim
        proto_data = data
    protos = mx.init_prototypes(init_m, proto_dim, init_strategy, rng=rng,
                                data=proto_data, scale=init_scale)
    centroids = cd.ClassCentroids(decay=centroid_decay) if track_labels else None
    return GmatModel(protos, codec, centroids, weights or mx.LossWeights())
