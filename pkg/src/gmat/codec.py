"""Fully connected encoder/decoder and the soft label-matching head.

The encoder maps inputs to the prototype working space; the decoder maps the
reconstructed latent back.  Hidden layers use a rectifier, outputs are linear.
Label matching keeps a persistent exponential-moving-average centroid of the
latent per class and classifies by softmin over squared latent distances.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError


@dataclass
class Codec:
    """Mirrored fully connected encoder and decoder."""

    enc_w: list[Tensor]
    enc_b: list[Tensor]
    dec_w: list[Tensor]
    dec_b: list[Tensor]

    @property
    def input_dim(self) -> int:
        return self.enc_w[0].shape[0]

    @property
    def latent_dim(self) -> int:
        return self.enc_w[-1].shape[1]

    @property
    def hidden(self) -> list[int]:
        return [w.shape[1] for w in self.enc_w[:-1]]

    def params(self) -> list[Tensor]:
        return [*self.enc_w, *self.enc_b, *self.dec_w, *self.dec_b]

    def copy(self) -> "Codec":
        clone = lambda ts: [Tensor(t.data.copy()) for t in ts]
        return Codec(clone(self.enc_w), clone(self.enc_b),
                     clone(self.dec_w), clone(self.dec_b))


def _init_layers(widths: list[int], rng: np.random.Generator):
    """Scaled-uniform fan-in init: U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    ws, bs = [], []
    for fan_in, fan_out in zip(widths, widths[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        ws.append(Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out))))
        bs.append(Tensor(rng.uniform(-bound, bound, size=(fan_out,))))
    return ws, bs


def build_codec(input_dim: int, hidden_widths: list[int], latent_dim: int,
                rng: np.random.Generator) -> Codec:
    """Encoder input->hidden...->latent and mirrored decoder."""
    dims = [input_dim, *hidden_widths, latent_dim]
    if any(d < 1 for d in dims):
        raise ContractError(f"all codec widths must be >= 1, got {dims}")
    enc_w, enc_b = _init_layers(dims, rng)
    dec_w, dec_b = _init_layers(list(reversed(dims)), rng)
    return Codec(enc_w, enc_b, dec_w, dec_b)


def _feedforward(ws: list[Tensor], bs: list[Tensor], x: Tensor) -> Tensor:
    h = x
    last = len(ws) - 1
    for i, (w, b) in enumerate(zip(ws, bs)):
        h = h @ w + b.reshape(1, -1)
        if i < last:
            h = ad.relu(h)
    return h


def encode(codec: Codec, x: Tensor | np.ndarray) -> Tensor:
    x = ad.lift(x)
    if x.ndim != 2 or x.shape[1] != codec.input_dim:
        raise ContractError(
            f"encode expects (N, {codec.input_dim}), got {x.shape}")
    return _feedforward(codec.enc_w, codec.enc_b, x)


def decode(codec: Codec, z: Tensor | np.ndarray) -> Tensor:
    z = ad.lift(z)
    if z.ndim != 2 or z.shape[1] != codec.latent_dim:
        raise ContractError(
            f"decode expects (N, {codec.latent_dim}), got {z.shape}")
    return _feedforward(codec.dec_w, codec.dec_b, z)


def feedforward_np(ws: list[np.ndarray], bs: list[np.ndarray],
                   x: np.ndarray) -> np.ndarray:
    """Numpy-only mirror of the layer stack (used by frozen replay decoders)."""
    h = np.asarray(x, dtype=np.float64)
    last = len(ws) - 1
    for i, (w, b) in enumerate(zip(ws, bs)):
        h = h @ w + b
        if i < last:
            h = np.maximum(h, 0.0)
    return h


@dataclass
class ClassCentroids:
    """Persistent per-class latent averages.

    Updated as an exponential moving average so inference works beyond a
    single batch; ``decay=0`` reproduces exact per-batch class averages.
    ``stale`` marks classes absent from the most recent update.
    """

    decay: float = 0.9
    centroids: dict[int, np.ndarray] = field(default_factory=dict)
    counts: dict[int, int] = field(default_factory=dict)
    stale: dict[int, bool] = field(default_factory=dict)

    def classes(self) -> list[int]:
        return sorted(self.centroids)

    def matrix(self) -> np.ndarray:
        """Centroids stacked in ascending class order, shape (K, d)."""
        return np.stack([self.centroids[c] for c in self.classes()])

    def copy(self) -> "ClassCentroids":
        return ClassCentroids(self.decay,
                              {c: v.copy() for c, v in self.centroids.items()},
                              dict(self.counts), dict(self.stale))


def update_centroids(cc: ClassCentroids, latents: np.ndarray,
                     labels: np.ndarray) -> ClassCentroids:
    """Fold a batch of latents into the per-class EMA centroids (in place)."""
    latents = np.asarray(latents, dtype=np.float64)
    labels = np.asarray(labels)
    if len(labels) != len(latents):
        raise ContractError("labels must parallel the latent batch")
    seen = set()
    for c in np.unique(labels):
        c = int(c)
        seen.add(c)
        batch_mean = latents[labels == c].mean(axis=0)
        n = int(np.sum(labels == c))
        if c in cc.centroids:
            cc.centroids[c] = cc.decay * cc.centroids[c] + (1.0 - cc.decay) * batch_mean
        else:
            cc.centroids[c] = batch_mean.copy()
        cc.counts[c] = cc.counts.get(c, 0) + n
    for c in cc.centroids:
        cc.stale[c] = c not in seen
    return cc


def _class_onehot(cc: ClassCentroids, labels: np.ndarray,
                  mask: np.ndarray | None = None) -> np.ndarray:
    classes = cc.classes()
    index = {c: i for i, c in enumerate(classes)}
    onehot = np.zeros((len(labels), len(classes)))
    for row, lab in enumerate(labels):
        if mask is not None and not mask[row]:
            continue
        onehot[row, index[int(lab)]] = 1.0
    return onehot


def label_match_loss(latents: Tensor, cc: ClassCentroids,
                     labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of softmin class probabilities over squared latent
    distances to the class centroids (centroids are constant per step)."""
    if len(cc.centroids) < 2:
        raise ContractError("label matching needs at least 2 known classes")
    latents = ad.lift(latents)
    n, d = latents.shape
    cmat = cc.matrix()
    k = cmat.shape[0]
    diff = latents.reshape(n, 1, d) - ad.lift(cmat.reshape(1, k, d))
    sq = (diff * diff).sum(axis=2)
    neg = -sq
    log_p = neg - ad.logsumexp(neg, axis=1, keepdims=True)
    onehot = _class_onehot(cc, labels)
    return -(ad.lift(onehot) * log_p).sum() * (1.0 / n)


def predict_class(codec: Codec | None, cc: ClassCentroids,
                  x: np.ndarray) -> np.ndarray:
    """Nearest-centroid class in latent space; ties break to the lowest class."""
    if not cc.centroids:
        raise ContractError("no class centroids available")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    h = encode(codec, x).data if codec is not None else x
    cmat = cc.matrix()
    sq = ((h[:, None, :] - cmat[None, :, :]) ** 2).sum(axis=2)
    classes = np.array(cc.classes())
    return classes[np.argmin(sq, axis=1)]
