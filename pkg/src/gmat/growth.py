"""Prototype growth: morphic doubling, the splitting indicator, and the
train/measure/split driver.

Doubling every prototype into a +/- pair preserves the model's outputs
exactly as the pair offset goes to 0 (each copy takes half the original
responsibility).  With a small offset - sized relative to the prototype's own
scale - the antisymmetric component of the copy gradients indicates how
profitably a prototype would split and in which direction; its squared norm
is the splitting strength.  Exact duplicates receive identical gradients by
symmetry, so a usable indicator needs a nonzero offset.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import mixture as mx
from . import streams
from .autodiff import Tensor, grad
from .errors import ContractError, NumericError
from .metrics import nmi
from .model import GmatModel


@dataclass
class TrainConfig:
    lr: float = 1e-3
    max_epochs: int = 500
    patience: int = 50
    batch_size: int = 128
    min_rel_improvement: float = 1e-5
    sample: bool = True
    warmup_epochs: int = 0   # plain-autoencoder codec pretraining
    train_codec: bool = True  # False: freeze codec, train prototypes only


@dataclass
class GrowthConfig:
    epsilon: float = 1e-4
    delta: float = 0.2
    eta: float = 0.05
    max_iterations: int = 30


class Adam:
    """Adaptive-moment first-order optimizer over leaf tensors."""

    def __init__(self, params: list[Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self, grads: dict[Tensor, np.ndarray]) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            g = grads[p]
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            p.data -= self.lr * (self.m[i] / b1c) / (np.sqrt(self.v[i] / b2c) + self.eps)


def _iter_batches(x: np.ndarray, labels, batch_size: int,
                  rng: np.random.Generator | None):
    """Seeded-shuffle minibatches; ``rng=None`` keeps the dataset order."""
    n = x.shape[0]
    order = np.arange(n) if rng is None else rng.permutation(n)
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        yield x[idx], (labels[idx] if labels is not None else None)


def train_to_convergence(model: GmatModel, dataset, cfg: TrainConfig,
                         rng: np.random.Generator,
                         replay: tuple | None = None) -> int:
    """Adam epochs until the epoch loss stops improving, then restore best.

    Stops after ``cfg.patience`` epochs without a relative improvement above
    ``cfg.min_rel_improvement``, or at ``cfg.max_epochs``.  ``replay`` is an
    optional ``(generator, ratio)`` pair: every batch of B real samples is
    padded with floor(ratio * B) synthetic ones that join only the
    unsupervised terms.  Returns the number of epochs run.
    """
    from .replay import replay_count, sample_replay

    if cfg.max_epochs <= 0:
        return 0
    supervised = (dataset.labels is not None and model.centroids is not None
                  and model.weights.lambda_ce > 0)
    # With one prototype the attention output is independent of the input: in
    # the unsupervised case the encoder receives no gradient and the decoder
    # would collapse toward the constant mean, so only the prototype
    # statistics are trained.  Label matching restores an encoder signal.
    freeze_codec = model.codec is not None and (
        not cfg.train_codec or (model.protos.count == 1 and not supervised))
    params = model.protos.params() if freeze_codec else model.params()
    opt = Adam(params, lr=cfg.lr)
    batch_rng, sample_rng, replay_rng = streams.split(rng, 3)

    best = np.inf
    best_params = [p.data.copy() for p in params]
    best_centroids = model.centroids.copy() if model.centroids is not None else None
    bad_epochs = 0
    epochs_run = 0
    for epoch in range(cfg.max_epochs):
        epochs_run = epoch + 1
        total, count = 0.0, 0
        for xb, yb in _iter_batches(dataset.X, dataset.labels,
                                    cfg.batch_size, batch_rng):
            n_real = xb.shape[0]
            if replay is not None:
                gen, ratio = replay
                k = replay_count(n_real, ratio)
                if k > 0:
                    xr, _ = sample_replay(gen, k, replay_rng)
                    xb = np.vstack([xb, xr])
            # Divergence surfaces as a NumericError, not numpy warnings.
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                bundle, _ = model.loss(xb, labels=yb if supervised else None,
                                       rng=sample_rng, sample=cfg.sample,
                                       n_real=n_real)
                value = float(bundle.total.data)
                if not np.isfinite(value):
                    raise NumericError(f"non-finite loss at epoch {epoch}")
                grads = grad(bundle.total, params)
                opt.step(grads)
            total += value * xb.shape[0]
            count += xb.shape[0]
        epoch_loss = total / count
        if epoch_loss < best:
            improved = (not np.isfinite(best)) or \
                (best - epoch_loss) > cfg.min_rel_improvement * max(abs(best), 1e-12)
            best = epoch_loss
            best_params = [p.data.copy() for p in params]
            if model.centroids is not None:
                best_centroids = model.centroids.copy()
            bad_epochs = 0 if improved else bad_epochs + 1
        else:
            bad_epochs += 1
        if bad_epochs >= cfg.patience:
            break
    # Restore the best-loss snapshot; centroids travel with the parameters.
    for p, saved in zip(params, best_params):
        p.data = saved
    if best_centroids is not None:
        model.centroids.centroids = best_centroids.centroids
        model.centroids.counts = best_centroids.counts
        model.centroids.stale = best_centroids.stale
    return epochs_run


def pretrain_codec(model: GmatModel, dataset, epochs: int, cfg: TrainConfig,
                   rng: np.random.Generator) -> None:
    """Train the codec as a plain autoencoder for a few epochs.

    With a single prototype the attention output carries no information about
    the input, so a fresh codec receives no reconstruction gradient; a short
    warmup gives the latent space structure before prototype training starts.
    No-op without a codec.
    """
    if model.codec is None or epochs <= 0:
        return
    from . import codec as cd
    from .autodiff import lift

    params = model.codec.params()
    opt = Adam(params, lr=cfg.lr)
    for _ in range(epochs):
        for xb, _ in _iter_batches(dataset.X, None, cfg.batch_size, rng):
            xt = lift(xb)
            out = cd.decode(model.codec, cd.encode(model.codec, xt))
            diff = xt - out
            loss = (diff * diff).sum() * (1.0 / xb.shape[0])
            opt.step(grad(loss, params))
    # Prototypes start from the freshly shaped latent cloud.
    h = model.latents(dataset.X)
    model.protos.means.data = np.tile(h.mean(axis=0),
                                      (model.protos.count, 1))
    model.protos.log_scales.data = np.zeros_like(model.protos.log_scales.data)


@dataclass
class MorphicModel:
    """Doubled-prototype view of a base model (codec shared, not copied)."""

    base: GmatModel
    model: GmatModel          # 2M prototypes, copies interleaved (+, -)
    directions: np.ndarray    # (M, d) unit perturbation per original
    delta: float              # relative offset (fraction of prototype scale)
    offsets: np.ndarray       # (M,) absolute offset per original

    @property
    def pairs(self) -> int:
        return self.directions.shape[0]

    def copy_index(self, original: int, sign: int) -> int:
        """Row of the (+) or (-) copy of an original prototype."""
        return 2 * original + (0 if sign > 0 else 1)


def _proto_scales(model: GmatModel) -> np.ndarray:
    """Mean scale per prototype; sizes the perturbation to the prototype."""
    return np.exp(model.protos.log_scales.data).mean(axis=1)


def _double_with(model: GmatModel, u: np.ndarray, delta: float) -> MorphicModel:
    means = model.protos.means.data
    ls = model.protos.log_scales.data
    m, d = means.shape
    offsets = delta * _proto_scales(model)
    step = offsets[:, None] * u
    means2 = np.empty((2 * m, d))
    means2[0::2] = means + step
    means2[1::2] = means - step
    ls2 = np.repeat(ls, 2, axis=0)
    protos2 = mx.PrototypeSet(Tensor(means2), Tensor(ls2))
    doubled = GmatModel(protos2, model.codec, None,
                        mx.LossWeights(**vars(model.weights)))
    return MorphicModel(base=model, model=doubled, directions=u, delta=delta,
                        offsets=offsets)


def morphic_double(model: GmatModel, delta: float,
                   rng: np.random.Generator) -> MorphicModel:
    """Duplicate every prototype into a pair offset by +/- delta * scale * u.

    ``delta`` is relative: the absolute offset of prototype m is delta times
    its mean scale, along the unit direction u_m.  With delta = 0 the doubled
    model performs the same input/output mapping as the base model for every
    input.
    """
    if delta < 0:
        raise ContractError("delta must be >= 0")
    m, d = model.protos.count, model.protos.dim
    u = rng.standard_normal((m, d))
    u /= np.maximum(np.linalg.norm(u, axis=1, keepdims=True), 1e-300)
    return _double_with(model, u, delta)


def _antisymmetric_gradient(morphic: MorphicModel, dataset,
                            batch_size: int) -> np.ndarray:
    n = dataset.X.shape[0]
    means2 = morphic.model.protos.means
    acc = np.zeros_like(means2.data)
    for xb, _ in _iter_batches(dataset.X, None, batch_size, rng=None):
        bundle, _ = morphic.model.loss(xb, sample=False)
        smooth = bundle.recon + morphic.model.weights.beta_kl * bundle.kl
        g = grad(smooth, [means2])[means2]
        acc += g * (xb.shape[0] / n)
    return 0.5 * (acc[0::2] - acc[1::2])


def _renormalize(direction: np.ndarray, fallback: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(direction, axis=1, keepdims=True)
    return np.where(norms > 0, direction / np.maximum(norms, 1e-300), fallback)


def _residual_axes(model: GmatModel, dataset) -> np.ndarray:
    """Principal axis of each prototype's responsibility-weighted residual
    covariance: the direction of the structure the prototype fails to model."""
    h = model.latents(dataset.X)
    w = mx.responsibilities(h, model.protos).data
    m, d = model.protos.count, model.protos.dim
    axes = np.zeros((m, d))
    mass = w.sum(axis=0)
    for j in range(m):
        if mass[j] < mx.STARVED_MASS:
            axes[j, 0] = 1.0
            continue
        mu = (w[:, j] @ h) / mass[j]
        rs = h - mu
        cov = (rs * w[:, j:j + 1]).T @ rs / mass[j]
        vals, vecs = np.linalg.eigh(cov)
        axes[j] = vecs[:, -1]
    return axes


def splitting_direction(morphic: MorphicModel, dataset, batch_size: int,
                        refine: int = 2) -> np.ndarray:
    """Per-original-prototype direction: dataset-averaged antisymmetric
    gradient between the two copies, accumulated in fixed batch order.

    The gradient is taken on the smooth part of the objective
    (reconstruction + weighted KL).  The certainty regularizers select hard
    row/column maxima, and for duplicated prototypes that selection injects a
    delta-independent asymmetry that would swamp the actual splitting signal;
    excluding them restores the exact delta=0 symmetry and the first-order
    (linear in delta) behaviour of the indicator.  Reconstruction is
    deterministic so the direction is a pure function of parameters and data.

    Beyond the morphic model's own probe, each prototype is also probed along
    the principal axis of its responsibility-weighted residual covariance,
    and ``refine`` extra probes follow the most separating pull found so far.
    Per prototype the most separating probe wins; a prototype whose every
    probe is restoring (the copies get pushed back together) reports a zero
    direction: it has no profitable split.
    """
    if dataset.X.shape[0] == 0:
        raise ContractError("splitting direction needs a nonempty dataset")
    direction = _antisymmetric_gradient(morphic, dataset, batch_size)
    if morphic.delta == 0 or not direction.any():
        return direction

    def probe(u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        d = _antisymmetric_gradient(
            _double_with(morphic.base, u, morphic.delta), dataset, batch_size)
        return d, (d * u).sum(axis=1)

    best_u = morphic.directions
    best_d = direction
    best_score = (direction * best_u).sum(axis=1)

    def consider(u: np.ndarray) -> None:
        nonlocal best_u, best_d, best_score
        d, score = probe(u)
        better = score < best_score
        best_u = np.where(better[:, None], u, best_u)
        best_d = np.where(better[:, None], d, best_d)
        best_score = np.where(better, score, best_score)

    consider(_residual_axes(morphic.base, dataset))
    for _ in range(refine):
        consider(_renormalize(-best_d, best_u))
    separating = best_score < 0
    return np.where(separating[:, None], best_d, 0.0)


def splitting_strength(direction: np.ndarray) -> np.ndarray | float:
    """Squared Euclidean norm of a splitting direction (rows, if 2-D)."""
    direction = np.asarray(direction, dtype=np.float64)
    s = np.sum(direction * direction, axis=-1)
    return float(s) if s.ndim == 0 else s


def apply_split(model: GmatModel, proto_index: int, direction: np.ndarray,
                eta: float) -> GmatModel:
    """Replace one prototype with two at mean +/- eta * direction/|direction|.

    The pair inherits the original log-scales; every other prototype is
    carried over bitwise.  The new prototype is appended, so other indices
    are stable.
    """
    norm = float(np.linalg.norm(direction))
    if norm <= 0:
        raise ContractError("split direction must be nonzero")
    if eta <= 0:
        raise ContractError("split offset eta must be > 0")
    unit = np.asarray(direction, dtype=np.float64) / norm
    means = model.protos.means.data
    ls = model.protos.log_scales.data
    new_means = np.vstack([means.copy(), means[proto_index] - eta * unit])
    new_means[proto_index] = means[proto_index] + eta * unit
    new_ls = np.vstack([ls.copy(), ls[proto_index]])
    protos = mx.PrototypeSet(Tensor(new_means), Tensor(new_ls))
    return GmatModel(protos, model.codec, model.centroids,
                     mx.LossWeights(**vars(model.weights)))


@dataclass
class IterationRecord:
    iteration: int
    count: int                    # prototypes during this iteration
    strengths: list[float]
    max_strength: float
    chosen: int                   # argmax-strength prototype
    split: bool                   # whether it was actually split
    losses: dict[str, float | None]
    nmi: float | None
    epochs: int


@dataclass
class GrowthHistory:
    records: list[IterationRecord] = field(default_factory=list)

    def append(self, rec: IterationRecord) -> None:
        if self.records and rec.count < self.records[-1].count:
            raise ContractError("prototype count must be nondecreasing")
        self.records.append(rec)

    def final_count(self) -> int:
        return self.records[-1].count if self.records else 0


def evaluate(model: GmatModel, dataset) -> tuple[dict[str, float | None], float | None]:
    """Deterministic full-dataset loss components and NMI (labels permitting)."""
    supervised = (dataset.labels is not None and model.centroids is not None
                  and model.weights.lambda_ce > 0
                  and len(model.centroids.centroids) >= 2)
    if supervised:
        # Score against the persistent centroids without refreshing them.
        frozen = model.centroids.copy()
        bundle, _ = model.loss(dataset.X, labels=dataset.labels, sample=False)
        model.centroids = frozen
    else:
        bundle, _ = model.loss(dataset.X, sample=False)
    score = None
    if dataset.labels is not None:
        score = nmi(dataset.labels, model.assign(dataset.X))
    return bundle.floats(), score


def grow_until_converged(model: GmatModel, dataset, epsilon: float,
                         train_cfg: TrainConfig, grow_cfg: GrowthConfig,
                         rng: np.random.Generator,
                         replay: tuple | None = None,
                         indicator_extra: np.ndarray | None = None,
                         on_record=None) -> tuple[GmatModel, GrowthHistory]:
    """Alternate training and splitting until the indicator falls to epsilon.

    Each outer iteration trains to convergence, doubles the model, measures
    every prototype's splitting strength, and records one history row.  While
    ``max - strength > epsilon`` the argmax prototype (ties to the lowest
    index) is split and the loop repeats, up to ``grow_cfg.max_iterations``
    iterations.

    ``indicator_extra`` appends unlabeled rows (e.g. materialized replay
    samples) to the dataset the splitting indicator sees, so splits also
    re-cover modes that live only in replayed data; training batches and the
    recorded evaluation stay on the real dataset.
    """
    if not epsilon > 0:
        raise ContractError("epsilon must be > 0")
    if grow_cfg.max_iterations < 1:
        raise ContractError("max_iterations must be >= 1")
    from .data import Dataset

    indicator_ds = dataset
    if indicator_extra is not None and len(indicator_extra):
        indicator_ds = Dataset(np.vstack([dataset.X, indicator_extra]), None,
                               f"{dataset.name}+replay")
    history = GrowthHistory()
    iter_rngs = streams.split(rng, grow_cfg.max_iterations + 1)
    pretrain_codec(model, dataset, train_cfg.warmup_epochs, train_cfg,
                   iter_rngs[grow_cfg.max_iterations])
    for it in range(1, grow_cfg.max_iterations + 1):
        train_rng, split_rng = streams.split(iter_rngs[it - 1], 2)
        try:
            epochs = train_to_convergence(model, dataset, train_cfg, train_rng,
                                          replay=replay)
        except NumericError as e:
            raise NumericError(f"iteration {it}: {e}") from e
        morphic = morphic_double(model, grow_cfg.delta, split_rng)
        direction = splitting_direction(morphic, indicator_ds,
                                        train_cfg.batch_size)
        strengths = splitting_strength(direction)
        losses, score = evaluate(model, dataset)
        chosen = int(np.argmax(strengths))
        max_strength = float(strengths[chosen])
        will_split = max_strength > epsilon and it < grow_cfg.max_iterations
        rec = IterationRecord(iteration=it, count=model.protos.count,
                              strengths=[float(s) for s in strengths],
                              max_strength=max_strength, chosen=chosen,
                              split=will_split, losses=losses, nmi=score,
                              epochs=epochs)
        history.append(rec)
        if on_record is not None:
            on_record(rec)
        if not will_split:
            break
        model = apply_split(model, chosen, direction[chosen], grow_cfg.eta)
    return model, history
