"""Generative replay: synthesize old-task data from a frozen snapshot.

A snapshot captures the decoder parameters and prototype set at a task
boundary.  Replay draws a prototype uniformly, samples its Gaussian, and
decodes; mixing those samples into later tasks' batches counters forgetting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import streams
from .codec import feedforward_np
from .errors import ContractError, NumericError
from .growth import (GrowthConfig, GrowthHistory, IterationRecord, TrainConfig,
                     evaluate, grow_until_converged, train_to_convergence)
from .model import GmatModel


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = arr.copy()
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ReplayGenerator:
    """Immutable decoder + prototype snapshot; never touches live parameters."""

    dec_w: tuple
    dec_b: tuple
    means: np.ndarray
    sigmas: np.ndarray
    task_index: int

    @property
    def count(self) -> int:
        return self.means.shape[0]


def snapshot_generator(model: GmatModel, task_index: int = 0) -> ReplayGenerator:
    """Deep-copy the decoder and prototypes; later training of the live model
    leaves the snapshot untouched."""
    if model.codec is not None:
        dec_w = tuple(_frozen(w.data) for w in model.codec.dec_w)
        dec_b = tuple(_frozen(b.data) for b in model.codec.dec_b)
    else:
        dec_w, dec_b = (), ()
    return ReplayGenerator(dec_w=dec_w, dec_b=dec_b,
                           means=_frozen(model.protos.means.data),
                           sigmas=_frozen(np.exp(model.protos.log_scales.data)),
                           task_index=task_index)


def sample_replay(gen: ReplayGenerator, n: int,
                  rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """n synthetic input-space samples plus their prototype indices.

    Per sample: prototype index uniform over M, latent drawn from that
    prototype's Gaussian, then decoded.  Draw order is indices first, then
    the latent noise.
    """
    if n < 1:
        raise ContractError("replay sample count must be >= 1")
    idx = rng.integers(0, gen.count, size=n)
    z = gen.means[idx] + gen.sigmas[idx] * rng.standard_normal((n, gen.means.shape[1]))
    x = feedforward_np(list(gen.dec_w), list(gen.dec_b), z) if gen.dec_w else z
    return x, idx


def replay_count(batch_size: int, ratio: float) -> int:
    """Synthetic samples appended to a batch: floor(ratio * batch_size)."""
    if ratio < 0:
        raise ContractError("replay ratio must be >= 0")
    return int(math.floor(ratio * batch_size))


def continual_fit(model: GmatModel, tasks, replay_ratio: float,
                  train_cfg: TrainConfig, grow_cfg: GrowthConfig | None,
                  rng: np.random.Generator, epsilon: float | None = None,
                  on_task=None) -> tuple[GmatModel, list[GrowthHistory]]:
    """Sequentially fit every task, replaying a frozen snapshot of the model
    as it stood at each task boundary.

    For every task after the first, batches of B real samples are augmented
    with floor(replay_ratio * B) synthetic ones.  When ``grow_cfg`` is given
    the splitting loop runs per task; otherwise each task is a single
    train-to-convergence pass.  Returns per-task growth histories.
    """
    if len(tasks) == 0:
        raise ContractError("task stream must be nonempty")
    if replay_ratio < 0:
        raise ContractError("replay ratio must be >= 0")
    histories: list[GrowthHistory] = []
    task_rngs = streams.split(rng, len(tasks))
    gen = None
    for t, task in enumerate(tasks):
        fit_rng, mat_rng = streams.split(task_rngs[t], 2)
        # Codec warmup applies to the first task only; later tasks must not
        # re-shape the latent space the replay snapshot depends on.
        cfg_t = train_cfg if t == 0 else replace(train_cfg, warmup_epochs=0)
        replay = None
        extra = None
        if t > 0:
            gen = snapshot_generator(model, task_index=t - 1)
            if replay_ratio > 0:
                replay = (gen, replay_ratio)
                n_extra = replay_count(len(task), replay_ratio)
                if n_extra:
                    extra, _ = sample_replay(gen, n_extra, mat_rng)
        try:
            if grow_cfg is not None:
                eps = grow_cfg.epsilon if epsilon is None else epsilon
                model, history = grow_until_converged(
                    model, task, eps, cfg_t, grow_cfg, fit_rng,
                    replay=replay, indicator_extra=extra)
            else:
                epochs = train_to_convergence(model, task, cfg_t,
                                              fit_rng, replay=replay)
                losses, score = evaluate(model, task)
                history = GrowthHistory([IterationRecord(
                    iteration=1, count=model.protos.count, strengths=[],
                    max_strength=0.0, chosen=0, split=False, losses=losses,
                    nmi=score, epochs=epochs)])
        except NumericError as e:
            raise NumericError(f"task {t}: {e}") from e
        histories.append(history)
        if on_task is not None:
            on_task(t, model)
    return model, histories
