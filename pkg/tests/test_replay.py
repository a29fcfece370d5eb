"""Replay generator snapshots, sampling, and the continual-learning driver."""

import numpy as np
import pytest
from scipy import stats as scipy_stats

import gmat
from gmat import streams
from gmat.autodiff import Tensor
from gmat.errors import ContractError
from gmat.growth import TrainConfig, train_to_convergence
from gmat.mixture import PrototypeSet
from gmat.model import GmatModel
from gmat.replay import (continual_fit, replay_count, sample_replay,
                         snapshot_generator)


def simple_model(seed=0, with_codec=False):
    rng = np.random.default_rng(seed)
    protos = PrototypeSet(Tensor(rng.standard_normal((4, 2))),
                          Tensor(rng.standard_normal((4, 2)) * 0.2))
    codec = gmat.build_codec(2, [6], 2, rng) if with_codec else None
    return GmatModel(protos, codec)


def generators_equal(a, b):
    if a.task_index != b.task_index or len(a.dec_w) != len(b.dec_w):
        return False
    pairs = list(zip(a.dec_w, b.dec_w)) + list(zip(a.dec_b, b.dec_b))
    pairs += [(a.means, b.means), (a.sigmas, b.sigmas)]
    return all(np.array_equal(u, v) for u, v in pairs)


def test_snapshot_survives_training():
    ds = gmat.gen_blobs(2, 200, seed=1)
    model = simple_model(with_codec=True)
    gen = snapshot_generator(model)
    frozen = gen.means.copy()
    train_to_convergence(model, ds, TrainConfig(max_epochs=30, patience=10),
                         streams.substream(0, "t"))
    assert np.array_equal(gen.means, frozen)
    assert not np.array_equal(model.protos.means.data, gen.means)


def test_snapshot_idempotent():
    model = simple_model(with_codec=True)
    assert generators_equal(snapshot_generator(model), snapshot_generator(model))


def test_snapshot_counts_match():
    model = simple_model()
    assert snapshot_generator(model).count == model.protos.count


def test_sample_sigma_zero_hits_decoded_means():
    model = simple_model()
    model.protos.log_scales.data[:] = -np.inf
    gen = snapshot_generator(model)
    x, idx = sample_replay(gen, 64, np.random.default_rng(0))
    for i in range(64):
        assert np.array_equal(x[i], gen.means[idx[i]])


def test_sample_counts_uniform_chi_square():
    model = simple_model()
    gen = snapshot_generator(model)
    _, idx = sample_replay(gen, 10_000, np.random.default_rng(5))
    counts = np.bincount(idx, minlength=4)
    _, p = scipy_stats.chisquare(counts)
    assert p > 0.01


def test_sample_deterministic():
    gen = snapshot_generator(simple_model())
    a, ia = sample_replay(gen, 32, np.random.default_rng(9))
    b, ib = sample_replay(gen, 32, np.random.default_rng(9))
    assert np.array_equal(a, b) and np.array_equal(ia, ib)


def test_sample_rejects_nonpositive():
    gen = snapshot_generator(simple_model())
    with pytest.raises(ContractError):
        sample_replay(gen, 0, np.random.default_rng(0))


def test_replay_count_floor():
    assert replay_count(128, 1.0) == 128
    assert replay_count(128, 0.5) == 64
    assert replay_count(10, 0.33) == 3
    assert replay_count(128, 0.0) == 0
    with pytest.raises(ContractError):
        replay_count(4, -0.1)


def test_augmented_batch_fraction():
    for b, r in [(128, 1.0), (50, 0.4), (7, 0.9)]:
        k = replay_count(b, r)
        frac = k / (b + k)
        assert frac == int(np.floor(r * b)) / (b + int(np.floor(r * b)))


def two_task_stream():
    t1 = gmat.gen_blobs(2, 300, 0.5, (-7, -1), seed=3)
    raw = gmat.gen_blobs(2, 300, 0.5, (1, 7), seed=4)
    t2 = gmat.Dataset(raw.X, raw.labels + 2, "task2")
    return gmat.TaskStream([t1, t2], "groups")


def test_single_task_stream_equals_plain_training():
    tasks = gmat.TaskStream([gmat.gen_blobs(2, 200, seed=1)], "groups")
    cfg = TrainConfig(max_epochs=20, patience=8, batch_size=64)

    def fresh():
        return gmat.build_model(2, 2, [], False, 2, "data-mean",
                                streams.substream(7, "init"),
                                data=tasks[0].X)

    model_a, hists = continual_fit(fresh(), tasks, 1.0, cfg, None,
                                   streams.substream(5, "c"))
    assert len(hists) == 1
    # replicate the derivation continual_fit documents: task 0 trains with
    # the first child of the first task stream and no replay
    model_b = fresh()
    task_rng = streams.split(streams.substream(5, "c"), 1)[0]
    fit_rng, _ = streams.split(task_rng, 2)
    train_to_convergence(model_b, tasks[0], cfg, fit_rng)
    assert np.array_equal(model_a.protos.means.data, model_b.protos.means.data)


def test_ratio_zero_is_sequential_finetuning():
    tasks = two_task_stream()
    cfg = TrainConfig(max_epochs=15, patience=6, batch_size=64)

    def fresh():
        return gmat.build_model(2, 2, [], False, 2, "data-mean",
                                streams.substream(7, "init"), data=tasks[0].X)

    model_a, _ = continual_fit(fresh(), tasks, 0.0, cfg, None,
                               streams.substream(5, "c"))
    # manual sequential pass with the same stream derivation
    model_b = fresh()
    rngs = streams.split(streams.substream(5, "c"), 2)
    for t in range(2):
        fit_rng, _ = streams.split(rngs[t], 2)
        train_to_convergence(model_b, tasks[t], cfg, fit_rng)
    assert np.array_equal(model_a.protos.means.data, model_b.protos.means.data)
    assert np.array_equal(model_a.protos.log_scales.data,
                          model_b.protos.log_scales.data)


def test_empty_stream_rejected():
    with pytest.raises(ContractError):
        continual_fit(simple_model(), gmat.TaskStream([], "groups"), 1.0,
                      TrainConfig(), None, np.random.default_rng(0))


def test_on_task_called_per_task():
    tasks = two_task_stream()
    seen = []
    cfg = TrainConfig(max_epochs=5, patience=3, batch_size=64)
    model = gmat.build_model(2, 2, [], False, 2, "data-mean",
                             streams.substream(7, "init"), data=tasks[0].X)
    continual_fit(model, tasks, 0.5, cfg, None, streams.substream(5, "c"),
                  on_task=lambda t, m: seen.append((t, m.protos.count)))
    assert [t for t, _ in seen] == [0, 1]


def test_replay_retention_beats_finetuning():
    """Forgetting demonstration at reduced scale (fixed seeds): replayed
    training keeps task-1 structure, plain fine-tuning loses it."""
    tasks = two_task_stream()
    cfg = TrainConfig(max_epochs=120, patience=25, batch_size=64)
    gcfg = gmat.GrowthConfig(max_iterations=4)
    scores = {}
    for ratio in (1.0, 0.0):
        model = gmat.build_model(2, 2, [], False, 1, "data-mean",
                                 streams.substream(7, "init"), data=tasks[0].X)
        model, _ = continual_fit(model, tasks, ratio, cfg, gcfg,
                                 streams.substream(5, "c"))
        scores[ratio] = gmat.nmi(tasks[0].labels, model.assign(tasks[0].X))
    assert scores[1.0] - scores[0.0] >= 0.3
