"""Command-line experiment harness.

Commands: ``grow`` (train/split loop), ``continual`` (task stream with
replay), ``eval`` (score a checkpoint on a dataset), ``gen-data`` (emit a
dataset as CSV).  Every command is a pure function of its config file and
inputs: reruns with the same seed produce byte-identical outputs.

Exit codes: 0 ok, 2 config error, 3 numeric failure, 4 I/O or format error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import data as dt
from . import streams
from .autodiff import Tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig, load_config, worker_cap
from .errors import ConfigError, ContractError, FormatError, NumericError
from .growth import GrowthHistory, IterationRecord, grow_until_converged
from .metrics import mapped_accuracy, nmi
from .model import GmatModel, build_model
from .replay import continual_fit

HISTORY_CSV_VERSION = "v1"
HISTORY_COLUMNS = ["iteration", "M", "max_strength", "chosen", "split",
                   "epochs", "recon", "kl", "r1", "r2", "ce", "total", "nmi"]
TASKS_COLUMNS = ["after_task", "eval_task", "n", "nmi", "acc", "M"]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(float(v))
    return str(v)


def build_dataset(cfg: ExperimentConfig) -> dt.Dataset:
    if cfg.dataset == "blobs":
        ds = dt.gen_blobs(cfg.blobs_k, cfg.blobs_n, cfg.blobs_std,
                          tuple(cfg.blobs_box), seed=cfg.seed)
    elif cfg.dataset == "moons":
        ds = dt.gen_moons(cfg.moons_n, cfg.moons_noise, seed=cfg.seed)
    elif cfg.dataset == "idx":
        ds = dt.load_idx(cfg.idx_images, cfg.idx_labels)
        if cfg.idx_subsample:
            ds = dt.stratified_subsample(
                ds, cfg.idx_subsample, streams.substream(cfg.seed, "data", "subsample"))
    elif cfg.dataset == "csv":
        ds = dt.load_csv(cfg.csv_path)
    else:  # unreachable: config validation restricts the value
        raise ConfigError(f"unknown dataset {cfg.dataset!r}")
    if cfg.normalize:
        ds = dt.normalize(ds)
    return ds


def build_model_from_config(cfg: ExperimentConfig, ds: dt.Dataset) -> GmatModel:
    supervised = ds.labels is not None and cfg.lambda_ce > 0
    return build_model(input_dim=ds.dim, latent_dim=cfg.latent,
                       hidden=list(cfg.hidden), use_codec=cfg.use_codec,
                       init_m=cfg.init_m, init_strategy=cfg.init_strategy,
                       rng=streams.substream(cfg.seed, "init"), data=ds.X,
                       init_scale=cfg.init_scale, weights=cfg.loss_weights(),
                       track_labels=supervised,
                       centroid_decay=cfg.centroid_decay)


def write_history_csv(path: str, records: list[IterationRecord]) -> None:
    with open(path, "w") as f:
        f.write(",".join(HISTORY_COLUMNS) + "\n")
        for r in records:
            row = [r.iteration, r.count, float(r.max_strength), r.chosen,
                   r.split, r.epochs, r.losses["recon"], r.losses["kl"],
                   r.losses["r1"], r.losses["r2"], r.losses["ce"],
                   r.losses["total"], r.nmi]
            f.write(",".join(_fmt(v) for v in row) + "\n")


def write_pgm(path: str, image: np.ndarray) -> None:
    """8-bit binary PGM (P5) of an image with values in [0, 1]."""
    img = np.clip(image, 0.0, 1.0)
    bytes_ = np.round(img * 255.0).astype(np.uint8)
    h, w = bytes_.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(bytes_.tobytes())


def write_prototype_images(out_dir: str, model: GmatModel,
                           norm: dt.NormRecord | None) -> list[str]:
    """Decode each prototype mean and emit PGMs when inputs are image-shaped
    (feature count is a perfect square)."""
    side = int(round(model.input_dim ** 0.5))
    if side * side != model.input_dim:
        return []
    decoded = model.decode(Tensor(model.protos.means.data.copy())).data
    if norm is not None:
        decoded = dt.denormalize(decoded, norm)
    paths = []
    for i in range(decoded.shape[0]):
        path = os.path.join(out_dir, f"proto_{i}.pgm")
        write_pgm(path, decoded[i].reshape(side, side))
        paths.append(path)
    return paths


def cmd_grow(cfg: ExperimentConfig, out_dir: str) -> int:
    ds = build_dataset(cfg)
    model = build_model_from_config(cfg, ds)
    os.makedirs(out_dir, exist_ok=True)
    records: list[IterationRecord] = []
    try:
        model, history = grow_until_converged(
            model, ds, cfg.epsilon, cfg.train_cfg(), cfg.growth_cfg(),
            streams.substream(cfg.seed, "grow"), on_record=records.append)
    except NumericError:
        write_history_csv(os.path.join(out_dir, "history.csv"), records)
        raise
    write_history_csv(os.path.join(out_dir, "history.csv"), history.records)
    save_checkpoint(out_dir, model, history, seed=cfg.seed,
                    extra={"history_csv": HISTORY_CSV_VERSION,
                           "dataset": ds.name})
    write_prototype_images(out_dir, model, ds.norm)
    return 0


def cmd_continual(cfg: ExperimentConfig, out_dir: str) -> int:
    ds = build_dataset(cfg)
    if ds.labels is None:
        raise ConfigError("continual learning requires a labeled dataset")
    scheme = "split-pairs" if cfg.task_scheme == "split-pairs" else cfg.task_groups
    tasks = dt.split_tasks(ds, scheme)
    model = build_model_from_config(cfg, ds)
    os.makedirs(out_dir, exist_ok=True)
    rows = []

    def on_task(t: int, m: GmatModel) -> None:
        for e in range(t + 1):
            task = tasks[e]
            pred = m.assign(task.X)
            rows.append([t, e, len(task), nmi(task.labels, pred),
                         mapped_accuracy(task.labels, pred), m.protos.count])

    model, histories = continual_fit(
        model, tasks, cfg.replay_ratio, cfg.train_cfg(),
        cfg.growth_cfg() if cfg.grow else None,
        streams.substream(cfg.seed, "continual"), epsilon=cfg.epsilon,
        on_task=on_task)
    with open(os.path.join(out_dir, "tasks.csv"), "w") as f:
        f.write(",".join(TASKS_COLUMNS) + "\n")
        for row in rows:
            f.write(",".join(_fmt(v) for v in row) + "\n")
    merged = GrowthHistory()
    for h in histories:
        for rec in h.records:
            merged.append(rec)
    save_checkpoint(out_dir, model, merged, seed=cfg.seed,
                    extra={"tasks": len(tasks)})
    write_prototype_images(out_dir, model, ds.norm)
    return 0


def cmd_eval(cfg: ExperimentConfig, out_dir: str) -> int:
    if not cfg.checkpoint:
        raise ConfigError("eval requires the 'checkpoint' config key")
    model, manifest = load_checkpoint(cfg.checkpoint)
    ds = build_dataset(cfg)
    if ds.dim != model.input_dim:
        raise ConfigError(
            f"dataset width {ds.dim} does not match model input {model.input_dim}")
    clusters = model.assign(ds.X)
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "assignments.csv"), "w") as f:
        cols = "index,cluster,label" if ds.labels is not None else "index,cluster"
        f.write(cols + "\n")
        for i, c in enumerate(clusters):
            row = f"{i},{c}"
            if ds.labels is not None:
                row += f",{ds.labels[i]}"
            f.write(row + "\n")
    if ds.labels is not None:
        score = nmi(ds.labels, clusters)
        acc = mapped_accuracy(ds.labels, clusters)
        print(f"nmi={_fmt(float(score))} acc={_fmt(float(acc))} M={model.protos.count}")
    else:
        print(f"M={model.protos.count}")
    return 0


def cmd_gen_data(cfg: ExperimentConfig, out_dir: str) -> int:
    ds = build_dataset(cfg)
    os.makedirs(out_dir, exist_ok=True)
    dt.save_csv(ds, os.path.join(out_dir, "data.csv"))
    return 0


COMMANDS = {
    "grow": cmd_grow,
    "continual": cmd_continual,
    "eval": cmd_eval,
    "gen-data": cmd_gen_data,
}


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gmat",
        description="Prototype mixture learning with morphism-based splitting")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="flat TOML config file")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="root seed override")
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        worker_cap()
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        cfg = load_config(args.config, overrides)
        out_dir = args.out if args.out is not None else cfg.out_dir
        return COMMANDS[args.command](cfg, out_dir)
    except (ConfigError, ContractError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 3
    except (FormatError, OSError) as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 4


def console_main() -> None:  # pragma: no cover
    sys.exit(main())


if __name__ == "__main__":  # pragma: no cover
    console_main()
