"""Checkpoints: a human-readable JSON manifest plus a raw float64 blob.

``checkpoint.json`` records the format version, model structure, parameter
block layout, centroids metadata, growth history, and the RNG root; the
parameter values themselves live in ``params.bin`` as little-endian float64,
row-major, concatenated in manifest order.  Save -> load -> save is
byte-identical.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .codec import ClassCentroids, Codec
from .errors import FormatError
from .growth import GrowthHistory, IterationRecord
from .mixture import LossWeights, PrototypeSet
from .autodiff import Tensor
from .model import GmatModel

FORMAT_VERSION = 1
RNG_SCHEME = "named-substreams-v1"  # streams derive statelessly from the seed

MANIFEST = "checkpoint.json"
PARAMS = "params.bin"


def _param_blocks(model: GmatModel) -> list[tuple[str, np.ndarray]]:
    blocks = []
    if model.codec is not None:
        for i, t in enumerate(model.codec.enc_w):
            blocks.append((f"enc_w{i}", t.data))
        for i, t in enumerate(model.codec.enc_b):
            blocks.append((f"enc_b{i}", t.data))
        for i, t in enumerate(model.codec.dec_w):
            blocks.append((f"dec_w{i}", t.data))
        for i, t in enumerate(model.codec.dec_b):
            blocks.append((f"dec_b{i}", t.data))
    blocks.append(("proto_means", model.protos.means.data))
    blocks.append(("proto_log_scales", model.protos.log_scales.data))
    if model.centroids is not None:
        for c in model.centroids.classes():
            blocks.append((f"centroid_{c}", model.centroids.centroids[c]))
    return blocks


def _history_dicts(history: GrowthHistory | None) -> list[dict]:
    if history is None:
        return []
    return [vars(rec).copy() for rec in history.records]


def save_checkpoint(out_dir: str, model: GmatModel,
                    history: GrowthHistory | None = None,
                    seed: int = 0, extra: dict | None = None) -> None:
    os.makedirs(out_dir, exist_ok=True)
    blocks = _param_blocks(model)
    layout, offset = [], 0
    payload = bytearray()
    for name, arr in blocks:
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        layout.append({"name": name, "shape": list(arr.shape), "offset": offset})
        payload.extend(raw)
        offset += len(raw)
    manifest = {
        "format_version": FORMAT_VERSION,
        "rng": {"scheme": RNG_SCHEME, "seed": int(seed)},
        "model": {
            "use_codec": model.codec is not None,
            "hidden": model.codec.hidden if model.codec is not None else [],
            "input_dim": int(model.input_dim),
            "latent_dim": int(model.protos.dim),
            "prototypes": int(model.protos.count),
        },
        "loss_weights": vars(model.weights).copy(),
        "centroids": None if model.centroids is None else {
            "decay": model.centroids.decay,
            "classes": model.centroids.classes(),
            "counts": [model.centroids.counts[c] for c in model.centroids.classes()],
        },
        "params": layout,
        "history": _history_dicts(history),
        "extra": extra or {},
    }
    with open(os.path.join(out_dir, MANIFEST), "w") as f:
        json.dump(manifest, f, sort_keys=True, separators=(",", ":"))
        f.write("\n")
    with open(os.path.join(out_dir, PARAMS), "wb") as f:
        f.write(bytes(payload))


def load_checkpoint(out_dir: str) -> tuple[GmatModel, dict]:
    """Rebuild the model bit-exactly from a checkpoint directory."""
    manifest_path = os.path.join(out_dir, MANIFEST)
    params_path = os.path.join(out_dir, PARAMS)
    with open(manifest_path) as f:
        try:
            manifest = json.load(f)
        except json.JSONDecodeError as e:
            raise FormatError(f"{manifest_path}: invalid JSON: {e}") from e
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise FormatError(
            f"checkpoint format version {version!r} unsupported "
            f"(expected {FORMAT_VERSION})")
    with open(params_path, "rb") as f:
        raw = f.read()
    arrays: dict[str, np.ndarray] = {}
    for block in manifest["params"]:
        shape = tuple(block["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = block["offset"]
        end = start + count * 8
        if end > len(raw):
            raise FormatError(
                f"{params_path}: truncated block {block['name']!r} at offset {start}")
        arrays[block["name"]] = np.frombuffer(
            raw, dtype="<f8", count=count, offset=start).reshape(shape).copy()

    spec = manifest["model"]
    codec = None
    if spec["use_codec"]:
        n_enc = len(spec["hidden"]) + 1
        codec = Codec(
            enc_w=[Tensor(arrays[f"enc_w{i}"]) for i in range(n_enc)],
            enc_b=[Tensor(arrays[f"enc_b{i}"]) for i in range(n_enc)],
            dec_w=[Tensor(arrays[f"dec_w{i}"]) for i in range(n_enc)],
            dec_b=[Tensor(arrays[f"dec_b{i}"]) for i in range(n_enc)],
        )
    protos = PrototypeSet(Tensor(arrays["proto_means"]),
                          Tensor(arrays["proto_log_scales"]))
    centroids = None
    if manifest["centroids"] is not None:
        cm = manifest["centroids"]
        centroids = ClassCentroids(decay=cm["decay"])
        for c, cnt in zip(cm["classes"], cm["counts"]):
            centroids.centroids[int(c)] = arrays[f"centroid_{c}"]
            centroids.counts[int(c)] = int(cnt)
            centroids.stale[int(c)] = False
    weights = LossWeights(**manifest["loss_weights"])
    model = GmatModel(protos, codec, centroids, weights)
    return model, manifest


def history_from_manifest(manifest: dict) -> GrowthHistory:
    hist = GrowthHistory()
    for rec in manifest.get("history", []):
        hist.append(IterationRecord(**rec))
    return hist
