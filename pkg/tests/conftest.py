"""Shared fixtures: the 4-blob growth run and a desk-scale handwritten-digit
IDX fixture (built from scikit-learn's bundled digits, upscaled to 28x28),
with an env-var escape hatch for real IDX files."""

import os
import struct
import time

import numpy as np
import pytest

import gmat
from gmat import streams

BLOB_SEED = 7


@pytest.fixture(scope="session")
def blob_fixture():
    return gmat.gen_blobs(4, 2000, 0.5, (-5.0, 5.0), seed=BLOB_SEED)


@pytest.fixture(scope="session")
def blob_growth(blob_fixture):
    """Growth run from M=1 with library defaults; shared by several criteria."""
    ds = blob_fixture
    model = gmat.build_model(input_dim=2, latent_dim=2, hidden=[],
                             use_codec=False, init_m=1,
                             init_strategy="data-mean",
                             rng=streams.substream(0, "init"), data=ds.X)
    train_cfg = gmat.TrainConfig()
    grow_cfg = gmat.GrowthConfig()
    start = time.monotonic()
    model, history = gmat.grow_until_converged(
        model, ds, grow_cfg.epsilon, train_cfg, grow_cfg,
        streams.substream(0, "grow"))
    elapsed = time.monotonic() - start
    return model, history, elapsed


def write_idx_files(dirname, images, labels):
    """Emit images/labels as real big-endian IDX files."""
    os.makedirs(dirname, exist_ok=True)
    images = np.asarray(images)
    n, rows, cols = images.shape
    img_path = os.path.join(dirname, "images-idx3-ubyte")
    lab_path = os.path.join(dirname, "labels-idx1-ubyte")
    with open(img_path, "wb") as f:
        f.write(struct.pack(">IIII", 0x803, n, rows, cols))
        f.write(np.round(np.clip(images, 0, 1) * 255).astype(np.uint8).tobytes())
    with open(lab_path, "wb") as f:
        f.write(struct.pack(">II", 0x801, n))
        f.write(np.asarray(labels, dtype=np.uint8).tobytes())
    return img_path, lab_path


@pytest.fixture(scope="session")
def digits_idx(tmp_path_factory):
    """Desk-scale 28x28 handwritten-digit IDX pair.

    Uses real IDX files from $GMAT_MNIST_DIR when present; otherwise builds a
    pool from scikit-learn's digits (8x8 scans upscaled to 28x28, plus one
    subpixel-shifted copy each) so the full pipeline runs offline.
    """
    env = os.environ.get("GMAT_MNIST_DIR")
    if env:
        img = os.path.join(env, "train-images-idx3-ubyte")
        lab = os.path.join(env, "train-labels-idx1-ubyte")
        if os.path.exists(img) and os.path.exists(lab):
            return img, lab
    from scipy.ndimage import shift as nd_shift
    from scipy.ndimage import zoom
    from sklearn.datasets import load_digits

    raw = load_digits()
    base = np.stack([np.clip(zoom(im / 16.0, 3.5, order=1), 0, 1)
                     for im in raw.images])
    shifted = np.stack([nd_shift(im, (1.5, -1.5), order=1, cval=0.0)
                        for im in base])
    images = np.concatenate([base, shifted])
    labels = np.concatenate([raw.target, raw.target])
    out = tmp_path_factory.mktemp("digits")
    return write_idx_files(str(out), images, labels)
