"""Clustering evaluation: normalized mutual information and optimal-assignment
accuracy, both computed from the label/cluster contingency table."""

from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ContractError


def contingency_table(y, c) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Counts[i, j] = |{samples with true label y_i and cluster c_j}|."""
    y = np.asarray(y).ravel()
    c = np.asarray(c).ravel()
    if len(y) != len(c):
        raise ContractError(f"length mismatch: {len(y)} vs {len(c)}")
    if len(y) == 0:
        raise ContractError("labelings must be nonempty")
    y_classes, yi = np.unique(y, return_inverse=True)
    c_classes, ci = np.unique(c, return_inverse=True)
    counts = np.zeros((len(y_classes), len(c_classes)), dtype=np.int64)
    np.add.at(counts, (yi, ci), 1)
    return counts, y_classes, c_classes


def _entropy(p: np.ndarray) -> float:
    p = p[p > 0]
    # Sorted summation, bit-matching the mutual-information diagonal terms.
    return float(np.sort(p * -np.log(p)).sum())


def nmi(y, c) -> float:
    """Normalized mutual information 2*I(Y,C) / (H(Y) + H(C)), natural log.

    0*log(0) counts as 0; if both labelings are constant (zero entropy) they
    agree trivially and the score is 1.
    """
    counts, _, _ = contingency_table(y, c)
    n = counts.sum()
    pyx = counts / n
    # Marginals from integer counts: exact where float row/column sums drift.
    py = counts.sum(axis=1) / n
    pc = counts.sum(axis=0) / n
    hy, hc = _entropy(py), _entropy(pc)
    if hy + hc == 0.0:
        return 1.0
    mask = pyx > 0
    with np.errstate(divide="ignore"):
        log_py = np.log(py)[:, None]
        log_pc = np.log(pc)[None, :]
        inner = np.log(pyx, where=mask, out=np.zeros_like(pyx)) - (log_py + log_pc)
    # Sorted summation of symmetric terms: the score is bitwise invariant
    # under argument swap and relabeling, and exactly 1 when C equals Y.
    terms = np.sort((pyx * inner)[mask])
    mi = float(terms.sum())
    return 2.0 * mi / (hy + hc)


def mapped_accuracy(y, c) -> float:
    """Best accuracy over injective maps from clusters to true labels.

    Solved as an optimal assignment on the contingency table; when clusters
    outnumber labels the unmapped clusters count as errors.
    """
    counts, _, _ = contingency_table(y, c)
    rows, cols = linear_sum_assignment(counts.T, maximize=True)
    matched = counts.T[rows, cols].sum()
    return float(matched) / float(counts.sum())


def assign_clusters(model, x: np.ndarray) -> np.ndarray:
    """Hard cluster ids under a trained model (argmax responsibility,
    ties to the lowest prototype index)."""
    return model.assign(np.asarray(x, dtype=np.float64))
