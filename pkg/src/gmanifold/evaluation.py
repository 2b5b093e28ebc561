"""Neighbor extraction, NN accuracy, angle histograms, spectral clustering
and the Rand index."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from sklearn.cluster import KMeans

from . import __version__
from .affinity import AffinityMatrix, topk_rows
from .errors import ZeroRowSum
from .rng import stream


def _values(S):
    return S.values if isinstance(S, AffinityMatrix) else np.asarray(S, dtype=float)


def knn_from_affinity(S, kappa):
    """``(n, kappa)`` neighbor lists: the ``kappa`` largest ``S(i, j)``,
    ``j != i``, ties broken by ascending ``j``."""
    return topk_rows(_values(S), kappa)


def _pair_cosines(lists, directions):
    v = np.asarray(directions, dtype=float)
    lists = np.asarray(lists)
    return np.einsum("ikd,id->ik", v[lists], v)


def nn_accuracy(lists, directions, cos_threshold=0.95):
    """Percentage of listed pairs with ``<v_i, v_j> > cos_threshold``."""
    cos = _pair_cosines(lists, directions)
    return 100.0 * float(np.count_nonzero(cos > cos_threshold)) / cos.size


def angle_histogram(lists, directions, bins=180):
    """Counts of ``arccos <v_i, v_j>`` over ``bins`` uniform bins on ``[0, pi]``.

    Returns ``(counts, edges)``.
    """
    theta = np.arccos(np.clip(_pair_cosines(lists, directions), -1.0, 1.0))
    return np.histogram(theta.reshape(-1), bins=bins, range=(0.0, np.pi))


@dataclass(frozen=True)
class NNReport:
    kappa: int
    accuracy: float
    counts: np.ndarray
    edges: np.ndarray


def nn_report(lists, directions, cos_threshold=0.95, bins=180):
    counts, edges = angle_histogram(lists, directions, bins)
    return NNReport(lists.shape[1], nn_accuracy(lists, directions, cos_threshold), counts, edges)


@dataclass(frozen=True)
class ClusterResult:
    labels: np.ndarray
    rand_index: float | None = None


def spectral_clustering(S, K, seed=0, trial=0):
    """Normalized spectral clustering.

    ``D^{-1/2} S D^{-1/2}`` with row sums ``D``, its top ``K`` eigenvectors
    with rows scaled to unit length, then k-means (k-means++ seeding, 10
    restarts, at most 100 iterations, best inertia).
    """
    S = _values(S)
    deg = S.sum(axis=1)
    zero = np.flatnonzero(deg <= 0)
    if zero.size:
        raise ZeroRowSum(zero[0])
    scale = 1.0 / np.sqrt(deg)
    M = S * scale[:, None] * scale[None, :]
    M = 0.5 * (M + M.T)
    n = M.shape[0]
    _, U = sla.eigh(M, subset_by_index=(n - K, n - 1))
    norms = np.linalg.norm(U, axis=1, keepdims=True)
    U = U / np.where(norms > 0, norms, 1.0)
    rs = int(stream(seed, "kmeans", trial).integers(0, 2**31 - 1))
    km = KMeans(n_clusters=K, init="k-means++", n_init=10, max_iter=100, random_state=rs)
    return ClusterResult(km.fit_predict(U).astype(np.int64))


def rand_index(a, b):
    """Fraction of node pairs on which two partitions agree."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"label vectors differ in length: {a.shape} vs {b.shape}")
    n = a.size
    if n < 2:
        return 1.0
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)

    def pairs(x):
        return (x * (x - 1) // 2).sum()

    total = n * (n - 1) // 2
    both = pairs(table)
    same_a = pairs(table.sum(axis=1))
    same_b = pairs(table.sum(axis=0))
    agree = total + 2 * both - same_a - same_b
    return agree / total


# ---------------------------------------------------------------------------
# reports


def write_histogram_csv(path, report, header):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_lo", "bin_hi", "count", "accuracy"])
        for lo, hi, c in zip(report.edges[:-1], report.edges[1:], report.counts):
            w.writerow([repr(float(lo)), repr(float(hi)), int(c), repr(report.accuracy)])


def write_trials_csv(path, rand_values, header):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trial", "rand_index"])
        for t, r in enumerate(rand_values):
            w.writerow([t, repr(float(r))])


def write_summary(path, method, params, seed, metric):
    doc = {"tool": f"gmanifold {__version__}", "method": method, "params": params, "seed": seed, "metric": metric}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")
