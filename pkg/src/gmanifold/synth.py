"""Synthetic ground truth: Haar rotation clouds, S^2 neighbor graphs, the
random rewiring noise model and rotation-labelled cluster graphs."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import __version__
from .graph import AlignmentGraph
from .groups import GroupId, compose_params, haar_params, inverse_params, quat_to_matrix
from .rng import stream

TWO_PI = 2.0 * np.pi
REWIRE_RETRIES = 100


@dataclass(frozen=True)
class So3Cloud:
    """``n`` Haar rotations ``R_i`` with viewing directions ``v_i = R_i[:, 2]``."""

    quats: np.ndarray

    @property
    def n(self):
        return len(self.quats)

    @property
    def rotations(self):
        return quat_to_matrix(self.quats)

    @property
    def directions(self):
        return self.rotations[:, :, 2]


def sample_so3_cloud(n, seed=0):
    if n < 1:
        raise ValueError(f"cloud needs at least one point, got n={n}")
    return So3Cloud(haar_params(GroupId.SO3, stream(seed, "cloud"), size=n))


def procrustes_angle(Ri, Rj):
    """Angle aligning the tangent frame of ``Rj`` to that of ``Ri``.

    Minimizes ``||X_i - X_j Rot(alpha)||_F`` with ``X = R[:, :2]``, in closed
    form from ``H = X_j^T X_i``.
    """
    Xi, Xj = Ri[..., :, :2], Rj[..., :, :2]
    H = np.swapaxes(Xj, -1, -2) @ Xi
    alpha = np.arctan2(H[..., 1, 0] - H[..., 0, 1], H[..., 0, 0] + H[..., 1, 1])
    return np.mod(alpha, TWO_PI)


def _s2_graph(cloud, i, j, meta):
    R = cloud.rotations
    align = procrustes_angle(R[i], R[j])
    return AlignmentGraph(cloud.n, GroupId.SO2, i, j, np.ones(len(i)), align, meta)


def clean_s2_graph(cloud, cos_threshold=0.97):
    """Connect ``i < j`` iff ``<v_i, v_j> >= cos_threshold``; unit weights."""
    if not -1.0 < cos_threshold < 1.0:
        raise ValueError(f"cos threshold must lie in (-1, 1), got {cos_threshold}")
    v = cloud.directions
    radius = np.sqrt(2.0 - 2.0 * cos_threshold) * (1.0 + 1e-9)
    pairs = cKDTree(v).query_pairs(radius, output_type="ndarray")
    if len(pairs):
        pairs = np.sort(pairs, axis=1)
        pairs = pairs[np.einsum("ij,ij->i", v[pairs[:, 0]], v[pairs[:, 1]]) >= cos_threshold]
        pairs = pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]
    else:
        pairs = np.zeros((0, 2), dtype=np.int64)
    return _s2_graph(cloud, pairs[:, 0], pairs[:, 1], {"construction": "threshold", "cos_threshold": cos_threshold})


def knn_s2_graph(cloud, kappa=50):
    """kappa-nearest-neighbor graph on the directions, symmetrized by union
    (an edge is kept if either endpoint lists the other)."""
    v = cloud.directions
    _, nbr = cKDTree(v).query(v, k=kappa + 1)
    rows = np.repeat(np.arange(cloud.n), kappa)
    cols = nbr[:, 1:].reshape(-1)
    lo, hi = np.minimum(rows, cols), np.maximum(rows, cols)
    keep = lo != hi
    key = np.unique(lo[keep] * cloud.n + hi[keep])
    return _s2_graph(cloud, key // cloud.n, key % cloud.n, {"construction": "knn", "kappa": kappa})


@dataclass(frozen=True)
class RewireStats:
    edges: int
    kept: int
    rewired: int
    forced_keeps: int

    @property
    def kept_fraction(self):
        return (self.kept + self.forced_keeps) / self.edges if self.edges else 1.0

    def as_dict(self):
        return {"edges": self.edges, "kept": self.kept, "rewired": self.rewired, "forced_keeps": self.forced_keeps}


def rewire(graph, p, seed=0):
    """Random rewiring model.

    Edges are visited in canonical ``(i, j)`` order.  Each is kept with
    probability ``p``; otherwise it is removed and ``i`` is linked to a vertex
    drawn uniformly among those that are neither ``i`` nor currently adjacent
    to ``i``, with unit weight and a Haar-random alignment.  After
    ``REWIRE_RETRIES`` rejected draws the original edge is kept and counted as
    a forced keep.

    Returns the new graph and a :class:`RewireStats`.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"retention probability must lie in [0, 1], got {p}")
    n, E = graph.n, graph.num_edges
    order = np.lexsort((graph.j, graph.i))
    keep_u = stream(seed, "rewire").random(E)
    cand_rng = stream(seed, "rewire", 1)
    buf, pos = cand_rng.integers(0, max(n - 1, 1), size=4096), 0
    nbrs = graph.adjacency_lists()
    kept = forced = 0
    out_i, out_j, out_w, out_a = [], [], [], []
    new_edges = []
    for e in order.tolist():
        a, b = int(graph.i[e]), int(graph.j[e])
        if keep_u[e] < p:
            kept += 1
            out_i.append(a), out_j.append(b), out_w.append(graph.w[e]), out_a.append(graph.align[e])
            continue
        nbrs[a].discard(b)
        nbrs[b].discard(a)
        target = -1
        for _ in range(REWIRE_RETRIES):
            if pos == len(buf):
                buf, pos = cand_rng.integers(0, max(n - 1, 1), size=4096), 0
            c = int(buf[pos])
            pos += 1
            c = c + 1 if c >= a else c
            if c not in nbrs[a]:
                target = c
                break
        if target < 0:
            forced += 1
            nbrs[a].add(b)
            nbrs[b].add(a)
            out_i.append(a), out_j.append(b), out_w.append(graph.w[e]), out_a.append(graph.align[e])
            continue
        nbrs[a].add(target)
        nbrs[target].add(a)
        new_edges.append((a, target))
    # new alignments drawn in rewiring order; stored canonically (i < j)
    new_align = haar_params(graph.group, stream(seed, "alignments"), size=len(new_edges))
    for (a, c), g in zip(new_edges, new_align):
        if c < a:
            a, c, g = c, a, inverse_params(graph.group, g)
        out_i.append(a), out_j.append(c), out_w.append(1.0), out_a.append(g)
    i = np.array(out_i, dtype=np.int64)
    j = np.array(out_j, dtype=np.int64)
    w = np.array(out_w, dtype=float)
    shape = (len(i),) if graph.group is GroupId.SO2 else (len(i), 4)
    align = np.array(out_a, dtype=float).reshape(shape)
    srt = np.lexsort((j, i))
    stats = RewireStats(E, kept, len(new_edges), forced)
    meta = dict(graph.meta)
    meta["rewire"] = {"p": p, "seed": seed, **stats.as_dict()}
    return AlignmentGraph(n, graph.group, i[srt], j[srt], w[srt], align[srt], meta), stats


def cluster_graph(K, size, group, seed=0):
    """``K`` complete clusters of ``size`` nodes with ``g_ij = g_i g_j^{-1}``.

    Nodes are numbered cluster by cluster; returns ``(graph, labels)``.
    """
    if K < 2 or size < 2:
        raise ValueError(f"need K >= 2 clusters of size >= 2, got K={K}, size={size}")
    group = GroupId.parse(group)
    n = K * size
    g = haar_params(group, stream(seed, "cluster"), size=n)
    labels = np.repeat(np.arange(K), size)
    li, lj = np.triu_indices(size, 1)
    i = (np.arange(K)[:, None] * size + li).reshape(-1)
    j = (np.arange(K)[:, None] * size + lj).reshape(-1)
    align = compose_params(group, g[i], inverse_params(group, g[j]))
    meta = {"construction": "clusters", "K": K, "size": size, "seed": seed}
    return AlignmentGraph(n, group, i, j, np.ones(len(i)), align, meta), labels


# ---------------------------------------------------------------------------
# truth sidecars


def save_truth(path, directions=None, labels=None, meta=None):
    doc = {"tool": f"gmanifold {__version__}"}
    if meta:
        doc["meta"] = meta
    if directions is not None:
        doc["v"] = [[float(x) for x in row] for row in np.asarray(directions)]
    if labels is not None:
        doc["labels"] = [int(x) for x in labels]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_truth(path):
    """Returns ``(directions or None, labels or None, meta)``."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    v = np.array(doc["v"], dtype=float) if "v" in doc else None
    labels = np.array(doc["labels"], dtype=np.int64) if "labels" in doc else None
    if v is None and labels is None:
        raise ValueError(f"{path}: truth file holds neither 'v' nor 'labels'")
    return v, labels, doc.get("meta", {})
