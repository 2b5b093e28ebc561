"""Alignment graphs, block weight matrices and their normalized Hermitian form."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from . import __version__
from .errors import GraphFormatError, IsolatedNode
from .groups import GroupId, canonical_params, irrep_dim, irrep_params

FORMAT_VERSION = 1


@dataclass(frozen=True)
class AlignmentGraph:
    """Undirected weighted graph with a group alignment on every edge.

    Each undirected edge is stored once with ``i < j``; ``align[e]`` is
    ``g_ij``, the element applied to node j to match node i.  The reverse
    edge carries the same weight and the inverse alignment.

    Attributes
    ----------
    n : int
        Number of nodes.
    group : GroupId
    i, j : (E,) int arrays
    w : (E,) float array of positive weights
    align : (E,) angles for SO(2) or (E, 4) unit quaternions for SO(3)
    """

    n: int
    group: GroupId
    i: np.ndarray
    j: np.ndarray
    w: np.ndarray
    align: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        group = GroupId.parse(self.group)
        object.__setattr__(self, "group", group)
        i = np.ascontiguousarray(self.i, dtype=np.int64).reshape(-1)
        j = np.ascontiguousarray(self.j, dtype=np.int64).reshape(-1)
        w = np.ascontiguousarray(self.w, dtype=np.float64).reshape(-1)
        align = np.ascontiguousarray(self.align, dtype=np.float64)
        if group is GroupId.SO2:
            align = align.reshape(-1)
            outside = (align < 0) | (align >= 2 * np.pi)
            if np.any(outside):
                align = np.where(outside, canonical_params(group, align), align)
        else:
            align = align.reshape(-1, 4)
        for name, arr in (("i", i), ("j", j), ("w", w), ("align", align)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        self._validate()

    def _validate(self):
        n, E = int(self.n), len(self.i)
        if n < 1:
            raise GraphFormatError("graph needs at least one node")
        if not (len(self.j) == len(self.w) == len(self.align) == E):
            raise GraphFormatError("edge arrays have inconsistent lengths")
        if E == 0:
            return
        bad = np.flatnonzero((self.i < 0) | (self.j >= n) | (self.i >= self.j))
        if bad.size:
            e = int(bad[0])
            if self.i[e] == self.j[e]:
                raise GraphFormatError(f"edge {e}: self-loop at node {self.i[e]}")
            raise GraphFormatError(f"edge {e}: endpoints ({self.i[e]}, {self.j[e]}) must satisfy 0 <= i < j < n={n}")
        bad = np.flatnonzero(~(self.w > 0) | ~np.isfinite(self.w))
        if bad.size:
            e = int(bad[0])
            raise GraphFormatError(f"edge {e}: weight {self.w[e]!r} must be positive and finite")
        if not np.all(np.isfinite(self.align)):
            e = int(np.flatnonzero(~np.all(np.isfinite(self.align.reshape(E, -1)), axis=1))[0])
            raise GraphFormatError(f"edge {e}: non-finite alignment")
        if self.group is GroupId.SO3:
            err = np.abs(np.linalg.norm(self.align, axis=1) - 1.0)
            bad = np.flatnonzero(err > 1e-6)
            if bad.size:
                e = int(bad[0])
                raise GraphFormatError(f"edge {e}: quaternion norm deviates from 1 by {err[e]:.3e}")
        key = self.i * n + self.j
        order = np.argsort(key, kind="stable")
        dup = np.flatnonzero(np.diff(key[order]) == 0)
        if dup.size:
            e = int(order[dup[0] + 1])
            raise GraphFormatError(f"edge {e}: duplicate pair ({self.i[e]}, {self.j[e]})")

    @property
    def num_edges(self):
        return len(self.i)

    def adjacency_lists(self):
        nbrs = [set() for _ in range(self.n)]
        for a, b in zip(self.i.tolist(), self.j.tolist()):
            nbrs[a].add(b)
            nbrs[b].add(a)
        return nbrs

    def with_meta(self, **meta):
        merged = dict(self.meta)
        merged.update(meta)
        return AlignmentGraph(self.n, self.group, self.i, self.j, self.w, self.align, merged)


def degrees(graph):
    """``deg(i) = sum_j w_ij``; the same for every frequency."""
    deg = np.zeros(graph.n)
    np.add.at(deg, graph.i, graph.w)
    np.add.at(deg, graph.j, graph.w)
    return deg


def _check_isolated(deg):
    iso = np.flatnonzero(deg <= 0)
    if iso.size:
        raise IsolatedNode(iso[0])


@dataclass(frozen=True)
class BlockWeightMatrix:
    """``W_k`` as a sparse ``(n d_k, n d_k)`` Hermitian matrix.

    Stored block-row compressed (BSR) with ``d_k x d_k`` blocks; CSR when
    ``d_k = 1``.
    """

    k: int
    d: int
    n: int
    matrix: sparse.spmatrix

    def toarray(self):
        return self.matrix.toarray()


def _block_sparse(n, d, rows, cols, blocks):
    order = np.lexsort((cols, rows))
    rows, cols, blocks = rows[order], cols[order], blocks[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, rows + 1, 1)
    indptr = np.cumsum(indptr)
    if d == 1:
        return sparse.csr_matrix((blocks.reshape(-1), cols, indptr), shape=(n, n))
    return sparse.bsr_matrix((blocks, cols, indptr), shape=(n * d, n * d))


def build_weight_matrix(graph, k):
    """Block weight matrix with blocks ``w_ij rho_k(g_ij)`` and their adjoints."""
    if k < 0:
        raise ValueError(f"frequency must be non-negative, got {k}")
    _check_isolated(degrees(graph))
    d = irrep_dim(graph.group, k)
    upper = graph.w[:, None, None] * irrep_params(graph.group, k, graph.align)
    lower = np.conj(np.swapaxes(upper, -1, -2))
    rows = np.concatenate([graph.i, graph.j])
    cols = np.concatenate([graph.j, graph.i])
    blocks = np.concatenate([upper, lower]).astype(np.complex128)
    return BlockWeightMatrix(k=k, d=d, n=graph.n, matrix=_block_sparse(graph.n, d, rows, cols, blocks))


def normalized_hermitian(W, deg):
    """``D^{-1/2} W D^{-1/2}``, exactly Hermitian.

    Each block is scaled by the product ``deg(i)^{-1/2} deg(j)^{-1/2}``,
    which is bitwise symmetric in ``(i, j)``, so conjugate blocks stay exact
    conjugates.
    """
    deg = np.asarray(deg, dtype=float)
    _check_isolated(deg)
    scale = 1.0 / np.sqrt(deg)
    M = W.matrix.copy()
    if W.d == 1:
        M = M.tocsr()
        brow = np.repeat(np.arange(W.n), np.diff(M.indptr))
        M.data = M.data * (scale[brow] * scale[M.indices])
    else:
        brow = np.repeat(np.arange(W.n), np.diff(M.indptr))
        M.data = M.data * (scale[brow] * scale[M.indices])[:, None, None]
    return M


def normalized_operator(graph, k):
    """Convenience: ``A~_k`` for a graph."""
    return normalized_hermitian(build_weight_matrix(graph, k), degrees(graph))


# ---------------------------------------------------------------------------
# JSON graph files


def save_graph(graph, path, meta=None):
    header = {"version": FORMAT_VERSION, "group": graph.group.value, "n": int(graph.n)}
    info = {"tool": f"gmanifold {__version__}"}
    info.update(graph.meta)
    if meta:
        info.update(meta)
    header["meta"] = info
    align = graph.align.reshape(graph.num_edges, -1)
    lines = []
    for e in range(graph.num_edges):
        rec = [int(graph.i[e]), int(graph.j[e]), float(graph.w[e]), [float(a) for a in align[e]]]
        lines.append(json.dumps(rec))
    head = json.dumps(header, sort_keys=True)[:-1]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(head)
        fh.write(', "edges": [\n')
        fh.write(",\n".join(lines))
        fh.write("\n]}\n")


def load_graph(path):
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise GraphFormatError(f"{path}: malformed JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise GraphFormatError(f"{path}: top level must be an object")
    for key in ("version", "group", "n", "edges"):
        if key not in doc:
            raise GraphFormatError(f"{path}: missing field {key!r}")
    if doc["version"] != FORMAT_VERSION:
        raise GraphFormatError(f"{path}: unsupported version {doc['version']!r}")
    try:
        group = GroupId.parse(doc["group"])
    except ValueError as exc:
        raise GraphFormatError(f"{path}: {exc}") from None
    width = group.param_size
    edges = doc["edges"]
    E = len(edges)
    i = np.empty(E, dtype=np.int64)
    j = np.empty(E, dtype=np.int64)
    w = np.empty(E)
    align = np.empty((E, width))
    for e, rec in enumerate(edges):
        if not (isinstance(rec, list) and len(rec) == 4 and isinstance(rec[3], list) and len(rec[3]) == width):
            raise GraphFormatError(f"edge {e}: expected [i, j, w, [{width} alignment values]]")
        if not (isinstance(rec[0], int) and isinstance(rec[1], int)):
            raise GraphFormatError(f"edge {e}: node indices must be integers")
        i[e], j[e], w[e] = rec[0], rec[1], rec[2]
        align[e] = rec[3]
    meta = doc.get("meta") or {}
    return AlignmentGraph(int(doc["n"]), group, i, j, w, align if width > 1 else align[:, 0], meta)
