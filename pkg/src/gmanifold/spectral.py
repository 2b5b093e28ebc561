"""Spectral filtering of the normalized connection matrices.

For every frequency k the top ``m_k d_k`` eigenpairs of ``A~_k`` are turned
into a per-node ``d_k x m_k d_k`` block

    psi(i) = [eta(l_1)^{1/2} u_1(i), ..., eta(l_m)^{1/2} u_m(i)],

so that the filtered matrix ``W~_{k,t} = Psi Psi^*`` never has to be formed;
only the blocks ``psi(i) psi(j)^*`` that are actually needed.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy import sparse

from .errors import ConvergenceError, RankDeficientBlock
from .graph import build_weight_matrix, degrees, normalized_hermitian
from .groups import GroupId, irrep_dim
from .rng import stream

DENSE_THRESHOLD = 2048
NORMALIZE_MODES = ("weighted", "raw", "off")


@dataclass(frozen=True)
class SpectralFilter:
    """The power filter ``eta_t(lambda) = lambda^(2t)``."""

    t: int = 1

    def __post_init__(self):
        if int(self.t) != self.t or self.t < 0:
            raise ValueError(f"diffusion time must be a non-negative integer, got {self.t}")

    def __call__(self, lam):
        return np.asarray(lam, dtype=float) ** (2 * self.t)

    def sqrt(self, lam):
        return np.abs(np.asarray(lam, dtype=float)) ** self.t


@dataclass(frozen=True)
class EigenPairs:
    k: int
    d: int
    lambdas: np.ndarray
    vectors: np.ndarray

    @property
    def count(self):
        return len(self.lambdas)

    @property
    def n(self):
        return self.vectors.shape[0] // self.d


# ---------------------------------------------------------------------------
# eigensolvers


def _sorted_top(theta, Y, m):
    order = np.argsort(-theta, kind="stable")[:m]
    return theta[order], Y[:, order]


def _orthonormalize(Wb, Qall, rng):
    """Orthonormalize ``Wb`` against ``Qall`` and itself; rank-deficient
    directions are refilled with random vectors."""
    for _ in range(2):
        if Qall is not None:
            Wb = Wb - Qall @ (Qall.conj().T @ Wb)
    Qn, R = np.linalg.qr(Wb)
    weak = np.abs(np.diag(R)) < 1e-10
    tries = 0
    while np.any(weak):
        tries += 1
        if tries > 5:
            raise ConvergenceError("could not extend Krylov basis", np.nan)
        fresh = rng.standard_normal(Wb.shape) + 1j * rng.standard_normal(Wb.shape)
        Wb = np.where(weak[None, :], fresh, Qn)
        for _ in range(2):
            if Qall is not None:
                Wb = Wb - Qall @ (Qall.conj().T @ Wb)
        Qn, R = np.linalg.qr(Wb)
        weak = np.abs(np.diag(R)) < 1e-10
    return Qn


def _block_lanczos(A, m, tol, rng, max_iter):
    """Thick-restarted block Lanczos with full reorthogonalization.

    Each cycle extends the basis block by block, performs Rayleigh-Ritz on
    the explicitly projected matrix and checks residuals ``||A v - theta v||``.
    The leading Ritz vectors (and their images under ``A``) are kept and the
    basis is extended again from the residual block of the wanted ones.
    ``max_iter`` caps the total number of block steps.
    """
    N = A.shape[0]
    b = min(N, m + min(max(m // 2, 4), 16))
    keep = min(N, 2 * b)
    cap = min(N, keep + max(12 * b, 240))
    Q = _orthonormalize(rng.standard_normal((N, b)) + 1j * rng.standard_normal((N, b)), None, rng)
    AQ = A @ Q
    grow = AQ
    steps = 1
    while True:
        while Q.shape[1] + b <= cap and steps < max_iter:
            Qn = _orthonormalize(grow, Q, rng)
            AQn = A @ Qn
            Q, AQ = np.hstack([Q, Qn]), np.hstack([AQ, AQn])
            grow = AQn
            steps += 1
        H = Q.conj().T @ AQ
        H = 0.5 * (H + H.conj().T)
        theta, Y = np.linalg.eigh(H)
        theta, Y = _sorted_top(theta, Y, min(keep, Q.shape[1]))
        V, AV = Q @ Y, AQ @ Y
        R = AV[:, :m] - V[:, :m] * theta[:m]
        res = np.linalg.norm(R, axis=0).max()
        if res < tol:
            return theta[:m], V[:, :m]
        if steps >= max_iter or Q.shape[1] >= N:
            raise ConvergenceError(f"block Lanczos did not converge in {steps} block steps", res)
        Q, AQ = V, AV
        grow = AV[:, :b] - V[:, :b] * theta[:b]


def top_eigs(A, m, tol=1e-8, seed=0, k=0, d=1, dense_threshold=DENSE_THRESHOLD, max_iter=None):
    """The ``m`` algebraically largest eigenpairs of a Hermitian matrix.

    Dense ``eigh`` is used up to ``dense_threshold`` rows, restarted block
    Lanczos above.  The Lanczos start block is drawn from the ``lanczos``
    stream of ``seed``, so results are reproducible.

    Raises
    ------
    ConvergenceError
        If Lanczos exceeds ``max_iter`` block steps (default ``30*m``).
    """
    N = A.shape[0]
    if not 0 < m <= N:
        raise ValueError(f"requested {m} eigenpairs of a {N}x{N} matrix")
    if N <= dense_threshold:
        dense = A.toarray() if sparse.issparse(A) else np.asarray(A)
        theta, U = sla.eigh(dense.astype(np.complex128), subset_by_index=(N - m, N - 1), driver="evr")
        theta, U = _sorted_top(theta, U, m)
    else:
        rng = stream(seed, "lanczos", k)
        theta, U = _block_lanczos(A, m, tol, rng, max_iter or 30 * m)
    return EigenPairs(k=k, d=d, lambdas=np.ascontiguousarray(theta), vectors=np.ascontiguousarray(U))


# ---------------------------------------------------------------------------
# embeddings


@dataclass(frozen=True)
class EquivariantEmbedding:
    """Per-node blocks ``psi[i]`` of shape ``(d, m_k d)``.

    ``normalize`` is one of ``"off"``, ``"weighted"`` (unitary polar factor of
    each filter-weighted block) or ``"raw"`` (polar factor of the unweighted
    eigenvector block, filter weights applied afterwards).
    """

    group: GroupId
    k: int
    d: int
    m_k: int
    t: int
    normalize: str
    psi: np.ndarray

    @property
    def n(self):
        return self.psi.shape[0]

    @property
    def normalized(self):
        return self.normalize != "off"

    @property
    def matrix(self):
        """``Psi`` as an ``(n d, m_k d)`` matrix."""
        return self.psi.reshape(self.n * self.d, -1)


def _polar_rows(blocks):
    d = blocks.shape[1]
    if d == 1:
        norms = np.linalg.norm(blocks[:, 0, :], axis=1)
        bad = np.flatnonzero(norms < 1e-12)
        if bad.size:
            raise RankDeficientBlock(bad[0], norms[bad[0]])
        return blocks / norms[:, None, None]
    U, S, Vh = np.linalg.svd(blocks, full_matrices=False)
    smin = S[:, -1]
    bad = np.flatnonzero(smin < 1e-12)
    if bad.size:
        raise RankDeficientBlock(bad[0], smin[bad[0]])
    return U @ Vh


def build_embedding(eigs, filt, m_k, normalize="off", group=GroupId.SO2):
    """Filtered, truncated embedding from the leading ``m_k d_k`` eigenpairs."""
    if normalize not in NORMALIZE_MODES:
        raise ValueError(f"normalize must be one of {NORMALIZE_MODES}, got {normalize!r}")
    d = eigs.d
    count = m_k * d
    if count > eigs.count:
        raise ValueError(f"embedding needs {count} eigenpairs, only {eigs.count} available")
    U = eigs.vectors[:, :count].reshape(eigs.n, d, count)
    weights = filt.sqrt(eigs.lambdas[:count])
    if normalize == "raw":
        psi = _polar_rows(U) * weights
    else:
        psi = U * weights
    emb = EquivariantEmbedding(GroupId.parse(group), eigs.k, d, m_k, filt.t, "off", psi)
    if normalize == "weighted":
        emb = normalize_embedding(emb)
    elif normalize == "raw":
        emb = EquivariantEmbedding(emb.group, emb.k, d, m_k, filt.t, "raw", psi)
    return emb


def normalize_embedding(e):
    """Replace every block by the unitary factor ``U V^*`` of its thin SVD."""
    psi = _polar_rows(e.psi)
    return EquivariantEmbedding(e.group, e.k, e.d, e.m_k, e.t, "weighted", psi)


def filtered_block(e, i, j):
    """``W~_{k,t}(i, j) = psi(i) psi(j)^*``."""
    return e.psi[i] @ e.psi[j].conj().T


def filtered_matrix(e):
    """Dense ``Psi Psi^*``; only for small problems and tests."""
    P = e.matrix
    return P @ P.conj().T


def _per_k(value, k):
    return int(value[k]) if isinstance(value, dict) else int(value)


def graph_eigenpairs(graph, freqs, m_k, seed=0, workers=1, tol=1e-8):
    """Top ``m_k d_k`` eigenpairs of ``A~_k`` for every ``k`` in ``freqs``.

    ``m_k`` is an int (same cutoff for every k) or a mapping ``k -> m_k``.
    Frequencies are independent and run on ``workers`` threads.
    """
    deg = degrees(graph)
    freqs = sorted(set(int(k) for k in freqs))

    def one(k):
        d = irrep_dim(graph.group, k)
        A = normalized_hermitian(build_weight_matrix(graph, k), deg)
        return top_eigs(A, min(_per_k(m_k, k) * d, graph.n * d), tol=tol, seed=seed, k=k, d=d)

    if workers > 1 and len(freqs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            pairs = list(pool.map(one, freqs))
    else:
        pairs = [one(k) for k in freqs]
    return dict(zip(freqs, pairs))


def embeddings_from_eigenpairs(eigs, m_k, t=1, normalize="weighted", group=GroupId.SO2, freqs=None):
    """Embeddings built from (possibly larger) precomputed eigenpairs."""
    filt = SpectralFilter(t)
    freqs = sorted(eigs) if freqs is None else sorted(freqs)
    return {k: build_embedding(eigs[k], filt, _per_k(m_k, k), normalize=normalize, group=group) for k in freqs}


def graph_embeddings(graph, freqs, m_k, t=1, normalize="weighted", seed=0, workers=1, tol=1e-8):
    """Embeddings ``{k: EquivariantEmbedding}`` for every frequency in ``freqs``."""
    eigs = graph_eigenpairs(graph, freqs, m_k, seed=seed, workers=workers, tol=tol)
    return embeddings_from_eigenpairs(eigs, m_k, t=t, normalize=normalize, group=graph.group)


# ---------------------------------------------------------------------------
# binary cache

_EMB_MAGIC = b"GMEB"
_EMB_VERSION = 1
_EMB_HEADER = struct.Struct("<4sIIIIIIIB")
_NORM_CODES = {"off": 0, "weighted": 1, "raw": 2}
_GROUP_CODES = {GroupId.SO2: 0, GroupId.SO3: 1}


def save_embedding(e, path):
    """Little-endian header followed by ``Psi`` as row-major complex64."""
    header = _EMB_HEADER.pack(
        _EMB_MAGIC, _EMB_VERSION, _GROUP_CODES[e.group], e.k, e.n, e.d, e.m_k, e.t, _NORM_CODES[e.normalize]
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(e.matrix, dtype="<c8").tobytes())


def load_embedding(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, version, gcode, k, n, d, m_k, t, ncode = _EMB_HEADER.unpack_from(raw)
    if magic != _EMB_MAGIC or version != _EMB_VERSION:
        raise ValueError(f"{path}: not a version-{_EMB_VERSION} embedding file")
    group = {v: g for g, v in _GROUP_CODES.items()}[gcode]
    norm = {v: s for s, v in _NORM_CODES.items()}[ncode]
    data = np.frombuffer(raw, dtype="<c8", offset=_EMB_HEADER.size).astype(np.complex128)
    psi = data.reshape(n, d, m_k * d)
    return EquivariantEmbedding(group, k, d, m_k, t, norm, psi)
