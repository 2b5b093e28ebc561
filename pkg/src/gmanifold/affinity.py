"""Pairwise affinities built from filtered blocks ``W~_{k,t}(i, j)``.

All-pairs evaluation works on static row blocks: for a block of rows the
blocks ``psi_k(rows) psi_k(cols)^*`` are formed with one matrix product per
frequency, reduced to affinities, and discarded.  Row blocks are independent
and processed in a fixed order, so results do not depend on the number of
worker threads.
"""

from __future__ import annotations

import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.fft

from . import __version__
from .errors import UnsupportedGroup
from .groups import GroupId, clebsch_gordan, tensor_outputs

METHODS = ("power", "opt", "bispec", "vdm", "scalar")
BANDS = ("clip", "extend")
# element budget for temporaries inside one chunk (complex128 -> 16 bytes each)
_CHUNK_ELEMS = 1 << 22
# budget for the filtered blocks of one row block; small enough to stay in cache
_BLOCK_ELEMS = 1 << 19


@dataclass(frozen=True)
class AffinityMethod:
    """Which affinity to compute and its method-specific parameters.

    ``fft_n`` and ``refine`` only matter for ``opt``; ``band`` only for
    ``bispec``.
    """

    kind: str
    fft_n: int = 4096
    refine: bool = True
    band: str = "clip"

    def __post_init__(self):
        if self.kind not in METHODS:
            raise ValueError(f"unknown affinity method {self.kind!r}; expected one of {METHODS}")
        if self.band not in BANDS:
            raise ValueError(f"unknown bispectrum band policy {self.band!r}")
        n = int(self.fft_n)
        if n < 4 or n & (n - 1):
            raise ValueError(f"FFT length must be a power of two >= 4, got {self.fft_n}")

    @property
    def tag(self):
        return self.kind

    def params(self):
        if self.kind == "opt":
            return {"fft_n": int(self.fft_n), "refine": bool(self.refine)}
        if self.kind == "bispec":
            return {"band": self.band}
        return {}

    def frequencies(self, group, k_max):
        """Frequencies whose embeddings this method reads."""
        group = GroupId.parse(group)
        if self.kind == "scalar":
            return []
        if self.kind == "vdm":
            return [1]
        if self.kind == "bispec":
            top = k_max if self.band == "clip" else 2 * k_max
            lo = 0 if group is GroupId.SO3 else 1
            return list(range(lo, top + 1))
        return list(range(1, k_max + 1))

    def check(self, group, k_max):
        if self.kind == "opt":
            if GroupId.parse(group) is not GroupId.SO2:
                raise UnsupportedGroup("optimal alignment affinity is only available for SO(2)")
            if self.fft_n < 4 * k_max:
                raise ValueError(f"FFT length {self.fft_n} must be at least 4*k_max = {4 * k_max}")


@dataclass
class AffinityMatrix:
    values: np.ndarray
    method: str
    params: dict = field(default_factory=dict)
    alignment: np.ndarray | None = None

    @property
    def n(self):
        return self.values.shape[0]


def bispectrum_terms(group, k_max, band="clip"):
    """Frequency pairs ``(k1, k2)`` entering the bispectrum sum."""
    terms = []
    for k1 in range(1, k_max + 1):
        for k2 in range(1, k_max + 1):
            if band == "clip" and max(tensor_outputs(group, k1, k2)) > k_max:
                continue
            terms.append((k1, k2))
    return terms


def _k_max(embeddings, k_max):
    if k_max is None:
        k_max = max(embeddings)
    return int(k_max)


def _group(embeddings):
    return next(iter(embeddings.values())).group


# ---------------------------------------------------------------------------
# block kernels


def _blocks(emb, rows, cols):
    """Filtered blocks for ``rows x cols``: ``(r, c)`` for SO(2), ``(r, c, d, d)`` for SO(3)."""
    X, Y = emb.psi[rows], emb.psi[cols]
    if emb.group is GroupId.SO2:
        return X[:, 0, :] @ Y[:, 0, :].conj().T
    r, c, d = X.shape[0], Y.shape[0], emb.d
    F = X.reshape(r * d, -1) @ Y.reshape(c * d, -1).conj().T
    return F.reshape(r, d, c, d).transpose(0, 2, 1, 3)


def _hs2(F):
    sq = F.real**2 + F.imag**2
    return sq if sq.ndim == 2 else sq.sum(axis=(-1, -2))


def _trace(F):
    return F if F.ndim == 2 else np.trace(F, axis1=-2, axis2=-1)


def _oa_profile(v, alpha):
    """``f(alpha) = Re sum_k v_k exp(-1j k alpha)`` and its first two derivatives."""
    ks = np.arange(1, v.shape[-1] + 1)
    w = np.exp(-1j * alpha)[..., None]
    z = v * np.cumprod(np.broadcast_to(w, v.shape), axis=-1)
    return z.real.sum(-1), (ks * z.imag).sum(-1), -(ks**2 * z.real).sum(-1)


def oa_grid(v, N):
    """Maximize ``Re sum_k v_k exp(-1j k alpha)`` over ``alpha = 2 pi m / N``.

    ``v`` has shape ``(P, k_max)`` (frequencies 1..k_max).  The profile on the
    grid is one zero-padded inverse real FFT per pair.  Returns the maxima
    and the grid indices of the first maximizer.
    """
    v = np.atleast_2d(v)
    P, kmax = v.shape
    spec = np.zeros((P, N // 2 + 1), dtype=np.complex128)
    spec[:, 1 : kmax + 1] = np.conj(v)
    prof = scipy.fft.irfft(spec, n=N, axis=1) * (N / 2.0)
    idx = np.argmax(prof, axis=1)
    return prof[np.arange(P), idx], idx


def oa_refine(v, alpha0, N, iters=8, f0=None):
    """Safeguarded Newton polish of a grid maximizer to the continuous maximum.

    Steps are confined to one grid spacing around the starting point and only
    accepted when they increase the profile, so the result never falls
    below the grid value.  Pairs leave the active set once a step is rejected
    (it would be proposed again unchanged) or moves less than 1e-12.
    ``f0`` is the profile value at ``alpha0`` when already known.
    """
    h = 2.0 * np.pi / N
    lo, hi = alpha0 - h, alpha0 + h
    alpha = np.array(alpha0, dtype=float)
    best = _oa_profile(v, alpha)[0] if f0 is None else np.array(f0, dtype=float)
    act = np.arange(len(alpha))
    for _ in range(iters):
        if act.size == 0:
            break
        va, aa = v[act], alpha[act]
        _, g, c = _oa_profile(va, aa)
        step = np.where(c < 0, -g / np.where(c < 0, c, -1.0), np.sign(g) * 0.25 * h)
        trial = np.clip(aa + step, lo[act], hi[act])
        ft, _, _ = _oa_profile(va, trial)
        better = ft > best[act]
        alpha[act[better]] = trial[better]
        best[act[better]] = ft[better]
        act = act[better & (np.abs(trial - aa) > 1e-12)]
    return best, np.mod(alpha, 2.0 * np.pi)


def _oa_values(v, N, refine):
    """Maxima and maximizing angles for pairs ``v`` of shape ``(P, k_max)``."""
    P = v.shape[0]
    vals = np.empty(P)
    angles = np.empty(P)
    step = max(1, _CHUNK_ELEMS // N)
    for s in range(0, P, step):
        chunk = v[s : s + step]
        best, idx = oa_grid(chunk, N)
        alpha = 2.0 * np.pi * idx / N
        if refine:
            best, alpha = oa_refine(chunk, alpha, N, f0=best)
        vals[s : s + step] = best
        angles[s : s + step] = alpha
    return vals, angles


def _bispec_so3_trace(F, terms, group):
    """``sum_{(k1,k2)} Tr B_{k1,k2}`` for flattened pair blocks ``F[k]`` of shape (P, d, d)."""
    P = next(iter(F.values())).shape[0]
    total = np.zeros(P, dtype=np.complex128)
    for k1, k2 in terms:
        table = clebsch_gordan(group, k1, k2)
        A, B = F[k1], F[k2]
        d1, d2 = A.shape[-1], B.shape[-1]
        D = d1 * d2
        C3 = table.C.reshape(d1, d2 * D)
        step = max(1, _CHUNK_ELEMS // (D * D))
        for s in range(0, P, step):
            a, b = A[s : s + step], B[s : s + step]
            p = a.shape[0]
            # T = (a kron b) C as two batched products; T[p, x, y, :] is row (x, y)
            T1 = (a @ C3).reshape(p, d1, d2, D)
            T = (b[:, None] @ T1).reshape(p, D, D)
            start = 0
            for k, Ck in table.blocks():
                dk = Ck.shape[1]
                X = Ck.T @ T[:, :, start : start + dk]
                total[s : s + step] += np.einsum("pab,pab->p", X, F[k][s : s + step].conj())
                start += dk
    return total


def _needed(method, group, k_max):
    if method.kind == "vdm":
        return {1}
    if method.kind == "bispec":
        terms = bispectrum_terms(group, k_max, method.band)
        return {k for k1, k2 in terms for k in (k1, k2, *tensor_outputs(group, k1, k2))}
    return set(range(1, k_max + 1))


def _reduce(method, F, group, k_max, with_angles=False):
    """Affinities of one method from precomputed blocks ``F[k]``."""
    if method.kind == "vdm":
        return _hs2(F[1])
    if method.kind == "power":
        acc = _hs2(F[1])
        for k in range(2, k_max + 1):
            acc = acc + _hs2(F[k])
        return acc / k_max
    if method.kind == "opt":
        parts = [_trace(F[k]) for k in range(1, k_max + 1)]
        shape = parts[0].shape
        v = np.stack(parts, axis=-1).reshape(-1, k_max)
        vals, angles = _oa_values(v, int(method.fft_n), method.refine)
        vals = vals.reshape(shape) / k_max
        return (vals, angles.reshape(shape)) if with_angles else vals
    terms = bispectrum_terms(group, k_max, method.band)
    if group is GroupId.SO2:
        total = np.zeros(F[1].shape, dtype=np.complex128)
        for k1, k2 in terms:
            total += F[k1] * F[k2] * np.conj(F[k1 + k2])
    else:
        shape = F[1].shape[:2]
        flat = {k: f.reshape((-1,) + f.shape[2:]) for k, f in F.items()}
        total = _bispec_so3_trace(flat, terms, group).reshape(shape)
    return np.abs(total) / k_max**2


def _prepare(embeddings, methods, k_max):
    group = _group(embeddings)
    need = set()
    for m in methods:
        if m.kind == "scalar":
            raise ValueError("the scalar baseline is read from the graph, not from embeddings")
        m.check(group, k_max)
        need |= _needed(m, group, k_max)
    missing = sorted(k for k in need if k not in embeddings)
    if missing:
        raise KeyError(f"missing embeddings for frequencies {missing}")
    return group, sorted(need)


def affinity_blocks(embeddings, methods, rows, cols, k_max=None):
    """Affinities of several methods for ``rows x cols``, sharing the filtered
    blocks between them.  Returns ``{method.kind: array}``."""
    k_max = _k_max(embeddings, k_max)
    group, need = _prepare(embeddings, methods, k_max)
    F = {k: _blocks(embeddings[k], rows, cols) for k in need}
    return {m.kind: _reduce(m, F, group, k_max) for m in methods}


def affinity_block(embeddings, method, rows, cols, k_max=None):
    """Affinities for ``rows x cols`` (slices or index arrays)."""
    return affinity_blocks(embeddings, [method], rows, cols, k_max)[method.kind]


def _k_max_default(embeddings):
    return max(k for k in embeddings)


# ---------------------------------------------------------------------------
# single pairs


def power_spectrum_affinity(embeddings, i, j, k_max=None):
    """``(1/k_max) sum_k ||W~_k(i, j)||_HS^2``."""
    return float(affinity_block(embeddings, AffinityMethod("power"), [i], [j], k_max)[0, 0])


def vdm_affinity(embeddings, i, j):
    """``||W~_1(i, j)||_HS^2``; accepts the k=1 embedding or a mapping holding it."""
    emb = embeddings[1] if isinstance(embeddings, dict) else embeddings
    return float(_hs2(_blocks(emb, [i], [j]))[0, 0])


def optimal_alignment_affinity(embeddings, i, j, N=4096, k_max=None, refine=True):
    """Optimal alignment affinity and the maximizing angle (SO(2) only).

    With ``refine=False`` the result is exactly the maximum of
    ``(1/k_max) Re sum_k v(k) exp(-1j k alpha)`` over the ``N``-point grid,
    ``v(k) = Tr W~_k(i, j)``.  With ``refine=True`` the grid maximizer is
    polished to the continuous maximum.
    """
    k_max = _k_max(embeddings, k_max)
    method = AffinityMethod("opt", fft_n=N, refine=refine)
    group, need = _prepare(embeddings, [method], k_max)
    F = {k: _blocks(embeddings[k], [i], [j]) for k in need}
    vals, angles = _reduce(method, F, group, k_max, with_angles=True)
    return float(vals[0, 0]), float(angles[0, 0])


def bispectrum_affinity(embeddings, i, j, k_max=None, band="clip"):
    """``(1/k_max^2) |sum_{k1,k2} Tr B_{k1,k2}(i, j)|``.

    ``k_max`` defaults to the largest available frequency under ``clip`` and
    to half of it under ``extend``.
    """
    if k_max is None:
        top = _k_max_default(embeddings)
        k_max = top if band == "clip" else top // 2
    return float(affinity_block(embeddings, AffinityMethod("bispec", band=band), [i], [j], k_max)[0, 0])


def bispectrum_components(embeddings, i, j, k_max, band="clip"):
    """``{(k1, k2): Tr B_{k1,k2}(i, j)}`` for inspecting individual terms."""
    group = _group(embeddings)
    out = {}
    for k1, k2 in bispectrum_terms(group, k_max, band):
        F = {k: _blocks(embeddings[k], [i], [j]) for k in {k1, k2, *tensor_outputs(group, k1, k2)}}
        if group is GroupId.SO2:
            out[(k1, k2)] = complex(F[k1][0, 0] * F[k2][0, 0] * np.conj(F[k1 + k2][0, 0]))
        else:
            flat = {k: f.reshape((-1,) + f.shape[2:]) for k, f in F.items()}
            out[(k1, k2)] = complex(_bispec_so3_trace(flat, [(k1, k2)], group)[0])
    return out


# ---------------------------------------------------------------------------
# all pairs


def _row_blocks(n, block_rows):
    return [(s, min(n, s + block_rows)) for s in range(0, n, block_rows)]


def default_block_rows(n, methods, embeddings, k_max):
    """Rows per block so that the shared filtered blocks stay near
    ``_BLOCK_ELEMS`` complex entries."""
    group = _group(embeddings)
    need = set()
    for m in methods:
        if m.kind != "scalar":
            need |= _needed(m, group, k_max)
    per_row = max(1, n) * max(1, sum(embeddings[k].d ** 2 for k in need if k in embeddings))
    # at least ~8 blocks, so that only about n^2 (1/2 + 1/16) pairs are
    # evaluated whatever the size; a single block would compute the full square
    return int(max(1, min(-(-n // 8), 2 * _BLOCK_ELEMS // per_row)))


def scalar_affinity(graph):
    S = np.zeros((graph.n, graph.n))
    S[graph.i, graph.j] = graph.w
    S[graph.j, graph.i] = graph.w
    return S


def affinity_matrix(source, method, workers=1, k_max=None, block_rows=None, return_alignment=False):
    """Dense symmetric affinity matrix with zero diagonal.

    ``source`` is an :class:`~gmanifold.graph.AlignmentGraph` for the scalar
    baseline and a mapping ``k -> EquivariantEmbedding`` otherwise.  Only the
    upper triangle is computed; the lower triangle is its exact mirror.
    """
    if isinstance(method, str):
        method = AffinityMethod(method)
    if method.kind == "scalar":
        if isinstance(source, dict):
            raise ValueError("the scalar baseline needs the graph")
        return AffinityMatrix(scalar_affinity(source), "scalar", {})
    embeddings = source
    k_max = _k_max(embeddings, k_max)
    method.check(_group(embeddings), k_max)
    n = next(iter(embeddings.values())).n
    block_rows = block_rows or default_block_rows(n, [method], embeddings, k_max)
    group, need = _prepare(embeddings, [method], k_max)
    S = np.zeros((n, n))
    A = np.zeros((n, n)) if (return_alignment and method.kind == "opt") else None

    def run(span):
        r0, r1 = span
        rows, cols = slice(r0, r1), slice(r0, n)
        F = {k: _blocks(embeddings[k], rows, cols) for k in need}
        if A is not None:
            vals, ang = _reduce(method, F, group, k_max, with_angles=True)
            A[r0:r1, r0:] = ang
        else:
            vals = _reduce(method, F, group, k_max)
        # mirror in place: the square sub-block is rebuilt from its upper
        # triangle, the part right of it is copied below
        h = r1 - r0
        up = np.triu(vals[:, :h], 1)
        S[r0:r1, r0:r1] = up + up.T
        S[r0:r1, r1:] = vals[:, h:]
        S[r1:, r0:r1] = vals[:, h:].T

    spans = _row_blocks(n, block_rows)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, spans))
    else:
        for span in spans:
            run(span)
    np.fill_diagonal(S, 0.0)
    params = {"k_max": k_max, **method.params()}
    first = next(iter(embeddings.values()))
    params.update({"m_k": first.m_k, "t": first.t, "normalize": first.normalize})
    if A is not None:
        A = np.triu(A, 1)
        A = A + np.triu(np.mod(2.0 * np.pi - A, 2.0 * np.pi), 1).T
    return AffinityMatrix(S, method.kind, params, A)


def topk_rows(S, kappa, offset=0):
    """Indices of the ``kappa`` largest entries of each row, excluding the
    diagonal entry ``(r, offset + r)``; ties go to the smaller column index."""
    S = np.array(S, dtype=float, copy=True)
    r, n = S.shape
    if not 0 < kappa < n:
        raise ValueError(f"kappa must be in [1, {n - 1}], got {kappa}")
    S[np.arange(r), offset + np.arange(r)] = -np.inf
    part = np.argpartition(-S, kappa - 1, axis=1)[:, :kappa]
    thresh = np.take_along_axis(S, part, axis=1).min(axis=1)
    out = np.empty((r, kappa), dtype=np.int64)
    for row in range(r):
        cand = np.flatnonzero(S[row] >= thresh[row])
        order = np.lexsort((cand, -S[row, cand]))
        out[row] = cand[order[:kappa]]
    return out


def nearest_neighbors(embeddings, methods, kappa, k_max=None, workers=1, graph=None, block_rows=None):
    """Top-``kappa`` neighbor lists for several methods without forming any
    ``n x n`` matrix.  Returns ``{method.kind: (n, kappa) int array}``."""
    methods = [AffinityMethod(m) if isinstance(m, str) else m for m in methods]
    emb0 = next(iter(embeddings.values())) if embeddings else None
    n = emb0.n if emb0 is not None else graph.n
    k_max = _k_max(embeddings, k_max) if embeddings else 0
    spectral = [m for m in methods if m.kind != "scalar"]
    if spectral:
        _prepare(embeddings, spectral, k_max)
    out = {m.kind: np.empty((n, kappa), dtype=np.int64) for m in methods}
    if block_rows is None:
        block_rows = default_block_rows(n, methods, embeddings, k_max) if spectral else 256
    W = None
    if any(m.kind == "scalar" for m in methods):
        from .graph import build_weight_matrix

        W = build_weight_matrix(graph, 0).matrix.tocsr()

    def run(span):
        r0, r1 = span
        vals = affinity_blocks(embeddings, spectral, slice(r0, r1), slice(0, n), k_max) if spectral else {}
        if W is not None:
            vals["scalar"] = W[r0:r1].toarray().real
        for kind, v in vals.items():
            out[kind][r0:r1] = topk_rows(v, kappa, offset=r0)

    spans = _row_blocks(n, block_rows)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, spans))
    else:
        for span in spans:
            run(span)
    return out


# ---------------------------------------------------------------------------
# files

_AFF_MAGIC = b"GMAF"
_AFF_VERSION = 1
_AFF_HEAD = struct.Struct("<4sIII")


def save_affinity(S, path, fmt="bin", meta=None):
    """Write the upper triangle (``i < j``, row-major).

    ``fmt="bin"``: magic ``GMAF``, version, n, header length, a JSON header
    (method tag, parameters, tool version, caller metadata), then float64
    little-endian values.  ``fmt="csv"``: a ``#``-prefixed JSON header line
    followed by ``i,j,value`` rows.
    """
    header = {"tool": f"gmanifold {__version__}", "n": S.n, "method": S.method, "params": S.params}
    if meta:
        header["meta"] = meta
    iu, ju = np.triu_indices(S.n, 1)
    vals = S.values[iu, ju]
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    if fmt == "bin":
        with open(path, "wb") as fh:
            fh.write(_AFF_HEAD.pack(_AFF_MAGIC, _AFF_VERSION, S.n, len(blob)))
            fh.write(blob)
            fh.write(np.ascontiguousarray(vals, dtype="<f8").tobytes())
    elif fmt == "csv":
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("# " + blob.decode("utf-8") + "\n")
            fh.write("i,j,value\n")
            for a, b, v in zip(iu.tolist(), ju.tolist(), vals.tolist()):
                fh.write(f"{a},{b},{v!r}\n")
    else:
        raise ValueError(f"unknown affinity format {fmt!r}")


def load_affinity(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] == _AFF_MAGIC:
        _, version, n, hlen = _AFF_HEAD.unpack_from(raw)
        if version != _AFF_VERSION:
            raise ValueError(f"{path}: unsupported affinity file version {version}")
        header = json.loads(raw[_AFF_HEAD.size : _AFF_HEAD.size + hlen])
        vals = np.frombuffer(raw, dtype="<f8", offset=_AFF_HEAD.size + hlen)
    else:
        text = raw.decode("utf-8").splitlines()
        if not text or not text[0].startswith("#"):
            raise ValueError(f"{path}: neither a GMAF binary nor a headed CSV affinity file")
        header = json.loads(text[0][1:])
        n = header["n"]
        vals = np.array([float(line.split(",")[2]) for line in text[2:] if line.strip()])
    iu, ju = np.triu_indices(n, 1)
    if vals.size != iu.size:
        raise ValueError(f"{path}: expected {iu.size} values, found {vals.size}")
    S = np.zeros((n, n))
    S[iu, ju] = vals
    S = S + S.T
    return AffinityMatrix(S, header["method"], header.get("params", {})), header
