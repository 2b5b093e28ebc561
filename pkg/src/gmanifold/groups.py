"""SO(2) and SO(3): elements, Haar sampling, unitary irreps, Clebsch-Gordan tables.

Elements are stored as parameter arrays so that whole edge lists can be
handled at once:

* SO(2): one angle in ``[0, 2pi)``; ``params.shape == (..., )``.
* SO(3): a unit quaternion ``(w, x, y, z)`` with ``w >= 0``;
  ``params.shape == (..., 4)``.

Irreps of SO(2) are the characters ``exp(1j*k*alpha)``.  Irreps of SO(3) are
Wigner D-matrices in the ZYZ convention,

    D^k_{m', m}(alpha, beta, gamma) = exp(-1j*m'*alpha) d^k_{m', m}(beta) exp(-1j*m*gamma),

rows and columns ordered ``m = -k, ..., k``.  With this convention
``D(g1 g2) = D(g1) D(g2)`` for the active rotation
``R = Rz(alpha) Ry(beta) Rz(gamma)``.
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass

import numpy as np

from .errors import GroupMismatch

TWO_PI = 2.0 * np.pi


class GroupId(str, enum.Enum):
    SO2 = "so2"
    SO3 = "so3"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown group tag {value!r}; expected 'so2' or 'so3'") from None

    @property
    def param_size(self):
        return 1 if self is GroupId.SO2 else 4


def irrep_dim(group, k):
    """Dimension ``d_k`` of the k-th irrep."""
    if k < 0:
        raise ValueError(f"irrep frequency must be non-negative, got {k}")
    return 1 if GroupId.parse(group) is GroupId.SO2 else 2 * k + 1


# ---------------------------------------------------------------------------
# quaternion helpers (Hamilton convention, scalar first)


def quat_mul(q1, q2):
    w1, x1, y1, z1 = np.moveaxis(np.asarray(q1, dtype=float), -1, 0)
    w2, x2, y2, z2 = np.moveaxis(np.asarray(q2, dtype=float), -1, 0)
    return np.stack(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ],
        axis=-1,
    )


def quat_canonical(q):
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    return np.where(q[..., :1] < 0, -q, q)


def quat_to_matrix(q):
    q = np.asarray(q, dtype=float)
    w, x, y, z = np.moveaxis(q, -1, 0)
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - z * w)
    R[..., 0, 2] = 2 * (x * z + y * w)
    R[..., 1, 0] = 2 * (x * y + z * w)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - x * w)
    R[..., 2, 0] = 2 * (x * z - y * w)
    R[..., 2, 1] = 2 * (y * z + x * w)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def quat_from_matrix(R):
    """Shepperd's method; returns canonical (w >= 0) quaternions."""
    R = np.asarray(R, dtype=float)
    batch = R.shape[:-2]
    R = R.reshape(-1, 3, 3)
    tr = np.trace(R, axis1=1, axis2=2)
    diag = np.diagonal(R, axis1=1, axis2=2)
    choice = np.argmax(np.concatenate([tr[:, None], diag], axis=1), axis=1)
    q = np.empty((R.shape[0], 4))
    for idx in range(R.shape[0]):
        m = R[idx]
        c = choice[idx]
        if c == 0:
            s = 2.0 * math.sqrt(1.0 + tr[idx])
            q[idx] = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        elif c == 1:
            s = 2.0 * math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
            q[idx] = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        elif c == 2:
            s = 2.0 * math.sqrt(1.0 - m[0, 0] + m[1, 1] - m[2, 2])
            q[idx] = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
        else:
            s = 2.0 * math.sqrt(1.0 - m[0, 0] - m[1, 1] + m[2, 2])
            q[idx] = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    return quat_canonical(q).reshape(batch + (4,))


def quat_to_zyz(q):
    """ZYZ Euler angles ``(alpha, beta, gamma)`` with ``R = Rz(alpha) Ry(beta) Rz(gamma)``.

    Derived from the quaternion directly, so the gimbal-lock cases
    ``beta = 0`` and ``beta = pi`` are well conditioned: only the relevant
    combination ``alpha +/- gamma`` is determined there.
    """
    w, x, y, z = np.moveaxis(np.asarray(q, dtype=float), -1, 0)
    half_sum = np.arctan2(z, w)
    half_diff = np.arctan2(-x, y)
    beta = 2.0 * np.arctan2(np.hypot(x, y), np.hypot(w, z))
    return half_sum + half_diff, beta, half_sum - half_diff


def zyz_to_quat(alpha, beta, gamma):
    alpha, beta, gamma = np.broadcast_arrays(*map(np.asarray, (alpha, beta, gamma)))
    s, d = 0.5 * (alpha + gamma), 0.5 * (alpha - gamma)
    cb, sb = np.cos(0.5 * beta), np.sin(0.5 * beta)
    q = np.stack([cb * np.cos(s), -sb * np.sin(d), sb * np.cos(d), cb * np.sin(s)], axis=-1)
    return quat_canonical(q)


# ---------------------------------------------------------------------------
# parameter-array group operations


def canonical_params(group, params):
    group = GroupId.parse(group)
    params = np.asarray(params, dtype=float)
    if group is GroupId.SO2:
        out = np.mod(params, TWO_PI)
        # mod can round up to exactly 2pi for tiny negative inputs
        return np.where(out >= TWO_PI, 0.0, out)
    return quat_canonical(params)


def identity_params(group, shape=()):
    group = GroupId.parse(group)
    if group is GroupId.SO2:
        return np.zeros(shape)
    q = np.zeros(tuple(shape) + (4,))
    q[..., 0] = 1.0
    return q


def compose_params(group, p1, p2):
    group = GroupId.parse(group)
    if group is GroupId.SO2:
        return canonical_params(group, np.asarray(p1, dtype=float) + np.asarray(p2, dtype=float))
    return quat_canonical(quat_mul(p1, p2))


def inverse_params(group, p):
    group = GroupId.parse(group)
    if group is GroupId.SO2:
        return canonical_params(group, -np.asarray(p, dtype=float))
    q = np.array(p, dtype=float, copy=True)
    q[..., 1:] *= -1.0
    return quat_canonical(q)


def haar_params(group, rng, size=None):
    """Haar-distributed parameters; ``size=None`` gives a single element."""
    group = GroupId.parse(group)
    if group is GroupId.SO2:
        return rng.uniform(0.0, TWO_PI, size=size)
    shape = (4,) if size is None else tuple(np.atleast_1d(size)) + (4,)
    # a normalized isotropic Gaussian 4-vector is uniform on S^3 (Haar on SU(2))
    return quat_canonical(rng.standard_normal(shape))


def rotation_matrix_params(group, params):
    """3x3 rotation matrices for SO(3), 2x2 for SO(2)."""
    group = GroupId.parse(group)
    params = np.asarray(params, dtype=float)
    if group is GroupId.SO3:
        return quat_to_matrix(params)
    c, s = np.cos(params), np.sin(params)
    return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)


# ---------------------------------------------------------------------------
# single elements


@dataclass(frozen=True)
class GroupElement:
    group: GroupId
    params: tuple

    def __post_init__(self):
        object.__setattr__(self, "group", GroupId.parse(self.group))
        p = canonical_params(self.group, np.asarray(self.params, dtype=float))
        if self.group is GroupId.SO3 and p.shape != (4,):
            raise ValueError("SO(3) element needs a 4-component quaternion")
        object.__setattr__(self, "params", tuple(np.atleast_1d(p).tolist()))

    @classmethod
    def so2(cls, alpha):
        return cls(GroupId.SO2, (float(alpha),))

    @classmethod
    def so3(cls, quat):
        return cls(GroupId.SO3, tuple(quat))

    @classmethod
    def identity(cls, group):
        group = GroupId.parse(group)
        return cls(group, tuple(np.atleast_1d(identity_params(group)).tolist()))

    @classmethod
    def from_matrix(cls, R):
        return cls(GroupId.SO3, tuple(quat_from_matrix(R)))

    @classmethod
    def from_zyz(cls, alpha, beta, gamma):
        return cls(GroupId.SO3, tuple(zyz_to_quat(alpha, beta, gamma)))

    @property
    def array(self):
        a = np.array(self.params)
        return a[0] if self.group is GroupId.SO2 else a

    @property
    def alpha(self):
        if self.group is not GroupId.SO2:
            raise AttributeError("alpha is only defined for SO(2) elements")
        return self.params[0]

    def matrix(self):
        return rotation_matrix_params(self.group, self.array)

    def euler_zyz(self):
        if self.group is not GroupId.SO3:
            raise AttributeError("Euler angles are only defined for SO(3) elements")
        return tuple(float(a) for a in quat_to_zyz(self.array))

    def __matmul__(self, other):
        return compose(self, other)


def compose(g1, g2):
    if g1.group is not g2.group:
        raise GroupMismatch(f"cannot compose {g1.group.value} with {g2.group.value}")
    p = compose_params(g1.group, g1.array, g2.array)
    return GroupElement(g1.group, tuple(np.atleast_1d(p)))


def inverse(g):
    return GroupElement(g.group, tuple(np.atleast_1d(inverse_params(g.group, g.array))))


def haar_sample(group, rng):
    group = GroupId.parse(group)
    return GroupElement(group, tuple(np.atleast_1d(haar_params(group, rng))))


# ---------------------------------------------------------------------------
# Wigner matrices


@functools.lru_cache(maxsize=None)
def _small_d_tables(k):
    """Coefficients of Wigner's explicit sum for d^k(beta).

    d^k_{m', m}(beta) = sum_s coef[m', m, s] cos(beta/2)^pc[m', m, s] sin(beta/2)^ps[m', m, s]
    """
    d = 2 * k + 1
    lf = [math.lgamma(i + 1) for i in range(4 * k + 2)]
    width = d
    coef = np.zeros((d, d, width))
    pc = np.zeros((d, d, width))
    ps = np.zeros((d, d, width))
    for a, mp in enumerate(range(-k, k + 1)):
        for b, m in enumerate(range(-k, k + 1)):
            pref = 0.5 * (lf[k + mp] + lf[k - mp] + lf[k + m] + lf[k - m])
            for idx, s in enumerate(range(max(0, m - mp), min(k + m, k - mp) + 1)):
                logc = pref - lf[k + m - s] - lf[s] - lf[mp - m + s] - lf[k - mp - s]
                coef[a, b, idx] = (-1.0) ** (mp - m + s) * math.exp(logc)
                pc[a, b, idx] = 2 * k + m - mp - 2 * s
                ps[a, b, idx] = mp - m + 2 * s
    return coef, pc, ps


def wigner_small_d(k, beta):
    """Real Wigner small-d matrix ``d^k(beta)``, shape ``beta.shape + (2k+1, 2k+1)``."""
    if k < 0:
        raise ValueError(f"irrep frequency must be non-negative, got {k}")
    beta = np.asarray(beta, dtype=float)
    coef, pc, ps = _small_d_tables(k)
    c = np.cos(0.5 * beta)[..., None, None, None]
    s = np.sin(0.5 * beta)[..., None, None, None]
    return np.sum(coef * c**pc * s**ps, axis=-1)


def wigner_D(k, alpha, beta, gamma):
    alpha, beta, gamma = np.broadcast_arrays(*map(np.asarray, (alpha, beta, gamma)))
    m = np.arange(-k, k + 1)
    left = np.exp(-1j * alpha[..., None] * m)
    right = np.exp(-1j * gamma[..., None] * m)
    return left[..., :, None] * wigner_small_d(k, beta) * right[..., None, :]


def irrep_params(group, k, params):
    """Vectorized irreps: array of shape ``batch + (d_k, d_k)``."""
    group = GroupId.parse(group)
    if k < 0:
        raise ValueError(f"irrep frequency must be non-negative, got {k}")
    params = np.asarray(params, dtype=float)
    if group is GroupId.SO2:
        return np.exp(1j * k * params)[..., None, None]
    if k == 0:
        return np.ones(params.shape[:-1] + (1, 1), dtype=complex)
    return wigner_D(k, *quat_to_zyz(params))


@dataclass(frozen=True)
class IrrepMatrix:
    k: int
    dim: int
    entries: np.ndarray


def irrep(group, k, g):
    """The unitary irrep ``rho_k(g)``."""
    group = GroupId.parse(group)
    if g.group is not group:
        raise GroupMismatch(f"element of {g.group.value} passed for group {group.value}")
    M = irrep_params(group, k, g.array)
    return IrrepMatrix(k=k, dim=M.shape[-1], entries=M)


# ---------------------------------------------------------------------------
# Clebsch-Gordan


@dataclass(frozen=True)
class CGTable:
    """Unitary change of basis ``C`` with
    ``rho_k1(g) kron rho_k2(g) = C [direct sum of rho_k(g), k in outputs] C^*``."""

    group: GroupId
    k1: int
    k2: int
    outputs: tuple
    C: np.ndarray

    @property
    def dims(self):
        return tuple(irrep_dim(self.group, k) for k in self.outputs)

    def blocks(self):
        """Yield ``(k, C_k)`` where ``C_k`` are the columns belonging to frequency k."""
        start = 0
        for k, dk in zip(self.outputs, self.dims):
            yield k, self.C[:, start : start + dk]
            start += dk


def _cg_coefficient(j1, m1, j2, m2, J, M, lf):
    """<j1 m1 j2 m2 | J M> by Racah's formula (Condon-Shortley phase)."""
    if m1 + m2 != M or abs(m1) > j1 or abs(m2) > j2 or abs(M) > J:
        return 0.0
    pre = 0.5 * (
        math.log(2 * J + 1)
        + lf[J + j1 - j2]
        + lf[J - j1 + j2]
        + lf[j1 + j2 - J]
        - lf[j1 + j2 + J + 1]
        + lf[J + M]
        + lf[J - M]
        + lf[j1 - m1]
        + lf[j1 + m1]
        + lf[j2 - m2]
        + lf[j2 + m2]
    )
    total = 0.0
    lo = max(0, j2 - J - m1, j1 - J + m2)
    hi = min(j1 + j2 - J, j1 - m1, j2 + m2)
    for s in range(lo, hi + 1):
        den = lf[s] + lf[j1 + j2 - J - s] + lf[j1 - m1 - s] + lf[j2 + m2 - s] + lf[J - j2 + m1 + s] + lf[J - j1 - m2 + s]
        total += (-1.0) ** s * math.exp(pre - den)
    return total


@functools.lru_cache(maxsize=None)
def _cg_so3(k1, k2):
    lf = [math.lgamma(i + 1) for i in range(2 * (k1 + k2) + 2)]
    d1, d2 = 2 * k1 + 1, 2 * k2 + 1
    outputs = tuple(range(abs(k1 - k2), k1 + k2 + 1))
    C = np.zeros((d1 * d2, d1 * d2))
    col = 0
    for J in outputs:
        for M in range(-J, J + 1):
            for a, m1 in enumerate(range(-k1, k1 + 1)):
                m2 = M - m1
                if abs(m2) <= k2:
                    C[a * d2 + (m2 + k2), col] = _cg_coefficient(k1, m1, k2, m2, J, M, lf)
            col += 1
    C.setflags(write=False)
    return outputs, C


def clebsch_gordan(group, k1, k2):
    """Clebsch-Gordan table for ``rho_k1 kron rho_k2``.

    For SO(3) the coefficients are real in the standard basis, which is also
    the basis of :func:`wigner_D`, so no further change of basis is needed.
    """
    group = GroupId.parse(group)
    if k1 < 0 or k2 < 0:
        raise ValueError("frequencies must be non-negative")
    if group is GroupId.SO2:
        return CGTable(group, k1, k2, (k1 + k2,), np.ones((1, 1)))
    outputs, C = _cg_so3(k1, k2)
    return CGTable(group, k1, k2, outputs, C)


def tensor_outputs(group, k1, k2):
    group = GroupId.parse(group)
    if group is GroupId.SO2:
        return (k1 + k2,)
    return tuple(range(abs(k1 - k2), k1 + k2 + 1))
