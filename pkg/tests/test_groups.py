import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import block_diag

from gmanifold.errors import GroupMismatch
from gmanifold.groups import (
    GroupElement,
    GroupId,
    clebsch_gordan,
    compose,
    compose_params,
    haar_params,
    haar_sample,
    inverse,
    inverse_params,
    irrep,
    irrep_dim,
    irrep_params,
    quat_from_matrix,
    quat_to_matrix,
    quat_to_zyz,
    tensor_outputs,
    wigner_D,
    wigner_small_d,
    zyz_to_quat,
)

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def test_irrep_dims():
    assert irrep_dim("so2", 7) == 1
    assert [irrep_dim("so3", k) for k in range(4)] == [1, 3, 5, 7]
    with pytest.raises(ValueError):
        irrep_dim("so3", -1)
    with pytest.raises(ValueError):
        GroupId.parse("su2")


def test_so2_irrep_is_character():
    alpha = np.array([0.0, 0.3, 2.0, 6.0])
    for k in range(4):
        D = irrep_params("so2", k, alpha)
        assert np.abs(D[:, 0, 0] - np.exp(1j * k * alpha)).max() < 1e-14


def test_so3_k1_matches_rotation_matrix():
    # D^1 is the 3x3 rotation matrix written in the spherical basis
    # e_{-1} = (x + iy)/sqrt 2, e_0 = z, e_{+1} = -(x - iy)/sqrt 2
    s = 1 / np.sqrt(2)
    U = np.array([[s, 1j * s, 0], [0, 0, 1], [-s, 1j * s, 0]])
    q = haar_params("so3", np.random.default_rng(3), size=50)
    R = quat_to_matrix(q)
    D = irrep_params("so3", 1, q)
    assert np.abs(U @ R @ U.conj().T - D).max() < 1e-13


def test_small_d_closed_forms():
    beta = 0.7
    d1 = wigner_small_d(1, beta)
    c, s = np.cos(beta), np.sin(beta)
    ref = np.array(
        [
            [(1 + c) / 2, s / np.sqrt(2), (1 - c) / 2],
            [-s / np.sqrt(2), c, s / np.sqrt(2)],
            [(1 - c) / 2, -s / np.sqrt(2), (1 + c) / 2],
        ]
    )
    assert np.abs(d1 - ref).max() < 1e-14
    # d^k(0) is the identity and d^k(pi) is the anti-diagonal with signs
    for k in range(5):
        assert np.abs(wigner_small_d(k, 0.0) - np.eye(2 * k + 1)).max() < 1e-13
        dpi = wigner_small_d(k, np.pi)
        assert np.abs(np.abs(dpi) - np.fliplr(np.eye(2 * k + 1))).max() < 1e-12


def test_zyz_roundtrip():
    q = haar_params("so3", np.random.default_rng(5), size=200)
    a, b, g = quat_to_zyz(q)
    q2 = zyz_to_quat(a, b, g)
    assert np.abs(quat_to_matrix(q) - quat_to_matrix(q2)).max() < 1e-12
    for i in range(5):
        D = wigner_D(2, a[i], b[i], g[i])
        assert np.abs(D - irrep_params("so3", 2, q[i])).max() < 1e-12


def test_quaternion_matrix_roundtrip():
    q = haar_params("so3", np.random.default_rng(6), size=100)
    R = quat_to_matrix(q)
    assert np.abs(R @ np.swapaxes(R, 1, 2) - np.eye(3)).max() < 1e-13
    assert np.abs(np.linalg.det(R) - 1).max() < 1e-13
    assert np.abs(quat_to_matrix(quat_from_matrix(R)) - R).max() < 1e-12


def test_group_element_api():
    rng = np.random.default_rng(7)
    g, h = haar_sample("so3", rng), haar_sample("so3", rng)
    gh = compose(g, h)
    assert np.abs(gh.matrix() - g.matrix() @ h.matrix()).max() < 1e-13
    assert np.abs(compose(g, inverse(g)).matrix() - np.eye(3)).max() < 1e-13
    assert np.abs((g @ h).matrix() - gh.matrix()).max() < 1e-15
    a = GroupElement.so2(7.0)
    assert 0 <= a.alpha < 2 * np.pi
    with pytest.raises(GroupMismatch):
        irrep("so2", 1, g)
    with pytest.raises(GroupMismatch):
        compose(a, g)


def test_tensor_outputs():
    assert tensor_outputs("so2", 2, 3) == (5,)
    assert tensor_outputs("so3", 2, 3) == (1, 2, 3, 4, 5)
    # dimension count: (2k1+1)(2k2+1) = sum of (2k+1)
    for k1 in range(5):
        for k2 in range(5):
            assert sum(2 * k + 1 for k in tensor_outputs("so3", k1, k2)) == (2 * k1 + 1) * (2 * k2 + 1)


def test_cg_against_sympy():
    cg_sym = pytest.importorskip("sympy.physics.quantum.cg").CG
    for k1, k2 in [(1, 1), (2, 1), (2, 2), (3, 1)]:
        table = clebsch_gordan("so3", k1, k2)
        d2 = 2 * k2 + 1
        col = 0
        for J in table.outputs:
            for M in range(-J, J + 1):
                for m1 in range(-k1, k1 + 1):
                    m2 = M - m1
                    if abs(m2) > k2:
                        continue
                    ref = float(cg_sym(k1, m1, k2, m2, J, M).doit())
                    assert abs(table.C[(m1 + k1) * d2 + m2 + k2, col] - ref) < 1e-12
                col += 1


def test_cg_small_value():
    # <1 0 1 0 | 0 0> = -1/sqrt 3
    table = clebsch_gordan("so3", 1, 1)
    assert abs(table.C[1 * 3 + 1, 0] + 1 / np.sqrt(3)) < 1e-14


@settings(max_examples=25, deadline=None)
@given(seed=seeds, k=st.integers(0, 6), group=st.sampled_from(["so2", "so3"]))
def test_unitary_and_homomorphism(seed, k, group):
    rng = np.random.default_rng(seed)
    p1, p2 = haar_params(group, rng, size=4), haar_params(group, rng, size=4)
    D1, D2 = irrep_params(group, k, p1), irrep_params(group, k, p2)
    D12 = irrep_params(group, k, compose_params(group, p1, p2))
    eye = np.eye(irrep_dim(group, k))
    assert np.abs(D1 @ np.swapaxes(D1.conj(), 1, 2) - eye).max() < 1e-10
    assert np.abs(D12 - D1 @ D2).max() < 1e-10
    Dinv = irrep_params(group, k, inverse_params(group, p1))
    assert np.abs(Dinv - np.swapaxes(D1.conj(), 1, 2)).max() < 1e-10


@settings(max_examples=20, deadline=None)
@given(seed=seeds, k1=st.integers(0, 4), k2=st.integers(0, 4))
def test_cg_decomposes_tensor_product(seed, k1, k2):
    rng = np.random.default_rng(seed)
    table = clebsch_gordan("so3", k1, k2)
    C = table.C
    assert np.abs(C.T @ C - np.eye(C.shape[0])).max() < 1e-10
    p = haar_params("so3", rng)
    lhs = np.kron(irrep_params("so3", k1, p), irrep_params("so3", k2, p))
    blocks = [irrep_params("so3", k, p) for k in table.outputs]
    assert np.abs(lhs - C @ block_diag(*blocks) @ C.T).max() < 1e-10


@settings(max_examples=30, deadline=None)
@given(seed=seeds)
def test_haar_quaternions_canonical(seed):
    q = haar_params("so3", np.random.default_rng(seed), size=10)
    assert np.abs(np.linalg.norm(q, axis=1) - 1).max() < 1e-14
    assert (q[:, 0] >= 0).all()
