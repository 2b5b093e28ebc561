import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gmanifold.graph import AlignmentGraph, normalized_operator
from gmanifold.groups import GroupId, compose_params, identity_params, quat_to_matrix
from gmanifold.synth import (
    So3Cloud,
    clean_s2_graph,
    cluster_graph,
    knn_s2_graph,
    load_truth,
    procrustes_angle,
    rewire,
    sample_so3_cloud,
    save_truth,
)


def test_cloud_is_haar_like():
    c = sample_so3_cloud(100000, seed=1)
    R = c.rotations
    assert np.abs(R[:50] @ np.swapaxes(R[:50], 1, 2) - np.eye(3)).max() < 1e-10
    assert np.abs(np.linalg.det(R[:50]) - 1).max() < 1e-10
    assert np.abs(c.directions.mean(axis=0)).max() < 0.02
    # Haar integral of the trace is zero
    assert abs(np.trace(R, axis1=1, axis2=2).mean()) < 0.02
    assert np.abs(np.linalg.norm(c.directions, axis=1) - 1).max() < 1e-12


def test_cloud_deterministic():
    assert (sample_so3_cloud(20, 4).quats == sample_so3_cloud(20, 4).quats).all()
    assert not (sample_so3_cloud(20, 4).quats == sample_so3_cloud(20, 5).quats).all()
    with pytest.raises(ValueError):
        sample_so3_cloud(0)


def test_procrustes_against_grid():
    c = sample_so3_cloud(6, seed=3)
    R = c.rotations
    grid = 2 * np.pi * np.arange(100000) / 100000
    rot = np.stack([np.stack([np.cos(grid), -np.sin(grid)], -1), np.stack([np.sin(grid), np.cos(grid)], -1)], -2)
    for i, j in [(0, 1), (2, 3), (4, 5)]:
        Xi, Xj = R[i][:, :2], R[j][:, :2]
        cost = np.linalg.norm(Xi[None] - Xj[None] @ rot, axis=(1, 2))
        best = grid[np.argmin(cost)]
        alpha = procrustes_angle(R[i], R[j])
        diff = abs(np.angle(np.exp(1j * (alpha - best))))
        assert diff < 2 * np.pi / 100000
    assert abs(procrustes_angle(R[0], R[0])) < 1e-12


def test_clean_graph_contract():
    c = sample_so3_cloud(400, seed=4)
    g = clean_s2_graph(c, 0.9)
    v = c.directions
    dots = v @ v.T
    I, J = np.triu_indices(400, 1)
    expected = set(zip(I[dots[I, J] >= 0.9].tolist(), J[dots[I, J] >= 0.9].tolist()))
    assert set(zip(g.i.tolist(), g.j.tolist())) == expected
    assert (g.w == 1).all()
    # alpha_ji = -alpha_ij
    R = c.rotations
    back = procrustes_angle(R[g.j], R[g.i])
    s = np.mod(g.align + back, 2 * np.pi)
    assert np.minimum(s, 2 * np.pi - s).max() < 1e-10
    with pytest.raises(ValueError):
        clean_s2_graph(c, 1.0)


def test_identical_frames_zero_angle():
    q = np.array([[1.0, 0, 0, 0], [1.0, 0, 0, 0], [0.0, 1.0, 0, 0]])
    g = clean_s2_graph(So3Cloud(q), 0.97)
    assert g.num_edges == 1 and g.align[0] == 0.0


def test_edge_count_cap_area():
    # a spherical cap with <v, u> >= c covers (1 - c)/2 of the sphere
    n = 10000
    g = clean_s2_graph(sample_so3_cloud(n, seed=5), 0.97)
    expected = n * n * (1 - 0.97) / 4
    assert abs(g.num_edges - expected) < 0.05 * expected


def test_knn_graph_degrees():
    g = knn_s2_graph(sample_so3_cloud(300, seed=6), kappa=10)
    deg = np.bincount(np.concatenate([g.i, g.j]), minlength=300)
    assert deg.min() >= 10


def test_rewire_p1_identity():
    g = clean_s2_graph(sample_so3_cloud(500, seed=7), 0.9)
    h, stats = rewire(g, 1.0, seed=1)
    assert (h.i == g.i).all() and (h.j == g.j).all() and (h.align == g.align).all()
    assert stats.kept == g.num_edges and stats.rewired == 0


def test_rewire_p0():
    g = clean_s2_graph(sample_so3_cloud(500, seed=8), 0.9)
    h, stats = rewire(g, 0.0, seed=1)
    old = set(zip(g.i.tolist(), g.j.tolist(), g.align.tolist()))
    new = set(zip(h.i.tolist(), h.j.tolist(), h.align.tolist()))
    assert len(old & new) == stats.forced_keeps == 0
    assert h.num_edges == g.num_edges


def test_rewire_survival_fraction():
    g = clean_s2_graph(sample_so3_cloud(600, seed=9), 0.9)
    fractions = []
    for seed in range(50):
        h, stats = rewire(g, 0.3, seed=seed)
        fractions.append(stats.kept / stats.edges)
    assert abs(np.mean(fractions) - 0.3) < 0.02


def test_rewire_keeps_graph_simple_and_deterministic():
    g = clean_s2_graph(sample_so3_cloud(400, seed=10), 0.8)
    h, _ = rewire(g, 0.2, seed=3)
    key = h.i * h.n + h.j
    assert len(np.unique(key)) == h.num_edges and (h.i < h.j).all()
    h2, _ = rewire(g, 0.2, seed=3)
    assert (h.align == h2.align).all() and (h.j == h2.j).all()
    with pytest.raises(ValueError):
        rewire(g, 1.5)


def test_rewire_complete_graph():
    # once (i, j) is removed, j is a valid target again, so even a complete
    # graph never exhausts its candidates; edges come back with new alignments
    I, J = np.triu_indices(6, 1)
    full = AlignmentGraph(6, "so2", I, J, np.ones(len(I)), np.zeros(len(I)))
    h, stats = rewire(full, 0.0, seed=0)
    assert stats.forced_keeps == 0 and stats.rewired == full.num_edges
    assert (h.i == full.i).all() and (h.j == full.j).all()
    assert (h.align != 0).all()


def test_cluster_graph():
    g, labels = cluster_graph(2, 50, "so2", seed=1)
    assert g.num_edges == 2 * 50 * 49 // 2
    assert labels.tolist() == [0] * 50 + [1] * 50
    assert (labels[g.i] == labels[g.j]).all()
    with pytest.raises(ValueError):
        cluster_graph(1, 5, "so2")


def test_cluster_cycle_consistency():
    g, _ = cluster_graph(3, 6, "so3", seed=2)
    lookup = {(a, b): g.align[e] for e, (a, b) in enumerate(zip(g.i.tolist(), g.j.tolist()))}
    for a, b, c in [(0, 1, 2), (6, 8, 11), (12, 13, 17)]:
        q = compose_params("so3", compose_params("so3", lookup[(a, b)], lookup[(b, c)]), lookup[(a, c)] * [1, -1, -1, -1])
        assert np.abs(quat_to_matrix(q) - np.eye(3)).max() < 1e-12
    assert identity_params("so3").tolist() == [1.0, 0.0, 0.0, 0.0]


def test_clean_cluster_spectrum():
    for group in ("so2", "so3"):
        K = 3
        g, _ = cluster_graph(K, 8, group, seed=3)
        for k in (1, 2):
            d = 1 if group == "so2" else 2 * k + 1
            lam = np.linalg.eigvalsh(normalized_operator(g, k).toarray())
            assert np.abs(lam[-d * K :] - 1).max() < 1e-8
            # the remaining eigenvalues all equal -1/(size-1) for a complete cluster
            assert np.abs(lam[: -d * K] + 1 / 7).max() < 1e-8
            W = normalized_operator(g, k).toarray()
            assert np.linalg.matrix_rank(W + np.eye(len(W)) / 7, tol=1e-8) == d * K


def test_truth_roundtrip(tmp_path):
    v = sample_so3_cloud(5, 1).directions
    save_truth(tmp_path / "t.json", directions=v, labels=[0, 1, 0, 1, 1], meta={"a": 1})
    v2, labels, meta = load_truth(tmp_path / "t.json")
    assert (v2 == v).all() and labels.tolist() == [0, 1, 0, 1, 1] and meta == {"a": 1}
    (tmp_path / "e.json").write_text("{}")
    with pytest.raises(ValueError):
        load_truth(tmp_path / "e.json")


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), p=st.floats(0, 1))
def test_rewire_preserves_edge_count(seed, p):
    g = clean_s2_graph(sample_so3_cloud(200, seed=11), 0.8)
    h, stats = rewire(g, p, seed=seed)
    assert h.num_edges == g.num_edges
    assert stats.kept + stats.rewired + stats.forced_keeps == stats.edges
    assert GroupId.parse(h.group) is GroupId.SO2
