import numpy as np
import pytest
from scipy.stats import spearmanr
from sklearn.cluster import KMeans
from sklearn.metrics import adjusted_rand_score

from urbanpref.colors import COLD_RGB, WARM_RGB, preference_ramp, ramp_color, rgb_to_lab
from urbanpref.som import (
    SomGrid,
    alphabet,
    bmu,
    bmu_batch,
    contextual_numbers,
    load_som,
    quantization_error,
    representative_images,
    save_som,
    topographic_error,
    train_som,
    two_level_cluster,
)


def blobs3(n, seed, sep=10.0):
    r = np.random.default_rng(seed)
    X = np.vstack([r.normal(size=(n, 2)) * 0.5 + c for c in [(0, 0), (sep, 0), (0, sep)]])
    return X, np.repeat([0, 1, 2], n)


def test_train_som_cell_count_paper_shape():
    X = np.random.default_rng(0).uniform(size=(50, 2))
    grid = train_som(X, 80, 80, 50, seed=0)
    assert grid.n_cells == 6400
    assert grid.weights.shape == (6400, 2)


def test_train_som_deterministic():
    X = np.random.default_rng(1).normal(size=(40, 3))
    a = train_som(X, 4, 4, 500, seed=9)
    b = train_som(X, 4, 4, 500, seed=9)
    assert np.array_equal(a.weights, b.weights)
    c = train_som(X, 4, 4, 500, seed=10)
    assert not np.array_equal(a.weights, c.weights)


def test_train_som_rejects_bad_input():
    with pytest.raises(ValueError):
        train_som(np.empty((0, 2)), 3, 3, 10, seed=0)
    with pytest.raises(ValueError):
        train_som(np.ones((5, 2)), 3, 3, 0, seed=0)


def test_train_som_single_sample_converges():
    grid = train_som(np.array([[3.0, 4.0]]), 3, 3, 200, seed=1)
    qe = dict(grid.qe_history)
    assert qe[200] < qe[0]
    assert np.allclose(grid.weights, [3.0, 4.0], atol=1e-3)


def test_train_som_qe_end_leq_checkpoint():
    X = np.random.default_rng(2).uniform(size=(300, 2))
    grid = train_som(X, 6, 6, 5000, seed=3)
    qe = dict(grid.qe_history)
    assert qe[5000] <= qe[500]


def test_uniform_square_topographic_error():
    X = np.random.default_rng(42).uniform(0, 1, size=(500, 2))
    grid = train_som(X, 10, 10, 20000, seed=7)
    assert topographic_error(grid, X) < 0.15


def test_bmu_exact_match_and_tie():
    W = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 0.0], [1.0, 1.0], [5.0, 5.0], [1.0, 1.0]])
    g = SomGrid(2, 3, 2, W.copy())
    assert bmu(g, np.array([5.0, 5.0])) == 4
    assert bmu(g, np.array([1.0, 1.0])) == 1  # tie among 1, 3, 5 -> lowest
    with pytest.raises(ValueError):
        bmu(g, np.array([1.0, 1.0, 1.0]))


def test_bmu_batch_agrees_with_scan():
    rng = np.random.default_rng(4)
    g = SomGrid(5, 7, 3, rng.normal(size=(35, 3)))
    Q = rng.normal(size=(1000, 3))
    assert np.array_equal(bmu_batch(g, Q), np.array([bmu(g, q) for q in Q]))


def test_quantization_error_hand_case():
    g = SomGrid(1, 1, 2, np.array([[0.0, 0.0]]))
    assert quantization_error(g, np.array([[3.0, 4.0]])) == pytest.approx(5.0)
    assert quantization_error(g, g.weights) == 0.0


def test_contextual_numbers_rank_order():
    vals = np.arange(1, 101, dtype=float)[:, None]
    cn = contextual_numbers(vals, cells=50, iters=3000, seed=2)
    assert abs(spearmanr(vals[:, 0], cn).statistic) > 0.95
    assert cn.min() >= 0.0 and cn.max() <= 1.0


def test_contextual_numbers_identical_rows():
    X = np.array([[1.0], [5.0], [1.0]])
    cn = contextual_numbers(X, cells=11, iters=300, seed=3)
    assert cn[0] == cn[2]


def test_contextual_numbers_two_cells():
    cn = contextual_numbers(np.array([[0.0], [10.0]]), cells=2, iters=100, seed=4)
    assert set(cn.tolist()) <= {0.0, 1.0}


def test_contextual_numbers_rejects_single_row():
    with pytest.raises(ValueError):
        contextual_numbers(np.array([[1.0]]), cells=4, iters=10, seed=0)


def test_two_level_cluster_blobs_ari():
    X, y = blobs3(150, 5)
    grid = train_som(X, 8, 8, 20000, seed=6)
    assign, centroids = two_level_cluster(grid, 3, seed=7)
    pred = assign[bmu_batch(grid, X)]
    assert adjusted_rand_score(y, pred) >= 0.9
    assert centroids.shape == (3, 2)


def test_two_level_cluster_k1_mean():
    W = np.random.default_rng(8).normal(size=(12, 2))
    g = SomGrid(3, 4, 2, W.copy())
    assign, centroids = two_level_cluster(g, 1, seed=0)
    assert np.all(assign == 0)
    assert np.allclose(centroids[0], W.mean(axis=0))


def test_two_level_cluster_rejects_excess_k():
    g = SomGrid(2, 3, 2, np.array([[0.0, 0], [0, 0], [1, 1], [1, 1], [2, 2], [3, 3]]))
    with pytest.raises(ValueError):
        two_level_cluster(g, 5, seed=0)  # only 4 distinct rows


def test_two_level_cluster_no_empty_clusters():
    rng = np.random.default_rng(9)
    g = SomGrid(10, 10, 2, rng.uniform(size=(100, 2)))
    for k in (7, 50, 99):
        assign, _ = two_level_cluster(g, k, seed=1)
        assert np.count_nonzero(np.bincount(assign, minlength=k)) == k


def test_two_level_matches_direct_kmeans_on_blobs():
    X, y = blobs3(80, 11)
    grid = train_som(X, 7, 7, 15000, seed=12)
    assign, _ = two_level_cluster(grid, 3, seed=13)
    two_level_pred = assign[bmu_batch(grid, X)]
    direct = KMeans(n_clusters=3, n_init=10, random_state=0).fit_predict(X)
    assert adjusted_rand_score(direct, two_level_pred) >= 0.8


def test_representative_images_nearest_and_distinct():
    rng = np.random.default_rng(14)
    X, y = blobs3(40, 15)
    ids = [f"im{i}" for i in range(len(X))]
    grid = train_som(X, 6, 6, 10000, seed=16)
    assign, centroids = two_level_cluster(grid, 3, seed=17)
    cells = bmu_batch(grid, X)
    reps = representative_images(assign, centroids, cells, X, ids)
    assert len(reps) == 3
    assert len(set(reps)) == 3
    # linear-scan oracle: each representative minimizes distance to its centroid
    img_clusters = assign[cells]
    for j, rep in enumerate(reps):
        members = [i for i in range(len(X)) if img_clusters[i] == j]
        if not members:
            continue
        best = min(members, key=lambda i: np.sum((X[i] - centroids[j]) ** 2))
        assert rep == ids[best]


def test_representative_images_single():
    X = np.array([[1.0, 2.0]])
    reps = representative_images(np.array([0]), np.array([[1.0, 2.0]]), np.array([0]), X, ["only"])
    assert reps == ["only"]


def test_representative_images_fewer_images_than_clusters():
    X = np.array([[0.0, 0.0]])
    with pytest.raises(ValueError):
        representative_images(np.array([0, 1]), np.zeros((2, 2)), np.array([0]), X, ["a"])


def test_alphabet_generic_characters():
    g = SomGrid(4, 5, 2, np.zeros((20, 2)))
    a = alphabet(g, "generic")
    assert a.colors.shape == (20, 3)
    assert a.mode == "generic"
    # characters are cell indices: bijection by construction
    assert g.cell_rc(7) == (1, 2)


def test_alphabet_preference_ramp_endpoints():
    g = SomGrid(1, 3, 1, np.zeros((3, 1)))
    pref = np.array([0.0, 0.5, 1.0])
    a = alphabet(g, "preference_ordered", preference=pref)
    assert a.color_of(0) == WARM_RGB
    assert a.color_of(2) == COLD_RGB
    with pytest.raises(ValueError):
        alphabet(g, "preference_ordered")


def test_alphabet_ramp_monotone_positions():
    ramp = preference_ramp()
    idx = [np.argmin(np.sum((ramp.astype(int) - np.array(ramp_color(v))) ** 2, axis=1)) for v in np.linspace(0, 1, 9)]
    assert idx == sorted(idx)


def test_ramp_linear_perceptual_lightness():
    ramp = preference_ramp().astype(float)
    L = rgb_to_lab(ramp)[:, 0]
    straight = np.linspace(L[0], L[-1], len(L))
    assert np.max(np.abs(L - straight)) < 1.0


def test_som_file_round_trip(tmp_path):
    X = np.random.default_rng(18).normal(size=(30, 4))
    grid = train_som(X, 3, 5, 400, seed=19)
    path = tmp_path / "grid.som"
    save_som(path, grid)
    loaded = load_som(path)
    assert (loaded.rows, loaded.cols, loaded.dim) == (3, 5, 4)
    assert loaded.seed == 19 and loaded.iters == 400
    assert np.allclose(loaded.weights, grid.weights, atol=1e-6)  # f32 storage
    assert path.read_bytes()[:4] == b"SOM0"


def test_som_file_rejects_bad_magic(tmp_path):
    p = tmp_path / "bad.som"
    p.write_bytes(b"XXXX" + b"\x00" * 24)
    with pytest.raises(ValueError):
        load_som(p)
