import numpy as np
import pytest

from molfields import embed as em
from molfields import hypernet as hn
from molfields import toys
from molfields.fieldgen import GridSpec, sample_query_points
from molfields.mnf import SirenArch


@pytest.fixture(scope="module")
def phi():
    grid = GridSpec(2, 4, (0.0, 0.0, 0.0), 4.0)
    cfg = hn.HypernetConfig(grid, SirenArch(hidden=(8,), channels=3, scale=4.0), ("C", "H", "O"), layers=4, model_dim=16, heads=2, pos_enc_dim=8, dropout=0.0)
    return hn.hypernet_init(cfg, 0)


def test_shapes_and_aggregation(phi):
    e = em.embed_molecule(phi, toys.methanol(), seed=1)
    assert e.dim == 16 and e.per_point.shape == (32, 16) and e.per_cell.shape == (8, 16)
    assert e.tap == 2
    np.testing.assert_allclose(e.global_, e.per_point.mean(0), atol=1e-15)
    for c in range(8):
        np.testing.assert_allclose(e.per_cell[c], e.per_point[e.cell_index == c].mean(0), atol=1e-15)


def test_bitwise_deterministic(phi):
    a = em.embed_molecule(phi, toys.water(), seed=4)
    b = em.embed_molecule(phi, toys.water(), seed=4)
    np.testing.assert_array_equal(a.per_point, b.per_point)
    np.testing.assert_array_equal(a.global_, b.global_)
    c = em.embed_molecule(phi, toys.water(), seed=5)
    assert not np.array_equal(a.global_, c.global_)


def test_query_order_leaves_embedding_bitwise_unchanged(phi, rng):
    Q = sample_query_points(phi.config.grid, 3)
    a = em.embed_molecule(phi, toys.methane(), queries=Q)
    b = em.embed_molecule(phi, toys.methane(), queries=Q.permuted(rng.permutation(len(Q))))
    np.testing.assert_array_equal(a.global_, b.global_)
    np.testing.assert_array_equal(a.per_cell, b.per_cell)


def test_translation_invariant(phi):
    m = toys.methanol()
    a = em.embed_molecule(phi, m, seed=0)
    b = em.embed_molecule(phi, m.translated([3.0, -1.0, 2.0]), seed=0)
    np.testing.assert_allclose(a.global_, b.global_, atol=1e-12)


def test_explicit_tap(phi):
    a = em.embed_molecule(phi, toys.water(), seed=0, tap=4)
    assert a.tap == 4
    with pytest.raises(ValueError):
        em.embed_molecule(phi, toys.water(), seed=0, tap=9)


def test_feature_smoothness_reports_ratio(phi):
    out = em.feature_smoothness(em.embed_molecule(phi, toys.methanol(), seed=0))
    assert out["neighbour"] >= 0 and out["random"] > 0 and np.isfinite(out["ratio"])


def test_embedding_roundtrip(phi, tmp_path):
    e = em.embed_molecule(phi, toys.water(), seed=2)
    em.save_embedding(tmp_path / "e.bin", e)
    back = em.load_embedding(tmp_path / "e.bin")
    np.testing.assert_array_equal(back.per_point, e.per_point)
    assert back.tap == e.tap and back.seed == 2
    em.write_global_csv(tmp_path / "g.csv", ["water"], [e], "h")
    lines = (tmp_path / "g.csv").read_text().splitlines()
    assert lines[0] == "# config_hash: h" and lines[1].startswith("name,f0") and lines[2].startswith("water,")


def test_head_config_validation():
    with pytest.raises(ValueError):
        em.HeadConfig(task="ranking")
    with pytest.raises(ValueError):
        em.HeadConfig(steps=0)


def test_constant_labels_give_constant_predictor(rng):
    X = rng.normal(size=(12, 5))
    head = em.train_property_head(X, np.full(12, 3.5), em.HeadConfig(hidden=16, steps=2000))
    np.testing.assert_allclose(em.predict_property(head, X), 3.5, atol=1e-2)
    assert head.history[-1] < 1e-5 < head.history[0]


def test_zero_head_outputs():
    d = 4
    zeros = dict(W1=np.zeros((d, 8)), b1=np.zeros(8), W2=np.zeros((8, 1)), b2=np.zeros(1), x_mean=np.zeros(d), x_scale=np.ones(d))
    x = np.arange(4.0)
    assert em.predict_property(em.PropertyHead(**zeros), x) == 0.0
    assert em.predict_property(em.PropertyHead(**zeros, task="classification"), x) == 0.5
    with pytest.raises(ValueError):
        em.predict_property(em.PropertyHead(**zeros), np.zeros(3))


def test_head_fits_and_is_deterministic(rng):
    X = rng.normal(size=(40, 6))
    y = X[:, 0] * 2 - X[:, 1] ** 2
    cfg = em.HeadConfig(hidden=64, steps=500, seed=1)
    a = em.train_property_head(X, y, cfg)
    b = em.train_property_head(X, y, cfg)
    np.testing.assert_array_equal(a.W1, b.W1)
    pred = em.predict_property(a, X)
    assert em.r_squared(y, pred) > 0.95
    assert all(np.isfinite(pred))
    # the same forward pass as used in training
    np.testing.assert_array_equal(pred, a.raw(X) * a.y_scale + a.y_mean)


def test_classification_head(rng):
    X = rng.normal(size=(60, 3))
    y = (X[:, 0] > 0).astype(float)
    head = em.train_property_head(X, y, em.HeadConfig(hidden=16, steps=300, task="classification"))
    p = em.predict_property(head, X)
    assert np.all((p > 0) & (p < 1))
    assert ((p > 0.5) == (y == 1)).mean() > 0.9
    with pytest.raises(ValueError):
        em.train_property_head(X, y * 2, em.HeadConfig(task="classification"))


def test_head_input_errors():
    with pytest.raises(ValueError):
        em.train_property_head(np.zeros((1, 3)), [1.0])
    with pytest.raises(ValueError):
        em.train_property_head(np.zeros((3, 3)), [1.0, np.nan, 2.0])


def test_r_squared():
    assert em.r_squared([1, 2, 3], [1, 2, 3]) == 1.0
    assert em.r_squared([1, 2, 3], [2, 2, 2]) == 0.0
