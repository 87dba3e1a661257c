import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from molfields import fieldgen as fg
from molfields import toys
from molfields.molio import AtomTypeVocab, Conformer


def brute_nearest(q, atoms):
    d = np.linalg.norm(atoms - q, axis=1)
    i = int(np.argmin(d))  # argmin returns the first minimum: lowest index
    return atoms[i], d[i]


def random_conformer(rng, n, symbols=("C", "H", "O")):
    return Conformer(tuple(rng.choice(symbols, n)), rng.normal(size=(n, 3)) * 2)


def test_nearest_atom_examples():
    m = Conformer(("C",), [[1, 2, 3]])
    pos, d = fg.nearest_atom([1, 2, 3], m, "C")
    assert np.array_equal(pos, [1, 2, 3]) and d == 0
    m2 = Conformer(("C", "C"), [[0, 0, 0], [4, 0, 0]])
    pos, d = fg.nearest_atom([1, 0, 0], m2, "C")
    assert np.array_equal(pos, [0, 0, 0]) and d == 1
    pos, d = fg.nearest_atom([2, 0, 0], m2, "C")
    assert np.array_equal(pos, [0, 0, 0]) and d == 2
    assert fg.nearest_atom([0, 0, 0], m2, "N") is None


def test_filler_examples():
    d, f = fg.filler_values([2, 0, 0], [0, 0, 0], 5)
    np.testing.assert_allclose(d, [3, 0, 0])
    assert f == pytest.approx(3)
    d, f = fg.filler_values([0, 5, 0], [0, 0, 0], 5)
    np.testing.assert_allclose(d, 0, atol=1e-15)
    assert f == pytest.approx(0)
    d, f = fg.filler_values([0, 0, 0], [0, 0, 0], 5)
    np.testing.assert_allclose(d, [5, 0, 0])
    assert f == 5


def test_filler_outside_sphere_points_back():
    d, f = fg.filler_values([7, 0, 0], [0, 0, 0], 5)
    np.testing.assert_allclose(d, [-2, 0, 0])
    assert f == pytest.approx(2)


def test_direction_sample_single_atom():
    grid = fg.GridSpec(1, 1, (0, 0, 0), 5.0)
    Q = fg.QuerySet(np.array([[1.0, 0, 0]]), np.array([0]), grid)
    s = fg.direction_sample(Q, Conformer(("C",), [[0, 0, 0]]), AtomTypeVocab(("C", "N")))
    np.testing.assert_allclose(s.values[0, 0], [-1, 0, 0])
    np.testing.assert_allclose(s.values[0, 1], [4, 0, 0])
    assert s.present.tolist() == [True, False]


def test_distance_3_4_5():
    grid = fg.GridSpec(1, 1, (0, 0, 0), 10.0)
    Q = fg.QuerySet(np.array([[0.0, 3, 4]]), np.array([0]), grid)
    assert fg.distance_sample(Q, Conformer(("C",), [[0, 0, 0]]), AtomTypeVocab(("C",))).values[0, 0] == pytest.approx(5)


@pytest.mark.parametrize("n_atoms", [3, 20, 80, 200])
def test_fields_match_brute_force(rng, n_atoms):
    """Both nearest-atom backends (brute force and k-d tree) agree with an exhaustive scan."""
    m = random_conformer(rng, n_atoms, ("C",))
    vocab = AtomTypeVocab(("C",))
    pts = rng.normal(size=(300, 3)) * 3
    D, f, present = fg.field_samples(pts, m, vocab, (0, 0, 0), 10.0)
    for j, q in enumerate(pts):
        a, d = brute_nearest(q, m.positions)
        np.testing.assert_allclose(D[j, 0], a - q, atol=1e-12)
        assert abs(f[j, 0] - d) <= 1e-12


def test_kdtree_tie_break_matches_brute_force():
    atoms = np.array([[float(i), 0, 0] for i in range(100)])
    pts = np.array([[i + 0.5, 0, 0] for i in range(99)])
    idx, _ = fg._nearest(pts, atoms)
    np.testing.assert_array_equal(idx, np.arange(99))


@given(st.integers(0, 2**31), st.tuples(*[st.floats(-5, 5)] * 3))
def test_translation_equivariance(seed, shift):
    rng = np.random.default_rng(seed)
    m = random_conformer(rng, 6)
    vocab = AtomTypeVocab(("C", "H", "O", "N"))
    pts = rng.normal(size=(20, 3))
    D1, f1, _ = fg.field_samples(pts, m, vocab, (0, 0, 0), 8.0)
    D2, f2, _ = fg.field_samples(pts + shift, m.translated(shift), vocab, shift, 8.0)
    np.testing.assert_allclose(D1, D2, atol=1e-9)
    np.testing.assert_allclose(f1, f2, atol=1e-9)


@given(st.integers(0, 2**31))
def test_direction_norm_equals_distance(seed):
    rng = np.random.default_rng(seed)
    m = random_conformer(rng, 5)
    D, f, _ = fg.field_samples(rng.normal(size=(30, 3)) * 2, m, AtomTypeVocab(), (0, 0, 0), 6.0)
    np.testing.assert_allclose(np.linalg.norm(D, axis=-1), f, atol=1e-9)


@given(st.integers(0, 2**31))
def test_atom_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    m = random_conformer(rng, 7)
    perm = rng.permutation(7)
    mp = Conformer(tuple(m.symbols[i] for i in perm), m.positions[perm])
    pts = rng.normal(size=(25, 3))
    a = fg.field_samples(pts, m, AtomTypeVocab(), (0, 0, 0), 6.0)
    b = fg.field_samples(pts, mp, AtomTypeVocab(), (0, 0, 0), 6.0)
    np.testing.assert_allclose(a[0], b[0], atol=1e-12)


def test_query_points_shape_bounds_and_determinism():
    grid = fg.GridSpec(2, 3, (1.0, -1.0, 0.5), 2.0)
    Q = fg.sample_query_points(grid, 5)
    assert len(Q) == 24 and Q.points.shape == (24, 3)
    for p, c in zip(Q.points, Q.cell_index):
        lo, hi = grid.cell_bounds(c)
        assert np.all(p >= lo) and np.all(p <= hi)
    np.testing.assert_array_equal(Q.points, fg.sample_query_points(grid, 5).points)
    lo, hi = grid.bbox
    assert np.allclose(hi - lo, 4.0)


def test_query_cell_means_approach_centres():
    grid = fg.GridSpec(2, 10_000, (0, 0, 0), 1.0)
    Q = fg.sample_query_points(grid, 0)
    for c in range(grid.n_cells):
        lo, hi = grid.cell_bounds(c)
        mean = Q.points[Q.cell_index == c].mean(0)
        assert np.all(np.abs(mean - (lo + hi) / 2) < 0.05 * grid.cell_width)


def test_bins_sizes_at_n100(rng):
    d = rng.permutation(np.arange(1, 101, dtype=float))
    bins = fg.assign_distance_bins(d[:, None])
    assert np.bincount(bins, minlength=5).tolist() == [2, 31, 33, 32, 2]


def test_bins_all_equal_go_to_first():
    assert set(fg.assign_distance_bins(np.ones((10, 2)))) == {0}


@given(st.lists(st.floats(0, 10), min_size=5, max_size=60))
def test_bins_monotone(values):
    v = np.array(values)
    bins = fg.assign_distance_bins(v[:, None])
    order = np.argsort(v, kind="stable")
    assert np.all(np.diff(bins[order]) >= 0)


def test_bins_need_five_points():
    with pytest.raises(ValueError):
        fg.assign_distance_bins(np.ones((4, 1)))


def test_field_dump_roundtrip(tmp_path):
    m = toys.methanol()
    vocab = AtomTypeVocab.from_conformers([m])
    Q = fg.sample_query_points(fg.GridSpec.around(m), 3)
    D, f = fg.direction_sample(Q, m, vocab), fg.distance_sample(Q, m, vocab)
    fg.save_field(tmp_path / "f.bin", Q, D, f, vocab)
    Q2, D2, f2, v2, meta = fg.load_field(tmp_path / "f.bin")
    np.testing.assert_array_equal(Q.points, Q2.points)
    np.testing.assert_array_equal(D.values, D2.values)
    np.testing.assert_array_equal(f.values, f2.values)
    assert v2 == vocab and meta["N"] == len(Q) and meta["seed"] == 3


def test_analytic_field_matches_samples():
    m = toys.methane()
    vocab = AtomTypeVocab(("C", "H", "O"))
    g = fg.GridSpec.around(m)
    Q = fg.sample_query_points(g, 0)
    f, F = fg.AnalyticField(m, vocab, g.center, g.radius).evaluate(Q.points)
    np.testing.assert_array_equal(F, fg.direction_sample(Q, m, vocab).values)
    f1, F1 = fg.AnalyticField(m, vocab, g.center, g.radius).evaluate(Q.points, 1)
    np.testing.assert_array_equal(f1, f[:, 1])


def test_out_of_vocabulary_element_rejected():
    with pytest.raises(ValueError, match="not in the vocabulary"):
        fg.field_samples(np.zeros((2, 3)), toys.water(), AtomTypeVocab(("C", "H")), (0, 0, 0), 3.0)
