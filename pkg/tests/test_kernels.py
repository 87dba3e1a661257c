import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from molfields import kernels

pytestmark = pytest.mark.skipif(not kernels.HAVE_NUMBA, reason="numba not installed")

pts = arrays(np.float64, st.tuples(st.integers(1, 40), st.just(3)), elements=st.floats(-5, 5, allow_nan=False))


@given(pts, pts)
def test_nearest_paths_agree(points, atoms):
    i_np, d_np = kernels.nearest_np(points, atoms)
    i_nb, d_nb = kernels.nearest_nb(points, atoms)
    np.testing.assert_array_equal(i_np, i_nb)
    np.testing.assert_allclose(d_np, d_nb, rtol=0, atol=1e-12)


@given(pts)
def test_pairwise_paths_agree(points):
    np.testing.assert_allclose(kernels.pairwise_np(points), kernels.pairwise_nb(points), rtol=0, atol=1e-12)


@given(pts, st.floats(0.05, 3.0))
def test_greedy_cluster_paths_agree(points, radius):
    np.testing.assert_array_equal(kernels.greedy_cluster_np(points, radius), kernels.greedy_cluster_nb(points, radius))


@given(st.integers(1, 50), st.integers(1, 6), st.integers(1, 8), st.integers(0, 2**31))
def test_segment_mean_paths_agree(n, d, segments, seed):
    rng = np.random.default_rng(seed)
    values = rng.normal(size=(n, d))
    index = rng.integers(0, segments, n)
    np.testing.assert_allclose(kernels.segment_mean_np(values, index, segments), kernels.segment_mean_nb(values, index, segments), rtol=0, atol=1e-12)


def test_nearest_tie_breaks_to_lowest_index():
    atoms = np.array([[0.0, 0, 0], [4.0, 0, 0]])
    for f in (kernels.nearest_np, kernels.nearest_nb):
        idx, dist = f(np.array([[2.0, 0, 0]]), atoms)
        assert idx[0] == 0 and dist[0] == 2.0


def test_greedy_cluster_examples():
    rng = np.random.default_rng(0)
    tight = 0.02 * rng.normal(size=(10, 3))
    far = tight + [1.0, 0, 0]
    labels = kernels.greedy_cluster(np.vstack([tight, far[:4]]), 0.3)
    assert set(labels[:10]) == {0} and set(labels[10:]) == {1}


def test_segment_mean_empty_segment_is_zero():
    out = kernels.segment_mean(np.ones((3, 2)), np.array([0, 0, 2]), 3)
    np.testing.assert_array_equal(out, [[1, 1], [0, 0], [1, 1]])


def test_env_flag_disables_numba():
    code = "from molfields import kernels; print(kernels.USE_NUMBA)"
    out = subprocess.run([sys.executable, "-c", code], env={**os.environ, "MOLFIELDS_NUMBA": "0"}, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "False"
