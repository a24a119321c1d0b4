"""Equivalence of the compiled and numpy kernel backends.

Results may differ in the last ulps (different summation order), so float
comparisons run at 1e-10; integer outputs must match exactly on
well-separated inputs.
"""

import numpy as np
import pytest

from habclust import kernels
from habclust.kernels import _pykern, fae_param_count, mlp_param_count

HAVE_EXT = kernels.HAVE_EXTENSION
_ckern = kernels._ckern if HAVE_EXT else None

pytestmark = pytest.mark.skipif(not HAVE_EXT, reason="compiled backend not built")


def random_fae_instance(seed, with_global, n=96, m=3, h=10, lat=3):
    rng = np.random.default_rng(seed)
    theta = rng.normal(0, 0.4, fae_param_count(m, h, lat, with_global))
    x = np.ascontiguousarray(rng.normal(0, 1, (n, m)))
    return theta, x, m, h, lat


@pytest.mark.parametrize("with_global", [True, False])
@pytest.mark.parametrize("seed", range(5))
def test_fae_value_grad_parity(seed, with_global):
    theta, x, m, h, lat = random_fae_instance(seed, with_global)
    kinds = (0, 1) if with_global else (0,)
    for kind in kinds:
        l_py, g_py = _pykern.fae_value_grad(theta, x, m, h, lat, with_global, kind)
        l_c, g_c = _ckern.fae_value_grad(theta, x, m, h, lat, with_global, kind)
        assert abs(l_py - l_c) < 1e-10
        assert np.abs(g_py - g_c).max() < 1e-10


@pytest.mark.parametrize("seed", range(3))
def test_fae_encode_and_reconstruct_parity(seed):
    theta, x, m, h, lat = random_fae_instance(seed, True)
    assert np.abs(_pykern.fae_encode(theta, x, m, h, lat, True)
                  - _ckern.fae_encode(theta, x, m, h, lat, True)).max() < 1e-12
    for a, b in zip(
        _pykern.fae_reconstruct(theta, x, m, h, lat, True),
        _ckern.fae_reconstruct(theta, x, m, h, lat, True),
    ):
        assert np.abs(a - b).max() < 1e-12


@pytest.mark.parametrize("seed", range(3))
def test_mlp_parity(seed):
    dims = [3, 10, 3, 10, 3]
    rng = np.random.default_rng(seed)
    theta = rng.normal(0, 0.4, mlp_param_count(dims))
    x = np.ascontiguousarray(rng.normal(0, 1, (80, 3)))
    l_py, g_py = _pykern.mlp_value_grad(theta, x, dims)
    l_c, g_c = _ckern.mlp_value_grad(theta, x, dims)
    assert abs(l_py - l_c) < 1e-10
    assert np.abs(g_py - g_c).max() < 1e-10
    assert np.abs(_pykern.mlp_encode(theta, x, dims, 2)
                  - _ckern.mlp_encode(theta, x, dims, 2)).max() < 1e-12


@pytest.mark.parametrize("seed", range(4))
def test_lloyd_parity_on_separated_data(seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(0, 1, (600, 3))
    pts[::3] += 12.0
    pts[1::3] -= 12.0
    pts = np.ascontiguousarray(pts)
    init = np.ascontiguousarray(pts[rng.choice(600, 3, replace=False)])
    c_py, l_py, i_py, n_py = _pykern.lloyd(pts, init, 100)
    c_c, l_c, i_c, n_c = _ckern.lloyd(pts, init, 100)
    assert np.abs(c_py - c_c).max() < 1e-10
    assert np.array_equal(l_py, l_c)
    assert abs(i_py - i_c) < 1e-8 * max(1.0, i_py)
    assert n_py == n_c


def test_assign_parity_with_ties():
    pts = np.ascontiguousarray(np.array([[1.0], [2.0], [3.0]]))
    cents = np.ascontiguousarray(np.array([[0.0], [2.0], [4.0]]))
    # point 1.0 ties centroids 0/1, point 3.0 ties 1/2: lowest index wins
    for backend in (_pykern, _ckern):
        assert backend.assign_nearest(pts, cents).tolist() == [0, 1, 1]


def test_backend_switch_round_trip():
    prev = kernels.backend_name()
    other = "python" if prev == "c" else "c"
    assert kernels.use_backend(other) == prev
    assert kernels.backend_name() == other
    kernels.use_backend(prev)
    assert kernels.backend_name() == prev
    with pytest.raises(ValueError):
        kernels.use_backend("fortran")


def test_empty_cluster_repair_matches():
    # centroid 2 starts far away from all points and must be repaired
    pts = np.ascontiguousarray(
        np.vstack([np.zeros((5, 2)), np.ones((5, 2)) * 4.0, [[2.0, 2.0]]])
    )
    init = np.ascontiguousarray(np.array([[0.0, 0.0], [4.0, 4.0], [100.0, 100.0]]))
    c_py, l_py, i_py, _ = _pykern.lloyd(pts, init, 50)
    c_c, l_c, i_c, _ = _ckern.lloyd(pts, init, 50)
    assert np.array_equal(l_py, l_c)
    assert np.abs(c_py - c_c).max() < 1e-12
    assert len(np.unique(l_py)) == 3
