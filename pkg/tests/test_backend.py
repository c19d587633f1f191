import numpy as np
import pytest

from conftest import random_unit
from dckit import _fallback, backend

core = pytest.importorskip("dckit._core")


def test_selected_backend_is_compiled_when_built():
    assert backend.BACKEND == "cython"
    assert backend.greedy_unique is core.greedy_unique


@pytest.mark.parametrize("tau", [-0.2, 0.0, 0.3, 0.8])
@pytest.mark.parametrize("dim", [2, 16, 64])
def test_greedy_unique_agrees(tau, dim):
    rng = np.random.default_rng(dim)
    x = random_unit(rng, 300, dim)
    np.testing.assert_array_equal(core.greedy_unique(x, tau), _fallback.greedy_unique(x, tau))


def test_knn_and_coverage_agree():
    rng = np.random.default_rng(3)
    real = rng.normal(size=(80, 5))
    gen = rng.normal(scale=0.9, size=(60, 5))
    for k in (1, 3, 7):
        r_core = core.knn_sq_radii(gen, k)
        r_py = _fallback.knn_sq_radii(gen, k)
        np.testing.assert_allclose(r_core, r_py, rtol=1e-12)
        np.testing.assert_array_equal(core.covered_mask(real, gen, r_core), _fallback.covered_mask(real, gen, r_py))


def test_duplicate_points_have_zero_radius():
    gen = np.zeros((4, 3))
    assert core.knn_sq_radii(gen, 3).tolist() == [0.0] * 4
    assert _fallback.knn_sq_radii(gen, 3).tolist() == [0.0] * 4


def test_outputs_interchangeable():
    rng = np.random.default_rng(4)
    gen, real = rng.normal(size=(2, 30, 4))
    for make_radii in (core.knn_sq_radii, _fallback.knn_sq_radii):
        radii = make_radii(gen, 2)
        np.testing.assert_array_equal(core.covered_mask(real, gen, radii), _fallback.covered_mask(real, gen, radii))


@pytest.mark.parametrize("tau", [0.3, 0.0])
def test_zero_width_and_empty(tau):
    for shape in [(0, 3), (5, 0)]:
        x = np.zeros(shape)
        np.testing.assert_array_equal(core.greedy_unique(x, tau), _fallback.greedy_unique(x, tau))


@pytest.mark.parametrize("dim", [1, 3, 5, 7, 130])
def test_greedy_unique_agrees_odd_dims(dim):
    rng = np.random.default_rng(dim + 100)
    x = random_unit(rng, 400, dim)
    np.testing.assert_array_equal(core.greedy_unique(x, 0.3), _fallback.greedy_unique(x, 0.3))
