import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import trilinear_corners
from slicesr.sampler import corner_indices_and_weights, sample_query, trilinear_sample


def _t(a):
    return torch.from_numpy(np.asarray(a, dtype=np.float64))


def test_exact_on_grid_point(rng):
    grid = rng.random((3, 4, 5))
    assert trilinear_sample(_t(grid), _t([[1, 2, 3]])).item() == grid[1, 2, 3]


def test_slice_midpoint_is_mean(rng):
    grid = rng.random((3, 3, 3))
    v = trilinear_sample(_t(grid), _t([[1, 2, 0.5]])).item()
    assert v == pytest.approx((grid[1, 2, 0] + grid[1, 2, 1]) / 2, abs=1e-15)


def test_random_queries_match_corner_oracle(rng):
    grid = rng.normal(size=(3, 3, 3))
    q = rng.uniform(0, 2, size=(200, 3))
    got = trilinear_sample(_t(grid), _t(q)).numpy()
    expected = np.array([trilinear_corners(grid, p) for p in q])
    assert np.abs(got - expected).max() < 1e-12


def test_vector_field(rng):
    grid = rng.normal(size=(3, 4, 3, 5))
    q = rng.uniform(0, 2, size=(20, 3))
    got = trilinear_sample(_t(grid), _t(q)).numpy()
    expected = np.array([trilinear_corners(grid, p) for p in q])
    assert got.shape == (20, 5)
    assert np.abs(got - expected).max() < 1e-12


def test_upper_boundary_is_defined(rng):
    grid = rng.random((2, 2, 4))
    assert trilinear_sample(_t(grid), _t([[1, 1, 3]])).item() == grid[1, 1, 3]


@pytest.mark.parametrize("q", [[0, 0, -0.1], [0, 0, 3.01], [2.5, 0, 0]])
def test_out_of_bounds(q):
    with pytest.raises(ValueError, match="outside"):
        trilinear_sample(torch.zeros(3, 3, 4, dtype=torch.float64), _t([q]))


def test_every_node_exact_bitwise(rng):
    grid = rng.normal(size=(4, 3, 5))
    nodes = np.stack(np.meshgrid(*(np.arange(n) for n in grid.shape), indexing="ij"), -1).reshape(-1, 3)
    got = trilinear_sample(_t(grid), _t(nodes)).numpy()
    assert got.tobytes() == grid.ravel().tobytes()


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=3, max_size=3), st.integers(0, 2**31 - 1))
def test_convex_hull_bound(frac, seed):
    grid = np.random.default_rng(seed).normal(size=(2, 2, 2))
    v = trilinear_sample(_t(grid), _t([frac])).item()
    assert grid.min() - 1e-12 <= v <= grid.max() + 1e-12


def test_linearity(rng):
    f, g = rng.normal(size=(2, 3, 3, 4))
    q = _t(rng.uniform(0, 2, size=(30, 3)))
    a, b = 1.7, -0.4
    lhs = trilinear_sample(_t(a * f + b * g), q)
    rhs = a * trilinear_sample(_t(f), q) + b * trilinear_sample(_t(g), q)
    assert (lhs - rhs).abs().max() < 1e-10


def test_gradient_wrt_corners_is_weight_vector(rng):
    grid = _t(rng.normal(size=(3, 3, 3))).requires_grad_(True)
    q = _t([[0.3, 1.6, 0.8]])
    trilinear_sample(grid, q).sum().backward()
    idx, wts = corner_indices_and_weights(q, (3, 3, 3))
    expected = torch.zeros(27, dtype=torch.float64)
    expected[idx[0]] = wts[0]
    assert torch.allclose(grid.grad.reshape(-1), expected, atol=1e-15)
    # and against central differences
    h = 1e-6
    base = grid.detach().numpy()
    for flat in idx[0].tolist():
        plus, minus = base.copy(), base.copy()
        plus.flat[flat] += h
        minus.flat[flat] -= h
        fd = (trilinear_sample(_t(plus), q) - trilinear_sample(_t(minus), q)).item() / (2 * h)
        assert fd == pytest.approx(grid.grad.reshape(-1)[flat].item(), abs=1e-8)


def test_sample_query_on_grid_and_constant(rng):
    feats = _t(rng.normal(size=(3, 3, 4, 2)))
    lr = rng.random((3, 3, 4))
    s = sample_query(feats, _t(lr), _t([[1, 2, 3]]))
    assert s.s_q.item() == lr[1, 2, 3]
    const = sample_query(feats, torch.full((3, 3, 4), 0.25, dtype=torch.float64), _t(rng.uniform(0, 2, (10, 3))))
    assert torch.allclose(const.s_q, torch.tensor(0.25, dtype=torch.float64), atol=1e-15, rtol=0)


def test_sample_query_full_grid_reconstructs(rng):
    lr = rng.random((3, 4, 5))
    nodes = np.stack(np.meshgrid(*(np.arange(n) for n in lr.shape), indexing="ij"), -1).reshape(-1, 3)
    s = sample_query(_t(rng.normal(size=(3, 4, 5, 2))), _t(lr), _t(nodes))
    np.testing.assert_array_equal(s.s_q.numpy().reshape(lr.shape), lr)


def test_sample_query_dim_mismatch():
    with pytest.raises(ValueError, match="do not match"):
        sample_query(torch.zeros(3, 3, 3, 2), torch.zeros(3, 3, 4), _t([[0, 0, 0]]))
