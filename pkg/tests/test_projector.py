import numpy as np
import pytest

from firmrel.projector import Projector, init_projector


def test_output_count_matches_input_count():
    p = init_projector(4, 6, seed=0)
    h = np.random.default_rng(0).standard_normal((5, 4))
    out = p.project(h)
    assert out.shape == (5, 6)


def test_identity_projection():
    w = np.eye(4)
    p = Projector(w, np.zeros(4))
    h = np.arange(8.0).reshape(2, 4)
    assert np.array_equal(p.project(h), h)


def test_zero_input_gives_bias():
    p = init_projector(3, 5, seed=1)
    p.b[:] = np.arange(5.0, dtype=p.b.dtype)
    out = p.project(np.zeros((1, 3)))
    assert np.allclose(out[0], p.b)


def test_init_deterministic_and_bounded():
    a = init_projector(64, 96, seed=3)
    b = init_projector(64, 96, seed=3)
    assert np.array_equal(a.w, b.w)
    assert np.array_equal(a.b, b.b)
    assert np.all(a.b == 0)
    bound = 1.0 / np.sqrt(64)
    assert np.all(np.abs(a.w) <= bound)
    assert np.abs(a.w).max() > 0.9 * bound  # actually fills the range
    c = init_projector(64, 96, seed=4)
    assert not np.array_equal(a.w, c.w)


def test_dimension_validation():
    p = init_projector(4, 6, seed=0)
    with pytest.raises(ValueError):
        p.project(np.zeros((2, 5)))
    with pytest.raises(ValueError):
        Projector(np.zeros((3, 2)), np.zeros(4))
    with pytest.raises(ValueError):
        Projector(np.full((3, 2), np.nan), np.zeros(3))
    with pytest.raises(ValueError):
        init_projector(0, 4, seed=0)
