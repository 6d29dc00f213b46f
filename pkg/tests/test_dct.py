import numpy as np
import pytest
from numpy.testing import assert_allclose

from actok.dct import DctAxis, dct_forward, dct_inverse, dct_matrix


def dct_direct(vec):
    """Direct O(L^2) cosine-sum evaluation, independent of the library path."""
    L = len(vec)
    out = np.zeros(L)
    for k in range(L):
        scale = np.sqrt(1.0 / L) if k == 0 else np.sqrt(2.0 / L)
        out[k] = scale * sum(
            vec[n] * np.cos(np.pi * (2 * n + 1) * k / (2 * L)) for n in range(L)
        )
    return out


def test_constant_row_concentrates_in_dc():
    out = dct_forward(np.array([[1.0, 1.0, 1.0, 1.0]]), DctAxis.PER_TIMESTEP)
    assert_allclose(out, [[2.0, 0.0, 0.0, 0.0]], atol=1e-12)


def test_inverse_of_dc_row():
    out = dct_inverse(np.array([[2.0, 0.0, 0.0, 0.0]]), DctAxis.PER_TIMESTEP)
    assert_allclose(out, [[1.0, 1.0, 1.0, 1.0]], atol=1e-12)


def test_unit_impulse_matches_direct_summation():
    row = np.zeros((1, 4))
    row[0, 0] = 1.0
    assert_allclose(dct_forward(row, DctAxis.PER_TIMESTEP)[0], dct_direct(row[0]),
                    atol=1e-12)


@pytest.mark.parametrize("axis", [DctAxis.PER_TIMESTEP, DctAxis.PER_DIMENSION])
def test_random_matrix_matches_direct_summation(axis):
    rng = np.random.default_rng(3)
    m = rng.normal(size=(5, 7))
    out = dct_forward(m, axis)
    if axis is DctAxis.PER_TIMESTEP:
        expected = np.stack([dct_direct(row) for row in m])
    else:
        expected = np.stack([dct_direct(col) for col in m.T], axis=1)
    assert_allclose(out, expected, atol=1e-10)


@pytest.mark.parametrize("axis", [DctAxis.PER_TIMESTEP, DctAxis.PER_DIMENSION])
def test_round_trip(axis):
    rng = np.random.default_rng(4)
    m = rng.uniform(-1, 1, size=(5, 7))
    assert_allclose(dct_inverse(dct_forward(m, axis), axis), m, atol=1e-10)


def test_energy_preservation():
    rng = np.random.default_rng(5)
    m = rng.normal(size=(5, 7))
    out = dct_forward(m, DctAxis.PER_TIMESTEP)
    assert abs(np.sum(out ** 2) - np.sum(m ** 2)) <= 1e-12 * np.sum(m ** 2)


def test_linearity():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(3, 6))
    y = rng.normal(size=(3, 6))
    lhs = dct_forward(2.5 * x - 1.25 * y)
    rhs = 2.5 * dct_forward(x) - 1.25 * dct_forward(y)
    assert_allclose(lhs, rhs, atol=1e-12)


def test_axis_independence():
    # one nonzero row transformed per timestep leaves other rows zero
    m = np.zeros((4, 5))
    m[2] = [1.0, -2.0, 0.5, 3.0, -0.25]
    out = dct_forward(m, DctAxis.PER_TIMESTEP)
    assert np.all(out[[0, 1, 3]] == 0.0)
    assert_allclose(out[2], dct_direct(m[2]), atol=1e-12)


def test_matrix_is_orthogonal():
    for L in (1, 2, 5, 7, 16):
        c = dct_matrix(L)
        assert_allclose(c @ c.T, np.eye(L), atol=1e-12)


def test_scipy_agreement():
    scipy_fft = pytest.importorskip("scipy.fft")
    rng = np.random.default_rng(7)
    m = rng.normal(size=(5, 7))
    assert_allclose(dct_forward(m, DctAxis.PER_TIMESTEP),
                    scipy_fft.dct(m, axis=1, norm="ortho"), atol=1e-12)
    assert_allclose(dct_forward(m, DctAxis.PER_DIMENSION),
                    scipy_fft.dct(m, axis=0, norm="ortho"), atol=1e-12)


def test_rejects_non_matrix_input():
    with pytest.raises(ValueError):
        dct_forward(np.zeros(4))
    with pytest.raises(ValueError):
        dct_matrix(0)
