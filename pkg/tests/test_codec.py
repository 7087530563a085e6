import numpy as np
import pytest
from hypothesis import given, strategies as st

from nsop.basis import build_basis, periodic_grid
from nsop.codec import (DecodedField, decode_H, decode_Y, encode_field, encode_H, encode_Y,
                        interpolate_snapshots, projection_error, required_resolution, y_norm_squared)
from nsop.galerkin import SolverConfig, assemble_structure_tensor, integrate

vectors = st.lists(st.floats(-5, 5), min_size=12, max_size=12).map(np.array)


@pytest.fixture(scope="module")
def basis():
    return build_basis(2, 12)


def test_encode_unit_and_zero():
    e1 = np.zeros(10)
    e1[0] = 1.0
    np.testing.assert_array_equal(encode_H(e1, 4).values, [1, 0, 0, 0])
    np.testing.assert_array_equal(encode_H(np.zeros(10), 4).values, np.zeros(4))
    with pytest.raises(ValueError):
        encode_H(np.zeros(3), 4)


@given(vectors, vectors, st.integers(1, 12))
def test_encoder_and_decoder_are_one_lipschitz(x, y, d_H):
    diff = np.linalg.norm(x - y)
    assert np.linalg.norm(encode_H(x, d_H).values - encode_H(y, d_H).values) <= diff * (1 + 1e-12)
    basis = build_basis(2, 12)
    da, db = decode_H(x[:d_H], basis), decode_H(y[:d_H], basis)
    assert np.linalg.norm(da.coeffs - db.coeffs) == pytest.approx(np.linalg.norm(x[:d_H] - y[:d_H]), rel=1e-12, abs=1e-15)


@given(vectors, st.integers(1, 12))
def test_encode_decode_identities(x, d_H):
    basis = build_basis(2, 12)
    a = x[:d_H]
    assert np.array_equal(encode_H(decode_H(a, basis).coeffs, d_H).values, a)
    proj = decode_H(encode_H(x, d_H), basis).coeffs
    assert np.array_equal(proj[:d_H], x[:d_H]) and np.all(proj[d_H:] == 0)
    assert np.linalg.norm(proj) <= np.linalg.norm(x) + 1e-12
    # Parseval
    assert np.sum(x**2) == pytest.approx(np.sum(encode_H(x, d_H).values ** 2) + projection_error(x, d_H))


def test_decoded_field_evaluation(basis):
    field = decode_H(np.eye(12)[0], basis)
    assert isinstance(field, DecodedField)
    x = np.random.default_rng(0).uniform(-np.pi, np.pi, (7, 2))
    np.testing.assert_allclose(field(x), basis.evaluate(x)[0])
    with pytest.raises(ValueError):
        decode_H(np.zeros(13), basis)


def test_encode_field_recovers_modes(basis):
    n = required_resolution(basis)
    grid = periodic_grid(2, n)
    w = basis.evaluate(grid)
    np.testing.assert_allclose(encode_field(w[2], basis, 12).values, np.eye(12)[2], atol=1e-10)
    code = encode_field(0.7 * w[0] - 1.3 * w[1], basis, 5).values
    np.testing.assert_allclose(code, [0.7, -1.3, 0, 0, 0], atol=1e-10)


def test_encode_field_round_trip(basis):
    a = np.random.default_rng(1).normal(size=12)
    n = required_resolution(basis)
    samples = decode_H(a, basis)(periodic_grid(2, n))
    np.testing.assert_allclose(encode_field(samples, basis, 12).values, a, atol=1e-10)


def test_encode_field_rejects_coarse_grid(basis):
    n = required_resolution(basis)
    with pytest.raises(ValueError, match=f"need at least {n}"):
        encode_field(np.zeros((n - 1, n - 1, 2)), basis, 12)


def test_encode_Y_contracts(basis):
    tensor = assemble_structure_tensor(basis)
    a = np.zeros(12)
    a[0] = 1.5
    traj = integrate(a, SolverConfig(0.2, 1e-3, 1.0, 100), tensor, basis)
    code = encode_Y(traj, traj.times[5], 4)
    np.testing.assert_array_equal(code.values, traj.snapshots[5, :4])
    dense = integrate(a, SolverConfig(0.2, 1e-3, 1.0, 1), tensor, basis)
    mid = encode_Y(dense, 0.5505, 12)
    assert mid.values[0] == pytest.approx(1.5 * np.exp(-0.2 * 0.5505), rel=1e-7)
    assert mid.eval_time == 0.5505
    assert projection_error(encode_Y(traj, 1.0, 12).values, 12) == 0
    for bad in (0.0, 1.5):
        with pytest.raises(ValueError):
            encode_Y(traj, bad, 4)
    with pytest.raises(ValueError):
        encode_Y(traj, 0.5, 13)
    assert np.array_equal(decode_Y(code, basis).coeffs[:4], code.values)


def test_interpolate_snapshots_linear():
    times = np.array([0.0, 1.0, 2.0])
    snaps = np.array([[0.0], [2.0], [6.0]])
    assert interpolate_snapshots(times, snaps, 1.5)[0] == 4.0
    assert interpolate_snapshots(times, snaps, 2.0)[0] == 6.0


def test_projection_error_examples():
    x = np.zeros(8)
    x[:3] = [1.0, 2.0, 3.0]
    assert projection_error(x, 3) == 0
    assert projection_error(np.eye(8)[4], 4) == 1
    rng = np.random.default_rng(2)
    y = rng.normal(size=8)
    errs = [projection_error(y, d) for d in range(9)]
    assert all(a >= b for a, b in zip(errs, errs[1:]))


def test_y_norm_of_single_mode():
    lam = np.array([2.0])
    times = np.linspace(0, 1, 2001)
    snaps = np.exp(-times)[:, None]
    assert y_norm_squared(times, snaps, lam) == pytest.approx(2 * (1 - np.exp(-2)) / 2, rel=1e-6)
