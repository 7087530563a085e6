import itertools

import numpy as np
import pytest
import sympy
from hypothesis import given, settings, strategies as st

from nsop.basis import (BasisMode, Trig, WaveVector, amplitude, build_basis, canonicalize,
                        evaluate_mode, periodic_grid, polarizations)
from oracles import gram_matrix


def shell_counts(d, max_n2):
    """Number of canonical lattice vectors with ``|k|^2 = n2``, by brute enumeration."""
    counts = {}
    r = int(np.ceil(np.sqrt(max_n2)))
    for k in itertools.product(range(-r, r + 1), repeat=d):
        n2 = sum(c * c for c in k)
        if 0 < n2 <= max_n2:
            counts[n2] = counts.get(n2, 0) + 1
    return {n2: c // 2 for n2, c in counts.items()}


@pytest.mark.parametrize("raw, expected", [((-1, 0), (1, 0)), ((0, -3, 2), (0, 3, -2)), ((2, 1), (2, 1))])
def test_canonicalize_examples(raw, expected):
    assert canonicalize(raw).components == expected


def test_canonicalize_rejects_zero():
    with pytest.raises(ValueError, match="zero"):
        canonicalize((0, 0, 0))


def test_wave_vector_rejects_noncanonical():
    with pytest.raises(ValueError):
        WaveVector((-1, 2))


@given(st.lists(st.integers(-6, 6), min_size=2, max_size=3).filter(any))
def test_canonicalize_is_idempotent_and_sign_invariant(k):
    c = canonicalize(k)
    assert canonicalize(c.components) == c
    assert canonicalize([-v for v in k]) == c
    first = next(v for v in c.components if v)
    assert first > 0


def test_polarization_2d():
    (beta,) = polarizations(WaveVector((1, 0)), 2)
    np.testing.assert_array_equal(beta, [0.0, 1.0])


def test_polarizations_3d_axis_aligned():
    b1, b2 = polarizations(WaveVector((1, 0, 0)), 3)
    assert b1[0] == 0 and b2[0] == 0
    assert abs(b1 @ b2) < 1e-15
    assert abs(np.linalg.norm(b1) - 1) < 1e-15 and abs(np.linalg.norm(b2) - 1) < 1e-15


@given(st.lists(st.integers(-5, 5), min_size=3, max_size=3).filter(any))
def test_polarizations_3d_orthonormal(k):
    wave = canonicalize(k)
    kv = wave.as_array()
    b1, b2 = polarizations(wave, 3)
    for b in (b1, b2):
        assert abs(np.linalg.norm(b) - 1) < 1e-12
        assert abs(b @ kv) < 1e-12
    assert abs(b1 @ b2) < 1e-12


def test_polarizations_diagonal_wave():
    kv = np.array([1.0, 1.0, 1.0])
    b1, b2 = polarizations(WaveVector((1, 1, 1)), 3)
    assert max(abs(b1 @ kv), abs(b2 @ kv), abs(b1 @ b2)) < 1e-12


def test_build_basis_2d_first_shell():
    basis = build_basis(2, 4)
    assert [m.wave.components for m in basis.modes] == [(0, 1), (0, 1), (1, 0), (1, 0)]
    assert [m.trig for m in basis.modes] == [Trig.COS, Trig.SIN] * 2
    assert basis.eigenvalues.tolist() == [1, 1, 1, 1]


def test_first_eigenvalue_is_one():
    assert build_basis(2, 1).eigenvalues[0] == 1
    assert build_basis(3, 1).eigenvalues[0] == 1


def test_build_basis_3d_first_shell():
    basis = build_basis(3, 14)
    # three unit wave vectors, four modes each, then the |k|^2 = 2 shell
    assert basis.eigenvalues.tolist() == [1] * 12 + [2, 2]
    waves = sorted({m.wave.components for m in basis.modes[:12]})
    assert waves == [(0, 0, 1), (0, 1, 0), (1, 0, 0)]


@pytest.mark.parametrize("d, m", [(2, 60), (3, 150)])
def test_shell_sizes_match_enumeration(d, m):
    basis = build_basis(d, m)
    per_wave = 2 if d == 2 else 4
    counts = shell_counts(d, int(basis.eigenvalues[-1]))
    lam = basis.eigenvalues.astype(int)
    for n2 in range(1, lam[-1]):
        assert np.sum(lam == n2) == per_wave * counts.get(n2, 0)


@pytest.mark.parametrize("d, m", [(2, 40), (3, 60)])
def test_modes_per_wave_and_ordering(d, m):
    basis = build_basis(d, m)
    assert np.all(np.diff(basis.eigenvalues) >= 0)
    keys = [(md.eigenvalue, md.wave.components, int(md.trig), md.pol_index) for md in basis.modes]
    assert keys == sorted(keys)
    assert [md.ordinal for md in basis.modes] == list(range(1, m + 1))
    for md in basis.modes:
        assert abs(md.polarization @ md.wave.as_array()) < 1e-12
        assert abs(np.linalg.norm(md.polarization) - 1) < 1e-12
        assert md.eigenvalue == sum(c * c for c in md.wave.components)


def test_build_is_bit_identical():
    a, b = build_basis(3, 40), build_basis(3, 40)
    assert a.manifest_lines() == b.manifest_lines()
    assert a.basis_id == b.basis_id


def test_amplitude_value():
    assert amplitude(2) == pytest.approx(np.sqrt(2) / (2 * np.pi))
    assert amplitude(3) == pytest.approx(np.sqrt(2 / (2 * np.pi) ** 3))


def test_evaluate_mode_examples():
    basis = build_basis(2, 4)
    cos_mode = next(md for md in basis.modes if md.wave.components == (1, 0) and md.trig is Trig.COS)
    np.testing.assert_allclose(evaluate_mode(cos_mode, np.zeros(2)), amplitude(2) * cos_mode.polarization)
    np.testing.assert_allclose(evaluate_mode(cos_mode, np.array([np.pi / 2, 0])), 0.0, atol=1e-16)
    for md in build_basis(3, 20).modes:
        if md.trig is Trig.SIN:
            assert np.all(evaluate_mode(md, np.zeros(3)) == 0)


def test_evaluate_mode_is_periodic():
    md = build_basis(3, 30).modes[-1]
    x = np.random.default_rng(0).uniform(-np.pi, np.pi, (50, 3))
    np.testing.assert_allclose(evaluate_mode(md, x + 2 * np.pi), evaluate_mode(md, x), atol=1e-13)


@pytest.mark.parametrize("d, m", [(2, 20), (2, 64), (3, 16), (3, 48)])
def test_orthonormality_by_trapezoid(d, m):
    basis = build_basis(d, m)
    gram = gram_matrix(basis, 2 * basis.max_wavenumber + 1)
    assert np.abs(gram - np.eye(m)).max() < 1e-10


@pytest.mark.parametrize("d", [2, 3])
def test_eigenfunction_and_divergence_symbolic(d):
    """-Laplacian w = lambda w and div w = 0 checked with sympy at random points."""
    xs = sympy.symbols("x0:%d" % d)
    basis = build_basis(d, 24)
    rng = np.random.default_rng(5)
    points = rng.uniform(-np.pi, np.pi, (100, d))
    for md in basis.modes[::3]:
        phase = sum(int(c) * x for c, x in zip(md.wave.components, xs))
        trig = sympy.cos(phase) if md.trig is Trig.COS else sympy.sin(phase)
        field = [sympy.nsimplify(b, rational=False) * trig for b in md.polarization]
        lap = [-sum(sympy.diff(f, x, 2) for x in xs) for f in field]
        div = sympy.simplify(sum(sympy.diff(f, x) for f, x in zip(field, xs)))
        assert abs(float(div.subs({x: 0.3 for x in xs}))) < 1e-12
        lap_f = sympy.lambdify(xs, lap, "numpy")
        vals = np.array([lap_f(*p) for p in points])
        np.testing.assert_allclose(amplitude(d) * vals, md.eigenvalue * evaluate_mode(md, points), atol=1e-12)


def test_periodic_grid_shape_and_range():
    g = periodic_grid(3, 5)
    assert g.shape == (5, 5, 5, 3)
    assert g.min() == -np.pi and g.max() < np.pi


def test_prefix_and_manifest():
    basis = build_basis(2, 10)
    assert basis.prefix(4).manifest_lines() == basis.manifest_lines()[:4]
    first = basis.manifest_lines()[0].split()
    assert first[0] == "1" and first[3] == "cos" and first[-1] == "1"


def test_mode_is_basis_mode():
    assert isinstance(build_basis(2, 3).modes[0], BasisMode)
