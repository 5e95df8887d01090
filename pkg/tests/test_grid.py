import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rnls.errors import ConfigError, DivergedStateError, ResolutionError
from rnls.grid import (
    SPHERE_AREA,
    FieldPair,
    l2_norm,
    laplacian,
    load_pair,
    make_cartesian_grid,
    make_radial_grid,
    pair_from_bytes,
    pair_to_bytes,
    propagate,
    propagate_pair_radial,
    radial_to_cartesian,
    regrid,
    resample_radial,
    save_pair,
)


@pytest.fixture(scope="module")
def grid():
    return make_radial_grid(1024, 25.0)


def test_sphere_area():
    # |S^4| = 2 pi^{5/2} / Gamma(5/2)
    from scipy.special import gamma

    assert abs(SPHERE_AREA - 2 * np.pi**2.5 / gamma(2.5)) < 1e-13


def test_radial_quadrature_gaussian(grid):
    # int_{R^5} e^{-r^2} dx = pi^{5/2}
    val = grid.integrate(np.exp(-grid.nodes**2)).real
    assert abs(val - np.pi**2.5) / np.pi**2.5 < 1e-12


def test_radial_laplacian_gaussian(grid):
    r = grid.nodes
    f = np.exp(-(r**2))
    exact = (4 * r**2 - 10) * f
    err = np.max(np.abs(laplacian(f, grid) - exact))
    assert err < 1e-8


def test_stiffness_symmetric_nonnegative(grid):
    a = grid.stiffness
    assert abs(a - a.T).max() < 1e-12 * abs(a).max()
    lam, _ = grid.eigensystem
    assert lam.min() > 0


def test_free_flow_closed_form(grid):
    # e^{i t Lap} e^{-r^2} = (1 + 4 i t)^{-5/2} exp(-r^2 / (1 + 4 i t))
    r = grid.nodes
    f0 = np.exp(-(r**2)).astype(complex)
    for t, c in [(0.3, 1.0), (0.7, 0.5)]:
        z = 1 + 4j * c * t
        exact = z**-2.5 * np.exp(-(r**2) / z)
        got = propagate(f0, grid, t, mass_coeff=c)
        assert np.max(np.abs(got - exact)) < 1e-8


def test_pair_propagation_uses_both_coefficients(grid):
    r = grid.nodes
    f0 = np.exp(-(r**2)).astype(complex)
    u, v = propagate_pair_radial(f0, f0, grid, 0.4)
    assert np.allclose(u, propagate(f0, grid, 0.4, 1.0), atol=1e-13)
    assert np.allclose(v, propagate(f0, grid, 0.4, 0.5), atol=1e-13)


@settings(max_examples=20, deadline=None)
@given(t=st.floats(-5, 5), seed=st.integers(0, 2**16))
def test_free_flow_unitary(grid, t, seed):
    rng = np.random.default_rng(seed)
    r = grid.nodes
    f = (rng.normal() + 1j * rng.normal()) * np.exp(-((r - rng.uniform(0, 3)) ** 2))
    assert abs(l2_norm(propagate(f, grid, t), grid) - l2_norm(f, grid)) < 1e-11 * l2_norm(f, grid)


def test_resample_inside_and_beyond(grid):
    r = grid.nodes
    f = np.exp(-(r**2))
    x = np.linspace(0, 5, 101)
    assert np.max(np.abs(resample_radial(f, grid, x) - np.exp(-(x**2)))) < 5e-8  # cubic spline, O(h^4)
    # compressing a slowly decaying profile would need values from beyond r_max
    slow = np.exp(-r / 3)
    with pytest.raises(ResolutionError):
        resample_radial(slow, grid, 2 * r)
    assert np.all(resample_radial(f, grid, np.array([30.0, 40.0])) == 0)


def test_regrid_roundtrip(grid):
    fine = make_radial_grid(2048, 25.0)
    pair = FieldPair(np.exp(-grid.nodes**2), 0.5 * np.exp(-grid.nodes**2), grid)
    back = regrid(regrid(pair, fine), grid)
    assert back.l2_distance(pair) < 1e-7


def test_field_pair_rejects_nonfinite_and_bad_shape(grid):
    u = np.zeros(grid.n_points, dtype=complex)
    bad = u.copy()
    bad[3] = np.nan
    with pytest.raises(DivergedStateError):
        FieldPair(bad, u, grid)
    with pytest.raises(ConfigError):
        FieldPair(u[:-1], u[:-1], grid)


def test_grid_validation():
    with pytest.raises(ConfigError):
        make_radial_grid(8, 10.0)
    with pytest.raises(ConfigError):
        make_radial_grid(1024, -1.0)
    with pytest.raises(ConfigError):
        make_cartesian_grid(15, 10.0)
    # 32^5 points for two complex fields exceed the default budget
    with pytest.raises(ConfigError):
        make_cartesian_grid(32, 10.0)


def test_cartesian_quadrature_and_laplacian():
    g = make_cartesian_grid(16, 16.0)
    f = radial_to_cartesian(lambda r: np.exp(-(r**2) / 16), g)
    # int e^{-r^2/16} = (16 pi)^{5/2}
    assert abs(g.integrate(f).real - (16 * np.pi) ** 2.5) / (16 * np.pi) ** 2.5 < 1e-6
    lap = laplacian(f, g)
    exact = radial_to_cartesian(lambda r: (r**2 / 64 - 0.625) * np.exp(-(r**2) / 16), g)
    assert np.max(np.abs(lap - exact)) < 1e-3


@pytest.mark.parametrize("backend", ["radial", "cartesian"])
def test_binary_roundtrip(tmp_path, backend):
    if backend == "radial":
        g = make_radial_grid(64, 10.0)
    else:
        g = make_cartesian_grid(4, 3.0)
    rng = np.random.default_rng(1)
    shape = g.shape
    pair = FieldPair(rng.normal(size=shape) + 1j * rng.normal(size=shape), rng.normal(size=shape) + 0j, g)
    back = load_pair(save_pair(pair, tmp_path / "p.rnls"))
    assert back.backend == backend
    assert np.array_equal(back.u, pair.u) and np.array_equal(back.v, pair.v)


def test_binary_rejects_garbage():
    g = make_radial_grid(64, 10.0)
    blob = pair_to_bytes(FieldPair.zeros(g))
    with pytest.raises(ConfigError):
        pair_from_bytes(b"XXXXX" + blob[5:])
    with pytest.raises(ConfigError):
        pair_from_bytes(blob[:-16])
