import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rnls.errors import ConfigError, NotApplicableError
from rnls.evolution import step
from rnls.functionals import evaluate
from rnls.grid import FieldPair, make_cartesian_grid, make_radial_grid
from rnls.virial import (
    blowup_cutoff,
    blowup_profile,
    linear_cutoff,
    localized_virial,
    mass_cutoff,
    mass_tail,
    radial_sobolev_check,
    sign_bound_check,
    sign_bound_from_values,
    sobolev_ratio,
    variance,
    variance_weight,
    virial_rhs,
)

from conftest import gaussian_pair


@pytest.fixture(scope="module")
def fine():
    return make_radial_grid(2048, 30.0)


def test_blowup_profile_shape():
    chi, d1, d2, d3, d4 = blowup_profile()
    x = np.linspace(0, 1, 201)
    assert np.allclose(chi(x), x**2, atol=1e-14)
    xs = np.linspace(0, 3, 30001)
    assert np.max(d2(xs)) <= 2 + 1e-12
    assert abs(chi(3.0)) < 1e-12 and abs(d1(3.0)) < 1e-12
    # derivatives of the stored pieces agree with finite differences of chi
    h = 1e-4
    mid = np.linspace(1.01, 2.99, 50)
    assert np.allclose((chi(mid + h) - chi(mid - h)) / (2 * h), d1(mid), atol=1e-7)
    scale = np.max(np.abs(d4(mid)))
    assert np.allclose((d3(mid + h) - d3(mid - h)) / (2 * h), d4(mid), rtol=1e-5, atol=1e-5 * scale)


@pytest.mark.parametrize("R", [2.0, 5.0])
def test_blowup_cutoff_scaling(fine, R):
    fam = blowup_cutoff(fine, R)
    r = fine.nodes
    core = r <= R
    assert np.allclose(fam.derivative(0)[core], r[core] ** 2, rtol=1e-13)
    assert np.all(fam.derivative(0)[r >= 3 * R] == 0)
    assert np.max(fam.derivative(2)) <= 2 + 1e-12


def test_mass_cutoff(fine):
    R = 4.0
    fam = mass_cutoff(fine, R)
    r = fine.nodes
    chi = fam.derivative(0)
    assert np.all(chi[r <= R / 2] == 0) and np.all(chi[r >= R] == 1)
    assert np.all((chi >= 0) & (chi <= 1))
    assert np.max(fam.derivative(1)) <= 4 / R


def test_cutoff_validation(fine):
    with pytest.raises(ConfigError):
        blowup_cutoff(fine, 0.0)
    with pytest.raises(ConfigError):
        linear_cutoff(fine, 5)


def test_variance_closed_form(fine):
    # int r^2 e^{-2 r^2} dx = (5/4) (pi/2)^{5/2}
    pair = gaussian_pair(fine, 1.0, 0.5, width=np.sqrt(0.5))
    assert variance(pair) == pytest.approx((1 + 2 * 0.25) * 1.25 * (np.pi / 2) ** 2.5, rel=1e-12)
    assert variance(FieldPair.zeros(fine)) == 0.0


def test_variance_refuses_wide_data(fine):
    r = fine.nodes
    wide = FieldPair(np.exp(-r / 8), np.zeros_like(r), fine)
    with pytest.raises(NotApplicableError):
        variance(wide)


def test_virial_rhs(fine, gs_small):
    pair = gaussian_pair(fine, 1.5, 1.0)
    rep = evaluate(pair)
    assert virial_rhs(pair) == pytest.approx(8 * rep.kinetic - 20 * rep.interaction, rel=1e-13)
    assert virial_rhs(FieldPair.zeros(fine)) == 0.0
    assert abs(virial_rhs(gs_small.pair)) < 1e-6 * gs_small.report.kinetic


def test_r_squared_weight_reproduces_virial(fine):
    pair = gaussian_pair(fine, 1.2, 0.8, chirp=0.15)
    rd = localized_virial(pair, variance_weight(fine))
    assert rd.I == pytest.approx(variance(pair), rel=1e-12)
    assert rd.I_double_prime == pytest.approx(virial_rhs(pair), rel=1e-9)


def test_remainder_decomposition(fine):
    pair = gaussian_pair(fine, 2.0, 1.5, chirp=0.2)
    rd = localized_virial(pair, blowup_cutoff(fine, 1.5))
    k208 = virial_rhs(pair)
    assert rd.I_double_prime == pytest.approx(k208 + rd.R1 + rd.R2 + rd.R3, rel=1e-10, abs=1e-10 * abs(k208))
    assert set(rd.to_row()) == {
        "loc_virial_I", "loc_virial_Ip", "loc_virial_Ipp", "rem_R1", "rem_R2", "rem_R3",
    }


def test_large_radius_limit(fine):
    pair = gaussian_pair(fine, 2.0, 1.5, chirp=0.2)
    k208 = virial_rhs(pair)
    rd = localized_virial(pair, blowup_cutoff(fine, 8.0))
    assert abs(rd.I_double_prime - k208) < 1e-4 * abs(k208)


def test_remainders_vanish_for_compact_data(fine):
    r = fine.nodes
    bump = np.where(r < 1, (1 - r**2) ** 6, 0.0)
    pair = FieldPair(3 * bump * np.exp(0.3j * r**2), 2 * bump + 0j, fine)
    rd = localized_virial(pair, blowup_cutoff(fine, 4.0))
    k208 = virial_rhs(pair)
    assert abs(rd.R1) + abs(rd.R2) + abs(rd.R3) <= 1e-12 * abs(k208)


def test_localized_virial_time_derivatives(small_grid):
    # oracle: symmetric differences of I along the time-symmetric Strang step
    pair = gaussian_pair(small_grid, 2.0, 1.5, chirp=0.1)
    fam = blowup_cutoff(small_grid, 3.0)
    d = 1e-3
    i_p = localized_virial(step(pair, d), fam).I
    i_0 = localized_virial(pair, fam)
    i_m = localized_virial(step(pair, -d), fam).I
    assert (i_p - i_m) / (2 * d) == pytest.approx(i_0.I_prime, rel=1e-5)
    assert (i_p - 2 * i_0.I + i_m) / d**2 == pytest.approx(i_0.I_double_prime, rel=1e-4)


def test_linear_weight_cartesian():
    g = make_cartesian_grid(8, 8.0)
    q = np.pi / g.half_width
    u = np.exp(1j * q * g.coordinate(1)) * (1 + 0.5 * np.cos(q * g.coordinate(0)))
    pair = FieldPair(u * np.ones(g.shape), np.zeros(g.shape, complex), g)
    rd = localized_virial(pair, linear_cutoff(g, 1))
    assert rd.I_prime == pytest.approx(2 * evaluate(pair).momentum[1], rel=1e-12)
    assert rd.I_double_prime == 0.0


def test_linear_weight_radial_is_zero(small_grid):
    pair = gaussian_pair(small_grid)
    rd = localized_virial(pair, linear_cutoff(small_grid, 2))
    assert rd.I_prime == 0.0 and rd.I_double_prime == 0.0


def test_family_must_match_grid(small_grid, fine):
    with pytest.raises(ConfigError):
        localized_virial(gaussian_pair(small_grid), blowup_cutoff(fine, 2.0))


def test_mass_tail_bounds(fine):
    pair = gaussian_pair(fine, 1.0, 1.0)
    m = evaluate(pair).mass
    tail = mass_tail(pair, mass_cutoff(fine, 2.0))
    assert 0 < tail < m


@pytest.mark.parametrize("a,branch", [(0.8, "lower"), (0.5, "lower"), (1.2, "upper"), (1.1, "upper")])
def test_sign_bounds_on_scaled_ground_state(gs_small, thr_small, a, branch):
    rep = sign_bound_check(gs_small.pair.scaled(a), 1.0, thr_small)
    assert rep.branch == branch and rep.holds


def test_sign_bound_needs_subthreshold_action(small_grid, thr_small):
    heavy = gaussian_pair(small_grid, 10.0, 0.0, width=2.0)
    with pytest.raises(NotApplicableError):
        sign_bound_check(heavy, 1.0, thr_small)


def test_sign_bound_flags_violation(thr_small):
    m = thr_small.ground_mass
    # I = 0.5 M, K208 > 0 but far below min(I_gs - I, K)
    rep = sign_bound_from_values(m, 0.0, 100.0, 1.0, 1.0, thr_small)
    assert rep.branch == "lower" and not rep.holds


def test_sobolev_ratios(fine):
    r = fine.nodes
    profiles = [np.exp(-(r**2)), np.exp(-((r - 3) ** 2)), 1 / (1 + r**2) ** 3]
    reports = [radial_sobolev_check(f + 0j, fine) for f in profiles]
    assert all(rep.uniform for rep in reports)
    c = max(rep.constant for rep in reports)
    assert all(radial_sobolev_check(f + 0j, fine, constant=c).uniform for f in profiles)
    assert not radial_sobolev_check(profiles[2] + 0j, fine, constant=0.5 * reports[2].constant).uniform
    assert sobolev_ratio(np.zeros(fine.n_points, complex), fine, 2.0) == 0.0


@settings(max_examples=15, deadline=None)
@given(a=st.floats(0.3, 3.0), R=st.floats(1.0, 4.0))
def test_decomposition_property(fine, a, R):
    pair = gaussian_pair(fine, a, 0.7 * a, chirp=0.1)
    rd = localized_virial(pair, blowup_cutoff(fine, R))
    k208 = virial_rhs(pair)
    scale = evaluate(pair).kinetic * 20
    assert abs(rd.I_double_prime - (k208 + rd.R1 + rd.R2 + rd.R3)) <= 1e-11 * scale


def test_variance_cartesian():
    # oracle: int |x|^2 e^{-|x|^2} over R^5 = (5/2) pi^{5/2}
    g = make_cartesian_grid(16, 6.0)
    gauss = np.exp(-0.5 * g.r_squared) + 0j
    pair = FieldPair(gauss, 0.5 * gauss, g)
    # discrete oracle: the 5D sum factors into 1D sums on the axis nodes
    x = np.unique(g.coordinate(0))
    h = x[1] - x[0]
    s0, s2 = h * np.sum(np.exp(-(x**2))), h * np.sum(x**2 * np.exp(-(x**2)))
    assert variance(pair) == pytest.approx(1.5 * 5 * s2 * s0**4, rel=1e-12)
    # the node sum itself sits within trapezoid aliasing of the integral
    assert variance(pair) == pytest.approx(1.5 * 2.5 * np.pi**2.5, rel=1e-5)
    wide = np.exp(-0.02 * g.r_squared) + 0j
    with pytest.raises(NotApplicableError):
        variance(FieldPair(wide, wide, g))


@pytest.mark.parametrize("eta0", [0.1, 0.05])
def test_mass_localization_along_run(gs_small, small_grid, eta0):
    # outgoing chirp so the exterior mass actually moves
    r = small_grid.nodes
    gs = gs_small.pair.scaled(0.8)
    pair = FieldPair(gs.u * np.exp(0.5j * r**2), gs.v * np.exp(0.5j * r**2), small_grid)
    R = 8.0
    m = evaluate(pair).mass
    fam = mass_cutoff(small_grid, R)
    tail0 = mass_tail(pair, fam)
    kin, tails = [], []
    for _ in range(40):
        pair = step(pair, 1e-5)
        kin.append(evaluate(pair).kinetic)
        tails.append(mass_tail(pair, fam))
    c0 = np.sqrt(2 * max(kin))
    horizon = eta0 * R / (16 * c0 * np.sqrt(m))
    n = int(horizon / 1e-5)
    assert n >= 3
    assert max(tails[:n]) <= eta0 + tail0
