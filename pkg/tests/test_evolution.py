import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import rnls.evolution as evo
from rnls.errors import ConfigError, DivergedStateError
from rnls.evolution import (
    CSV_COLUMNS,
    EvolutionConfig,
    evolve,
    linear_flow,
    nonlinear_substep,
    nonlinear_substep_exactness_check,
    read_run_csv,
    scattering_diagnostic,
    step,
    time_reverse,
)
from rnls.grid import FieldPair, make_radial_grid

from conftest import gaussian_pair


def test_zero_data_stays_zero(small_grid):
    rec = evolve(FieldPair.zeros(small_grid), EvolutionConfig(dt=1e-2, t_end=0.2, stride=5))
    assert np.all(rec.final_pair.u == 0) and np.all(rec.final_pair.v == 0)
    assert rec.termination == "t_end"


def test_linear_regime(small_grid):
    base = gaussian_pair(small_grid, 1.0, 0.8, chirp=0.1)
    rel = {}
    for eps in (1e-6, 1e-5):
        pair = base.scaled(eps)
        got = evolve(pair, EvolutionConfig(dt=1e-2, t_end=1.0, stride=50)).final_pair
        rel[eps] = got.l2_distance(linear_flow(pair, 1.0))
    # the correction is quadratic in the amplitude: 1e-10 measured against the unscaled data
    assert rel[1e-6] * 1e-6 <= 1e-10
    assert 8 < rel[1e-5] / rel[1e-6] < 12


def test_substep_zero_and_reference():
    rep = nonlinear_substep_exactness_check([(0, 0)])
    assert rep.max_rel_deviation == 0.0
    rep = nonlinear_substep_exactness_check([(1, 1)], dt=1e-3)
    assert rep.max_rel_deviation <= 1e-9
    assert rep.max_invariant_drift <= 1e-12


@settings(max_examples=30, deadline=None)
@given(
    ur=st.floats(-2, 2), ui=st.floats(-2, 2), vr=st.floats(-2, 2), vi=st.floats(-2, 2),
    dt=st.floats(1e-4, 1e-3),
)
def test_substep_exactness_property(ur, ui, vr, vi, dt):
    rep = nonlinear_substep_exactness_check([(complex(ur, ui), complex(vr, vi))], dt=dt)
    assert rep.max_rel_deviation <= 1e-9
    assert rep.max_invariant_drift <= 1e-12


def test_substep_count_respects_budget():
    u = np.array([10.0 + 0j])
    assert evo.substep_count(u, u, 1e-3) == 2
    assert evo.substep_count(u, u, 0.1) == 20
    un, vn = nonlinear_substep(np.zeros(3), np.zeros(3), 0.5)
    assert np.all(un == 0) and np.all(vn == 0)


def test_step_matches_evolve(small_grid):
    pair = gaussian_pair(small_grid, 1.0, 0.5)
    a = pair
    for _ in range(5):
        a = step(a, 1e-2)
    b = evolve(pair, EvolutionConfig(dt=1e-2, t_end=0.05, stride=5)).final_pair
    assert a.l2_distance(b) < 1e-12


def test_time_reversal(small_grid):
    pair = gaussian_pair(small_grid, 2.0, 1.5, chirp=0.05)
    cfg = EvolutionConfig(dt=1e-3, t_end=0.5, stride=100)
    fwd = evolve(pair, cfg).final_pair
    back = time_reverse(evolve(time_reverse(fwd), cfg).final_pair)
    mod = FieldPair(np.abs(back.u) + 0j, np.abs(back.v) + 0j, small_grid)
    ref = FieldPair(np.abs(pair.u) + 0j, np.abs(pair.v) + 0j, small_grid)
    assert mod.l2_distance(ref) <= 5e-5


def test_gaussian_conservation(small_grid):
    rec = evolve(gaussian_pair(small_grid, 2.0, 1.5), EvolutionConfig(dt=1e-3, t_end=0.5, stride=50))
    assert rec.mass_drift().max() <= 1e-8
    assert rec.energy_drift().max() <= 1e-6
    assert np.all(np.diff(rec.times) > 0)


def test_small_data_kinetic_bounded(gs_small):
    rec = evolve(gs_small.pair.scaled(0.05), EvolutionConfig(dt=2e-3, t_end=2.0, stride=25))
    kin = rec.series("kinetic")
    assert kin.max() <= 1.05 * kin[0]


def test_standing_wave_flagged_non_scattering(gs_small):
    rec = evolve(gs_small.pair, EvolutionConfig(dt=1e-3, t_end=1.0, stride=20))
    ev = scattering_diagnostic(rec)
    assert not ev.consistent_with_scattering
    assert ev.late_share > 0.2
    assert abs(ev.decay_exponent) < 0.1


def test_linear_gaussian_decay_exponent():
    # oracle: |e^{itc Lap} e^{-a r^2}| has L^3 norm proportional to (1 + 16 a^2 c^2 t^2)^{-5/12}
    grid = make_radial_grid(2048, 100.0)
    a = 0.25
    pair = FieldPair(np.exp(-a * grid.nodes**2) + 0j, 0.5 * np.exp(-a * grid.nodes**2) + 0j, grid)
    rec = evolve(pair, EvolutionConfig(dt=0.05, t_end=20.0, stride=4, nonlinear=False))
    t = rec.times
    c0 = (np.pi / (3 * a)) ** (5 / 6)
    exact = c0 * (1 + 16 * a**2 * t**2) ** (-5 / 12) + 0.5 * c0 * (1 + 4 * a**2 * t**2) ** (-5 / 12)
    assert np.allclose(rec.series("l3_u") + rec.series("l3_v"), exact, rtol=1e-5)
    ev = scattering_diagnostic(rec, window=(5.0, 20.0))
    assert abs(ev.decay_exponent + 5 / 6) <= 0.05
    oracle = np.polyfit(np.log(t[t >= 5 - 1e-9]), np.log(exact[t >= 5 - 1e-9]), 1)[0]
    assert ev.decay_exponent == pytest.approx(oracle, abs=1e-6)


def test_csv_roundtrip(tmp_path, small_grid):
    rec = evolve(
        gaussian_pair(small_grid, 1.0, 1.0),
        EvolutionConfig(dt=1e-2, t_end=0.1, stride=2, virial_radius=3.0),
    )
    rows, footer = read_run_csv(rec.write_csv(tmp_path / "run.csv"))
    assert list(rows[0]) == list(CSV_COLUMNS)
    assert len(rows) == len(rec.samples) == 6
    assert footer["termination"] == "t_end" and footer["n_samples"] == 6
    assert float(rows[-1]["M"]) == rec.samples[-1].report.mass
    assert rows[0]["loc_virial_I"] != ""


def test_config_validation(small_grid):
    for bad in ({"dt": 0.0}, {"t_end": -1.0}, {"stride": 0}, {"backend": "polar"},
                {"guard_factor": 1.0}, {"tail_fraction": 1.5}, {"dt_min": 1.0}):
        with pytest.raises(ConfigError):
            EvolutionConfig(**bad)
    with pytest.raises(ConfigError):
        evolve(FieldPair.zeros(small_grid), EvolutionConfig(backend="cartesian"))


def test_user_stop(small_grid):
    rec = evolve(
        gaussian_pair(small_grid),
        EvolutionConfig(dt=1e-2, t_end=1.0, stride=1),
        should_stop=lambda s: s.t >= 0.03,
    )
    assert rec.termination == "user_stop"
    assert rec.times[-1] == pytest.approx(0.03)


def test_resolution_limit(gs_small):
    cfg = EvolutionConfig(dt=1e-3, t_end=1.0, stride=10, adaptive=True, dt_min=1e-3 * 0.99)
    rec = evolve(gs_small.pair.scaled(1.2), cfg)
    assert rec.termination == "resolution_limit"
    assert "early" in rec.samples[-1].flags


def test_divergence_carries_partial_record(small_grid, monkeypatch):
    calls = {"n": 0}
    real = evo._RadialFlow.nonlinear

    def poisoned(self, c, dt):
        calls["n"] += 1
        out = real(self, c, dt)
        if calls["n"] > 7:
            out = out * np.nan
        return out

    monkeypatch.setattr(evo._RadialFlow, "nonlinear", poisoned)
    with pytest.raises(DivergedStateError) as exc:
        evolve(gaussian_pair(small_grid), EvolutionConfig(dt=1e-2, t_end=1.0, stride=3))
    assert exc.value.t == pytest.approx(0.09)
    assert len(exc.value.record.samples) == 3
