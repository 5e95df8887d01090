import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rnls.classify import (
    BLOW_UP_INDICATOR,
    BLOW_UP_OR_GROW_UP,
    CONSISTENT_WITH_SCATTERING,
    INCONCLUSIVE,
    SCATTER,
    UNKNOWN,
    classify,
    negative_energy_shortcut,
    runtime_verdict,
    threshold_persistence_monitor,
    variance_second_differences,
    witness_prediction,
)
from rnls.errors import NotApplicableError
from rnls.evolution import EvolutionConfig, RunRecord, Sample, evolve
from rnls.functionals import evaluate, phase_rotate
from rnls.grid import FieldPair
from rnls.harness.fields import random_pairs

from conftest import gaussian_pair


def scaled_products(a):
    # M(a) = a^2 M1, K(a) = 5 a^2 M1, P(a) = 2 a^3 M1
    return 5 * a**4 - 4 * a**5, 5 * a**4


@pytest.mark.parametrize("a,expected", [(0.8, SCATTER), (1.1, BLOW_UP_OR_GROW_UP), (0.5, SCATTER), (1.2, BLOW_UP_OR_GROW_UP)])
def test_scaled_ground_state(gs_small, thr_small, a, expected):
    v = classify(gs_small.pair.scaled(a), thr_small)
    me, mk = scaled_products(a)
    m1sq = thr_small.ground_mass**2
    assert v.prediction == expected
    assert v.me_product == pytest.approx(me * m1sq, rel=1e-6)
    assert v.mk_product == pytest.approx(mk * m1sq, rel=1e-6)
    assert v.radial and v.finite_variance
    assert v.blows_up == (expected == BLOW_UP_OR_GROW_UP)
    assert witness_prediction(v) == expected


def test_scaling_algebra_values():
    assert scaled_products(0.8) == pytest.approx((0.73728, 2.048))
    assert scaled_products(1.1) == pytest.approx((0.87846, 7.3205))


def test_ground_state_is_unknown(gs_small, thr_small):
    v = classify(gs_small.pair, thr_small)
    assert v.prediction == UNKNOWN and v.in_boundary_band
    assert witness_prediction(v) == UNKNOWN
    # omega0 recovers the ground-state frequency
    assert v.omega0 == pytest.approx(1.0, rel=1e-12)


def test_witness_frequency(gs_small, thr_small):
    pair = gs_small.pair.scaled(0.7)
    v = classify(pair, thr_small)
    assert v.omega0 == pytest.approx((thr_small.ground_mass / evaluate(pair).mass) ** 2, rel=1e-14)
    assert v.i_omega0 < v.i_gs_omega0


def test_zero_pair_rejected(small_grid, thr_small):
    zero = FieldPair.zeros(small_grid)
    with pytest.raises(NotApplicableError):
        classify(zero, thr_small)
    with pytest.raises(NotApplicableError):
        negative_energy_shortcut(zero)


def test_negative_energy_shortcut(gs_small, thr_small):
    pair = gs_small.pair.scaled(3.0)
    sc = negative_energy_shortcut(pair)
    assert sc is not None and sc.prediction == BLOW_UP_OR_GROW_UP
    assert sc.energy == pytest.approx(-63 * thr_small.ground_mass, rel=1e-6)
    assert classify(pair, thr_small).prediction == sc.prediction
    assert negative_energy_shortcut(gs_small.pair.scaled(0.9)) is None


def test_shortcut_never_contradicts(small_grid, thr_small):
    for pair in random_pairs(small_grid, 30, seed=3):
        pair = pair.scaled(20.0)
        sc = negative_energy_shortcut(pair)
        if sc is not None:
            assert classify(pair, thr_small).prediction == BLOW_UP_OR_GROW_UP


@settings(max_examples=20, deadline=None)
@given(theta=st.floats(-7, 7), a=st.floats(0.3, 1.5))
def test_phase_invariance(gs_small, thr_small, theta, a):
    pair = gs_small.pair.scaled(a)
    v0 = classify(pair, thr_small)
    v1 = classify(phase_rotate(pair, theta), thr_small)
    assert v1.prediction == v0.prediction
    assert v1.me_product == pytest.approx(v0.me_product, rel=1e-12)
    assert v1.mk_product == pytest.approx(v0.mk_product, rel=1e-12)


def test_route_consistency(gs_small, thr_small, small_grid):
    # perturbed and rescaled ground states populate both sides below the M E threshold
    rng = np.random.default_rng(5)
    gs = gs_small.pair
    gn = np.sqrt(gs_small.report.mass)
    seen = {SCATTER: 0, BLOW_UP_OR_GROW_UP: 0}
    count = 0
    for p in random_pairs(small_grid, 400, seed=5):
        s = 0.05 * gn / np.sqrt(evaluate(p).mass)
        q = FieldPair(gs.u + s * p.u, gs.v + s * p.v, small_grid).scaled(rng.uniform(0.5, 1.4))
        v = classify(q, thr_small)
        if v.me_product >= thr_small.me_threshold or v.in_boundary_band:
            continue
        assert witness_prediction(v) == v.prediction
        seen[v.prediction] += 1
        count += 1
        if count == 100:
            break
    assert count == 100
    assert min(seen.values()) > 10


def test_verdict_serializes(gs_small, thr_small):
    d = classify(gs_small.pair.scaled(1.1), thr_small).to_dict()
    assert json.loads(json.dumps(d))["prediction"] == BLOW_UP_OR_GROW_UP
    assert d["blows_up"] is True


def synthetic_record(reports, times, termination, variances=None):
    rec = RunRecord(EvolutionConfig(dt=1e-2, t_end=max(times[-1], 1.0)), 1.0, "radial")
    for i, (t, rep) in enumerate(zip(times, reports)):
        if variances is not None:
            rep = replace(rep, variance=float(variances[i]))
        rec.samples.append(Sample(t, rep, None, 0.0, 0.0, 1.0, 1.0, 0.0))
    rec.termination = termination
    return rec


def test_monitor_flags_flip(gs_small, thr_small):
    reps = [evaluate(gs_small.pair.scaled(a)) for a in (0.9, 0.9, 1.1)]
    rep = threshold_persistence_monitor(synthetic_record(reps, [0.0, 0.1, 0.2], "t_end"), thr_small)
    assert rep.flipped and rep.flip_times == (0.2,)
    assert not rep.ok


def test_monitor_on_short_runs(gs_small, thr_small):
    for a, side in ((0.8, -1), (1.2, 1)):
        rec = evolve(gs_small.pair.scaled(a), EvolutionConfig(dt=1e-3, t_end=0.1, stride=20))
        rep = threshold_persistence_monitor(rec, thr_small)
        assert rep.side == side and rep.ok
        assert rep.min_margin > 0.1


def test_monitor_needs_subthreshold_start(gs_small, thr_small):
    rec = synthetic_record([evaluate(gs_small.pair)], [0.0], "t_end")
    with pytest.raises(NotApplicableError):
        threshold_persistence_monitor(rec, thr_small)


def test_runtime_verdict_blowup(gs_small):
    rep = evaluate(gs_small.pair.scaled(1.3))
    t = np.linspace(0, 0.1, 6)
    rec = synthetic_record([rep] * 6, list(t), "blowup_indicator", variances=1.0 - t**2)
    assert np.allclose(variance_second_differences(rec), -2.0)
    v = runtime_verdict(rec)
    assert v.label == BLOW_UP_INDICATOR and v.variance_concave
    assert v.horizon == pytest.approx(0.1)


def test_runtime_verdict_labels(gs_small):
    rep = evaluate(gs_small.pair)
    rec = synthetic_record([rep] * 3, [0.0, 0.1, 0.2], "user_stop")
    assert runtime_verdict(rec).label == INCONCLUSIVE
    run = evolve(gs_small.pair, EvolutionConfig(dt=1e-3, t_end=0.4, stride=20))
    assert runtime_verdict(run).label == INCONCLUSIVE


def test_runtime_verdict_small_data(small_grid):
    run = evolve(gaussian_pair(small_grid, 0.1, 0.1), EvolutionConfig(dt=1e-2, t_end=8.0, stride=10))
    v = runtime_verdict(run)
    assert v.label == CONSISTENT_WITH_SCATTERING
    assert v.scatter["decay_exponent"] < -0.5
