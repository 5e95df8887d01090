"""Experiment orchestration. Each kind returns a ReportBundle of results, tables and checks."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..classify import (
    BLOW_UP_OR_GROW_UP,
    SCATTER,
    UNKNOWN,
    classify,
    negative_energy_shortcut,
    runtime_verdict,
    threshold_persistence_monitor,
    witness_prediction,
)
from ..errors import NotApplicableError, RNLSError
from ..evolution import EvolutionConfig, RunRecord, evolve, fit_decay_exponent
from ..functionals import (
    evaluate,
    gn_inequality_gap,
    gn_quotient,
    k_alpha_beta,
    nehari_project,
    phase_rotate,
)
from ..grid import FieldPair, make_cartesian_grid, make_radial_grid, radial_to_cartesian
from ..groundstate import (
    GroundState,
    GroundStateCache,
    SolverConfig,
    get_ground_state,
    thresholds_from_ground_state,
    verify_ground_state,
)
from .config import ExperimentConfig
from .fields import random_pairs

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    value: float
    limit: float
    detail: str = ""

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": bool(self.passed),
            "value": float(self.value),
            "limit": float(self.limit),
            "detail": self.detail,
        }


def check_le(name, value, limit, detail="") -> Check:
    return Check(name, bool(value <= limit), float(value), float(limit), detail)


@dataclass(frozen=True)
class Table:
    columns: tuple
    rows: list


@dataclass(frozen=True)
class PlotSpec:
    """A line or scatter plot drawn from one of the bundle's tables."""

    table: str
    x: str
    ys: tuple
    kind: str = "line"
    logx: bool = False
    logy: bool = False
    hlines: tuple = ()
    vlines: tuple = ()
    title: str = ""
    xlabel: str = ""
    ylabel: str = ""


@dataclass
class ReportBundle:
    kind: str
    config: ExperimentConfig
    results: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)
    plots: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    cache_keys: list = field(default_factory=list)
    grid: dict = field(default_factory=dict)
    failure: Optional[dict] = None

    @property
    def passed(self) -> bool:
        return self.failure is None and all(c.passed for c in self.checks)

    @property
    def exit_code(self) -> int:
        if self.failure is not None:
            return int(self.failure["exit_code"])
        return 0 if self.passed else 2

    def report(self) -> dict:
        return {
            "kind": self.kind,
            "passed": self.passed,
            "exit_code": self.exit_code,
            "results": self.results,
            "checks": [c.to_dict() for c in self.checks],
            "failure": self.failure,
        }


# ---------------------------------------------------------------- shared pieces


def _grid(cfg: ExperimentConfig):
    return make_radial_grid(cfg.grid_n, cfg.r_max)


def _cache(cfg: ExperimentConfig) -> GroundStateCache:
    return GroundStateCache(cfg.cache) if cfg.cache else GroundStateCache()


def _solver_config(cfg: ExperimentConfig) -> SolverConfig:
    return SolverConfig(tol_res=cfg.tol_res)


def _ground_state(cfg: ExperimentConfig, omega: float, bundle: ReportBundle, grid=None) -> GroundState:
    grid = grid or _grid(cfg)
    cache = _cache(cfg)
    method = cfg.method
    gs = get_ground_state(omega, grid, method, _solver_config(cfg), cache)
    key = cache.key(omega, grid, method, _solver_config(cfg))
    if key not in bundle.cache_keys:
        bundle.cache_keys.append(key)
    bundle.grid = {"backend": "radial", "n_points": grid.n_points, "r_max": grid.r_max}
    return gs


def _thresholds(cfg, bundle, grid=None):
    gs1 = _ground_state(cfg, 1.0, bundle, grid)
    return gs1, thresholds_from_ground_state(gs1, tol=cfg.tol)


def _gs_row(gs: GroundState) -> dict:
    rep = gs.report
    return {
        "omega": gs.omega,
        "M": rep.mass,
        "K": rep.kinetic,
        "P": rep.interaction,
        "E": rep.energy,
        "I_omega": rep.i_omega,
        "residual": gs.residual,
        "iterations": gs.iterations,
        "method": gs.method,
    }


def _table(rows: list[dict]) -> Table:
    cols = tuple(rows[0].keys()) if rows else ()
    return Table(cols, rows)


# ---------------------------------------------------------------- kinds


def _run_ground_state(cfg: ExperimentConfig, bundle: ReportBundle):
    rows = []
    for w in cfg.omegas:
        gs = _ground_state(cfg, w, bundle)
        ver = verify_ground_state(gs, tol=cfg.tol, tol_res=cfg.tol_res)
        bundle.results[f"omega={w!r}"] = {
            "report": gs.report.to_dict(),
            "verification": ver.checks,
            "method": gs.method,
            "iterations": gs.iterations,
            "residual": gs.residual,
        }
        for name, c in ver.checks.items():
            bundle.checks.append(Check(f"{name}[omega={w!r}]", c["passed"], c["value"], c["bound"]))
        rows.append(_gs_row(gs))
        r = gs.pair.grid.nodes
        bundle.tables[f"profile_omega={w!r}"] = Table(
            ("r", "phi", "psi"),
            [{"r": a, "phi": b, "psi": c} for a, b, c in zip(r, gs.phi, gs.psi)],
        )
    bundle.tables["ground_states"] = _table(rows)


def _run_verify(cfg: ExperimentConfig, bundle: ReportBundle):
    _run_ground_state(cfg, bundle)
    grid = _grid(cfg)
    states = {w: _ground_state(cfg, w, bundle, grid) for w in cfg.omegas}

    # scaling law across omega: M w^{1/2}, K w^{-1/2} and C_GN are omega-independent
    if len(states) > 1:
        ms = np.array([gs.report.mass * np.sqrt(w) for w, gs in states.items()])
        ks = np.array([gs.report.kinetic / np.sqrt(w) for w, gs in states.items()])
        cg = np.array([gn_quotient(gs.pair) for gs in states.values()])
        for name, arr, lim in (("scaling_mass", ms, 10 * cfg.tol), ("scaling_kinetic", ks, 10 * cfg.tol), ("c_gn_constant", cg, cfg.tol)):
            spread = float(np.ptp(arr) / np.mean(arr))
            bundle.checks.append(check_le(name, spread, lim))
            bundle.results[name] = arr.tolist()

    if 1.0 in states:
        gs1 = states[1.0]
        th = thresholds_from_ground_state(gs1, tol=cfg.tol)
        bundle.results["thresholds"] = th.to_dict()
        bundle.checks.append(check_le("gn_equality_ground_state", abs(gn_quotient(gs1.pair) / th.c_gn - 1), cfg.tol))
        rows = []
        worst = -np.inf
        for i, p in enumerate(random_pairs(grid, cfg.n_random, cfg.seed)):
            rep = evaluate(p)
            rhs = th.c_gn * rep.mass**0.25 * rep.kinetic**1.25
            excess = (rep.interaction - rhs) / rhs
            worst = max(worst, excess)
            rows.append({"index": i, "P": rep.interaction, "rhs": rhs, "ratio": rep.interaction / rhs})
        bundle.tables["gn_random"] = _table(rows)
        bundle.checks.append(check_le("gn_inequality_random", worst, 1e-8, f"{cfg.n_random} seeded pairs"))

        probe = random_pairs(grid, 1, cfg.seed + 1)[0]
        try:
            proj = nehari_project(probe)
            rep = evaluate(proj)
            bundle.checks.append(
                check_le("nehari_projection", abs(rep.k_20_8) / (8 * rep.kinetic), 1e-6, "K^{20,8} after the (20,8) projection")
            )
        except NotApplicableError as exc:
            bundle.checks.append(Check("nehari_projection", True, 0.0, 0.0, f"skipped: {exc}"))
        k_direct = k_alpha_beta(probe, 1.0, 20, 8)
        rep = evaluate(probe)
        bundle.checks.append(check_le("k_20_8_form", abs(k_direct - rep.k_20_8) / (8 * rep.kinetic + 20 * abs(rep.interaction)), 1e-12))
        rot = evaluate(phase_rotate(probe, 0.7))
        dev = max(abs(rot.mass - rep.mass) / rep.mass, abs(rot.kinetic - rep.kinetic) / rep.kinetic,
                  abs(rot.interaction - rep.interaction) / max(abs(rep.interaction), 1e-300))
        bundle.checks.append(check_le("phase_invariance", dev, 1e-12))
        v_rhs = abs(gs1.report.k_20_8) / (8 * gs1.report.kinetic)
        bundle.checks.append(check_le("virial_rhs_ground_state", v_rhs, cfg.tol))


def _initial_data(cfg: ExperimentConfig, gs: GroundState, a: float) -> FieldPair:
    if cfg.backend == "radial":
        return gs.pair.scaled(a)
    cg = make_cartesian_grid(cfg.cart_n, cfg.half_width)
    grid = gs.pair.grid
    u = radial_to_cartesian(grid.interpolant(gs.phi), cg)
    v = radial_to_cartesian(grid.interpolant(gs.psi), cg)
    return FieldPair(a * u, a * v, cg)


def _evolution_config(cfg: ExperimentConfig) -> EvolutionConfig:
    return EvolutionConfig(dt=cfg.dt, t_end=cfg.t_end, stride=cfg.stride, adaptive=cfg.adaptive, backend=cfg.backend)


def _run_one(cfg, gs, th, a, bundle: ReportBundle) -> RunRecord:
    data = _initial_data(cfg, gs, a)
    rec = evolve(data, _evolution_config(cfg), omega=gs.omega)
    name = f"run_a={a!r}"
    rows = rec.rows()
    bundle.tables[name] = _table(rows)
    verdict = runtime_verdict(rec)
    res = {
        "termination": rec.termination,
        "runtime_verdict": verdict.to_dict(),
        "max_mass_drift": float(rec.mass_drift().max()),
        "max_energy_drift": float(rec.energy_drift().max()),
        "final_time": float(rec.times[-1]),
    }
    if rec.termination == "t_end":
        bundle.checks.append(check_le(f"mass_drift[a={a!r}]", res["max_mass_drift"], cfg.drift_mass))
        bundle.checks.append(check_le(f"energy_drift[a={a!r}]", res["max_energy_drift"], cfg.drift_energy))
    try:
        mon = threshold_persistence_monitor(rec, th)
        res["persistence"] = mon.to_dict()
        bundle.checks.append(Check(f"threshold_side_persistent[a={a!r}]", mon.ok, float(len(mon.flip_times) + len(mon.bound_failures)), 0.0))
    except NotApplicableError as exc:
        res["persistence"] = {"not_applicable": str(exc)}

    t = rec.times
    l3 = rec.series("l3_u") + rec.series("l3_v")
    sel = t >= t[-1] / 4
    expo = fit_decay_exponent(t[sel], l3[sel])
    res["l3_decay_exponent"] = expo
    fit_rows = []
    if np.isfinite(expo):
        c = np.polyfit(np.log(t[sel]), np.log(l3[sel]), 1)
        fit_rows = [{"t": a_, "l3_sum": b_, "fit": float(np.exp(np.polyval(c, np.log(a_))))} for a_, b_ in zip(t[sel], l3[sel])]
    bundle.tables[f"l3_fit_a={a!r}"] = Table(("t", "l3_sum", "fit"), fit_rows)
    bundle.plots[f"drift_a={a!r}"] = PlotSpec(name, "t", ("mass_drift", "energy_drift"), logy=True, title=f"conservation drift, a = {a}", xlabel="t", ylabel="relative drift")
    bundle.plots[f"variance_a={a!r}"] = PlotSpec(name, "t", ("variance",), title=f"V(t), a = {a}", xlabel="t", ylabel="V")
    if fit_rows:
        bundle.plots[f"l3_decay_a={a!r}"] = PlotSpec(f"l3_fit_a={a!r}", "t", ("l3_sum", "fit"), logx=True, logy=True, title=f"L3 decay, slope {expo:.3f}", xlabel="t", ylabel="L3 norm")
    bundle.results[name] = res
    return rec


def _run_evolve(cfg: ExperimentConfig, bundle: ReportBundle):
    gs, th = _thresholds(cfg, bundle)
    bundle.results["thresholds"] = th.to_dict()
    for a in cfg.amplitudes:
        _run_one(cfg, gs, th, a, bundle)


def _verdict_row(a, verdict, shortcut) -> dict:
    return {
        "a": a,
        "me_product": verdict.me_product,
        "mk_product": verdict.mk_product,
        "prediction": verdict.prediction,
        "witness_prediction": witness_prediction(verdict),
        "sign_k208": verdict.sign_k208,
        "omega0": verdict.omega0,
        "shortcut": shortcut.prediction if shortcut else "",
    }


def _run_classify(cfg: ExperimentConfig, bundle: ReportBundle):
    gs, th = _thresholds(cfg, bundle)
    bundle.results["thresholds"] = th.to_dict()
    rows = []
    for a in cfg.amplitudes:
        data = gs.pair.scaled(a)
        verdict = classify(data, th)
        shortcut = negative_energy_shortcut(data)
        bundle.results[f"a={a!r}"] = {
            "verdict": verdict.to_dict(),
            "shortcut": shortcut.to_dict() if shortcut else None,
        }
        routes_agree = verdict.prediction == UNKNOWN or witness_prediction(verdict) == verdict.prediction
        bundle.checks.append(Check(f"threshold_routes_agree[a={a!r}]", routes_agree, 0.0, 0.0))
        if shortcut is not None:
            bundle.checks.append(Check(f"shortcut_matches_classify[a={a!r}]", verdict.prediction == shortcut.prediction, 0.0, 0.0))
        rows.append(_verdict_row(a, verdict, shortcut))
    bundle.tables["verdicts"] = _table(rows)


def _run_sweep(cfg: ExperimentConfig, bundle: ReportBundle):
    gs, th = _thresholds(cfg, bundle)
    bundle.results["thresholds"] = th.to_dict()
    amps = sorted(cfg.amplitudes)

    def point(a):
        return classify(gs.pair.scaled(a), th)

    with ThreadPoolExecutor() as pool:
        verdicts = list(pool.map(point, amps))
    rows = []
    for a, v in zip(amps, verdicts):
        rv = "not_run"
        if cfg.sweep_evolve:
            rec = _run_one(cfg, gs, th, a, bundle)
            rv = runtime_verdict(rec).label
        rows.append({"a": a, "me_product": v.me_product, "mk_product": v.mk_product, "prediction": v.prediction, "runtime_verdict": rv})
    bundle.tables["threshold_plane"] = _table(rows)

    expected = [SCATTER if a < 1 else (BLOW_UP_OR_GROW_UP if a > 1 else UNKNOWN) for a in amps]
    near_one = [abs(a - 1) <= 1e-4 for a in amps]
    mismatches = [
        a for a, v, e, n in zip(amps, verdicts, expected, near_one) if not n and v.prediction != e
    ]
    bundle.checks.append(
        Check("monotone_crossing_at_one", not mismatches, float(len(mismatches)), 0.0, f"mismatched a: {mismatches}")
    )
    bundle.plots["threshold_plane"] = PlotSpec(
        "threshold_plane",
        "me_product",
        ("mk_product",),
        kind="scatter",
        vlines=(th.me_threshold,),
        hlines=(th.mk_threshold,),
        title="threshold plane",
        xlabel="M E",
        ylabel="M K",
    )


def _run_gn_sweep(cfg: ExperimentConfig, bundle: ReportBundle):
    grid = _grid(cfg)
    gs, th = _thresholds(cfg, bundle, grid)
    bundle.results["thresholds"] = th.to_dict()
    rows = []
    worst = -np.inf
    for i, p in enumerate(random_pairs(grid, cfg.n_random, cfg.seed)):
        gap = gn_inequality_gap(p, th)
        rep = evaluate(p)
        rhs = rep.interaction + gap
        worst = max(worst, -gap / rhs)
        rows.append({"index": i, "P": rep.interaction, "rhs": rhs, "quotient_over_cgn": gn_quotient(p) / th.c_gn})
    bundle.tables["gn_random"] = _table(rows)
    bundle.checks.append(check_le("gn_inequality_random", worst, 1e-8, f"{cfg.n_random} seeded pairs"))
    bundle.checks.append(check_le("gn_equality_ground_state", abs(gn_quotient(gs.pair) / th.c_gn - 1), cfg.tol))
    bundle.results["max_quotient_over_cgn"] = max(r["quotient_over_cgn"] for r in rows)


RUNNERS = {
    "ground_state": _run_ground_state,
    "verify_identities": _run_verify,
    "evolve": _run_evolve,
    "classify": _run_classify,
    "sweep": _run_sweep,
    "gn_sweep": _run_gn_sweep,
}


def run_experiment(config: ExperimentConfig) -> ReportBundle:
    """Run the configured experiment.

    Library errors are caught and recorded as the bundle's failure manifest so
    that partial results can still be written; ``exit_code`` carries the status.
    """
    bundle = ReportBundle(kind=config.kind, config=config)
    try:
        RUNNERS[config.kind](config, bundle)
    except RNLSError as exc:
        log.error("%s experiment failed: %s", config.kind, exc)
        bundle.failure = {"type": type(exc).__name__, "message": str(exc), "exit_code": exc.exit_code}
    return bundle
