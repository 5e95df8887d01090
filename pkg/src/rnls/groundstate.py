"""Ground states of  -Lap phi + w phi = 2 psi phi,  -1/2 Lap psi + 2 w psi = phi^2.

Three independent routes:

* ``solve_ground_state``: descent of the action I_w on the set K^{20,8} = 0.
  Each step is a Sobolev-preconditioned gradient step followed by the
  (20, 8) scaling projection back onto the constraint.
* ``solve_petviashvili``: stabilised fixed-point iteration U <- S L^{-1} N(U).
* ``solve_shooting``: the radial ODE system integrated outward from the origin
  and inward from the exponential tails, matched in the middle. It uses no grid
  operators, so it serves as the reference for the other two.
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.linalg
from scipy.integrate import solve_ivp
from scipy.optimize import root

from .errors import (
    ConvergenceError,
    DegenerateSeedError,
    NotApplicableError,
    ResolutionError,
    SearchFailureError,
    SolverError,
)
from .functionals import FunctionalReport, ThresholdSet, evaluate, nehari_project
from .grid import FieldPair, RadialGrid, laplacian_radial, load_pair, make_radial_grid, save_pair

log = logging.getLogger(__name__)

DEFAULT_N = 4096
DEFAULT_RMAX = 50.0


@dataclass(frozen=True)
class SolverConfig:
    max_iters: int = 20000
    tol_action: float = 1e-10
    stall_steps: int = 20
    tol_res: float = 1e-7
    step_init: float = 1e-2
    step_max: float = 0.7
    step_growth: float = 1.5
    seed_amplitude: float = 3.0
    fixed_point_tol: float = 1e-12


@dataclass(frozen=True)
class ODEConfig:
    rtol: float = 1e-12
    # the tails reach 1e-20; error control must stay relative there
    atol: float = 1e-40
    r_start: float = 1e-3
    # small steps keep the dense output accurate enough to survive the
    # 1/h^2 amplification of the discrete residual
    max_step: float = 0.02
    r_match: float = 2.0
    r_far: float = 24.0
    # (phi(0), psi(0)) at w = 1; other w rescale by w.
    guess: tuple = (20.0, 20.0)
    search_box: tuple = ((0.5, 40.0), (0.5, 40.0))
    grid_n: int = DEFAULT_N
    grid_rmax: float = DEFAULT_RMAX


@dataclass
class GroundState:
    omega: float
    pair: FieldPair
    report: FunctionalReport
    method: str
    residual: float
    iterations: int
    meta: dict = field(default_factory=dict)

    @property
    def phi(self) -> np.ndarray:
        return self.pair.u.real

    @property
    def psi(self) -> np.ndarray:
        return self.pair.v.real


# ---------------------------------------------------------------- shared pieces


def elliptic_residual(phi: np.ndarray, psi: np.ndarray, grid: RadialGrid, omega: float) -> float:
    """Sup of both equation residuals divided by the sup of the state."""
    rphi = -laplacian_radial(phi, grid) + omega * phi - 2 * psi * phi
    rpsi = -0.5 * laplacian_radial(psi, grid) + 2 * omega * psi - phi**2
    scale = max(np.max(np.abs(phi)), np.max(np.abs(psi)))
    if scale == 0:
        return float("inf")
    return float(max(np.max(np.abs(rphi)), np.max(np.abs(rpsi))) / scale)


class _Resolvent:
    """Applies diag((w - Lap)^{-1}, (2w - Lap/2)^{-1}) with cached banded Cholesky factors."""

    def __init__(self, grid: RadialGrid, omega: float):
        self.grid = grid
        self.chol_u = scipy.linalg.cholesky_banded(grid.banded_operator(omega, 1.0))
        self.chol_v = scipy.linalg.cholesky_banded(grid.banded_operator(2 * omega, 0.5))

    def __call__(self, fu: np.ndarray, fv: np.ndarray):
        w = self.grid.cell_measure
        xu = scipy.linalg.cho_solve_banded((self.chol_u, False), w * fu)
        xv = scipy.linalg.cho_solve_banded((self.chol_v, False), w * fv)
        return xu, xv


def _seed(grid: RadialGrid, omega: float, amplitude: float) -> tuple[np.ndarray, np.ndarray]:
    r = grid.nodes
    g = amplitude * omega * np.exp(-omega * r**2)
    return g.copy(), g.copy()


def _real_pair(phi, psi, grid) -> FieldPair:
    return FieldPair(phi.astype(complex), psi.astype(complex), grid)


def _action(phi, psi, grid, omega) -> float:
    return evaluate(_real_pair(phi, psi, grid), omega).i_omega


def _check_resolution(grid: RadialGrid, omega: float):
    if grid.h * np.sqrt(omega) > 1 / 20:
        log.warning("grid spacing %.3g resolves w^{-1/2} with fewer than 20 nodes", grid.h)


def _finish(phi, psi, grid, omega, method, iterations, meta) -> GroundState:
    pair = _real_pair(phi, psi, grid)
    return GroundState(
        omega=float(omega),
        pair=pair,
        report=evaluate(pair, omega),
        method=method,
        residual=elliptic_residual(phi, psi, grid, omega),
        iterations=int(iterations),
        meta=meta,
    )


# ---------------------------------------------------------------- gradient flow


def _project(phi, psi, grid):
    try:
        return nehari_project(_real_pair(phi, psi, grid))
    except (NotApplicableError, ResolutionError) as exc:
        raise DegenerateSeedError(f"Nehari projection failed: {exc}") from exc


def solve_ground_state(
    omega: float = 1.0, grid: RadialGrid | None = None, config: SolverConfig | None = None
) -> GroundState:
    """Minimise I_w on {K^{20,8} = 0} by projected, preconditioned gradient descent."""
    if not omega > 0:
        raise ValueError("omega must be positive")
    grid = grid or make_radial_grid(DEFAULT_N, DEFAULT_RMAX)
    cfg = config or SolverConfig()
    _check_resolution(grid, omega)
    resolvent = _Resolvent(grid, omega)

    phi, psi = _seed(grid, omega, cfg.seed_amplitude)
    state = _project(phi, psi, grid)
    phi, psi = state.u.real, state.v.real
    cur = _action(phi, psi, grid, omega)
    tau = cfg.step_init
    quiet = 0
    res = np.inf
    history = []
    for it in range(1, cfg.max_iters + 1):
        gphi = omega * phi - laplacian_radial(phi, grid) - 2 * psi * phi
        gpsi = 2 * omega * psi - 0.5 * laplacian_radial(psi, grid) - phi**2
        dphi, dpsi = resolvent(gphi, gpsi)
        trial = _project(phi - tau * dphi, psi - tau * dpsi, grid)
        tphi, tpsi = trial.u.real, trial.v.real
        new = _action(tphi, tpsi, grid, omega)
        # round-off allowance so that the descent test does not stall at convergence
        if new <= cur + 1e-14 * abs(cur):
            rel = abs(cur - new) / abs(cur)
            phi, psi, cur = tphi, tpsi, new
            tau = min(tau * cfg.step_growth, cfg.step_max)
            quiet = quiet + 1 if rel < cfg.tol_action else 0
            history.append(cur)
        else:
            tau *= 0.5
            if tau < 1e-12:
                break
            continue
        mass = evaluate(trial, omega).mass
        if mass < 1e-10:
            raise DegenerateSeedError("descent collapsed to the zero state")
        if quiet >= cfg.stall_steps:
            res = elliptic_residual(phi, psi, grid, omega)
            if res < cfg.tol_res:
                return _finish(phi, psi, grid, omega, "gradient_flow", it, {"step": tau})
    res = elliptic_residual(phi, psi, grid, omega)
    if res < cfg.tol_res:
        return _finish(phi, psi, grid, omega, "gradient_flow", it, {"step": tau})
    raise ConvergenceError(f"gradient flow did not converge in {it} iterations (residual {res:.2e})", residual=res)


# ---------------------------------------------------------------- Petviashvili


def _petviashvili_update(phi, psi, grid, omega, resolvent):
    """One stabilised update.

    A single quotient cannot damp the relative amplitude mode (phi, psi) ->
    (a phi, b psi): the map sends log(a/b) to -log(a/b). Per-component quotients
    S_phi = <phi, L1 phi>/<phi, N1> ~ 1/b and S_psi = <psi, L2 psi>/<psi, N2> ~ b/a^2
    cancel both scalings with the exponents used below.
    """
    w = grid.cell_measure
    nphi, npsi = 2 * psi * phi, phi**2
    lphi = omega * phi - laplacian_radial(phi, grid)
    lpsi = 2 * omega * psi - 0.5 * laplacian_radial(psi, grid)
    den_phi = np.dot(w, phi * nphi)
    den_psi = np.dot(w, psi * npsi)
    if not (den_phi > 0 and den_psi > 0):
        raise SolverError("Petviashvili quotient lost its sign")
    s_phi = np.dot(w, phi * lphi) / den_phi
    s_psi = np.dot(w, psi * lpsi) / den_psi
    xphi, xpsi = resolvent(nphi, npsi)
    return s_phi**1.5 * s_psi**0.5 * xphi, s_phi * s_psi * xpsi, (s_phi, s_psi)


def solve_petviashvili(
    omega: float = 1.0, grid: RadialGrid | None = None, config: SolverConfig | None = None
) -> GroundState:
    """Fixed-point iteration U <- stabiliser * L^{-1} N(U) with L = diag(w - Lap, 2w - Lap/2)."""
    grid = grid or make_radial_grid(DEFAULT_N, DEFAULT_RMAX)
    cfg = config or SolverConfig()
    _check_resolution(grid, omega)
    resolvent = _Resolvent(grid, omega)
    w = grid.cell_measure
    phi, psi = _seed(grid, omega, cfg.seed_amplitude)
    change = np.inf
    factors = (np.nan, np.nan)
    for it in range(1, cfg.max_iters + 1):
        new_phi, new_psi, factors = _petviashvili_update(phi, psi, grid, omega, resolvent)
        norm = np.sqrt(np.dot(w, new_phi**2 + new_psi**2))
        if norm < 1e-10 or not np.isfinite(norm) or max(abs(np.log(factors))) > 10:
            raise SolverError(f"Petviashvili iteration diverged (factors {factors})", residual=change)
        change = np.sqrt(np.dot(w, (new_phi - phi) ** 2 + (new_psi - psi) ** 2)) / norm
        phi, psi = new_phi, new_psi
        if change < cfg.fixed_point_tol:
            break
    else:
        if change > 1e-9:
            raise ConvergenceError(f"Petviashvili stalled at relative change {change:.2e}", residual=change)
    meta = {"last_change": float(change), "factors": [float(f) for f in factors]}
    return _finish(phi, psi, grid, omega, "petviashvili", it, meta)


def petviashvili_map(gs: GroundState) -> FieldPair:
    """One further Petviashvili update applied to a converged state."""
    grid = gs.pair.grid
    phi, psi, _ = _petviashvili_update(gs.phi, gs.psi, grid, gs.omega, _Resolvent(grid, gs.omega))
    return _real_pair(phi, psi, grid)


# ---------------------------------------------------------------- shooting


def _rhs(omega):
    def f(r, y):
        phi, dphi, psi, dpsi = y
        return [
            dphi,
            -4 * dphi / r + omega * phi - 2 * psi * phi,
            dpsi,
            -4 * dpsi / r + 4 * omega * psi - 2 * phi**2,
        ]

    return f


def _series(a, b, omega, r):
    """Taylor start at the origin through r^4."""
    a2 = (omega * a - 2 * a * b) / 10
    b2 = (4 * omega * b - 2 * a * a) / 10
    a4 = (omega * a2 - 2 * (a * b2 + a2 * b)) / 28
    b4 = (4 * omega * b2 - 4 * a * a2) / 28
    return np.array(
        [
            a + a2 * r**2 + a4 * r**4,
            2 * a2 * r + 4 * a4 * r**3,
            b + b2 * r**2 + b4 * r**4,
            2 * b2 * r + 4 * b4 * r**3,
        ]
    )


def _tail(kappa, r):
    """Decaying radial solution of Lap f = kappa^2 f in 5D and its derivative."""
    e = np.exp(-kappa * r)
    f = e * (1 + kappa * r) / r**3
    df = e / r**3 * (-(kappa**2) * r - 3 * (1 + kappa * r) / r)
    return f, df


def _tails(c, amp, omega, r):
    k = np.sqrt(omega)
    f1, d1 = _tail(k, r)
    f2, d2 = _tail(2 * k, r)
    return np.array([c * f1, c * d1, amp * f2, amp * d2])


def _shoot(params, omega, cfg: ODEConfig, dense=False):
    a, b, c, amp = params
    s = 1 / np.sqrt(omega)
    r0, rm, rf = cfg.r_start * s, cfg.r_match * s, cfg.r_far * s
    rhs = _rhs(omega)
    step = cfg.max_step * s if dense else np.inf
    out = solve_ivp(rhs, (r0, rm), _series(a, b, omega, r0), method="DOP853",
                    rtol=cfg.rtol, atol=cfg.atol, dense_output=dense, max_step=step)
    inn = solve_ivp(rhs, (rf, rm), _tails(c, amp, omega, rf), method="DOP853",
                    rtol=cfg.rtol, atol=cfg.atol, dense_output=dense, max_step=step)
    if not (out.success and inn.success):
        return None, out, inn
    mismatch = out.y[:, -1] - inn.y[:, -1]
    return mismatch, out, inn


def _initial_tail_guess(a, b, omega, cfg):
    """Least-squares (c, A) matching the outward values at r_match."""
    s = 1 / np.sqrt(omega)
    rm = cfg.r_match * s
    out = solve_ivp(_rhs(omega), (cfg.r_start * s, rm), _series(a, b, omega, cfg.r_start * s),
                    method="DOP853", rtol=1e-8, atol=1e-40)
    y = out.y[:, -1]
    unit = _tails(1.0, 1.0, omega, rm)
    c = y[0] / unit[0]
    amp = y[2] / unit[2]
    return c, amp


def solve_shooting(
    omega: float = 1.0, ode_config: ODEConfig | None = None, grid: RadialGrid | None = None
) -> GroundState:
    """Two-sided shooting for the positive decaying solution of the radial ODE system."""
    cfg = ode_config or ODEConfig()
    grid = grid or make_radial_grid(cfg.grid_n, cfg.grid_rmax)
    (alo, ahi), (blo, bhi) = cfg.search_box
    starts = [tuple(omega * x for x in cfg.guess)]
    rng = np.random.default_rng(0)
    for _ in range(24):
        starts.append((omega * rng.uniform(alo, ahi), omega * rng.uniform(blo, bhi)))
    best = None
    for a0, b0 in starts:
        c0, amp0 = _initial_tail_guess(a0, b0, omega, cfg)
        x0 = np.array([a0, b0, c0, amp0])

        def fun(x):
            with np.errstate(over="ignore", invalid="ignore"):
                mm, _, _ = _shoot(x, omega, cfg)
            if mm is None or not np.all(np.isfinite(mm)):
                return np.full(4, 1e6)
            return mm

        sol = root(fun, x0, method="hybr", options={"xtol": 1e-14})
        mm = fun(sol.x)
        a, b, c, amp = sol.x
        if a > 0 and b > 0 and c > 0 and amp > 0 and np.max(np.abs(mm)) < 1e-9 * a:
            best = sol.x
            break
    if best is None:
        raise SearchFailureError("no positive decaying solution found from the search box")
    phi, psi = _sample_shooting(best, omega, cfg, grid.nodes)
    meta = {"phi0": float(best[0]), "psi0": float(best[1]), "tail_c": float(best[2]), "tail_A": float(best[3])}
    return _finish(phi, psi, grid, omega, "shooting", 0, meta)


def _sample_shooting(params, omega, cfg, r):
    a, b, c, amp = params
    s = 1 / np.sqrt(omega)
    r0, rm, rf = cfg.r_start * s, cfg.r_match * s, cfg.r_far * s
    _, out, inn = _shoot(params, omega, cfg, dense=True)
    y = np.empty((4, r.size))
    m0 = r < r0
    m1 = (r >= r0) & (r <= rm)
    m2 = (r > rm) & (r <= rf)
    m3 = r > rf
    # dense outputs reject empty inputs, which short grids produce
    for m, f in ((m0, lambda x: _series(a, b, omega, x)), (m1, out.sol), (m2, inn.sol), (m3, lambda x: _tails(c, amp, omega, x))):
        if m.any():
            y[:, m] = f(r[m])
    return y[0], y[2]


# ---------------------------------------------------------------- verification


@dataclass
class Verification:
    checks: dict

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks.values())

    def failures(self) -> list[str]:
        return [k for k, c in self.checks.items() if not c["passed"]]


def verify_ground_state(gs: GroundState, tol: float = 1e-6, tol_res: float = 1e-7) -> Verification:
    rep, w = gs.report, gs.omega
    k, p, m = rep.kinetic, rep.interaction, rep.mass
    phi, psi = gs.phi, gs.psi
    sup = max(np.max(phi), np.max(psi))
    neg = min(np.min(phi), np.min(psi)) / sup
    rise = max(np.max(np.diff(phi)), np.max(np.diff(psi))) / sup

    def chk(value, bound):
        return {"value": float(value), "bound": float(bound), "passed": bool(value <= bound)}

    checks = {
        "pohozaev_kinetic": chk(abs(2 * k - 5 * p) / k, tol),
        "pohozaev_mass": chk(abs(2 * w * m - p) / p, tol),
        "action_identity": chk(abs(rep.i_omega - w * m) / (w * m), tol),
        "residual": chk(gs.residual, tol_res),
        "nonnegative": chk(-neg, 1e-8),
        "nonincreasing": chk(rise, 1e-8),
        "imaginary_parts": chk(max(np.max(np.abs(gs.pair.u.imag)), np.max(np.abs(gs.pair.v.imag))), 0.0),
    }
    return Verification(checks)


def thresholds_from_ground_state(gs: GroundState, tol: float = 1e-6) -> ThresholdSet:
    if abs(gs.omega - 1.0) > 1e-14:
        raise NotApplicableError(f"thresholds need the w = 1 ground state, got w = {gs.omega}")
    ver = verify_ground_state(gs, tol=tol)
    if not ver.passed:
        raise NotApplicableError(f"ground state failed verification: {ver.failures()}")
    m, e, k, p = gs.report.mass, gs.report.energy, gs.report.kinetic, gs.report.interaction
    return ThresholdSet(
        me_threshold=m * e,
        mk_threshold=m * k,
        c_gn=p / (m**0.25 * k**1.25),
        ground_mass=m,
    )


def gs_action(thresholds: ThresholdSet, omega: float) -> float:
    """I_w at the ground state of frequency w, from M_1 and the scaling law."""
    return np.sqrt(omega) * thresholds.ground_mass


# ---------------------------------------------------------------- cache

SOLVERS = {
    "gradient_flow": solve_ground_state,
    "petviashvili": solve_petviashvili,
}


def default_cache_dir() -> Path:
    return Path(os.environ.get("RNLS_CACHE", "cache"))


def _fmt(x: float) -> str:
    return repr(float(x))


class GroundStateCache:
    """Verified ground states on disk, laid out as gs/omega=<w>/n=<n>/<key>.{rnls,json}."""

    def __init__(self, root=None):
        self.root = Path(root) if root is not None else default_cache_dir()

    def _stem(self, omega, grid, method, cfg) -> Path:
        d = self.root / "gs" / f"omega={_fmt(omega)}" / f"n={grid.n_points}"
        key = f"{method}_rmax={_fmt(grid.r_max)}_tact={cfg.tol_action:g}_tres={cfg.tol_res:g}"
        return d / key

    def key(self, omega, grid, method="gradient_flow", cfg=None) -> str:
        cfg = cfg or SolverConfig()
        return str(self._stem(omega, grid, method, cfg).relative_to(self.root))

    def load(self, omega, grid, method="gradient_flow", cfg=None) -> GroundState | None:
        cfg = cfg or SolverConfig()
        stem = self._stem(omega, grid, method, cfg)
        bin_path, meta_path = stem.with_suffix(".rnls"), stem.with_suffix(".json")
        if not (bin_path.exists() and meta_path.exists()):
            return None
        pair = load_pair(bin_path)
        if pair.grid.n_points != grid.n_points or pair.grid.r_max != grid.r_max:
            return None
        pair = FieldPair(pair.u, pair.v, grid)
        meta = json.loads(meta_path.read_text())
        phi, psi = pair.u.real, pair.v.real
        gs = _finish(phi, psi, grid, omega, meta["method"], meta["iterations"], meta.get("meta", {}))
        if not verify_ground_state(gs, tol_res=cfg.tol_res).passed:
            log.warning("cached ground state %s failed re-verification; ignoring", stem)
            return None
        return gs

    def store(self, gs: GroundState, cfg=None) -> Path:
        cfg = cfg or SolverConfig()
        stem = self._stem(gs.omega, gs.pair.grid, gs.method, cfg)
        stem.parent.mkdir(parents=True, exist_ok=True)
        meta = {
            "omega": gs.omega,
            "method": gs.method,
            "iterations": gs.iterations,
            "residual": gs.residual,
            "n_points": gs.pair.grid.n_points,
            "r_max": gs.pair.grid.r_max,
            "config": asdict(cfg),
            "report": gs.report.to_dict(),
            "meta": gs.meta,
        }
        # publish atomically: write beside the target, then rename
        for suffix, writer in ((".rnls", lambda p: save_pair(gs.pair, p)),
                               (".json", lambda p: Path(p).write_text(json.dumps(meta, indent=2, sort_keys=True)))):
            fd, tmp = tempfile.mkstemp(dir=stem.parent, suffix=suffix + ".tmp")
            os.close(fd)
            writer(tmp)
            os.replace(tmp, stem.with_suffix(suffix))
        return stem


def get_ground_state(
    omega: float = 1.0,
    grid: RadialGrid | None = None,
    method: str = "gradient_flow",
    config: SolverConfig | None = None,
    cache: GroundStateCache | None = None,
) -> GroundState:
    """Cached solve. Only verified states are published."""
    grid = grid or make_radial_grid(DEFAULT_N, DEFAULT_RMAX)
    cfg = config or SolverConfig()
    if cache is not None:
        hit = cache.load(omega, grid, method, cfg)
        if hit is not None:
            return hit
    if method == "shooting":
        gs = solve_shooting(omega, grid=grid)
    else:
        gs = SOLVERS[method](omega, grid, cfg)
    if cache is not None and verify_ground_state(gs, tol_res=cfg.tol_res).passed:
        cache.store(gs, cfg)
    return gs


def with_grid(cfg: ODEConfig, grid: RadialGrid) -> ODEConfig:
    return replace(cfg, grid_n=grid.n_points, grid_rmax=grid.r_max)
