"""Threshold-plane prediction of the long-time behaviour, and runtime verdicts.

In (M E, M K) coordinates the dichotomy below the ground state reads

    M E < M1^2 and M K < 5 M1^2   ->  scatter
    M E < M1^2 and M K > 5 M1^2   ->  blow-up or grow-up

where M1 is the mass of the omega = 1 ground state.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .errors import NotApplicableError
from .evolution import RunRecord, scattering_diagnostic
from .functionals import ThresholdSet, evaluate
from .grid import FieldPair
from .virial import sign_bound_from_values, variance

SCATTER = "scatter"
BLOW_UP_OR_GROW_UP = "blow_up_or_grow_up"
UNKNOWN = "above_threshold_unknown"
PREDICTIONS = (SCATTER, BLOW_UP_OR_GROW_UP, UNKNOWN)

# runtime labels; grow-up has no finite-horizon signature and is never emitted
CONSISTENT_WITH_SCATTERING = "consistent_with_scattering"
BLOW_UP_INDICATOR = "blow_up_indicator"
INCONCLUSIVE = "inconclusive"

BOUNDARY_BAND = 1e-4
K208_TOL = 1e-10


@dataclass(frozen=True)
class DichotomyVerdict:
    prediction: str
    me_product: float
    mk_product: float
    thresholds: ThresholdSet
    sign_k208: int
    omega0: float
    i_omega0: float
    i_gs_omega0: float
    energy_nonpositive: bool
    finite_variance: bool
    radial: bool
    in_boundary_band: bool
    k208_ambiguous: bool

    @property
    def blows_up(self) -> bool:
        """Blow-up side with radial or finite-variance data: the stronger conclusion applies."""
        return self.prediction == BLOW_UP_OR_GROW_UP and (self.finite_variance or self.radial)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["thresholds"] = self.thresholds.to_dict()
        d["blows_up"] = self.blows_up
        return d


def _finite_variance(pair: FieldPair) -> bool:
    try:
        return bool(np.isfinite(variance(pair)))
    except NotApplicableError:
        return False


def _sign(x: float, scale: float) -> int:
    if abs(x) <= K208_TOL * scale:
        return 0
    return 1 if x > 0 else -1


def classify(pair: FieldPair, thresholds: ThresholdSet, band: float = BOUNDARY_BAND) -> DichotomyVerdict:
    rep = evaluate(pair, 1.0)
    if rep.mass == 0:
        raise NotApplicableError("the zero pair has no dichotomy verdict")
    me = rep.mass * rep.energy
    mk = rep.mass * rep.kinetic
    me_thr, mk_thr = thresholds.me_threshold, thresholds.mk_threshold
    in_band = abs(me - me_thr) <= band * me_thr or abs(mk - mk_thr) <= band * mk_thr
    if in_band or me >= me_thr:
        prediction = UNKNOWN
    elif mk < mk_thr:
        prediction = SCATTER
    else:
        prediction = BLOW_UP_OR_GROW_UP

    m1 = thresholds.ground_mass
    omega0 = (m1 / rep.mass) ** 2  # I_1(gs) = M1
    i0 = 0.5 * omega0 * rep.mass + 0.5 * rep.energy
    i_gs0 = np.sqrt(omega0) * m1
    scale = 8 * rep.kinetic + 20 * abs(rep.interaction)
    sgn = _sign(rep.k_20_8, scale)
    return DichotomyVerdict(
        prediction=prediction,
        me_product=float(me),
        mk_product=float(mk),
        thresholds=thresholds,
        sign_k208=sgn,
        omega0=float(omega0),
        i_omega0=float(i0),
        i_gs_omega0=float(i_gs0),
        energy_nonpositive=bool(rep.energy <= 0),
        finite_variance=_finite_variance(pair),
        radial=pair.backend == "radial",
        in_boundary_band=bool(in_band),
        k208_ambiguous=sgn == 0,
    )


def witness_prediction(verdict: DichotomyVerdict) -> str:
    """The same prediction read off the action route at the witnessing omega0."""
    if not verdict.i_omega0 < verdict.i_gs_omega0 or verdict.in_boundary_band:
        return UNKNOWN
    return SCATTER if verdict.sign_k208 >= 0 else BLOW_UP_OR_GROW_UP


@dataclass(frozen=True)
class ShortcutVerdict:
    prediction: str
    energy: float
    finite_variance: bool
    radial: bool

    @property
    def blows_up(self) -> bool:
        return self.finite_variance or self.radial

    def to_dict(self) -> dict:
        d = asdict(self)
        d["blows_up"] = self.blows_up
        return d


def negative_energy_shortcut(pair: FieldPair) -> Optional[ShortcutVerdict]:
    """E <= 0 puts the data on the blow-up side without consulting thresholds."""
    rep = evaluate(pair, 1.0)
    if rep.mass == 0:
        raise NotApplicableError("the zero pair has no dichotomy verdict")
    if rep.energy > 0:
        return None
    return ShortcutVerdict(BLOW_UP_OR_GROW_UP, float(rep.energy), _finite_variance(pair), pair.backend == "radial")


@dataclass(frozen=True)
class PersistenceReport:
    side: int
    flipped: bool
    flip_times: tuple
    min_margin: float
    omega: float
    bound_held: bool
    bound_failures: tuple
    worst_bound_margin: float

    @property
    def ok(self) -> bool:
        return not self.flipped and self.bound_held

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ok"] = self.ok
        return d


def threshold_persistence_monitor(
    record: RunRecord,
    thresholds: ThresholdSet,
    omega: Optional[float] = None,
    rel_slack: float = 1e-4,
    band: float = BOUNDARY_BAND,
) -> PersistenceReport:
    """Check that M K stays on its initial side of 5 M1^2 along the sampled run.

    The sign bound on K^{20,8} is evaluated at every sample, at ``omega`` or by
    default at the witness omega0 of the initial data.
    """
    if not record.samples:
        raise NotApplicableError("empty record")
    rep0 = record.samples[0].report
    me0 = rep0.mass * rep0.energy
    if me0 >= thresholds.me_threshold * (1 - band):
        raise NotApplicableError("initial data is not below the M E threshold")
    if omega is None:
        omega = (thresholds.ground_mass / rep0.mass) ** 2
    mk_thr = thresholds.mk_threshold
    side0 = 1 if rep0.mass * rep0.kinetic > mk_thr else -1
    flips, fails = [], []
    min_margin = np.inf
    worst = np.inf
    for s in record.samples:
        rep = s.report
        mk = rep.mass * rep.kinetic
        side = 1 if mk > mk_thr else -1
        if side != side0:
            flips.append(s.t)
        min_margin = min(min_margin, abs(mk - mk_thr) / mk_thr)
        try:
            b = sign_bound_from_values(
                rep.mass, rep.energy, rep.kinetic, rep.k_20_8, omega, thresholds, rel_slack
            )
        except NotApplicableError:
            fails.append(s.t)
            continue
        rel = b.margin / abs(b.k_20_8) if b.k_20_8 else 0.0
        worst = min(worst, rel)
        if not b.holds:
            fails.append(s.t)
    return PersistenceReport(
        side=side0,
        flipped=bool(flips),
        flip_times=tuple(flips),
        min_margin=float(min_margin),
        omega=float(omega),
        bound_held=not fails,
        bound_failures=tuple(fails),
        worst_bound_margin=float(worst),
    )


@dataclass(frozen=True)
class RuntimeVerdict:
    label: str
    termination: str
    horizon: float
    variance_concave: Optional[bool]
    scatter: Optional[dict]

    def to_dict(self) -> dict:
        return asdict(self)


def variance_second_differences(record: RunRecord) -> np.ndarray:
    """Central second differences of V over uniformly spaced samples."""
    t = record.times
    v = record.series("variance")
    if t.size < 3:
        return np.array([])
    dt = np.diff(t)
    uniform = np.abs(dt - dt[0]) <= 1e-9 * max(1.0, t[-1])
    n = int(np.argmin(uniform)) if not uniform.all() else dt.size
    v = v[: n + 1]
    return (v[2:] - 2 * v[1:-1] + v[:-2]) / dt[0] ** 2


def runtime_verdict(record: RunRecord) -> RuntimeVerdict:
    horizon = float(record.times[-1]) if record.samples else 0.0
    if record.termination == "blowup_indicator":
        d2 = variance_second_differences(record)
        concave = bool(d2.size and np.all(d2 < 0))
        return RuntimeVerdict(BLOW_UP_INDICATOR, record.termination, horizon, concave, None)
    if record.termination == "t_end":
        ev = scattering_diagnostic(record)
        label = CONSISTENT_WITH_SCATTERING if ev.consistent_with_scattering else INCONCLUSIVE
        return RuntimeVerdict(label, record.termination, horizon, None, ev.to_dict())
    return RuntimeVerdict(INCONCLUSIVE, record.termination, horizon, None, None)
