"""Scalar functionals of a field pair.

Conventions (both backends):

    M = |u|^2 + 2|v|^2                     mass
    K = |grad u|^2 + 1/2 |grad v|^2        kinetic
    P = Re int v conj(u)^2                 interaction
    E = K - 2P

On the radial backend the gradient norms come from the same staggered
derivative that defines the discrete Laplacian, so ``K == <f, -Lap_h f>``
exactly. On the Cartesian backend they are computed in Fourier space.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from math import pi

import numpy as np

from .errors import ConfigError, DivergedStateError, NotApplicableError, ResolutionError
from .grid import SPHERE_AREA, CartesianGrid, FieldPair, RadialGrid, resample_radial


@dataclass(frozen=True)
class FunctionalReport:
    mass: float
    energy: float
    kinetic: float
    interaction: float
    k_omega: float
    l_omega: float
    i_omega: float
    k_20_8: float
    momentum: tuple
    variance: float
    omega: float
    interaction_imag: float = field(default=0.0, compare=False)

    _JSON_KEYS = (
        "mass",
        "energy",
        "kinetic",
        "interaction",
        "k_omega",
        "l_omega",
        "i_omega",
        "k_20_8",
        "momentum",
        "variance",
        "omega",
    )

    def to_dict(self) -> dict:
        d = asdict(self)
        out = {k: d[k] for k in self._JSON_KEYS}
        out["momentum"] = [float(x) for x in self.momentum]
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "FunctionalReport":
        kw = {k: d[k] for k in cls._JSON_KEYS}
        kw["momentum"] = tuple(kw["momentum"])
        return cls(**kw)


@dataclass(frozen=True)
class ThresholdSet:
    me_threshold: float
    mk_threshold: float
    c_gn: float
    ground_mass: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class _Parts:
    u2: float
    v2: float
    gu2: float
    gv2: float
    p: float
    p_imag: float
    momentum: np.ndarray
    variance: float


def _radial_parts(pair: FieldPair) -> _Parts:
    g: RadialGrid = pair.grid
    u, v = pair.u, pair.v
    cm = g.cell_measure * SPHERE_AREA
    fm = g.face_measure * SPHERE_AREA
    du = g.face_derivative @ u
    dv = g.face_derivative @ v
    au, av = np.abs(u) ** 2, np.abs(v) ** 2
    p = np.dot(cm, v * np.conj(u) ** 2)
    r2 = g.nodes**2
    return _Parts(
        u2=float(np.dot(cm, au)),
        v2=float(np.dot(cm, av)),
        gu2=float(np.dot(fm, np.abs(du) ** 2)),
        gv2=float(np.dot(fm, np.abs(dv) ** 2)),
        p=float(p.real),
        p_imag=float(p.imag),
        momentum=np.zeros(5),
        variance=float(np.dot(cm, r2 * (au + 2 * av))),
    )


def _cartesian_parts(pair: FieldPair) -> _Parts:
    g: CartesianGrid = pair.grid
    u, v = pair.u, pair.v
    dv_ = g.cell_volume
    npts = u.size
    uh = np.fft.fftn(u)
    vh = np.fft.fftn(v)
    su = np.abs(uh) ** 2
    sv = np.abs(vh) ** 2
    k2 = g.k_squared
    au, av = np.abs(u) ** 2, np.abs(v) ** 2
    # the Nyquist mode has no partner of opposite sign; leave it out of the momentum
    kn = g.wavenumbers.copy()
    kn[g.n_per_axis // 2] = 0.0
    mom = np.array([dv_ / npts * np.sum(kn.reshape([-1 if i == j else 1 for i in range(5)]) * (su + sv))
                    for j in range(5)])
    p = dv_ * np.sum(v * np.conj(u) ** 2)
    return _Parts(
        u2=float(dv_ * np.sum(au)),
        v2=float(dv_ * np.sum(av)),
        gu2=float(dv_ / npts * np.sum(k2 * su)),
        gv2=float(dv_ / npts * np.sum(k2 * sv)),
        p=float(p.real),
        p_imag=float(p.imag),
        momentum=mom,
        variance=float(dv_ * np.sum(g.r_squared * (au + 2 * av))),
    )


def _parts(pair: FieldPair) -> _Parts:
    if pair.diverged:
        raise DivergedStateError("cannot evaluate functionals of a diverged state")
    if pair.backend == "radial":
        return _radial_parts(pair)
    return _cartesian_parts(pair)


def evaluate(pair: FieldPair, omega: float = 1.0) -> FunctionalReport:
    if not omega > 0:
        raise ConfigError(f"omega must be positive, got {omega!r}")
    c = _parts(pair)
    m = c.u2 + 2 * c.v2
    k = c.gu2 + 0.5 * c.gv2
    e = k - 2 * c.p
    return FunctionalReport(
        mass=m,
        energy=e,
        kinetic=k,
        interaction=c.p,
        k_omega=k + omega * m,
        l_omega=0.5 * omega * m + 0.1 * k,
        i_omega=0.5 * omega * m + 0.5 * e,
        k_20_8=8 * k - 20 * c.p,
        momentum=tuple(float(x) for x in c.momentum),
        variance=c.variance,
        omega=float(omega),
        interaction_imag=c.p_imag,
    )


def action(pair: FieldPair, omega: float) -> float:
    """I_omega alone, without assembling a full report."""
    return evaluate(pair, omega).i_omega


def k_alpha_beta(pair: FieldPair, omega: float, alpha: float, beta: float) -> float:
    """d/dlambda of I_omega along (e^{alpha l} u(e^{beta l} x), same for v) at l = 0."""
    c = _parts(pair)
    mass_c = 2 * alpha - 5 * beta
    kin_c = 2 * alpha - 3 * beta
    return (
        0.5 * omega * mass_c * c.u2
        + omega * mass_c * c.v2
        + 0.5 * kin_c * c.gu2
        + 0.25 * kin_c * c.gv2
        - (3 * alpha - 5 * beta) * c.p
    )


def _trig_resample_matrix(grid: CartesianGrid, s: float) -> np.ndarray:
    """Rows evaluate the periodic trigonometric interpolant at s * x_j."""
    n = grid.n_per_axis
    x = grid.axis
    k = grid.wavenumbers.copy()
    diff = s * x[:, None] - x[None, :]
    nyq = n // 2
    mat = np.zeros((n, n), dtype=np.complex128)
    for idx in range(n):
        if idx == nyq:
            mat += np.cos(k[idx] * diff)
        else:
            mat += np.exp(1j * k[idx] * diff)
    return (mat / n).real if np.allclose(mat.imag, 0, atol=1e-12) else mat / n


def _apply_axiswise(f: np.ndarray, mat: np.ndarray) -> np.ndarray:
    out = f
    for ax in range(f.ndim):
        out = np.moveaxis(np.tensordot(mat, out, axes=([1], [ax])), 0, ax)
    return out


def scale_transform(pair: FieldPair, alpha: float, beta: float, lam: float) -> FieldPair:
    """(e^{alpha lam} u(e^{beta lam} x), e^{alpha lam} v(e^{beta lam} x))."""
    if lam == 0:
        return pair
    amp = np.exp(alpha * lam)
    s = np.exp(beta * lam)
    if pair.backend == "radial":
        g = pair.grid
        u = resample_radial(pair.u, g, s * g.nodes)
        v = resample_radial(pair.v, g, s * g.nodes)
        out = FieldPair(amp * u, amp * v, g)
        _check_scaling_resolved(pair, out, alpha, beta, lam)
        return out
    g = pair.grid
    if s > 1:
        edge = max(_box_edge_fraction(pair.u, g, 1.0 / s), _box_edge_fraction(pair.v, g, 1.0 / s))
        if edge > 1e-10:
            raise ResolutionError(f"scaling by {s:.3g} pulls in {edge:.2e} of the peak from outside the box")
    mat = _trig_resample_matrix(g, s)
    return FieldPair(amp * _apply_axiswise(pair.u, mat), amp * _apply_axiswise(pair.v, mat), g)


# relative mismatch in M or K against their exact scaling laws that flags an unresolved rescale
SCALE_RESOLUTION_TOL = 1e-3


def _check_scaling_resolved(pair, out, alpha, beta, lam):
    a, b = _parts(pair), _parts(out)
    m0, k0 = a.u2 + 2 * a.v2, a.gu2 + 0.5 * a.gv2
    m1, k1 = b.u2 + 2 * b.v2, b.gu2 + 0.5 * b.gv2
    dm = abs(m1 - m0 * np.exp((2 * alpha - 5 * beta) * lam)) / max(m1, m0 * np.exp((2 * alpha - 5 * beta) * lam), 1e-300)
    dk = abs(k1 - k0 * np.exp((2 * alpha - 3 * beta) * lam)) / max(k1, k0 * np.exp((2 * alpha - 3 * beta) * lam), 1e-300)
    if max(dm, dk) > SCALE_RESOLUTION_TOL:
        raise ResolutionError(
            f"rescaling by e^{{{beta}*{lam:.3g}}} is not resolved on the grid "
            f"(mass off by {dm:.1e}, kinetic off by {dk:.1e})"
        )


def _box_edge_fraction(f: np.ndarray, grid: CartesianGrid, frac: float) -> float:
    peak = np.max(np.abs(f))
    if peak == 0:
        return 0.0
    outside = np.zeros(grid.shape, dtype=bool)
    for j in range(5):
        outside = outside | (np.abs(grid.coordinate(j)) > frac * grid.half_width)
    return float(np.max(np.abs(f[outside]), initial=0.0) / peak)


def nehari_projection_lambda(pair: FieldPair) -> float:
    """lambda_0 with K^{20,8} = 0 after scale_transform(pair, 20, 8, lambda_0)."""
    c = _parts(pair)
    k = c.gu2 + 0.5 * c.gv2
    if not c.p > 0:
        raise NotApplicableError(f"P = {c.p:.3e} <= 0: the scaling ray never meets the Nehari set")
    return 0.25 * np.log(2 * k / (5 * c.p))


def nehari_project(pair: FieldPair) -> FieldPair:
    return scale_transform(pair, 20.0, 8.0, nehari_projection_lambda(pair))


def momentum(pair: FieldPair) -> np.ndarray:
    if pair.backend == "radial":
        return np.zeros(5)
    return _cartesian_parts(pair).momentum


def phase_rotate(pair: FieldPair, theta: float) -> FieldPair:
    """(e^{i theta} u, e^{2 i theta} v): leaves M, K, P unchanged."""
    return FieldPair(np.exp(1j * theta) * pair.u, np.exp(2j * theta) * pair.v, pair.grid)


def check_boost(grid: CartesianGrid, xi0) -> np.ndarray:
    xi0 = np.asarray(xi0, dtype=float)
    if xi0.shape != (5,):
        raise ConfigError("xi0 must be a 5-vector")
    quantum = pi / grid.half_width
    ratio = xi0 / quantum
    if np.any(np.abs(ratio - np.round(ratio)) > 1e-9):
        raise ConfigError(f"xi0 must be a multiple of pi/L = {quantum:.6g} per component for periodicity")
    if np.linalg.norm(xi0) * grid.h > pi / 2:
        raise ResolutionError(f"|xi0| h = {np.linalg.norm(xi0) * grid.h:.3f} exceeds pi/2")
    return xi0


def spectral_translate(f: np.ndarray, grid: CartesianGrid, shift) -> np.ndarray:
    """f(x - shift) through the Fourier interpolant."""
    phase = np.zeros(grid.shape)
    for j in range(5):
        phase = phase + grid.wavenumber(j) * shift[j]
    return np.fft.ifftn(np.exp(-1j * phase) * np.fft.fftn(f))


def galilean_boost(pair: FieldPair, xi0, t: float = 0.0) -> FieldPair:
    if pair.backend != "cartesian":
        raise ConfigError("galilean_boost needs the Cartesian backend")
    g: CartesianGrid = pair.grid
    xi0 = check_boost(g, xi0)
    if not np.any(xi0):
        return pair
    shift = 2.0 * xi0 * t
    u = spectral_translate(pair.u, g, shift) if t else pair.u
    v = spectral_translate(pair.v, g, shift) if t else pair.v
    xdotxi = np.zeros(g.shape)
    for j in range(5):
        xdotxi = xdotxi + g.coordinate(j) * xi0[j]
    xi2 = float(xi0 @ xi0)
    u = np.exp(1j * (xdotxi - t * xi2)) * u
    v = np.exp(2j * (xdotxi - t * xi2)) * v
    return FieldPair(u, v, g)


def gn_ratio_parts(rep: FunctionalReport) -> float:
    return rep.mass**0.25 * rep.kinetic**1.25


def gn_inequality_gap(pair: FieldPair, thresholds: ThresholdSet) -> float:
    """C_GN M^{1/4} K^{5/4} - P; nonnegative for every pair."""
    rep = evaluate(pair, 1.0)
    if rep.mass == 0:
        raise NotApplicableError("GN gap is undefined for the zero pair")
    return thresholds.c_gn * gn_ratio_parts(rep) - rep.interaction


def gn_quotient(pair: FieldPair) -> float:
    """P / (M^{1/4} K^{5/4}); its supremum is C_GN."""
    rep = evaluate(pair, 1.0)
    if rep.mass == 0:
        raise NotApplicableError("GN quotient is undefined for the zero pair")
    return rep.interaction / gn_ratio_parts(rep)
