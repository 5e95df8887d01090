"""Discretizations of R^5.

Two backends share one field container:

* ``RadialGrid``: cell-centred nodes r_i = (i + 1/2) h on (0, r_max). The radial
  Laplacian is assembled in variational form, ``-Lap = W^{-1} D^T W' D``, where
  ``D`` is a fourteenth-order staggered derivative from cell centres to faces
  (even reflection through the origin, odd reflection through r_max) and
  ``W``/``W'`` are the r^4-weighted quadrature measures on cells and faces.
  The operator is therefore self-adjoint in the discrete L^2 product, and the
  linear flow is applied exactly through its eigendecomposition.
* ``CartesianGrid``: periodic box [-L, L)^5 with FFT differentiation in the
  angular-frequency convention (Fourier symbol of Lap is -|k|^2).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import cached_property
from math import factorial, pi
from pathlib import Path
from typing import Union

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.interpolate import CubicSpline
from scipy.special import bernoulli

from .errors import ConfigError, DivergedStateError, ResolutionError

SPHERE_AREA = 8.0 * pi**2 / 3.0  # |S^4|
DEFAULT_MEMORY_BUDGET = 256 * 2**20
MAGIC = b"RNLS1"
_BYTE_ORDER_MARK = 0x01020304
_BACKEND_CODES = {"radial": 0, "cartesian": 1}
# Stencil half-widths. Fourteenth order keeps the flux form accurate at the first
# cells, where dividing by r^4 ~ h^4 costs four orders.
STAGGERED_PAIRS = 7
CENTERED_PAIRS = 7


def _staggered_coefficients(pairs: int = 4) -> np.ndarray:
    """Weights a_k with f'(x) ~ sum_k a_k (f(x+(k-1/2)h) - f(x-(k-1/2)h)) / h."""
    offsets = np.arange(pairs) + 0.5
    # odd moments: sum_k a_k * 2 * o_k^(2p+1) = [p == 0]
    mat = np.array([2.0 * offsets ** (2 * p + 1) for p in range(pairs)])
    rhs = np.zeros(pairs)
    rhs[0] = 1.0
    return np.linalg.solve(mat, rhs)


def _centered_coefficients(pairs: int = 4) -> np.ndarray:
    """Weights b_k with f'(x) ~ sum_k b_k (f(x+kh) - f(x-kh)) / h."""
    offsets = np.arange(1, pairs + 1, dtype=float)
    mat = np.array([2.0 * offsets ** (2 * p + 1) for p in range(pairs)])
    rhs = np.zeros(pairs)
    rhs[0] = 1.0
    return np.linalg.solve(mat, rhs)


def _midpoint_end_correction(m: int = 6) -> np.ndarray:
    """Additive weight corrections (units of h) for the last m midpoint nodes.

    Cancels the right-end Euler-Maclaurin terms of the midpoint rule for
    polynomials of degree < m. Entry j belongs to the j-th node counted from the
    end. The left end needs nothing: every integrand here is r^4 times an even
    function, whose odd derivatives vanish at the origin.
    """
    bern = bernoulli(m + 1)
    vander = np.empty((m, m))
    rhs = np.zeros(m)
    for p in range(m):
        vander[p] = (-(np.arange(m) + 0.5)) ** p / factorial(p)
        if p % 2 == 1:
            b_half = (2.0 ** (-p) - 1.0) * bern[p + 1]  # B_{p+1}(1/2)
            rhs[p] = -b_half / factorial(p + 1)
    return np.linalg.solve(vander, rhs)


def _reflect(index: int, n: int) -> tuple[int, float]:
    """Map a ghost cell index onto the real cells: even at 0, odd at r_max."""
    if index < 0:
        return -1 - index, 1.0
    if index >= n:
        return 2 * n - 1 - index, -1.0
    return index, 1.0


@dataclass(frozen=True, eq=False)
class RadialGrid:
    n_points: int
    r_max: float
    backend: str = field(default="radial", init=False)

    @property
    def shape(self) -> tuple[int]:
        return (self.n_points,)

    @property
    def h(self) -> float:
        return self.r_max / self.n_points

    @cached_property
    def nodes(self) -> np.ndarray:
        return (np.arange(self.n_points) + 0.5) * self.h

    @cached_property
    def faces(self) -> np.ndarray:
        return np.arange(self.n_points + 1) * self.h

    @cached_property
    def quad_weights(self) -> np.ndarray:
        """w_i with  int f(|x|) dx ~ |S^4| sum_i w_i f(r_i) r_i^4."""
        w = np.full(self.n_points, self.h)
        corr = _midpoint_end_correction(6)
        w[-1 : -len(corr) - 1 : -1] += self.h * corr
        return w

    @cached_property
    def cell_measure(self) -> np.ndarray:
        return self.quad_weights * self.nodes**4

    @cached_property
    def face_measure(self) -> np.ndarray:
        wf = self.h * self.faces**4
        wf[-1] *= 0.5
        return wf

    @cached_property
    def face_derivative(self) -> sp.csr_matrix:
        """Staggered d/dr from cells to faces, shape (n+1, n)."""
        n = self.n_points
        a = _staggered_coefficients(STAGGERED_PAIRS)
        rows, cols, vals = [], [], []
        for j in range(n + 1):
            for k, ak in enumerate(a, start=1):
                for idx, sgn in ((j + k - 1, 1.0), (j - k, -1.0)):
                    c, s = _reflect(idx, n)
                    rows.append(j)
                    cols.append(c)
                    vals.append(sgn * s * ak / self.h)
        return sp.csr_matrix((vals, (rows, cols)), shape=(n + 1, n))

    @cached_property
    def cell_derivative(self) -> sp.csr_matrix:
        """Centred fourteenth-order d/dr evaluated at the nodes, shape (n, n)."""
        n = self.n_points
        b = _centered_coefficients(CENTERED_PAIRS)
        rows, cols, vals = [], [], []
        for i in range(n):
            for k, bk in enumerate(b, start=1):
                for idx, sgn in ((i + k, 1.0), (i - k, -1.0)):
                    c, s = _reflect(idx, n)
                    rows.append(i)
                    cols.append(c)
                    vals.append(sgn * s * bk / self.h)
        return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))

    @cached_property
    def stiffness(self) -> sp.csr_matrix:
        """A = D^T W' D, so that -Lap_h = W^{-1} A and K-type forms are f^* A f."""
        d = self.face_derivative
        return (d.T @ sp.diags(self.face_measure) @ d).tocsr()

    @cached_property
    def stiffness_bandwidth(self) -> int:
        coo = self.stiffness.tocoo()
        return int(np.max(np.abs(coo.row - coo.col)))

    def banded_operator(self, mass_shift: float, stiff_coeff: float) -> np.ndarray:
        """Upper banded storage of  mass_shift * W + stiff_coeff * A  (for solveh_banded)."""
        bw = self.stiffness_bandwidth
        n = self.n_points
        mat = (stiff_coeff * self.stiffness + sp.diags(mass_shift * self.cell_measure)).todia()
        ab = np.zeros((bw + 1, n))
        for off, diag in zip(mat.offsets, mat.data):
            if 0 <= off <= bw:
                ab[bw - off, off:] = diag[off:]
        return ab

    @cached_property
    def eigensystem(self) -> tuple[np.ndarray, np.ndarray]:
        """(lam, Q): -Lap_h = W^{-1/2} Q diag(lam) Q^T W^{1/2}."""
        s = 1.0 / np.sqrt(self.cell_measure)
        b = (sp.diags(s) @ self.stiffness @ sp.diags(s)).toarray()
        lam, q = scipy.linalg.eigh(b, overwrite_a=True, check_finite=False)
        return np.clip(lam, 0.0, None), q

    def integrate(self, f: np.ndarray) -> complex:
        """Integral over R^5 of a radial function sampled on the nodes."""
        return SPHERE_AREA * np.dot(self.cell_measure, f)

    def interpolant(self, f: np.ndarray) -> CubicSpline:
        """Even cubic spline through the samples, mirrored through the origin."""
        r = np.concatenate([-self.nodes[::-1], self.nodes])
        y = np.concatenate([f[::-1], f])
        return CubicSpline(r, y, bc_type="not-a-knot")


@dataclass(frozen=True, eq=False)
class CartesianGrid:
    n_per_axis: int
    half_width: float
    memory_budget: int = DEFAULT_MEMORY_BUDGET
    backend: str = field(default="cartesian", init=False)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n_per_axis,) * 5

    @property
    def h(self) -> float:
        return 2.0 * self.half_width / self.n_per_axis

    @property
    def cell_volume(self) -> float:
        return self.h**5

    @cached_property
    def axis(self) -> np.ndarray:
        return -self.half_width + self.h * np.arange(self.n_per_axis)

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        return 2.0 * pi * np.fft.fftfreq(self.n_per_axis, d=self.h)

    def coordinate(self, j: int) -> np.ndarray:
        """x_j as a broadcastable array."""
        shape = [1] * 5
        shape[j] = self.n_per_axis
        return self.axis.reshape(shape)

    def wavenumber(self, j: int) -> np.ndarray:
        shape = [1] * 5
        shape[j] = self.n_per_axis
        return self.wavenumbers.reshape(shape)

    @cached_property
    def k_squared(self) -> np.ndarray:
        k2 = np.zeros(self.shape)
        for j in range(5):
            k2 = k2 + self.wavenumber(j) ** 2
        return k2

    @cached_property
    def r_squared(self) -> np.ndarray:
        r2 = np.zeros(self.shape)
        for j in range(5):
            r2 = r2 + self.coordinate(j) ** 2
        return r2

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        kmax = np.max(np.abs(self.wavenumbers))
        keep = np.abs(self.wavenumbers) <= (2.0 / 3.0) * kmax
        mask = np.ones(self.shape, dtype=bool)
        for j in range(5):
            shape = [1] * 5
            shape[j] = self.n_per_axis
            mask = mask & keep.reshape(shape)
        return mask

    def integrate(self, f: np.ndarray) -> complex:
        return self.cell_volume * np.sum(f)


Grid = Union[RadialGrid, CartesianGrid]


def make_radial_grid(n_points: int, r_max: float) -> RadialGrid:
    if int(n_points) != n_points or n_points < 16:
        raise ConfigError(f"n_points must be an integer >= 16, got {n_points!r}")
    if not np.isfinite(r_max) or r_max <= 0:
        raise ConfigError(f"r_max must be positive, got {r_max!r}")
    return RadialGrid(int(n_points), float(r_max))


def make_cartesian_grid(
    n_per_axis: int = 16, half_width: float = 10.0, memory_budget: int = DEFAULT_MEMORY_BUDGET
) -> CartesianGrid:
    if int(n_per_axis) != n_per_axis or n_per_axis < 4 or n_per_axis % 2:
        raise ConfigError(f"n_per_axis must be an even integer >= 4, got {n_per_axis!r}")
    if not np.isfinite(half_width) or half_width <= 0:
        raise ConfigError(f"half_width must be positive, got {half_width!r}")
    need = 2 * 16 * int(n_per_axis) ** 5
    if need > memory_budget:
        raise ConfigError(
            f"n_per_axis={n_per_axis} needs {need / 2**20:.0f} MiB for two fields, "
            f"budget is {memory_budget / 2**20:.0f} MiB"
        )
    return CartesianGrid(int(n_per_axis), float(half_width), int(memory_budget))


@dataclass(frozen=True, eq=False)
class FieldPair:
    """The state (u, v) on one grid. Arrays are treated as immutable."""

    u: np.ndarray
    v: np.ndarray
    grid: Grid
    diverged: bool = False

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.complex128)
        v = np.asarray(self.v, dtype=np.complex128)
        if u.shape != self.grid.shape or v.shape != self.grid.shape:
            raise ConfigError(f"field shapes {u.shape}, {v.shape} do not match grid {self.grid.shape}")
        if not self.diverged and not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise DivergedStateError("non-finite entries in field pair")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @property
    def backend(self) -> str:
        return self.grid.backend

    @classmethod
    def zeros(cls, grid: Grid) -> "FieldPair":
        return cls(np.zeros(grid.shape), np.zeros(grid.shape), grid)

    def scaled(self, a: complex) -> "FieldPair":
        return FieldPair(a * self.u, a * self.v, self.grid)

    def with_fields(self, u: np.ndarray, v: np.ndarray) -> "FieldPair":
        return FieldPair(u, v, self.grid)

    def l2_distance(self, other: "FieldPair") -> float:
        """Relative discrete L^2 distance of the stacked pair (u, v)."""
        num = _l2_sq(self.u - other.u, self.grid) + _l2_sq(self.v - other.v, self.grid)
        den = _l2_sq(other.u, self.grid) + _l2_sq(other.v, self.grid)
        return float(np.sqrt(num / den)) if den > 0 else float(np.sqrt(num))


def _l2_sq(f: np.ndarray, grid: Grid) -> float:
    return float(np.real(grid.integrate(np.abs(f) ** 2)))


def l2_norm(f: np.ndarray, grid: Grid) -> float:
    return float(np.sqrt(_l2_sq(f, grid)))


# ---------------------------------------------------------------- operators


def laplacian_radial(f: np.ndarray, grid: RadialGrid) -> np.ndarray:
    f = np.asarray(f)
    if f.shape != grid.shape:
        raise ConfigError(f"field shape {f.shape} does not match grid {grid.shape}")
    return -(grid.stiffness @ f) / grid.cell_measure


def laplacian_cartesian(f: np.ndarray, grid: CartesianGrid) -> np.ndarray:
    return np.fft.ifftn(-grid.k_squared * np.fft.fftn(f))


def laplacian(f: np.ndarray, grid: Grid) -> np.ndarray:
    if grid.backend == "radial":
        return laplacian_radial(f, grid)
    return laplacian_cartesian(f, grid)


def to_modes(f: np.ndarray, grid: RadialGrid) -> np.ndarray:
    """Coefficients of f in the orthonormal eigenbasis of -Lap_h (columns of f allowed)."""
    _, q = grid.eigensystem
    s = np.sqrt(grid.cell_measure)
    if f.ndim == 1:
        g = s * f
    else:
        g = s[:, None] * f
    return _real_matmul(q.T, g)


def from_modes(c: np.ndarray, grid: RadialGrid) -> np.ndarray:
    _, q = grid.eigensystem
    s = 1.0 / np.sqrt(grid.cell_measure)
    out = _real_matmul(q, c)
    return s * out if out.ndim == 1 else s[:, None] * out


def _real_matmul(mat: np.ndarray, x: np.ndarray) -> np.ndarray:
    # One real GEMM on stacked (Re, Im) columns beats a complex-by-real product.
    if np.iscomplexobj(x):
        flat = x.reshape(x.shape[0], -1)
        stacked = np.concatenate([flat.real, flat.imag], axis=1)
        res = mat @ stacked
        k = flat.shape[1]
        return (res[:, :k] + 1j * res[:, k:]).reshape(x.shape)
    return mat @ x


def half_laplacian_propagate_radial(
    f: np.ndarray, grid: RadialGrid, t: float, mass_coeff: float = 1.0
) -> np.ndarray:
    """exp(i t c Lap_h) f, exact for the discrete operator."""
    if t == 0:
        return np.array(f, dtype=np.complex128)
    lam, _ = grid.eigensystem
    c = to_modes(np.asarray(f, dtype=np.complex128), grid)
    return from_modes(np.exp(-1j * t * mass_coeff * lam) * c, grid)


def propagate_pair_radial(u: np.ndarray, v: np.ndarray, grid: RadialGrid, t: float):
    """Free flow of both components at once (mass coefficients 1 and 1/2)."""
    lam, _ = grid.eigensystem
    c = to_modes(np.stack([u, v], axis=1), grid)
    c[:, 0] *= np.exp(-1j * t * lam)
    c[:, 1] *= np.exp(-0.5j * t * lam)
    out = from_modes(c, grid)
    return out[:, 0].copy(), out[:, 1].copy()


def fourier_propagate_cartesian(
    f: np.ndarray, grid: CartesianGrid, t: float, mass_coeff: float = 1.0
) -> np.ndarray:
    if t == 0:
        return np.array(f, dtype=np.complex128)
    return np.fft.ifftn(np.exp(-1j * t * mass_coeff * grid.k_squared) * np.fft.fftn(f))


def propagate(f: np.ndarray, grid: Grid, t: float, mass_coeff: float = 1.0) -> np.ndarray:
    if grid.backend == "radial":
        return half_laplacian_propagate_radial(f, grid, t, mass_coeff)
    return fourier_propagate_cartesian(f, grid, t, mass_coeff)


def resample_radial(f: np.ndarray, grid: RadialGrid, r: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Evaluate the even spline of f at radii r; zero beyond r_max.

    Raises ResolutionError when points beyond the grid would need values larger
    than ``tol`` times the field's sup norm.
    """
    r = np.asarray(r, dtype=float)
    scale = np.max(np.abs(f)) if f.size else 0.0
    out = np.zeros(r.shape, dtype=np.complex128)
    inside = r <= grid.nodes[-1]
    if np.any(~inside) and scale > 0:
        edge = np.max(np.abs(f[-8:]))
        if edge > tol * scale:
            raise ResolutionError(
                f"field is {edge / scale:.2e} of its peak at r_max; cannot extend beyond the grid"
            )
    re = grid.interpolant(np.real(f))(r[inside])
    im = grid.interpolant(np.imag(f))(r[inside])
    out[inside] = re + 1j * im
    return out


def regrid(pair: FieldPair, new_grid: RadialGrid) -> FieldPair:
    """Move a radial pair onto another radial grid by spline interpolation."""
    if pair.backend != "radial":
        raise ConfigError("regrid applies to radial pairs only")
    u = resample_radial(pair.u, pair.grid, new_grid.nodes, tol=1e-8)
    v = resample_radial(pair.v, pair.grid, new_grid.nodes, tol=1e-8)
    return FieldPair(u, v, new_grid)


def radial_to_cartesian(profile, grid: CartesianGrid) -> np.ndarray:
    """Sample a callable radial profile g(r) on the Cartesian box."""
    return np.asarray(profile(np.sqrt(grid.r_squared)), dtype=np.complex128)


# ---------------------------------------------------------------- binary container


def pair_to_bytes(pair: FieldPair) -> bytes:
    grid = pair.grid
    if grid.backend == "radial":
        n, extent = grid.n_points, grid.r_max
    else:
        n, extent = grid.n_per_axis, grid.half_width
    header = MAGIC + struct.pack(
        "<IBQd", _BYTE_ORDER_MARK, _BACKEND_CODES[grid.backend], n, extent
    )
    body = np.concatenate([pair.u.ravel(), pair.v.ravel()]).astype("<c16").tobytes()
    return header + body


def pair_from_bytes(data: bytes) -> FieldPair:
    if data[: len(MAGIC)] != MAGIC:
        raise ConfigError("not an RNLS1 field container")
    off = len(MAGIC)
    bom = struct.unpack_from("<I", data, off)[0]
    if bom != _BYTE_ORDER_MARK:
        raise ConfigError("byte-order marker mismatch")
    _, code, n, extent = struct.unpack_from("<IBQd", data, off)
    off += struct.calcsize("<IBQd")
    backend = {v: k for k, v in _BACKEND_CODES.items()}[code]
    grid = make_radial_grid(n, extent) if backend == "radial" else make_cartesian_grid(n, extent)
    arr = np.frombuffer(data, dtype="<c16", offset=off).astype(np.complex128)
    size = int(np.prod(grid.shape))
    if arr.size != 2 * size:
        raise ConfigError(f"payload holds {arr.size} values, expected {2 * size}")
    return FieldPair(arr[:size].reshape(grid.shape), arr[size:].reshape(grid.shape), grid)


def save_pair(pair: FieldPair, path) -> Path:
    path = Path(path)
    path.write_bytes(pair_to_bytes(pair))
    return path


def load_pair(path) -> FieldPair:
    return pair_from_bytes(Path(path).read_bytes())

