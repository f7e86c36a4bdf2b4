"""Frozen fast-scale generator on the unit torus: invariant measure and cell problem.

For frozen slow state x and measure mu, the fast generator is

    L g = f(x, y, mu) . grad g + 1/2 A(x, y, mu) : hess g,      A = sigma sigma^T,

acting on 1-periodic functions of y.  This module discretizes L on a regular
grid of the d-torus, solves the stationarity equation L* pi = 0 with unit
mass, and solves the cell (corrector) problem L phi_l = -f_l with pi-mean
zero, which is solvable exactly when f is centered against pi.

Two interchangeable discretizations:

* ``"fd"``: 4th-order centered finite differences with periodic wraparound,
  assembled sparse.  Works in any dimension up to 3 and keeps solves cheap.
* ``"spectral"``: Fourier differentiation matrices (dense), exponentially
  accurate for smooth coefficients.  Dense solves limit it to d <= 2.

Both null-space solves use a bordered system instead of pinning a node: the
normalization row `sum_i w_i pi_i = 1` (or the pi-mean-zero row for phi) is
appended together with a compatibility column, which keeps the matrix sparse
and enforces the constraint exactly at quadrature level.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import toeplitz, lu_factor, lu_solve

from .errors import CenteringError, EllipticityError, SolverError, ValidationError

DEFAULT_N = {1: 256, 2: 64, 3: 32}

# ellipticity floor below which A is treated as degenerate
ELLIPTICITY_TOL = 1e-10
# refuse the cell solve when |int f_l pi| exceeds this times max|f_l|
CENTERING_TOL = 1e-6
# post-solve residual guard, relative to the data scale
RESIDUAL_TOL = 1e-8


class TorusGrid:
    """Regular grid on [0,1)^dim with n nodes per axis, C-ordered flat index."""

    def __init__(self, dim: int, n: int | None = None):
        if dim not in (1, 2, 3):
            raise ValidationError(f"torus dimension must be 1, 2 or 3, got {dim}")
        if n is None:
            n = DEFAULT_N[dim]
        if n < 8:
            raise ValidationError(f"need at least 8 nodes per axis, got {n}")
        self.dim = dim
        self.n = int(n)
        self.h = 1.0 / self.n
        self.size = self.n ** dim
        axes = [np.arange(self.n) * self.h] * dim
        mesh = np.meshgrid(*axes, indexing="ij")
        self.nodes = np.stack([m.ravel() for m in mesh], axis=1)  # (size, dim)

    @property
    def weight(self) -> float:
        """Quadrature weight of one node (midpoint rule, uniform)."""
        return self.h ** self.dim

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Integral over the torus of nodal values, along the first axis."""
        return np.asarray(values).sum(axis=0) * self.weight

    def reshape(self, flat: np.ndarray) -> np.ndarray:
        return np.asarray(flat).reshape((self.n,) * self.dim + flat.shape[1:])


# ---------------------------------------------------------------------------
# one-dimensional differentiation matrices

@lru_cache(maxsize=32)
def _fd_d1(n: int) -> sp.csr_matrix:
    # (-g[i+2] + 8 g[i+1] - 8 g[i-1] + g[i-2]) / (12 h), periodic
    h = 1.0 / n
    out = None
    for off, c in [(-2, 1.0), (-1, -8.0), (1, 8.0), (2, -1.0)]:
        m = sp.eye(n, k=off, format="csr") + sp.eye(n, k=off - np.sign(off) * n, format="csr")
        out = m * c if out is None else out + m * c
    return (out / (12.0 * h)).tocsr()


@lru_cache(maxsize=32)
def _fd_d2(n: int) -> sp.csr_matrix:
    # (-g[i+2] + 16 g[i+1] - 30 g[i] + 16 g[i-1] - g[i-2]) / (12 h^2), periodic
    h = 1.0 / n
    diags = [(-2, -1.0), (-1, 16.0), (0, -30.0), (1, 16.0), (2, -1.0)]
    out = None
    for off, c in diags:
        m = sp.eye(n, k=off, format="csr")
        if off != 0:
            m = m + sp.eye(n, k=off - np.sign(off) * n, format="csr")
        out = m * c if out is None else out + m * c
    return (out / (12.0 * h * h)).tocsr()


@lru_cache(maxsize=32)
def _spectral_d1(n: int) -> np.ndarray:
    if n % 2 != 0:
        raise ValidationError("spectral scheme needs an even number of nodes")
    h = 2.0 * np.pi / n
    j = np.arange(1, n)
    col = np.zeros(n)
    col[1:] = 0.5 * (-1.0) ** j / np.tan(j * h / 2.0)
    # kernel is odd in (i - j); scale from period 2*pi to period 1
    return toeplitz(col, -col) * (2.0 * np.pi)


@lru_cache(maxsize=32)
def _spectral_d2(n: int) -> np.ndarray:
    if n % 2 != 0:
        raise ValidationError("spectral scheme needs an even number of nodes")
    h = 2.0 * np.pi / n
    j = np.arange(1, n)
    col = np.zeros(n)
    col[0] = -np.pi ** 2 / (3.0 * h * h) - 1.0 / 6.0
    col[1:] = -0.5 * (-1.0) ** j / np.sin(j * h / 2.0) ** 2
    return toeplitz(col) * (2.0 * np.pi) ** 2


def d1_matrix(n: int, scheme: str):
    """First-derivative matrix on n periodic nodes of [0,1)."""
    if scheme == "fd":
        return _fd_d1(n)
    if scheme == "spectral":
        return _spectral_d1(n)
    raise ValidationError(f"unknown scheme {scheme!r}, expected 'fd' or 'spectral'")


def d2_matrix(n: int, scheme: str):
    """Second-derivative matrix on n periodic nodes of [0,1)."""
    if scheme == "fd":
        return _fd_d2(n)
    if scheme == "spectral":
        return _spectral_d2(n)
    raise ValidationError(f"unknown scheme {scheme!r}, expected 'fd' or 'spectral'")


def _kron_chain(mats, sparse: bool):
    out = mats[0]
    for m in mats[1:]:
        out = sp.kron(out, m, format="csr") if sparse else np.kron(out, m)
    return out


def _axis_operator(one_d, axis: int, grid: TorusGrid, sparse: bool):
    eye = sp.identity(grid.n, format="csr") if sparse else np.eye(grid.n)
    return _kron_chain([one_d if k == axis else eye for k in range(grid.dim)], sparse)


def _mixed_operator(d1, ax1: int, ax2: int, grid: TorusGrid, sparse: bool):
    eye = sp.identity(grid.n, format="csr") if sparse else np.eye(grid.n)
    mats = [d1 if k in (ax1, ax2) else eye for k in range(grid.dim)]
    return _kron_chain(mats, sparse)


def apply_axis_derivative(values: np.ndarray, grid: TorusGrid, axis: int,
                          scheme: str, order: int = 1) -> np.ndarray:
    """Apply the 1-D derivative matrix along one torus axis of nodal values."""
    mat = d1_matrix(grid.n, scheme) if order == 1 else d2_matrix(grid.n, scheme)
    extra = values.shape[1:]
    v = values.reshape((grid.n,) * grid.dim + extra)
    v = np.moveaxis(v, axis, 0).reshape(grid.n, -1)
    out = mat @ v
    out = out.reshape((grid.n,) + (grid.n,) * (grid.dim - 1) + extra)
    out = np.moveaxis(out, 0, axis)
    return out.reshape((grid.size,) + extra)


# ---------------------------------------------------------------------------
# coefficient container

@dataclass
class FastCoefficients:
    """Callable coefficients of the fast generator.

    ``f(x, y, mu)`` maps query points ``y`` of shape (M, dim) to drift values
    (M, dim); ``sigma(x, y, mu)`` to (M, dim, noise_dim).  ``x`` is a slow
    state of shape (dim_x,) or None, ``mu`` an empirical measure or None.
    Flags declare which arguments the callables actually read, so solvers
    know when a single cell solve can be reused.
    """

    dim: int
    f: Callable
    sigma: Callable
    noise_dim: int | None = None
    x_dependent: bool = False
    mu_dependent: bool = False
    drift_slow: Callable | None = None  # b(x, y, mu), used by the simulator

    def __post_init__(self):
        if self.noise_dim is None:
            self.noise_dim = self.dim

    def fields(self, grid: TorusGrid, x=None, mu=None):
        """Evaluate (f, A) on the grid; A = sigma sigma^T, symmetrized."""
        y = grid.nodes
        fv = np.asarray(self.f(x, y, mu), dtype=float)
        if fv.shape != (grid.size, self.dim):
            raise ValidationError(
                f"fast drift returned shape {fv.shape}, expected {(grid.size, self.dim)}")
        sv = np.asarray(self.sigma(x, y, mu), dtype=float)
        if sv.ndim == 2:  # constant matrix, broadcast over nodes
            sv = np.broadcast_to(sv, (grid.size,) + sv.shape)
        if sv.shape != (grid.size, self.dim, self.noise_dim):
            raise ValidationError(
                f"fast diffusion returned shape {sv.shape}, "
                f"expected {(grid.size, self.dim, self.noise_dim)}")
        a = np.einsum("nik,njk->nij", sv, sv)
        a = 0.5 * (a + np.swapaxes(a, 1, 2))
        return fv, a


def ellipticity_floor(a_vals: np.ndarray) -> float:
    """Smallest eigenvalue of A over the grid."""
    return float(np.linalg.eigvalsh(a_vals)[:, 0].min())


def assemble_generator(grid: TorusGrid, f_vals: np.ndarray, a_vals: np.ndarray,
                       scheme: str):
    """Discretize L = f.grad + 1/2 A:hess on the grid.

    Returns a CSR matrix for the fd scheme and a dense ndarray for the
    spectral scheme.  Raises EllipticityError when A degenerates.
    """
    if scheme == "spectral" and grid.dim > 2:
        raise ValidationError("spectral scheme is limited to dimensions 1 and 2")
    lam = ellipticity_floor(a_vals)
    if lam < ELLIPTICITY_TOL:
        raise EllipticityError(
            f"diffusion matrix eigenvalue floor {lam:.3e} below {ELLIPTICITY_TOL:.1e}")
    sparse = scheme == "fd"
    d1 = d1_matrix(grid.n, scheme)
    d2 = d2_matrix(grid.n, scheme)

    def dmul(diag_vals, op):
        if sparse:
            return sp.diags(diag_vals) @ op
        return diag_vals[:, None] * op

    L = None
    for k in range(grid.dim):
        term = dmul(f_vals[:, k], _axis_operator(d1, k, grid, sparse))
        term = term + dmul(0.5 * a_vals[:, k, k], _axis_operator(d2, k, grid, sparse))
        L = term if L is None else L + term
    for k in range(grid.dim):
        for l in range(k + 1, grid.dim):
            # off-diagonal pair contributes A_kl * d^2/dy_k dy_l (both orders)
            L = L + dmul(a_vals[:, k, l], _mixed_operator(d1, k, l, grid, sparse))
    return L.tocsr() if sparse else L


# ---------------------------------------------------------------------------
# null-space solves

def _bordered_solve(mat, cols: np.ndarray, rows: np.ndarray, rhs: np.ndarray):
    """Solve [[mat, cols], [rows^T, 0]] [u; lam] = rhs for possibly many rhs."""
    m = mat.shape[0]
    rhs = np.atleast_2d(rhs.T).T  # (m+1, k)
    if sp.issparse(mat):
        big = sp.bmat([[mat, cols.reshape(m, 1)],
                       [rows.reshape(1, m), None]], format="csc")
        lu = spla.splu(big)
        sols = np.stack([lu.solve(rhs[:, j]) for j in range(rhs.shape[1])], axis=1)
    else:
        big = np.zeros((m + 1, m + 1))
        big[:m, :m] = mat
        big[:m, m] = cols
        big[m, :m] = rows
        sols = lu_solve(lu_factor(big), rhs)
    return sols[:m], sols[m]


def solve_invariant_measure(L, grid: TorusGrid):
    """Solve L* pi = 0 with unit mass; returns (pi, sup residual of L* pi).

    The discrete adjoint has a one-dimensional null space under ellipticity;
    the bordered system appends the quadrature normalization, which selects
    the density normalized to integrate to exactly 1.
    """
    m = grid.size
    LT = L.T.tocsr() if sp.issparse(L) else np.ascontiguousarray(L.T)
    rhs = np.zeros(m + 1)
    rhs[m] = 1.0
    pi, _ = _bordered_solve(LT, np.ones(m), np.full(m, grid.weight), rhs)
    pi = pi[:, 0]
    resid = float(np.max(np.abs(LT @ pi)))
    scale = max(float(np.max(np.abs(pi))), 1.0)
    if resid > RESIDUAL_TOL * scale * (np.abs(LT).max() if not sp.issparse(LT)
                                       else abs(LT).max()):
        raise SolverError(f"stationarity residual {resid:.3e} failed the solve check")
    if pi.min() < -1e-10 * max(pi.max(), 1.0):
        raise SolverError(f"invariant density has negative mass {pi.min():.3e}")
    if pi.min() < 0.0:
        # roundoff-scale negatives only; clip and restore exact unit mass
        pi = np.clip(pi, 0.0, None)
        pi = pi / grid.integrate(pi)
    mass = grid.integrate(pi)
    if abs(mass - 1.0) > 1e-12:
        raise SolverError(f"invariant density mass {mass!r} not normalized")
    return pi, resid


def check_centering(f_vals: np.ndarray, pi: np.ndarray, grid: TorusGrid) -> np.ndarray:
    """Centering defect int f pi dy, componentwise; must vanish for the cell problem."""
    return grid.integrate(f_vals * pi[:, None])


def solve_cell_problem(L, pi: np.ndarray, f_vals: np.ndarray, grid: TorusGrid,
                       centering_tol: float = CENTERING_TOL):
    """Solve L phi_l = -f_l with pi-mean zero for each component l.

    Raises CenteringError when int f pi is too large relative to sup|f|; the
    residual that remains below the gate is projected out so the discrete
    system is exactly solvable.
    """
    m, dim = f_vals.shape
    defect = check_centering(f_vals, pi, grid)
    scale = np.maximum(np.abs(f_vals).max(axis=0), 1e-300)
    rel = np.abs(defect) / scale
    if np.any(rel > centering_tol):
        worst = int(np.argmax(rel))
        raise CenteringError(
            f"fast drift component {worst} has centering defect "
            f"{defect[worst]:.3e} (relative {rel[worst]:.3e} > {centering_tol:.1e}); "
            "the cell problem is not solvable for this coefficient set")
    rhs = np.zeros((m + 1, dim))
    rhs[:m] = -(f_vals - defect[None, :])  # project onto the solvable range
    weights = pi * grid.weight
    phi, _ = _bordered_solve(L, np.ones(m), weights, rhs)
    resid = np.max(np.abs(L @ phi + (f_vals - defect[None, :])), axis=0)
    if np.any(resid > RESIDUAL_TOL * np.maximum(scale, 1.0) * 1e3):
        raise SolverError(f"cell residuals {resid} failed the solve check")
    return phi, resid, defect


@dataclass
class CellSolution:
    """Invariant measure and corrector of one frozen fast generator."""

    grid: TorusGrid
    scheme: str
    pi: np.ndarray            # (size,)
    phi: np.ndarray           # (size, dim)
    grad_phi: np.ndarray      # (size, dim, dim); [n, l, k] = d phi_l / d y_k
    f_vals: np.ndarray        # (size, dim)
    a_vals: np.ndarray        # (size, dim, dim)
    centering: np.ndarray     # (dim,)
    residual_pi: float
    residual_phi: np.ndarray
    x: np.ndarray | None = None
    provenance: dict = field(default_factory=dict)

    def pi_average(self, values: np.ndarray) -> np.ndarray:
        """pi-weighted average over the torus; values indexed (size, ...)."""
        w = self.pi * self.grid.weight
        return np.tensordot(w, values, axes=(0, 0))

    def save_csv(self, path) -> None:
        dim = self.grid.dim
        header = [f"y{k+1}" for k in range(dim)] + ["pi"] + [f"phi{k+1}" for k in range(dim)]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for i in range(self.grid.size):
                w.writerow([repr(float(v)) for v in self.grid.nodes[i]]
                           + [repr(float(self.pi[i]))]
                           + [repr(float(v)) for v in self.phi[i]])


def load_cell_csv(path):
    """Read back (nodes, pi, phi) from a cell-solution CSV."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        dim = sum(1 for name in header if name.startswith("y"))
        data = np.array([[float(v) for v in row] for row in reader])
    return data[:, :dim], data[:, dim], data[:, dim + 1:]


def solve_cell(coeffs: FastCoefficients, x=None, mu=None, scheme: str = "auto",
               n: int | None = None, centering_tol: float = CENTERING_TOL) -> CellSolution:
    """Full frozen-cell workflow: assemble, stationary measure, corrector, gradient."""
    if scheme == "auto":
        scheme = "spectral" if coeffs.dim <= 2 else "fd"
    grid = TorusGrid(coeffs.dim, n)
    f_vals, a_vals = coeffs.fields(grid, x, mu)
    L = assemble_generator(grid, f_vals, a_vals, scheme)
    pi, resid_pi = solve_invariant_measure(L, grid)
    phi, resid_phi, defect = solve_cell_problem(L, pi, f_vals, grid, centering_tol)
    grad_phi = np.stack(
        [apply_axis_derivative(phi, grid, k, scheme) for k in range(grid.dim)],
        axis=2)  # (size, l, k)
    return CellSolution(
        grid=grid, scheme=scheme, pi=pi, phi=phi, grad_phi=grad_phi,
        f_vals=f_vals, a_vals=a_vals, centering=defect,
        residual_pi=resid_pi, residual_phi=resid_phi,
        x=None if x is None else np.asarray(x, dtype=float),
        provenance={"n": grid.n, "scheme": scheme,
                    "centering_tol": centering_tol, "residual_tol": RESIDUAL_TOL},
    )
