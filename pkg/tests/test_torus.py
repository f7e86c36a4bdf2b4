import numpy as np
import pytest
from scipy.special import i0

from mvhomog.errors import CenteringError, EllipticityError, ValidationError
from mvhomog.scenarios import get_scenario
from mvhomog.torus import (FastCoefficients, TorusGrid, apply_axis_derivative,
                           assemble_generator, d1_matrix, d2_matrix,
                           load_cell_csv, solve_cell, solve_invariant_measure)

TWO_PI = 2.0 * np.pi


def _coeffs_1d(amp=1.0, sigma2=2.0):
    def f(x, y, mu):
        y = np.atleast_2d(y)
        return (amp * TWO_PI * np.sin(TWO_PI * y[:, 0]))[:, None]

    def sigma(x, y, mu):
        return np.sqrt(sigma2) * np.eye(1)

    return FastCoefficients(dim=1, f=f, sigma=sigma)


def test_derivative_matrices_on_trig():
    n = 64
    y = np.arange(n) / n
    v = np.sin(TWO_PI * y)
    for scheme, tol in (("fd", 1e-4), ("spectral", 1e-11)):
        d1 = d1_matrix(n, scheme)
        d2 = d2_matrix(n, scheme)
        err1 = np.abs(d1 @ v - TWO_PI * np.cos(TWO_PI * y)).max()
        err2 = np.abs(d2 @ v + TWO_PI ** 2 * np.sin(TWO_PI * y)).max()
        assert err1 < tol * TWO_PI
        assert err2 < tol * TWO_PI ** 2


def test_fd_derivative_is_fourth_order():
    errs = []
    for n in (32, 64, 128):
        y = np.arange(n) / n
        v = np.sin(TWO_PI * y)
        errs.append(np.abs(d1_matrix(n, "fd") @ v - TWO_PI * np.cos(TWO_PI * y)).max())
    assert errs[0] / errs[1] > 12
    assert errs[1] / errs[2] > 12


def test_axis_derivative_2d():
    grid = TorusGrid(2, 32)
    vals = np.sin(TWO_PI * grid.nodes[:, 0]) * np.cos(TWO_PI * grid.nodes[:, 1])
    dv = apply_axis_derivative(vals[:, None], grid, 1, "spectral")[:, 0]
    want = -TWO_PI * np.sin(TWO_PI * grid.nodes[:, 0]) * np.sin(TWO_PI * grid.nodes[:, 1])
    assert np.abs(dv - want).max() < 1e-10


def test_invariant_measure_matches_gibbs():
    coeffs = _coeffs_1d()
    grid = TorusGrid(1, 256)
    f_vals, a_vals = coeffs.fields(grid, None, None)
    L = assemble_generator(grid, f_vals, a_vals, "spectral")
    pi, resid = solve_invariant_measure(L, grid)
    y = grid.nodes[:, 0]
    gibbs = np.exp(-np.cos(TWO_PI * y)) / i0(1.0)
    assert np.abs(pi - gibbs).max() < 1e-10
    assert abs(grid.integrate(pi) - 1.0) < 1e-12
    assert pi.min() > 0


def test_fd_gibbs_error_halves_by_factor_three():
    coeffs = _coeffs_1d()
    errs = []
    for n in (128, 256):
        grid = TorusGrid(1, n)
        f_vals, a_vals = coeffs.fields(grid, None, None)
        pi, _ = solve_invariant_measure(assemble_generator(grid, f_vals, a_vals, "fd"), grid)
        gibbs = np.exp(-np.cos(TWO_PI * grid.nodes[:, 0])) / i0(1.0)
        errs.append(np.abs(pi - gibbs).max())
    assert errs[0] / errs[1] >= 3.0


def test_cell_solution_closed_form_slope():
    # for a 1-d gradient layer, 1 + phi' equals the reciprocal Gibbs weight
    cell = solve_cell(_coeffs_1d(), scheme="spectral", n=256)
    y = cell.grid.nodes[:, 0]
    zhat = float(np.exp(np.cos(TWO_PI * (np.arange(4096) + 0.5) / 4096)).mean())
    want = np.exp(np.cos(TWO_PI * y)) / zhat
    got = 1.0 + cell.grad_phi[:, 0, 0]
    assert np.abs(got - want).max() < 1e-10


def test_cell_residual_invariants():
    cell = solve_cell(_coeffs_1d(), scheme="fd", n=256)
    f_sup = np.abs(cell.f_vals).max()
    assert np.max(cell.residual_phi) <= 1e-8 * max(1.0, f_sup)
    assert np.abs(cell.centering).max() <= 1e-6 * f_sup
    avg = cell.pi_average(cell.phi)
    assert np.abs(avg).max() < 1e-10


def test_constants_in_generator_kernel():
    for name, scheme, n in (("cos_rough_1d", "fd", 128),
                            ("cos_rough_1d", "spectral", 128),
                            ("nongradient_2d", "fd", 24),
                            ("nongradient_2d", "spectral", 24)):
        sc = get_scenario(name)
        grid = TorusGrid(sc.dim, n)
        f_vals, a_vals = sc.fast_coefficients().fields(grid, None, None)
        L = assemble_generator(grid, f_vals, a_vals, scheme)
        dense = L.toarray() if hasattr(L, "toarray") else L
        resid = np.abs(L @ np.ones(grid.size)).max()
        assert resid <= 1e-13 * np.abs(dense).max()


def test_centering_gate_refuses_uncentered_drift():
    def f(x, y, mu):
        return np.ones((len(np.atleast_2d(y)), 1))

    def sigma(x, y, mu):
        return np.eye(1)

    with pytest.raises(CenteringError):
        solve_cell(FastCoefficients(dim=1, f=f, sigma=sigma), n=64)


def test_ellipticity_gate():
    def f(x, y, mu):
        return np.zeros((len(np.atleast_2d(y)), 1))

    def sigma(x, y, mu):
        return np.zeros((1, 1))

    with pytest.raises(EllipticityError):
        solve_cell(FastCoefficients(dim=1, f=f, sigma=sigma), n=64)


def test_grid_validation():
    with pytest.raises(ValidationError):
        TorusGrid(4)
    with pytest.raises(ValidationError):
        TorusGrid(1, 4)


def test_spectral_scheme_limits():
    with pytest.raises(ValidationError):
        solve_cell(_coeffs_1d(), scheme="spectral", n=9)  # odd n

    def f(x, y, mu):
        return np.zeros_like(np.atleast_2d(y))

    def sigma(x, y, mu):
        return np.eye(3)

    coeffs = FastCoefficients(dim=3, f=f, sigma=sigma)
    grid = TorusGrid(3, 8)
    with pytest.raises(ValidationError):
        assemble_generator(grid, *coeffs.fields(grid, None, None), "spectral")


def test_cell_csv_roundtrip(tmp_path):
    cell = solve_cell(_coeffs_1d(), scheme="spectral", n=64)
    path = tmp_path / "cell.csv"
    cell.save_csv(path)
    nodes, pi, phi = load_cell_csv(path)
    assert np.array_equal(nodes, cell.grid.nodes)
    assert np.array_equal(pi, cell.pi)
    assert np.array_equal(phi, cell.phi)


def test_three_dimensional_separable_cell():
    # mild three-axis gradient layer on the coarse fd grid
    amps = (0.3, 0.2, 0.25)
    sigma2 = 2.0

    def f(x, y, mu):
        y = np.atleast_2d(y)
        return np.stack([a * TWO_PI * np.sin(TWO_PI * y[:, k])
                         for k, a in enumerate(amps)], axis=1)

    def sigma(x, y, mu):
        return np.sqrt(sigma2) * np.eye(3)

    cell = solve_cell(FastCoefficients(dim=3, f=f, sigma=sigma), n=12)
    assert cell.scheme == "fd"
    assert cell.pi.min() > 0
    d_tilde = cell.pi_average(
        np.einsum("nlk,nkm,npm->nlp",
                  np.eye(3)[None] + cell.grad_phi, cell.a_vals,
                  np.eye(3)[None] + cell.grad_phi))
    want = np.diag([sigma2 / i0(2 * a / sigma2) ** 2 for a in amps])
    assert np.abs(d_tilde - want).max() < 5e-2
    off = d_tilde - np.diag(np.diag(d_tilde))
    assert np.abs(off).max() < 1e-3
