import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flatform import exprcore as ex
from flatform.connection import (ConnectionField, christoffel_first, christoffel_first_values, covariant_derivative,
                                 g_system, gamma_from_vector, levi_civita_min_norm, lie_derivative_metric,
                                 min_norm_solve, n_unknowns, solve_connection, stationarity_check,
                                 vector_from_gamma)
from flatform.constructor import flat_chart_symmetric
from flatform.curvature import field_derivative, lowered_curvature
from flatform.forms import VectorField, closedness_residual
from flatform.kernelrank import kernel_projector

from conftest import form
from oracles import levi_civita_sympy


def _eval(e, names, pt):
    return ex.evaluate(e, dict(zip(names, pt)))


# --- first kind symbols --------------------------------------------------------

def test_constant_metric_has_zero_symbols():
    B = form(["x", "y"], [[0, 1], [0, 1]], [["2", "1"], ["1", "3"]])
    assert all(e.is_zero for e in christoffel_first(B).ravel())


def test_polar_first_kind_symbols(polar):
    G1 = christoffel_first(polar)
    for r in (1.0, 1.5, 2.0):
        pt = (r, 0.3)
        assert _eval(G1[1, 1, 0], polar.chart.names, pt) == pytest.approx(-r)
        assert _eval(G1[0, 1, 1], polar.chart.names, pt) == pytest.approx(r)
        assert _eval(G1[1, 0, 1], polar.chart.names, pt) == pytest.approx(r)


def test_y_squared_dx_squared_symbol():
    B = form(["x", "y"], [[-1, 1], [-1, 1]], [["y^2", "0"], ["0", "0"]])
    G1 = christoffel_first(B)
    for y in (-0.7, 0.2, 1.0):
        assert _eval(G1[0, 0, 1], ["x", "y"], (0.1, y)) == pytest.approx(-y)


def test_symbolic_and_numeric_symbols_agree(radial_away):
    G1 = christoffel_first(radial_away)
    X = radial_away.chart.grid(3)
    num = christoffel_first_values(radial_away.dg(X))
    sym = ex.lambdify(G1, radial_away.chart.names)(X)
    assert np.allclose(num, sym, atol=1e-13)


# --- stationarity --------------------------------------------------------------

def test_stationarity_holds_for_closed_rank_one(radial_away):
    s = stationarity_check(radial_away, radial_away.chart.grid(7))
    assert s["holds"] and s["max_violation"] <= 1e-12


def test_stationarity_fails_for_y_squared():
    B = form(["x", "y"], [[-1, 1], [0.5, 1]], [["y^2", "0"], ["0", "0"]])
    X = B.chart.grid(5)
    s = stationarity_check(B, X)
    assert not s["holds"]
    assert np.allclose(s["per_point"], np.abs(X[:, 1]))


def test_stationarity_vacuous_for_nondegenerate(polar):
    s = stationarity_check(polar, polar.chart.grid(5))
    assert s["holds"] and s["max_violation"] == 0


# --- solving ------------------------------------------------------------------------

def test_constant_forms_give_zero_connection():
    B = form(list("xyz"), [[0, 1]] * 3, [["1", "2", "0"], ["0", "1", "1"], ["0", "-1", "0"]])
    X = B.chart.grid(3)
    for use_g, use_w in [(True, False), (False, True), (True, True)]:
        sol = solve_connection(B, X, use_g, use_w)
        assert np.all(sol.gamma == 0)
        assert all(np.all(r == 0) for r in sol.residual.values())


def test_polar_levi_civita_matches_oracle(polar):
    X = polar.chart.grid(5)
    sol = solve_connection(polar, X)
    assert sol.solvable()
    r = X[:, 0]
    assert np.allclose(sol.gamma[:, 1, 0, 1], 1 / r, atol=1e-8)
    assert np.allclose(sol.gamma[:, 0, 1, 1], -r, atol=1e-8)
    ref = levi_civita_sympy([["1", "0"], ["0", "r^2"]], ["r", "t"])(X)
    assert np.max(np.abs(sol.gamma - ref)) <= 1e-8


def test_y_squared_system_is_infeasible():
    B = form(["x", "y"], [[-1, 1], [0.5, 1]], [["y^2", "0"], ["0", "0"]])
    sol = solve_connection(B, B.chart.grid(5))
    assert not sol.solvable()
    assert np.min(sol.residual["g"]) >= 0.1


def test_connection_is_symmetric_in_lower_indices(height_area, moser4):
    for B in (height_area, moser4):
        X = B.chart.grid(3)
        for use_g, use_w in [(True, False), (False, True), (True, True)]:
            G = solve_connection(B, X, use_g, use_w).gamma
            assert np.array_equal(G, np.swapaxes(G, 2, 3))


def test_unknown_vector_roundtrip(rng):
    n = 3
    x = rng.normal(size=(4, n_unknowns(n)))
    assert np.array_equal(vector_from_gamma(gamma_from_vector(x, n)), x)


def test_fast_path_matches_stacked_svd(radial_away, polar):
    # two routes to the least-norm g solution: block pseudo-inverse and full SVD
    for B in (radial_away, polar):
        X = B.chart.grid(4)
        fast = levi_civita_min_norm(B, X)
        A, b = g_system(B.g(X), christoffel_first_values(B.dg(X)))
        x, _ = min_norm_solve(A, b, 1e-8, 1e-12)
        assert np.max(np.abs(fast - gamma_from_vector(x, B.n))) <= 1e-9


def test_g_solvability_agrees_with_stationarity():
    fixtures = [
        form(["x", "y"], [[1, 2], [1, 2]], [["4*x^2", "4*x*y"], ["4*x*y", "4*y^2"]]),
        form(["x", "y"], [[-1, 1], [0.5, 1]], [["y^2", "0"], ["0", "0"]]),
        form(list("xyz"), [[-1, 1]] * 3, [["1", "0", "0"], ["0", "exp(x)", "0"], ["0", "0", "0"]]),
        form(list("xyz"), [[-1, 1]] * 3, [["1", "0", "0"], ["0", "exp(z)", "0"], ["0", "0", "0"]]),
        form(["r", "t"], [[1, 2], [0, 1]], [["1", "0"], ["0", "r^2"]]),
    ]
    for B in fixtures:
        X = B.chart.grid(4)
        assert solve_connection(B, X).solvable() == stationarity_check(B, X)["holds"]


def test_skew_solvability_agrees_with_closedness():
    fixtures = [
        form(list("xyzw"), [[-0.5, 0.5]] * 4,
             [["0", "1", "0.1*z", "0"], ["-1", "0", "0", "0"], ["-0.1*z", "0", "0", "1"], ["0", "0", "-1", "0"]]),
        form(list("xyz"), [[-1, 1]] * 3, [["0", "0", "0"], ["0", "0", "-x"], ["0", "x", "0"]]),
        form(list("xyz"), [[-1, 1]] * 3, [["0", "1 + z^2", "0"], ["-1 - z^2", "0", "0"], ["0", "0", "0"]]),
        form(list("xyz"), [[-1, 1]] * 3, [["0", "1 + x^2", "0"], ["-1 - x^2", "0", "0"], ["0", "0", "0"]]),
    ]
    for B in fixtures:
        X = B.chart.grid(4)
        closed = closedness_residual(B, X) <= 1e-7
        assert solve_connection(B, X, False, True).solvable() == closed


# --- covariant derivative ----------------------------------------------------------

def test_kronecker_delta_is_parallel_for_any_connection(rng):
    N, n = 6, 3
    gamma = rng.normal(size=(N, n, n, n))
    gamma = gamma + np.swapaxes(gamma, 2, 3)
    delta = np.broadcast_to(np.eye(n), (N, n, n))
    out = covariant_derivative(delta, np.zeros((N, n, n, n)), gamma, "mixed")
    assert np.max(np.abs(out)) <= 1e-14


def test_metric_is_parallel_when_solvable(radial_away, polar):
    for B in (radial_away, polar):
        X = B.chart.grid(4)
        sol = solve_connection(B, X)
        assert sol.solvable()
        dg = B.dg(X)
        assert np.max(np.abs(covariant_derivative(B.g(X), dg, sol.gamma, "form"))) <= 1e-7


def test_flat_functions_have_parallel_differentials(polar):
    res = flat_chart_symmetric(polar)
    X = polar.chart.scaled(0.8).grid(4)
    h = 1e-3 * polar.chart.diameter
    df = field_derivative(res.functions, X, h, 2)            # [p, k, a]
    ddf = field_derivative(lambda P: field_derivative(res.functions, P, h, 2), X, h, 2)  # [p, l, k, a]
    gamma = ConnectionField(polar)(X)
    for a in range(df.shape[-1]):
        nab = covariant_derivative(df[:, :, a], ddf[:, :, :, a], gamma, "covector")
        assert np.max(np.abs(nab)) <= 2e-6


def test_bivector_rule_matches_product_rule(rng):
    # nabla of P = v (x) w equals (nabla v) (x) w + v (x) nabla w
    N, n = 5, 3
    gamma = rng.normal(size=(N, n, n, n))
    v, w = rng.normal(size=(N, n)), rng.normal(size=(N, n))
    dv, dw = rng.normal(size=(N, n, n)), rng.normal(size=(N, n, n))
    nv = dv + np.einsum("pisk,ps->pki", gamma, v)
    nw = dw + np.einsum("pisk,ps->pki", gamma, w)
    P = v[:, :, None] * w[:, None, :]
    dP = dv[:, :, :, None] * w[:, None, None, :] + v[:, None, :, None] * dw[:, :, None, :]
    want = nv[:, :, :, None] * w[:, None, None, :] + v[:, None, :, None] * nw[:, :, None, :]
    assert np.allclose(covariant_derivative(P, dP, gamma, "bivector"), want)


# --- Lie derivative -----------------------------------------------------------------

def test_lie_derivative_along_translation_of_constant_metric():
    B = form(["x", "y"], [[-1, 1], [-1, 1]], [["1", "0"], ["0", "0"]])
    L = lie_derivative_metric(VectorField(B.chart, ["0", "1"]), B)
    assert all(e.is_zero for e in L.ravel())


def test_lie_derivative_of_dilation():
    B = form(["x", "y"], [[-1, 1], [-1, 1]], [["1", "0"], ["0", "0"]])
    L = lie_derivative_metric(VectorField(B.chart, ["x", "0"]), B)
    vals = ex.lambdify(L, B.chart.names)(B.chart.grid(3))
    assert np.allclose(vals, [[2, 0], [0, 0]])


def test_lie_derivative_along_kernel_matches_identity(radial_away):
    # L_v g = -2 v^s Gamma_{ij,s} for v in the kernel; both vanish under stationarity
    ch = radial_away.chart
    v = VectorField(ch, ["y", "-x"])
    X = ch.grid(5)
    L = ex.lambdify(lie_derivative_metric(v, radial_away), ch.names)(X)
    G1 = christoffel_first_values(radial_away.dg(X))
    ident = -2 * np.einsum("ps,pijs->pij", v(X), G1)
    assert np.max(np.abs(L)) <= 1e-7
    assert np.allclose(L, ident, atol=1e-12)


# --- freedom invariance ---------------------------------------------------------------

def _kernel_field(form_, k):
    def v(X):
        P = kernel_projector(form_.g(X), k)
        return P @ np.ones(form_.n)
    return v


@settings(max_examples=8)
@given(st.integers(0, 10_000))
def test_curvature_is_independent_of_the_freedom(seed):
    B = form(list("xyz"), [[1, 2], [1, 2], [-1, 1]],
             [["4*x^2", "4*x*y", "0"], ["4*x*y", "4*y^2", "0"], ["0", "0", "1 + z^2"]])
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(3, 3))
    S = A + A.T
    conn = ConnectionField(B)
    shifted = conn.with_freedom(_kernel_field(B, 1), lambda X: np.broadcast_to(S * (1 + X[:, :1, None]), (len(X), 3, 3)))
    X = B.chart.scaled(0.8).grid(3)
    R0 = lowered_curvature(B, conn, X, check=False)
    R1 = lowered_curvature(B, shifted, X, check=False)
    assert np.max(np.abs(R0 - R1)) <= 1e-5


def test_joint_freedom_invariance():
    # g = (1 + x^2) dx^2, omega = dy ^ dz on R^4: R_g cap R_w = span d/dw
    B = form(list("xyzw"), [[-1, 1]] * 4,
             [["1 + x^2", "0", "0", "0"], ["0", "0", "1", "0"], ["0", "-1", "0", "0"], ["0", "0", "0", "0"]])
    X = B.chart.scaled(0.5).grid(3)
    conn = ConnectionField(B, True, True)
    assert conn.solve(X).solvable()
    e4 = lambda P: np.tile([0.0, 0, 0, 1], (len(P), 1))
    T = lambda P: np.broadcast_to(np.diag([1.0, 2, -1, 0.5]) * (1 + P[:, :1, None]), (len(P), 4, 4))
    R0 = lowered_curvature(B, conn, X, check=False)
    R1 = lowered_curvature(B, conn.with_freedom(e4, T), X, check=False)
    assert np.max(np.abs(R0 - R1)) <= 1e-5
