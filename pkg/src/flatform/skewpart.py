"""Skew part: Poisson duality, Jacobi identity, brackets, Hamiltonian fields and
the parallelism conditions for g together with a symplectic omega."""
from __future__ import annotations

import numpy as np

from . import exprcore as ex
from .config import DEFAULT, Tolerances
from .connection import ConnectionField, christoffel_first_values
from .forms import BilinearFormField, Chart


class SingularOmegaError(ArithmeticError):
    pass


def invert_omega(W: np.ndarray, tol: Tolerances = DEFAULT) -> np.ndarray:
    """P with sum_s P^{is} w_sj = delta^i_j, exactly skew; batched over leading axes."""
    W = np.asarray(W, dtype=float)
    cond = np.linalg.cond(W)
    if np.any(~np.isfinite(cond)) or np.any(cond > tol.omega_cond_max):
        raise SingularOmegaError(f"omega is singular or ill-conditioned (cond {np.max(cond):.3g})")
    P = np.linalg.inv(W)
    return 0.5 * (P - np.swapaxes(P, -1, -2))


def bivector_derivative(P: np.ndarray, dW: np.ndarray) -> np.ndarray:
    """d_k P = -P (d_k w) P for P = w^{-1}; dW[p, k, i, j] -> [p, k, i, j]."""
    return -np.einsum("pia,pkab,pbj->pkij", P, dW, P)


def jacobi_values(P: np.ndarray, dP: np.ndarray) -> np.ndarray:
    """Cyclic sum P^{sk} d_s P^{ij} + P^{si} d_s P^{jk} + P^{sj} d_s P^{ki}, indexed [p, i, j, k]."""
    t1 = np.einsum("psk,psij->pijk", P, dP)
    t2 = np.einsum("psi,psjk->pijk", P, dP)
    t3 = np.einsum("psj,pski->pijk", P, dP)
    return t1 + t2 + t3


def jacobi_residual(P: np.ndarray, dP: np.ndarray) -> float:
    J = jacobi_values(P, dP)
    return float(np.max(np.abs(J))) if J.size else 0.0


def jacobi_residual_symbolic(chart: Chart, P_entries, X: np.ndarray) -> float:
    """Jacobi residual of a user-supplied bivector given by expressions."""
    n = chart.n
    E = np.empty((n, n), dtype=object)
    for i in range(n):
        for j in range(n):
            e = P_entries[i][j]
            E[i, j] = ex.parse(e, chart) if isinstance(e, str) else ex.as_expr(e)
    dE = np.empty((n, n, n), dtype=object)
    for s in range(n):
        for i in range(n):
            for j in range(n):
                dE[s, i, j] = ex.differentiate(E[i, j], chart.names[s])
    P = ex.lambdify(E, chart.names)(X)
    dP = ex.lambdify(dE, chart.names)(X)
    return jacobi_residual(P, dP)


def omega_bivector(form: BilinearFormField, X: np.ndarray, tol: Tolerances = DEFAULT):
    """P = omega^{-1} and its derivatives at X."""
    W = form.w(X)
    P = invert_omega(W, tol)
    return P, bivector_derivative(P, form.dw(X))


def poisson_bracket(df: np.ndarray, dh: np.ndarray, P: np.ndarray) -> np.ndarray:
    """{f, h} = sum_ij d_i f d_j h P^{ij}, batched."""
    return np.einsum("...i,...j,...ij->...", df, dh, P)


def poisson_bracket_expr(f, h, form: BilinearFormField, X: np.ndarray, tol: Tolerances = DEFAULT) -> np.ndarray:
    chart = form.chart
    f = ex.parse(f, chart) if isinstance(f, str) else f
    h = ex.parse(h, chart) if isinstance(h, str) else h
    df = ex.lambdify([ex.differentiate(f, v) for v in chart.names], chart.names)(X)
    dh = ex.lambdify([ex.differentiate(h, v) for v in chart.names], chart.names)(X)
    P = invert_omega(form.w(X), tol)
    return poisson_bracket(df, dh, P)


def hamiltonian_field(df: np.ndarray, P: np.ndarray) -> np.ndarray:
    """X_f^i = sum_s P^{si} d_s f."""
    return np.einsum("...si,...s->...i", P, df)


def nabla_omega(form: BilinearFormField, gamma: np.ndarray, X: np.ndarray) -> np.ndarray:
    """nabla_k w_bc = d_k w_bc - Gamma^s_kb w_sc - Gamma^s_kc w_bs, indexed [p, k, b, c]."""
    W = form.w(X)
    dW = form.dw(X)
    return (dW - np.einsum("pskb,psc->pkbc", gamma, W)
            - np.einsum("pskc,pbs->pkbc", gamma, W))


def parallel1_values(form: BilinearFormField, conn: ConnectionField, X: np.ndarray,
                     tol: Tolerances = DEFAULT) -> np.ndarray:
    """sum g_ia P^ab P^cd g_dj nabla_k w_bc, indexed [p, k, i, j]."""
    G = form.g(X)
    P = invert_omega(form.w(X), tol)
    Nw = nabla_omega(form, conn(X), X)
    left = G @ P          # [i, b]
    right = P @ G         # [c, j]
    return np.einsum("pib,pkbc,pcj->pkij", left, Nw, right)


def parallel1_residual(form, conn, X, tol: Tolerances = DEFAULT) -> float:
    v = parallel1_values(form, conn, X, tol)
    return float(np.max(np.abs(v)))


def parallelPg_values(form: BilinearFormField, X: np.ndarray, tol: Tolerances = DEFAULT) -> np.ndarray:
    """g_ai g_bj d_k P^ab + sum_s (P_i^s Gamma_{ks,j} + P^s_j Gamma_{ks,i}), indexed [p, k, i, j]."""
    G = form.g(X)
    P, dP = omega_bivector(form, X, tol)
    G1 = christoffel_first_values(form.dg(X))     # [p, i, j, s]
    lowered = np.einsum("pai,pbj,pkab->pkij", G, G, dP)
    Pi = np.einsum("pic,pcs->pis", G, P)          # P_i^s
    Pj = np.einsum("pjc,psc->psj", G, P)          # P^s_j
    return lowered + np.einsum("pis,pksj->pkij", Pi, G1) + np.einsum("psj,pksi->pkij", Pj, G1)


def parallelPg_residual(form, X, tol: Tolerances = DEFAULT) -> float:
    v = parallelPg_values(form, X, tol)
    return float(np.max(np.abs(v)))
