"""Christoffel symbols, stationarity, and least-norm torsion-free connections
preserving g, omega, or both."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np

from . import exprcore as ex
from .config import DEFAULT, Tolerances
from .forms import BilinearFormField, VectorField


# ---------------------------------------------------------------------------
# first kind symbols


def christoffel_first(form: BilinearFormField) -> np.ndarray:
    """Symbolic Gamma_{ij,s} = (d_i g_js + d_j g_is - d_s g_ij)/2, indexed [i, j, s]."""
    n = form.n
    G = form.sym_entries()
    names = form.chart.names
    d = [[[ex.differentiate(G[i, j], names[k]) for j in range(n)] for i in range(n)] for k in range(n)]
    half = ex.Const(ex.Fraction(1, 2))
    out = np.empty((n, n, n), dtype=object)
    for i in range(n):
        for j in range(i, n):
            for s in range(n):
                e = ex.mul(half, ex.add(d[i][j][s], d[j][i][s], ex.neg(d[s][i][j])))
                out[i, j, s] = e
                out[j, i, s] = e
    return out


def christoffel_first_values(dg: np.ndarray) -> np.ndarray:
    """Numeric Gamma_{ij,s} from dg[p, k, i, j] = d_k g_ij; result [p, i, j, s]."""
    return 0.5 * (dg + np.swapaxes(dg, 1, 2) - np.transpose(dg, (0, 2, 3, 1)))


def stationarity_check(form: BilinearFormField, X: np.ndarray, tol: Tolerances = DEFAULT,
                       scale: float | None = None) -> dict:
    """max |sum_s Gamma_{ij,s} v^s| over kernel vectors v of g and points of X."""
    scale = form.scale(X) if scale is None else scale
    G = form.g(X)
    G1 = christoffel_first_values(form.dg(X))
    _, s, vt = np.linalg.svd(G)
    thr = np.maximum(tol.sigma_tol * s[:, :1], 1e-12 * scale)
    mask = s <= thr                      # kernel directions, per point
    V = np.swapaxes(vt, 1, 2)            # columns = right singular vectors
    T = np.einsum("pijs,psr->pijr", G1, V)
    viol = np.abs(T) * mask[:, None, None, :]
    per_point = viol.reshape(len(X), -1).max(axis=1) if viol.size else np.zeros(len(X))
    m = float(per_point.max()) if len(per_point) else 0.0
    lim = tol.tol_stat * scale
    return {"holds": bool(m <= lim), "max_violation": m, "tol": lim, "per_point": per_point}


# ---------------------------------------------------------------------------
# the linear systems in the unknowns Gamma^s_{(jk)}


@lru_cache(maxsize=None)
def pair_table(n: int) -> tuple[tuple, np.ndarray]:
    pairs = tuple((j, k) for j in range(n) for k in range(j, n))
    idx = np.empty((n, n), dtype=int)
    for p, (j, k) in enumerate(pairs):
        idx[j, k] = idx[k, j] = p
    return pairs, idx


def n_unknowns(n: int) -> int:
    return n * n * (n + 1) // 2


def unknown_index(n: int, s: int, j: int, k: int) -> int:
    pairs, idx = pair_table(n)
    return s * len(pairs) + idx[j, k]


def gamma_from_vector(x: np.ndarray, n: int) -> np.ndarray:
    """Unknown vectors [p, u] to Gamma[p, s, j, k]."""
    pairs, idx = pair_table(n)
    X = x.reshape(len(x), n, len(pairs))
    return X[:, :, idx]


def vector_from_gamma(G: np.ndarray) -> np.ndarray:
    n = G.shape[-1]
    pairs, _ = pair_table(n)
    j = np.array([p[0] for p in pairs])
    k = np.array([p[1] for p in pairs])
    return G[:, :, j, k].reshape(len(G), -1)


def g_system(G: np.ndarray, G1: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """sum_s g_sk Gamma^s_ij = Gamma_{ij,k} for i<=j, all k."""
    N, n, _ = G.shape
    pairs, _ = pair_table(n)
    P = len(pairs)
    A = np.zeros((N, P * n, n * P))
    b = np.zeros((N, P * n))
    for p, (i, j) in enumerate(pairs):
        for k in range(n):
            r = p * n + k
            for s in range(n):
                A[:, r, s * P + p] = G[:, s, k]
            b[:, r] = G1[:, i, j, k]
    return A, b


def w_system(W: np.ndarray, dW: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """sum_s w_sj Gamma^s_ik + w_is Gamma^s_jk = d_k w_ij for i<j, all k."""
    N, n, _ = W.shape
    pairs, idx = pair_table(n)
    P = len(pairs)
    rows = [(i, j, k) for i in range(n) for j in range(i + 1, n) for k in range(n)]
    A = np.zeros((N, len(rows), n * P))
    b = np.zeros((N, len(rows)))
    for r, (i, j, k) in enumerate(rows):
        for s in range(n):
            A[:, r, s * P + idx[i, k]] += W[:, s, j]
            A[:, r, s * P + idx[j, k]] += W[:, i, s]
        b[:, r] = dW[:, k, i, j]
    return A, b


def min_norm_solve(A: np.ndarray, b: np.ndarray, sigma_tol: float, floor: float = 0.0):
    """Batched minimum-norm least squares by SVD; returns (x, rank)."""
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    thr = np.maximum(sigma_tol * s[:, :1], floor)
    keep = s > thr
    inv = np.where(keep, 1.0 / np.where(keep, s, 1.0), 0.0)
    c = np.einsum("pri,pr->pi", U, b) * inv
    x = np.einsum("pij,pi->pj", Vt, c)
    return x, keep.sum(axis=1)


def pinv_batched(M: np.ndarray, sigma_tol: float, floor: float = 0.0):
    U, s, Vt = np.linalg.svd(M)
    thr = np.maximum(sigma_tol * s[:, :1], floor)
    keep = s > thr
    inv = np.where(keep, 1.0 / np.where(keep, s, 1.0), 0.0)
    return np.einsum("pji,pj,pkj->pik", Vt, inv, U), keep.sum(axis=1)


@dataclass
class ConnectionSolve:
    gamma: np.ndarray                 # [p, s, j, k]
    mode: str
    residual: dict                    # subsystem -> per-point residual norms
    rhs_norm: dict                    # subsystem -> per-point rhs norms
    rank: np.ndarray
    tol_lin: float

    def solvable(self, which: str | None = None) -> bool:
        keys = [which] if which else list(self.residual)
        return all(bool(np.all(self.residual[k] <= self.tol_lin * (1 + self.rhs_norm[k]))) for k in keys)

    def relative_residual(self, which: str) -> float:
        return float(np.max(self.residual[which] / (1 + self.rhs_norm[which])))

    @property
    def constant_rank(self) -> bool:
        return bool(np.all(self.rank == self.rank[0]))


def solve_connection(form: BilinearFormField, X: np.ndarray, use_g: bool = True, use_w: bool = False,
                     tol: Tolerances = DEFAULT, scale: float | None = None) -> ConnectionSolve:
    """Least-norm torsion-free Gamma solving the g system, the omega system, or both."""
    if not (use_g or use_w):
        raise ValueError("impose at least one of the g and omega systems")
    X = np.atleast_2d(X)
    n = form.n
    scale = form.scale(X) if scale is None else scale
    floor = 1e-12 * scale
    Bv = form.B(X)
    dB = form.dB(X)
    G = 0.5 * (Bv + np.swapaxes(Bv, 1, 2))
    W = 0.5 * (Bv - np.swapaxes(Bv, 1, 2))
    dG = 0.5 * (dB + np.swapaxes(dB, 2, 3))
    dW = 0.5 * (dB - np.swapaxes(dB, 2, 3))
    parts = []
    if use_g:
        parts.append(("g", g_system(G, christoffel_first_values(dG))))
    if use_w:
        parts.append(("w", w_system(W, dW)))
    if use_g and not use_w:
        # the g system is block diagonal with the block g itself
        Gp, rank = pinv_batched(G, tol.sigma_tol, floor)
        G1 = christoffel_first_values(dG)
        gamma = np.einsum("psk,pijk->psij", Gp, G1)
        rank = rank * len(pair_table(n)[0])
    else:
        A = np.concatenate([p[1][0] for p in parts], axis=1)
        b = np.concatenate([p[1][1] for p in parts], axis=1)
        x, rank = min_norm_solve(A, b, tol.sigma_tol, floor)
        gamma = gamma_from_vector(x, n)
    x = vector_from_gamma(gamma)
    residual, rhs_norm = {}, {}
    for name, (A, b) in parts:
        residual[name] = np.linalg.norm(np.einsum("pru,pu->pr", A, x) - b, axis=1)
        rhs_norm[name] = np.linalg.norm(b, axis=1)
    mode = "joint" if use_g and use_w else ("g" if use_g else "w")
    return ConnectionSolve(gamma, mode, residual, rhs_norm, rank, tol.tol_lin)


def levi_civita_min_norm(form: BilinearFormField, X: np.ndarray, tol: Tolerances = DEFAULT,
                         scale: float | None = None) -> np.ndarray:
    """Least-norm solution of the g system alone, Gamma^s_ij = sum_k (g^+)^{sk} Gamma_{ij,k},
    without residual bookkeeping."""
    scale = form.scale(X) if scale is None else scale
    Gp, _ = pinv_batched(form.g(X), tol.sigma_tol, 1e-12 * scale)
    return np.einsum("psk,pijk->psij", Gp, christoffel_first_values(form.dg(X)))


class ConnectionField:
    """Pointwise evaluator of the least-norm connection, optionally shifted by a
    freedom term v^i T_jk."""

    def __init__(self, form: BilinearFormField, use_g: bool = True, use_w: bool = False,
                 tol: Tolerances = DEFAULT, scale: float | None = None,
                 shift: Callable[[np.ndarray], np.ndarray] | None = None):
        self.form = form
        self.use_g, self.use_w = use_g, use_w
        self.tol = tol
        self.scale = scale
        self.shift = shift

    @property
    def mode(self) -> str:
        return "joint" if self.use_g and self.use_w else ("g" if self.use_g else "w")

    def solve(self, X) -> ConnectionSolve:
        sol = solve_connection(self.form, X, self.use_g, self.use_w, self.tol, self.scale)
        if self.shift is not None:
            sol.gamma = sol.gamma + self.shift(np.atleast_2d(X))
        return sol

    def __call__(self, X) -> np.ndarray:
        if self.use_g and not self.use_w:
            gamma = levi_civita_min_norm(self.form, np.atleast_2d(X), self.tol, self.scale)
            return gamma if self.shift is None else gamma + self.shift(np.atleast_2d(X))
        return self.solve(X).gamma

    def with_freedom(self, v: Callable, T: Callable) -> "ConnectionField":
        """Connection Gamma + v (x) T, for v(X) -> [p, i] and T(X) -> [p, j, k] symmetric."""
        prev = self.shift

        def shift(X):
            out = np.einsum("pi,pjk->pijk", v(X), T(X))
            return out if prev is None else out + prev(X)

        return ConnectionField(self.form, self.use_g, self.use_w, self.tol, self.scale, shift)


# ---------------------------------------------------------------------------
# covariant and Lie derivatives


def covariant_derivative(values: np.ndarray, derivs: np.ndarray, gamma: np.ndarray, kind: str) -> np.ndarray:
    """nabla_k T at points.

    ``values`` holds T[p, ...], ``derivs`` holds d_k T as [p, k, ...] and
    ``gamma`` is Gamma[p, s, j, k].  ``kind`` is one of "covector" (0,1),
    "form" (0,2), "bivector" (2,0) or "mixed" (1,1).  The result is indexed
    [p, k, ...].
    """
    if kind == "covector":
        return derivs - np.einsum("pski,ps->pki", gamma, values)
    if kind == "form":
        return (derivs - np.einsum("pski,psj->pkij", gamma, values)
                - np.einsum("pskj,pis->pkij", gamma, values))
    if kind == "bivector":
        return (derivs + np.einsum("pisk,psj->pkij", gamma, values)
                + np.einsum("pjsk,pis->pkij", gamma, values))
    if kind == "mixed":
        return (derivs + np.einsum("pisk,psj->pkij", gamma, values)
                - np.einsum("pskj,pis->pkij", gamma, values))
    raise ValueError(f"unknown tensor kind {kind!r}")


def lie_derivative_metric(v: VectorField, form: BilinearFormField) -> np.ndarray:
    """(L_v g)_ij = sum_s v^s d_s g_ij + g_is d_j v^s + g_js d_i v^s, as expressions."""
    n = form.n
    G = form.sym_entries()
    names = form.chart.names
    out = np.empty((n, n), dtype=object)
    for i in range(n):
        for j in range(n):
            terms = []
            for s in range(n):
                terms.append(ex.mul(v.comps[s], ex.differentiate(G[i, j], names[s])))
                terms.append(ex.mul(G[i, s], v.jac_entries[s][j]))
                terms.append(ex.mul(G[j, s], v.jac_entries[s][i]))
            out[i, j] = ex.add(*terms)
    return out
