"""Independent reference computations (sympy and finite differences) used as test oracles."""
import itertools

import numpy as np
import sympy as sp


def sym(text, names):
    syms = sp.symbols(names)
    loc = dict(zip(names, syms))
    loc["ln"] = sp.log
    return sp.sympify(text.replace("^", "**"), locals=loc), syms


def sym_matrix(entries, names):
    syms = sp.symbols(names)
    loc = dict(zip(names, syms))
    loc["ln"] = sp.log
    return sp.Matrix([[sp.sympify(e.replace("^", "**"), locals=loc) for e in row] for row in entries]), syms


def lowered_curvature_sympy(entries, names):
    """R_ijkl = g_is (d_k G^s_jl - d_l G^s_jk + G^s_ka G^a_lj - G^s_la G^a_kj) for a
    nondegenerate metric, with the Levi-Civita symbols computed by sympy."""
    g, x = sym_matrix(entries, names)
    n = len(x)
    gi = g.inv()
    G = [[[sp.simplify(sum(gi[s, m] * (sp.diff(g[m, j], x[k]) + sp.diff(g[m, k], x[j]) - sp.diff(g[j, k], x[m]))
                           for m in range(n)) / 2) for k in range(n)] for j in range(n)] for s in range(n)]
    R = {}
    for i, j, k, l in itertools.product(range(n), repeat=4):
        inner = [sp.diff(G[s][j][l], x[k]) - sp.diff(G[s][j][k], x[l])
                 + sum(G[s][k][a] * G[a][l][j] - G[s][l][a] * G[a][k][j] for a in range(n))
                 for s in range(n)]
        R[i, j, k, l] = sum(g[i, s] * inner[s] for s in range(n))
    f = sp.lambdify(x, [R[key] for key in sorted(R)], "numpy")

    def evaluate(X):
        out = np.empty((len(X), n, n, n, n))
        for p, pt in enumerate(X):
            vals = np.array(f(*pt), dtype=float)
            out[p] = vals.reshape(n, n, n, n)
        return out

    return evaluate


def levi_civita_sympy(entries, names):
    g, x = sym_matrix(entries, names)
    n = len(x)
    gi = g.inv()
    G = [[[sum(gi[s, m] * (sp.diff(g[m, j], x[k]) + sp.diff(g[m, k], x[j]) - sp.diff(g[j, k], x[m]))
               for m in range(n)) / 2 for k in range(n)] for j in range(n)] for s in range(n)]
    f = sp.lambdify(x, G, "numpy")
    return lambda X: np.array([np.array(f(*pt), dtype=float) for pt in X])


def central_difference(fn, X, k, h):
    E = np.zeros(X.shape[1])
    E[k] = h
    return (fn(X + E) - fn(X - E)) / (2 * h)


def affine_fit_residual(f, q):
    """max |f - (a q + b)| after least squares, relative to the spread of f."""
    A = np.vstack([q, np.ones_like(q)]).T
    coef, *_ = np.linalg.lstsq(A, f, rcond=None)
    return float(np.max(np.abs(A @ coef - f)) / max(1.0, np.ptp(f))), coef
