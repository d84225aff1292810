"""Lowered curvature of a pointwise connection and the flatness decision procedure."""
from __future__ import annotations

import numpy as np

from .config import DEFAULT, Tolerances, default_grid_res, margin_status
from .connection import ConnectionField, solve_connection, stationarity_check
from .forms import BilinearFormField, closedness_residual
from .kernelrank import rank_profile
from . import skewpart


class InfeasibleStencilError(ArithmeticError):
    pass


def _richardson(values: list[np.ndarray]) -> np.ndarray:
    """Extrapolate central differences at steps h, h/2, h/4, ... (error series in h^2)."""
    table = list(values)
    factor = 4.0
    while len(table) > 1:
        table = [(factor * table[i + 1] - table[i]) / (factor - 1) for i in range(len(table) - 1)]
        factor *= 4.0
    return table[0]


def field_derivative(fn, X: np.ndarray, h: float, richardson: int = 1) -> np.ndarray:
    """d_k of a pointwise field fn(X) -> [p, ...], by central differences with
    Richardson extrapolation; result indexed [p, k, ...]."""
    N, n = X.shape
    steps = [h / 2 ** r for r in range(richardson + 1)]
    offsets = []
    for hs in steps:
        for k in range(n):
            for sgn in (1.0, -1.0):
                d = np.zeros(n)
                d[k] = sgn * hs
                offsets.append(d)
    offsets = np.array(offsets)
    pts = (X[:, None, :] + offsets[None, :, :]).reshape(-1, n)
    vals = fn(pts)
    vals = vals.reshape((N, len(offsets)) + vals.shape[1:])
    ests = []
    for r, hs in enumerate(steps):
        base = r * 2 * n
        plus = vals[:, base + 0: base + 2 * n: 2]
        minus = vals[:, base + 1: base + 2 * n: 2]
        ests.append((plus - minus) / (2 * hs))
    return _richardson(ests)


def _gamma_and_derivative(conn: ConnectionField, X: np.ndarray, h: float, richardson: int,
                          check: bool = True):
    sols = []

    def gam(P):
        s = conn.solve(P)
        sols.append(s)
        return s.gamma

    dG = field_derivative(gam, X, h, richardson)   # [p, k, s, j, l]
    if check and not sols[0].solvable():
        raise InfeasibleStencilError("connection system infeasible at a stencil point")
    base = conn.solve(X)
    return base, dG


def curvature_from(G: np.ndarray, gamma: np.ndarray, dG: np.ndarray) -> np.ndarray:
    """R_ijkl = sum_s g_is (d_k Gamma^s_jl - d_l Gamma^s_jk
    + sum_a Gamma^s_ka Gamma^a_lj - Gamma^s_la Gamma^a_kj)."""
    inner = (np.einsum("pksjl->psjkl", dG) - np.einsum("plsjk->psjkl", dG)
             + np.einsum("pska,palj->psjkl", gamma, gamma)
             - np.einsum("psla,pakj->psjkl", gamma, gamma))
    return np.einsum("pis,psjkl->pijkl", G, inner)


def lowered_curvature(form: BilinearFormField, conn: ConnectionField, X: np.ndarray,
                      h: float | None = None, tol: Tolerances = DEFAULT, check: bool = True) -> np.ndarray:
    """R_ijkl at the points X, indexed [p, i, j, k, l]."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    h = tol.h_curv * form.chart.diameter if h is None else h
    base, dG = _gamma_and_derivative(conn, X, h, tol.richardson, check)
    return curvature_from(form.g(X), base.gamma, dG)


def constant_curvature_residual(form, conn, kappa: float, X, h=None, tol: Tolerances = DEFAULT) -> float:
    """max |R_ijkl - kappa (g_ik g_jl - g_il g_jk)|; the unit sphere has kappa = +1."""
    R = lowered_curvature(form, conn, X, h, tol)
    G = form.g(X)
    model = np.einsum("pik,pjl->pijkl", G, G) - np.einsum("pil,pjk->pijkl", G, G)
    return float(np.max(np.abs(R - kappa * model)))


def symmetric_space_residual(form, conn, X, h=None, tol: Tolerances = DEFAULT,
                             h_outer: float | None = None) -> float:
    """max |nabla_m R_ijkl| with the derivative of R by outer finite differences."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    diam = form.chart.diameter
    h = tol.h_curv * diam if h is None else h
    H = 1e-2 * diam if h_outer is None else h_outer
    R = lowered_curvature(form, conn, X, h, tol)
    dR = field_derivative(lambda P: lowered_curvature(form, conn, P, h, tol), X, H, tol.richardson)
    g = conn(X)   # [p, s, m, i] = Gamma^s_mi
    nab = (dR - np.einsum("psmi,psjkl->pmijkl", g, R)
           - np.einsum("psmj,piskl->pmijkl", g, R)
           - np.einsum("psmk,pijsl->pmijkl", g, R)
           - np.einsum("psml,pijks->pmijkl", g, R))
    return float(np.max(np.abs(nab)))


# ---------------------------------------------------------------------------
# decision procedure


def _condition(name: str, value: float, tol: float, **extra) -> dict:
    d = {"name": name, "value": float(value), "tol": float(tol), "status": margin_status(value, tol)}
    d.update(extra)
    return d


def classify(form: BilinearFormField, X: np.ndarray, scale: float) -> str:
    """Which branch of the decision procedure applies: 'symmetric', 'skew', 'symplectic' or 'general'."""
    B = form.B(X)
    G = 0.5 * (B + np.swapaxes(B, 1, 2))
    W = 0.5 * (B - np.swapaxes(B, 1, 2))
    zero = 1e-14 * scale
    if np.max(np.abs(W)) <= zero:
        return "symmetric"
    if np.max(np.abs(G)) <= zero:
        return "skew"
    return "general"


def _verdict(conditions: list[dict]) -> tuple[str, str | None]:
    statuses = [c["status"] for c in conditions]
    if "fail" in statuses:
        return "NOT_FLAT", None
    if "margin" in statuses:
        return "INCONCLUSIVE", "tolerance margin"
    return "FLAT", None


def _curvature_condition(form, conn, X, tol, scale, name="curvature"):
    R = lowered_curvature(form, conn, X, tol=tol, check=False)
    per = np.abs(R).reshape(len(X), -1)
    m = per.max(axis=1)
    p = int(np.argmax(m))
    idx = np.unravel_index(int(np.argmax(np.abs(R[p]))), R.shape[1:])
    anti = float(np.max(np.abs(R + np.swapaxes(R, 3, 4))))
    return _condition(name, m.max(), tol.tol_flat * scale,
                      witness={"point": X[p].tolist(), "index": [int(i) for i in idx],
                               "value": float(R[p][idx])},
                      antisymmetry_defect=anti), R


def flatness_verdict(form: BilinearFormField, X: np.ndarray | None = None, res: int | None = None,
                     tol: Tolerances = DEFAULT) -> dict:
    """Run the full decision procedure on a grid and return a report dictionary."""
    chart = form.chart
    if X is None:
        res = res or tol.grid_res or default_grid_res(chart.n)
        X = chart.grid(res)
    scale = form.scale(X)
    prof = rank_profile(form, X, tol, scale, res)
    case = classify(form, X, scale)
    n = chart.n
    if case == "general" and bool(np.all(prof.ranks_w == n)):
        case = "symplectic"
    report = {"case": case, "scale": scale, "grid_res": res, "rank_profile": prof.summary(),
              "conditions": []}
    conds = report["conditions"]

    need = {"symmetric": prof.constant_rank_g, "skew": prof.constant_rank_w,
            "symplectic": prof.constant_rank_g and prof.constant_rank_w,
            "general": prof.constant}[case]
    if case == "general" and prof.constant_rank_w and np.all(prof.ranks_w == n):
        need = prof.constant_rank_g
    if not need:
        report["verdict"], report["reason"] = "INCONCLUSIVE", "non-constant rank"
        return report

    def stat():
        s = stationarity_check(form, X, tol, scale)
        conds.append(_condition("stationarity", s["max_violation"], s["tol"]))
        return s

    def gsolve():
        sol = solve_connection(form, X, True, False, tol, scale)
        conds.append(_condition("g_solvability", sol.relative_residual("g"), tol.tol_lin))
        return sol

    def closed():
        v = closedness_residual(form, X)
        conds.append(_condition("d_omega", v, tol.tol_closed * scale))
        return v

    def wsolve():
        sol = solve_connection(form, X, False, True, tol, scale)
        conds.append(_condition("skew_solvability", sol.relative_residual("w"), tol.tol_lin))
        return sol

    if case == "symmetric":
        stat()
        gsolve()
        if conds[-1]["status"] != "fail" and conds[-2]["status"] != "fail":
            c, _ = _curvature_condition(form, ConnectionField(form, True, False, tol, scale), X, tol, scale)
            conds.append(c)
    elif case == "skew":
        closed()
        wsolve()
    elif case == "symplectic":
        stat()
        gsolve()
        closed()
        conn = ConnectionField(form, True, False, tol, scale)
        P, dP = skewpart.omega_bivector(form, X, tol)
        conds.append(_condition("jacobi", skewpart.jacobi_residual(P, dP), tol.tol_parallel * scale))
        if all(c["status"] != "fail" for c in conds[:2]):
            c, _ = _curvature_condition(form, conn, X, tol, scale)
            conds.append(c)
            p1 = skewpart.parallel1_residual(form, conn, X, tol)
            p2 = skewpart.parallelPg_residual(form, X, tol)
            conds.append(_condition("parallel1", p1, tol.tol_parallel * scale))
            conds.append(_condition("parallelPg", p2, tol.tol_parallel * scale))
    else:
        stat()
        closed()
        wsolve()
        joint = solve_connection(form, X, True, True, tol, scale)
        conds.append(_condition("joint_solvability", joint.relative_residual("g")
                                + joint.relative_residual("w"), tol.tol_lin))
        report["joint_rank"] = [int(joint.rank.min()), int(joint.rank.max())]
        if not joint.constant_rank:
            report["verdict"], report["reason"] = "INCONCLUSIVE", "non-constant rank"
            return report
        if all(c["status"] != "fail" for c in conds):
            c, _ = _curvature_condition(form, ConnectionField(form, True, True, tol, scale), X, tol, scale)
            conds.append(c)
    report["verdict"], report["reason"] = _verdict(conds)
    return report
