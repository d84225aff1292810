"""Numerical construction of flat charts and their certification by pullback."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla

from . import exprcore as ex
from .config import DEFAULT, Tolerances, default_cert_res, default_grid_res
from .connection import ConnectionField
from .curvature import field_derivative
from .forms import (AffineMap, BilinearFormField, Chart, ChartMap, NumericMap,
                    SingularJacobianError, split)
from .kernelrank import PivotError, choose_pivots, completion, null_spaces
from .ode import integrate
from .skewpart import hamiltonian_field, invert_omega


class ConstructionError(RuntimeError):
    pass


class UnsupportedCase(ConstructionError):
    pass


class FlowEscapeError(ConstructionError):
    pass


class DegenerateMoserError(ConstructionError):
    pass


# ---------------------------------------------------------------------------
# certification


def verify_flat_chart(B, phi: ChartMap, X: np.ndarray, base=None, tol: Tolerances = DEFAULT) -> dict:
    """Components of B in the chart y = phi(x) at the points X, compared with
    their value at the base point.  ``B`` is a BilinearFormField or a callable
    returning [p, i, j]."""
    Bf = B.B if isinstance(B, BilinearFormField) else B
    base = phi.chart.base if base is None else np.asarray(base, dtype=float)
    pts = np.vstack([base[None, :], X])
    J = phi.jacobian(pts)
    det = np.abs(np.linalg.det(J))
    if np.any(det < tol.jac_min):
        raise SingularJacobianError(f"chart Jacobian nearly singular (min |det| {det.min():.3g})")
    Ji = np.linalg.inv(J)
    comps = np.swapaxes(Ji, 1, 2) @ Bf(pts) @ Ji
    C = comps[0]
    dev = np.abs(comps[1:] - C).reshape(len(X), -1).max(axis=1)
    return {"C": C, "max_deviation": float(dev.max()) if len(dev) else 0.0, "per_point": dev,
            "min_abs_det": float(det.min())}


@dataclass
class FlatChartResult:
    chart_map: ChartMap
    C: np.ndarray
    max_deviation: float
    kind: str
    cert_res: int
    functions: Callable | None = None       # x -> [p, m] flat functions f^a
    c: np.ndarray | None = None             # constant coefficients of g in the f^a
    diagnostics: dict = field(default_factory=dict)

    def certify(self, B, tol: Tolerances = DEFAULT) -> dict:
        X = self.chart_map.chart.grid(self.cert_res)
        return verify_flat_chart(B, self.chart_map, X, tol=tol)


def _cert(B, phi, tol, res):
    res = res or tol.cert_res or default_cert_res(phi.chart.n)
    out = verify_flat_chart(B, phi, phi.chart.grid(res), tol=tol)
    return out, res


# ---------------------------------------------------------------------------
# Pfaffian system for parallel covectors


class PfaffianSystem:
    """Parallel covectors in the annihilator of R_g: d_j u_i = sum_s Gamma^s_ij u_s.

    The m free components are integrated; the remaining ones follow from the
    completion u_pivots = u_free F(x), with the pivot rows chosen once at the
    base point.
    """

    def __init__(self, form: BilinearFormField, tol: Tolerances = DEFAULT, scale: float | None = None):
        self.form = form
        self.tol = tol
        chart = form.chart
        self.chart = chart
        X = chart.grid(tol.grid_res or default_grid_res(chart.n))
        self.scale = form.scale(X) if scale is None else scale
        self.conn = ConnectionField(form, True, False, tol, self.scale)
        G0 = form.g(chart.base)[0]
        s = np.linalg.svd(G0, compute_uv=False)
        thr = max(tol.sigma_tol * s[0], 1e-12 * self.scale)
        self.m = int(np.sum(s > thr))
        self.k = chart.n - self.m
        K0 = null_spaces(G0[None], self.k)[0]
        self.free, self.pivots = choose_pivots(K0)

    def completion(self, X: np.ndarray) -> np.ndarray:
        if self.k == 0:
            return np.zeros((len(X), self.m, 0))
        K = null_spaces(self.form.g(X), self.k)
        F, cond = completion(K, self.free, self.pivots)
        if np.any(cond > self.tol.pivot_cond_max):
            raise PivotError("kernel pivot block became ill-conditioned along a path")
        return F

    def full(self, Ufree: np.ndarray, X: np.ndarray) -> np.ndarray:
        """Ufree[p, q, m] -> U[p, q, n]."""
        F = self.completion(X)
        N, q, _ = Ufree.shape
        U = np.zeros((N, q, self.chart.n))
        U[:, :, self.free] = Ufree
        U[:, :, self.pivots] = np.einsum("pqa,pab->pqb", Ufree, F)
        return U

    def integrate(self, targets: np.ndarray, U0free: np.ndarray, order=None, start=None,
                  f0=None) -> tuple[np.ndarray, np.ndarray]:
        """Integrate q covectors (initial free parts U0free[q, m], or [p, q, m])
        from ``start`` (default the base point) to each target along
        axis-parallel legs.  Returns full covectors [p, q, n] and potentials [p, q]."""
        targets = np.atleast_2d(targets)
        N, n = targets.shape
        U0free = np.asarray(U0free, dtype=float)
        if U0free.ndim == 2:
            U0free = np.broadcast_to(U0free, (N,) + U0free.shape)
        q = U0free.shape[1]
        m = self.m
        cur = np.broadcast_to(self.chart.base if start is None else start, (N, n)).astype(float).copy()
        state = np.concatenate([U0free.reshape(N, q * m),
                                np.zeros((N, q)) if f0 is None else np.asarray(f0, float).reshape(N, q)],
                               axis=1)
        order = range(n) if order is None else order
        for axis in order:
            delta = targets[:, axis] - cur[:, axis]
            if np.all(delta == 0):
                continue
            start_pts = cur.copy()

            def rhs(tau, y, start_pts=start_pts, delta=delta, axis=axis):
                P = start_pts.copy()
                P[:, axis] += tau * delta
                Uf = y[:, : q * m].reshape(N, q, m)
                U = self.full(Uf, P)
                gam = self.conn(P)                               # [p, s, i, j]
                # du_i/dtau = sum_s Gamma^s_{i,axis} u_s * delta, for free i
                du = np.einsum("psi,pqs->pqi", gam[:, :, self.free, axis], U) * delta[:, None, None]
                df = U[:, :, axis] * delta[:, None]
                return np.concatenate([du.reshape(N, q * m), df], axis=1)

            state = integrate(rhs, state, 0.0, 1.0, self.tol.ode_atol, self.tol.ode_rtol)
            cur[:, axis] = targets[:, axis]
        Uf = state[:, : q * m].reshape(N, q, m)
        return self.full(Uf, cur), state[:, q * m:]



def transport_rhs(conn: ConnectionField, n: int, q: int, velocity: Callable) -> Callable:
    """ODE right-hand side for (Y, U) with dY = velocity(Y, U) and
    dU_i = sum_{s,j} Gamma^s_ij U_s dY^j (full components)."""

    def rhs(tau, y):
        N = len(y)
        Y = y[:, :n]
        U = y[:, n:].reshape(N, q, n)
        V = velocity(tau, Y, U)
        gam = conn(Y)
        dU = np.einsum("psij,pqs,pj->pqi", gam, U, V)
        return np.concatenate([V, dU.reshape(N, q * n)], axis=1)

    return rhs


@dataclass
class ParallelCovector:
    base: np.ndarray
    initial: np.ndarray        # full covector at the base point
    grid: np.ndarray
    u: np.ndarray              # [p, n] on the grid
    f: np.ndarray              # [p] potential, f(base) = 0

    def annihilator_defect(self, K: np.ndarray) -> float:
        """max |sum_s v^s u_s| for kernel bases K[p, n, k] on the grid."""
        if K.shape[-1] == 0:
            return 0.0
        return float(np.max(np.abs(np.einsum("pn,pnk->pk", self.u, K))))


def integrate_pfaffian(form: BilinearFormField, u0_free, X: np.ndarray, tol: Tolerances = DEFAULT,
                       system: PfaffianSystem | None = None, order=None) -> ParallelCovector:
    sysm = PfaffianSystem(form, tol) if system is None else system
    u0 = np.atleast_2d(np.asarray(u0_free, dtype=float))
    U, f = sysm.integrate(X, u0, order)
    init = sysm.full(u0[None], sysm.chart.base[None])[0, 0]
    return ParallelCovector(sysm.chart.base.copy(), init, X, U[:, 0], f[:, 0])


def potential(pc: ParallelCovector) -> np.ndarray:
    """Line-integral potential of a parallel covector on its grid (f(base) = 0)."""
    return pc.f


def loop_defects(sysm: PfaffianSystem, U0free: np.ndarray, res: int) -> dict:
    """Holonomy and circulation around every grid rectangle in every coordinate plane.

    For a rectangle with corners a and a + h_k e_k + h_l e_l, the covector is
    transported from the base point to a, then to the far corner along the two
    orderings (k then l, and l then k); the difference of the arrivals is the
    holonomy and the difference of the potentials is the loop integral.
    """
    chart = sysm.chart
    n = chart.n
    axes = chart.axes(res)
    U0free = np.atleast_2d(U0free)
    corners, farc, planes = [], [], []
    for k in range(n):
        for l in range(k + 1, n):
            idx = [range(res)] * n
            idx[k] = range(res - 1)
            idx[l] = range(res - 1)
            mesh = np.stack(np.meshgrid(*[np.array(list(r)) for r in idx], indexing="ij"), -1).reshape(-1, n)
            a = np.stack([axes[d][mesh[:, d]] for d in range(n)], axis=1)
            b = a.copy()
            b[:, k] = axes[k][mesh[:, k] + 1]
            b[:, l] = axes[l][mesh[:, l] + 1]
            corners.append(a)
            farc.append(b)
            planes += [(k, l)] * len(a)
    if not corners:
        return {"holonomy": 0.0, "circulation": 0.0, "loops": 0}
    A = np.vstack(corners)
    Bc = np.vstack(farc)
    planes = np.array(planes)
    Ua, fa = sysm.integrate(A, U0free)
    Ufa = Ua[:, :, sysm.free]
    hol = 0.0
    circ = 0.0
    for (k, l) in sorted(set(map(tuple, planes))):
        sel = np.all(planes == (k, l), axis=1)
        u1, f1 = sysm.integrate(Bc[sel], Ufa[sel], order=[k, l], start=A[sel], f0=fa[sel])
        u2, f2 = sysm.integrate(Bc[sel], Ufa[sel], order=[l, k], start=A[sel], f0=fa[sel])
        hol = max(hol, float(np.max(np.abs(u1 - u2))))
        circ = max(circ, float(np.max(np.abs(f1 - f2))))
    return {"holonomy": hol, "circulation": circ, "loops": int(len(A))}


def path_uniqueness(sysm: PfaffianSystem, U0free: np.ndarray, X: np.ndarray) -> float:
    """max difference between integrations along the x1..xn and xn..x1 leg orders."""
    n = sysm.chart.n
    u1, f1 = sysm.integrate(X, U0free, order=list(range(n)))
    u2, f2 = sysm.integrate(X, U0free, order=list(range(n))[::-1])
    return float(max(np.max(np.abs(u1 - u2)), np.max(np.abs(f1 - f2))))


def zero_propagation(sysm: PfaffianSystem, X: np.ndarray) -> float:
    u, f = sysm.integrate(X, np.zeros((1, sysm.m)))
    return float(max(np.max(np.abs(u)), np.max(np.abs(f))))


# ---------------------------------------------------------------------------
# charts from parallel covectors


class PfaffianChartMap(ChartMap):
    """y = (L f(x), x_rest - base_rest), where f are potentials of parallel
    covectors with initial free parts U0free; Jacobian rows come from u."""

    kind = "pfaffian"

    def __init__(self, sysm: PfaffianSystem, U0free: np.ndarray, L: np.ndarray, rest):
        self.sysm = sysm
        self.chart = sysm.chart
        self.U0free = np.atleast_2d(U0free)
        self.L = np.asarray(L, dtype=float)
        self.rest = np.asarray(rest, dtype=int)

    def evaluate(self, X):
        X = np.atleast_2d(X)
        U, f = self.sysm.integrate(X, self.U0free)
        return U, f

    def functions(self, X):
        U, f = self.evaluate(X)
        return f @ self.L.T

    def covectors(self, X):
        U, _ = self.evaluate(X)
        return np.einsum("ab,pbn->pan", self.L, U)

    def __call__(self, X):
        X = np.atleast_2d(X)
        _, f = self.evaluate(X)
        return np.concatenate([f @ self.L.T, X[:, self.rest] - self.chart.base[self.rest]], axis=1)

    def jacobian(self, X):
        X = np.atleast_2d(X)
        U, _ = self.evaluate(X)
        n = self.chart.n
        J = np.zeros((len(X), n, n))
        m = self.L.shape[0]
        J[:, :m, :] = np.einsum("ab,pbn->pan", self.L, U)
        for r, c in enumerate(self.rest):
            J[:, m + r, c] = 1.0
        return J


def normalize_coefficients(c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """L with c = L^T diag(eps) L, eps = +-1; returns (L, eps)."""
    lam, Q = np.linalg.eigh(0.5 * (c + c.T))
    order = np.argsort(-lam)
    lam, Q = lam[order], Q[:, order]
    L = np.sqrt(np.abs(lam))[:, None] * Q.T
    return L, np.sign(lam)


def flat_chart_symmetric(form: BilinearFormField, tol: Tolerances = DEFAULT, cert_res: int | None = None,
                         certify: bool = True) -> FlatChartResult:
    """Flat chart for a symmetric form: potentials of m parallel covectors plus
    n - m original coordinates."""
    g_form = form if _skew_is_zero(form) else split(form)[0]
    sysm = PfaffianSystem(g_form, tol)
    chart = form.chart
    n, m = chart.n, sysm.m
    if m == 0:
        phi = AffineMap(chart, np.eye(n), chart.base)
        out, res = _cert(g_form, phi, tol, cert_res) if certify else ({"C": np.zeros((n, n)), "max_deviation": 0.0}, cert_res)
        return FlatChartResult(phi, out["C"], out["max_deviation"], "symmetric", res,
                               functions=lambda X: np.zeros((len(np.atleast_2d(X)), 0)),
                               c=np.zeros((0, 0)), diagnostics={"m": 0})
    U0free = np.eye(m)
    U0 = sysm.full(U0free[None], chart.base[None])[0]            # [m, n]
    G0 = g_form.g(chart.base)[0]
    Up = np.linalg.pinv(U0)                                       # [n, m]
    c_raw = Up.T @ G0 @ Up
    L, eps = normalize_coefficients(c_raw)
    Un = L @ U0
    _, _, piv = sla.qr(Un, pivoting=True)
    rest = np.sort(piv[m:])
    phi = PfaffianChartMap(sysm, U0free, L, rest)
    diag = {"m": m, "rest_coordinates": [chart.names[i] for i in rest], "eps": eps.tolist(),
            "pivots": [int(i) for i in sysm.pivots]}
    if certify:
        out, res = _cert(g_form, phi, tol, cert_res)
    else:
        out, res = {"C": None, "max_deviation": float("nan")}, cert_res
    return FlatChartResult(phi, out["C"], out["max_deviation"], "symmetric", res,
                           functions=phi.functions, c=np.diag(eps), diagnostics=diag)


def _skew_is_zero(form: BilinearFormField) -> bool:
    return all(e.is_zero for row in form.skew_entries() for e in row)


# ---------------------------------------------------------------------------
# Darboux by the Moser path


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(32)
_GL_NODES = 0.5 * (_GL_NODES + 1.0)
_GL_WEIGHTS = 0.5 * _GL_WEIGHTS


def radial_primitive(sigma: Callable, base: np.ndarray, X: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """alpha_j(x) = int_0^1 s sum_i (x - base)^i sigma_ij(base + s (x - base)) ds,
    so that d alpha = sigma for a closed sigma (Gauss-Legendre, 32 nodes)."""
    X = np.atleast_2d(X)
    N, n = X.shape
    out = np.empty((N, n))
    for a in range(0, N, chunk):
        D = X[a: a + chunk] - base
        pts = base + _GL_NODES[None, :, None] * D[:, None, :]
        S = sigma(pts.reshape(-1, n)).reshape(len(D), len(_GL_NODES), n, n)
        out[a: a + chunk] = np.einsum("q,q,pi,pqij->pj", _GL_WEIGHTS, _GL_NODES, D, S)
    return out


def symplectic_basis(w0: np.ndarray) -> tuple[np.ndarray, list]:
    """E with E^T w0 E in canonical form; pairs are placed at the positions of
    the vectors chosen by the Gram-Schmidt pivots, so an already canonical
    constant form gives E = identity."""
    n = len(w0)
    vecs = {i: np.eye(n)[:, i] for i in range(n)}
    E = np.zeros((n, n))
    pairs = []
    while vecs:
        ia = min(vecs)
        a = vecs.pop(ia)
        if not vecs:
            raise DegenerateMoserError("form is degenerate at the base point")
        vals = {j: a @ w0 @ v for j, v in vecs.items()}
        ib = max(vals, key=lambda j: (abs(vals[j]), -j))
        lam = vals[ib]
        if abs(lam) < 1e-12:
            raise DegenerateMoserError("form is degenerate at the base point")
        b = vecs.pop(ib) / lam
        for j, v in vecs.items():
            wa = v @ w0 @ a
            wb = v @ w0 @ b
            vecs[j] = v - wb * a + wa * b
        E[:, ia] = a
        E[:, ib] = b
        pairs.append((ia, ib))
    return E, pairs


class MoserChartMap(ChartMap):
    """y = base + E^{-1} (psi^{-1}(x) - base), psi the time-one Moser flow."""

    kind = "moser-flow"

    def __init__(self, chart: Chart, wfun: Callable, E: np.ndarray, tol: Tolerances = DEFAULT,
                 escape_box: np.ndarray | None = None):
        self.chart = chart
        self.wfun = wfun
        self.base = chart.base
        self.w0 = wfun(chart.base[None])[0]
        self.Einv = np.linalg.inv(E)
        self.tol = tol
        self.h = tol.h_jac * chart.diameter
        half = chart.box - chart.base[:, None]
        self.escape_box = chart.base[:, None] + 2.0 * half if escape_box is None else escape_box

    def sigma(self, X):
        return self.wfun(X) - self.w0

    def field(self, t, Y):
        alpha = radial_primitive(self.sigma, self.base, Y)
        Wt = self.w0 + t * self.sigma(Y)
        return np.linalg.solve(Wt, alpha[..., None])[..., 0]

    def _check(self, Y):
        lo, hi = self.escape_box[:, 0], self.escape_box[:, 1]
        if np.any(Y < lo) or np.any(Y > hi):
            raise FlowEscapeError("Moser flow left the box")

    def flow_back(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return integrate(self.field, X, 1.0, 0.0, self.tol.ode_atol, self.tol.ode_rtol, check=self._check)

    def __call__(self, X):
        Y = self.flow_back(X)
        return self.base + (Y - self.base) @ self.Einv.T

    def jacobian(self, X):
        return NumericMap(self.chart, self.__call__, self.h).jacobian(X)


def _form_callable(w) -> Callable:
    if isinstance(w, BilinearFormField):
        return w.w
    return w


def _moser_nondegenerate(chart: Chart, wfun: Callable, tol: Tolerances, res: int) -> float:
    X = chart.grid(res)
    w0 = wfun(chart.base[None])[0]
    Wx = wfun(X)
    worst = 0.0
    for t in np.linspace(0.0, 1.0, 5):
        c = np.linalg.cond(w0 + t * (Wx - w0))
        worst = max(worst, float(np.max(c)))
    return worst


def darboux_symplectic(w, chart: Chart | None = None, tol: Tolerances = DEFAULT,
                       cert_res: int | None = None, certify: bool = True) -> FlatChartResult:
    """Darboux chart for a closed nondegenerate 2-form by the Moser path."""
    if chart is None:
        chart = w.chart
    wfun = _form_callable(w)
    n = chart.n
    if n % 2:
        raise DegenerateMoserError("odd dimension: a 2-form cannot be nondegenerate")
    res = cert_res or tol.cert_res or default_cert_res(n)
    work = chart
    shrinks = 0
    while True:
        worst = _moser_nondegenerate(work, wfun, tol, min(res, 5))
        if worst <= tol.omega_cond_max:
            break
        if shrinks >= tol.max_shrink:
            raise DegenerateMoserError(f"Moser path degenerate (cond {worst:.3g}) even after {shrinks} halvings")
        work = work.scaled(0.5)
        shrinks += 1
    w0 = wfun(work.base[None])[0]
    E, pairs = symplectic_basis(w0)
    phi = MoserChartMap(work, wfun, E, tol)
    diag = {"shrinks": shrinks, "moser_cond": worst, "pairs": [list(map(int, p)) for p in pairs],
            "box": work.box.tolist()}
    if certify:
        out = verify_flat_chart(lambda P: wfun(P), phi, work.grid(res), tol=tol)
    else:
        out = {"C": E.T @ w0 @ E, "max_deviation": float("nan")}
    return FlatChartResult(phi, out["C"], out["max_deviation"], "darboux", res, diagnostics=diag)


# ---------------------------------------------------------------------------
# degenerate Darboux: straighten the kernel foliation, then reduce


class StraighteningMap(ChartMap):
    """x -> (D(w(x)), x_piv - base_piv) where w(x) are the free coordinates of
    the point reached by flowing x along the graph-normalised kernel frame back
    to the slice x_piv = base_piv, and D is a Darboux chart of the slice."""

    kind = "kernel-straightening"

    def __init__(self, chart: Chart, kernel_frame: Callable, free, piv, inner: ChartMap | None,
                 tol: Tolerances = DEFAULT):
        self.chart = chart
        self.frame = kernel_frame
        self.free = np.asarray(free, dtype=int)
        self.piv = np.asarray(piv, dtype=int)
        self.inner = inner
        self.tol = tol
        self.h = tol.h_jac * chart.diameter

    def slice_coords(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        t = X[:, self.piv] - self.chart.base[self.piv]

        def rhs(tau, Y):
            return -np.einsum("pna,pa->pn", self.frame(Y), t)

        Y = integrate(rhs, X, 0.0, 1.0, self.tol.ode_atol, self.tol.ode_rtol)
        return Y[:, self.free], t

    def __call__(self, X):
        w, t = self.slice_coords(X)
        if self.inner is not None:
            w = self.inner(w)
        return np.concatenate([w, t], axis=1)

    def jacobian(self, X):
        return NumericMap(self.chart, self.__call__, self.h).jacobian(X)


def graph_frame(form: BilinearFormField, k: int, piv) -> Callable:
    """Kernel frame v = K (K_piv)^{-1}: v_a has pivot components delta_ab."""
    piv = np.asarray(piv, dtype=int)

    def frame(X):
        K = null_spaces(form.w(X), k)
        return K @ np.linalg.inv(K[:, piv, :])

    return frame


def darboux_degenerate(form: BilinearFormField, tol: Tolerances = DEFAULT,
                       cert_res: int | None = None) -> FlatChartResult:
    """Flat chart for a closed 2-form of constant rank p < n."""
    chart = form.chart
    n = chart.n
    w_form = form if _sym_is_zero(form) else split(form)[1]
    W0 = w_form.w(chart.base)[0]
    scale = w_form.scale(chart.grid(3))
    s = np.linalg.svd(W0, compute_uv=False)
    p = int(np.sum(s > max(tol.sigma_tol * s[0], 1e-12 * scale)))
    k = n - p
    res = cert_res or tol.cert_res or default_cert_res(n)
    if p == n:
        return darboux_symplectic(w_form, chart, tol, cert_res)
    K0 = null_spaces(W0[None], k)[0]
    free, piv = choose_pivots(K0)
    frame = graph_frame(w_form, k, piv)
    # integrability and invariance diagnostics on the analysis grid
    Xa = chart.grid(tol.grid_res or default_grid_res(n))
    h = tol.h_curv * chart.diameter
    V = frame(Xa)                                        # [p, n, a]
    dV = field_derivative(frame, Xa, h, tol.richardson)  # [p, s, n, a]
    comm = 0.0
    for a in range(k):
        for b in range(a + 1, k):
            br = (np.einsum("ps,psi->pi", V[:, :, a], dV[:, :, :, b])
                  - np.einsum("ps,psi->pi", V[:, :, b], dV[:, :, :, a]))
            comm = max(comm, float(np.max(np.abs(br))))
    Wv = w_form.w(Xa)
    dW = w_form.dw(Xa)
    lie = 0.0
    for a in range(k):
        v = V[:, :, a]
        dv = dV[:, :, :, a]          # [p, s, i] = d_s v^i
        L = (np.einsum("ps,psij->pij", v, dW) + np.einsum("psj,pis->pij", Wv, dv)
             + np.einsum("pis,pjs->pij", Wv, dv))
        lie = max(lie, float(np.max(np.abs(L))))
    if comm > tol.commute_tol:
        raise ConstructionError(f"kernel frame does not commute (defect {comm:.3g})")
    inner = None
    inner_res = None
    if p > 0:
        # the reduced chart must cover the slice coordinates of the whole box
        w, _ = StraighteningMap(chart, frame, free, piv, None, tol).slice_coords(chart.grid(res))
        sub0 = chart.sub(free)
        lo = np.minimum(w.min(axis=0), sub0.box[:, 0])
        hi = np.maximum(w.max(axis=0), sub0.box[:, 1])
        pad = 0.05 * (hi - lo)
        sub = Chart(sub0.names, np.stack([lo - pad, hi + pad], axis=1), sub0.base)
        subs = {chart.names[i]: ex.Const(ex.Fraction(float(chart.base[i])).limit_denominator(10**12))
                for i in piv}
        E = w_form.skew_entries()
        red = BilinearFormField(sub, [[ex.substitute(E[i, j], subs) for j in free] for i in free])
        inner_res = darboux_symplectic(red, sub, tol, cert_res)
        inner = inner_res.chart_map
    phi = StraighteningMap(chart, frame, free, piv, inner, tol)
    out = verify_flat_chart(w_form, phi, chart.grid(res), tol=tol)
    diag = {"rank": p, "kernel_dim": k, "pivots": [int(i) for i in piv], "commutator_defect": comm,
            "lie_derivative_defect": lie,
            "reduced": None if inner_res is None else {"max_deviation": inner_res.max_deviation,
                                                       **inner_res.diagnostics}}
    return FlatChartResult(phi, out["C"], out["max_deviation"], "darboux-degenerate", res, diagnostics=diag)


def _sym_is_zero(form: BilinearFormField) -> bool:
    return all(e.is_zero for row in form.sym_entries() for e in row)


# ---------------------------------------------------------------------------
# symmetric part flat, skew part symplectic


class ChebyshevField:
    """Tensor-product Chebyshev interpolant of a matrix field on a box."""

    def __init__(self, fn: Callable, box: np.ndarray, deg: int):
        self.box = np.asarray(box, dtype=float)
        d = len(self.box)
        nodes = np.cos(np.pi * (np.arange(deg + 1) + 0.5) / (deg + 1))
        self.deg = deg
        mesh = np.stack(np.meshgrid(*[nodes] * d, indexing="ij"), -1).reshape(-1, d)
        pts = self._from_unit(mesh)
        vals = fn(pts)
        self.shape = vals.shape[1:]
        V = np.polynomial.chebyshev.chebvander(nodes, deg)       # nodes x coeffs
        Vinv = np.linalg.inv(V)
        coef = vals.reshape((deg + 1,) * d + (-1,))
        for ax in range(d):
            coef = np.moveaxis(np.tensordot(Vinv, np.moveaxis(coef, ax, 0), axes=(1, 0)), 0, ax)
        self.coef = coef

    def _from_unit(self, U):
        lo, hi = self.box[:, 0], self.box[:, 1]
        return lo + (U + 1) * 0.5 * (hi - lo)

    def _to_unit(self, X):
        lo, hi = self.box[:, 0], self.box[:, 1]
        return 2 * (X - lo) / (hi - lo) - 1

    def __call__(self, X):
        U = self._to_unit(np.atleast_2d(X))
        N, d = U.shape
        k = self.deg + 1
        T = [np.polynomial.chebyshev.chebvander(U[:, a], self.deg) for a in range(d)]   # N x k
        res = T[0] @ self.coef.reshape(k, -1)                  # first axis through BLAS
        for a in range(1, d):
            res = np.einsum("pi,pir->pr", T[a], res.reshape(N, k, -1))
        return res.reshape((N,) + self.shape)


class FiberMoser:
    """Moser flow in coordinates q = (t, z) for a closed form whose components
    depend on z only.  The primitive contracts with the radial field in z alone,
    so its t-components are the increments of the functions f^a with
    df^a = omega(d/dt^a, .), and the flow keeps these functions affine."""

    def __init__(self, wz: Callable, m: int, zbox: np.ndarray, tol: Tolerances = DEFAULT, deg: int = 0):
        self.wz = wz
        self.m = m
        self.zbox = np.asarray(zbox, dtype=float)
        self.w0 = wz(np.zeros((1, len(self.zbox))))[0]
        self.tol = tol
        # the primitive depends on z only, so it is interpolated once
        self.alpha = ChebyshevField(self.primitive, self.zbox, deg) if deg else self.primitive

    def primitive(self, z):
        N, d = z.shape
        n = self.m + d
        pts = _GL_NODES[None, :, None] * z[:, None, :]
        S = self.wz(pts.reshape(-1, d)).reshape(N, len(_GL_NODES), n, n) - self.w0
        A = np.einsum("pk,pqkj->pqj", z, S[:, :, self.m:, :])
        A[:, :, self.m:] *= _GL_NODES[None, :, None]
        return np.einsum("q,pqj->pj", _GL_WEIGHTS, A)

    def field(self, s, Q):
        z = Q[:, self.m:]
        Ws = self.w0 + s * (self.wz(z) - self.w0)
        return np.linalg.solve(Ws, self.alpha(z)[..., None])[..., 0]

    def _check(self, Q):
        z = Q[:, self.m:]
        if np.any(z < self.zbox[:, 0]) or np.any(z > self.zbox[:, 1]):
            raise FlowEscapeError("Moser flow left the transversal box")

    def flow_back(self, Q):
        return integrate(self.field, np.atleast_2d(Q), 1.0, 0.0, self.tol.ode_atol, self.tol.ode_rtol,
                         check=self._check)

    def path_condition(self, box: np.ndarray, res: int = 5) -> float:
        grids = np.meshgrid(*[np.linspace(lo, hi, res) for lo, hi in box], indexing="ij")
        W = self.wz(np.stack([g.ravel() for g in grids], axis=1))
        return max(float(np.max(np.linalg.cond(self.w0 + s * (W - self.w0)))) for s in np.linspace(0, 1, 5))


class JointChartMap(ChartMap):
    """y = (f(x), F(t(x), z(x))) where (t, z) are rectifying coordinates of the
    Hamiltonian fields of the flat functions f^a, obtained by flowing back to an
    affine transversal, and F completes f to a flat chart."""

    kind = "rectified-hamiltonian"

    def __init__(self, form, pf: PfaffianChartMap, V0, Z, tail: Callable, tol: Tolerances, newton_iters=8):
        self.form = form
        self.chart = form.chart
        self.pf = pf
        self.V0 = V0
        self.Z = Z
        self.tail = tail
        self.tol = tol
        self.iters = newton_iters
        self.h = tol.h_jac * self.chart.diameter
        self.conn = pf.sysm.conn
        self.newton_residual = 0.0

    def hamiltonian(self, Y, U):
        P = invert_omega(self.form.w(Y), self.tol)
        return hamiltonian_field(U, P[:, None, :, :])          # [p, a, n]

    def project(self, X):
        """Rectifying coordinates (t, z) and the flat functions at X."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        N, n = X.shape
        Ub, fb = self.pf.evaluate(X)
        U = np.einsum("ab,pbn->pan", self.pf.L, Ub)             # [p, m, n]
        fvals = fb @ self.pf.L.T
        m = U.shape[1]
        Y = X.copy()
        t = np.zeros((N, m))
        base = self.chart.base
        for it in range(self.iters):
            Xh = self.hamiltonian(Y, U)                         # [p, a, n]
            A = np.einsum("na,pbn->pab", self.V0, Xh)           # V0^T X(Y)
            g = (Y - base) @ self.V0
            # one stopping decision for the whole batch keeps stencil points consistent
            if it >= 2 and np.max(np.abs(g)) <= 1e-14 * self.chart.diameter:
                break
            dt = np.linalg.solve(A, g[..., None])[..., 0]
            t = t + dt

            def vel(tau, Yc, Uc, dt=dt):
                return -np.einsum("pa,pan->pn", dt, self.hamiltonian(Yc, Uc))

            rhs = transport_rhs(self.conn, n, m, vel)
            state = integrate(rhs, np.concatenate([Y, U.reshape(N, -1)], axis=1), 0.0, 1.0,
                              self.tol.ode_atol, self.tol.ode_rtol)
            Y = state[:, :n]
            U = state[:, n:].reshape(N, m, n)
        self.newton_residual = float(np.max(np.abs((Y - base) @ self.V0)))
        z = (Y - base) @ self.Z
        return t, z, fvals

    def __call__(self, X):
        t, z, f = self.project(X)
        return np.concatenate([f, self.tail(t, z)], axis=1)

    def jacobian(self, X):
        return NumericMap(self.chart, self.__call__, self.h).jacobian(X)


def _cheb_degree(d: int) -> int:
    return {1: 24, 2: 20, 3: 12}.get(d, 8)


def joint_flat_chart(form: BilinearFormField, tol: Tolerances = DEFAULT, cert_res: int | None = None,
                     theta: str = "max-margin") -> FlatChartResult:
    """Flat chart for g + omega with g flat and omega symplectic."""
    chart = form.chart
    n = chart.n
    res = cert_res or tol.cert_res or default_cert_res(n)
    g_form, w_form = split(form)
    sym = flat_chart_symmetric(g_form, tol, cert_res=res, certify=False)
    pf: PfaffianChartMap = sym.chart_map if sym.diagnostics["m"] else None
    m = sym.diagnostics["m"]
    if m == 0:
        return darboux_symplectic(w_form, chart, tol, cert_res)
    Xc = chart.grid(res)
    U = pf.covectors(Xc)
    P = invert_omega(form.w(Xc), tol)
    br = np.einsum("pai,pbj,pij->pab", U, U, P)
    var = float(np.max(np.var(br, axis=0)))
    if var > tol.bracket_var_tol:
        raise ConstructionError(f"brackets of the flat functions are not constant (variance {var:.3g})")
    cbr = br[0] if len(br) else np.zeros((m, m))
    rk = int(np.linalg.matrix_rank(cbr, tol=1e-8 * max(1.0, np.max(np.abs(cbr)))))
    diag = {"m": m, "bracket_variance": var, "brackets": cbr.tolist(), "bracket_rank": rk}
    if m == n:
        out = verify_flat_chart(form, pf, Xc, tol=tol)
        return FlatChartResult(pf, out["C"], out["max_deviation"], "joint", res, functions=pf.functions,
                               c=sym.c, diagnostics=diag)
    base = chart.base
    U0 = pf.covectors(base[None])
    V0 = hamiltonian_field(U0[0], invert_omega(form.w(base[None]), tol)[0][None]).T   # [n, m]
    # transversal: orthogonal complement of span V0, the largest-margin choice
    Q, _ = np.linalg.qr(np.hstack([V0, np.eye(n)]))
    Z = Q[:, m:n]
    diag["transversal"] = Z.tolist()
    diag["theta_choice"] = theta
    proto = JointChartMap(form, pf, V0, Z, lambda t, z: z, tol)
    _, zc, _ = proto.project(Xc)
    lo, hi = zc.min(axis=0), zc.max(axis=0)
    pad = 0.25 * (hi - lo) + 1e-3 * chart.diameter
    zbox = np.stack([np.minimum(lo - pad, -pad), np.maximum(hi + pad, pad)], axis=1)

    def rectified_form(zs):
        # components of omega in (t, z) at the transversal point; they do not depend on t
        pts = base + zs @ Z.T
        Pz = invert_omega(form.w(pts), tol)
        Xh = hamiltonian_field(pf.covectors(pts), Pz[:, None, :, :])        # [p, a, n]
        M = np.concatenate([np.swapaxes(Xh, 1, 2), np.broadcast_to(Z, (len(pts),) + Z.shape)], axis=2)
        return np.swapaxes(M, 1, 2) @ form.w(pts) @ M

    cheb = ChebyshevField(rectified_form, 1.6 * zbox, _cheb_degree(n - m))
    moser = FiberMoser(cheb, m, 1.6 * zbox, tol, _cheb_degree(n - m))
    diag["moser_cond"] = moser.path_condition(zbox)
    if diag["moser_cond"] > tol.omega_cond_max:
        raise DegenerateMoserError(f"Moser path degenerate (cond {diag['moser_cond']:.3g})")
    # gradients of the flat functions in (t, z) at the base point; the flow keeps f affine in them
    ell = U0[0] @ np.concatenate([V0, Z], axis=1)        # [m, n]
    Q, _ = np.linalg.qr(ell.T, mode="complete")
    K = Q[:, m:].T
    tail = lambda t, z: moser.flow_back(np.concatenate([t, z], axis=1)) @ K.T
    phi = JointChartMap(form, pf, V0, Z, tail, tol)
    out = verify_flat_chart(form, phi, Xc, tol=tol)
    diag["newton_residual"] = phi.newton_residual
    t, z, fv = phi.project(Xc)
    qp = moser.flow_back(np.concatenate([t, z], axis=1))
    diag["function_drift"] = float(np.max(np.abs(fv - pf.functions(base[None]) - qp @ ell.T)))
    return FlatChartResult(phi, out["C"], out["max_deviation"], "joint", res, functions=pf.functions,
                           c=sym.c, diagnostics=diag)


# ---------------------------------------------------------------------------
# dispatch


def construct(form: BilinearFormField, tol: Tolerances = DEFAULT, cert_res: int | None = None) -> FlatChartResult:
    """Pick the construction matching the form's profile."""
    chart = form.chart
    X = chart.grid(tol.grid_res or default_grid_res(chart.n))
    scale = form.scale(X)
    W = form.w(X)
    G = form.g(X)
    if np.max(np.abs(W)) <= 1e-14 * scale:
        return flat_chart_symmetric(form, tol, cert_res)
    if np.max(np.abs(G)) <= 1e-14 * scale:
        s = np.linalg.svd(W, compute_uv=False)
        if np.all(s[:, -1] > tol.sigma_tol * s[:, 0]):
            return darboux_symplectic(form, chart, tol, cert_res)
        return darboux_degenerate(form, tol, cert_res)
    s = np.linalg.svd(W, compute_uv=False)
    if np.all(s[:, -1] > tol.sigma_tol * s[:, 0]):
        return joint_flat_chart(form, tol, cert_res)
    raise UnsupportedCase("unsupported case: general form with degenerate skew part and nonzero symmetric part")
