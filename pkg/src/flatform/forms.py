"""Tensor fields on a coordinate box: charts, bilinear forms, vector fields and chart maps."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import exprcore as ex
from .config import DEFAULT, Tolerances, default_cert_res


class SingularJacobianError(ArithmeticError):
    pass


# ---------------------------------------------------------------------------
# charts and points


@dataclass(frozen=True)
class Chart:
    names: tuple
    box: np.ndarray            # shape (n, 2)
    base: np.ndarray           # base point, shape (n,)

    def __init__(self, names: Sequence[str], box, base=None):
        names = tuple(names)
        if len(set(names)) != len(names):
            raise ValueError("chart variable names must be distinct")
        box = np.asarray(box, dtype=float).reshape(len(names), 2)
        if np.any(box[:, 1] <= box[:, 0]):
            raise ValueError("box intervals must have positive length")
        base = box.mean(axis=1) if base is None else np.asarray(base, dtype=float)
        if base.shape != (len(names),):
            raise ValueError("base point has the wrong dimension")
        if np.any(base < box[:, 0]) or np.any(base > box[:, 1]):
            raise ValueError("base point must lie in the box")
        box.setflags(write=False)
        base.setflags(write=False)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "box", box)
        object.__setattr__(self, "base", base)

    @property
    def n(self) -> int:
        return len(self.names)

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.box[:, 1] - self.box[:, 0]))

    def axes(self, res: int) -> list[np.ndarray]:
        return [np.linspace(lo, hi, res) for lo, hi in self.box]

    def grid(self, res: int) -> np.ndarray:
        """Axis-uniform grid including the box corners, shape (res**n, n)."""
        mesh = np.meshgrid(*self.axes(res), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def contains(self, X, slack: float = 0.0) -> np.ndarray:
        X = np.atleast_2d(X)
        lo = self.box[:, 0] - slack
        hi = self.box[:, 1] + slack
        return np.all((X >= lo) & (X <= hi), axis=1)

    def sub(self, idx: Sequence[int], base=None) -> "Chart":
        idx = list(idx)
        return Chart([self.names[i] for i in idx], self.box[idx],
                     self.base[idx] if base is None else base)

    def scaled(self, factor: float) -> "Chart":
        """Box shrunk about the base point by ``factor`` (clipped to the box)."""
        lo = self.base - factor * (self.base - self.box[:, 0])
        hi = self.base + factor * (self.box[:, 1] - self.base)
        return Chart(self.names, np.stack([lo, hi], axis=1), self.base)

    def point(self, values) -> "Point":
        return Point(self, values)


@dataclass(frozen=True)
class Point:
    chart: Chart
    values: np.ndarray

    def __init__(self, chart: Chart, values):
        v = np.asarray(values, dtype=float)
        if v.shape != (chart.n,):
            raise ValueError(f"point needs {chart.n} coordinates")
        if not chart.contains(v, 1e-12 * max(1.0, chart.diameter))[0]:
            raise ValueError("point lies outside the chart box")
        object.__setattr__(self, "chart", chart)
        object.__setattr__(self, "values", v)


def _as_points(chart: Chart, p) -> np.ndarray:
    if isinstance(p, Point):
        return p.values[None, :]
    return np.atleast_2d(np.asarray(p, dtype=float))


# ---------------------------------------------------------------------------
# fields


def _expr_matrix(entries, chart: Chart) -> np.ndarray:
    rows = []
    for row in entries:
        r = []
        for e in row:
            if isinstance(e, str):
                e = ex.parse(e, chart)
            e = ex.as_expr(e)
            bad = ex.variables(e) - set(chart.names)
            if bad:
                raise ValueError(f"undeclared variable(s) {sorted(bad)}")
            r.append(e)
        rows.append(r)
    out = np.empty((len(rows), len(rows[0]) if rows else 0), dtype=object)
    for i, r in enumerate(rows):
        if len(r) != out.shape[1]:
            raise ValueError("ragged matrix")
        for j, e in enumerate(r):
            out[i, j] = e
    return out


class BilinearFormField:
    """A general (0,2) tensor field B = g + omega given by expression entries."""

    def __init__(self, chart: Chart, entries):
        self.chart = chart
        E = _expr_matrix(entries, chart)
        n = chart.n
        if E.shape != (n, n):
            raise ValueError(f"expected a {n}x{n} matrix of entries")
        self.entries = E
        self._B = ex.lambdify(E, chart.names)
        dE = np.empty((n, n, n), dtype=object)
        for k, name in enumerate(chart.names):
            for i in range(n):
                for j in range(n):
                    dE[k, i, j] = ex.differentiate(E[i, j], name)
        self.d_entries = dE
        self._dB = ex.lambdify(dE, chart.names)

    @classmethod
    def from_parts(cls, chart: Chart, g=None, w=None) -> "BilinearFormField":
        n = chart.n
        G = _expr_matrix(g, chart) if g is not None else np.full((n, n), ex.ZERO, dtype=object)
        W = _expr_matrix(w, chart) if w is not None else np.full((n, n), ex.ZERO, dtype=object)
        return cls(chart, [[ex.add(G[i, j], W[i, j]) for j in range(n)] for i in range(n)])

    @property
    def n(self) -> int:
        return self.chart.n

    # numeric views ------------------------------------------------------
    def B(self, X) -> np.ndarray:
        return self._B(_as_points(self.chart, X))

    def dB(self, X) -> np.ndarray:
        """Derivatives, indexed [point, k, i, j] = d_k B_ij."""
        return self._dB(_as_points(self.chart, X))

    def g(self, X) -> np.ndarray:
        B = self.B(X)
        return 0.5 * (B + np.swapaxes(B, -1, -2))

    def w(self, X) -> np.ndarray:
        B = self.B(X)
        return 0.5 * (B - np.swapaxes(B, -1, -2))

    def dg(self, X) -> np.ndarray:
        D = self.dB(X)
        return 0.5 * (D + np.swapaxes(D, -1, -2))

    def dw(self, X) -> np.ndarray:
        D = self.dB(X)
        return 0.5 * (D - np.swapaxes(D, -1, -2))

    # symbolic views -----------------------------------------------------
    def sym_entries(self) -> np.ndarray:
        n = self.n
        E = self.entries
        half = ex.Const(ex.Fraction(1, 2))
        out = np.empty((n, n), dtype=object)
        # one expression per unordered pair so the result is exactly symmetric
        for i in range(n):
            out[i, i] = E[i, i]
            for j in range(i + 1, n):
                out[i, j] = out[j, i] = ex.mul(half, ex.add(E[i, j], E[j, i]))
        return out

    def skew_entries(self) -> np.ndarray:
        n = self.n
        E = self.entries
        half = ex.Const(ex.Fraction(1, 2))
        out = np.empty((n, n), dtype=object)
        for i in range(n):
            out[i, i] = ex.ZERO
            for j in range(i + 1, n):
                diff = ex.add(E[i, j], ex.neg(E[j, i]))
                out[i, j] = ex.mul(half, diff)
                out[j, i] = ex.mul(ex.neg(half), diff)
        return out

    def scale(self, X) -> float:
        """max(1, max |B|) over the sample points; the unit of relative tolerances."""
        return float(max(1.0, np.max(np.abs(self.B(X)))))

    def __repr__(self):
        return f"BilinearFormField({[[str(e) for e in r] for r in self.entries]})"


def split(B: BilinearFormField) -> tuple[BilinearFormField, BilinearFormField]:
    """Symmetric and skew parts, each as a bilinear form field."""
    return (BilinearFormField(B.chart, B.sym_entries()),
            BilinearFormField(B.chart, B.skew_entries()))


class VectorField:
    """Components v^i given by expressions."""

    def __init__(self, chart: Chart, comps):
        self.chart = chart
        self.comps = tuple(ex.parse(c, chart) if isinstance(c, str) else ex.as_expr(c) for c in comps)
        if len(self.comps) != chart.n:
            raise ValueError("wrong number of components")
        self._f = ex.lambdify(list(self.comps), chart.names)
        jac = [[ex.differentiate(c, v) for v in chart.names] for c in self.comps]
        self.jac_entries = jac
        self._j = ex.lambdify(jac, chart.names)

    def __call__(self, X) -> np.ndarray:
        return self._f(_as_points(self.chart, X))

    def jacobian(self, X) -> np.ndarray:
        """[point, i, s] = d_s v^i."""
        return self._j(_as_points(self.chart, X))


class CovectorField:
    """Components u_i, either as expressions or as numeric samples on a grid."""

    def __init__(self, chart: Chart, comps=None, *, samples=None, grid=None):
        self.chart = chart
        if comps is not None:
            self.comps = tuple(ex.parse(c, chart) if isinstance(c, str) else ex.as_expr(c)
                               for c in comps)
            self._f = ex.lambdify(list(self.comps), chart.names)
            self.samples = self.grid = None
        else:
            if samples is None or grid is None:
                raise ValueError("numeric covector fields need samples and their grid")
            self.comps = None
            self.samples = np.asarray(samples, dtype=float)
            self.grid = np.asarray(grid, dtype=float)
            if self.samples.shape != self.grid.shape:
                raise ValueError("samples must match the grid")

    def __call__(self, X=None) -> np.ndarray:
        if self.comps is None:
            if X is not None and not np.array_equal(np.atleast_2d(X), self.grid):
                raise ValueError("numeric covector fields are only known on their grid")
            return self.samples
        return self._f(_as_points(self.chart, X))


def lie_bracket(u: VectorField, v: VectorField) -> VectorField:
    """[u, v]^i = sum_s u^s d_s v^i - v^s d_s u^i."""
    if u.chart is not v.chart and u.chart.names != v.chart.names:
        raise ValueError("vector fields live on different charts")
    n = u.chart.n
    comps = []
    for i in range(n):
        terms = []
        for s in range(n):
            terms.append(ex.mul(u.comps[s], v.jac_entries[i][s]))
            terms.append(ex.neg(ex.mul(v.comps[s], u.jac_entries[i][s])))
        comps.append(ex.add(*terms))
    return VectorField(u.chart, comps)


def exterior_derivative_2form(w: BilinearFormField) -> dict:
    """Coefficients of d(omega) on each i<j<k: d_k w_ij + d_i w_jk + d_j w_ki."""
    W = w.skew_entries()
    names = w.chart.names
    out = {}
    for i, j, k in itertools.combinations(range(w.n), 3):
        out[(i, j, k)] = ex.add(ex.differentiate(W[i, j], names[k]),
                                ex.differentiate(W[j, k], names[i]),
                                ex.differentiate(W[k, i], names[j]))
    return out


def closedness_residual(w: BilinearFormField, X) -> float:
    """Grid max of |d omega| computed from the numeric derivative array."""
    n = w.n
    if n < 3:
        return 0.0
    D = w.dw(X)  # [p, k, i, j]
    out = np.zeros(len(D))
    for i, j, k in itertools.combinations(range(n), 3):
        c = D[:, k, i, j] + D[:, i, j, k] + D[:, j, k, i]
        out = np.maximum(out, np.abs(c))
    return float(out.max())


def is_closed(w: BilinearFormField, X, tol: float) -> bool:
    return closedness_residual(w, X) <= tol


def exterior_derivative_1form(chart: Chart, theta) -> np.ndarray:
    """d(theta) as a skew matrix of expressions: d_i theta_j - d_j theta_i."""
    th = [ex.parse(t, chart) if isinstance(t, str) else ex.as_expr(t) for t in theta]
    n = chart.n
    out = np.empty((n, n), dtype=object)
    for i in range(n):
        for j in range(n):
            out[i, j] = ex.add(ex.differentiate(th[j], chart.names[i]),
                               ex.neg(ex.differentiate(th[i], chart.names[j])))
    return out


# ---------------------------------------------------------------------------
# chart maps


class ChartMap:
    """An invertible map x -> y on a chart box.  Subclasses supply ``__call__``
    and ``jacobian`` (J[p, a, i] = d y^a / d x^i)."""

    chart: Chart
    kind = "abstract"

    def __call__(self, X) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, X) -> np.ndarray:
        raise NotImplementedError

    def min_abs_det(self, res: int | None = None) -> float:
        res = default_cert_res(self.chart.n) if res is None else res
        J = self.jacobian(self.chart.grid(res))
        return float(np.min(np.abs(np.linalg.det(J))))

    def certificate(self, tol: Tolerances = DEFAULT, res: int | None = None) -> dict:
        m = self.min_abs_det(res)
        return {"min_abs_det": m, "jac_min": tol.jac_min, "pass": bool(m >= tol.jac_min),
                "grid_res": res or default_cert_res(self.chart.n)}


class ExprChartMap(ChartMap):
    kind = "closed-form"

    def __init__(self, chart: Chart, comps):
        self.chart = chart
        self.comps = tuple(ex.parse(c, chart) if isinstance(c, str) else ex.as_expr(c) for c in comps)
        if len(self.comps) != chart.n:
            raise ValueError("a chart map needs n component expressions")
        self._f = ex.lambdify(list(self.comps), chart.names)
        self._j = ex.lambdify([[ex.differentiate(c, v) for v in chart.names] for c in self.comps],
                              chart.names)

    def __call__(self, X):
        return self._f(_as_points(self.chart, X))

    def jacobian(self, X):
        return self._j(_as_points(self.chart, X))


class AffineMap(ChartMap):
    """y = A (x - x0) + y0."""

    kind = "affine"

    def __init__(self, chart: Chart, A, x0=None, y0=None):
        self.chart = chart
        self.A = np.asarray(A, dtype=float)
        self.x0 = np.zeros(chart.n) if x0 is None else np.asarray(x0, dtype=float)
        self.y0 = np.zeros(self.A.shape[0]) if y0 is None else np.asarray(y0, dtype=float)

    def __call__(self, X):
        X = _as_points(self.chart, X)
        return (X - self.x0) @ self.A.T + self.y0

    def jacobian(self, X):
        X = _as_points(self.chart, X)
        return np.broadcast_to(self.A, (len(X),) + self.A.shape).copy()


class ComposedMap(ChartMap):
    """Apply ``maps`` left to right: y = m_k(...m_1(x))."""

    kind = "composed"

    def __init__(self, maps: Sequence[ChartMap]):
        self.maps = list(maps)
        self.chart = self.maps[0].chart

    def __call__(self, X):
        Y = _as_points(self.chart, X)
        for m in self.maps:
            Y = m(Y)
        return Y

    def jacobian(self, X):
        Y = _as_points(self.chart, X)
        J = None
        for m in self.maps:
            Jm = m.jacobian(Y)
            J = Jm if J is None else Jm @ J
            Y = m(Y)
        return J


class NumericMap(ChartMap):
    """A map given by a vectorised callable; Jacobian by central differences."""

    kind = "numeric"

    def __init__(self, chart: Chart, fn: Callable, h: float | None = None, tol: Tolerances = DEFAULT):
        self.chart = chart
        self.fn = fn
        self.h = tol.h_jac * chart.diameter if h is None else h

    def __call__(self, X):
        return self.fn(_as_points(self.chart, X))

    def jacobian(self, X):
        X = _as_points(self.chart, X)
        N, n = X.shape
        h = self.h
        st = np.repeat(X[:, None, :], 2 * n, axis=1)
        for k in range(n):
            st[:, 2 * k, k] += h
            st[:, 2 * k + 1, k] -= h
        Y = self.fn(st.reshape(-1, n)).reshape(N, 2 * n, -1)
        J = (Y[:, 0::2, :] - Y[:, 1::2, :]) / (2 * h)   # [p, k, a]
        return np.swapaxes(J, 1, 2)


class InverseMap(ChartMap):
    """Inverse of a map by Newton iteration; ``chart`` is the image box."""

    kind = "inverse"

    def __init__(self, fwd: ChartMap, chart: Chart | None = None, iters: int = 50, tol: float = 1e-13):
        self.fwd = fwd
        self.chart = fwd.chart if chart is None else chart
        self.iters = iters
        self.tol = tol

    def __call__(self, Y):
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        X = Y.copy()
        # start from the inverse of the linearisation at the base point
        b = self.fwd.chart.base
        J0 = self.fwd.jacobian(b)[0]
        X = b + np.linalg.solve(J0, (Y - self.fwd(b)).T).T
        scale = max(1.0, float(np.max(np.abs(Y))))
        for _ in range(self.iters):
            R = self.fwd(X) - Y
            if np.max(np.abs(R)) <= self.tol * scale:
                return X
            J = self.fwd.jacobian(X)
            X = X - np.linalg.solve(J, R[..., None])[..., 0]
        R = self.fwd(X) - Y
        if np.max(np.abs(R)) > 1e-9 * scale:
            raise ArithmeticError("Newton inversion did not converge")
        return X

    def jacobian(self, Y):
        return np.linalg.inv(self.fwd.jacobian(self(Y)))


def pullback(B: BilinearFormField, phi: ChartMap, p) -> np.ndarray:
    """J^T B(phi(p)) J, the components of phi^* B at p (batched over rows of p)."""
    X = _as_points(phi.chart, p)
    J = phi.jacobian(X)
    d = np.abs(np.linalg.det(J))
    if np.any(d < 1e-14 * np.max(np.abs(J)) ** J.shape[-1]):
        raise SingularJacobianError("Jacobian is singular at an evaluation point")
    Bv = B.B(phi(X))
    out = np.swapaxes(J, -1, -2) @ Bv @ J
    return out[0] if isinstance(p, Point) or np.ndim(p) == 1 else out


def transform_to_chart(Bvals: np.ndarray, J: np.ndarray) -> np.ndarray:
    """Components J^{-T} B J^{-1} of a form in new coordinates y(x), given dy/dx = J."""
    Ji = np.linalg.inv(J)
    return np.swapaxes(Ji, -1, -2) @ Bvals @ Ji
