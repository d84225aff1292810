"""Tolerances and numerical knobs, kept in one record so verdicts are reproducible."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace


@dataclass(frozen=True)
class Tolerances:
    sigma_tol: float = 1e-8        # relative singular-value cutoff for numeric rank
    tol_lin: float = 1e-7          # linear-system residual, relative to 1 + |rhs|
    tol_stat: float = 1e-7         # stationarity, times scale
    tol_flat: float = 1e-5         # curvature, times scale
    tol_closed: float = 1e-7       # |d omega|, times scale
    tol_parallel: float = 1e-7     # parallel1 / parallelPg / Jacobi, times scale
    tol_construct: float = 1e-5    # pullback deviation of a constructed chart, times scale
    h_jac: float = 1e-5            # Jacobian step of numeric maps, times box diameter
    h_curv: float = 1e-3           # curvature finite-difference step, times box diameter
    richardson: int = 1            # number of Richardson extrapolation steps
    ode_atol: float = 1e-10
    ode_rtol: float = 1e-8
    jac_min: float = 1e-8          # smallest admissible |det J| of a chart map
    pivot_cond_max: float = 1e6    # condition bound of the pivot block of a kernel basis
    omega_cond_max: float = 1e8    # condition bound for inverting omega
    loop_tol: float = 1e-6         # Pfaffian loop defects
    bracket_var_tol: float = 1e-8  # variance of Poisson brackets over the grid
    commute_tol: float = 1e-6      # commutator defect of rectified frames
    max_shrink: int = 5            # box halvings allowed in the Moser construction
    grid_res: int | None = None    # analysis grid points per axis; None = by dimension
    cert_res: int | None = None    # certification grid points per axis; None = by dimension

    def with_overrides(self, **kw) -> "Tolerances":
        known = {f.name for f in fields(self)}
        bad = set(kw) - known
        if bad:
            raise KeyError(f"unknown tolerance(s): {sorted(bad)}")
        return replace(self, **kw)

    def as_dict(self) -> dict:
        return asdict(self)


DEFAULT = Tolerances()


def default_grid_res(n: int) -> int:
    if n <= 2:
        return 7
    if n <= 4:
        return 5
    return 3


def default_cert_res(n: int) -> int:
    if n <= 2:
        return 9
    if n <= 4:
        return 7
    return 5


def margin_status(value: float, tol: float) -> str:
    """Three-valued comparison used by every verdict: pass, fail or margin."""
    if value <= tol:
        return "pass"
    if value >= 10 * tol:
        return "fail"
    return "margin"
