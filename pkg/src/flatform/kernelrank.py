"""Pointwise rank and kernel analysis of the symmetric and skew parts."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .config import DEFAULT, Tolerances


class PivotError(ArithmeticError):
    """No choice of pivot rows gives a well-conditioned block of the kernel basis."""


def _threshold(s: np.ndarray, sigma_tol: float, floor: float) -> np.ndarray:
    return np.maximum(sigma_tol * s[..., :1], floor)


def numeric_rank(M: np.ndarray, sigma_tol: float = DEFAULT.sigma_tol, floor: float = 1e-12) -> np.ndarray:
    """Count of singular values above sigma_tol * sigma_max (and an absolute floor)."""
    s = np.linalg.svd(M, compute_uv=False)
    return np.sum(s > _threshold(s, sigma_tol, floor), axis=-1)


@dataclass
class RankProfile:
    ranks_g: np.ndarray
    ranks_w: np.ndarray
    ranks_int: np.ndarray          # dimension of R_g cap R_w at each point
    sigma_tol: float
    grid_res: int | None = None
    constant_rank_g: bool = field(init=False)
    constant_rank_w: bool = field(init=False)
    constant_rank_intersection: bool = field(init=False)

    def __post_init__(self):
        self.constant_rank_g = bool(np.all(self.ranks_g == self.ranks_g[0]))
        self.constant_rank_w = bool(np.all(self.ranks_w == self.ranks_w[0]))
        self.constant_rank_intersection = bool(np.all(self.ranks_int == self.ranks_int[0]))

    @property
    def constant(self) -> bool:
        return self.constant_rank_g and self.constant_rank_w and self.constant_rank_intersection

    def summary(self) -> dict:
        def rng(a):
            return [int(a.min()), int(a.max())]
        return {"rank_g": rng(self.ranks_g), "rank_w": rng(self.ranks_w),
                "dim_intersection_kernel": rng(self.ranks_int),
                "constant_rank_g": self.constant_rank_g, "constant_rank_w": self.constant_rank_w,
                "constant_rank_intersection": self.constant_rank_intersection,
                "sigma_tol": self.sigma_tol, "grid_res": self.grid_res}


def rank_profile(form, X: np.ndarray, tol: Tolerances = DEFAULT, scale: float | None = None,
                 grid_res: int | None = None) -> RankProfile:
    """Ranks of g, omega and dim(R_g cap R_w) at every point of X."""
    scale = form.scale(X) if scale is None else scale
    floor = 1e-12 * scale
    B = form.B(X)
    G = 0.5 * (B + np.swapaxes(B, -1, -2))
    W = 0.5 * (B - np.swapaxes(B, -1, -2))
    n = form.n
    rg = numeric_rank(G, tol.sigma_tol, floor)
    rw = numeric_rank(W, tol.sigma_tol, floor)
    rs = numeric_rank(np.concatenate([G, W], axis=-2), tol.sigma_tol, floor)
    return RankProfile(rg, rw, n - rs, tol.sigma_tol, grid_res)


def null_space(M: np.ndarray, sigma_tol: float = DEFAULT.sigma_tol, floor: float = 1e-12) -> np.ndarray:
    """Orthonormal basis (columns) of the numeric kernel of a single matrix."""
    M = np.asarray(M, dtype=float)
    _, s, vt = np.linalg.svd(M)
    n = M.shape[1]
    s_full = np.zeros(n)
    s_full[: len(s)] = s
    thr = max(sigma_tol * (s[0] if len(s) else 0.0), floor)
    r = int(np.sum(s_full > thr))
    return vt[r:].T.copy()


def null_spaces(M: np.ndarray, k: int) -> np.ndarray:
    """Batched kernel bases of fixed dimension k: shape (N, n, k)."""
    _, _, vt = np.linalg.svd(M)
    n = M.shape[-1]
    return np.swapaxes(vt[:, n - k:, :], 1, 2)


def kernel_projector(M: np.ndarray, k: int) -> np.ndarray:
    """Orthogonal projector onto the k-dimensional kernel, batched; smooth in M."""
    K = null_spaces(M, k)
    return K @ np.swapaxes(K, 1, 2)


@dataclass
class KernelData:
    basis: np.ndarray     # n x k orthonormal columns
    perm: np.ndarray      # free rows followed by pivot rows
    free: np.ndarray      # m indices
    pivots: np.ndarray    # k indices; basis[pivots] is invertible
    F: np.ndarray         # m x k completion, u_pivots = u_free @ F
    cond: float

    @property
    def m(self) -> int:
        return len(self.free)

    def complete(self, u_free: np.ndarray) -> np.ndarray:
        """Full covector (u', u'F) placed back in the original index order."""
        u_free = np.asarray(u_free, dtype=float)
        out = np.zeros(u_free.shape[:-1] + (len(self.free) + len(self.pivots),))
        out[..., self.free] = u_free
        out[..., self.pivots] = u_free @ self.F
        return out


def choose_pivots(K: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rows of K forming the best-conditioned square block, via pivoted QR of K^T."""
    n, k = K.shape
    if k == 0:
        return np.arange(n), np.zeros(0, dtype=int)
    _, _, piv = sla.qr(K.T, pivoting=True, mode="economic")
    pivots = np.sort(piv[:k])
    free = np.array([i for i in range(n) if i not in set(pivots)], dtype=int)
    return free, pivots


def completion(K: np.ndarray, free, pivots) -> tuple[np.ndarray, np.ndarray]:
    """F = -K'(K'')^{-1} for fixed rows; batched over leading axes. Returns (F, cond).

    K has orthonormal columns, so 1/sigma_min(K'') measures how far the pivot
    block is from singular (the plain condition number of a 1x1 block is 1).
    """
    Kf = K[..., free, :]
    Kp = K[..., pivots, :]
    if Kp.shape[-1] == 0:
        return np.zeros(K.shape[:-2] + (len(free), 0)), np.ones(K.shape[:-2])
    smin = np.linalg.svd(Kp, compute_uv=False)[..., -1]
    with np.errstate(divide="ignore"):
        cond = np.where(smin > 0, 1.0 / smin, np.inf)
    ok = (smin > 0)[..., None, None]
    F = -Kf @ np.linalg.inv(np.where(ok, Kp, np.eye(Kp.shape[-1])))
    return np.where(ok, F, np.nan), cond


def kernel_basis(M: np.ndarray, tol: Tolerances = DEFAULT, floor: float = 1e-12,
                 pivots=None) -> KernelData:
    """Kernel data of a single matrix: orthonormal basis, pivot rows and F."""
    K = null_space(M, tol.sigma_tol, floor)
    n = M.shape[1]
    if pivots is None:
        free, piv = choose_pivots(K)
    else:
        piv = np.sort(np.asarray(pivots, dtype=int))
        free = np.array([i for i in range(n) if i not in set(piv)], dtype=int)
    F, cond = completion(K, free, piv)
    cond = float(cond)
    if cond > tol.pivot_cond_max:
        raise PivotError(f"pivot block condition {cond:.3g} exceeds {tol.pivot_cond_max:.3g}")
    return KernelData(K, np.concatenate([free, piv]), free, piv, F, cond)


def intersection_kernel(g: np.ndarray, w: np.ndarray, tol: Tolerances = DEFAULT,
                        floor: float = 1e-12) -> np.ndarray:
    """Orthonormal basis of R_g cap R_w from the null space of the stacked matrix."""
    return null_space(np.vstack([g, w]), tol.sigma_tol, floor)


def align_bases(Ks: np.ndarray, order=None) -> np.ndarray:
    """Make a sequence of kernel bases vary continuously.

    Each basis is rotated within its span to the orthogonal factor closest to
    the previous one (orthogonal Procrustes).  ``order`` lists point indices in
    visiting order; by default the given order.
    """
    Ks = np.array(Ks, dtype=float, copy=True)
    if Ks.shape[-1] == 0 or len(Ks) == 0:
        return Ks
    idx = np.arange(len(Ks)) if order is None else np.asarray(order)
    prev = Ks[idx[0]]
    for t in idx[1:]:
        M = Ks[t].T @ prev
        U, _, Vt = np.linalg.svd(M)
        Ks[t] = Ks[t] @ (U @ Vt)
        prev = Ks[t]
    return Ks
