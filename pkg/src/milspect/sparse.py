"""L1-regularized least squares by iterative shrinkage-thresholding (ISTA).

Solves  min_a  0.5 * ||x - D a||^2 + lam * ||a||_1  with the fixed-step
proximal gradient iteration

    a <- S_{delta * lam}( a + delta * D^T (x - D a) ),    a0 = 0,

where S is the soft-thresholding operator and the step length delta is the
reciprocal of the largest eigenvalue of D^T D, which guarantees the
objective never increases from one iterate to the next.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_POWER_TOL = 1e-10
_POWER_MAX_ITERS = 1000


@dataclass(frozen=True)
class IstaConfig:
    """Iteration controls.

    The solver stops once the max-abs change of the coefficient vector in
    one iteration falls below ``tolerance``, or after ``max_iters``
    iterations.  ``step_override`` replaces the spectral step length when
    set (callers are responsible for keeping it within the stable range).
    """

    max_iters: int = 200
    tolerance: float = 1e-6
    step_override: float | None = None

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.tolerance < 0:
            raise ValueError("tolerance must be >= 0")
        if self.step_override is not None and not self.step_override > 0:
            raise ValueError("step_override must be positive")


def soft_threshold(v: np.ndarray, lam: float) -> np.ndarray:
    """Elementwise sign(v) * max(|v| - lam, 0)."""
    if lam < 0:
        raise ValueError("threshold must be >= 0")
    v = np.asarray(v, dtype=np.float64)
    return np.sign(v) * np.maximum(np.abs(v) - lam, 0.0)


def _eig_max_psd(G: np.ndarray) -> float:
    """Largest eigenvalue of a symmetric PSD matrix by power iteration."""
    m = G.shape[0]
    # fixed-seed start: deterministic, and almost surely not orthogonal to
    # the leading eigenvector
    v = np.random.default_rng(0x9E3779B9).standard_normal(m)
    v /= np.linalg.norm(v)
    eig = 0.0
    for _ in range(_POWER_MAX_ITERS):
        w = G @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        new_eig = float(v @ (G @ v))
        if abs(new_eig - eig) <= _POWER_TOL * max(1.0, abs(new_eig)):
            return new_eig
        eig = new_eig
    return eig


def ista_step_length(D: np.ndarray) -> float:
    """Stable ISTA step length 1 / Eig_max(D^T D) for dictionary D."""
    D = np.asarray(D, dtype=np.float64)
    if not np.any(D):
        raise ValueError("step length undefined for an all-zero dictionary")
    eig = _eig_max_psd(D.T @ D)
    if eig <= 0.0:
        raise ValueError("dictionary Gram matrix has no positive eigenvalue")
    return 1.0 / eig


def lasso_objective(x: np.ndarray, D: np.ndarray, a: np.ndarray, lam: float) -> float:
    """0.5 * ||x - D a||^2 + lam * ||a||_1 for a single instance."""
    r = x - D @ a
    return float(0.5 * (r @ r) + lam * np.sum(np.abs(a)))


def solve_lasso_batch(
    X: np.ndarray,
    D: np.ndarray,
    lam: float,
    cfg: IstaConfig | None = None,
) -> np.ndarray:
    """Solve the lasso for every column of X against dictionary D.

    X has shape (d, n) with one instance per column; returns the (m, n)
    coefficient matrix.  Columns converge independently: a column is frozen
    as soon as its own max-abs change drops below the tolerance, so the
    result matches per-column solves up to BLAS-level rounding.
    """
    cfg = cfg or IstaConfig()
    X = np.asarray(X, dtype=np.float64)
    D = np.asarray(D, dtype=np.float64)
    if X.ndim != 2 or D.ndim != 2 or X.shape[0] != D.shape[0]:
        raise ValueError("X must be (d, n) and D (d, m) with matching d")
    m = D.shape[1]
    n = X.shape[1]
    if n == 0:
        return np.zeros((m, 0))
    delta = cfg.step_override if cfg.step_override is not None else ista_step_length(D)
    threshold = delta * lam
    G = D.T @ D
    A = np.zeros((m, n))
    # compact working copies of the still-unconverged columns; converged
    # columns are frozen and written back, so each column's result matches a
    # standalone solve of that column
    active = np.arange(n)
    Aw = np.zeros((m, n))
    Bw = D.T @ X
    step = np.empty_like(Aw)
    mag = np.empty_like(Aw)
    neg = np.empty_like(Aw)
    for _ in range(cfg.max_iters):
        k = active.shape[0]
        Ak, Bk = Aw[:, :k], Bw[:, :k]
        Gk, Mk, Nk = step[:, :k], mag[:, :k], neg[:, :k]
        # u = a + delta * (b - G a), in place
        np.matmul(G, Ak, out=Gk)
        np.subtract(Bk, Gk, out=Gk)
        Gk *= delta
        Gk += Ak
        # soft threshold: max(u - th, 0) - max(-u - th, 0)
        np.subtract(Gk, threshold, out=Mk)
        np.maximum(Mk, 0.0, out=Mk)
        np.negative(Gk, out=Nk)
        Nk -= threshold
        np.maximum(Nk, 0.0, out=Nk)
        np.subtract(Mk, Nk, out=Gk)
        # per-column max-abs change
        np.subtract(Gk, Ak, out=Mk)
        np.abs(Mk, out=Mk)
        change = Mk.max(axis=0)
        Ak[...] = Gk
        done = change < cfg.tolerance
        if done.any():
            A[:, active[done]] = Ak[:, done]
            keep = ~done
            active = active[keep]
            if active.size == 0:
                return A
            remaining = int(active.shape[0])
            Aw[:, :remaining] = Ak[:, keep]
            Bw[:, :remaining] = Bk[:, keep]
    A[:, active] = Aw[:, : active.shape[0]]
    return A


def solve_lasso(
    x: np.ndarray,
    D: np.ndarray,
    lam: float,
    cfg: IstaConfig | None = None,
    objective_history: list | None = None,
) -> np.ndarray:
    """Sparse code of a single instance x against dictionary D.

    When ``objective_history`` is a list, the lasso objective value is
    appended for the starting point and after every iteration.
    """
    cfg = cfg or IstaConfig()
    x = np.asarray(x, dtype=np.float64).ravel()
    D = np.asarray(D, dtype=np.float64)
    if x.shape[0] != D.shape[0]:
        raise ValueError("x length must match the dictionary row count")
    if objective_history is None:
        return solve_lasso_batch(x[:, None], D, lam, cfg)[:, 0]
    delta = cfg.step_override if cfg.step_override is not None else ista_step_length(D)
    threshold = delta * lam
    G = D.T @ D
    b = D.T @ x
    a = np.zeros(D.shape[1])
    objective_history.append(lasso_objective(x, D, a, lam))
    for _ in range(cfg.max_iters):
        a_new = soft_threshold(a + delta * (b - G @ a), threshold)
        objective_history.append(lasso_objective(x, D, a_new, lam))
        change = np.max(np.abs(a_new - a)) if a.size else 0.0
        a = a_new
        if change < cfg.tolerance:
            break
    return a
