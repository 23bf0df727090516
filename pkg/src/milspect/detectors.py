"""Signature-based sub-pixel detection statistics.

Three detectors are provided, all standard in the spectral detection
literature:

  * SMF, the whitened spectral matched filter
        s^T Sigma^-1 (x - mu) / sqrt(s^T Sigma^-1 s)
  * ACE, the adaptive cosine estimator: the squared cosine of the whitened
    angle between x - mu and the signature s
  * the hybrid ratio ||x - backgrounds @ p||^2 / ||x - full @ a||^2 of
    background-only to full-dictionary sparse reconstruction errors, which
    is a strictly increasing transform of the training-time hybrid
    statistic and therefore ROC-equivalent to it (beta drops out).

Background mean and covariance are estimated from negative training
instances.  For multi-target dictionaries, SMF/ACE score against each
target concept and keep the per-pixel maximum; the hybrid ratio pools the
target concepts through the sparse code already.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .evaluation import ScoreSet
from .model import ConceptDictionary
from .sparse import IstaConfig, solve_lasso_batch

# Full-dictionary residuals below this squared norm saturate the hybrid
# ratio; the score is capped instead of dividing by ~0.
HSD_RESIDUAL_FLOOR = 1e-30
HSD_SCORE_CAP = 1e30

METHODS = ("hsd", "ace", "smf")


@dataclass(frozen=True)
class BackgroundStats:
    """Background mean, regularized covariance, and its inverse."""

    mu: np.ndarray
    sigma: np.ndarray
    sigma_inv: np.ndarray

    @property
    def d(self) -> int:
        return self.mu.shape[0]


def fit_background(negatives, ridge: float | None = None) -> BackgroundStats:
    """Estimate background statistics from negative instances.

    ``negatives`` is (n, d) with one instance per row.  The covariance uses
    the n-1 denominator and is regularized by ``ridge`` times the identity;
    when ridge is None it defaults to 1e-6 * trace(sigma) / d.  The inverse
    is formed through a symmetric eigendecomposition, which also certifies
    positive definiteness.
    """
    X = np.atleast_2d(np.asarray(negatives, dtype=np.float64))
    n, d = X.shape
    if n < 2:
        raise ValueError("need at least two negative instances for a covariance")
    if n < d + 1:
        warnings.warn(
            f"only {n} negative instances for dimension {d}; covariance estimate "
            "is rank-deficient before regularization",
            stacklevel=2,
        )
    mu = X.mean(axis=0)
    centered = X - mu
    sigma = (centered.T @ centered) / (n - 1)
    if ridge is None:
        ridge = 1e-6 * float(np.trace(sigma)) / d
    sigma = sigma + ridge * np.eye(d)
    eigvals, eigvecs = np.linalg.eigh(sigma)
    if eigvals[0] <= max(1e-300, 1e-14 * eigvals[-1]):
        raise ValueError(
            "background covariance is singular even after regularization; "
            "increase the ridge"
        )
    sigma_inv = (eigvecs / eigvals) @ eigvecs.T
    return BackgroundStats(mu=mu, sigma=sigma, sigma_inv=sigma_inv)


def _signature_matrix(s) -> np.ndarray:
    S = np.asarray(s, dtype=np.float64)
    if S.ndim == 1:
        S = S[:, None]
    if not np.all(np.linalg.norm(S, axis=0) > 0):
        raise ValueError("target signature must be nonzero")
    return S


def smf_score_matrix(X: np.ndarray, s, bg: BackgroundStats) -> np.ndarray:
    """SMF scores of the rows of X against each signature column: (n, T)."""
    S = _signature_matrix(s)
    G = bg.sigma_inv @ S
    denom = np.sqrt(np.einsum("ij,ij->j", S, G))
    centered = np.atleast_2d(np.asarray(X, dtype=np.float64)) - bg.mu
    return (centered @ G) / denom


def ace_score_matrix(X: np.ndarray, s, bg: BackgroundStats) -> np.ndarray:
    """ACE scores of the rows of X against each signature column: (n, T)."""
    S = _signature_matrix(s)
    G = bg.sigma_inv @ S
    sig_energy = np.einsum("ij,ij->j", S, G)
    centered = np.atleast_2d(np.asarray(X, dtype=np.float64)) - bg.mu
    cross = centered @ G
    mahal = np.einsum("ij,ij->i", centered @ bg.sigma_inv, centered)
    out = np.zeros_like(cross)
    nonzero = mahal > 0
    out[nonzero] = cross[nonzero] ** 2 / (sig_energy * mahal[nonzero, None])
    return out


def smf_score(x, s, bg: BackgroundStats) -> float:
    """Whitened matched-filter statistic for one instance and one signature."""
    return float(smf_score_matrix(np.asarray(x)[None, :], s, bg)[0, 0])


def ace_score(x, s, bg: BackgroundStats) -> float:
    """Squared whitened cosine in [0, 1]; defined as 0 at x = mu."""
    return float(ace_score_matrix(np.asarray(x)[None, :], s, bg)[0, 0])


def hsd_score_matrix(
    X: np.ndarray,
    D: ConceptDictionary,
    lam: float,
    ista_cfg: IstaConfig | None = None,
) -> np.ndarray:
    """Hybrid ratio scores for the rows of X: shape (n,).

    Solves the sparse coding of every pixel twice (full dictionary and
    background concepts alone) and returns the residual-energy ratio
    background/full.  Pixels whose full-dictionary residual is numerically
    zero receive the cap value.
    """
    cfg = ista_cfg or IstaConfig()
    Xc = np.atleast_2d(np.asarray(X, dtype=np.float64)).T  # columns are pixels
    full = solve_lasso_batch(Xc, D.full, lam, cfg)
    background = solve_lasso_batch(Xc, D.backgrounds, lam, cfg)
    Rf = Xc - D.full @ full
    Rb = Xc - D.backgrounds @ background
    r2 = np.einsum("ij,ij->j", Rf, Rf)
    q2 = np.einsum("ij,ij->j", Rb, Rb)
    saturated = r2 < HSD_RESIDUAL_FLOOR
    if saturated.any():
        warnings.warn(
            f"{int(saturated.sum())} pixel(s) exactly reconstructed by the full "
            "dictionary; hybrid score capped",
            stacklevel=2,
        )
    scores = np.full(r2.shape, HSD_SCORE_CAP)
    scores[~saturated] = q2[~saturated] / r2[~saturated]
    return scores


def hsd_score(x, D: ConceptDictionary, lam: float, ista_cfg: IstaConfig | None = None) -> float:
    """Hybrid ratio for a single pixel (typically >= 1)."""
    return float(hsd_score_matrix(np.asarray(x)[None, :], D, lam, ista_cfg)[0])


def detect(
    scene,
    method: str,
    *,
    dictionary: ConceptDictionary | None = None,
    signatures=None,
    background: BackgroundStats | None = None,
    lam: float | None = None,
    ista_cfg: IstaConfig | None = None,
    truth=None,
    instance_ids=None,
) -> ScoreSet:
    """Score every pixel of a scene and assemble a ScoreSet.

    ``scene`` is (n, d), one pixel per row.  For ``ace``/``smf`` the
    signatures default to the dictionary's target concepts and the score of
    a pixel is the maximum over all target concepts.  For ``hsd`` the full
    dictionary is required along with the sparse-coding weight.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    scene = np.asarray(scene, dtype=np.float64)
    if scene.ndim == 1:
        scene = scene.reshape(1, -1)
    if scene.size == 0:
        n = 0
        scores = np.zeros(0)
    elif method == "hsd":
        if dictionary is None or lam is None:
            raise ValueError("hsd scoring requires a dictionary and lam")
        scores = hsd_score_matrix(scene, dictionary, lam, ista_cfg)
        n = scene.shape[0]
    else:
        if background is None:
            raise ValueError(f"{method} scoring requires background statistics")
        if signatures is None:
            if dictionary is None:
                raise ValueError(f"{method} scoring requires signatures or a dictionary")
            signatures = dictionary.targets
        matrix = (
            ace_score_matrix(scene, signatures, background)
            if method == "ace"
            else smf_score_matrix(scene, signatures, background)
        )
        scores = matrix.max(axis=1)
        n = scene.shape[0]

    if instance_ids is None:
        instance_ids = tuple(str(i) for i in range(n))
    else:
        instance_ids = tuple(str(i) for i in instance_ids)
    truth_arr = None if truth is None else np.asarray(truth, dtype=np.intp)
    return ScoreSet(ids=instance_ids, scores=np.asarray(scores, dtype=np.float64), truth=truth_arr)
