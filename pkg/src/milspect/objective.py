"""Training objective, hybrid detection statistic, and atom gradients.

The objective balances three terms over a bag-labeled dataset:

  * a generalized-mean (soft-max) pooling, over each positive bag, of the
    hybrid statistic Lambda = exp(-beta * ||r||^2 / ||q||^2), where r is the
    reconstruction residual using all concepts and q the residual using
    background concepts only;
  * a background fidelity term: rho times the summed squared background
    residuals of negative-bag instances;
  * a cross-incoherence term penalizing target concepts that reconstruct
    negative-bag instances: (alpha/2) * sum ((targets @ a_t)^T x)^2.

The generalized-mean term is evaluated in log space (log-sum-exp over
b * log Lambda), so large beta or |b| never produce NaN from underflow.
Gradients treat the sparse codes as constants (block-coordinate view); the
residuals are always recomputed from the dictionary actually passed in, so
the gradients are exact derivatives of ``evaluate_objective`` under frozen
codes.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .model import BagDataset, ConceptDictionary, HyperParams, SparseCodes

# Below this squared norm the background residual is considered degenerate:
# the instance is exactly representable by the background concepts and the
# hybrid ratio is undefined.
DEGENERATE_Q_FLOOR = 1e-30


class DegenerateBackgroundError(ValueError):
    """Raised when an instance is exactly reconstructed by the background
    concepts, making the hybrid ratio undefined."""


@dataclass(frozen=True)
class ObjectiveBreakdown:
    """The three objective terms and their sum, as summed."""

    gm_term: float
    fidelity_term: float
    incoherence_term: float
    total: float

    @classmethod
    def from_terms(cls, gm: float, fidelity: float, incoherence: float):
        return cls(gm, fidelity, incoherence, gm + fidelity + incoherence)


@dataclass(frozen=True)
class CodeSet:
    """Sparse codes for every instance of a dataset, in dataset column order.

    ``full`` is (T+M, N): coefficients over the concatenated dictionary.
    ``background`` is (M, N): coefficients over background concepts alone.
    When the incoherence weight is zero the trainer skips the full-code solve
    on negative instances; ``has_negative_full_codes`` records whether those
    columns are meaningful.
    """

    full: np.ndarray
    background: np.ndarray
    has_negative_full_codes: bool = True

    def instance(self, ds: BagDataset, D: ConceptDictionary, column: int) -> SparseCodes:
        """Per-instance view with residuals computed against ``D``."""
        x = ds.instance_matrix[:, column]
        return SparseCodes.from_solution(
            x, D, self.full[:, column], self.background[:, column]
        )


def _logsumexp(values: np.ndarray) -> float:
    m = np.max(values)
    if not np.isfinite(m):
        return float(m)
    return float(m + np.log(np.sum(np.exp(values - m))))


def generalized_mean(values, b: float) -> float:
    """((1/N) * sum v^b)^(1/b) over positive values.

    Interpolates from the minimum (b -> -inf) through the arithmetic mean
    (b = 1) to the maximum (b -> +inf); b = 0 is rejected.  Evaluated in log
    space so extreme exponents remain finite.
    """
    if b == 0:
        raise ValueError("generalized mean undefined for b = 0")
    vals = np.asarray(values, dtype=np.float64).ravel()
    if vals.size == 0:
        raise ValueError("generalized mean of an empty collection")
    if np.any(vals <= 0):
        raise ValueError("generalized mean requires strictly positive values")
    logs = np.log(vals)
    return float(np.exp((_logsumexp(b * logs) - np.log(vals.size)) / b))


def hybrid_statistic(
    x: np.ndarray,
    D: ConceptDictionary,
    codes: SparseCodes,
    beta: float,
) -> float:
    """exp(-beta * ||r||^2 / ||q||^2) in (0, 1] for one instance.

    Near 1 when the full dictionary reconstructs x much better than the
    background concepts alone (target-like), near 0 when both do equally
    well (background-like).
    """
    r = codes.residual_full
    q = codes.residual_background
    q2 = float(q @ q)
    if q2 < DEGENERATE_Q_FLOOR:
        raise DegenerateBackgroundError(
            "instance is exactly representable by the background concepts"
        )
    return float(np.exp(-beta * float(r @ r) / q2))


def _residual_stats(ds: BagDataset, D: ConceptDictionary, codes: CodeSet):
    """Residual matrices and squared norms for the given dictionary."""
    X = ds.instance_matrix
    R = X - D.full @ codes.full
    Q = X - D.backgrounds @ codes.background
    r2 = np.einsum("ij,ij->j", R, R)
    q2 = np.einsum("ij,ij->j", Q, Q)
    return X, R, Q, r2, q2


def _check_codes(ds: BagDataset, D: ConceptDictionary, hp: HyperParams, codes: CodeSet):
    if codes.full.shape != (D.n_total, ds.n_instances):
        raise ValueError("full code matrix shape does not match dataset/dictionary")
    if codes.background.shape != (D.n_backgrounds, ds.n_instances):
        raise ValueError("background code matrix shape does not match dataset/dictionary")
    if hp.alpha_incoh != 0 and not codes.has_negative_full_codes:
        raise ValueError(
            "incoherence term requires full codes on negative instances; "
            "solve them or set alpha_incoh = 0"
        )


def _positive_bag_log_weights(b: float, log_lambda: np.ndarray):
    """Log-sum-exp and normalized weights of Lambda^b within one bag."""
    scaled = b * log_lambda
    lse = _logsumexp(scaled)
    weights = np.exp(scaled - lse)
    return lse, weights


def evaluate_objective(
    ds: BagDataset,
    D: ConceptDictionary,
    hp: HyperParams,
    codes: CodeSet,
) -> ObjectiveBreakdown:
    """Full training objective under frozen sparse codes.

    Instances whose background residual is numerically zero cannot enter the
    generalized-mean pooling; they are skipped with a warning and the bag
    mean is taken over the remaining instances.
    """
    _check_codes(ds, D, hp, codes)
    X, R, Q, r2, q2 = _residual_stats(ds, D, codes)

    gm = 0.0
    for bag, cols in zip(ds.bags, ds.bag_slices):
        if not bag.is_positive:
            continue
        bag_q2 = q2[cols]
        valid = bag_q2 >= DEGENERATE_Q_FLOOR
        n_valid = int(valid.sum())
        if n_valid < bag.n_instances:
            warnings.warn(
                f"bag {bag.bag_id!r}: {bag.n_instances - n_valid} instance(s) "
                "exactly reconstructed by background concepts; skipped in the "
                "generalized-mean pooling",
                stacklevel=2,
            )
        if n_valid == 0:
            continue
        log_lambda = -hp.beta * r2[cols][valid] / bag_q2[valid]
        lse, _ = _positive_bag_log_weights(hp.b, log_lambda)
        gm -= (lse - np.log(n_valid)) / hp.b

    neg = ds.negative_columns
    fidelity = hp.rho * float(np.sum(q2[neg]))

    if hp.alpha_incoh == 0 or neg.size == 0:
        incoherence = 0.0
    else:
        target_recon = D.targets @ codes.full[: D.n_targets, neg]
        proj = np.einsum("ij,ij->j", target_recon, X[:, neg])
        incoherence = 0.5 * hp.alpha_incoh * float(np.sum(proj**2))

    return ObjectiveBreakdown.from_terms(float(gm), fidelity, incoherence)


def grad_target_atom(
    t: int,
    ds: BagDataset,
    D: ConceptDictionary,
    hp: HyperParams,
    codes: CodeSet,
) -> np.ndarray:
    """Gradient of the objective w.r.t. target concept column ``t`` (0-based),
    holding the sparse codes fixed.

    Each positive bag contributes the Lambda^b-weighted mean of
    -2 * beta * a_t * r / ||q||^2 over its instances; negative bags add the
    incoherence derivative alpha * ((targets @ a_t)^T x) * a_t * x.
    """
    if not 0 <= t < D.n_targets:
        raise IndexError(f"target index {t} out of range [0, {D.n_targets})")
    _check_codes(ds, D, hp, codes)
    X, R, Q, r2, q2 = _residual_stats(ds, D, codes)

    grad = np.zeros(D.d)
    coeff_t = codes.full[t]
    for bag, cols in zip(ds.bags, ds.bag_slices):
        if not bag.is_positive:
            continue
        bag_q2 = q2[cols]
        valid = bag_q2 >= DEGENERATE_Q_FLOOR
        if not valid.any():
            continue
        idx = np.arange(cols.start, cols.stop)[valid]
        log_lambda = -hp.beta * r2[idx] / q2[idx]
        _, w = _positive_bag_log_weights(hp.b, log_lambda)
        grad -= R[:, idx] @ (w * coeff_t[idx] * (2.0 * hp.beta / q2[idx]))

    neg = ds.negative_columns
    if hp.alpha_incoh != 0 and neg.size:
        target_recon = D.targets @ codes.full[: D.n_targets, neg]
        proj = np.einsum("ij,ij->j", target_recon, X[:, neg])
        grad += hp.alpha_incoh * (X[:, neg] @ (proj * coeff_t[neg]))
    return grad


def grad_background_atom(
    k: int,
    ds: BagDataset,
    D: ConceptDictionary,
    hp: HyperParams,
    codes: CodeSet,
) -> np.ndarray:
    """Gradient of the objective w.r.t. background concept column ``k``
    (0-based), holding the sparse codes fixed.

    Positive bags contribute the Lambda^b-weighted mean of
    -2 * beta * (a_k * r * ||q||^2 - p_k * ||r||^2 * q) / ||q||^4, where a_k
    is the background coefficient inside the full code and p_k the
    background-only coefficient; negative bags add the fidelity derivative
    -2 * rho * p_k * q.
    """
    if not 0 <= k < D.n_backgrounds:
        raise IndexError(f"background index {k} out of range [0, {D.n_backgrounds})")
    _check_codes(ds, D, hp, codes)
    X, R, Q, r2, q2 = _residual_stats(ds, D, codes)

    grad = np.zeros(D.d)
    coeff_k = codes.full[D.n_targets + k]
    bg_coeff_k = codes.background[k]
    for bag, cols in zip(ds.bags, ds.bag_slices):
        if not bag.is_positive:
            continue
        bag_q2 = q2[cols]
        valid = bag_q2 >= DEGENERATE_Q_FLOOR
        if not valid.any():
            continue
        idx = np.arange(cols.start, cols.stop)[valid]
        log_lambda = -hp.beta * r2[idx] / q2[idx]
        _, w = _positive_bag_log_weights(hp.b, log_lambda)
        two_beta = 2.0 * hp.beta
        grad -= R[:, idx] @ (w * coeff_k[idx] * (two_beta / q2[idx]))
        grad += Q[:, idx] @ (w * bg_coeff_k[idx] * (two_beta * r2[idx] / q2[idx] ** 2))

    neg = ds.negative_columns
    if neg.size:
        grad -= 2.0 * hp.rho * (Q[:, neg] @ bg_coeff_k[neg])
    return grad
