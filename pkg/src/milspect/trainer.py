"""Alternating optimization of the concept dictionary.

One outer iteration sweeps every target concept and then every background
concept.  For each concept, all sparse codes are re-solved against the
current dictionary, the analytic gradient for that single column is
computed, and the column moves along the negative gradient with Armijo
backtracking; the accepted column is projected back to the unit sphere.
The loop stops at ``max_outer_iters`` or when the objective change between
consecutive outer iterations falls below the relative tolerance.

Target concepts are initialized from means of random subsets of the
positive-bag instances; background concepts from vertex component analysis
of the negative-bag instances (simplex-vertex pixels after an SVD subspace
projection), with seeded k-means centers available as an alternative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import ArmijoParams, BagDataset, ConceptDictionary, HyperParams, validate_dataset
from .objective import (
    CodeSet,
    ObjectiveBreakdown,
    evaluate_objective,
    grad_background_atom,
    grad_target_atom,
)
from .sparse import solve_lasso_batch


class TrainingError(RuntimeError):
    """Raised when training cannot proceed (bad dataset, degenerate data)."""


@dataclass(frozen=True)
class ArmijoRecord:
    """Outcome of one backtracking line search."""

    step: float | None
    f_before: float
    f_after: float
    accepted: bool
    trials: int


@dataclass(frozen=True)
class AtomUpdate:
    """One per-atom update event within the outer loop."""

    outer_iteration: int
    kind: str  # "target" | "background"
    index: int
    search: ArmijoRecord


@dataclass(frozen=True)
class TrainReport:
    """Everything a caller needs to audit a training run."""

    iterations_run: int
    objective_trace: tuple[ObjectiveBreakdown, ...]
    stop_reason: str  # "max_iters" | "tolerance"
    final_dictionary: ConceptDictionary
    dictionary_trace: tuple[ConceptDictionary, ...]
    update_log: tuple[AtomUpdate, ...]


def init_targets(ds: BagDataset, T: int, rng: np.random.Generator) -> np.ndarray:
    """Initial target concepts: unit-normalized means of T random subsets of
    the positive-bag instances (each subset draws ceil(N+/2) instances
    without replacement)."""
    if T < 1:
        raise ValueError("T must be >= 1")
    pos_cols = ds.positive_columns
    if pos_cols.size == 0:
        raise TrainingError("cannot initialize target concepts: no positive instances")
    pos = ds.instance_matrix[:, pos_cols]
    subset_size = math.ceil(pos.shape[1] / 2)
    columns = []
    for _ in range(T):
        chosen = rng.choice(pos.shape[1], size=subset_size, replace=False)
        mean = pos[:, chosen].mean(axis=1)
        norm = np.linalg.norm(mean)
        if norm < 1e-12:
            raise TrainingError("degenerate target initialization: zero-mean subset")
        columns.append(mean / norm)
    return np.column_stack(columns)


def _vca_indices(Y: np.ndarray, M: int, rng: np.random.Generator) -> list[int]:
    """Pixel indices of M simplex vertices of the columns of Y.

    The data is projected onto an SVD subspace, lifted with a constant
    coordinate, and vertices are picked one at a time by maximizing the
    projection onto a random direction orthogonal to the vertices found so
    far.
    """
    d, n = Y.shape
    if M == 1:
        u = np.linalg.svd(Y, full_matrices=False)[0][:, 0]
        return [int(np.argmax(np.abs(u @ Y)))]
    mean = Y.mean(axis=1, keepdims=True)
    centered = Y - mean
    basis = np.linalg.svd(centered, full_matrices=False)[0][:, : M - 1]
    proj = basis.T @ centered
    scale = float(np.max(np.linalg.norm(proj, axis=0)))
    if scale <= 0.0:
        scale = 1.0
    lifted = np.vstack([proj, np.full((1, n), scale)])
    vertices = np.zeros((M, M))
    vertices[-1, 0] = 1.0
    picked: list[int] = []
    for i in range(M):
        w = rng.standard_normal(M)
        f = w - vertices @ (np.linalg.pinv(vertices) @ w)
        norm_f = np.linalg.norm(f)
        if norm_f < 1e-12:
            f, norm_f = w, np.linalg.norm(w)
        f /= norm_f
        scores = f @ lifted
        choice = int(np.argmax(np.abs(scores)))
        picked.append(choice)
        vertices[:, i] = lifted[:, choice]
    return picked


def _kmeans_centers(Y: np.ndarray, M: int, rng: np.random.Generator, iters: int = 100) -> np.ndarray:
    """Plain seeded Lloyd iterations over the columns of Y; returns (d, M)."""
    n = Y.shape[1]
    centers = Y[:, rng.choice(n, size=M, replace=False)].copy()
    y_sq = np.einsum("ij,ij->j", Y, Y)
    assign = None
    for _ in range(iters):
        c_sq = np.einsum("ij,ij->j", centers, centers)
        d2 = c_sq[:, None] - 2.0 * centers.T @ Y + y_sq[None, :]
        new_assign = np.argmin(d2, axis=0)
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(M):
            members = assign == j
            if members.any():
                centers[:, j] = Y[:, members].mean(axis=1)
            else:
                centers[:, j] = Y[:, rng.integers(n)]
    return centers


def init_backgrounds_vca(ds: BagDataset, M: int, rng: np.random.Generator) -> np.ndarray:
    """Initial background concepts: M unit-normalized vertex pixels extracted
    from the union of all negative-bag instances."""
    if M < 1:
        raise ValueError("M must be >= 1")
    neg_cols = ds.negative_columns
    if neg_cols.size < M:
        raise TrainingError(
            f"need at least M={M} negative instances for background initialization, "
            f"found {neg_cols.size}"
        )
    Y = ds.instance_matrix[:, neg_cols]
    picked = _vca_indices(Y, M, rng)
    concepts = Y[:, picked].copy()
    norms = np.linalg.norm(concepts, axis=0)
    if np.any(norms < 1e-12):
        raise TrainingError("background initialization selected a zero instance")
    return concepts / norms


def init_backgrounds_kmeans(ds: BagDataset, M: int, rng: np.random.Generator) -> np.ndarray:
    """Alternative background init: unit-normalized k-means cluster centers."""
    neg_cols = ds.negative_columns
    if neg_cols.size < M:
        raise TrainingError(
            f"need at least M={M} negative instances for background initialization, "
            f"found {neg_cols.size}"
        )
    centers = _kmeans_centers(ds.instance_matrix[:, neg_cols], M, rng)
    norms = np.linalg.norm(centers, axis=0)
    if np.any(norms < 1e-12):
        raise TrainingError("background initialization produced a zero center")
    return centers / norms


def armijo_update_atom(
    atom: np.ndarray,
    grad: np.ndarray,
    evaluate,
    cfg: ArmijoParams,
) -> tuple[np.ndarray, ArmijoRecord]:
    """Move a unit-norm atom along -grad with backtracking.

    Tries steps s0, s0 * shrink, ... and accepts the first normalized
    candidate whose objective drops by at least c * s * ||grad||^2.  If no
    step qualifies within ``max_backtracks`` trials the atom is returned
    unchanged and the record carries ``accepted=False``.
    """
    atom = np.asarray(atom, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    f_before = float(evaluate(atom))
    grad_sq = float(grad @ grad)
    if grad_sq == 0.0:
        return atom.copy(), ArmijoRecord(None, f_before, f_before, False, 0)
    step = cfg.initial_step
    for trial in range(1, cfg.max_backtracks + 1):
        candidate = atom - step * grad
        norm = np.linalg.norm(candidate)
        if norm >= 1e-12:
            candidate = candidate / norm
            f_after = float(evaluate(candidate))
            if f_after <= f_before - cfg.sufficient_decrease_c * step * grad_sq:
                return candidate, ArmijoRecord(step, f_before, f_after, True, trial)
        step *= cfg.shrink_factor
    return atom.copy(), ArmijoRecord(None, f_before, f_before, False, cfg.max_backtracks)


def solve_codes(
    ds: BagDataset,
    D: ConceptDictionary,
    hp: HyperParams,
    include_negative_full: bool | None = None,
) -> CodeSet:
    """Sparse codes for every instance against the current dictionary.

    Background codes are always solved for all instances.  Full-dictionary
    codes are solved for positive instances, and for negative instances only
    when the incoherence term needs them (skipped when alpha_incoh = 0).
    """
    if include_negative_full is None:
        include_negative_full = hp.alpha_incoh != 0
    cfg = hp.ista_config()
    X = ds.instance_matrix
    background = solve_lasso_batch(X, D.backgrounds, hp.lam, cfg)
    if include_negative_full:
        full = solve_lasso_batch(X, D.full, hp.lam, cfg)
    else:
        full = np.zeros((D.n_total, ds.n_instances))
        pos = ds.positive_columns
        full[:, pos] = solve_lasso_batch(X[:, pos], D.full, hp.lam, cfg)
    return CodeSet(full=full, background=background,
                   has_negative_full_codes=include_negative_full)


class _CodesCache:
    """Re-solve codes only for dictionary blocks that actually changed.

    The solver is deterministic in its inputs, so reusing the solution for a
    bit-identical matrix returns exactly what a fresh solve would; gradients
    therefore always see codes computed against the current dictionary.
    """

    def __init__(self, ds: BagDataset, hp: HyperParams):
        self.ds = ds
        self.hp = hp
        self.include_negative_full = hp.alpha_incoh != 0
        self._bg_key = None
        self._bg_codes = None
        self._full_key = None
        self._full_codes = None

    def get(self, D: ConceptDictionary) -> CodeSet:
        cfg = self.hp.ista_config()
        X = self.ds.instance_matrix
        if self._bg_key is None or not np.array_equal(self._bg_key, D.backgrounds):
            self._bg_codes = solve_lasso_batch(X, D.backgrounds, self.hp.lam, cfg)
            self._bg_key = D.backgrounds
        if self._full_key is None or not np.array_equal(self._full_key, D.full):
            if self.include_negative_full:
                full = solve_lasso_batch(X, D.full, self.hp.lam, cfg)
            else:
                full = np.zeros((D.n_total, self.ds.n_instances))
                pos = self.ds.positive_columns
                full[:, pos] = solve_lasso_batch(X[:, pos], D.full, self.hp.lam, cfg)
            self._full_codes = full
            self._full_key = D.full
        return CodeSet(
            full=self._full_codes,
            background=self._bg_codes,
            has_negative_full_codes=self.include_negative_full,
        )


def train(ds: BagDataset, hp: HyperParams) -> TrainReport:
    """Run the full alternating optimization and return its audit trail.

    Deterministic given (dataset, hyperparameters including seed).
    """
    problems = validate_dataset(ds)
    if problems:
        raise TrainingError("invalid dataset: " + "; ".join(problems))
    hp.validate()
    rng = np.random.default_rng(hp.seed)

    targets = init_targets(ds, hp.T, rng)
    if hp.background_init == "kmeans":
        backgrounds = init_backgrounds_kmeans(ds, hp.M, rng)
    else:
        backgrounds = init_backgrounds_vca(ds, hp.M, rng)
    D = ConceptDictionary(targets, backgrounds)

    trace: list[ObjectiveBreakdown] = []
    dictionary_trace: list[ConceptDictionary] = []
    update_log: list[AtomUpdate] = []
    stop_reason = "max_iters"
    previous_total = None
    cache = _CodesCache(ds, hp)

    for outer in range(hp.max_outer_iters):
        shared_codes = cache.get(D) if hp.reuse_codes_within_iteration else None

        for t in range(hp.T):
            codes = shared_codes if shared_codes is not None else cache.get(D)
            grad = grad_target_atom(t, ds, D, hp, codes)

            def line_objective(column, _t=t, _codes=codes):
                return evaluate_objective(ds, D.with_target(_t, column), hp, _codes).total

            atom, record = armijo_update_atom(D.targets[:, t], grad, line_objective, hp.armijo)
            update_log.append(AtomUpdate(outer, "target", t, record))
            if record.accepted:
                D = D.with_target(t, atom)

        for k in range(hp.M):
            codes = shared_codes if shared_codes is not None else cache.get(D)
            grad = grad_background_atom(k, ds, D, hp, codes)

            def line_objective(column, _k=k, _codes=codes):
                return evaluate_objective(ds, D.with_background(_k, column), hp, _codes).total

            atom, record = armijo_update_atom(D.backgrounds[:, k], grad, line_objective, hp.armijo)
            update_log.append(AtomUpdate(outer, "background", k, record))
            if record.accepted:
                D = D.with_background(k, atom)

        codes = cache.get(D)
        breakdown = evaluate_objective(ds, D, hp, codes)
        trace.append(breakdown)
        dictionary_trace.append(D)

        if previous_total is not None:
            if abs(breakdown.total - previous_total) <= hp.change_tolerance * max(
                1.0, abs(previous_total)
            ):
                stop_reason = "tolerance"
                break
        previous_total = breakdown.total

    return TrainReport(
        iterations_run=len(trace),
        objective_trace=tuple(trace),
        stop_reason=stop_reason,
        final_dictionary=D,
        dictionary_trace=tuple(dictionary_trace),
        update_log=tuple(update_log),
    )
