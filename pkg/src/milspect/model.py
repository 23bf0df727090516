"""Core domain types for bag-labeled spectral concept learning.

Training data arrives as *bags* of spectral instances (pixels).  A positive
bag is known to contain at least one target pixel, a negative bag contains
none, and per-pixel labels are never available at training time.  The model
learned from such data is a pair of unit-norm concept matrices: target
concepts and background concepts.

Everything here is an immutable value object; arrays are stored as
read-only float64 so instances of these types can be shared freely.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

# A single instance is a length-d feature vector (reflectance-like values).
Instance = np.ndarray


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=np.float64, copy=True, order="C")
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class Bag:
    """An ordered multiset of instances sharing one binary label.

    ``label`` is 1 for positive bags (contain at least one target pixel)
    and 0 for negative bags (background only).  ``instances`` has shape
    (n, d): one row per instance.
    """

    bag_id: str
    label: int
    instances: np.ndarray

    def __post_init__(self):
        inst = np.asarray(self.instances, dtype=np.float64)
        if inst.ndim == 1:
            inst = inst.reshape(1, -1)
        if inst.ndim != 2:
            raise ValueError(f"bag {self.bag_id!r}: instances must be a 2-D array")
        if self.label not in (0, 1):
            raise ValueError(f"bag {self.bag_id!r}: label must be 0 or 1")
        object.__setattr__(self, "instances", _readonly(inst))

    @property
    def n_instances(self) -> int:
        return self.instances.shape[0]

    @property
    def d(self) -> int:
        return self.instances.shape[1]

    @property
    def is_positive(self) -> bool:
        return self.label == 1


@dataclass(frozen=True)
class BagDataset:
    """A corpus of bags, plus precomputed stacked views used by the numerics.

    Construction is tolerant of malformed data (e.g. bags with mismatched
    dimensionality); use :func:`validate_dataset` to obtain a report.  The
    stacked accessors raise if the dataset is not dimension-consistent.
    """

    bags: tuple[Bag, ...]

    def __post_init__(self):
        bags = tuple(self.bags)
        object.__setattr__(self, "bags", bags)
        consistent = (
            len(bags) > 0
            and all(b.d == bags[0].d for b in bags)
            and all(b.n_instances >= 1 for b in bags)
        )
        matrix = None
        slices = None
        pos_cols = None
        neg_cols = None
        if consistent:
            matrix = np.concatenate([b.instances for b in bags], axis=0).T
            matrix.flags.writeable = False
            slices = []
            start = 0
            for b in bags:
                slices.append(slice(start, start + b.n_instances))
                start += b.n_instances
            slices = tuple(slices)
            pos_cols = np.concatenate(
                [np.arange(s.start, s.stop) for b, s in zip(bags, slices) if b.is_positive]
                or [np.empty(0, dtype=np.intp)]
            )
            neg_cols = np.concatenate(
                [np.arange(s.start, s.stop) for b, s in zip(bags, slices) if not b.is_positive]
                or [np.empty(0, dtype=np.intp)]
            )
        object.__setattr__(self, "_matrix", matrix)
        object.__setattr__(self, "_slices", slices)
        object.__setattr__(self, "_pos_cols", pos_cols)
        object.__setattr__(self, "_neg_cols", neg_cols)

    def _stacked(self) -> np.ndarray:
        if self._matrix is None:
            raise ValueError(
                "dataset is not dimension-consistent; run validate_dataset for details"
            )
        return self._matrix

    @property
    def d(self) -> int:
        return self._stacked().shape[0]

    @property
    def n_instances(self) -> int:
        return self._stacked().shape[1]

    @property
    def instance_matrix(self) -> np.ndarray:
        """All instances as columns: shape (d, N), bags in order."""
        return self._stacked()

    @property
    def bag_slices(self) -> tuple[slice, ...]:
        self._stacked()
        return self._slices

    @property
    def positive_columns(self) -> np.ndarray:
        self._stacked()
        return self._pos_cols

    @property
    def negative_columns(self) -> np.ndarray:
        self._stacked()
        return self._neg_cols

    @property
    def n_positive_bags(self) -> int:
        return sum(1 for b in self.bags if b.is_positive)

    @property
    def n_negative_bags(self) -> int:
        return sum(1 for b in self.bags if not b.is_positive)


@dataclass(frozen=True)
class ConceptDictionary:
    """Target and background concept matrices.

    ``targets`` has shape (d, T), ``backgrounds`` shape (d, M).  Columns are
    prototype spectra; training keeps every column at unit Euclidean norm.
    """

    targets: np.ndarray
    backgrounds: np.ndarray

    def __post_init__(self):
        tgt = np.asarray(self.targets, dtype=np.float64)
        bkg = np.asarray(self.backgrounds, dtype=np.float64)
        if tgt.ndim == 1:
            tgt = tgt.reshape(-1, 1)
        if bkg.ndim == 1:
            bkg = bkg.reshape(-1, 1)
        if tgt.ndim != 2 or bkg.ndim != 2:
            raise ValueError("concept matrices must be 2-D")
        if tgt.shape[0] != bkg.shape[0]:
            raise ValueError("targets and backgrounds must share dimensionality d")
        if tgt.shape[1] < 1 or bkg.shape[1] < 1:
            raise ValueError("need at least one target and one background concept")
        if not (np.isfinite(tgt).all() and np.isfinite(bkg).all()):
            raise ValueError("concept matrices must be finite")
        object.__setattr__(self, "targets", _readonly(tgt))
        object.__setattr__(self, "backgrounds", _readonly(bkg))
        full = np.hstack([self.targets, self.backgrounds])
        full.flags.writeable = False
        object.__setattr__(self, "_full", full)

    @property
    def full(self) -> np.ndarray:
        """Concatenated (d, T+M) matrix: target columns first."""
        return self._full

    @property
    def d(self) -> int:
        return self.targets.shape[0]

    @property
    def n_targets(self) -> int:
        return self.targets.shape[1]

    @property
    def n_backgrounds(self) -> int:
        return self.backgrounds.shape[1]

    @property
    def n_total(self) -> int:
        return self.n_targets + self.n_backgrounds

    def with_target(self, index: int, column: np.ndarray) -> "ConceptDictionary":
        tgt = np.array(self.targets)
        tgt[:, index] = column
        return ConceptDictionary(tgt, self.backgrounds)

    def with_background(self, index: int, column: np.ndarray) -> "ConceptDictionary":
        bkg = np.array(self.backgrounds)
        bkg[:, index] = column
        return ConceptDictionary(self.targets, bkg)

    def normalized(self) -> "ConceptDictionary":
        """Return a copy with every column scaled to unit Euclidean norm."""

        def norm_cols(m):
            norms = np.linalg.norm(m, axis=0)
            if np.any(norms < 1e-300):
                raise ValueError("cannot normalize a zero concept column")
            return m / norms

        return ConceptDictionary(norm_cols(self.targets), norm_cols(self.backgrounds))

    def column_norms(self) -> np.ndarray:
        return np.linalg.norm(self.full, axis=0)


@dataclass(frozen=True)
class ArmijoParams:
    """Backtracking line-search controls for the per-atom updates."""

    initial_step: float = 0.01
    shrink_factor: float = 0.5
    sufficient_decrease_c: float = 1e-4
    max_backtracks: int = 20

    def validate(self) -> list[str]:
        problems = []
        if not self.initial_step > 0:
            problems.append("armijo.initial_step must be > 0")
        if not 0 < self.shrink_factor < 1:
            problems.append("armijo.shrink_factor must be in (0, 1)")
        if not 0 < self.sufficient_decrease_c < 1:
            problems.append("armijo.sufficient_decrease_c must be in (0, 1)")
        if self.max_backtracks < 1:
            problems.append("armijo.max_backtracks must be >= 1")
        return problems


@dataclass(frozen=True)
class HyperParams:
    """All knobs of the training objective and optimizer.

    ``T``/``M`` are the target/background concept counts.  ``rho`` scales the
    background fidelity term, ``b`` is the generalized-mean exponent, ``beta``
    scales the hybrid detection statistic, ``lam`` is the sparse-coding
    weight, and ``alpha_incoh`` weighs the cross-incoherence penalty that
    discourages target concepts from reconstructing negative-bag data.
    """

    T: int
    M: int
    rho: float
    b: float
    beta: float
    lam: float
    alpha_incoh: float = 1.0
    max_outer_iters: int = 100
    change_tolerance: float = 1e-5
    ista_iters: int = 200
    ista_tolerance: float = 1e-6
    armijo: ArmijoParams = field(default_factory=ArmijoParams)
    seed: int = 0
    reuse_codes_within_iteration: bool = False
    background_init: str = "vca"

    def validate(self) -> None:
        """Raise ValueError on invalid settings; warn on suspicious ones."""
        problems = []
        if self.T < 1:
            problems.append("T must be >= 1")
        if self.M < 1:
            problems.append("M must be >= 1")
        if not self.beta > 0:
            problems.append("beta must be > 0")
        if self.lam < 0:
            problems.append("lam must be >= 0")
        if self.rho < 0:
            problems.append("rho must be >= 0")
        if self.b == 0:
            problems.append("b must be nonzero (the exponent divides the objective)")
        if self.alpha_incoh < 0:
            problems.append("alpha_incoh must be >= 0")
        if self.max_outer_iters < 0:
            problems.append("max_outer_iters must be >= 0")
        if self.change_tolerance < 0:
            problems.append("change_tolerance must be >= 0")
        if self.ista_iters < 1:
            problems.append("ista_iters must be >= 1")
        if self.ista_tolerance < 0:
            problems.append("ista_tolerance must be >= 0")
        if self.background_init not in ("vca", "kmeans"):
            problems.append("background_init must be 'vca' or 'kmeans'")
        if self.seed < 0 or self.seed > 2**64 - 1:
            problems.append("seed must fit in 64 unsigned bits")
        problems.extend(self.armijo.validate())
        if problems:
            raise ValueError("invalid hyperparameters: " + "; ".join(problems))
        if self.rho >= 1:
            warnings.warn(
                "rho >= 1: the negative-bag scaling is usually set below one",
                stacklevel=2,
            )

    def ista_config(self):
        from .sparse import IstaConfig

        return IstaConfig(max_iters=self.ista_iters, tolerance=self.ista_tolerance)

    def with_seed(self, seed: int) -> "HyperParams":
        return replace(self, seed=seed)


@dataclass(frozen=True)
class SparseCodes:
    """Sparse coefficients of one instance plus the implied residuals.

    ``full`` holds the coefficients over the concatenated dictionary
    (targets first, backgrounds after), ``background`` the coefficients of
    an independent solve over the background concepts alone.  The residuals
    are computed at construction from the exact stored coefficients:
    ``residual_full = x - [targets|backgrounds] @ full`` and
    ``residual_background = x - backgrounds @ background``.
    """

    full: np.ndarray
    background: np.ndarray
    residual_full: np.ndarray
    residual_background: np.ndarray
    n_targets: int

    def __post_init__(self):
        for name in ("full", "background", "residual_full", "residual_background"):
            object.__setattr__(self, name, _readonly(getattr(self, name)))

    @classmethod
    def from_solution(
        cls,
        x: Instance,
        dictionary: ConceptDictionary,
        full: np.ndarray,
        background: np.ndarray,
    ) -> "SparseCodes":
        x = np.asarray(x, dtype=np.float64)
        full = np.asarray(full, dtype=np.float64)
        background = np.asarray(background, dtype=np.float64)
        return cls(
            full=full,
            background=background,
            residual_full=x - dictionary.full @ full,
            residual_background=x - dictionary.backgrounds @ background,
            n_targets=dictionary.n_targets,
        )

    @property
    def target_part(self) -> np.ndarray:
        """Coefficients of the target concepts within the full code."""
        return self.full[: self.n_targets]

    @property
    def background_part(self) -> np.ndarray:
        """Coefficients of the background concepts within the full code."""
        return self.full[self.n_targets :]


def validate_dataset(ds: BagDataset) -> list[str]:
    """Check dataset invariants; return one message per violation.

    An empty list means the dataset is well formed for training: every bag
    non-empty and finite, all bags sharing one dimensionality, and at least
    one bag of each label so the instance bookkeeping N = N+ + N- is a
    partition.
    """
    problems = []
    if len(ds.bags) == 0:
        return ["dataset has no bags"]
    d = ds.bags[0].d
    for bag in ds.bags:
        if bag.n_instances < 1:
            problems.append(f"bag {bag.bag_id!r}: empty bag")
        if bag.d != d:
            problems.append(
                f"bag {bag.bag_id!r}: dimension mismatch (d={bag.d}, expected {d})"
            )
        elif bag.n_instances >= 1 and not np.isfinite(bag.instances).all():
            problems.append(f"bag {bag.bag_id!r}: non-finite feature values")
    if d < 1:
        problems.append("instance dimensionality must be positive")
    if ds.n_positive_bags == 0:
        problems.append("no positive bags")
    if ds.n_negative_bags == 0:
        problems.append("no negative bags")
    return problems


def spectral_angle(u: np.ndarray, v: np.ndarray) -> float:
    """Angle in degrees between two spectra; scale-invariant recovery metric."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ValueError("spectral angle undefined for zero vectors")
    c = np.clip(abs(u @ v) / (nu * nv), -1.0, 1.0)
    return math.degrees(math.acos(c))
