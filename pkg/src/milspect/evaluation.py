"""ROC evaluation and the parameter-sweep harness.

AUC is computed as the trapezoidal area of a tie-grouped ROC sweep, which
equals the Mann-Whitney pair statistic with ties counted 1/2.  NAUC
restricts the integration to a false-alarm-rate cutoff (converted to a
false-positive-rate bound through the scene area) and renormalizes so a
perfect detector still scores 1.

The sweep harness re-runs the full simulate/train/detect/score pipeline for
every grid point with seeds derived deterministically from (base seed, grid
index, run index), and aggregates by the lower median.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace

import numpy as np

from .model import HyperParams
from .simgen import SimConfig, SpectralLibrary, generate_dataset


@dataclass(frozen=True)
class ScoreSet:
    """Per-instance detection scores, optionally with ground-truth labels."""

    ids: tuple[str, ...]
    scores: np.ndarray
    truth: np.ndarray | None = None

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "scores", scores)
        if len(self.ids) != scores.shape[0]:
            raise ValueError("ids and scores must have equal length")
        if self.truth is not None:
            truth = np.asarray(self.truth, dtype=np.intp)
            if truth.shape != scores.shape:
                raise ValueError("truth must align with scores")
            if not np.isin(truth, (0, 1)).all():
                raise ValueError("truth labels must be 0 or 1")
            object.__setattr__(self, "truth", truth)

    def __len__(self) -> int:
        return self.scores.shape[0]

    def entries(self):
        """Iterate (id, score, truth-or-None) tuples."""
        truth = self.truth if self.truth is not None else [None] * len(self)
        yield from zip(self.ids, self.scores.tolist(), truth)

    def _labeled(self):
        if self.truth is None:
            raise ValueError("ScoreSet has no ground-truth labels")
        n_pos = int(self.truth.sum())
        n_neg = len(self) - n_pos
        if n_pos == 0 or n_neg == 0:
            raise ValueError("ROC needs at least one positive and one negative label")
        return n_pos, n_neg


def roc_curve(s: ScoreSet) -> np.ndarray:
    """(k, 2) array of (fpr, tpr) points from a descending threshold sweep.

    Instances sharing a score enter the curve together (tied groups), so
    the curve is the exact tie-averaged ROC: it starts at (0, 0) and ends
    at (1, 1).
    """
    n_pos, n_neg = s._labeled()
    order = np.argsort(-s.scores, kind="mergesort")
    truth = s.truth[order]
    sorted_scores = s.scores[order]
    group_ends = np.r_[np.nonzero(np.diff(sorted_scores))[0], len(sorted_scores) - 1]
    tp = np.cumsum(truth)[group_ends]
    fp = np.cumsum(1 - truth)[group_ends]
    points = np.vstack([[0.0, 0.0], np.column_stack([fp / n_neg, tp / n_pos])])
    return points


def auc(s: ScoreSet) -> float:
    """Area under the ROC curve in [0, 1]."""
    points = roc_curve(s)
    return float(np.trapz(points[:, 1], points[:, 0]))


def _partial_roc_area(points: np.ndarray, fpr_max: float) -> float:
    """Integral of the ROC polyline over [0, fpr_max]."""
    area = 0.0
    for (x0, y0), (x1, y1) in zip(points[:-1], points[1:]):
        if x1 <= fpr_max:
            area += (x1 - x0) * (y0 + y1) / 2.0
        elif x0 < fpr_max:
            y_cut = y0 + (y1 - y0) * (fpr_max - x0) / (x1 - x0)
            area += (fpr_max - x0) * (y0 + y_cut) / 2.0
            break
        else:
            break
    return area


def nauc(s: ScoreSet, far_cutoff: float, area_per_sample: float = 1.0) -> float:
    """Area under the ROC up to a false-alarm-rate cutoff, renormalized.

    The cutoff is given in false alarms per unit area; with the scene area
    taken as ``area_per_sample`` times the number of scored instances, the
    equivalent false-positive-rate bound is
    ``far_cutoff * total_area / n_negatives`` (clipped to 1).
    """
    if not far_cutoff > 0:
        raise ValueError("far_cutoff must be positive")
    if not area_per_sample > 0:
        raise ValueError("area_per_sample must be positive")
    _, n_neg = s._labeled()
    total_area = area_per_sample * len(s)
    fpr_max = min(1.0, far_cutoff * total_area / n_neg)
    if fpr_max <= 0:
        raise ValueError("false-positive-rate bound is not positive")
    points = roc_curve(s)
    return _partial_roc_area(points, fpr_max) / fpr_max


def lower_median(values) -> float:
    """Median with the lower of the two middle values on even counts."""
    ordered = sorted(values)
    if not ordered:
        raise ValueError("median of an empty collection")
    return float(ordered[(len(ordered) - 1) // 2])


def derive_seed(base: int, *keys: int) -> int:
    """Deterministic 63-bit child seed from a base seed and index keys."""
    ss = np.random.SeedSequence([int(base), *[int(k) for k in keys]])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)


# Single-parameter ranges exercised by the robustness studies.
DEFAULT_PARAM_RANGES: dict[str, tuple] = {
    "M": (1, 2, 3, 5, 7, 9, 11, 13, 15, 17, 19, 21),
    "beta": (0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1, 2, 5, 10, 20, 50, 100),
    "lambda": (1e-4, 2e-4, 5e-4, 1e-3, 2e-3, 5e-3, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1),
    "b": (-10, -5, -2, -1, 1e-10, 1, 2, 5, 10, 20, 50, 100),
}

# Reduced joint grid for the combined perturbation study.
JOINT_GRID_RANGES: dict[str, tuple] = {
    "M": (3, 5, 7, 9),
    "beta": (1, 2, 5, 10),
    "lambda": (1e-3, 2e-3, 5e-3, 0.01),
    "b": (5, 10, 20, 50),
}

_SWEEPABLE = {"M": "M", "beta": "beta", "lambda": "lam", "b": "b"}


@dataclass(frozen=True)
class SweepSpec:
    """Which hyperparameters to vary and how many runs per setting.

    ``parameters`` maps a name in {M, beta, lambda, b} to its value list; a
    single entry is a 1-D sweep, several entries form a joint grid (row-major
    product in the listed order).
    """

    parameters: dict[str, tuple]
    runs_per_setting: int = 5

    def __post_init__(self):
        if not self.parameters:
            raise ValueError("sweep needs at least one parameter")
        params = {}
        for name, values in self.parameters.items():
            if name not in _SWEEPABLE:
                raise ValueError(
                    f"cannot sweep {name!r}; supported: {sorted(_SWEEPABLE)}"
                )
            values = tuple(values)
            if not values:
                raise ValueError(f"empty value list for {name!r}")
            params[name] = values
        object.__setattr__(self, "parameters", params)
        if self.runs_per_setting < 1:
            raise ValueError("runs_per_setting must be >= 1")

    def grid(self):
        names = list(self.parameters)
        for combo in itertools.product(*(self.parameters[n] for n in names)):
            yield dict(zip(names, combo))


@dataclass(frozen=True)
class ExperimentConfig:
    """One full simulate/train/detect/score experiment.

    Training and testing scenes are generated independently from the same
    recipe with derived seeds.  Detection uses the trained dictionary; for
    ace/smf the background statistics are fit on the negative training
    instances.
    """

    library: SpectralLibrary
    sim: SimConfig
    hp: HyperParams
    method: str = "ace"
    ridge: float | None = None


@dataclass(frozen=True)
class ExperimentResult:
    auc: float
    scores: ScoreSet
    report: object  # TrainReport; kept loose to avoid an import cycle


def run_experiment(cfg: ExperimentConfig, seed: int | None = None) -> ExperimentResult:
    """Generate train/test scenes, train, score the test scene, return AUC."""
    from .detectors import detect, fit_background
    from .trainer import train

    base = cfg.sim.seed if seed is None else int(seed)
    ds_train, _ = generate_dataset(cfg.library, replace(cfg.sim, seed=derive_seed(base, 0)))
    ds_test, truth = generate_dataset(cfg.library, replace(cfg.sim, seed=derive_seed(base, 1)))

    report = train(ds_train, cfg.hp.with_seed(derive_seed(base, 2)))

    background = None
    if cfg.method in ("ace", "smf"):
        negatives = ds_train.instance_matrix[:, ds_train.negative_columns].T
        background = fit_background(negatives, cfg.ridge)

    scores = detect(
        ds_test.instance_matrix.T,
        cfg.method,
        dictionary=report.final_dictionary,
        background=background,
        lam=cfg.hp.lam,
        ista_cfg=cfg.hp.ista_config(),
        truth=truth.labels,
    )
    return ExperimentResult(auc=auc(scores), scores=scores, report=report)


@dataclass(frozen=True)
class SweepRow:
    """Aggregated outcome of one grid point."""

    grid_id: int
    params: dict
    median_auc: float
    min_auc: float
    max_auc: float
    failed: bool


def run_sweep(base: ExperimentConfig, spec: SweepSpec) -> list[SweepRow]:
    """Run the pipeline over the grid; one row per setting, in grid order.

    Every (setting, run) pair gets its own derived seed.  A failing run
    marks the row as failed but never aborts the sweep; statistics cover
    the runs that succeeded.
    """
    rows = []
    base_seed = base.sim.seed
    for grid_id, params in enumerate(spec.grid()):
        hp = replace(base.hp, **{_SWEEPABLE[n]: v for n, v in params.items()})
        cfg = replace(base, hp=hp)
        aucs = []
        failed = False
        for run in range(spec.runs_per_setting):
            try:
                aucs.append(run_experiment(cfg, seed=derive_seed(base_seed, grid_id, run)).auc)
            except Exception:
                failed = True
        if aucs:
            rows.append(
                SweepRow(grid_id, params, lower_median(aucs), min(aucs), max(aucs), failed)
            )
        else:
            rows.append(SweepRow(grid_id, params, float("nan"), float("nan"), float("nan"), True))
    return rows
