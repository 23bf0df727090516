"""Synthetic bag-structured hyperspectral data.

Pixels are exact convex combinations of library endmember spectra with
Dirichlet-drawn proportions, assembled into labeled bags:

  * each positive bag holds a fixed number of sub-pixel target points whose
    proportions are drawn over {targets} union that bag's background
    subset, with the target coordinates' expectations pinned to the
    configured mean target proportions;
  * the remaining points of positive bags, and every point of negative
    bags, are background-only mixtures drawn uniformly on the simplex of
    the bag's background subset;
  * zero-mean Gaussian noise is added once to the fully assembled scene at
    a configured signal-to-noise ratio.

Per-bag background subsets let a confusing background endmember appear in
some positive bags while staying absent from every negative bag.  The
per-instance ground truth (labels, proportions, clean pixels) is returned
on a side channel for evaluation only and is never visible to training.
"""

from __future__ import annotations

import csv
import zlib
from dataclasses import dataclass

import numpy as np

from .model import Bag, BagDataset


@dataclass(frozen=True)
class SpectralLibrary:
    """Named endmember spectra sharing one wavelength grid (micrometers)."""

    wavelengths: np.ndarray
    spectra: dict[str, np.ndarray]

    def __post_init__(self):
        wl = np.asarray(self.wavelengths, dtype=np.float64)
        spectra = {}
        for name, s in self.spectra.items():
            s = np.asarray(s, dtype=np.float64)
            if s.shape != wl.shape:
                raise ValueError(
                    f"spectrum {name!r} has {s.shape[0]} bands, expected {wl.shape[0]}"
                )
            spectra[name] = s
        object.__setattr__(self, "wavelengths", wl)
        object.__setattr__(self, "spectra", spectra)

    @property
    def d(self) -> int:
        return self.wavelengths.shape[0]

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self.spectra)

    def matrix(self, names) -> np.ndarray:
        """Spectra for the given names as columns: (d, len(names))."""
        missing = [n for n in names if n not in self.spectra]
        if missing:
            raise ValueError(f"unknown endmember name(s): {', '.join(missing)}")
        return np.column_stack([self.spectra[n] for n in names])

    @classmethod
    def from_csv(cls, path) -> "SpectralLibrary":
        """Load ``wavelength,<name1>,<name2>,...`` with one row per band."""
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if not header or header[0] != "wavelength" or len(header) < 2:
                raise ValueError(
                    "library CSV must start with header 'wavelength,<name1>,...'"
                )
            rows = [[float(v) for v in row] for row in reader if row]
        if not rows:
            raise ValueError("library CSV contains no bands")
        data = np.asarray(rows, dtype=np.float64)
        return cls(
            wavelengths=data[:, 0],
            spectra={name: data[:, j + 1] for j, name in enumerate(header[1:])},
        )

    def to_csv(self, path) -> None:
        names = self.names
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["wavelength", *names])
            for i in range(self.d):
                writer.writerow(
                    [f"{self.wavelengths[i]:.17g}"]
                    + [f"{self.spectra[n][i]:.17g}" for n in names]
                )


def _smooth_curve(
    rng: np.random.Generator,
    wl: np.ndarray,
    n_bumps: int,
    amplitude: float,
    width_range: tuple[float, float] = (0.08, 0.45),
) -> np.ndarray:
    """Random smooth curve: a gentle slope plus Gaussian features.

    ``width_range`` is relative to the wavelength span; narrow widths give
    absorption-feature-like structure, broad widths give albedo-like shape.
    """
    span = wl[-1] - wl[0]
    curve = amplitude * rng.uniform(-0.3, 0.3) * (wl - wl[0]) / span
    for _ in range(n_bumps):
        center = rng.uniform(wl[0], wl[-1])
        width = rng.uniform(*width_range) * span
        curve += amplitude * rng.uniform(-1.0, 1.0) * np.exp(-0.5 * ((wl - center) / width) ** 2)
    return curve


def synthetic_library(
    names,
    n_bands: int = 211,
    seed: int = 0,
    base_level: float = 0.45,
    family_spread: float = 0.05,
) -> SpectralLibrary:
    """Smooth reflectance-like stand-ins for one correlated material family.

    All materials share a common smooth base curve; each adds its own broad
    deviation of amplitude ``family_spread``, so the family members are
    correlated the way related natural materials are.  A material's spectrum
    depends only on (its name, seed, shape parameters), not on the other
    names present.
    """
    wl = np.linspace(0.4, 2.5, n_bands)
    base_rng = np.random.default_rng([seed, 0xBA5E])
    base = base_level + _smooth_curve(base_rng, wl, n_bumps=3, amplitude=0.35 * base_level)
    spectra = {}
    for name in names:
        rng = np.random.default_rng([seed, zlib.crc32(name.encode("utf-8"))])
        albedo = rng.uniform(0.7, 1.3)  # family members differ in brightness
        spectra[name] = np.clip(
            albedo * base + _smooth_curve(rng, wl, n_bumps=5, amplitude=family_spread),
            0.02, 1.0,
        )
    return SpectralLibrary(wavelengths=wl, spectra=spectra)


def blended_target_spectrum(
    lib: SpectralLibrary,
    background_names,
    name: str,
    seed: int = 0,
    distinct_scale: float = 0.2,
) -> np.ndarray:
    """A target spectrum that hides near the background span.

    The target is a random convex blend of the given background spectra plus
    narrow absorption-feature-like structure of amplitude ``distinct_scale``.
    Narrow features escape the span of the broad background shapes, so the
    amplitude controls how far the target sits from the background subspace:
    the knob governing both sub-pixel detectability and how separable the
    target concept is during learning.
    """
    rng = np.random.default_rng([seed, zlib.crc32(name.encode("utf-8"))])
    B = lib.matrix(background_names)
    weights = rng.dirichlet(np.ones(B.shape[1]))
    own = _smooth_curve(
        rng, lib.wavelengths, n_bumps=8, amplitude=distinct_scale,
        width_range=(0.01, 0.06),
    )
    return np.clip(B @ weights + own, 0.02, 1.0)


DEMO_TARGETS = ("target_a", "target_b")
DEMO_BACKGROUNDS = ("rock_a", "rock_b", "rock_c")
_DEMO_FAMILY = ("rock_b", "rock_c")

# Narrow-feature amplitudes calibrated so that, at 20 dB scene SNR,
# detection with the true target spectrum lands in the difficulty regime of
# correlated natural materials: ACE AUC around 0.76 at mean target
# proportion 0.1, above 0.99 from 0.5 up.  rock_a plays the mildly
# off-family background whose absence from negative bags makes it easy to
# confuse with a target.
DEMO_TARGET_DISTINCT = 0.3
DEMO_CONFUSER_DISTINCT = 0.1
DEMO_SEED = 1918


def demo_library() -> SpectralLibrary:
    """The bundled five-material synthetic library used by the experiments.

    ``rock_b`` and ``rock_c`` form a correlated family with different
    albedos; ``rock_a`` sits slightly outside their span (a confusable
    background); the targets hide near the family span with stronger narrow
    features.
    """
    family = synthetic_library(_DEMO_FAMILY, n_bands=211, seed=DEMO_SEED)
    spectra = {
        "rock_a": blended_target_spectrum(
            family, _DEMO_FAMILY, "rock_a", seed=DEMO_SEED,
            distinct_scale=DEMO_CONFUSER_DISTINCT,
        ),
        "rock_b": family.spectra["rock_b"],
        "rock_c": family.spectra["rock_c"],
    }
    for target in DEMO_TARGETS:
        spectra[target] = blended_target_spectrum(
            family, _DEMO_FAMILY, target, seed=DEMO_SEED,
            distinct_scale=DEMO_TARGET_DISTINCT,
        )
    # targets first, matching the ground-truth proportion column order
    ordered = {n: spectra[n] for n in DEMO_TARGETS + DEMO_BACKGROUNDS}
    return SpectralLibrary(wavelengths=family.wavelengths, spectra=ordered)


@dataclass(frozen=True)
class SimConfig:
    """Scene recipe: who mixes with whom, how much, and how noisy.

    ``target_mean`` holds the mean proportion of each target within planted
    target pixels.  ``bag_background_subsets``, when given, lists the
    background endmembers available to each bag (positive bags first, then
    negative bags); by default every bag mixes over all background names.
    """

    target_names: tuple[str, ...]
    background_names: tuple[str, ...]
    bags_pos: int
    bags_neg: int
    pts_per_bag: int
    target_pts_per_pos_bag: int
    target_mean: tuple[float, ...]
    snr_db: float
    bag_background_subsets: tuple[tuple[str, ...], ...] | None = None
    dirichlet_scale: float = 10.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "target_names", tuple(self.target_names))
        object.__setattr__(self, "background_names", tuple(self.background_names))
        means = self.target_mean
        if isinstance(means, (int, float)):
            means = (float(means),) * len(self.target_names)
        object.__setattr__(self, "target_mean", tuple(float(m) for m in means))
        if self.bag_background_subsets is not None:
            object.__setattr__(
                self,
                "bag_background_subsets",
                tuple(tuple(s) for s in self.bag_background_subsets),
            )

    def validate(self) -> None:
        problems = []
        if len(self.target_names) < 1:
            problems.append("need at least one target endmember")
        if len(self.background_names) < 1:
            problems.append("need at least one background endmember")
        if len(self.target_mean) != len(self.target_names):
            problems.append("target_mean must list one mean per target")
        if any(not 0.0 < m < 1.0 for m in self.target_mean):
            problems.append("target_mean entries must lie in (0, 1)")
        if sum(self.target_mean) >= 1.0:
            problems.append("target_mean entries must sum below 1")
        if self.bags_pos < 0 or self.bags_neg < 0:
            problems.append("bag counts must be nonnegative")
        if self.pts_per_bag < 1:
            problems.append("pts_per_bag must be >= 1")
        if self.bags_pos > 0 and not 1 <= self.target_pts_per_pos_bag <= self.pts_per_bag:
            problems.append("target_pts_per_pos_bag must be in [1, pts_per_bag]")
        if not np.isfinite(self.snr_db):
            problems.append("snr_db must be finite")
        if not self.dirichlet_scale > 0:
            problems.append("dirichlet_scale must be positive")
        subsets = self.bag_background_subsets
        if subsets is not None:
            if len(subsets) != self.bags_pos + self.bags_neg:
                problems.append(
                    "bag_background_subsets must list one subset per bag "
                    "(positive bags first)"
                )
            for i, sub in enumerate(subsets):
                if len(sub) < 1:
                    problems.append(f"bag subset {i} is empty")
                unknown = [n for n in sub if n not in self.background_names]
                if unknown:
                    problems.append(
                        f"bag subset {i} references unknown endmember(s): "
                        + ", ".join(unknown)
                    )
        if problems:
            raise ValueError("invalid simulation config: " + "; ".join(problems))

    def subset_for_bag(self, bag_index: int) -> tuple[str, ...]:
        if self.bag_background_subsets is None:
            return self.background_names
        return self.bag_background_subsets[bag_index]


@dataclass(frozen=True)
class GroundTruth:
    """Per-instance truth retained for evaluation only.

    Rows follow the dataset's instance order.  ``proportions`` spans
    ``endmember_names`` (target names first); absent endmembers hold zero.
    ``clean`` holds the pre-noise pixels.
    """

    labels: np.ndarray
    target_fraction: np.ndarray
    endmember_names: tuple[str, ...]
    proportions: np.ndarray
    clean: np.ndarray


def sample_proportions(
    rng: np.random.Generator,
    k: int,
    mean_target: float,
    scale: float = 10.0,
) -> np.ndarray:
    """One Dirichlet draw over k components whose first coordinate (the
    target) has expectation ``mean_target`` and whose remaining mass splits
    evenly across the other k-1 components."""
    if k < 2:
        raise ValueError("need at least two mixture components")
    if not 0.0 < mean_target < 1.0:
        raise ValueError("mean_target must lie in (0, 1)")
    concentration = np.full(k, scale * (1.0 - mean_target) / (k - 1))
    concentration[0] = scale * mean_target
    return rng.dirichlet(concentration)


def _target_mixture_proportions(
    rng: np.random.Generator,
    means: np.ndarray,
    n_background: int,
    scale: float,
    size: int,
) -> np.ndarray:
    """(size, g + n_background) Dirichlet draws: coordinate j < g has
    expectation means[j]; the leftover mass splits evenly across the
    background components."""
    g = means.shape[0]
    concentration = np.empty(g + n_background)
    concentration[:g] = scale * means
    concentration[g:] = scale * (1.0 - means.sum()) / n_background
    return rng.dirichlet(concentration, size=size)


def add_noise_to_snr(clean: np.ndarray, snr_db: float, rng: np.random.Generator) -> np.ndarray:
    """Add i.i.d. zero-mean Gaussian noise sized so that
    10*log10(mean(clean^2) / noise variance) equals ``snr_db``."""
    clean = np.asarray(clean, dtype=np.float64)
    power = float(np.mean(clean**2))
    if power <= 0.0:
        raise ValueError("cannot set an SNR for an all-zero signal")
    sigma = np.sqrt(power / 10.0 ** (snr_db / 10.0))
    return clean + rng.normal(0.0, sigma, size=clean.shape)


def generate_dataset(lib: SpectralLibrary, cfg: SimConfig) -> tuple[BagDataset, GroundTruth]:
    """Assemble the configured bags from the library; returns the dataset
    plus its ground truth side channel."""
    cfg.validate()
    all_names = cfg.target_names + cfg.background_names
    if len(set(all_names)) != len(all_names):
        raise ValueError("target and background endmember names must be distinct")
    spectra = lib.matrix(all_names)  # (d, E): targets first
    name_index = {n: j for j, n in enumerate(all_names)}
    g = len(cfg.target_names)
    means = np.asarray(cfg.target_mean)

    rng = np.random.default_rng(cfg.seed)
    clean_blocks: list[np.ndarray] = []
    prop_blocks: list[np.ndarray] = []
    label_blocks: list[np.ndarray] = []
    bag_meta: list[tuple[str, int, int]] = []  # (bag_id, label, n_points)

    for bag_index in range(cfg.bags_pos + cfg.bags_neg):
        positive = bag_index < cfg.bags_pos
        subset = cfg.subset_for_bag(bag_index)
        bg_cols = [name_index[n] for n in subset]
        n_bg = len(bg_cols)
        proportions = np.zeros((cfg.pts_per_bag, len(all_names)))
        labels = np.zeros(cfg.pts_per_bag, dtype=np.intp)
        row = 0
        if positive:
            draws = _target_mixture_proportions(
                rng, means, n_bg, cfg.dirichlet_scale, cfg.target_pts_per_pos_bag
            )
            proportions[: cfg.target_pts_per_pos_bag, :g] = draws[:, :g]
            proportions[: cfg.target_pts_per_pos_bag, bg_cols] = draws[:, g:]
            labels[: cfg.target_pts_per_pos_bag] = 1
            row = cfg.target_pts_per_pos_bag
        n_plain = cfg.pts_per_bag - row
        if n_plain > 0:
            proportions[row:, bg_cols] = rng.dirichlet(np.ones(n_bg), size=n_plain)
        clean_blocks.append(proportions @ spectra.T)
        prop_blocks.append(proportions)
        label_blocks.append(labels)
        bag_meta.append((f"bag{bag_index:03d}", 1 if positive else 0, cfg.pts_per_bag))

    clean = np.concatenate(clean_blocks, axis=0)
    noisy = add_noise_to_snr(clean, cfg.snr_db, rng)

    bags = []
    start = 0
    for bag_id, label, count in bag_meta:
        bags.append(Bag(bag_id=bag_id, label=label, instances=noisy[start : start + count]))
        start += count

    proportions = np.concatenate(prop_blocks, axis=0)
    truth = GroundTruth(
        labels=np.concatenate(label_blocks),
        target_fraction=proportions[:, :g].sum(axis=1),
        endmember_names=all_names,
        proportions=proportions,
        clean=clean,
    )
    return BagDataset(bags=tuple(bags)), truth
