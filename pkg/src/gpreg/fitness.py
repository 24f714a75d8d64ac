"""Sampled mutual-information fitness.

Gray levels are quantised into ``ceil(256 / bin_width)`` bins before the joint
histogram is built. A chromosome is scored on a sample of sensed pixels: each
sample is mapped into the reference frame, the reference is read there with
bilinear interpolation, and MI (in nats) is computed over the samples that
land inside the reference raster.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels

DEFAULT_BIN_WIDTH = 8


def quantize(intensity, bin_width: int = DEFAULT_BIN_WIDTH):
    if bin_width < 1:
        raise ValueError("bin_width must be >= 1")
    return intensity // bin_width


def bin_count(bin_width: int) -> int:
    return -(-256 // bin_width)


@dataclass(frozen=True, eq=False)
class JointHistogram:
    """Counts of (sensed bin, reference bin) pairs."""

    counts: np.ndarray

    @classmethod
    def from_pairs(cls, a_bins, b_bins, n_bins: int) -> JointHistogram:
        a = np.asarray(a_bins, dtype=np.int64)
        b = np.asarray(b_bins, dtype=np.int64)
        counts = np.bincount(a * n_bins + b, minlength=n_bins * n_bins).reshape(n_bins, n_bins)
        return cls(counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def marginals(self):
        p = self.counts / self.total
        return p.sum(axis=1), p.sum(axis=0)

    def transpose(self) -> JointHistogram:
        return JointHistogram(np.ascontiguousarray(self.counts.T))

    def to_csv(self, path) -> None:
        np.savetxt(path, self.counts, fmt="%d", delimiter=",")


def mutual_information(hist: JointHistogram) -> float:
    """MI of a joint histogram, in nats. Raises ``ValueError`` when empty."""
    if hist.total == 0:
        raise ValueError("no overlapping samples")
    return kernels.mutual_information_counts(np.ascontiguousarray(hist.counts, dtype=np.int64))


@dataclass(frozen=True)
class SamplePlan:
    fraction: float = 0.005
    # at desk-sized images 0.5% is a few hundred pixels, too noisy to rank on
    floor: int = 3000
    overlap_threshold: float = 0.25

    def __post_init__(self):
        if not 0.0 < self.fraction <= 1.0:
            raise ValueError("fraction must be in (0, 1]")
        if self.floor < 1:
            raise ValueError("floor must be >= 1")
        if not 0.0 <= self.overlap_threshold <= 1.0:
            raise ValueError("overlap_threshold must be in [0, 1]")


def sample_count(dims, plan: SamplePlan) -> int:
    width, height = dims
    n_pixels = width * height
    return min(max(math.floor(plan.fraction * n_pixels), plan.floor), n_pixels)


def all_pixels(dims) -> np.ndarray:
    """Every pixel position as an ``(n, 2)`` array of ``(x, y)``, row-major."""
    width, height = dims
    ys, xs = np.divmod(np.arange(width * height, dtype=np.int64), width)
    return np.column_stack([xs, ys])


def sample_pixels(rng: np.random.Generator, dims, plan: SamplePlan) -> np.ndarray:
    """Distinct pixel positions drawn uniformly without replacement, as ``(n, 2)`` ``(x, y)``."""
    width, height = dims
    n_pixels = width * height
    n = sample_count(dims, plan)
    if n == n_pixels:
        return all_pixels(dims)
    flat = rng.choice(n_pixels, size=n, replace=False)
    ys, xs = np.divmod(flat.astype(np.int64), width)
    return np.column_stack([xs, ys])


@dataclass(frozen=True)
class FitnessResult:
    mi: float
    overlap_fraction: float
    valid: bool

    @property
    def score(self) -> float:
        """Sort key: MI for valid results, ``-inf`` otherwise."""
        return self.mi if self.valid else -math.inf


class FitnessContext:
    """Images plus one shared sample set; scores any number of chromosomes.

    Read-only after construction, so one instance can serve many threads.
    """

    def __init__(self, sensed, reference, samples, plan: SamplePlan = SamplePlan(), bin_width: int = DEFAULT_BIN_WIDTH):
        self.sensed = sensed
        self.reference = reference
        self.plan = plan
        self.bin_width = int(bin_width)
        self.n_bins = bin_count(self.bin_width)
        samples = np.asarray(samples, dtype=np.int64).reshape(-1, 2)
        if samples.size and (
            samples[:, 0].min() < 0
            or samples[:, 0].max() >= sensed.width
            or samples[:, 1].min() < 0
            or samples[:, 1].max() >= sensed.height
        ):
            raise ValueError("samples must lie within the sensed image")
        self.xs = np.ascontiguousarray(samples[:, 0], dtype=np.float64)
        self.ys = np.ascontiguousarray(samples[:, 1], dtype=np.float64)
        self.sensed_bins = np.ascontiguousarray(
            quantize(sensed.pixels[samples[:, 1], samples[:, 0]].astype(np.int64), self.bin_width)
        )
        self._ref = reference.pixels

    def _map(self, chrom):
        return chrom.map_points(self.xs, self.ys, self.sensed.dims)

    def histogram(self, chrom) -> tuple[JointHistogram, int, int]:
        tx, ty = self._map(chrom)
        counts, n_inside, n_nonfinite = kernels.mapped_joint_histogram(
            self.sensed_bins, self._ref, tx, ty, self.bin_width, self.n_bins
        )
        return JointHistogram(counts), int(n_inside), int(n_nonfinite)

    def evaluate(self, chrom) -> FitnessResult:
        n = self.xs.shape[0]
        if n == 0:
            return FitnessResult(0.0, 0.0, False)
        hist, n_inside, n_nonfinite = self.histogram(chrom)
        overlap = n_inside / n
        if n_nonfinite or n_inside == 0 or overlap < self.plan.overlap_threshold:
            return FitnessResult(0.0, overlap, False)
        return FitnessResult(kernels.mutual_information_counts(hist.counts), overlap, True)


def evaluate_fitness(chrom, sensed, reference, samples, plan: SamplePlan = SamplePlan(), bin_width: int = DEFAULT_BIN_WIDTH) -> FitnessResult:
    return FitnessContext(sensed, reference, samples, plan, bin_width).evaluate(chrom)


def full_mutual_information(chrom, sensed, reference, bin_width: int = DEFAULT_BIN_WIDTH) -> FitnessResult:
    """Score on every sensed pixel (no sampling, no overlap gate)."""
    plan = SamplePlan(1.0, 1, 0.0)
    return FitnessContext(sensed, reference, all_pixels(sensed.dims), plan, bin_width).evaluate(chrom)
