"""Detection metrics and feature-distribution distances."""

from __future__ import annotations

import logging
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt
from scipy.spatial.distance import jensenshannon

from flad_sim.core.datagen import FloatArray, feature_values

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.5
DEFAULT_BINS = 100


class AnalysisError(ValueError):
    """Raised for invalid metric or histogram inputs."""


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: ConfusionCounts) -> ConfusionCounts:
        return ConfusionCounts(
            tp=self.tp + other.tp,
            fp=self.fp + other.fp,
            tn=self.tn + other.tn,
            fn=self.fn + other.fn,
        )


def confusion(
    probs: npt.ArrayLike, labels: npt.ArrayLike, threshold: float = DEFAULT_THRESHOLD
) -> ConfusionCounts:
    """Tally predictions; a probability at or above the threshold counts as DDoS."""
    if not 0.0 < threshold < 1.0:
        raise AnalysisError(f"threshold must lie in (0, 1), got {threshold}")
    scores = np.asarray(probs, dtype=np.float64).reshape(-1)
    truth = np.asarray(labels).reshape(-1)
    if scores.shape != truth.shape:
        raise AnalysisError(
            f"probabilities and labels differ in length: {scores.size} vs {truth.size}"
        )
    predicted = scores >= threshold
    positive = truth == 1
    return ConfusionCounts(
        tp=int(np.count_nonzero(predicted & positive)),
        fp=int(np.count_nonzero(predicted & ~positive)),
        tn=int(np.count_nonzero(~predicted & ~positive)),
        fn=int(np.count_nonzero(~predicted & positive)),
    )


def precision(counts: ConfusionCounts) -> float:
    denominator = counts.tp + counts.fp
    return counts.tp / denominator if denominator else 0.0


def tpr(counts: ConfusionCounts) -> float:
    denominator = counts.tp + counts.fn
    return counts.tp / denominator if denominator else 0.0


def f1_score(counts: ConfusionCounts) -> float:
    """Harmonic mean of precision and TPR; 0 whenever a denominator vanishes."""
    pr = precision(counts)
    recall = tpr(counts)
    if pr + recall == 0.0:
        return 0.0
    return 2.0 * pr * recall / (pr + recall)


@dataclass(frozen=True)
class FeatureHistogram:
    """Normalized fixed-width histogram of one feature."""

    feature_name: str
    bin_edges: tuple[float, ...]
    densities: tuple[float, ...]
    uniform_fallback: bool = False

    def __post_init__(self) -> None:
        if len(self.densities) != len(self.bin_edges) - 1:
            raise AnalysisError("histogram needs exactly one density per bin")

    def rows(self) -> list[tuple[float, float, float]]:
        """(bin_left, bin_right, density) triples in bin order."""
        return [
            (self.bin_edges[index], self.bin_edges[index + 1], density)
            for index, density in enumerate(self.densities)
        ]


def histogram(
    values: npt.ArrayLike,
    bins: int,
    value_range: tuple[float, float],
    feature_name: str = "",
) -> FeatureHistogram:
    """Fixed-width histogram over `value_range`; out-of-range values land in the edge bins."""
    lo, hi = float(value_range[0]), float(value_range[1])
    if bins < 1:
        raise AnalysisError(f"bins must be >= 1, got {bins}")
    if not (math.isfinite(lo) and math.isfinite(hi)) or lo >= hi:
        raise AnalysisError(f"histogram range must be finite with lo < hi, got ({lo}, {hi})")
    data = np.clip(np.asarray(values, dtype=np.float64).reshape(-1), lo, hi)
    counts, edges = np.histogram(data, bins=bins, range=(lo, hi))
    total = int(counts.sum())
    if total == 0:
        densities = np.full(bins, 1.0 / bins)
        fallback = True
    else:
        densities = counts / total
        fallback = False
    return FeatureHistogram(
        feature_name=feature_name,
        bin_edges=tuple(float(edge) for edge in edges),
        densities=tuple(float(density) for density in densities),
        uniform_fallback=fallback,
    )


def jsd(p: FeatureHistogram, q: FeatureHistogram) -> float:
    """Jensen-Shannon distance with base-2 logarithms, in [0, 1]."""
    if p.bin_edges != q.bin_edges:
        raise AnalysisError(
            f"histograms for '{p.feature_name}' and '{q.feature_name}' use different bins"
        )
    distance = float(
        jensenshannon(np.asarray(p.densities), np.asarray(q.densities), base=2.0)
    )
    return min(max(distance, 0.0), 1.0)


@dataclass(frozen=True, eq=False)
class JsdMatrix:
    """Row i, column j: mean distance from attack i to every other attack on feature j."""

    attack_tags: tuple[str, ...]
    features: tuple[str, ...]
    values: npt.NDArray[np.float64]

    def row(self, attack_tag: str) -> dict[str, float]:
        index = self.attack_tags.index(attack_tag)
        return {
            feature: float(self.values[index, column])
            for column, feature in enumerate(self.features)
        }


def feature_ranges(
    datasets: Sequence[tuple[str, FloatArray]], features: Sequence[str]
) -> dict[str, tuple[float, float]]:
    """Global (lo, hi) per feature across every dataset; a flat feature gets hi = lo + 1."""
    ranges: dict[str, tuple[float, float]] = {}
    for feature in features:
        pooled = [feature_values(samples, feature) for _, samples in datasets]
        present = [values for values in pooled if values.size]
        if not present:
            ranges[feature] = (0.0, 1.0)
            continue
        lo = float(min(values.min() for values in present))
        hi = float(max(values.max() for values in present))
        ranges[feature] = (lo, hi) if hi > lo else (lo, lo + 1.0)
    return ranges


def feature_histograms(
    datasets: Sequence[tuple[str, FloatArray]],
    features: Sequence[str],
    bins: int = DEFAULT_BINS,
    ranges: Mapping[str, tuple[float, float]] | None = None,
) -> dict[str, list[FeatureHistogram]]:
    """Per feature, one histogram per dataset on shared binning."""
    resolved = dict(ranges) if ranges is not None else feature_ranges(datasets, features)
    missing = [feature for feature in features if feature not in resolved]
    if missing:
        raise AnalysisError(f"no histogram range for features {missing}")
    return {
        feature: [
            histogram(feature_values(samples, feature), bins, resolved[feature], feature)
            for _, samples in datasets
        ]
        for feature in features
    }


def jsd_matrix(
    datasets: Sequence[tuple[str, FloatArray]],
    features: Sequence[str],
    bins: int = DEFAULT_BINS,
    ranges: Mapping[str, tuple[float, float]] | None = None,
) -> JsdMatrix:
    if len(datasets) < 2:
        raise AnalysisError(f"JSD matrix needs at least 2 datasets, got {len(datasets)}")
    if not features:
        raise AnalysisError("JSD matrix needs at least one feature")
    histograms = feature_histograms(datasets, features, bins, ranges)
    count = len(datasets)
    values = np.zeros((count, len(features)), dtype=np.float64)
    for column, feature in enumerate(features):
        per_dataset = histograms[feature]
        pairwise = np.zeros((count, count), dtype=np.float64)
        for i in range(count):
            for k in range(i + 1, count):
                distance = jsd(per_dataset[i], per_dataset[k])
                pairwise[i, k] = distance
                pairwise[k, i] = distance
        values[:, column] = pairwise.sum(axis=1) / (count - 1)
    logger.info("analysis.jsd_matrix datasets=%d features=%d bins=%d", count, len(features), bins)
    return JsdMatrix(
        attack_tags=tuple(tag for tag, _ in datasets),
        features=tuple(features),
        values=values,
    )
