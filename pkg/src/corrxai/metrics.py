"""Batch accuracy evaluation and explanation-diversity measurement.

Accuracy runs a configured classifier over every non-excluded manifest
entry; a prediction is correct when its label is in the entry's (possibly
multi-label) groundtruth set. Diversity scores each explanation by the mean
multi-scale structural similarity over all support-image pairs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.signal import convolve

from .explain import ExplanationRecord
from .pipeline import Classifier
from .store import DatasetManifest, FeatureRecord, GalleryIndex

MSSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
MSSSIM_WINDOW = 11
MSSSIM_SIGMA = 1.5


@dataclass(frozen=True)
class QueryOutcome:
    image_id: str
    predicted: int
    correct: bool
    confidence: float


@dataclass
class AccuracyReport:
    method: str
    outcomes: tuple[QueryOutcome, ...]
    skipped: tuple[str, ...]

    @property
    def total(self) -> int:
        return len(self.outcomes) + len(self.skipped)

    @property
    def correct_count(self) -> int:
        return sum(1 for o in self.outcomes if o.correct)

    @property
    def accuracy_percent(self) -> float:
        if not self.outcomes:
            return float("nan")
        return 100.0 * self.correct_count / len(self.outcomes)

    def to_csv(self) -> str:
        lines = ["image_id,predicted,correct,confidence"]
        for o in self.outcomes:
            lines.append(f"{o.image_id},{o.predicted},{int(o.correct)},{o.confidence:.6f}")
        return "\n".join(lines) + "\n"

    def summary(self) -> str:
        return (f"method={self.method} evaluated={len(self.outcomes)} "
                f"correct={self.correct_count} skipped={len(self.skipped)} "
                f"top1={self.accuracy_percent:.2f}%")


def evaluate_topk(manifest: DatasetManifest, classifier: Classifier, method: str,
                  query_source: GalleryIndex | Mapping[str, FeatureRecord]) -> AccuracyReport:
    """Top-1 accuracy of a classifier over the manifest's active entries.

    Entries whose features are missing from query_source are skipped and
    reported. Output ordering is canonical by image_id, so shuffled
    manifests produce identical reports.
    """
    get = query_source.get
    outcomes = []
    skipped = []
    for entry in sorted(manifest.active(), key=lambda e: e.image_id):
        record = get(entry.image_id)
        if record is None:
            skipped.append(entry.image_id)
            continue
        prediction, _ = classifier(record)
        outcomes.append(QueryOutcome(
            image_id=entry.image_id,
            predicted=prediction.label,
            correct=prediction.label in entry.groundtruth_labels,
            confidence=prediction.confidence,
        ))
    return AccuracyReport(method=method, outcomes=tuple(outcomes), skipped=tuple(skipped))


def rgb_to_gray(image: np.ndarray) -> np.ndarray:
    """Luminance conversion 0.299 R + 0.587 G + 0.114 B."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        return image
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected (H, W) or (H, W, 3), got {image.shape}")
    return image @ np.array([0.299, 0.587, 0.114])


def _gaussian_window(size: int = MSSSIM_WINDOW, sigma: float = MSSSIM_SIGMA) -> np.ndarray:
    coords = np.arange(size) - (size - 1) / 2.0
    w = np.exp(-(coords ** 2) / (2.0 * sigma * sigma))
    return w / w.sum()


def _filter_valid(img: np.ndarray, w: np.ndarray) -> np.ndarray:
    return convolve(convolve(img, w[:, None], mode="valid"), w[None, :], mode="valid")


def _ssim_terms(a: np.ndarray, b: np.ndarray, data_range: float) -> tuple[float, float]:
    """Mean luminance*cs and mean cs over the valid window region."""
    w = _gaussian_window()
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    mu_a = _filter_valid(a, w)
    mu_b = _filter_valid(b, w)
    var_a = _filter_valid(a * a, w) - mu_a * mu_a
    var_b = _filter_valid(b * b, w) - mu_b * mu_b
    cov = _filter_valid(a * b, w) - mu_a * mu_b
    lum = (2 * mu_a * mu_b + c1) / (mu_a * mu_a + mu_b * mu_b + c1)
    cs = (2 * cov + c2) / (var_a + var_b + c2)
    return float((lum * cs).mean()), float(cs.mean())


def _downsample(img: np.ndarray) -> np.ndarray:
    # 2x2 mean pooling; odd edges replicate so size halves as ceil(n/2).
    h, w = img.shape
    padded = np.pad(img, ((0, h % 2), (0, w % 2)), mode="edge")
    return (padded[0::2, 0::2] + padded[1::2, 0::2]
            + padded[0::2, 1::2] + padded[1::2, 1::2]) / 4.0


def ms_ssim(img_a: np.ndarray, img_b: np.ndarray, scales: int = 5,
            data_range: float = 1.0) -> float:
    """Multi-scale structural similarity of two grayscale images.

    Uses the conventional five scale weights, an 11x11 Gaussian window
    (sigma 1.5) over the valid region, and 2x2 mean-pool downsampling.
    Contrast-structure means are clamped at zero before the weighted
    product, so the result lies in [0, 1]. Images must be at least
    (window-1)*2**(scales-1) + 1 pixels per side (161 for five scales).
    """
    a = np.asarray(img_a, dtype=np.float64)
    b = np.asarray(img_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ValueError(f"images must be equal-shape 2-D arrays: {a.shape} vs {b.shape}")
    if not 1 <= scales <= len(MSSSIM_WEIGHTS):
        raise ValueError(f"scales must be in [1, {len(MSSSIM_WEIGHTS)}]")
    min_side = (MSSSIM_WINDOW - 1) * 2 ** (scales - 1) + 1
    if min(a.shape) < min_side:
        raise ValueError(
            f"image {a.shape} too small for {scales} scales (needs >= {min_side} per side)")
    weights = np.array(MSSSIM_WEIGHTS[:scales])
    weights = weights / weights.sum()
    value = 1.0
    for level in range(scales):
        lum_cs, cs = _ssim_terms(a, b, data_range)
        term = lum_cs if level == scales - 1 else cs
        value *= max(term, 0.0) ** weights[level]
        if level < scales - 1:
            a = _downsample(a)
            b = _downsample(b)
    return float(min(max(value, 0.0), 1.0))


@dataclass(frozen=True)
class DiversityRecord:
    query_id: str
    method: str
    pair_count: int
    mean_similarity: float


@dataclass
class DiversityReport:
    metric: str
    records: tuple[DiversityRecord, ...]
    skipped: tuple[tuple[str, str], ...] = ()  # (query_id, reason)
    per_method: dict[str, tuple[float, float, int]] = field(default_factory=dict)

    def summary(self) -> str:
        lines = [f"metric={self.metric} records={len(self.records)} skipped={len(self.skipped)}"]
        for method, (mean, std, n) in sorted(self.per_method.items()):
            lines.append(f"  {method}: mean={mean:.4f} std={std:.4f} n={n}")
        return "\n".join(lines)


def explanation_diversity(records: list[ExplanationRecord],
                          images: Mapping[str, np.ndarray],
                          scales: int = 5) -> DiversityReport:
    """Mean pairwise MS-SSIM over each explanation's support images.

    Records with fewer than two retrievable supports are skipped with a
    note. Per-method aggregates report mean and population deviation over
    record means.
    """
    out = []
    skipped = []
    for rec in records:
        pixels = []
        missing = [s.image_id for s in rec.supports if s.image_id not in images]
        if missing:
            skipped.append((rec.query_id, f"missing pixels for {','.join(missing)}"))
            continue
        pixels = [np.asarray(images[s.image_id], dtype=np.float64) for s in rec.supports]
        if len(pixels) < 2:
            skipped.append((rec.query_id, "fewer than 2 supports"))
            continue
        sims = [ms_ssim(pixels[i], pixels[j], scales=scales)
                for i in range(len(pixels)) for j in range(i + 1, len(pixels))]
        out.append(DiversityRecord(query_id=rec.query_id, method=rec.method,
                                   pair_count=len(sims),
                                   mean_similarity=float(np.mean(sims))))
    per_method: dict[str, tuple[float, float, int]] = {}
    for method in sorted({r.method for r in out}):
        vals = np.array([r.mean_similarity for r in out if r.method == method])
        per_method[method] = (float(vals.mean()), float(vals.std()), len(vals))
    return DiversityReport(metric="ms_ssim", records=tuple(out),
                           skipped=tuple(skipped), per_method=per_method)
