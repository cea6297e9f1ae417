"""Classifier configuration and construction shared by evaluation and the CLI."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

from .knn import Prediction, knn_classify
from .rerank import (ArgmaxCorrespondenceSource, KeypointSet, RerankResult,
                     chm_corr_classify, chm_corr_plus_classify,
                     emd_corr_classify)
from .store import FeatureRecord, GalleryIndex

METHODS = ("knn", "emd_corr", "chm_corr", "chm_corr_plus")

Classifier = Callable[[FeatureRecord], tuple[Prediction, list[RerankResult] | None]]


@dataclass(frozen=True)
class ClassifierConfig:
    method: str = "knn"
    k: int = 20
    N: int = 50
    L: int = 5
    epsilon: float = 0.05
    iterations: int = 100
    weighting: str = "cc"  # emd_corr marginals: cc | uniform
    threshold: float = 0.55  # chm_corr CC binarization
    exclude_self: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")


def make_classifier(index: GalleryIndex, config: ClassifierConfig,
                    corr_source=None,
                    keypoints: Mapping[str, KeypointSet] | None = None) -> Classifier:
    """Bind a config to a gallery, returning query -> (prediction, rerank)."""
    if config.method in ("chm_corr", "chm_corr_plus") and corr_source is None:
        corr_source = ArgmaxCorrespondenceSource()

    def classify(query: FeatureRecord):
        if config.method == "knn":
            return knn_classify(query, index, k=config.k,
                                exclude_self=config.exclude_self), None
        if config.method == "emd_corr":
            return emd_corr_classify(
                query, index, N=config.N, k=config.k, L=config.L,
                epsilon=config.epsilon, iterations=config.iterations,
                weighting=config.weighting, exclude_self=config.exclude_self)
        if config.method == "chm_corr":
            return chm_corr_classify(
                query, index, corr_source, N=config.N, k=config.k, L=config.L,
                T=config.threshold, exclude_self=config.exclude_self)
        if keypoints is None:
            raise ValueError("chm_corr_plus requires keypoint annotations")
        return chm_corr_plus_classify(
            query, index, corr_source, keypoints, N=config.N, k=config.k,
            exclude_self=config.exclude_self)

    return classify
