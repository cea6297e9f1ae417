from __future__ import annotations

import numpy as np
import pytest

from corrxai.store import Dims, FeatureRecord, GalleryIndex

TINY = Dims(d_g=8, d_p=8, g=2)


def make_record(image_id: str, class_id: int, rng: np.random.Generator,
                dims: Dims = TINY) -> FeatureRecord:
    return FeatureRecord(
        image_id=image_id,
        class_id=class_id,
        global_vec=rng.normal(size=dims.d_g).astype(np.float32),
        patches=rng.normal(size=(dims.g, dims.g, dims.d_p)).astype(np.float32),
    )


def make_gallery(n_classes: int, per_class: int, rng: np.random.Generator,
                 dims: Dims = TINY, spread: float = 0.3) -> GalleryIndex:
    """Clustered gallery: each class is a Gaussian blob around a random center."""
    records = []
    for c in range(n_classes):
        center_g = rng.normal(size=dims.d_g)
        center_p = rng.normal(size=(dims.g, dims.g, dims.d_p))
        for i in range(per_class):
            records.append(FeatureRecord(
                image_id=f"c{c}_{i:03d}",
                class_id=c,
                global_vec=(center_g + spread * rng.normal(size=dims.d_g)).astype(np.float32),
                patches=(center_p + spread * rng.normal(size=center_p.shape)).astype(np.float32),
            ))
    return GalleryIndex(records)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)
