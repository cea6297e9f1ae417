"""Cross-correlation patch importance: maps, binarization, transport marginals.

A CC map scores each patch of one image by cosine similarity against the
*other* image's global embedding; the map is binarized at a threshold to
select salient patches, or floored and normalized into a probability vector
used as a transport marginal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

CC_THRESHOLD = 0.55  # binarization threshold, tuned on held-out data upstream
MARGINAL_FLOOR = 1e-6  # keeps marginals strictly positive for transport


@dataclass(frozen=True)
class CCMap:
    """Per-patch cosine similarity of source patches vs. a target global vector."""

    values: np.ndarray  # (M,), entries in [-1, 1]
    source_id: str = ""
    target_id: str = ""

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class PatchMask:
    selected: np.ndarray  # (M,) bool, never all False
    threshold: float

    def __post_init__(self):
        s = np.asarray(self.selected, dtype=bool)
        s.setflags(write=False)
        object.__setattr__(self, "selected", s)

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.selected)


def cross_correlation_map(patches: np.ndarray, other_global: np.ndarray,
                          source_id: str = "", target_id: str = "") -> CCMap:
    """Cosine similarity of each patch embedding against other_global.

    Requires d_p == d_g (the patch and global embeddings share a space).
    """
    patches = np.asarray(patches, dtype=np.float64)
    other_global = np.asarray(other_global, dtype=np.float64)
    if patches.ndim != 2 or other_global.ndim != 1 or patches.shape[1] != other_global.shape[0]:
        raise ValueError(
            f"dimension mismatch: patches {patches.shape} vs global {other_global.shape}")
    gnorm = np.linalg.norm(other_global)
    pnorms = np.linalg.norm(patches, axis=1)
    if gnorm == 0.0 or (pnorms == 0.0).any():
        raise ValueError("zero-norm vector in cross-correlation input")
    values = (patches @ other_global) / (pnorms * gnorm)
    np.clip(values, -1.0, 1.0, out=values)
    return CCMap(values=values, source_id=source_id, target_id=target_id)


def binarize_map(cc: CCMap, threshold: float = CC_THRESHOLD) -> PatchMask:
    """Select patches with value >= threshold (inclusive).

    If nothing clears the threshold, select exactly the argmax patch
    (ties resolve to the lowest index) so downstream scoring always has
    at least one patch to work with.
    """
    selected = cc.values >= threshold
    if not selected.any():
        selected = np.zeros_like(selected)
        selected[int(np.argmax(cc.values))] = True
    return PatchMask(selected=selected, threshold=threshold)


def weights_to_marginal(cc: CCMap) -> np.ndarray:
    """Floor CC values at MARGINAL_FLOOR and normalize to a probability vector.

    Negative correlations carry no transport mass beyond the floor; the
    relative order of above-floor entries is preserved.
    """
    v = np.maximum(cc.values, MARGINAL_FLOOR)
    return v / v.sum()


def uniform_marginal(m: int) -> np.ndarray:
    return np.full(m, 1.0 / m)
