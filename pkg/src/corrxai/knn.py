"""Global-feature cosine kNN: full-scan ranking and top-k majority vote.

Stage 1 of every classifier in this package. Ranking is exact (no
approximate index): the gallery's unit-normalized global embeddings are
scanned in one matrix product, then sorted with deterministic tie-breaks so
results are run-to-run identical regardless of worker count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .store import FeatureRecord, GalleryIndex

DEFAULT_K = 20  # best among {10, 20, 50, 100} on the reference benchmark


@dataclass(frozen=True)
class RankedNeighbor:
    image_id: str
    class_id: int
    distance: float  # cosine distance in [0, 2]
    rank: int


@dataclass(frozen=True)
class Prediction:
    label: int
    confidence_count: int
    k: int
    support: tuple[RankedNeighbor, ...]
    method: str  # knn | emd_corr | chm_corr | chm_corr_plus

    @property
    def confidence(self) -> float:
        """Fraction of top-k support in the predicted class, in (0, 1]."""
        return self.confidence_count / self.k


def cosine_distance(u: np.ndarray, v: np.ndarray) -> float:
    """1 - cos(u, v); 0 for aligned, 1 for orthogonal, 2 for antipodal."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine distance undefined for zero-norm input")
    d = 1.0 - float(np.dot(u, v) / (nu * nv))
    return min(max(d, 0.0), 2.0)


def rank_gallery(query: FeatureRecord, index: GalleryIndex, exclude_self: bool = False) -> list[RankedNeighbor]:
    """Rank every gallery record by cosine distance to the query's global vector.

    Ties break by image_id ascending so the ordering is reproducible.
    With exclude_self, a gallery record sharing the query's image_id is dropped.
    """
    if query.global_vec.shape[0] != index.dims.d_g:
        raise ValueError(
            f"query dim {query.global_vec.shape[0]} does not match gallery d_g {index.dims.d_g}")
    q = query.global_vec.astype(np.float64)
    q = q / np.linalg.norm(q)
    mat = index.globals_matrix
    dists = np.empty(len(mat))
    step = 1 << 16  # bounds the float64 upcast temporary at paper scale
    for lo in range(0, len(mat), step):
        hi = min(lo + step, len(mat))
        dists[lo:hi] = mat[lo:hi] @ q
    dists = 1.0 - dists / index.global_norms
    np.clip(dists, 0.0, 2.0, out=dists)
    order = np.lexsort((index.image_ids, dists))
    ranked = []
    rank = 0
    for i in order:
        image_id = str(index.image_ids[i])
        if exclude_self and image_id == query.image_id:
            continue
        ranked.append(RankedNeighbor(
            image_id=image_id,
            class_id=int(index.class_ids[i]),
            distance=float(dists[i]),
            rank=rank,
        ))
        rank += 1
    return ranked


def majority_vote(ranked: list[RankedNeighbor], k: int) -> tuple[int, int]:
    """Dominant class among the first k neighbors and its count.

    Vote ties break by the tied class whose best member has the lowest rank.
    """
    if k < 1 or len(ranked) < k:
        raise ValueError(f"need at least k={k} ranked neighbors, have {len(ranked)}")
    counts: dict[int, int] = {}
    best_pos: dict[int, int] = {}
    for pos, n in enumerate(ranked[:k]):
        counts[n.class_id] = counts.get(n.class_id, 0) + 1
        best_pos.setdefault(n.class_id, pos)
    label = min(counts, key=lambda c: (-counts[c], best_pos[c]))
    return label, counts[label]


def knn_classify(query: FeatureRecord, index: GalleryIndex, k: int = DEFAULT_K,
                 exclude_self: bool = False) -> Prediction:
    ranked = rank_gallery(query, index, exclude_self=exclude_self)
    label, count = majority_vote(ranked, k)
    return Prediction(label=label, confidence_count=count, k=k,
                      support=tuple(ranked[:k]), method="knn")
