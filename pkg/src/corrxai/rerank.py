"""Two-stage re-ranking classifiers over patch correspondences.

Stage 1 shortlists the top-N gallery candidates by global cosine distance.
Stage 2 re-sorts the shortlist by patch-wise evidence: transport distance
over the top-L flow pairs (flow variant), or the sum of the top-L cosine
similarities along an externally supplied correspondence map (map variant,
with a keypoint-constrained flavor). The dominant class of the re-ranked
top-k wins, exactly as in stage 1.

Correspondence maps normally come from files exported by the offline
extractor; an argmax-cosine fallback is built in so the suite runs without
any external network. The map file format:

    magic "CXCM" | version u32 | g u32 | count u64
    then per entry:
        query id (u16 len + UTF-8) | gallery id (u16 len + UTF-8)
        g*g pairs of (row u8, col u8)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .knn import Prediction, RankedNeighbor, majority_vote, rank_gallery
from .store import FeatureRecord, GalleryIndex
from .transport import (DEFAULT_EPSILON, DEFAULT_ITERATIONS, DEFAULT_TOP_L,
                        cost_matrix, emd_distance, sinkhorn_flow, top_l_flows)
from .weights import (CC_THRESHOLD, PatchMask, binarize_map,
                      cross_correlation_map, uniform_marginal,
                      weights_to_marginal)

DEFAULT_SHORTLIST = 50  # best among {50, 100, 200} on the reference benchmark

CORR_MAGIC = b"CXCM"
CORR_VERSION = 1


class CorrespondenceFormatError(ValueError):
    """Raised for malformed correspondence-map files."""


class MissingCorrespondenceError(KeyError):
    """Raised in strict mode when a required (query, candidate) map is absent."""


class KeypointError(ValueError):
    """Raised when a query has no visible keypoints to score with."""


@dataclass(frozen=True)
class CorrespondenceMap:
    """For each query patch i, the (row, col) of its matched gallery patch."""

    query_id: str
    gallery_id: str
    mapping: np.ndarray  # (M, 2) int, each row a (row, col) inside the g*g grid

    def __post_init__(self):
        m = np.asarray(self.mapping, dtype=np.int64)
        if m.ndim != 2 or m.shape[1] != 2:
            raise ValueError("mapping must have shape (M, 2)")
        m.setflags(write=False)
        object.__setattr__(self, "mapping", m)

    def flat_targets(self, g: int) -> np.ndarray:
        """Mapping as flat patch indices row*g + col."""
        if (self.mapping < 0).any() or (self.mapping >= g).any():
            raise ValueError(
                f"{self.query_id}->{self.gallery_id}: mapping outside the {g}x{g} grid")
        return self.mapping[:, 0] * g + self.mapping[:, 1]


@dataclass(frozen=True)
class RerankPair:
    """One scored patch correspondence: value is a flow or a cosine similarity."""

    i: int
    j: int
    value: float
    cost: float


@dataclass(frozen=True)
class RerankResult:
    candidate_id: str
    score: float
    pairs: tuple[RerankPair, ...]


@dataclass(frozen=True)
class Keypoint:
    part_name: str
    x: float
    y: float
    visible: bool


@dataclass(frozen=True)
class KeypointSet:
    image_id: str
    width: int
    height: int
    keypoints: tuple[Keypoint, ...]


def write_correspondence_file(maps: Sequence[CorrespondenceMap], g: int, path: str | Path) -> None:
    m = g * g
    with open(path, "wb") as fh:
        fh.write(CORR_MAGIC)
        fh.write(struct.pack("<IIQ", CORR_VERSION, g, len(maps)))
        for cm in maps:
            if cm.mapping.shape[0] != m:
                raise CorrespondenceFormatError(
                    f"{cm.query_id}->{cm.gallery_id}: expected {m} entries, got {cm.mapping.shape[0]}")
            cm.flat_targets(g)  # range check
            for raw in (cm.query_id.encode("utf-8"), cm.gallery_id.encode("utf-8")):
                fh.write(struct.pack("<H", len(raw)))
                fh.write(raw)
            fh.write(cm.mapping.astype(np.uint8).tobytes())


def load_correspondence_file(path: str | Path) -> tuple[int, list[CorrespondenceMap]]:
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != CORR_MAGIC:
        found = data[:4] if len(data) >= 4 else data
        raise CorrespondenceFormatError(
            f"bad magic: expected {CORR_MAGIC!r}, found {bytes(found)!r}")
    off = 4
    try:
        version, g, count = struct.unpack_from("<IIQ", data, off)
    except struct.error as exc:
        raise CorrespondenceFormatError(f"truncated header: {exc}") from None
    off += struct.calcsize("<IIQ")
    if version != CORR_VERSION:
        raise CorrespondenceFormatError(f"unsupported version {version}")
    m = g * g
    maps = []
    for n in range(count):
        ids = []
        for _ in range(2):
            if off + 2 > len(data):
                raise CorrespondenceFormatError(f"truncated file at entry {n}")
            (id_len,) = struct.unpack_from("<H", data, off)
            off += 2
            if off + id_len > len(data):
                raise CorrespondenceFormatError(f"truncated file at entry {n}")
            ids.append(data[off:off + id_len].decode("utf-8"))
            off += id_len
        if off + 2 * m > len(data):
            raise CorrespondenceFormatError(f"truncated file at entry {n} (mapping)")
        mapping = np.frombuffer(data, dtype=np.uint8, count=2 * m, offset=off).reshape(m, 2)
        off += 2 * m
        cm = CorrespondenceMap(query_id=ids[0], gallery_id=ids[1], mapping=mapping.astype(np.int64))
        if (cm.mapping >= g).any():
            raise CorrespondenceFormatError(
                f"{cm.query_id}->{cm.gallery_id}: mapping outside the {g}x{g} grid")
        maps.append(cm)
    if off != len(data):
        raise CorrespondenceFormatError(f"{len(data) - off} trailing bytes")
    return g, maps


def argmax_correspondence(q_patches: np.ndarray, g_patches: np.ndarray,
                          query_id: str = "", gallery_id: str = "") -> CorrespondenceMap:
    """Fallback correspondence: each query patch maps to its nearest gallery
    patch by cosine distance (ties to the lowest index)."""
    d = cost_matrix(q_patches, g_patches).d
    g = int(round(np.sqrt(d.shape[1])))
    if g * g != d.shape[1]:
        raise ValueError(f"gallery patch count {d.shape[1]} is not a square grid")
    best = np.argmin(d, axis=1)
    mapping = np.stack([best // g, best % g], axis=1)
    return CorrespondenceMap(query_id=query_id, gallery_id=gallery_id, mapping=mapping)


class ArgmaxCorrespondenceSource:
    """Computes argmax-cosine correspondences on demand (no external files)."""

    def get(self, query: FeatureRecord, cand: FeatureRecord) -> CorrespondenceMap:
        return argmax_correspondence(query.patch_matrix, cand.patch_matrix,
                                     query_id=query.image_id, gallery_id=cand.image_id)


class FileCorrespondenceSource:
    """Serves correspondence maps loaded from CXCM files keyed by id pair."""

    def __init__(self, maps: Sequence[CorrespondenceMap] = ()):
        self._maps: dict[tuple[str, str], CorrespondenceMap] = {}
        self.add(maps)

    @classmethod
    def from_file(cls, path: str | Path) -> "FileCorrespondenceSource":
        _, maps = load_correspondence_file(path)
        return cls(maps)

    def add(self, maps: Sequence[CorrespondenceMap]) -> None:
        for cm in maps:
            self._maps[(cm.query_id, cm.gallery_id)] = cm

    def get(self, query: FeatureRecord, cand: FeatureRecord) -> CorrespondenceMap | None:
        return self._maps.get((query.image_id, cand.image_id))


KEYPOINT_FIELDS = ("image_id", "part_name", "x", "y", "visible", "image_w", "image_h")
REQUEST_FIELDS = ("query_id", "gallery_id")


def write_keypoints(sets: Sequence[KeypointSet], path: str | Path) -> None:
    lines = ["\t".join(KEYPOINT_FIELDS)]
    for ks in sets:
        for kp in ks.keypoints:
            lines.append("\t".join([
                ks.image_id, kp.part_name, repr(kp.x), repr(kp.y),
                "1" if kp.visible else "0", str(ks.width), str(ks.height)]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_keypoints(path: str | Path) -> dict[str, KeypointSet]:
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].split("\t") != list(KEYPOINT_FIELDS):
        raise ValueError(f"{path}: expected header {' '.join(KEYPOINT_FIELDS)}")
    grouped: dict[str, tuple[int, int, list[Keypoint]]] = {}
    for ln in lines[1:]:
        image_id, part, x, y, visible, w, h = ln.split("\t")
        dims = (int(w), int(h))
        entry = grouped.setdefault(image_id, (dims[0], dims[1], []))
        if (entry[0], entry[1]) != dims:
            raise ValueError(f"{path}: conflicting dimensions for {image_id!r}")
        entry[2].append(Keypoint(part_name=part, x=float(x), y=float(y),
                                 visible=visible == "1"))
    return {iid: KeypointSet(image_id=iid, width=w, height=h, keypoints=tuple(kps))
            for iid, (w, h, kps) in grouped.items()}


def write_rerank_requests(pairs: Sequence[tuple[str, str]], path: str | Path) -> None:
    lines = ["\t".join(REQUEST_FIELDS)]
    lines.extend(f"{q}\t{g}" for q, g in pairs)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_rerank_requests(path: str | Path) -> list[tuple[str, str]]:
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].split("\t") != list(REQUEST_FIELDS):
        raise ValueError(f"{path}: expected header {' '.join(REQUEST_FIELDS)}")
    out = []
    for ln in lines[1:]:
        q, g = ln.split("\t")
        out.append((q, g))
    return out


def _shortlist(query: FeatureRecord, index: GalleryIndex, n: int, k: int,
               exclude_self: bool) -> list[RankedNeighbor]:
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= N, got k={k}, N={n}")
    ranked = rank_gallery(query, index, exclude_self=exclude_self)
    if n > len(ranked):
        raise ValueError(f"N={n} exceeds gallery size {len(ranked)}")
    return ranked[:n]


def _vote(shortlist: list[RankedNeighbor], order: list[int], k: int, method: str) -> Prediction:
    reranked = [
        RankedNeighbor(image_id=shortlist[i].image_id, class_id=shortlist[i].class_id,
                       distance=shortlist[i].distance, rank=pos)
        for pos, i in enumerate(order)
    ]
    label, count = majority_vote(reranked, k)
    return Prediction(label=label, confidence_count=count, k=k,
                      support=tuple(reranked[:k]), method=method)


def emd_corr_classify(query: FeatureRecord, index: GalleryIndex,
                      N: int = DEFAULT_SHORTLIST, k: int = 20, L: int = DEFAULT_TOP_L,
                      epsilon: float = DEFAULT_EPSILON, iterations: int = DEFAULT_ITERATIONS,
                      weighting: str = "cc", exclude_self: bool = False,
                      early_exit: float | None = None) -> tuple[Prediction, list[RerankResult]]:
    """Re-rank the top-N shortlist by transport distance over top-L flows.

    With CC weighting, the transport marginals put mass on the patches of
    each image that correlate with the other image's global embedding;
    uniform weighting spreads mass evenly (ablation mode).
    """
    if weighting not in ("cc", "uniform"):
        raise ValueError(f"unknown weighting {weighting!r}")
    shortlist = _shortlist(query, index, N, k, exclude_self)
    q_flat = query.patch_matrix
    m = q_flat.shape[0]
    results = []
    for neighbor in shortlist:
        cand = index.get(neighbor.image_id)
        assert cand is not None
        if weighting == "cc":
            mu = weights_to_marginal(cross_correlation_map(q_flat, cand.global_vec))
            nu = weights_to_marginal(cross_correlation_map(cand.patch_matrix, query.global_vec))
        else:
            mu = uniform_marginal(m)
            nu = uniform_marginal(m)
        cost = cost_matrix(q_flat, cand.patch_matrix)
        flow = sinkhorn_flow(cost, mu, nu, epsilon=epsilon, iterations=iterations,
                             early_exit=early_exit)
        pairs = top_l_flows(flow, cost, L)
        score = emd_distance(pairs)
        results.append(RerankResult(
            candidate_id=cand.image_id,
            score=score,
            pairs=tuple(RerankPair(i=p.i, j=p.j, value=p.flow, cost=p.cost) for p in pairs),
        ))
    order = sorted(range(N), key=lambda i: (results[i].score, i))  # ascending distance
    return _vote(shortlist, order, k, "emd_corr"), [results[i] for i in order]


def chm_score(query: FeatureRecord, cand: FeatureRecord, corr: CorrespondenceMap,
              mask: PatchMask, L: int = DEFAULT_TOP_L) -> RerankResult:
    """Sum of the top-L cosine similarities among masked query patches,
    each paired with its corresponding gallery patch."""
    if corr.query_id != query.image_id or corr.gallery_id != cand.image_id:
        raise ValueError(
            f"correspondence {corr.query_id}->{corr.gallery_id} does not join "
            f"{query.image_id} to {cand.image_id}")
    g = query.patches.shape[0]
    targets = corr.flat_targets(g)
    q_flat = query.patch_matrix
    g_flat = cand.patch_matrix
    scored = []
    for i in mask.indices:
        j = int(targets[i])
        qv = q_flat[i].astype(np.float64)
        gv = g_flat[j].astype(np.float64)
        sim = float(np.dot(qv, gv) / (np.linalg.norm(qv) * np.linalg.norm(gv)))
        sim = min(max(sim, -1.0), 1.0)
        scored.append(RerankPair(i=int(i), j=j, value=sim, cost=1.0 - sim))
    scored.sort(key=lambda p: (-p.value, p.i))
    chosen = tuple(scored[:min(L, len(scored))])
    return RerankResult(candidate_id=cand.image_id,
                        score=float(sum(p.value for p in chosen)), pairs=chosen)


def _map_rerank(query: FeatureRecord, index: GalleryIndex, corr_source,
                mask_for, N: int, k: int, L: int, method: str,
                exclude_self: bool, strict: bool) -> tuple[Prediction, list[RerankResult]]:
    shortlist = _shortlist(query, index, N, k, exclude_self)
    results: list[RerankResult | None] = []
    for neighbor in shortlist:
        cand = index.get(neighbor.image_id)
        assert cand is not None
        corr = corr_source.get(query, cand)
        if corr is None:
            if strict:
                raise MissingCorrespondenceError(
                    f"no correspondence map for ({query.image_id}, {cand.image_id})")
            results.append(None)
            continue
        results.append(chm_score(query, cand, corr, mask_for(cand), L))
    scored = [i for i, r in enumerate(results) if r is not None]
    unscored = [i for i, r in enumerate(results) if r is None]
    order = sorted(scored, key=lambda i: (-results[i].score, i)) + unscored
    full = [r if r is not None
            else RerankResult(candidate_id=shortlist[i].image_id, score=float("nan"), pairs=())
            for i, r in enumerate(results)]
    return _vote(shortlist, order, k, method), [full[i] for i in order]


def chm_corr_classify(query: FeatureRecord, index: GalleryIndex, corr_source,
                      N: int = DEFAULT_SHORTLIST, k: int = 20, L: int = DEFAULT_TOP_L,
                      T: float = CC_THRESHOLD, exclude_self: bool = False,
                      strict: bool = False) -> tuple[Prediction, list[RerankResult]]:
    """Re-rank the shortlist by correspondence-map similarity.

    The query-side mask comes from binarizing the query's CC map against
    each candidate at threshold T; candidates without a correspondence map
    are ranked after all scored candidates (or raise, in strict mode).
    """
    q_flat = query.patch_matrix

    def mask_for(cand: FeatureRecord) -> PatchMask:
        return binarize_map(cross_correlation_map(q_flat, cand.global_vec), T)

    return _map_rerank(query, index, corr_source, mask_for, N, k, L,
                       "chm_corr", exclude_self, strict)


def keypoint_patches(keypoints: KeypointSet, g: int = 7) -> list[int]:
    """Grid patch indices under the visible keypoints.

    Each visible keypoint lands in patch floor(y*g/H)*g + floor(x*g/W),
    clamped to the grid; duplicates are dropped keeping first occurrence.
    """
    if g < 1:
        raise ValueError("g must be >= 1")
    indices: list[int] = []
    for kp in keypoints.keypoints:
        if not kp.visible:
            continue
        row = min(max(int(kp.y * g // keypoints.height), 0), g - 1)
        col = min(max(int(kp.x * g // keypoints.width), 0), g - 1)
        idx = row * g + col
        if idx not in indices:
            indices.append(idx)
    return indices


def chm_corr_plus_classify(query: FeatureRecord, index: GalleryIndex, corr_source,
                           keypoints_by_image: Mapping[str, KeypointSet],
                           N: int = DEFAULT_SHORTLIST, k: int = 20,
                           exclude_self: bool = False,
                           strict: bool = False) -> tuple[Prediction, list[RerankResult]]:
    """Map-variant classifier with the query mask pinned to its annotated
    keypoints instead of CC binarization; L equals the keypoint patch count."""
    kps = keypoints_by_image.get(query.image_id)
    if kps is None:
        raise KeypointError(f"no keypoints for query {query.image_id}")
    g = query.patches.shape[0]
    selected = keypoint_patches(kps, g)
    if not selected:
        raise KeypointError(f"query {query.image_id} has zero visible keypoints")
    mask_vec = np.zeros(g * g, dtype=bool)
    mask_vec[selected] = True
    mask = PatchMask(selected=mask_vec, threshold=float("nan"))

    return _map_rerank(query, index, corr_source, lambda cand: mask, N, k,
                       len(selected), "chm_corr_plus", exclude_self, strict)
