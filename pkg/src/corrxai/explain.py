"""User-facing explanation payloads and their canonical wire document.

An explanation shows at most five support images from the predicted class,
each optionally annotated with the patch pairs that drove re-ranking. Box
positions are grid cells, not pixels, so any renderer can scale them to its
display resolution.

The wire document is single-line JSON with a fixed key order and 6-decimal
score formatting, so serialize(parse(serialize(x))) is byte-identical:

    {"query_id": ..., "method": ..., "label": ..., "label_name": ...,
     "confidence_percent": ..., "grid": ...,
     "supports": [{"image_id": ..., "rank": ..., "boxes": [
         {"q": [r, c], "s": [r, c], "score": ...}, ...]}, ...]}

Support entries carry a "boxes" key only when boxes are shown; the
box-free ablation of a document differs from its annotated form only by
the absence of that key.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping, Sequence

from .knn import Prediction
from .rerank import RerankResult

MAX_SUPPORTS = 5


@dataclass(frozen=True)
class BoxPair:
    query_patch: tuple[int, int]  # (row, col)
    support_patch: tuple[int, int]
    score: float  # flow or cosine similarity


@dataclass(frozen=True)
class SupportImage:
    image_id: str
    rank: int  # rank within the predicted class, 0-based
    boxes: tuple[BoxPair, ...] = ()


@dataclass(frozen=True)
class ExplanationRecord:
    query_id: str
    method: str
    label: int
    label_name: str
    confidence_percent: int
    grid: int
    supports: tuple[SupportImage, ...]
    show_boxes: bool


def build_explanation(prediction: Prediction, rerank: Sequence[RerankResult] | None = None,
                      hide_boxes: bool = False, query_id: str = "",
                      class_names: Mapping[int, str] | None = None,
                      grid: int = 7) -> ExplanationRecord:
    """Assemble the explanation for a prediction.

    Supports are the first five predicted-class members of the (re-)ranked
    top-k; when the class has fewer than five members there, only those are
    shown. Boxes come from the candidate's re-rank pairs unless hidden (the
    box-free ablation) or the method carries no patch evidence (plain kNN).
    """
    if not prediction.support:
        raise ValueError("prediction has no support neighbors")
    by_id = {r.candidate_id: r for r in rerank} if rerank else {}
    show_boxes = not hide_boxes and prediction.method != "knn" and bool(by_id)
    supports = []
    for neighbor in prediction.support:
        if neighbor.class_id != prediction.label:
            continue
        boxes: tuple[BoxPair, ...] = ()
        if show_boxes:
            result = by_id.get(neighbor.image_id)
            if result is not None:
                boxes = tuple(
                    BoxPair(query_patch=(p.i // grid, p.i % grid),
                            support_patch=(p.j // grid, p.j % grid),
                            score=p.value)
                    for p in result.pairs)
        supports.append(SupportImage(image_id=neighbor.image_id,
                                     rank=len(supports), boxes=boxes))
        if len(supports) == MAX_SUPPORTS:
            break
    name = class_names.get(prediction.label) if class_names else None
    return ExplanationRecord(
        query_id=query_id,
        method=prediction.method,
        label=prediction.label,
        label_name=name if name is not None else f"class_{prediction.label}",
        confidence_percent=round(100 * prediction.confidence_count / prediction.k),
        grid=grid,
        supports=tuple(supports),
        show_boxes=show_boxes,
    )


def _quote(s: str) -> str:
    return json.dumps(s, ensure_ascii=False)


def serialize_explanation(record: ExplanationRecord) -> str:
    """Canonical single-line document; ends with a newline."""
    parts = [
        f'"query_id": {_quote(record.query_id)}',
        f'"method": {_quote(record.method)}',
        f'"label": {record.label}',
        f'"label_name": {_quote(record.label_name)}',
        f'"confidence_percent": {record.confidence_percent}',
        f'"grid": {record.grid}',
    ]
    supports = []
    for s in record.supports:
        fields = [f'"image_id": {_quote(s.image_id)}', f'"rank": {s.rank}']
        if record.show_boxes:
            boxes = ", ".join(
                f'{{"q": [{b.query_patch[0]}, {b.query_patch[1]}], '
                f'"s": [{b.support_patch[0]}, {b.support_patch[1]}], '
                f'"score": {b.score:.6f}}}'
                for b in s.boxes)
            fields.append(f'"boxes": [{boxes}]')
        supports.append("{" + ", ".join(fields) + "}")
    parts.append(f'"supports": [{", ".join(supports)}]')
    return "{" + ", ".join(parts) + "}\n"


def parse_explanation(text: str) -> ExplanationRecord:
    doc = json.loads(text)
    supports = []
    show_boxes = any("boxes" in s for s in doc["supports"])
    for s in doc["supports"]:
        boxes = tuple(
            BoxPair(query_patch=(int(b["q"][0]), int(b["q"][1])),
                    support_patch=(int(b["s"][0]), int(b["s"][1])),
                    score=float(b["score"]))
            for b in s.get("boxes", ()))
        supports.append(SupportImage(image_id=s["image_id"], rank=int(s["rank"]), boxes=boxes))
    return ExplanationRecord(
        query_id=doc["query_id"],
        method=doc["method"],
        label=int(doc["label"]),
        label_name=doc["label_name"],
        confidence_percent=int(doc["confidence_percent"]),
        grid=int(doc["grid"]),
        supports=tuple(supports),
        show_boxes=show_boxes,
    )
