"""Batch feature extraction and correspondence export."""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .backbone import FeatureBackbone
from .formats import (load_manifest_rows, load_requests, write_correspondences,
                      write_feature_bank)


@dataclass
class ExtractionReport:
    written: int = 0
    skipped: list[tuple[str, str]] = field(default_factory=list)  # (image_id, reason)
    nudged: list[str] = field(default_factory=list)  # zero-norm vectors repaired

    def sidecar(self, backbone: FeatureBackbone) -> dict:
        return {
            "written": self.written,
            "skipped": self.skipped,
            "nudged_zero_norm": self.nudged,
            "backbone": {
                "weights": backbone.info.weights,
                "input_size": backbone.info.input_size,
                "resize_size": backbone.info.resize_size,
                "grid": backbone.info.grid,
                "dim": backbone.info.dim,
            },
            "created_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        }


def _ensure_nonzero(vec: np.ndarray, image_id: str, report: ExtractionReport) -> np.ndarray:
    # downstream loaders reject zero-norm vectors; an all-zero activation
    # (possible on degenerate inputs) gets a minimal nudge, reported aside
    flat = vec.reshape(-1, vec.shape[-1])
    norms = np.linalg.norm(flat, axis=1)
    if (norms == 0.0).any():
        flat = flat.copy()
        flat[norms == 0.0, 0] = 1e-6
        if image_id not in report.nudged:
            report.nudged.append(image_id)
        return flat.reshape(vec.shape)
    return vec


def extract_features(image_dir: str | Path, manifest_path: str | Path,
                     backbone: FeatureBackbone, out_path: str | Path,
                     batch_size: int = 8, split: str | None = None) -> ExtractionReport:
    """Run the backbone over every manifest image and write a feature bank.

    Unreadable images are skipped and listed in the sidecar next to the
    bank. Record order follows the manifest.
    """
    image_dir = Path(image_dir)
    rows = load_manifest_rows(manifest_path)
    if split is not None:
        rows = [r for r in rows if r.split == split]
    report = ExtractionReport()
    g = backbone.info.grid
    dim = backbone.info.dim

    def iter_records():
        batch: list[tuple[str, int, torch.Tensor]] = []

        def flush():
            if not batch:
                return
            tensors = torch.stack([t for _, _, t in batch])
            pooled, patches = backbone.extract(tensors)
            for (image_id, class_id, _), vec, grid in zip(batch, pooled, patches):
                yield (image_id, class_id,
                       _ensure_nonzero(vec, image_id, report),
                       _ensure_nonzero(grid, image_id, report))
            batch.clear()

        for row in rows:
            source = row.source_path or f"{row.image_id}.png"
            path = image_dir / source
            try:
                tensor = backbone.load_image(path)
            except OSError as exc:
                report.skipped.append((row.image_id, f"{type(exc).__name__}: {exc}"))
                continue
            batch.append((row.image_id, row.class_id, tensor))
            if len(batch) >= batch_size:
                yield from flush()
        yield from flush()

    report.written = write_feature_bank(iter_records(), dim, dim, g, out_path)
    sidecar = Path(out_path).with_suffix(Path(out_path).suffix + ".provenance.json")
    sidecar.write_text(json.dumps(report.sidecar(backbone), indent=2) + "\n",
                       encoding="utf-8")
    return report


def _patch_argmax_mapping(q_patches: np.ndarray, g_patches: np.ndarray) -> np.ndarray:
    """Best-cosine gallery cell for each query cell, as (row, col) pairs."""
    g = q_patches.shape[0]
    q = q_patches.reshape(g * g, -1).astype(np.float64)
    t = g_patches.reshape(g * g, -1).astype(np.float64)
    qn = q / np.linalg.norm(q, axis=1, keepdims=True)
    tn = t / np.linalg.norm(t, axis=1, keepdims=True)
    best = np.argmax(qn @ tn.T, axis=1)
    return np.stack([best // g, best % g], axis=1).astype(np.uint8)


def export_correspondences(request_path: str | Path, image_dir: str | Path,
                           backbone: FeatureBackbone, out_path: str | Path,
                           manifest_path: str | Path | None = None
                           ) -> ExtractionReport:
    """Produce a correspondence-map file for every requested image pair.

    Source keypoints are the grid-cell centers of the query; each maps to
    the gallery cell whose backbone embedding matches best. Pairs with
    unreadable images are omitted and listed.
    """
    image_dir = Path(image_dir)
    requests = load_requests(request_path)
    paths: dict[str, str] = {}
    if manifest_path is not None:
        for row in load_manifest_rows(manifest_path):
            if row.source_path:
                paths[row.image_id] = row.source_path
    report = ExtractionReport()
    g = backbone.info.grid
    cache: dict[str, np.ndarray | None] = {}

    def patches_of(image_id: str) -> np.ndarray | None:
        if image_id not in cache:
            source = paths.get(image_id, f"{image_id}.png")
            try:
                tensor = backbone.load_image(image_dir / source)
                _, grids = backbone.extract(tensor)
                cache[image_id] = _ensure_nonzero(grids[0], image_id, report)
            except OSError as exc:
                report.skipped.append((image_id, f"{type(exc).__name__}: {exc}"))
                cache[image_id] = None
        return cache[image_id]

    entries = []
    for query_id, gallery_id in requests:
        q = patches_of(query_id)
        t = patches_of(gallery_id)
        if q is None or t is None:
            continue
        entries.append((query_id, gallery_id, _patch_argmax_mapping(q, t)))
    report.written = write_correspondences(entries, g, out_path)
    sidecar = Path(out_path).with_suffix(Path(out_path).suffix + ".provenance.json")
    sidecar.write_text(json.dumps(report.sidecar(backbone), indent=2) + "\n",
                       encoding="utf-8")
    return report


def bank_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
