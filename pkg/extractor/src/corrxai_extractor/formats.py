"""Wire formats shared with the classification engine.

The extractor is coupled to the engine only through these files, so the
writers and readers here are self-contained (no engine import):

Feature bank (CXFB): magic "CXFB", version u32=1, count u64, d_g u32,
d_p u32, g u32; per record: id_len u16 + UTF-8 id, class_id u32, d_g f32
globals, g*g*d_p f32 patches. Little-endian throughout.

Correspondence maps (CXCM): magic "CXCM", version u32=1, g u32, count u64;
per entry: query id (u16 len + UTF-8), gallery id (u16 len + UTF-8),
g*g pairs of (row u8, col u8).

Manifests and rerank-request files are tab-separated UTF-8 with headers.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

BANK_MAGIC = b"CXFB"
BANK_VERSION = 1
CORR_MAGIC = b"CXCM"
CORR_VERSION = 1

MANIFEST_FIELDS = ("image_id", "class_id", "groundtruth_labels", "excluded",
                   "split", "source_path")
REQUEST_FIELDS = ("query_id", "gallery_id")


@dataclass(frozen=True)
class ManifestRow:
    image_id: str
    class_id: int
    split: str
    excluded: bool
    source_path: str | None


def load_manifest_rows(path: str | Path) -> list[ManifestRow]:
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines()
             if ln.strip()]
    if not lines or lines[0].split("\t") != list(MANIFEST_FIELDS):
        raise ValueError(f"{path}: expected header {' '.join(MANIFEST_FIELDS)}")
    rows = []
    for ln in lines[1:]:
        image_id, class_id, _labels, excluded, split, source = ln.split("\t")
        rows.append(ManifestRow(image_id=image_id, class_id=int(class_id),
                                split=split, excluded=excluded == "1",
                                source_path=source or None))
    return rows


def load_requests(path: str | Path) -> list[tuple[str, str]]:
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines()
             if ln.strip()]
    if not lines or lines[0].split("\t") != list(REQUEST_FIELDS):
        raise ValueError(f"{path}: expected header {' '.join(REQUEST_FIELDS)}")
    return [tuple(ln.split("\t")) for ln in lines[1:]]


def write_feature_bank(records: Iterable[tuple[str, int, np.ndarray, np.ndarray]],
                       d_g: int, d_p: int, g: int, path: str | Path) -> int:
    """records: (image_id, class_id, global (d_g,), patches (g, g, d_p))."""
    tmp = Path(path).with_suffix(".tmp")
    count = 0
    body = bytearray()
    for image_id, class_id, global_vec, patches in records:
        if global_vec.shape != (d_g,) or patches.shape != (g, g, d_p):
            raise ValueError(f"{image_id}: shape mismatch "
                             f"{global_vec.shape}/{patches.shape}")
        raw = image_id.encode("utf-8")
        body += struct.pack("<H", len(raw)) + raw
        body += struct.pack("<I", class_id)
        body += np.ascontiguousarray(global_vec, dtype="<f4").tobytes()
        body += np.ascontiguousarray(patches, dtype="<f4").reshape(-1).tobytes()
        count += 1
    with open(tmp, "wb") as fh:
        fh.write(BANK_MAGIC)
        fh.write(struct.pack("<IQIII", BANK_VERSION, count, d_g, d_p, g))
        fh.write(bytes(body))
    tmp.replace(path)
    return count


def write_correspondences(entries: Sequence[tuple[str, str, np.ndarray]],
                          g: int, path: str | Path) -> int:
    """entries: (query_id, gallery_id, mapping (g*g, 2) of row/col)."""
    tmp = Path(path).with_suffix(".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CORR_MAGIC)
        fh.write(struct.pack("<IIQ", CORR_VERSION, g, len(entries)))
        for query_id, gallery_id, mapping in entries:
            if mapping.shape != (g * g, 2):
                raise ValueError(f"{query_id}->{gallery_id}: mapping shape "
                                 f"{mapping.shape}, expected {(g * g, 2)}")
            if mapping.min() < 0 or mapping.max() >= g:
                raise ValueError(f"{query_id}->{gallery_id}: mapping outside grid")
            for raw in (query_id.encode("utf-8"), gallery_id.encode("utf-8")):
                fh.write(struct.pack("<H", len(raw)))
                fh.write(raw)
            fh.write(np.ascontiguousarray(mapping, dtype=np.uint8).tobytes())
    tmp.replace(path)
    return len(entries)
