"""Feature bank storage, gallery index, and dataset manifests.

The on-disk feature bank is a little-endian binary file:

    magic "CXFB" | version u32 | count u64 | d_g u32 | d_p u32 | g u32
    then per record:
        id_len u16 | id (UTF-8) | class_id u32 | d_g f32 | g*g*d_p f32

Global and patch embeddings are float32; patches are stored row-major with
row 0 at the top of the image. Manifests are tab-separated UTF-8 text with a
header line; groundtruth labels are comma-joined inside their field.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

BANK_MAGIC = b"CXFB"
BANK_VERSION = 1

# Paper-scale geometry: 2048-d global/patch embeddings on a 7x7 grid.
DEFAULT_GLOBAL_DIM = 2048
DEFAULT_PATCH_DIM = 2048
DEFAULT_GRID = 7

MANIFEST_FIELDS = ("image_id", "class_id", "groundtruth_labels", "excluded", "split", "source_path")
SPLITS = ("train", "validation", "test")


class BankFormatError(ValueError):
    """Raised for malformed feature-bank files."""


class RecordValidationError(ValueError):
    """Raised when a feature record violates its invariants."""


@dataclass(frozen=True)
class Dims:
    """Embedding geometry: global dim, patch dim, grid side length."""

    d_g: int = DEFAULT_GLOBAL_DIM
    d_p: int = DEFAULT_PATCH_DIM
    g: int = DEFAULT_GRID

    @property
    def patch_count(self) -> int:
        return self.g * self.g


@dataclass(frozen=True)
class FeatureRecord:
    """One image's identity, label, global embedding, and patch grid."""

    image_id: str
    class_id: int
    global_vec: np.ndarray  # (d_g,)
    patches: np.ndarray  # (g, g, d_p), row 0 = top of image

    def __post_init__(self):
        gv = np.asarray(self.global_vec, dtype=np.float32)
        pt = np.asarray(self.patches, dtype=np.float32)
        if gv.ndim != 1:
            raise RecordValidationError(f"{self.image_id}: global embedding must be 1-D")
        if pt.ndim != 3 or pt.shape[0] != pt.shape[1]:
            raise RecordValidationError(f"{self.image_id}: patches must have shape (g, g, d_p)")
        gv.setflags(write=False)
        pt.setflags(write=False)
        object.__setattr__(self, "global_vec", gv)
        object.__setattr__(self, "patches", pt)
        validate_record(self)

    @property
    def dims(self) -> Dims:
        return Dims(self.global_vec.shape[0], self.patches.shape[2], self.patches.shape[0])

    @property
    def patch_matrix(self) -> np.ndarray:
        """Patches flattened to (g*g, d_p), row-major over the grid."""
        g, _, d_p = self.patches.shape
        return self.patches.reshape(g * g, d_p)


def validate_record(record: FeatureRecord) -> None:
    """Check finiteness and nonzero norms; raises RecordValidationError.

    Zero-norm vectors are rejected here rather than at query time because
    cosine distance is undefined on them.
    """
    if not np.isfinite(record.global_vec).all():
        raise RecordValidationError(f"{record.image_id}: global embedding has non-finite entries")
    if float(np.linalg.norm(record.global_vec)) == 0.0:
        raise RecordValidationError(f"{record.image_id}: global embedding has zero norm")
    flat = record.patch_matrix
    if not np.isfinite(flat).all():
        bad = int(np.flatnonzero(~np.isfinite(flat).all(axis=1))[0])
        raise RecordValidationError(f"{record.image_id}: patch {bad} has non-finite entries")
    norms = np.linalg.norm(flat, axis=1)
    if (norms == 0.0).any():
        bad = int(np.flatnonzero(norms == 0.0)[0])
        raise RecordValidationError(f"{record.image_id}: patch {bad} has zero norm")


class GalleryIndex:
    """Immutable in-memory gallery of feature records.

    Exposes stacked, L2-normalized global embeddings for full-scan ranking.
    Safe to share across worker threads; nothing mutates after construction.
    """

    def __init__(self, records: Sequence[FeatureRecord], class_names: Mapping[int, str] | None = None,
                 dims: Dims | None = None):
        records = tuple(records)
        if records:
            inferred = records[0].dims
            dims = dims or inferred
        elif dims is None:
            dims = Dims()
        for r in records:
            if r.dims != dims:
                raise RecordValidationError(
                    f"{r.image_id}: dims {r.dims} do not match index dims {dims}")
        seen: set[str] = set()
        for r in records:
            if r.image_id in seen:
                raise RecordValidationError(f"duplicate image_id {r.image_id!r}")
            seen.add(r.image_id)
        class_ids = {r.class_id for r in records}
        if class_names is None:
            class_names = {c: f"class_{c}" for c in class_ids}
        else:
            missing = class_ids - set(class_names)
            if missing:
                raise RecordValidationError(f"class ids without names: {sorted(missing)}")
        self._records = records
        self._class_names = dict(class_names)
        self._dims = dims
        self._by_id = {r.image_id: i for i, r in enumerate(records)}
        if records:
            globals_mat = np.stack([r.global_vec for r in records]).astype(np.float32)
        else:
            globals_mat = np.zeros((0, dims.d_g), dtype=np.float32)
        self._globals = globals_mat
        self._globals.setflags(write=False)
        # norms kept in float64 so distance math runs at full precision over
        # the float32 storage
        self._global_norms = np.linalg.norm(globals_mat.astype(np.float64), axis=1)
        self._global_norms.setflags(write=False)
        self._ids = np.array([r.image_id for r in records])
        self._class_arr = np.array([r.class_id for r in records], dtype=np.int64)

    @property
    def records(self) -> tuple[FeatureRecord, ...]:
        return self._records

    @property
    def class_names(self) -> Mapping[int, str]:
        return dict(self._class_names)

    @property
    def dims(self) -> Dims:
        return self._dims

    @property
    def globals_matrix(self) -> np.ndarray:
        return self._globals

    @property
    def global_norms(self) -> np.ndarray:
        return self._global_norms

    @property
    def image_ids(self) -> np.ndarray:
        return self._ids

    @property
    def class_ids(self) -> np.ndarray:
        return self._class_arr

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, image_id: str) -> bool:
        return image_id in self._by_id

    def get(self, image_id: str) -> FeatureRecord | None:
        i = self._by_id.get(image_id)
        return None if i is None else self._records[i]

    def class_name(self, class_id: int) -> str:
        return self._class_names.get(class_id, f"class_{class_id}")


def write_feature_bank(records: Iterable[FeatureRecord], dims: Dims, path: str | Path) -> None:
    """Write records to a CXFB file. Byte-deterministic for equal input."""
    records = list(records)
    for r in records:
        if r.dims != dims:
            raise BankFormatError(f"{r.image_id}: dims {r.dims} do not match bank dims {dims}")
    with open(path, "wb") as fh:
        fh.write(BANK_MAGIC)
        fh.write(struct.pack("<IQIII", BANK_VERSION, len(records), dims.d_g, dims.d_p, dims.g))
        for r in records:
            raw_id = r.image_id.encode("utf-8")
            if len(raw_id) > 0xFFFF:
                raise BankFormatError(f"image_id too long: {r.image_id[:32]!r}...")
            fh.write(struct.pack("<H", len(raw_id)))
            fh.write(raw_id)
            fh.write(struct.pack("<I", r.class_id))
            fh.write(r.global_vec.astype("<f4").tobytes())
            fh.write(r.patches.astype("<f4").reshape(-1).tobytes())


def load_feature_bank(path: str | Path, class_names: Mapping[int, str] | None = None) -> GalleryIndex:
    """Load a CXFB file into an immutable GalleryIndex.

    Rejects truncated files, wrong magic, and records with non-finite or
    zero-norm vectors; it never silently repairs.
    """
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != BANK_MAGIC:
        found = data[:4] if len(data) >= 4 else data
        raise BankFormatError(f"bad magic: expected {BANK_MAGIC!r}, found {bytes(found)!r}")
    off = 4
    try:
        version, count, d_g, d_p, g = struct.unpack_from("<IQIII", data, off)
    except struct.error as exc:
        raise BankFormatError(f"truncated header: {exc}") from None
    off += struct.calcsize("<IQIII")
    if version != BANK_VERSION:
        raise BankFormatError(f"unsupported version {version} (expected {BANK_VERSION})")
    dims = Dims(d_g, d_p, g)
    vec_bytes = 4 * (d_g + g * g * d_p)
    records = []
    for n in range(count):
        if off + 2 > len(data):
            raise BankFormatError(f"truncated file at record {n} (id length)")
        (id_len,) = struct.unpack_from("<H", data, off)
        off += 2
        if off + id_len + 4 + vec_bytes > len(data):
            raise BankFormatError(f"truncated file at record {n}")
        image_id = data[off:off + id_len].decode("utf-8")
        off += id_len
        (class_id,) = struct.unpack_from("<I", data, off)
        off += 4
        flat = np.frombuffer(data, dtype="<f4", count=d_g + g * g * d_p, offset=off)
        off += vec_bytes
        records.append(FeatureRecord(
            image_id=image_id,
            class_id=class_id,
            global_vec=flat[:d_g].copy(),
            patches=flat[d_g:].reshape(g, g, d_p).copy(),
        ))
    if off != len(data):
        raise BankFormatError(f"{len(data) - off} trailing bytes after {count} records")
    return GalleryIndex(records, class_names=class_names, dims=dims)


@dataclass(frozen=True)
class ManifestEntry:
    image_id: str
    class_id: int
    groundtruth_labels: frozenset[int]
    excluded: bool = False
    split: str = "test"
    source_path: str | None = None

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(f"{self.image_id}: unknown split {self.split!r}")
        if not self.excluded and self.split == "test" and not self.groundtruth_labels:
            raise ValueError(f"{self.image_id}: non-excluded test entry needs groundtruth labels")


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[ManifestEntry, ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def active(self, split: str | None = None) -> tuple[ManifestEntry, ...]:
        """Non-excluded entries, optionally restricted to one split."""
        return tuple(e for e in self.entries
                     if not e.excluded and (split is None or e.split == split))


def write_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    lines = ["\t".join(MANIFEST_FIELDS)]
    for e in manifest.entries:
        labels = ",".join(str(c) for c in sorted(e.groundtruth_labels))
        lines.append("\t".join([
            e.image_id, str(e.class_id), labels, "1" if e.excluded else "0",
            e.split, e.source_path or "",
        ]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_manifest(path: str | Path) -> DatasetManifest:
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].split("\t") != list(MANIFEST_FIELDS):
        raise ValueError(f"{path}: expected header {' '.join(MANIFEST_FIELDS)}")
    entries = []
    for ln in lines[1:]:
        parts = ln.split("\t")
        if len(parts) != len(MANIFEST_FIELDS):
            raise ValueError(f"{path}: bad manifest row {ln!r}")
        image_id, class_id, labels, excluded, split, source = parts
        gt = frozenset(int(x) for x in labels.split(",") if x != "")
        entries.append(ManifestEntry(
            image_id=image_id,
            class_id=int(class_id),
            groundtruth_labels=gt,
            excluded=excluded == "1",
            split=split,
            source_path=source or None,
        ))
    return DatasetManifest(tuple(entries))


@dataclass
class ValidationReport:
    """Report-only manifest check against a gallery index."""

    unknown_class_ids: list[tuple[str, int]] = field(default_factory=list)
    duplicate_image_ids: list[str] = field(default_factory=list)
    split_counts: dict[str, int] = field(default_factory=dict)
    excluded_count: int = 0

    @property
    def issue_count(self) -> int:
        return len(self.unknown_class_ids) + len(self.duplicate_image_ids)


def validate_manifest(manifest: DatasetManifest, index: GalleryIndex) -> ValidationReport:
    report = ValidationReport()
    known_classes = set(index.class_names)
    seen: set[str] = set()
    for e in manifest.entries:
        if e.class_id not in known_classes:
            report.unknown_class_ids.append((e.image_id, e.class_id))
        if e.image_id in seen:
            report.duplicate_image_ids.append(e.image_id)
        seen.add(e.image_id)
        report.split_counts[e.split] = report.split_counts.get(e.split, 0) + 1
        if e.excluded:
            report.excluded_count += 1
    return report
