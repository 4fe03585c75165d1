"""Volume, atlas-table, score-table and manifest readers.

Two volume containers are understood:

* a minimal single-file NIfTI-1 subset (magic ``n+1\\0``, float32 or int16
  payload, optional gzip passthrough), and
* a raw container: ``<name>.vol`` holding a little-endian payload (float32 for
  intensity volumes, int32 for label volumes) next to a ``<name>.vol.json``
  sidecar ``{"dims": [nx, ny, nz], "spacing": [sx, sy, sz], "kind": ...}``.

All voxel data are kept flat in x-fastest order.
"""

from __future__ import annotations

import csv
import gzip
import json
import math
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .exceptions import (
    DimensionMismatch,
    EmptyRegion,
    GridMismatch,
    InvalidAtlasTable,
    InvalidManifest,
    MissingColumn,
    MissingOutcome,
    NonNumericCell,
    NotAVolume,
    UnsupportedDatatype,
)

OUTCOMES = (
    "CDRSB",
    "ADAS11",
    "ADAS13",
    "ADASQ4",
    "MMSE",
    "RAVLT_immediate",
    "RAVLT_learning",
    "RAVLT_perc_forgetting",
)

YEO_NETWORKS = (
    "Visual",
    "Somatomotor",
    "DorsalAttention",
    "VentralAttention",
    "Limbic",
    "Frontoparietal",
    "DefaultMode",
)

# Schaefer 2018 7-network abbreviations and common spellings.
_YEO_ALIASES = {
    "vis": "Visual",
    "visual": "Visual",
    "sommot": "Somatomotor",
    "somatomotor": "Somatomotor",
    "dorsattn": "DorsalAttention",
    "dorsalattention": "DorsalAttention",
    "salventattn": "VentralAttention",
    "ventattn": "VentralAttention",
    "ventralattention": "VentralAttention",
    "limbic": "Limbic",
    "cont": "Frontoparietal",
    "control": "Frontoparietal",
    "frontoparietal": "Frontoparietal",
    "default": "DefaultMode",
    "defaultmode": "DefaultMode",
}

GROUPS = ("CN", "MCI", "AD")
BACKGROUND_LABEL = 0

_KIND_DTYPES = {"intensity": np.dtype("<f4"), "label": np.dtype("<i4")}
_NIFTI_DTYPES = {16: np.dtype("f4"), 4: np.dtype("i2")}


@dataclass(eq=False)
class VoxelVolume:
    """A 3D scalar grid stored flat in x-fastest order."""

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    data: np.ndarray
    kind: str = "intensity"

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.spacing = tuple(float(s) for s in self.spacing)
        if len(self.dims) != 3 or any(d <= 0 for d in self.dims):
            raise NotAVolume(f"dims must be three positive integers, got {self.dims}")
        if self.kind not in _KIND_DTYPES:
            raise NotAVolume(f"unknown volume kind {self.kind!r}")
        data = np.asarray(self.data).reshape(-1)
        if data.size != math.prod(self.dims):
            raise DimensionMismatch(
                f"dims {self.dims} need {math.prod(self.dims)} voxels, payload has {data.size}"
            )
        if self.kind == "label":
            if not np.all(np.isfinite(data)) or np.any(data != np.round(data)):
                raise NotAVolume("label volume contains non-integer values")
            if np.any(data < 0):
                raise NotAVolume("label volume contains negative labels")
            data = data.astype(np.int64, copy=False)
        elif not np.all(np.isfinite(data)):
            raise NotAVolume("intensity volume contains non-finite values")
        self.data = data

    @property
    def shape(self):
        return self.dims

    def as_array(self) -> np.ndarray:
        """Return the data as an (nx, ny, nz) view."""
        return self.data.reshape(self.dims, order="F")


@dataclass(frozen=True)
class AtlasEntry:
    label_id: int
    region_name: str
    hemisphere: str
    yeo_network: str


@dataclass
class AtlasTable:
    entries: list[AtlasEntry]

    def __post_init__(self):
        ids = [e.label_id for e in self.entries]
        if not ids:
            raise InvalidAtlasTable("atlas table is empty")
        if sorted(ids) != list(range(1, len(ids) + 1)):
            raise InvalidAtlasTable("label ids must be unique and contiguous from 1")
        for e in self.entries:
            if e.yeo_network not in YEO_NETWORKS:
                raise InvalidAtlasTable(
                    f"label {e.label_id}: unknown network {e.yeo_network!r}"
                )
            if e.hemisphere not in ("L", "R"):
                raise InvalidAtlasTable(f"label {e.label_id}: hemisphere must be L or R")

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def label_ids(self) -> list[int]:
        return [e.label_id for e in self.entries]

    def entry(self, label_id: int) -> AtlasEntry:
        for e in self.entries:
            if e.label_id == label_id:
                return e
        raise KeyError(label_id)

    def network_of(self, label_id: int) -> str:
        return self.entry(label_id).yeo_network


@dataclass
class RoiSamples:
    region_id: int
    values: np.ndarray

    def __len__(self):
        return len(self.values)


@dataclass
class ManifestSubject:
    subject_id: str
    scan_path: Path
    group: str


@dataclass
class CohortManifest:
    subjects: list[ManifestSubject]
    scores_path: Path | None = None
    atlas_path: Path | None = None
    atlas_table_path: Path | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        ids = [s.subject_id for s in self.subjects]
        if len(set(ids)) != len(ids):
            raise InvalidManifest("subject ids must be unique")
        for s in self.subjects:
            if s.group not in GROUPS:
                raise InvalidManifest(f"subject {s.subject_id}: unknown group {s.group!r}")


def normalize_network(name: str) -> str:
    """Map a Yeo-7 network spelling (full or Schaefer abbreviation) to its canonical name."""
    key = re.sub(r"[^a-z]", "", name.lower())
    try:
        return _YEO_ALIASES[key]
    except KeyError:
        raise InvalidAtlasTable(f"unknown Yeo-7 network {name!r}") from None


def parse_schaefer_name(name: str) -> tuple[str, str]:
    """Return (hemisphere, network) from a label like ``7Networks_LH_Vis_1``."""
    parts = name.split("_")
    if len(parts) < 3 or parts[1] not in ("LH", "RH"):
        raise InvalidAtlasTable(f"not a Schaefer 7-network label: {name!r}")
    return parts[1][0], normalize_network(parts[2])


def atlas_table_from_schaefer_names(names: Sequence[str]) -> AtlasTable:
    entries = []
    for i, name in enumerate(names, start=1):
        hemi, net = parse_schaefer_name(name)
        entries.append(AtlasEntry(i, name, hemi, net))
    return AtlasTable(entries)


# ---------------------------------------------------------------------------
# volumes


def _sidecar_path(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def _open_maybe_gzip(path: Path) -> bytes:
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        return gzip.decompress(raw)
    return raw


def read_volume(path, expected_kind: str | None = None) -> VoxelVolume:
    """Read a raw ``.vol`` container or a NIfTI-1 file.

    ``expected_kind`` is required for NIfTI files (the header carries no
    intensity/label distinction) and is checked against the sidecar for raw
    containers.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    sidecar = _sidecar_path(path)
    if sidecar.exists():
        vol = _read_raw(path, sidecar)
        if expected_kind is not None and vol.kind != expected_kind:
            raise NotAVolume(f"{path}: expected a {expected_kind} volume, found {vol.kind}")
        return vol
    return _read_nifti(path, expected_kind or "intensity")


def _read_raw(path: Path, sidecar: Path) -> VoxelVolume:
    try:
        meta = json.loads(sidecar.read_text())
        dims = [int(d) for d in meta["dims"]]
        spacing = [float(s) for s in meta.get("spacing", (1.0, 1.0, 1.0))]
        kind = meta["kind"]
    except (ValueError, KeyError, TypeError) as exc:
        raise NotAVolume(f"{sidecar}: invalid sidecar ({exc})") from exc
    if kind not in _KIND_DTYPES or len(dims) != 3 or len(spacing) != 3:
        raise NotAVolume(f"{sidecar}: invalid sidecar contents")
    dtype = _KIND_DTYPES[kind]
    payload = _open_maybe_gzip(path)
    if len(payload) % dtype.itemsize:
        raise DimensionMismatch(f"{path}: payload is not a whole number of {dtype} values")
    data = np.frombuffer(payload, dtype=dtype)
    if data.size != math.prod(dims):
        raise DimensionMismatch(
            f"{path}: header declares {dims} ({math.prod(dims)} voxels), payload has {data.size}"
        )
    return VoxelVolume(tuple(dims), tuple(spacing), data.copy(), kind)


def write_volume(volume: VoxelVolume, path) -> Path:
    """Write ``volume`` as a raw container; returns the payload path."""
    path = Path(path)
    dtype = _KIND_DTYPES[volume.kind]
    path.write_bytes(np.asarray(volume.data, dtype=dtype).tobytes())
    meta = {"dims": list(volume.dims), "spacing": list(volume.spacing), "kind": volume.kind}
    _sidecar_path(path).write_text(json.dumps(meta))
    return path


def _read_nifti(path: Path, kind: str) -> VoxelVolume:
    raw = _open_maybe_gzip(path)
    if len(raw) < 348:
        raise NotAVolume(f"{path}: too short for a NIfTI-1 header")
    for endian in "<>":
        if struct.unpack(endian + "i", raw[:4])[0] == 348:
            break
    else:
        raise NotAVolume(f"{path}: sizeof_hdr is not 348")
    if raw[344:348] != b"n+1\x00":
        raise NotAVolume(f"{path}: magic is not 'n+1'")
    dim = struct.unpack(endian + "8h", raw[40:56])
    datatype = struct.unpack(endian + "h", raw[70:72])[0]
    pixdim = struct.unpack(endian + "8f", raw[76:108])
    vox_offset = int(struct.unpack(endian + "f", raw[108:112])[0])
    slope, inter = struct.unpack(endian + "2f", raw[112:120])
    if datatype not in _NIFTI_DTYPES:
        raise UnsupportedDatatype(f"{path}: NIfTI datatype {datatype} is not float32 or int16")
    ndim = dim[0]
    if not 1 <= ndim <= 7:
        raise NotAVolume(f"{path}: invalid dim[0]={ndim}")
    dims = [max(int(d), 1) for d in dim[1:4]]
    if ndim > 3 and any(d > 1 for d in dim[4 : ndim + 1]):
        raise DimensionMismatch(f"{path}: only 3D volumes are supported, dim={dim}")
    dtype = _NIFTI_DTYPES[datatype].newbyteorder(endian)
    n = math.prod(dims)
    payload = raw[max(vox_offset, 352) :]
    if len(payload) < n * dtype.itemsize:
        raise DimensionMismatch(
            f"{path}: header declares {dims}, payload has {len(payload) // dtype.itemsize} values"
        )
    data = np.frombuffer(payload[: n * dtype.itemsize], dtype=dtype)
    if slope != 0 and math.isfinite(slope) and (slope, inter) != (1.0, 0.0):
        data = data.astype(np.float64) * slope + inter
    else:
        data = data.astype(dtype.newbyteorder("="))
    spacing = tuple(abs(float(p)) or 1.0 for p in pixdim[1:4])
    return VoxelVolume(tuple(dims), spacing, data, kind)


def write_nifti(volume: VoxelVolume, path, datatype: int = 16) -> Path:
    """Write a minimal single-file little-endian NIfTI-1 volume."""
    if datatype not in _NIFTI_DTYPES:
        raise UnsupportedDatatype(f"cannot write NIfTI datatype {datatype}")
    dtype = _NIFTI_DTYPES[datatype].newbyteorder("<")
    hdr = bytearray(348)
    struct.pack_into("<i", hdr, 0, 348)
    struct.pack_into("<8h", hdr, 40, 3, *volume.dims, 1, 1, 1, 1)
    struct.pack_into("<2h", hdr, 70, datatype, dtype.itemsize * 8)
    struct.pack_into("<8f", hdr, 76, 1.0, *volume.spacing, 1.0, 1.0, 1.0, 1.0)
    struct.pack_into("<f", hdr, 108, 352.0)
    struct.pack_into("<2f", hdr, 112, 0.0, 0.0)
    hdr[344:348] = b"n+1\x00"
    path = Path(path)
    path.write_bytes(bytes(hdr) + b"\x00" * 4 + np.asarray(volume.data, dtype=dtype).tobytes())
    return path


# ---------------------------------------------------------------------------
# regions


def extract_roi_samples(scan: VoxelVolume, atlas: VoxelVolume, table: AtlasTable) -> list[RoiSamples]:
    """Split scan intensities by atlas label, one entry per table row.

    Background (label 0) is discarded; values within a region keep ascending
    flat-index order.
    """
    if scan.dims != atlas.dims:
        raise GridMismatch(f"scan dims {scan.dims} differ from atlas dims {atlas.dims}")
    if scan.kind != "intensity" or atlas.kind != "label":
        raise GridMismatch("expected an intensity scan and a label atlas")
    labels = atlas.data
    order = np.argsort(labels, kind="stable")
    sorted_labels = labels[order]
    values = np.asarray(scan.data, dtype=np.float64)
    out = []
    for entry in table:
        lo, hi = np.searchsorted(sorted_labels, [entry.label_id, entry.label_id + 1])
        if hi == lo:
            raise EmptyRegion(entry.label_id)
        out.append(RoiSamples(entry.label_id, values[order[lo:hi]]))
    return out


# ---------------------------------------------------------------------------
# tables


def read_atlas_table(path) -> AtlasTable:
    """Read a TSV with columns label_id, region_name, hemisphere, yeo_network."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        required = {"label_id", "region_name", "hemisphere", "yeo_network"}
        missing = required - set(reader.fieldnames or ())
        if missing:
            raise MissingColumn(f"{path}: missing column(s) {sorted(missing)}")
        entries = []
        for row in reader:
            try:
                label = int(row["label_id"])
            except ValueError:
                raise NonNumericCell(f"{path}: label_id {row['label_id']!r}") from None
            entries.append(
                AtlasEntry(
                    label,
                    row["region_name"],
                    row["hemisphere"].strip().upper()[:1],
                    normalize_network(row["yeo_network"]),
                )
            )
    entries.sort(key=lambda e: e.label_id)
    return AtlasTable(entries)


def write_atlas_table(table: AtlasTable, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(["label_id", "region_name", "hemisphere", "yeo_network"])
        for e in table:
            writer.writerow([e.label_id, e.region_name, e.hemisphere, e.yeo_network])


def read_scores(path, outcomes: Sequence[str] = OUTCOMES, on_missing: str = "raise") -> dict[str, np.ndarray]:
    """Read the outcome CSV into ``{subject_id: vector of outcomes}``.

    Rows with a blank or NaN outcome raise :class:`MissingOutcome` unless
    ``on_missing="drop"``, in which case they are skipped.
    """
    if on_missing not in ("raise", "drop"):
        raise ValueError("on_missing must be 'raise' or 'drop'")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in ("subject_id", *outcomes) if c not in header]
        if missing:
            raise MissingColumn(f"{path}: missing column(s) {missing}")
        scores = {}
        for row in reader:
            sid = row["subject_id"].strip()
            vals, absent = [], []
            for col in outcomes:
                cell = (row[col] or "").strip()
                if cell == "":
                    absent.append(col)
                    continue
                try:
                    v = float(cell)
                except ValueError:
                    raise NonNumericCell(f"{path}: subject {sid}, {col}={cell!r}") from None
                if math.isnan(v):
                    absent.append(col)
                elif not math.isfinite(v):
                    raise NonNumericCell(f"{path}: subject {sid}, {col}={cell!r}")
                vals.append(v)
            if absent:
                if on_missing == "raise":
                    raise MissingOutcome(sid, absent)
                continue
            scores[sid] = np.array(vals)
    return scores


def write_scores(scores: dict, path, outcomes: Sequence[str] = OUTCOMES) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["subject_id", *outcomes])
        for sid, vals in scores.items():
            writer.writerow([sid, *(repr(float(v)) for v in vals)])


def read_manifest(path) -> CohortManifest:
    """Read a JSON cohort manifest; relative paths resolve against its directory."""
    path = Path(path)
    try:
        meta = json.loads(path.read_text())
        base = path.parent

        def resolve(p):
            return None if p is None else (base / p)

        subjects = [
            ManifestSubject(str(s["subject_id"]), resolve(s["scan_path"]), s["group"])
            for s in meta["subjects"]
        ]
    except (ValueError, KeyError, TypeError) as exc:
        raise InvalidManifest(f"{path}: {exc}") from exc
    known = {"subjects", "scores_path", "atlas_path", "atlas_table_path"}
    return CohortManifest(
        subjects,
        resolve(meta.get("scores_path")),
        resolve(meta.get("atlas_path")),
        resolve(meta.get("atlas_table_path")),
        {k: v for k, v in meta.items() if k not in known},
    )


def write_manifest(manifest: CohortManifest, path) -> None:
    path = Path(path)
    base = path.parent

    def rel(p):
        if p is None:
            return None
        p = Path(p)
        try:
            return str(p.relative_to(base))
        except ValueError:
            return str(p)

    meta = {
        "subjects": [
            {"subject_id": s.subject_id, "scan_path": rel(s.scan_path), "group": s.group}
            for s in manifest.subjects
        ],
        "scores_path": rel(manifest.scores_path),
        "atlas_path": rel(manifest.atlas_path),
        "atlas_table_path": rel(manifest.atlas_table_path),
        **manifest.extra,
    }
    path.write_text(json.dumps(meta, indent=2))


def stack_scores(scores: dict, subject_ids: Iterable[str]) -> np.ndarray:
    """Rows of the score table in ``subject_ids`` order."""
    rows = []
    for sid in subject_ids:
        if sid not in scores:
            raise MissingOutcome(sid, ["<no row>"])
        rows.append(scores[sid])
    return np.vstack(rows)
