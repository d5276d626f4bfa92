"""Binary scene, proposal, instance and refinement files, and flat reports.

Every file starts with a four byte magic and a ``uint32`` format version,
followed by counts and little-endian arrays in a fixed order. Scene values are
stored as float32; the in-memory scene is float64, so a round trip is exact
for any scene whose values are float32-representable (synthetic scenes are
generated that way). All writes go to a temporary file that is then renamed
over the destination.
"""
from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .scene import (
    GroundTruth, OffsetField, PointCloud, Proposal, RefinedInstance, Scene, SemanticField,
    instance_centers,
)

VERSION = 1

SCENE_MAGIC = b"SGSC"
PROPOSALS_MAGIC = b"SGPR"
INSTANCES_MAGIC = b"SGIN"
REFINEMENT_MAGIC = b"SGRF"

HAS_COLORS = 1
HAS_SCORES = 2
HAS_OFFSETS = 4
HAS_GT = 8
# instance centers that are not the plain mean of their points
HAS_CENTERS = 16

_SCENE_HEADER = struct.Struct("<4sIQIII")
_LIST_HEADER = struct.Struct("<4sIQQ")


class FormatError(ValueError):
    """Malformed or unreadable file."""


def _atomic_write(path, chunks):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "wb") as f:
            for c in chunks:
                f.write(c)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _le(arr, dtype):
    return np.ascontiguousarray(arr, dtype=np.dtype(dtype).newbyteorder("<")).tobytes()


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.pos = 0
        self.path = path

    def header(self, fmt: struct.Struct, magic):
        if len(self.data) < 4 or self.data[:4] != magic:
            raise FormatError(f"{self.path}: bad magic {self.data[:4]!r}, expected {magic!r}")
        if len(self.data) < fmt.size:
            raise FormatError(f"{self.path}: truncated header")
        fields = fmt.unpack_from(self.data, 0)
        if fields[1] != VERSION:
            raise FormatError(f"{self.path}: format version {fields[1]} not supported (expected {VERSION})")
        self.pos = fmt.size
        return fields[2:]

    def take(self, section, dtype, count, shape=None):
        dtype = np.dtype(dtype).newbyteorder("<")
        nbytes = dtype.itemsize * count
        if self.pos + nbytes > len(self.data):
            raise FormatError(
                f"{self.path}: truncated payload in section '{section}' "
                f"(need {nbytes} bytes, {len(self.data) - self.pos} left)"
            )
        arr = np.frombuffer(self.data, dtype=dtype, count=count, offset=self.pos)
        self.pos += nbytes
        arr = arr.astype(dtype.newbyteorder("="))
        return arr.reshape(shape) if shape is not None else arr

    def finish(self):
        extra = len(self.data) - self.pos
        if extra:
            raise FormatError(f"{self.path}: count mismatch, {extra} bytes after the declared payload")


def _read_bytes(path):
    try:
        return Path(path).read_bytes()
    except FileNotFoundError:
        raise FileNotFoundError(f"no such file: {path}") from None


# ---------------------------------------------------------------------------
# scenes

def write_scene(scene: Scene, path) -> None:
    n = scene.n_points
    c = scene.n_classes
    gt = scene.gt
    k = gt.n_instances if gt is not None else 0
    flags = 0
    body = [_le(scene.points.coords, "f4")]
    if scene.points.colors is not None:
        flags |= HAS_COLORS
        body.append(_le(scene.points.colors, "f4"))
    if scene.semantic is not None:
        flags |= HAS_SCORES
        body.append(_le(scene.semantic.scores, "f4"))
    if scene.offsets is not None:
        flags |= HAS_OFFSETS
        body.append(_le(scene.offsets.offsets, "f4"))
    if gt is not None:
        flags |= HAS_GT
        body += [_le(gt.semantic_label, "i4"), _le(gt.instance_id, "i4"), _le(gt.instance_class, "i4")]
        coords32 = scene.points.coords.astype(np.float32).astype(np.float64)
        derived = instance_centers(coords32, gt.instance_id, k)
        if not np.array_equal(derived, gt.instance_center):
            flags |= HAS_CENTERS
            body.append(_le(gt.instance_center, "f8"))
    _atomic_write(path, [_SCENE_HEADER.pack(SCENE_MAGIC, VERSION, n, c, k, flags), *body])


def read_scene(path) -> Scene:
    r = _Reader(_read_bytes(path), path)
    n, c, k, flags = r.header(_SCENE_HEADER, SCENE_MAGIC)
    if flags & ~(HAS_COLORS | HAS_SCORES | HAS_OFFSETS | HAS_GT | HAS_CENTERS):
        raise FormatError(f"{path}: unknown section flags {flags:#x}")
    if (flags & HAS_SCORES) and c == 0:
        raise FormatError(f"{path}: count mismatch, semantic scores declared with C = 0")
    coords = r.take("coords", "f4", n * 3, (n, 3)).astype(np.float64)
    colors = r.take("colors", "f4", n * 3, (n, 3)).astype(np.float64) if flags & HAS_COLORS else None
    scores = r.take("semantic scores", "f4", n * c, (n, c)).astype(np.float64) if flags & HAS_SCORES else None
    offsets = r.take("offsets", "f4", n * 3, (n, 3)).astype(np.float64) if flags & HAS_OFFSETS else None
    gt = None
    if flags & HAS_GT:
        labels = r.take("semantic labels", "i4", n).astype(np.int64)
        ids = r.take("instance ids", "i4", n).astype(np.int64)
        classes = r.take("instance classes", "i4", k).astype(np.int64)
        if ids.size and (ids.max() >= k or ids.min() < -1):
            raise FormatError(f"{path}: count mismatch, instance id outside [-1, {k})")
        if flags & HAS_CENTERS:
            centers = r.take("instance centers", "f8", k * 3, (k, 3))
        else:
            centers = instance_centers(coords, ids, k)
        gt = GroundTruth(labels, ids, classes, centers)
    elif k:
        raise FormatError(f"{path}: count mismatch, {k} instances declared without ground truth")
    r.finish()
    return Scene(
        PointCloud(coords, colors),
        SemanticField(scores) if scores is not None else None,
        OffsetField(offsets) if offsets is not None else None,
        gt,
    )


def scenes_equal(a: Scene, b: Scene) -> bool:
    """Exact equality of every array in two scenes."""
    def same(x, y):
        if x is None or y is None:
            return x is None and y is None
        return x.dtype == y.dtype and np.array_equal(x, y)

    def part(s, name, attr):
        obj = getattr(s, name)
        return None if obj is None else getattr(obj, attr)

    pairs = [
        (a.points.coords, b.points.coords),
        (a.points.colors, b.points.colors),
        (part(a, "semantic", "scores"), part(b, "semantic", "scores")),
        (part(a, "offsets", "offsets"), part(b, "offsets", "offsets")),
    ]
    for attr in ("semantic_label", "instance_id", "instance_class", "instance_center"):
        pairs.append((part(a, "gt", attr), part(b, "gt", attr)))
    return all(same(x, y) for x, y in pairs)


# ---------------------------------------------------------------------------
# proposals, instances and external refinement records

def _ragged(arrays):
    lengths = np.array([a.size for a in arrays], dtype=np.int64)
    flat = np.concatenate(arrays) if arrays else np.zeros(0, dtype=np.int64)
    return lengths, flat


def _split(flat, lengths, path):
    if np.any(lengths < 0) or int(lengths.sum()) != flat.size:
        raise FormatError(f"{path}: count mismatch, record lengths do not add up to the payload")
    return np.split(flat, np.cumsum(lengths)[:-1]) if lengths.size else []


def write_proposals(proposals, path) -> None:
    lengths, ids = _ragged([p.point_ids for p in proposals])
    _atomic_write(path, [
        _LIST_HEADER.pack(PROPOSALS_MAGIC, VERSION, len(proposals), ids.size),
        _le([p.source_class for p in proposals], "i4"),
        _le(lengths, "i8"),
        _le(ids, "i8"),
    ])


def read_proposals(path) -> list[Proposal]:
    r = _Reader(_read_bytes(path), path)
    p, total = r.header(_LIST_HEADER, PROPOSALS_MAGIC)
    classes = r.take("source classes", "i4", p)
    lengths = r.take("lengths", "i8", p)
    ids = r.take("point ids", "i8", total)
    r.finish()
    return [Proposal(m, int(c)) for m, c in zip(_split(ids, lengths, path), classes)]


def write_instances(instances, path) -> None:
    lengths, ids = _ragged([inst.mask for inst in instances])
    boxes = np.array([np.concatenate(inst.box) for inst in instances], dtype=np.float64).reshape(-1, 6)
    _atomic_write(path, [
        _LIST_HEADER.pack(INSTANCES_MAGIC, VERSION, len(instances), ids.size),
        _le([inst.category for inst in instances], "i4"),
        _le([inst.class_score for inst in instances], "f8"),
        _le([inst.mask_score for inst in instances], "f8"),
        _le(boxes, "f8"),
        _le(lengths, "i8"),
        _le(ids, "i8"),
    ])


def read_instances(path) -> list[RefinedInstance]:
    r = _Reader(_read_bytes(path), path)
    p, total = r.header(_LIST_HEADER, INSTANCES_MAGIC)
    cats = r.take("categories", "i4", p)
    cls = r.take("class scores", "f8", p)
    msk = r.take("mask scores", "f8", p)
    boxes = r.take("boxes", "f8", p * 6, (p, 6))
    lengths = r.take("lengths", "i8", p)
    ids = r.take("mask point ids", "i8", total)
    r.finish()
    masks = _split(ids, lengths, path)
    return [
        RefinedInstance(masks[i], int(cats[i]), float(cls[i]), float(msk[i]), (boxes[i, :3], boxes[i, 3:]))
        for i in range(p)
    ]


def write_refinement(records, path) -> None:
    """Write ``(category, class_score, mask_score, mask_flags)`` records."""
    flags = [np.asarray(rec[3], dtype=bool).reshape(-1) for rec in records]
    lengths, flat = _ragged(flags)
    _atomic_write(path, [
        _LIST_HEADER.pack(REFINEMENT_MAGIC, VERSION, len(records), flat.size),
        _le([rec[0] for rec in records], "i4"),
        _le([rec[1] for rec in records], "f4"),
        _le([rec[2] for rec in records], "f4"),
        _le(lengths, "i8"),
        _le(flat, "u1"),
    ])


def read_refinement(path):
    r = _Reader(_read_bytes(path), path)
    p, total = r.header(_LIST_HEADER, REFINEMENT_MAGIC)
    cats = r.take("categories", "i4", p)
    cls = r.take("class scores", "f4", p).astype(np.float64)
    msk = r.take("mask scores", "f4", p).astype(np.float64)
    lengths = r.take("lengths", "i8", p)
    flat = r.take("mask flags", "u1", total)
    r.finish()
    if np.any(flat > 1):
        raise FormatError(f"{path}: mask flags must be 0 or 1")
    flags = _split(flat.astype(bool), lengths, path)
    return [(int(cats[i]), float(cls[i]), float(msk[i]), flags[i]) for i in range(p)]


# ---------------------------------------------------------------------------
# tabular outputs

def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def format_table(rows, header=None) -> str:
    lines = ["\t".join(header)] if header else []
    lines += ["\t".join(_cell(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def write_table(rows, path, header=None) -> None:
    _atomic_write(path, [format_table(rows, header).encode("utf-8")])


def read_table(path) -> list[list[str]]:
    text = Path(path).read_text(encoding="utf-8")
    return [line.split("\t") for line in text.splitlines()]


def report_rows(report) -> list[tuple[str, object]]:
    """Flat key/value rows of an :class:`~softgroup.evaluation.EvalReport`."""
    rows = list(report.flat().items())
    rows += [(f"note_{i}", n) for i, n in enumerate(report.notes)]
    return rows
