"""Hair file formats.

Readers never return a partial StrandSet: any structural problem raises a
typed error carrying the byte offset (binary formats) or 1-based line
number (text formats). Writers are atomic (temp file + rename) and emit a
canonical form, so write(read(f)) is byte-identical for files this module
produced.

Formats:

* HAIR - the binary format of the Cem Yuksel hair model collection.
  128-byte little-endian header: magic "HAIR", u32 strand count, u32 total
  point count, u32 flags (bit0 segments array, bit1 points, bit2 thickness,
  bit3 transparency, bit4 colors), u32 default segment count, f32 default
  thickness, f32 default transparency, 3xf32 default color, 88-byte info
  string. Arrays follow in bit order; segments are u16 per strand, points/
  thickness/transparency/colors are f32 per point.
* USC - headerless binary: u32 strand count, then per strand a u32 point
  count and that many xyz f32 triples. No unit convention; callers must
  supply the mm-per-unit scale.
* native - line-oriented text (canonical extension .strands):
      strands <N> unit_mm <S>
      strand <id> <J> <mask_logit> <opacity_logit> <r> <g> <b>
      <x> <y> <z> [<thickness>]     (J lines)
      ...
      end
  The trailing "end" line (with newline) is mandatory, which makes every
  truncation detectable. Numbers are written with 9 significant digits,
  enough to round-trip f32 exactly.
* oriented cloud - text, one "x y z dx dy dz" sample per line.
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

from .core import (DEFAULT_THICKNESS, SEGMENT_EPS, OrientedPointCloud, Strand,
                   StrandSet, logit, sigmoid)
from .errors import BadMagic, FlagMismatch, ParseError, TruncatedFile

_HAIR_HEADER = struct.Struct("<4sIIIIff3f88s")

HAIR_HAS_SEGMENTS = 1
HAIR_HAS_POINTS = 2
HAIR_HAS_THICKNESS = 4
HAIR_HAS_TRANSPARENCY = 8
HAIR_HAS_COLOR = 16


def _atomic_write(path, data: bytes) -> None:
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Cursor:
    """Bounds-checked reader over a byte buffer."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFile(
                f"file ends inside {what}: need {n} more bytes", position=self.pos)
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def array(self, dtype, count: int, what: str) -> np.ndarray:
        raw = self.take(int(count) * np.dtype(dtype).itemsize, what)
        return np.frombuffer(raw, dtype=dtype).copy()


def _build_strand(sid: int, joints: np.ndarray, thickness: np.ndarray,
                  **attrs) -> Strand | None:
    """Strand or None when degenerate (after merging coincident joints)."""
    keep_j = [joints[0]]
    keep_t = []
    for k in range(1, len(joints)):
        if np.linalg.norm(joints[k] - keep_j[-1]) > SEGMENT_EPS:
            keep_j.append(joints[k])
            keep_t.append(thickness[k - 1])
    if len(keep_j) < 2:
        return None
    return Strand(id=sid, joints=np.array(keep_j), thickness=np.array(keep_t), **attrs)


# ---------------------------------------------------------------------------
# HAIR
# ---------------------------------------------------------------------------

def read_hair(path, unit_scale: float = 1.0) -> StrandSet:
    with open(path, "rb") as fh:
        data = fh.read()
    cur = _Cursor(data)
    header = cur.take(_HAIR_HEADER.size, "128-byte header")
    (magic, n_strands, n_points, flags, default_segments, default_thickness,
     default_transparency, dr, dg, db, _info) = _HAIR_HEADER.unpack(header)
    if magic != b"HAIR":
        raise BadMagic(f"expected magic b'HAIR', got {magic!r}", position=0)
    if not flags & HAIR_HAS_POINTS:
        raise FlagMismatch("points array flag (bit1) must be set", position=12)

    if flags & HAIR_HAS_SEGMENTS:
        segments = cur.array(np.uint16, n_strands, "segments array").astype(np.int64)
    else:
        segments = np.full(n_strands, default_segments, dtype=np.int64)
    points_per_strand = segments + 1
    if int(points_per_strand.sum()) != n_points:
        raise FlagMismatch(
            f"segment counts imply {int(points_per_strand.sum())} points, "
            f"header says {n_points}", position=8)
    points = cur.array(np.float32, 3 * n_points, "points array").reshape(-1, 3)
    if flags & HAIR_HAS_THICKNESS:
        thickness = cur.array(np.float32, n_points, "thickness array")
    else:
        thickness = np.full(n_points, default_thickness, dtype=np.float32)
    if flags & HAIR_HAS_TRANSPARENCY:
        transparency = cur.array(np.float32, n_points, "transparency array")
    else:
        transparency = np.full(n_points, default_transparency, dtype=np.float32)
    if flags & HAIR_HAS_COLOR:
        colors = cur.array(np.float32, 3 * n_points, "color array").reshape(-1, 3)
    else:
        colors = np.tile(np.array([dr, dg, db], dtype=np.float32), (n_points, 1))

    strands = []
    at = 0
    for sid, m in enumerate(points_per_strand):
        j = points[at:at + m].astype(float) * unit_scale
        th = np.maximum(thickness[at:at + m - 1].astype(float), SEGMENT_EPS)
        s = _build_strand(sid, j, th,
                          opacity_logit=logit(1.0 - float(transparency[at])),
                          mask_logit=4.0,
                          color=colors[at].astype(float))
        if s is not None:
            strands.append(s)
        at += m
    return StrandSet(tuple(strands))


def write_hair(path, strand_set: StrandSet, unit_scale: float = 1.0) -> None:
    """Canonical HAIR file: all arrays present, per-point attributes constant
    within a strand."""
    segments = np.array([s.num_joints - 1 for s in strand_set], dtype=np.uint64)
    if np.any(segments > 0xFFFF):
        raise ValueError("HAIR format caps segments per strand at 65535")
    n_points = int((segments + 1).sum())
    flags = (HAIR_HAS_SEGMENTS | HAIR_HAS_POINTS | HAIR_HAS_THICKNESS
             | HAIR_HAS_TRANSPARENCY | HAIR_HAS_COLOR)
    header = _HAIR_HEADER.pack(
        b"HAIR", len(strand_set.strands), n_points, flags, 0,
        DEFAULT_THICKNESS, 0.5, 0.35, 0.22, 0.12,
        b"strandkit".ljust(88, b"\0"))
    chunks = [header, segments.astype("<u2").tobytes()]
    pts, thick, transp, cols = [], [], [], []
    for s in strand_set:
        pts.append((s.joints / unit_scale).astype("<f4"))
        thick.append(np.concatenate([s.thickness, s.thickness[-1:]]).astype("<f4"))
        transp.append(np.full(s.num_joints, 1.0 - sigmoid(s.opacity_logit), dtype="<f4"))
        cols.append(np.tile(s.color.astype("<f4"), (s.num_joints, 1)))
    for arrs in (pts, thick, transp, cols):
        if arrs:
            chunks.append(np.concatenate(arrs).tobytes())
    _atomic_write(path, b"".join(chunks))


# ---------------------------------------------------------------------------
# USC
# ---------------------------------------------------------------------------

def read_usc(path, unit_scale: float) -> tuple[StrandSet, int]:
    """USC-HairSalon .data file. Returns (set, dropped strand count);
    strands with fewer than 2 points are dropped."""
    with open(path, "rb") as fh:
        data = fh.read()
    cur = _Cursor(data)
    (n_strands,) = struct.unpack("<I", cur.take(4, "strand count"))
    strands = []
    dropped = 0
    for sid in range(n_strands):
        (m,) = struct.unpack("<I", cur.take(4, f"point count of strand {sid}"))
        pts = cur.array(np.float32, 3 * m, f"points of strand {sid}").reshape(-1, 3)
        if m < 2:
            dropped += 1
            continue
        s = _build_strand(sid, pts.astype(float) * unit_scale,
                          np.full(m - 1, DEFAULT_THICKNESS))
        if s is None:
            dropped += 1
        else:
            strands.append(s)
    return StrandSet(tuple(strands)), dropped


# ---------------------------------------------------------------------------
# native text format
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return f"{x:.9g}"


def write_native(path, strand_set: StrandSet) -> None:
    lines = [f"strands {len(strand_set.strands)} unit_mm {_fmt(strand_set.unit_scale)}"]
    for s in strand_set:
        lines.append(
            f"strand {s.id} {s.num_joints} {_fmt(s.mask_logit)} {_fmt(s.opacity_logit)} "
            f"{_fmt(s.color[0])} {_fmt(s.color[1])} {_fmt(s.color[2])}")
        for k in range(s.num_joints):
            xyz = " ".join(_fmt(c) for c in s.joints[k])
            if k < s.num_joints - 1:
                lines.append(f"{xyz} {_fmt(s.thickness[k])}")
            else:
                lines.append(xyz)
    lines.append("end")
    _atomic_write(path, ("\n".join(lines) + "\n").encode("ascii"))


class _Lines:
    def __init__(self, text: str):
        self.lines = text.split("\n")
        self.num = 0

    def next(self, what: str) -> str:
        # the final newline puts one empty string at the end of the split;
        # running past it means the file stopped early
        if self.num >= len(self.lines) - 1:
            raise ParseError(f"file ends where {what} was expected",
                             position=self.num + 1)
        self.num += 1
        return self.lines[self.num - 1]

    def error(self, msg: str) -> ParseError:
        return ParseError(msg, position=self.num)


def _floats(parts, n, lines, what):
    try:
        vals = [float(p) for p in parts]
    except ValueError:
        raise lines.error(f"bad number in {what}: {' '.join(parts)!r}") from None
    if len(vals) != n:
        raise lines.error(f"{what}: expected {n} fields, got {len(vals)}")
    return vals


def read_native(path) -> StrandSet:
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        text = raw.decode("ascii")
    except UnicodeDecodeError as e:
        raise ParseError("native files are ASCII", position=1) from e
    if not text.endswith("\n"):
        raise ParseError("missing final newline", position=text.count("\n") + 1)
    lines = _Lines(text)
    head = lines.next("header").split()
    if len(head) != 4 or head[0] != "strands" or head[2] != "unit_mm":
        raise lines.error("header must be 'strands <N> unit_mm <S>'")
    try:
        n_strands = int(head[1])
        unit = float(head[3])
    except ValueError:
        raise lines.error("bad header numbers") from None
    strands = []
    for _ in range(n_strands):
        parts = lines.next("a strand header").split()
        if len(parts) != 8 or parts[0] != "strand":
            raise lines.error("strand header must be "
                              "'strand <id> <J> <m> <a> <r> <g> <b>'")
        try:
            sid, n_joints = int(parts[1]), int(parts[2])
        except ValueError:
            raise lines.error("bad strand id or joint count") from None
        if n_joints < 2:
            raise lines.error(f"strand {sid} declares {n_joints} joints, need >= 2")
        m, a, r, g, b = _floats(parts[3:], 5, lines, "strand attributes")
        joints = np.empty((n_joints, 3))
        thickness = np.full(n_joints - 1, DEFAULT_THICKNESS)
        for k in range(n_joints):
            parts = lines.next(f"joint {k} of strand {sid}").split()
            if len(parts) not in (3, 4):
                raise lines.error("joint line must be '<x> <y> <z> [<thickness>]'")
            vals = _floats(parts, len(parts), lines, "joint line")
            joints[k] = vals[:3]
            if len(vals) == 4 and k < n_joints - 1:
                thickness[k] = vals[3]
        strands.append(Strand(id=sid, joints=joints, thickness=thickness,
                              mask_logit=m, opacity_logit=a, color=np.array([r, g, b])))
    if lines.next("the 'end' terminator") != "end":
        raise lines.error("expected 'end' terminator")
    if lines.num != len(lines.lines) - 1:
        raise ParseError("trailing data after 'end'", position=lines.num + 1)
    try:
        return StrandSet(tuple(strands), unit)
    except Exception as e:
        raise ParseError(f"invalid strand set: {e}", position=lines.num) from None


# ---------------------------------------------------------------------------
# oriented point clouds
# ---------------------------------------------------------------------------

def write_oriented_cloud(path, cloud: OrientedPointCloud) -> None:
    lines = []
    for p, d in zip(cloud.points, cloud.directions):
        lines.append(" ".join(_fmt(v) for v in (*p, *d)))
    _atomic_write(path, ("\n".join(lines) + "\n").encode("ascii") if lines else b"")


def read_oriented_cloud(path) -> OrientedPointCloud:
    points, dirs = [], []
    with open(path, "r", encoding="ascii") as fh:
        for num, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 6:
                raise ParseError(f"expected 'x y z dx dy dz', got {len(parts)} fields",
                                 position=num)
            try:
                vals = [float(p) for p in parts]
            except ValueError:
                raise ParseError(f"bad number: {line.strip()!r}", position=num) from None
            d = np.array(vals[3:])
            n = np.linalg.norm(d)
            if n <= 1e-12:
                raise ParseError("zero direction", position=num)
            points.append(vals[:3])
            dirs.append(d / n)
    return OrientedPointCloud(np.array(points).reshape(-1, 3),
                              np.array(dirs).reshape(-1, 3))
