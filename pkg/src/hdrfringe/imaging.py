"""Pixel containers and the raster/point-cloud file formats shared by every stage.

Arrays are indexed ``[row, col]`` i.e. ``[v, u]``; stacks are ``[n, v, u]``.
Containers freeze their arrays on construction.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    DimensionMismatchError,
    ImageFormatError,
    InputNotFoundError,
    InsufficientSamplesError,
    OutputError,
)

PHASE_KINDS = ("wrapped", "unwrapped", "equivalent")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


def wrap_phase(phi):
    """Map phase into (-pi, pi]."""
    w = np.mod(np.asarray(phi, dtype=float) + np.pi, 2 * np.pi) - np.pi
    return np.where(w <= -np.pi, np.pi, w)


def round_half_away(x):
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


@dataclass(frozen=True, eq=False)
class FringeStack:
    """N phase-shifted fringe images of one period.

    ``samples`` is ``(N, height, width)``; uint8 for captured data, float for
    unquantized simulator output.
    """

    samples: np.ndarray
    shifts: np.ndarray
    period: float

    def __post_init__(self):
        samples = np.asarray(self.samples)
        shifts = np.asarray(self.shifts, dtype=float).ravel()
        if samples.ndim != 3:
            raise DimensionMismatchError(f"samples must be (N, H, W), got shape {samples.shape}")
        if samples.shape[0] != shifts.size:
            raise DimensionMismatchError(
                f"{samples.shape[0]} images but {shifts.size} shifts"
            )
        if shifts.size < 3:
            raise InsufficientSamplesError(f"insufficient samples: N={shifts.size} < 3")
        if not self.period > 0:
            raise ValueError(f"period must be positive, got {self.period}")
        object.__setattr__(self, "samples", _frozen(samples))
        object.__setattr__(self, "shifts", _frozen(shifts))
        object.__setattr__(self, "period", float(self.period))

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def height(self) -> int:
        return self.samples.shape[1]

    @property
    def width(self) -> int:
        return self.samples.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        return self.samples.shape[1:]


@dataclass(frozen=True, eq=False)
class SaturationMap:
    counts: np.ndarray
    steps: int

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 2:
            raise DimensionMismatchError("saturation map must be 2-D")
        if counts.size and (counts.min() < 0 or counts.max() > self.steps):
            raise ValueError(f"counts must lie in [0, {self.steps}]")
        object.__setattr__(self, "counts", _frozen(counts.astype(np.int32)))

    @property
    def shape(self) -> tuple[int, int]:
        return self.counts.shape


@dataclass(frozen=True, eq=False)
class IndexMap:
    flags: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "flags", _frozen(np.asarray(self.flags, dtype=bool)))

    @property
    def shape(self) -> tuple[int, int]:
        return self.flags.shape

    def count(self) -> int:
        return int(self.flags.sum())


@dataclass(frozen=True, eq=False)
class PhaseMap:
    """Per-pixel phase in radians; invalid pixels hold NaN."""

    values: np.ndarray
    valid: np.ndarray | None = None
    kind: str = "unwrapped"

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2:
            raise DimensionMismatchError("phase map must be 2-D")
        if self.kind not in PHASE_KINDS:
            raise ValueError(f"unknown phase kind {self.kind!r}")
        if self.valid is None:
            valid = np.isfinite(values)
        else:
            valid = np.asarray(self.valid, dtype=bool)
            if valid.shape != values.shape:
                raise DimensionMismatchError("valid mask shape differs from values")
            valid = valid & np.isfinite(values)
        values[~valid] = np.nan
        if self.kind == "wrapped":
            v = values[valid]
            if v.size and (v.min() <= -np.pi or v.max() > np.pi):
                raise ValueError("wrapped phase outside (-pi, pi]")
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "valid", _frozen(valid))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def valid_fraction(self) -> float:
        return float(self.valid.mean()) if self.valid.size else 0.0


@dataclass(frozen=True, eq=False)
class PointCloud:
    """3-D points in millimetres with the left-image pixel each came from."""

    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    provenance: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        prov = np.asarray(self.provenance, dtype=np.int64).reshape(-1, 2)
        if prov.shape[0] != pts.shape[0]:
            raise DimensionMismatchError("provenance length differs from point count")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud coordinates must be finite")
        object.__setattr__(self, "points", _frozen(pts))
        object.__setattr__(self, "provenance", _frozen(prov))

    def __len__(self) -> int:
        return self.points.shape[0]


# --- PGM (P5, maxval 255) -------------------------------------------------

_PGM_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n?)*([^\s#]+)")


def read_pgm(path) -> np.ndarray:
    path = Path(path)
    try:
        data = path.read_bytes()
    except FileNotFoundError as exc:
        raise InputNotFoundError(f"image not found: {path}") from exc
    except OSError as exc:
        raise ImageFormatError(f"unreadable file {path}: {exc}") from exc
    pos = 0
    tokens = []
    for _ in range(4):
        m = _PGM_TOKEN.match(data, pos)
        if m is None:
            raise ImageFormatError(f"{path}: truncated PGM header")
        tokens.append(m.group(1))
        pos = m.end()
    if tokens[0] != b"P5":
        raise ImageFormatError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise ImageFormatError(f"{path}: malformed PGM header") from exc
    if maxval != 255:
        raise ImageFormatError(f"{path}: only 8-bit PGM supported (maxval {maxval})")
    pos += 1  # single whitespace byte before the raster
    raster = data[pos : pos + width * height]
    if len(raster) != width * height:
        raise ImageFormatError(f"{path}: raster truncated")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width).copy()


def write_pgm(image: np.ndarray, path) -> None:
    img = np.asarray(image)
    if img.ndim != 2:
        raise DimensionMismatchError("PGM image must be 2-D")
    if img.dtype != np.uint8:
        if img.min() < 0 or img.max() > 255 or not np.all(img == np.round(img)):
            raise ImageFormatError("PGM payload must be integers in [0, 255]")
        img = img.astype(np.uint8)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    _write_bytes(path, header + np.ascontiguousarray(img).tobytes())


def read_image_stack(paths: Sequence, shifts: Sequence[float], period: float) -> FringeStack:
    if len(paths) != len(shifts):
        raise DimensionMismatchError(f"{len(paths)} files but {len(shifts)} shifts")
    if len(paths) < 3:
        raise InsufficientSamplesError(f"insufficient samples: N={len(paths)} < 3")
    images = [read_pgm(p) for p in paths]
    shape = images[0].shape
    for p, img in zip(paths, images):
        if img.shape != shape:
            raise DimensionMismatchError(
                f"dimension mismatch: {p} is {img.shape[1]}x{img.shape[0]}, "
                f"expected {shape[1]}x{shape[0]}"
            )
    return FringeStack(np.stack(images), shifts, period)


# --- PFM (Pf, little-endian, scale -1.0) -----------------------------------


def write_pfm(values: np.ndarray, path) -> None:
    arr = np.asarray(values, dtype=np.float32)
    if arr.ndim != 2:
        raise DimensionMismatchError("PFM raster must be 2-D")
    h, w = arr.shape
    header = f"Pf\n{w} {h}\n-1.0\n".encode("ascii")
    # PFM stores rows bottom-to-top
    payload = np.flipud(arr).astype("<f4").tobytes()
    _write_bytes(path, header + payload)


def read_pfm(path) -> np.ndarray:
    path = Path(path)
    try:
        data = path.read_bytes()
    except FileNotFoundError as exc:
        raise InputNotFoundError(f"phase map not found: {path}") from exc
    lines = data.split(b"\n", 3)
    if len(lines) < 4 or lines[0].strip() != b"Pf":
        raise ImageFormatError(f"{path}: not a single-channel PFM")
    try:
        w, h = (int(t) for t in lines[1].split())
        scale = float(lines[2])
    except ValueError as exc:
        raise ImageFormatError(f"{path}: malformed PFM header") from exc
    dtype = "<f4" if scale < 0 else ">f4"
    payload = lines[3]
    if len(payload) < 4 * w * h:
        raise ImageFormatError(f"{path}: raster truncated")
    arr = np.frombuffer(payload[: 4 * w * h], dtype=dtype).reshape(h, w)
    return np.flipud(arr).astype(np.float32)


def write_phase_map(pmap: PhaseMap, path) -> None:
    values = np.where(pmap.valid, pmap.values, np.nan)
    write_pfm(values, path)


def read_phase_map(path, kind: str = "unwrapped") -> PhaseMap:
    raw = read_pfm(path).astype(float)
    if kind == "wrapped":
        # float32(pi) exceeds pi; pull rounding overshoot back inside (-pi, pi]
        raw = np.minimum(raw, np.pi)
        raw = np.where(raw <= -np.pi, np.nextafter(-np.pi, 0.0), raw)
    return PhaseMap(raw, np.isfinite(raw), kind)


# --- PLY (ASCII 1.0) ----------------------------------------------------------


def _fmt32(x) -> str:
    return "%.9g" % np.float32(x)


def write_point_cloud(cloud: PointCloud, path, provenance: bool = False) -> None:
    """Write ASCII PLY; ``provenance`` adds integer ``u``/``v`` vertex properties."""
    lines = ["ply", "format ascii 1.0", f"element vertex {len(cloud)}"]
    lines += ["property float x", "property float y", "property float z"]
    if provenance:
        lines += ["property int u", "property int v"]
    lines.append("end_header")
    for i, (x, y, z) in enumerate(cloud.points):
        row = f"{_fmt32(x)} {_fmt32(y)} {_fmt32(z)}"
        if provenance:
            u, v = cloud.provenance[i]
            row += f" {u} {v}"
        lines.append(row)
    _write_bytes(path, ("\n".join(lines) + "\n").encode("ascii"))


def read_point_cloud(path) -> PointCloud:
    path = Path(path)
    try:
        text = path.read_text(encoding="ascii")
    except FileNotFoundError as exc:
        raise InputNotFoundError(f"point cloud not found: {path}") from exc
    header, _, body = text.partition("end_header\n")
    props = []
    count = None
    for line in header.splitlines():
        parts = line.split()
        if parts[:2] == ["element", "vertex"]:
            count = int(parts[2])
        elif parts and parts[0] == "property":
            props.append(parts[-1])
    if count is None or props[:3] != ["x", "y", "z"]:
        raise ImageFormatError(f"{path}: not an x/y/z vertex PLY")
    rows = [r.split() for r in body.splitlines() if r.strip()]
    if len(rows) != count:
        raise ImageFormatError(f"{path}: header says {count} vertices, found {len(rows)}")
    table = np.array(rows, dtype=float).reshape(count, len(props))
    pts = table[:, :3].astype(np.float32).astype(float)
    if "u" in props and "v" in props:
        prov = table[:, [props.index("u"), props.index("v")]].astype(np.int64)
    else:
        prov = np.full((count, 2), -1, dtype=np.int64)
    return PointCloud(pts, prov)


def _write_bytes(path, payload: bytes) -> None:
    path = Path(path)
    try:
        path.write_bytes(payload)
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc
