"""Phase-based correspondence on rectified rows and affine triangulation."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CameraFileNotFoundError, DimensionMismatchError, ImageFormatError
from .imaging import PhaseMap, PointCloud

DEFAULT_MAX_PHASE_GAP = 2 * np.pi
DEFAULT_MAX_RESIDUAL = 0.5


@dataclass(frozen=True, eq=False)
class AffineCamera:
    """2x4 projection taking homogeneous world millimetres to pixels (u, v)."""

    projection: np.ndarray

    def __post_init__(self):
        p = np.array(self.projection, dtype=float)
        if p.shape != (2, 4):
            raise ValueError(f"projection must be 2x4, got {p.shape}")
        if np.linalg.matrix_rank(p[:, :3]) != 2:
            raise ValueError("left 2x3 block of an affine camera must have rank 2")
        p.setflags(write=False)
        object.__setattr__(self, "projection", p)

    def project(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return pts @ self.projection[:, :3].T + self.projection[:, 3]


@dataclass(frozen=True, eq=False)
class RectifiedPair:
    left: PhaseMap
    right: PhaseMap

    def __post_init__(self):
        if self.left.shape != self.right.shape:
            raise DimensionMismatchError("left and right phase maps differ in size")


@dataclass(frozen=True, eq=False)
class MatchList:
    """Rows of ``(u_L, v_L, u_R)``; ``u_R`` is sub-pixel."""

    matches: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matches, dtype=float).reshape(-1, 3)
        m.setflags(write=False)
        object.__setattr__(self, "matches", m)

    def __len__(self) -> int:
        return self.matches.shape[0]


@dataclass
class TriangulationReport:
    accepted: int = 0
    rejected_rank: int = 0
    rejected_residual: int = 0


def monotone_segments(phase: np.ndarray, valid: np.ndarray) -> list[tuple[int, int]]:
    """Half-open ``[start, stop)`` runs of valid pixels with strictly rising phase.

    Both pixels of a non-rising step are dropped, and a run whose first value
    does not exceed the last kept value is dropped whole, so no non-monotone
    interval is ever searched.
    """
    usable = np.asarray(valid, dtype=bool).copy()
    steps_bad = usable[:-1] & usable[1:] & ~(phase[1:] > phase[:-1])
    usable[:-1] &= ~steps_bad
    usable[1:] &= ~steps_bad
    edges = np.diff(np.concatenate(([0], usable.astype(np.int8), [0])))
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1)
    segments = []
    last = -np.inf
    for a, b in zip(starts, stops):
        if phase[a] > last:
            segments.append((int(a), int(b)))
            last = phase[b - 1]
    return segments


def match_row(pair: RectifiedPair, row: int, max_phase_gap: float = DEFAULT_MAX_PHASE_GAP):
    """Match valid left pixels of ``row`` to sub-pixel right columns.

    Returns ``(u_L, u_R)`` as an int array and a float array.
    """
    phi_l = pair.left.values[row]
    ok_l = pair.left.valid[row]
    phi_r = pair.right.values[row]
    segments = monotone_segments(phi_r, pair.right.valid[row])
    u_left = np.flatnonzero(ok_l)
    if not segments or u_left.size == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    target = phi_l[u_left]

    best_u = np.full(u_left.size, -1, dtype=np.int64)
    best_gap = np.full(u_left.size, np.inf)
    best_seg = np.zeros(u_left.size, dtype=np.int64)
    for si, (a, b) in enumerate(segments):
        seg = phi_r[a:b]
        j = np.searchsorted(seg, target)
        lo = np.clip(j - 1, 0, seg.size - 1)
        hi = np.clip(j, 0, seg.size - 1)
        gap_lo = np.abs(seg[lo] - target)
        gap_hi = np.abs(seg[hi] - target)
        # ties go to the smaller column
        pick = np.where(gap_hi < gap_lo, hi, lo)
        gap = np.minimum(gap_lo, gap_hi)
        better = gap < best_gap
        best_gap = np.where(better, gap, best_gap)
        best_u = np.where(better, a + pick, best_u)
        best_seg = np.where(better, si, best_seg)

    seg_start = np.array([s[0] for s in segments])[best_seg]
    seg_stop = np.array([s[1] for s in segments])[best_seg]
    base = phi_r[best_u]
    forward = target > base
    nb = np.where(forward, best_u + 1, best_u - 1)
    inside = (nb >= seg_start) & (nb < seg_stop)
    keep = inside & (best_gap <= max_phase_gap)
    nb_safe = np.clip(nb, 0, phi_r.size - 1)
    denom = np.where(forward, phi_r[nb_safe] - base, base - phi_r[nb_safe])
    with np.errstate(invalid="ignore", divide="ignore"):
        u_r = best_u + (target - base) / denom
    return u_left[keep], u_r[keep]


def match_pair(pair: RectifiedPair, max_phase_gap: float = DEFAULT_MAX_PHASE_GAP) -> MatchList:
    rows = []
    for v in range(pair.left.height):
        ul, ur = match_row(pair, v, max_phase_gap)
        if ul.size:
            rows.append(np.column_stack([ul, np.full(ul.size, v), ur]))
    return MatchList(np.concatenate(rows) if rows else np.zeros((0, 3)))


def stacked_system(cam_l: AffineCamera, cam_r: AffineCamera):
    pl, pr = cam_l.projection, cam_r.projection
    a = np.vstack([pl[:, :3], pr[:, :3]])
    offset = np.concatenate([pl[:, 3], pr[:, 3]])
    return a, offset


def triangulate(matches: MatchList, cam_l: AffineCamera, cam_r: AffineCamera,
                max_residual: float = DEFAULT_MAX_RESIDUAL):
    """Least-squares world points for matched pixels.

    Each match contributes ``(u_L, v_L)`` on the left camera and ``(u_R, v_L)``
    on the right. Points whose reprojection error exceeds ``max_residual``
    pixels in either view are dropped. Returns ``(PointCloud, report)``.
    """
    m = matches.matches
    report = TriangulationReport()
    a, offset = stacked_system(cam_l, cam_r)
    if np.linalg.matrix_rank(a) < 3:
        report.rejected_rank = len(matches)
        return PointCloud(), report
    obs = np.column_stack([m[:, 0], m[:, 1], m[:, 2], m[:, 1]])
    x, *_ = np.linalg.lstsq(a, (obs - offset).T, rcond=None)
    pts = x.T
    proj = pts @ a.T + offset
    err_l = np.hypot(*(proj[:, :2] - obs[:, :2]).T)
    err_r = np.hypot(*(proj[:, 2:] - obs[:, 2:]).T)
    good = (np.maximum(err_l, err_r) <= max_residual) & np.all(np.isfinite(pts), axis=1)
    report.rejected_residual = int((~good).sum())
    report.accepted = int(good.sum())
    prov = np.rint(m[good, :2]).astype(np.int64)
    return PointCloud(pts[good], prov), report


def load_cameras(path):
    path = Path(path)
    if not path.exists():
        raise CameraFileNotFoundError(f"camera file not found: {path}")
    rows = [line.split() for line in path.read_text().splitlines()
            if line.strip() and not line.lstrip().startswith("#")]
    try:
        table = np.array(rows, dtype=float)
    except ValueError as exc:
        raise ImageFormatError(f"{path}: malformed camera file") from exc
    if table.shape != (4, 4):
        raise ImageFormatError(f"{path}: expected 4 rows of 4 numbers, got {table.shape}")
    return AffineCamera(table[:2]), AffineCamera(table[2:])


def save_cameras(cam_l: AffineCamera, cam_r: AffineCamera, path) -> None:
    rows = np.vstack([cam_l.projection, cam_r.projection])
    text = "".join(" ".join("%.17g" % x for x in r) + "\n" for r in rows)
    Path(path).write_text(text)


def save_matches(matches: MatchList, path) -> None:
    lines = ["# u_left v_left u_right"]
    lines += ["%d %d %.17g" % (ul, vl, ur) for ul, vl, ur in matches.matches]
    Path(path).write_text("\n".join(lines) + "\n")


def load_matches(path) -> MatchList:
    rows = [line.split() for line in Path(path).read_text().splitlines()
            if line.strip() and not line.startswith("#")]
    return MatchList(np.array(rows, dtype=float).reshape(-1, 3))
