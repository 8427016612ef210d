"""Synthetic rectified dual-view fringe capture with known ground truth.

World frame: millimetres, scene centred on the origin, height ``z`` up.
The projector is orthographic from above with vertical fringes, so the
projector phase of a surface point depends on its ``x`` only. The loosest
period spans the scene extent exactly, which keeps level-1 phase inside
(-pi, pi) and therefore absolute.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import ImageFormatError, InputNotFoundError, SceneOutsideFrustumError, UnknownSceneError
from .hdr import HdrConfig, MultiFreqSet
from .imaging import FringeStack, PhaseMap, PointCloud
from .phase import generalized_phase, is_uniform, standard_phase, uniform_shifts
from .stereo import AffineCamera

FULL_SCALE = 255
DEFAULT_PERIODS = (912.0, 144.0, 24.0, 12.0)
DEFAULT_STEPS = (12, 12, 12, 12)

# telecentric rig constants: 0.296x lens on a 3.45 um sensor
MAGNIFICATION = 0.296
PIXEL_PITCH_MM = 0.00345
HALF_ANGLE_DEG = 15.0

BUILTIN_SCENES = ("plane", "gaussian-bump", "shiny-disk-on-ramp")


@dataclass(frozen=True, eq=False)
class Scene:
    heights: np.ndarray
    reflectance: np.ndarray
    extent: tuple[float, float] = (4.0, 4.0)

    def __post_init__(self):
        z = np.array(self.heights, dtype=float)
        r = np.array(self.reflectance, dtype=float)
        if z.ndim != 2 or z.shape != r.shape:
            raise ValueError("height and reflectance rasters must be 2-D and equal in size")
        if z.shape[0] < 16 or z.shape[1] < 16:
            raise ValueError("scene grid must be at least 16x16")
        if not (np.all(np.isfinite(z)) and np.all(np.isfinite(r))):
            raise ValueError("scene rasters must be finite")
        if r.min() < 0:
            raise ValueError("reflectance must be non-negative")
        ext = (float(self.extent[0]), float(self.extent[1]))
        if min(ext) <= 0:
            raise ValueError("extent must be positive")
        z.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "heights", z)
        object.__setattr__(self, "reflectance", r)
        object.__setattr__(self, "extent", ext)

    @property
    def xs(self) -> np.ndarray:
        return np.linspace(-self.extent[0] / 2, self.extent[0] / 2, self.heights.shape[1])

    @property
    def ys(self) -> np.ndarray:
        return np.linspace(-self.extent[1] / 2, self.extent[1] / 2, self.heights.shape[0])

    def _interp(self, raster):
        return RegularGridInterpolator((self.ys, self.xs), raster, bounds_error=False, fill_value=None)

    def height_at(self, x, y):
        pts = np.stack([np.ravel(y), np.ravel(x)], axis=-1)
        return self._interp(self.heights)(pts).reshape(np.shape(x))

    def reflectance_at(self, x, y):
        pts = np.stack([np.ravel(y), np.ravel(x)], axis=-1)
        return self._interp(self.reflectance)(pts).reshape(np.shape(x))

    def contains(self, x, y):
        hx, hy = self.extent[0] / 2, self.extent[1] / 2
        return (np.abs(x) <= hx) & (np.abs(y) <= hy)


@dataclass(frozen=True)
class ProjectorModel:
    periods: tuple = DEFAULT_PERIODS
    steps: tuple = DEFAULT_STEPS
    intensity: float = 105.0
    modulation: float = 0.7
    blur: float = 4.5

    def __post_init__(self):
        periods = tuple(float(p) for p in self.periods)
        steps = tuple(int(n) for n in self.steps)
        if len(periods) != len(steps) or not periods:
            raise ValueError("one step count per period required")
        if any(b >= a for a, b in zip(periods, periods[1:])) or periods[-1] <= 0:
            raise ValueError("periods must be positive and strictly decreasing")
        if min(steps) < 3:
            raise ValueError("each level needs at least 3 phase shifts")
        if not 0 < self.modulation <= 1:
            raise ValueError("modulation must lie in (0, 1]")
        if self.intensity <= 0 or self.blur < 0:
            raise ValueError("intensity must be positive and blur non-negative")
        object.__setattr__(self, "periods", periods)
        object.__setattr__(self, "steps", steps)

    def contrast(self, period: float) -> float:
        """Fringe contrast after Gaussian projector defocus of radius ``blur``."""
        return self.modulation * float(np.exp(-((np.pi * self.blur / period) ** 2)))

    def shifts(self, level: int) -> np.ndarray:
        return uniform_shifts(self.steps[level])

    def fringe_counts(self) -> np.ndarray:
        """Fringes across the field per level; the loosest level has one."""
        return self.periods[0] / np.asarray(self.periods)

    def phase(self, x, extent_x: float, level: int):
        """Absolute projector phase of level ``level`` at world ``x``."""
        level1 = 2 * np.pi * np.asarray(x) / extent_x
        return level1 * (self.periods[0] / self.periods[level])


@dataclass(frozen=True)
class SensorModel:
    sigma: float = 1.0
    full_scale: int = FULL_SCALE
    quantize: bool = True

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """Dense truth for both views; phases are on the densest-level scale."""

    phase_left: PhaseMap
    phase_right: PhaseMap
    points_left: np.ndarray
    points_right: np.ndarray
    reflectance_left: np.ndarray
    reflectance_right: np.ndarray
    level_phase_left: list = field(default_factory=list)
    level_phase_right: list = field(default_factory=list)

    @property
    def cloud(self) -> PointCloud:
        h, w = self.points_left.shape[:2]
        vv, uu = np.mgrid[0:h, 0:w]
        return PointCloud(self.points_left.reshape(-1, 3), np.column_stack([uu.ravel(), vv.ravel()]))


def default_cameras(width: int = 256, height: int = 256, half_angle_deg: float = HALF_ANGLE_DEG,
                    magnification: float = MAGNIFICATION, pixel_pitch_mm: float = PIXEL_PITCH_MM):
    """Symmetric rectified telecentric pair looking down at the origin."""
    k = magnification / pixel_pitch_mm
    t = np.deg2rad(half_angle_deg)
    u0, v0 = (width - 1) / 2, (height - 1) / 2
    left = [[k * np.cos(t), 0.0, k * np.sin(t), u0], [0.0, k, 0.0, v0]]
    right = [[k * np.cos(t), 0.0, -k * np.sin(t), u0], [0.0, k, 0.0, v0]]
    return AffineCamera(left), AffineCamera(right)


def builtin_scene(name: str, grid: int = 401, extent: float = 4.0, gain: float = 3.0) -> Scene:
    xs = np.linspace(-extent / 2, extent / 2, grid)
    x, y = np.meshgrid(xs, xs)
    rho = np.hypot(x, y)
    if name == "plane":
        z = np.zeros_like(x)
        r = np.ones_like(x)
    elif name == "gaussian-bump":
        z = 0.25 * np.exp(-(rho**2) / (2 * 0.5**2))
        r = np.ones_like(x)
    elif name == "shiny-disk-on-ramp":
        z = 0.1 * x
        # full gain inside 0.6 mm, cosine roll-off to 1 over the next 0.3 mm
        t = np.clip((rho - 0.6) / 0.3, 0.0, 1.0)
        r = 1.0 + (gain - 1.0) * 0.5 * (1.0 + np.cos(np.pi * t))
    else:
        raise UnknownSceneError(f"unknown scene {name!r}; choose from {', '.join(BUILTIN_SCENES)}")
    return Scene(z, r, (extent, extent))


def load_scene(path) -> Scene:
    """Read a scene file.

    Layout::

        grid <nx> <ny>
        extent <width_mm> <height_mm>
        height
        <ny rows of nx numbers>
        reflectance
        <ny rows of nx numbers>

    Lines starting with ``#`` are ignored.
    """
    path = Path(path)
    if not path.exists():
        raise InputNotFoundError(f"scene file not found: {path}")
    lines = [ln.split() for ln in path.read_text().splitlines()
             if ln.strip() and not ln.lstrip().startswith("#")]
    try:
        it = iter(lines)
        head = next(it)
        assert head[0] == "grid"
        nx, ny = int(head[1]), int(head[2])
        head = next(it)
        assert head[0] == "extent"
        ext = (float(head[1]), float(head[2]))
        rasters = {}
        for _ in range(2):
            name = next(it)[0]
            rows = [next(it) for _ in range(ny)]
            rasters[name] = np.array(rows, dtype=float).reshape(ny, nx)
        return Scene(rasters["height"], rasters["reflectance"], ext)
    except (AssertionError, StopIteration, ValueError, KeyError, IndexError) as exc:
        raise ImageFormatError(f"{path}: malformed scene file") from exc


def save_scene(scene: Scene, path) -> None:
    ny, nx = scene.heights.shape
    out = [f"grid {nx} {ny}", "extent %.17g %.17g" % scene.extent, "height"]
    out += [" ".join("%.17g" % v for v in row) for row in scene.heights]
    out.append("reflectance")
    out += [" ".join("%.17g" % v for v in row) for row in scene.reflectance]
    Path(path).write_text("\n".join(out) + "\n")


def intersect(scene: Scene, camera: AffineCamera, width: int, height: int, iterations: int = 60):
    """Surface point seen by every pixel of an affine camera, by bisection along z."""
    p = camera.projection
    block = p[:, :2]
    if abs(np.linalg.det(block)) < 1e-12:
        raise ValueError("camera x/y block is singular; cannot parametrize rays by height")
    inv = np.linalg.inv(block)
    vv, uu = np.mgrid[0:height, 0:width].astype(float)
    rhs = np.stack([uu - p[0, 3], vv - p[1, 3]])
    xy0 = np.einsum("ij,jhw->ihw", inv, rhs)
    dxy = -(inv @ p[:, 2])

    def ray(z):
        return xy0[0] + dxy[0] * z, xy0[1] + dxy[1] * z

    span = max(float(np.ptp(scene.heights)), 1e-3)
    lo = np.full(uu.shape, scene.heights.min() - span)
    hi = np.full(uu.shape, scene.heights.max() + span)
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        x, y = ray(mid)
        above = scene.height_at(x, y) > mid
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
    z = 0.5 * (lo + hi)
    x, y = ray(z)
    if not np.all(scene.contains(x, y)):
        raise SceneOutsideFrustumError("scene outside camera frustum: some pixels miss the scene extent")
    return np.stack([x, y, z], axis=-1)


def _noise(seed: int, view: int, level: int, sample: int, shape) -> np.ndarray:
    # Philox is counter based: the pixel index is the position in the stream
    ss = np.random.SeedSequence([seed, view, level, sample])
    return np.random.Generator(np.random.Philox(ss)).standard_normal(shape)


def render_view(scene: Scene, proj: ProjectorModel, sensor: SensorModel, camera: AffineCamera,
                seed: int, view: int, width: int, height: int):
    pts = intersect(scene, camera, width, height)
    x, y = pts[..., 0], pts[..., 1]
    refl = scene.reflectance_at(x, y)
    stacks, phases = [], []
    for m, period in enumerate(proj.periods):
        phi = proj.phase(x, scene.extent[0], m)
        alpha = proj.contrast(period)
        shifts = proj.shifts(m)
        frames = []
        for n, delta in enumerate(shifts):
            img = refl * proj.intensity * (1 + alpha * np.cos(phi + delta))
            if sensor.sigma > 0:
                img = img + sensor.sigma * _noise(seed, view, m, n, img.shape)
            img = np.clip(img, 0, sensor.full_scale)
            if sensor.quantize:
                img = np.floor(img + 0.5).astype(np.uint8)
            frames.append(img)
        stacks.append(FringeStack(np.stack(frames), shifts, period))
        phases.append(phi)
    return stacks, phases, pts, refl


def render_stacks(scene: Scene, proj: ProjectorModel, sensor: SensorModel, cam_l: AffineCamera,
                  cam_r: AffineCamera, seed: int = 0, width: int = 256, height: int = 256,
                  config: HdrConfig = HdrConfig()):
    """Render both views. Returns ``(left MultiFreqSet, right MultiFreqSet, GroundTruth)``."""
    views = [render_view(scene, proj, sensor, cam, seed, i, width, height)
             for i, cam in enumerate((cam_l, cam_r))]
    sets = [MultiFreqSet.from_stacks(v[0], config) for v in views]
    scale = proj.periods[-1]

    def eq_phase(phases):
        # every level encodes the same value once rescaled; use level 1
        return PhaseMap(phases[0] * proj.periods[0] / scale, None, "equivalent")

    truth = GroundTruth(
        phase_left=eq_phase(views[0][1]),
        phase_right=eq_phase(views[1][1]),
        points_left=views[0][2],
        points_right=views[1][2],
        reflectance_left=views[0][3],
        reflectance_right=views[1][3],
        level_phase_left=views[0][1],
        level_phase_right=views[1][1],
    )
    return sets[0], sets[1], truth


def monte_carlo_variance(proj: ProjectorModel, sensor: SensorModel, trials: int = 100_000,
                         seed: int = 0) -> np.ndarray:
    """Empirical phase-error variance per level, on the field-normalized scale.

    Each level's wrapped-phase error variance is divided by the squared fringe
    count across the field, so values compare directly with
    :func:`hdrfringe.phase.predict_phase_variance` evaluated at that count.
    Samples are not quantized.
    """
    rng = np.random.default_rng(seed)
    counts = proj.fringe_counts()
    out = []
    for m, period in enumerate(proj.periods):
        alpha = proj.contrast(period)
        shifts = proj.shifts(m)
        truth = rng.uniform(-np.pi, np.pi, trials)
        clean = proj.intensity * (1 + alpha * np.cos(truth[None, :] + shifts[:, None]))
        samples = clean + sensor.sigma * rng.standard_normal(clean.shape)
        if is_uniform(shifts):
            est, _ = standard_phase(samples, shifts)
        else:
            est, _ = generalized_phase(samples, shifts)
        err = np.angle(np.exp(1j * (est - truth)))
        out.append(np.var(err) / counts[m] ** 2)
    return np.array(out)


def level_modulation(proj: ProjectorModel, level: int, reflectance: float = 1.0) -> float:
    return reflectance * proj.intensity * proj.contrast(proj.periods[level])
