"""Wrapped-phase retrieval from phase-shifted intensity samples.

Intensity model per pixel: ``I_n = I0 * (1 + a * cos(phi + delta_n))``.
Least squares on the basis ``[1, cos delta, sin delta]`` gives coefficients
``(I0, B cos phi, -B sin phi)``, hence ``phi = -atan2(a2, a1)``.

Sums over samples are accumulated with explicit loops over ``n`` so that a
scalar pixel and the same pixel inside an image stack produce bit-identical
results.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateScheduleError, InsufficientSamplesError, ZeroModulationError

COND_LIMIT = 1e12
# modulation below this fraction of the mean intensity counts as zero
ZERO_MODULATION_RTOL = 1e-9


def uniform_shifts(steps: int) -> np.ndarray:
    """``delta_n = 2*pi*(n-1)/steps`` for n = 1..steps."""
    return 2 * np.pi * np.arange(steps) / steps


def is_uniform(deltas, atol: float = 1e-12) -> bool:
    deltas = np.asarray(deltas, dtype=float)
    return deltas.size >= 3 and np.allclose(deltas, uniform_shifts(deltas.size), rtol=0, atol=atol)


@dataclass(frozen=True, eq=False)
class ShiftSchedule:
    deltas: np.ndarray

    def __post_init__(self):
        d = np.array(self.deltas, dtype=float).ravel()
        if d.size < 3:
            raise InsufficientSamplesError(f"insufficient samples: K={d.size} < 3")
        d.setflags(write=False)
        object.__setattr__(self, "deltas", d)

    @classmethod
    def uniform(cls, steps: int) -> "ShiftSchedule":
        return cls(uniform_shifts(steps))

    def __len__(self) -> int:
        return self.deltas.size


@dataclass(frozen=True, eq=False)
class CoefficientMatrix:
    c: np.ndarray


@dataclass(frozen=True)
class NoiseModel:
    sigma: float
    steps: int
    frequency: float
    modulation: float

    def __post_init__(self):
        for name in ("sigma", "steps", "frequency", "modulation"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")


def normal_matrix(deltas, weights=None) -> np.ndarray:
    """Normal matrix ``A`` of the 3-parameter sinusoid fit.

    With ``weights`` of shape ``(K, ...)`` (0/1 sample masks) a stack of
    matrices of shape ``(..., 3, 3)`` is returned.
    """
    deltas = np.asarray(deltas, dtype=float)
    c, s = np.cos(deltas), np.sin(deltas)
    if weights is None:
        weights = np.ones(deltas.shape)
    w = np.asarray(weights, dtype=float)
    n = cc = ss = sc = sum_c = sum_s = 0.0
    for k in range(deltas.size):
        wk = w[k]
        n = n + wk
        sum_c = sum_c + wk * c[k]
        sum_s = sum_s + wk * s[k]
        cc = cc + wk * c[k] * c[k]
        ss = ss + wk * s[k] * s[k]
        sc = sc + wk * s[k] * c[k]
    shape = np.shape(w)[1:]
    a = np.empty(shape + (3, 3))
    a[..., 0, 0] = n
    a[..., 0, 1] = a[..., 1, 0] = sum_c
    a[..., 0, 2] = a[..., 2, 0] = sum_s
    a[..., 1, 1] = cc
    a[..., 1, 2] = a[..., 2, 1] = sc
    a[..., 2, 2] = ss
    return a


def build_coefficients(schedule: ShiftSchedule) -> CoefficientMatrix:
    a = normal_matrix(schedule.deltas)
    if not np.linalg.cond(a) <= COND_LIMIT:
        raise DegenerateScheduleError(f"degenerate schedule: {schedule.deltas.tolist()}")
    c = np.linalg.inv(a)
    c = 0.5 * (c + c.T)
    c.setflags(write=False)
    return CoefficientMatrix(c)


def _projections(samples, deltas, weights=None):
    """Return ``(sum I, sum I cos, sum I sin)`` over the sample axis."""
    c, s = np.cos(deltas), np.sin(deltas)
    s0 = s1 = s2 = 0.0
    for k in range(len(deltas)):
        ik = samples[k] if weights is None else samples[k] * weights[k]
        s0 = s0 + ik
        s1 = s1 + ik * c[k]
        s2 = s2 + ik * s[k]
    return s0, s1, s2


def _neg_atan2(y, x):
    phi = -np.arctan2(y, x)
    return np.where(phi <= -np.pi, np.pi, phi)


def _zero_modulation(a1, a2, mean_level):
    scale = ZERO_MODULATION_RTOL * np.maximum(np.abs(mean_level), 1.0)
    return np.hypot(a1, a2) <= scale


def solve_generalized(samples, schedule: ShiftSchedule, coeffs: CoefficientMatrix | None = None) -> float:
    """Least-squares wrapped phase for an arbitrary schedule of K >= 3 shifts."""
    samples = np.asarray(samples, dtype=float)
    if samples.shape != schedule.deltas.shape:
        raise ValueError(f"{samples.size} samples for {len(schedule)} shifts")
    if coeffs is None:
        coeffs = build_coefficients(schedule)
    s0, s1, s2 = _projections(samples, schedule.deltas)
    c = coeffs.c
    a1 = c[1, 0] * s0 + c[1, 1] * s1 + c[1, 2] * s2
    a2 = c[2, 0] * s0 + c[2, 1] * s1 + c[2, 2] * s2
    if _zero_modulation(a1, a2, s0 / samples.size):
        raise ZeroModulationError("zero modulation")
    return float(_neg_atan2(a2, a1))


def solve_standard(samples, schedule: ShiftSchedule) -> float:
    """Wrapped phase for the uniform N-step schedule."""
    samples = np.asarray(samples, dtype=float)
    if samples.shape != schedule.deltas.shape:
        raise ValueError(f"{samples.size} samples for {len(schedule)} shifts")
    phi, ok = standard_phase(samples, schedule.deltas)
    if not ok:
        raise ZeroModulationError("zero modulation")
    return float(phi)


def standard_phase(samples, deltas):
    """Vectorized uniform-schedule solve over the leading sample axis.

    Returns ``(phase, ok)``; ``ok`` is False where the modulation vanishes.
    """
    samples = np.asarray(samples, dtype=float)
    s0, s1, s2 = _projections(samples, deltas)
    ok = ~_zero_modulation(s1, s2, s0 / len(deltas))
    return _neg_atan2(s2, s1), ok


def generalized_phase(samples, deltas, weights=None):
    """Vectorized least-squares solve with a per-pixel 0/1 sample mask.

    Returns ``(phase, ok)``; ``ok`` is False where fewer than three samples
    survive, the normal matrix is ill conditioned, or modulation vanishes.
    """
    samples = np.asarray(samples, dtype=float)
    deltas = np.asarray(deltas, dtype=float)
    if weights is None:
        weights = np.ones(samples.shape)
    weights = np.asarray(weights, dtype=float)
    a = normal_matrix(deltas, weights)
    count = weights.sum(axis=0)
    ok = count >= 3
    # singular matrices get a harmless stand-in so inv() never fails
    cond = np.full(count.shape, np.inf)
    if np.any(ok):
        cond[ok] = np.linalg.cond(a[ok])
    ok &= cond <= COND_LIMIT
    a[~ok] = np.eye(3)
    c = np.linalg.inv(a)
    s0, s1, s2 = _projections(samples, deltas, weights)
    a1 = c[..., 1, 0] * s0 + c[..., 1, 1] * s1 + c[..., 1, 2] * s2
    a2 = c[..., 2, 0] * s0 + c[..., 2, 1] * s1 + c[..., 2, 2] * s2
    mean_level = s0 / np.maximum(count, 1)
    ok &= ~_zero_modulation(a1, a2, mean_level)
    return _neg_atan2(a2, a1), ok


def predict_phase_variance(model: NoiseModel) -> float:
    """Phase-error variance ``2 sigma^2 / (N f^2 B^2)`` of an N-step measurement."""
    return 2 * model.sigma**2 / (model.steps * model.frequency**2 * model.modulation**2)


def subset_phase_variance(deltas, weights, phase, sigma: float, modulation) -> np.ndarray:
    """Least-squares phase variance when only the masked samples are used.

    Propagates white noise of standard deviation ``sigma`` through the
    inverse normal matrix of each pixel's surviving shifts. For a full
    uniform schedule this equals :func:`predict_phase_variance` with f = 1.
    ``weights`` is a ``(K, ...)`` sample mask; ``phase`` and ``modulation``
    broadcast over the pixel axes.
    """
    c = np.linalg.inv(normal_matrix(deltas, weights))
    s, co = np.sin(phase), np.cos(phase)
    # dphi = (sin(phi) d_alpha1 + cos(phi) d_alpha2) / B with phi = -atan2(alpha2, alpha1)
    gain = s**2 * c[..., 1, 1] + co**2 * c[..., 2, 2] + 2 * s * co * c[..., 1, 2]
    return sigma**2 * gain / np.asarray(modulation, dtype=float) ** 2
