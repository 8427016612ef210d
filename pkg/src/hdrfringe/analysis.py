"""Error statistics against ground truth: RMS, histograms, ripple spectra,
and the noise-propagated height-error prediction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError
from .imaging import PhaseMap
from .stereo import AffineCamera, MatchList, triangulate

HIST_EDGES = np.linspace(-np.pi, np.pi, 17)


def phase_error(pmap: PhaseMap, truth: PhaseMap) -> np.ndarray:
    """Per-pixel error, NaN wherever either map is invalid."""
    if pmap.shape != truth.shape:
        raise DimensionMismatchError(f"maps differ in size: {pmap.shape} vs {truth.shape}")
    ok = pmap.valid & truth.valid
    return np.where(ok, pmap.values - truth.values, np.nan)


def rms(values) -> float:
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    return float(np.sqrt(np.mean(v**2))) if v.size else float("nan")


def fringe_frequency(truth: PhaseMap) -> float:
    """Dominant fringe frequency along rows, in cycles per pixel."""
    grad = np.diff(truth.values, axis=1)
    grad = grad[np.isfinite(grad)]
    return float(np.median(grad) / (2 * np.pi))


def row_spectrum(error: np.ndarray):
    """Mean Hann-windowed amplitude spectrum of the rows of an error image.

    Non-finite pixels count as zero error. Returns ``(freqs, amplitude)``
    with frequency in cycles per pixel.
    """
    e = np.where(np.isfinite(error), error, 0.0)
    e = e - e.mean(axis=1, keepdims=True)
    window = np.hanning(e.shape[1])
    amp = np.abs(np.fft.rfft(e * window, axis=1)).mean(axis=0)
    return np.fft.rfftfreq(e.shape[1]), amp


def ripple_amplitude(error: np.ndarray, freq: float) -> float:
    """Peak row-spectrum amplitude within one bin of ``freq``."""
    freqs, amp = row_spectrum(error)
    i = int(np.argmin(np.abs(freqs - freq)))
    return float(amp[max(i - 1, 0): i + 2].max())


def error_histogram(error: np.ndarray, edges=HIST_EDGES):
    """Counts inside ``edges`` plus (below, above) overflow counts."""
    e = error[np.isfinite(error)]
    counts, _ = np.histogram(e, bins=edges)
    return counts, int((e < edges[0]).sum()), int((e > edges[-1]).sum())


@dataclass
class MapStats:
    rms: float
    valid_fraction: float
    ripple: float
    histogram: tuple


def map_stats(pmap: PhaseMap, truth: PhaseMap, freq: float | None = None) -> MapStats:
    err = phase_error(pmap, truth)
    if freq is None:
        freq = fringe_frequency(truth)
    return MapStats(rms(err), pmap.valid_fraction(), ripple_amplitude(err, freq), error_histogram(err))


def compare_maps(fused: PhaseMap, naive: PhaseMap, truth: PhaseMap) -> str:
    """Human-readable comparison of two phase maps against a truth map."""
    if not (fused.shape == naive.shape == truth.shape):
        raise DimensionMismatchError(
            f"dimension mismatch: {fused.shape}, {naive.shape}, {truth.shape}")
    freq = fringe_frequency(truth)
    lines = [f"dense_fringe_frequency={freq!r}"]
    for name, pm in (("fused", fused), ("naive", naive)):
        s = map_stats(pm, truth, freq)
        counts, below, above = s.histogram
        lines.append(f"{name}_rms={s.rms!r}")
        lines.append(f"{name}_valid_fraction={s.valid_fraction!r}")
        lines.append(f"{name}_ripple={s.ripple!r}")
        lines.append(f"{name}_hist={' '.join(str(c) for c in counts)}")
        lines.append(f"{name}_hist_below={below}")
        lines.append(f"{name}_hist_above={above}")
    lines.append("hist_edges=" + " ".join("%.6g" % x for x in HIST_EDGES))
    return "\n".join(lines) + "\n"


def height_sensitivity(matches: MatchList, cam_l: AffineCamera, cam_r: AffineCamera,
                       step: float = 0.05) -> np.ndarray:
    """dz/du_R per match by central finite difference through triangulation."""
    m = matches.matches
    plus, minus = m.copy(), m.copy()
    plus[:, 2] += step
    minus[:, 2] -= step
    # residual gate off: both perturbed solutions must exist for every match
    zp, _ = triangulate(MatchList(plus), cam_l, cam_r, max_residual=np.inf)
    zm, _ = triangulate(MatchList(minus), cam_l, cam_r, max_residual=np.inf)
    return (zp.points[:, 2] - zm.points[:, 2]) / (2 * step)


def predicted_height_rms(matches: MatchList, cam_l: AffineCamera, cam_r: AffineCamera,
                         right_truth: PhaseMap, phase_var_left, phase_var_right) -> float:
    """RMS height error expected from phase noise alone.

    The left phase error and the linearly interpolated right phase error
    shift ``u_R`` by ``(e_L - e_R) / g`` where ``g`` is the right-image phase
    gradient; that shift goes through ``dz/du_R``. Phase variances may be
    scalars or per-match arrays.
    """
    m = matches.matches
    if len(m) == 0:
        return float("nan")
    v = m[:, 1].astype(int)
    base = np.clip(np.floor(m[:, 2]).astype(int), 0, right_truth.width - 2)
    t = m[:, 2] - base
    grad = right_truth.values[v, base + 1] - right_truth.values[v, base]
    interp_weight = (1 - t) ** 2 + t**2
    var_u = (np.asarray(phase_var_left) + interp_weight * np.asarray(phase_var_right)) / grad**2
    dz = height_sensitivity(matches, cam_l, cam_r)
    return float(np.sqrt(np.mean(dz**2 * var_u)))
