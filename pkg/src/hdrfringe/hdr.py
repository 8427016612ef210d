"""Saturation-tolerant phase retrieval and multi-frequency fusion.

Three stages per view:

* :func:`sat_map` counts samples at or above the saturation threshold.
* :func:`gen_phase_shifting` drops those samples pixel by pixel and solves the
  least-squares phase on the survivors (fast uniform path when none dropped).
* :func:`multi_freq_hdr` unwraps the level ladder temporally, rescales every
  level to the densest phase scale and takes each pixel from the densest level
  that still has three or more unsaturated samples.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionMismatchError
from .imaging import FringeStack, IndexMap, PhaseMap, SaturationMap, round_half_away
from .phase import generalized_phase, is_uniform, standard_phase

MIN_VALID = 3


@dataclass(frozen=True)
class HdrConfig:
    sat_thr: float = 255
    min_valid: int = MIN_VALID

    def __post_init__(self):
        if not 1 <= self.sat_thr <= 255:
            raise ValueError(f"sat_thr must lie in [1, 255], got {self.sat_thr}")
        if self.min_valid != MIN_VALID:
            raise ValueError("min_valid is fixed at 3")


@dataclass(frozen=True, eq=False)
class MultiFreqSet:
    """Fringe stacks with their saturation maps, loosest period first."""

    levels: tuple

    def __post_init__(self):
        levels = tuple((stack, smap) for stack, smap in self.levels)
        if not levels:
            raise ValueError("need at least one level")
        periods = [s.period for s, _ in levels]
        if any(b >= a for a, b in zip(periods, periods[1:])):
            raise ValueError(f"periods must strictly decrease, got {periods}")
        shape = levels[0][0].shape
        for stack, smap in levels:
            if stack.shape != shape or smap.shape != shape:
                raise DimensionMismatchError("all levels must share image dimensions")
        object.__setattr__(self, "levels", levels)

    @classmethod
    def from_stacks(cls, stacks: Sequence[FringeStack], config: HdrConfig = HdrConfig()):
        return cls(tuple((s, sat_map(s, config)) for s in stacks))

    @property
    def stacks(self) -> list[FringeStack]:
        return [s for s, _ in self.levels]

    @property
    def satmaps(self) -> list[SaturationMap]:
        return [m for _, m in self.levels]

    @property
    def periods(self) -> list[float]:
        return [s.period for s, _ in self.levels]

    def __len__(self) -> int:
        return len(self.levels)


@dataclass
class FusionReport:
    """Where the fused phase came from.

    ``replaced[m]`` counts pixels filled from looser level ``m + 1`` (1-based
    level index) because every denser level was unavailable there;
    ``from_densest`` counts pixels taken from the densest level itself.
    """

    replaced: list[int] = field(default_factory=list)
    from_densest: int = 0
    unrecoverable: int = 0
    oversaturated: list[int] = field(default_factory=list)
    total: int = 0

    @property
    def unavailable_densest(self) -> int:
        return sum(self.replaced) + self.unrecoverable

    def to_text(self) -> str:
        m = len(self.replaced) + 1
        lines = [f"fusion over {m} levels, {self.total} pixels"]
        lines.append(f"  from densest level {m}: {self.from_densest}")
        for i, n in enumerate(self.replaced, start=1):
            lines.append(f"  replaced from level {i}: {n}")
        lines.append(f"  unrecoverable: {self.unrecoverable}")
        for i, n in enumerate(self.oversaturated, start=1):
            lines.append(f"  oversaturated at level {i}: {n}")
        return "\n".join(lines) + "\n"

    def to_kv(self) -> str:
        rows = [("levels", len(self.replaced) + 1), ("total", self.total),
                ("from_densest", self.from_densest)]
        rows += [(f"replaced_level_{i}", n) for i, n in enumerate(self.replaced, start=1)]
        rows.append(("unrecoverable", self.unrecoverable))
        rows += [(f"oversaturated_level_{i}", n) for i, n in enumerate(self.oversaturated, start=1)]
        return "".join(f"{k}={v}\n" for k, v in rows)

    @classmethod
    def from_kv(cls, text: str) -> "FusionReport":
        kv = dict(line.split("=", 1) for line in text.splitlines() if "=" in line)
        m = int(kv["levels"])
        return cls(
            replaced=[int(kv[f"replaced_level_{i}"]) for i in range(1, m)],
            from_densest=int(kv["from_densest"]),
            unrecoverable=int(kv["unrecoverable"]),
            oversaturated=[int(kv[f"oversaturated_level_{i}"]) for i in range(1, m + 1)],
            total=int(kv["total"]),
        )


def sat_map(stack: FringeStack, config: HdrConfig = HdrConfig()) -> SaturationMap:
    counts = (stack.samples >= config.sat_thr).sum(axis=0)
    return SaturationMap(counts, stack.n)


def gen_phase_shifting(stack: FringeStack, satmap: SaturationMap, config: HdrConfig = HdrConfig()) -> PhaseMap:
    """Wrapped phase with saturated samples eliminated per pixel."""
    if satmap.shape != stack.shape:
        raise DimensionMismatchError("saturation map does not match stack")
    samples = stack.samples.astype(float)
    keep = stack.samples < config.sat_thr
    phase = np.full(stack.shape, np.nan)
    valid = np.zeros(stack.shape, dtype=bool)

    clean = satmap.counts == 0
    if is_uniform(stack.shifts):
        if np.any(clean):
            phi, ok = standard_phase(samples[:, clean], stack.shifts)
            phase[clean], valid[clean] = phi, ok
        partial = ~clean
    else:
        partial = np.ones(stack.shape, dtype=bool)

    partial &= (stack.n - satmap.counts) >= config.min_valid
    if np.any(partial):
        phi, ok = generalized_phase(samples[:, partial], stack.shifts, keep[:, partial])
        phase[partial], valid[partial] = phi, ok
    return PhaseMap(phase, valid, "wrapped")


def naive_phase(stack: FringeStack) -> PhaseMap:
    """Uniform N-step phase using every sample, saturated or not.

    Nothing is invalidated: a fully clipped pixel still yields whatever angle
    the rounding residue of the sums points to, as a conventional solver would.
    """
    phi, _ = standard_phase(stack.samples.astype(float), stack.shifts)
    return PhaseMap(phi, np.ones(stack.shape, dtype=bool), "wrapped")


def oversaturated(satmap: SaturationMap, config: HdrConfig = HdrConfig()) -> IndexMap:
    """Pixels left with fewer than three unsaturated samples."""
    return IndexMap(satmap.counts > satmap.steps - config.min_valid)


def temporal_unwrap(levels: Sequence[PhaseMap], periods: Sequence[float]) -> list[PhaseMap]:
    """Hierarchical unwrapping; level 1 is taken as already absolute.

    A pixel is valid at level m only if it is valid at level m-1 as well.
    """
    if len(levels) != len(periods):
        raise ValueError("one period per level required")
    if any(b >= a for a, b in zip(periods, periods[1:])):
        raise ValueError("periods must strictly decrease")
    first = levels[0]
    out = [PhaseMap(first.values, first.valid, "unwrapped")]
    for m in range(1, len(levels)):
        prev, cur = out[-1], levels[m]
        if cur.shape != prev.shape:
            raise DimensionMismatchError("levels differ in size")
        ratio = periods[m - 1] / periods[m]
        valid = prev.valid & cur.valid
        with np.errstate(invalid="ignore"):
            k = round_half_away((prev.values * ratio - cur.values) / (2 * np.pi))
            unwrapped = cur.values + 2 * np.pi * k
        out.append(PhaseMap(unwrapped, valid, "unwrapped"))
    return out


def replacement_masks(unavailable: Sequence[np.ndarray]) -> list[np.ndarray]:
    """``rep[m] = (all levels denser than m unavailable) & ~unavailable[m]``."""
    masks = []
    denser_all = np.ones(np.shape(unavailable[0]), dtype=bool)
    for m in range(len(unavailable) - 1, -1, -1):
        masks.append(denser_all & ~unavailable[m])
        denser_all = denser_all & unavailable[m]
    return masks[::-1]


def equivalent_phase(unwrapped: PhaseMap, period: float, densest_period: float) -> PhaseMap:
    return PhaseMap(unwrapped.values * (period / densest_period), unwrapped.valid, "equivalent")


def multi_freq_hdr(mset: MultiFreqSet, wrapped: Sequence[PhaseMap], config: HdrConfig = HdrConfig()):
    """Fuse a wrapped-phase ladder into one phase map on the densest scale.

    A level is unavailable at a pixel when it is oversaturated there or its
    unwrapping chain is broken; each pixel takes the densest available level.
    Returns ``(PhaseMap, FusionReport)``.
    """
    if len(wrapped) != len(mset):
        raise ValueError(f"{len(wrapped)} wrapped maps for {len(mset)} levels")
    return fuse_levels(mset.satmaps, mset.periods, wrapped, config)


def fuse_levels(satmaps: Sequence[SaturationMap], periods: Sequence[float],
                wrapped: Sequence[PhaseMap], config: HdrConfig = HdrConfig()):
    """:func:`multi_freq_hdr` on bare saturation maps and periods."""
    unwrapped = temporal_unwrap(wrapped, periods)
    eq = [equivalent_phase(u, p, periods[-1]) for u, p in zip(unwrapped, periods)]
    ind = [oversaturated(s, config).flags for s in satmaps]
    unavailable = [i | ~u.valid for i, u in zip(ind, unwrapped)]
    rep = replacement_masks(unavailable)

    fused = np.full(wrapped[0].shape, np.nan)
    for m, mask in enumerate(rep):
        fused[mask] = eq[m].values[mask]
    covered = np.logical_or.reduce(rep)
    report = FusionReport(
        replaced=[int(r.sum()) for r in rep[:-1]],
        from_densest=int(rep[-1].sum()),
        unrecoverable=int((~covered).sum()),
        oversaturated=[int(i.sum()) for i in ind],
        total=int(fused.size),
    )
    return PhaseMap(fused, covered, "equivalent"), report


def densest_only(mset: MultiFreqSet, wrapped: Sequence[PhaseMap], config: HdrConfig = HdrConfig()) -> PhaseMap:
    """Densest-level unwrapped phase with no looser-level replacement."""
    unwrapped = temporal_unwrap(wrapped, mset.periods)
    last = unwrapped[-1]
    ind = oversaturated(mset.satmaps[-1], config).flags
    return PhaseMap(last.values, last.valid & ~ind, "equivalent")


def naive_multi_freq(mset: MultiFreqSet) -> PhaseMap:
    """Conventional multi-frequency result: all samples used, densest level only."""
    wrapped = [naive_phase(s) for s in mset.stacks]
    last = temporal_unwrap(wrapped, mset.periods)[-1]
    return PhaseMap(last.values, last.valid, "equivalent")


def process_view(mset: MultiFreqSet, config: HdrConfig = HdrConfig()):
    """Full per-view chain: wrapped phases then fusion."""
    wrapped = [gen_phase_shifting(s, m, config) for s, m in mset.levels]
    fused, report = multi_freq_hdr(mset, wrapped, config)
    return fused, report, wrapped
