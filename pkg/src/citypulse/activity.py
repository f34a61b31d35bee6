"""Unique-active-user aggregation, per-slot normalization, and land-use profiles.

The unit of analysis is the user, not the post: a user counts at most once per
(zone, time bin) however many events they produce there, which removes the
weight of compulsive posters. Normalization rescales each time bin so the
city-wide total is a fixed constant (100,000 by default), removing the diurnal
swing in overall platform usage.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .landuse import ACTIVITY_CATEGORIES, LandUseClass

logger = logging.getLogger(__name__)

N_QUARTER_BINS = 96
NORMALIZATION_TOTAL = 100_000.0

QUARTER_LABELS = tuple(f"bin_{k}" for k in range(N_QUARTER_BINS))

AssignedEvent = tuple[str, str, int]  # (user_id, zone_id, quarter bin)


@dataclass(frozen=True)
class MajorSlot:
    """Named aggregate of consecutive quarter-hour bins, inclusive bounds."""

    name: str
    start_bin: int
    end_bin: int

    def __post_init__(self):
        if not (0 <= self.start_bin <= self.end_bin <= N_QUARTER_BINS - 1):
            raise ConfigError(f"slot {self.name!r}: bins must satisfy 0 <= start <= end <= 95")

    @property
    def bins(self) -> range:
        return range(self.start_bin, self.end_bin + 1)


# Morning 08:00-13:59, afternoon 14:00-18:59, evening 19:00-21:59, night
# 22:00-23:59. Early-morning bins (00:00-07:59) belong to no major slot and are
# excluded from slot analyses while staying in the quarter-hour matrix.
DEFAULT_SLOTS: tuple[MajorSlot, ...] = (
    MajorSlot("morning", 32, 55),
    MajorSlot("afternoon", 56, 75),
    MajorSlot("evening", 76, 87),
    MajorSlot("night", 88, 95),
)


def validate_slots(slots: Sequence[MajorSlot]) -> None:
    if not slots:
        raise ConfigError("at least one major slot is required")
    seen: set[int] = set()
    names = [s.name for s in slots]
    if len(set(names)) != len(names):
        raise ConfigError("slot names must be unique")
    for slot in slots:
        overlap = seen.intersection(slot.bins)
        if overlap:
            raise ConfigError(f"slot {slot.name!r} overlaps another slot at bin {min(overlap)}")
        seen.update(slot.bins)


@dataclass
class ActivityMatrix:
    """Unique active users per zone per time bin; rows follow sorted zone_id."""

    zone_ids: tuple[str, ...]
    bin_labels: tuple[str, ...]
    counts: np.ndarray  # int64, zones x bins

    def zone_row(self, zone_id: str) -> np.ndarray:
        return self.counts[self.zone_ids.index(zone_id)]


@dataclass
class NormalizedMatrix:
    """Per-bin normalized user counts; every nonzero column sums to slot_total."""

    zone_ids: tuple[str, ...]
    bin_labels: tuple[str, ...]
    values: np.ndarray  # float64, zones x bins
    slot_total: float
    zero_bins: tuple[int, ...] = ()


@dataclass
class TemporalProfile:
    """Share of one class's daily normalized users falling in each quarter-hour bin."""

    label: str
    shares: np.ndarray  # length 96, sums to 1
    daily_total: float = 0.0


def _event_arrays(events: Iterable[AssignedEvent],
                  zone_ids: Sequence[str] | None,
                  ) -> tuple[tuple[str, ...], np.ndarray, np.ndarray, np.ndarray]:
    """Encode the event stream as integer arrays (user idx, zone idx, bin)."""
    user_index: dict[str, int] = {}
    users: list[int] = []
    zones: list[str] = []
    bins: list[int] = []
    for user_id, zone_id, b in events:
        idx = user_index.setdefault(user_id, len(user_index))
        users.append(idx)
        zones.append(zone_id)
        bins.append(b)
    if zone_ids is None:
        ordered = tuple(sorted(set(zones)))
    else:
        ordered = tuple(sorted(zone_ids))
    zone_index = {z: i for i, z in enumerate(ordered)}
    try:
        zone_arr = np.fromiter((zone_index[z] for z in zones), dtype=np.int64, count=len(zones))
    except KeyError as exc:
        raise DataError(f"event references unknown zone {exc.args[0]!r}") from exc
    bin_arr = np.asarray(bins, dtype=np.int64)
    if len(bin_arr) and (bin_arr.min() < 0 or bin_arr.max() >= N_QUARTER_BINS):
        raise DataError("event bin outside 0..95")
    return ordered, np.asarray(users, dtype=np.int64), zone_arr, bin_arr


def _dedup_matrix(users: np.ndarray, zones: np.ndarray, cols: np.ndarray,
                  n_zones: int, n_cols: int) -> np.ndarray:
    """Count distinct users per (zone, column); cols < 0 are dropped."""
    keep = cols >= 0
    users, zones, cols = users[keep], zones[keep], cols[keep]
    counts = np.zeros((n_zones, n_cols), dtype=np.int64)
    if len(users) == 0:
        return counts
    # collapse duplicate (user, zone, col) triples, then count per cell
    key = (users * n_zones + zones) * n_cols + cols
    cells = np.unique(key) % (n_zones * n_cols)
    np.add.at(counts, (cells // n_cols, cells % n_cols), 1)
    return counts


def count_unique_users(events: Iterable[AssignedEvent],
                       zone_ids: Sequence[str] | None = None) -> ActivityMatrix:
    """Distinct users per (zone, quarter-hour bin) across the whole input.

    A user active in two zones in the same bin counts once in each; a user
    active in one zone across two bins counts once per bin; repeat events in
    the same cell (including on different days) collapse to one.
    """
    ordered, users, zones, bins = _event_arrays(events, zone_ids)
    counts = _dedup_matrix(users, zones, bins, len(ordered), N_QUARTER_BINS)
    return ActivityMatrix(ordered, QUARTER_LABELS, counts)


def aggregate_major_slots(events: Iterable[AssignedEvent],
                          slots: Sequence[MajorSlot] = DEFAULT_SLOTS,
                          zone_ids: Sequence[str] | None = None) -> ActivityMatrix:
    """Distinct users per (zone, major slot), re-deduplicated at slot scope.

    Slot counts are recomputed from the event stream rather than summed from
    quarter-hour counts: a user active in two bins of the same slot counts
    once. Bins outside every slot are excluded.
    """
    validate_slots(slots)
    slot_of = np.full(N_QUARTER_BINS, -1, dtype=np.int64)
    for i, slot in enumerate(slots):
        slot_of[slot.start_bin:slot.end_bin + 1] = i
    ordered, users, zones, bins = _event_arrays(events, zone_ids)
    counts = _dedup_matrix(users, zones, slot_of[bins] if len(bins) else bins,
                           len(ordered), len(slots))
    return ActivityMatrix(ordered, tuple(s.name for s in slots), counts)


def count_daily_unique(events: Iterable[AssignedEvent],
                       zone_ids: Sequence[str] | None = None) -> ActivityMatrix:
    """Distinct users per zone over the whole day (single-column matrix)."""
    ordered, users, zones, bins = _event_arrays(events, zone_ids)
    counts = _dedup_matrix(users, zones, np.zeros_like(bins), len(ordered), 1)
    return ActivityMatrix(ordered, ("day",), counts)


def normalize_counts(matrix: ActivityMatrix,
                     slot_total: float = NORMALIZATION_TOTAL) -> NormalizedMatrix:
    """Rescale every column so it sums to ``slot_total``.

    Columns with no active users at all are left as zeros and flagged in
    ``zero_bins`` rather than treated as fatal.
    """
    counts = matrix.counts.astype(float)
    col_sums = counts.sum(axis=0)
    zero = col_sums == 0
    safe = np.where(zero, 1.0, col_sums)
    values = counts / safe * slot_total
    zero_bins = tuple(int(i) for i in np.flatnonzero(zero))
    if zero_bins:
        logger.info("%d time bins have no active users", len(zero_bins))
    return NormalizedMatrix(matrix.zone_ids, matrix.bin_labels, values,
                            float(slot_total), zero_bins)


MAIN_CLASS_ORDER = ("residential", "mixed", "activity")


def profile_labels(classes: Mapping[str, LandUseClass]) -> list[str]:
    """Deterministic profile label order: main kinds, then activity subcategories."""
    kinds = {cls.kind for cls in classes.values()}
    subs = {cls.sub for cls in classes.values() if cls.kind == "activity"}
    labels = [k for k in MAIN_CLASS_ORDER if k in kinds]
    labels.extend(f"activity:{c.value}" for c in ACTIVITY_CATEGORIES if c in subs)
    return labels


def landuse_profile(normalized: NormalizedMatrix,
                    classes: Mapping[str, LandUseClass],
                    ) -> tuple[list[TemporalProfile], list[str]]:
    """Temporal profile per land-use class from the quarter-hour normalized matrix.

    Every zone's normalized users are assigned to its predominant class; the
    per-bin class totals divided by the class daily total give the shares.
    Profiles are built for the three main kinds and, additionally, for each
    activity subcategory present. Classes with zero daily total are omitted
    and reported; unclassified zones are skipped.
    """
    if len(normalized.bin_labels) != N_QUARTER_BINS:
        raise DataError("land-use profiles require the quarter-hour normalized matrix")
    rows_by_label: dict[str, list[int]] = {}
    for i, zone_id in enumerate(normalized.zone_ids):
        cls = classes.get(zone_id)
        if cls is None:
            continue
        rows_by_label.setdefault(cls.kind, []).append(i)
        if cls.kind == "activity":
            rows_by_label.setdefault(cls.key, []).append(i)

    profiles: list[TemporalProfile] = []
    omitted: list[str] = []
    for label in profile_labels(classes):
        rows = rows_by_label.get(label)
        if not rows:
            continue
        totals = normalized.values[rows].sum(axis=0)
        daily = float(totals.sum())
        if daily == 0.0:
            omitted.append(label)
            continue
        profiles.append(TemporalProfile(label, totals / daily, daily))
    if omitted:
        logger.warning("classes with no activity omitted from profiles: %s",
                       ", ".join(omitted))
    return profiles, omitted


def density_per_hectare(class_totals: Mapping[str, float],
                        class_areas_ha: Mapping[str, float],
                        ) -> tuple[dict[str, float], list[str]]:
    """Daily normalized users per hectare for each class; zero-area classes omitted."""
    densities: dict[str, float] = {}
    omitted: list[str] = []
    for label in class_totals:
        area = float(class_areas_ha.get(label, 0.0))
        if area <= 0.0:
            omitted.append(label)
            continue
        densities[label] = float(class_totals[label]) / area
    if omitted:
        logger.warning("classes with zero area omitted from densities: %s",
                       ", ".join(sorted(omitted)))
    return densities, omitted
