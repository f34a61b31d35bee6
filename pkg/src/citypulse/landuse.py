"""Predominant land-use classification of zones and per-zone land-use area tables.

A zone is classed residential when more than ``PREDOMINANCE_THRESHOLD`` of its
built surface is residential, activity when more than the same share is
non-residential (carrying the dominant activity category), and mixed otherwise.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING, Iterable, Mapping

import numpy as np

from .errors import ClassificationError

if TYPE_CHECKING:
    from .spatial import Zone

logger = logging.getLogger(__name__)

PREDOMINANCE_THRESHOLD = 0.666


class LandUseCategory(Enum):
    """Closed set of land-use categories; enumeration order is the tie-break order."""

    OFFICE = "office"
    INDUSTRY = "industry"
    RETAIL = "retail"
    HEALTH = "health"
    EDUCATION = "education"
    CULTURE = "culture"
    TRANSPORT = "transport"
    PARK = "park"
    OTHER = "other"
    RESIDENTIAL = "residential"

    @property
    def column(self) -> str:
        """Column name used in zone input files, e.g. ``lu_retail_m2``."""
        return f"lu_{self.value}_m2"


CATEGORIES: tuple[LandUseCategory, ...] = tuple(LandUseCategory)
ACTIVITY_CATEGORIES: tuple[LandUseCategory, ...] = tuple(
    c for c in LandUseCategory if c is not LandUseCategory.RESIDENTIAL
)


@dataclass(frozen=True, order=True)
class LandUseClass:
    """Predominant class of a zone: residential, mixed, or activity with a subcategory."""

    kind: str  # "residential" | "mixed" | "activity"
    sub: LandUseCategory | None = None

    def __post_init__(self):
        if self.kind not in ("residential", "mixed", "activity"):
            raise ValueError(f"unknown land-use class kind {self.kind!r}")
        if self.kind == "activity":
            if self.sub is None or self.sub is LandUseCategory.RESIDENTIAL:
                raise ValueError("activity class requires a non-residential subcategory")
        elif self.sub is not None:
            raise ValueError(f"{self.kind} class carries no subcategory")

    @property
    def key(self) -> str:
        """Stable string form used in CSV exports, e.g. ``activity:retail``."""
        if self.kind == "activity":
            return f"activity:{self.sub.value}"
        return self.kind

    @classmethod
    def from_key(cls, key: str) -> "LandUseClass":
        if key.startswith("activity:"):
            return cls("activity", LandUseCategory(key.split(":", 1)[1]))
        return cls(key)


RESIDENTIAL = LandUseClass("residential")
MIXED = LandUseClass("mixed")


def residential_fraction(zone: "Zone") -> float:
    """Share of built surface that is residential; built_total_m2 must be > 0."""
    if zone.built_total_m2 <= 0:
        raise ClassificationError(zone.zone_id, "built_total_m2 is zero, cannot classify")
    return zone.built_residential_m2 / zone.built_total_m2


def classify_zone(zone: "Zone", threshold: float = PREDOMINANCE_THRESHOLD) -> LandUseClass:
    """Classify a zone by its residential share of built surface.

    Strictly above ``threshold`` is residential; strictly below ``1 - threshold``
    (non-residential predominant) is activity, labelled with the largest
    non-residential land-use area; the closed middle band is mixed. Activity
    ties break by the category enumeration order.
    """
    fraction = residential_fraction(zone)
    if fraction > threshold:
        return RESIDENTIAL
    if fraction < 1.0 - threshold:
        best = None
        best_area = -1.0
        for cat in ACTIVITY_CATEGORIES:
            area = float(zone.landuse_m2.get(cat, 0.0))
            if area > best_area:
                best, best_area = cat, area
        logger.debug("zone %s classed activity:%s (%.0f m2 dominant)",
                     zone.zone_id, best.value, best_area)
        return LandUseClass("activity", best)
    return MIXED


def classify_zones(zones: Iterable["Zone"],
                   threshold: float = PREDOMINANCE_THRESHOLD,
                   ) -> tuple[dict[str, LandUseClass], list[str]]:
    """Classify every zone; returns (zone_id -> class, ids that could not be classified).

    Unclassifiable zones (zero built surface) are excluded from profile analyses
    but stay in regressions with whatever areas they carry.
    """
    classes: dict[str, LandUseClass] = {}
    unclassified: list[str] = []
    for zone in zones:
        try:
            classes[zone.zone_id] = classify_zone(zone, threshold)
        except ClassificationError:
            unclassified.append(zone.zone_id)
    if unclassified:
        logger.warning("%d zones with zero built surface left unclassified", len(unclassified))
    return classes, unclassified


def landuse_area_table(zones: Iterable["Zone"]) -> tuple[list[str], np.ndarray]:
    """Dense zones x categories matrix of m2, rows by sorted zone_id.

    Column order is the fixed category enumeration; absent categories are 0.
    """
    ordered = sorted(zones, key=lambda z: z.zone_id)
    table = np.zeros((len(ordered), len(CATEGORIES)), dtype=float)
    for i, zone in enumerate(ordered):
        for j, cat in enumerate(CATEGORIES):
            table[i, j] = float(zone.landuse_m2.get(cat, 0.0))
    return [z.zone_id for z in ordered], table


def write_classification_csv(path,
                             zones: Iterable["Zone"],
                             classes: Mapping[str, LandUseClass]) -> None:
    """Export zone_id,class,subcategory,residential_fraction (unclassified rows blank)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["zone_id", "class", "subcategory", "residential_fraction"])
        for zone in sorted(zones, key=lambda z: z.zone_id):
            cls = classes.get(zone.zone_id)
            if cls is None:
                writer.writerow([zone.zone_id, "", "", ""])
                continue
            sub = cls.sub.value if cls.sub is not None else ""
            frac = zone.built_residential_m2 / zone.built_total_m2
            writer.writerow([zone.zone_id, cls.kind, sub, format(frac, ".6g")])
