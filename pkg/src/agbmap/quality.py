"""Flag-based footprint screening.

Five criteria, all enabled by default: quality flag equal to 1, no degrade
period, sensitivity strictly above 0.98, night acquisition, and full-power
beams only. A record is retained only if it passes every enabled criterion;
rejected records carry the full list of failed criteria.
"""
from __future__ import annotations

from dataclasses import dataclass

from .errors import ValidationError


@dataclass
class QualityCriteria:
    require_quality_flag: int = 1
    exclude_degrade: bool = True
    min_sensitivity: float = 0.98  # strict: sensitivity must exceed this
    require_night: bool = True
    require_power_beam: bool = True

    def __post_init__(self):
        if not 0.0 <= self.min_sensitivity <= 1.0:
            raise ValidationError(
                f"min_sensitivity must be in [0, 1], got {self.min_sensitivity}"
            )


def failed_criteria(record, criteria: QualityCriteria) -> list:
    """Names of the enabled criteria this record fails (empty if it passes)."""
    reasons = []
    if record.quality_flag != criteria.require_quality_flag:
        reasons.append("quality_flag")
    if criteria.exclude_degrade and record.degrade_flag:
        reasons.append("degrade_flag")
    if not record.sensitivity > criteria.min_sensitivity:
        reasons.append("sensitivity")
    if criteria.require_night and not record.night_acquisition:
        reasons.append("night_acquisition")
    if criteria.require_power_beam and not record.power_beam:
        reasons.append("power_beam")
    return reasons


def filter_quality(footprints, criteria: QualityCriteria | None = None):
    """Partition footprints into (retained, rejected) in input order.

    Returns (retained: list of records, rejected: list of (record, reasons)).
    """
    criteria = criteria or QualityCriteria()
    retained, rejected = [], []
    for record in footprints:
        reasons = failed_criteria(record, criteria)
        if reasons:
            rejected.append((record, reasons))
        else:
            retained.append(record)
    return retained, rejected
