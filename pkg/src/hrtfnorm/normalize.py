"""Average-person responses and dB-domain normalization.

Normalizing a measured response by the database's average person divides the
two linear magnitudes, i.e. subtracts the average in dB. Any additive-in-dB
contamination shared by all subjects of a database (its measurement system)
is contained in the average and cancels, which is the entire point.

Three averaging modes:
  per-position-per-ear   one average per (position, ear), the full method
  position-independent   additionally pooled over the position set
  ear-independent        additionally pooled over the two ears

The average is snapped to a dyadic grid (multiples of 2^-30 dB) so that
normalize followed by denormalize is bit-exact in float64 on container data,
while the snap error (< 2^-31 dB) stays far below every stated tolerance.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import (
    Database,
    FrequencyGrid,
    SourcePosition,
    SubjectHrtf,
    ValidationError,
    angle_between,
    load_database,
    save_database,
    POSITION_TOL_DEG,
)

_AVG_SNAP = float(1 << 30)

AVERAGE_SUBJECT_ID = "__average__"


class NormalizationMode(Enum):
    PER_POSITION_PER_EAR = "per-position-per-ear"
    POSITION_INDEPENDENT = "position-independent"
    EAR_INDEPENDENT = "ear-independent"


@dataclass
class AverageHrtf:
    """Per-database average response, expanded back to (position, ear, bin).

    ``mean`` always has shape (len(positions), 2, n_bins); pooled modes store
    the pooled value repeated, which keeps application a plain subtraction.
    """

    mode: NormalizationMode
    grid: FrequencyGrid
    positions: list[SourcePosition]
    mean: np.ndarray
    subject_count: int
    source_name: str

    def __post_init__(self):
        self.mean = np.ascontiguousarray(self.mean, dtype=np.float64)
        expected = (len(self.positions), 2, self.grid.n_bins)
        if self.mean.shape != expected:
            raise ValidationError(f"average shape {self.mean.shape} does not match {expected}")
        if not np.isfinite(self.mean).all():
            raise ValidationError("average contains non-finite values")
        if self.subject_count < 1:
            raise ValidationError("average must cover at least one subject")

    def fingerprint(self) -> str:
        """Stable identity of this average, invariant under container round-trips.

        Hashes the f32 form of the mean (what the container stores) together
        with mode, grid, and positions.
        """
        h = hashlib.sha256()
        h.update(self.mode.value.encode())
        h.update(f"{self.grid.sample_rate}:{self.grid.n_bins}".encode())
        for p in self.positions:
            h.update(f"{p.azimuth!r}:{p.elevation!r}:{p.distance!r}".encode())
        h.update(self.mean.astype("<f4").tobytes())
        return h.hexdigest()[:16]


def compute_average_hrtf(
    db: Database,
    mode: NormalizationMode,
    positions: list[SourcePosition] | None = None,
) -> AverageHrtf:
    """dB mean across subjects, pooled further according to ``mode``.

    ``positions`` optionally restricts (and orders) the positions entering the
    average; by default all of the database's positions are used.
    """
    if positions is not None and len(positions) == 0:
        raise ValidationError("position restriction must not be empty")
    if positions is None:
        kept = list(db.positions)
        data = db.stack()
    else:
        idx = [db.position_index(p) for p in positions]
        kept = [db.positions[i] for i in idx]
        data = db.stack()[:, idx]

    mean = data.mean(axis=0)
    if mode is NormalizationMode.POSITION_INDEPENDENT:
        mean = np.broadcast_to(mean.mean(axis=0, keepdims=True), mean.shape)
    elif mode is NormalizationMode.EAR_INDEPENDENT:
        mean = np.broadcast_to(mean.mean(axis=1, keepdims=True), mean.shape)
    mean = np.round(mean * _AVG_SNAP) / _AVG_SNAP
    return AverageHrtf(mode, db.grid, kept, mean, len(db.subjects), db.name)


def _position_map(db: Database, avg: AverageHrtf) -> list[int]:
    if db.grid != avg.grid:
        raise ValidationError(
            f"grid mismatch: database {db.grid} vs average {avg.grid}"
        )
    idx = []
    for p in db.positions:
        for j, q in enumerate(avg.positions):
            if angle_between(p, q) <= POSITION_TOL_DEG:
                idx.append(j)
                break
        else:
            raise ValidationError(
                f"average for {avg.source_name!r} does not cover position "
                f"({p.azimuth}, {p.elevation}) of database {db.name!r}"
            )
    return idx


def normalize(db: Database, avg: AverageHrtf) -> Database:
    """Subtract the average response; provenance records mode and identity."""
    idx = _position_map(db, avg)
    offsets = avg.mean[idx]
    subjects = [SubjectHrtf(s.subject_id, s.spectra - offsets) for s in db.subjects]
    provenance = dict(db.provenance)
    provenance["normalization"] = {
        "mode": avg.mode.value,
        "average_fingerprint": avg.fingerprint(),
        "average_source": avg.source_name,
        "average_subject_count": avg.subject_count,
    }
    return Database(db.name, db.grid, list(db.positions), subjects, provenance)


def denormalize(db_norm: Database, avg: AverageHrtf) -> Database:
    """Add the average back. Refuses a mismatched average via provenance."""
    record = db_norm.provenance.get("normalization")
    if record is None:
        raise ValidationError(f"database {db_norm.name!r} carries no normalization provenance")
    if record.get("average_fingerprint") != avg.fingerprint():
        raise ValidationError(
            f"database {db_norm.name!r} was normalized with average "
            f"{record.get('average_fingerprint')} but got {avg.fingerprint()}"
        )
    idx = _position_map(db_norm, avg)
    offsets = avg.mean[idx]
    subjects = [SubjectHrtf(s.subject_id, s.spectra + offsets) for s in db_norm.subjects]
    provenance = dict(db_norm.provenance)
    del provenance["normalization"]
    return Database(db_norm.name, db_norm.grid, list(db_norm.positions), subjects, provenance)


def save_average(avg: AverageHrtf, path) -> None:
    """Store an average as an HRTFDB container with a single pseudo-subject."""
    db = Database(
        avg.source_name,
        avg.grid,
        list(avg.positions),
        [SubjectHrtf(AVERAGE_SUBJECT_ID, avg.mean)],
        {
            "average": {
                "mode": avg.mode.value,
                "subject_count": avg.subject_count,
                "source": avg.source_name,
            }
        },
    )
    save_database(db, path)


def load_average(path) -> AverageHrtf:
    db = load_database(path)
    record = db.provenance.get("average")
    if record is None or db.subject_ids != [AVERAGE_SUBJECT_ID]:
        raise ValidationError(f"{path}: not an average-response container")
    return AverageHrtf(
        NormalizationMode(record["mode"]),
        db.grid,
        list(db.positions),
        db.subjects[0].spectra,
        int(record["subject_count"]),
        record["source"],
    )
