"""Domain types, validation, and container I/O for HRTF magnitude databases.

Spectra are dB magnitudes (20*log10|H|): float64 in memory for all
computation, float32 in the on-disk container. Databases are immutable by
convention; every transformation constructs a new one, so any number of
concurrent readers is safe.

Container format "HRTFDB v1" (single file, little-endian):
  bytes 0-7    magic ``HRTFDB1\\0``
  bytes 8-11   u32 header length L
  bytes 12..   UTF-8 JSON header with fields
               {name, sample_rate, n_bins, positions: [[az, el, dist], ...],
                subjects: [id, ...], provenance}
  remainder    f32 payload, subject-major [subject][position][ear(L=0,R=1)][bin]
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

MAGIC = b"HRTFDB1\x00"

#: Angular tolerance (degrees) used everywhere two positions are matched.
POSITION_TOL_DEG = 0.1


class FormatError(Exception):
    """A container file cannot be parsed."""


class ValidationError(Exception):
    """Domain data violates an invariant."""


class Ear(IntEnum):
    LEFT = 0
    RIGHT = 1


@dataclass(frozen=True)
class FrequencyGrid:
    """Linear frequency grid from 0 Hz to Nyquist inclusive.

    Bin k sits at k * sample_rate / (2 * (n_bins - 1)) Hz.
    """

    sample_rate: int
    n_bins: int

    def __post_init__(self):
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise ValidationError(f"sample_rate must be a positive integer, got {self.sample_rate!r}")
        if self.n_bins < 2:
            raise ValidationError(f"n_bins must be >= 2, got {self.n_bins}")
        object.__setattr__(self, "sample_rate", int(self.sample_rate))
        object.__setattr__(self, "n_bins", int(self.n_bins))

    @property
    def nyquist(self) -> float:
        return self.sample_rate / 2.0

    def frequencies(self) -> np.ndarray:
        return np.arange(self.n_bins) * (self.sample_rate / (2.0 * (self.n_bins - 1)))


@dataclass(frozen=True)
class SourcePosition:
    """Direction and distance of a measurement source.

    Azimuth is stored canonically in [0, 360) degrees (0 front, 90 left),
    elevation in [-90, 90] degrees, distance in meters.
    """

    azimuth: float
    elevation: float
    distance: float = 1.0

    def __post_init__(self):
        az, el, dist = float(self.azimuth), float(self.elevation), float(self.distance)
        if not (math.isfinite(az) and math.isfinite(el) and math.isfinite(dist)):
            raise ValidationError(f"position coordinates must be finite, got ({az}, {el}, {dist})")
        if not -90.0 <= el <= 90.0:
            raise ValidationError(f"elevation must be in [-90, 90], got {el}")
        if dist <= 0.0:
            raise ValidationError(f"distance must be positive, got {dist}")
        object.__setattr__(self, "azimuth", az % 360.0)
        object.__setattr__(self, "elevation", el)
        object.__setattr__(self, "distance", dist)

    def direction(self) -> np.ndarray:
        """Unit direction vector; axis convention: x front, y left, z up."""
        az = math.radians(self.azimuth)
        el = math.radians(self.elevation)
        return np.array([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])


def angle_between(a: SourcePosition, b: SourcePosition) -> float:
    """Great-circle angle in degrees between two source directions.

    Distance is ignored: databases at different source distances still share
    directions. Uses the chord form, which is stable near 0.
    """
    half_chord = float(np.linalg.norm(a.direction() - b.direction())) / 2.0
    return math.degrees(2.0 * math.asin(min(1.0, half_chord)))


@dataclass
class SubjectHrtf:
    """One subject's dB magnitude spectra, indexed [position][ear][bin]."""

    subject_id: str
    spectra: np.ndarray

    def __post_init__(self):
        self.spectra = np.ascontiguousarray(self.spectra, dtype=np.float64)
        if self.spectra.ndim != 3 or self.spectra.shape[1] != 2:
            raise ValidationError(
                f"subject {self.subject_id!r}: spectra must have shape (positions, 2, bins), "
                f"got {self.spectra.shape}"
            )


@dataclass(eq=False)
class Database:
    """One HRTF database: grid, positions, per-subject dB spectra, provenance."""

    name: str
    grid: FrequencyGrid
    positions: list[SourcePosition]
    subjects: list[SubjectHrtf]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.positions = list(self.positions)
        self.subjects = list(self.subjects)
        validate_database(self)

    def stack(self) -> np.ndarray:
        """All spectra as one (subjects, positions, 2, bins) array."""
        return np.stack([s.spectra for s in self.subjects])

    @property
    def subject_ids(self) -> list[str]:
        return [s.subject_id for s in self.subjects]

    def position_index(self, p: SourcePosition, tol: float = POSITION_TOL_DEG) -> int:
        """Index of the stored position matching ``p`` within ``tol`` degrees."""
        for i, q in enumerate(self.positions):
            if angle_between(p, q) <= tol:
                return i
        raise ValidationError(
            f"database {self.name!r} has no position within {tol} deg of "
            f"({p.azimuth}, {p.elevation})"
        )


def validate_database(db: Database) -> None:
    if not db.subjects:
        raise ValidationError(f"database {db.name!r} has no subjects")
    n_pos = len(db.positions)
    for i in range(n_pos):
        for j in range(i + 1, n_pos):
            if angle_between(db.positions[i], db.positions[j]) <= POSITION_TOL_DEG:
                raise ValidationError(
                    f"database {db.name!r}: positions {i} and {j} coincide within "
                    f"{POSITION_TOL_DEG} deg"
                )
    expected = (n_pos, 2, db.grid.n_bins)
    for s in db.subjects:
        if s.spectra.shape != expected:
            raise ValidationError(
                f"database {db.name!r}: subject {s.subject_id!r} spectra shape "
                f"{s.spectra.shape} does not match {expected}"
            )
        if not np.isfinite(s.spectra).all():
            p, e, k = (int(v) for v in np.argwhere(~np.isfinite(s.spectra))[0])
            raise ValidationError(
                f"database {db.name!r}: non-finite sample in subject {s.subject_id!r} "
                f"at position {p}, ear {Ear(e).name}, bin {k}"
            )


def databases_equal(a: Database, b: Database) -> bool:
    """Field-for-field equality, bit-for-bit on spectra."""
    if (a.name, a.grid) != (b.name, b.grid):
        return False
    if a.positions != b.positions or a.subject_ids != b.subject_ids:
        return False
    if a.provenance != b.provenance:
        return False
    return all(np.array_equal(x.spectra, y.spectra) for x, y in zip(a.subjects, b.subjects))


def _header_dict(db: Database) -> dict:
    return {
        "name": db.name,
        "sample_rate": db.grid.sample_rate,
        "n_bins": db.grid.n_bins,
        "positions": [[p.azimuth, p.elevation, p.distance] for p in db.positions],
        "subjects": db.subject_ids,
        "provenance": db.provenance,
    }


def save_database(db: Database, path) -> None:
    """Write the HRTFDB v1 container. Deterministic: same database, same bytes."""
    validate_database(db)
    header = json.dumps(_header_dict(db), sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    header_bytes = header.encode("utf-8")
    payload = db.stack().astype("<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)


def load_database(path) -> Database:
    """Read and validate an HRTFDB v1 container.

    Spectra come back as float64 (exact widening of the f32 payload).
    """
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) or data[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: bad magic, not an HRTFDB v1 file")
    if len(data) < 12:
        raise FormatError(f"{path}: truncated header length field")
    (header_len,) = struct.unpack_from("<I", data, 8)
    if len(data) < 12 + header_len:
        raise FormatError(f"{path}: truncated header ({header_len} bytes declared)")
    try:
        header = json.loads(data[12 : 12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unparseable header: {exc}") from exc
    for key in ("name", "sample_rate", "n_bins", "positions", "subjects", "provenance"):
        if key not in header:
            raise FormatError(f"{path}: header missing field {key!r}")

    grid = FrequencyGrid(header["sample_rate"], header["n_bins"])
    positions = [SourcePosition(az, el, dist) for az, el, dist in header["positions"]]
    subject_ids = list(header["subjects"])
    n_sub, n_pos, n_bins = len(subject_ids), len(positions), grid.n_bins
    expected = n_sub * n_pos * 2 * n_bins * 4
    payload = data[12 + header_len :]
    if len(payload) < expected:
        raise FormatError(f"{path}: truncated payload, expected {expected} bytes, got {len(payload)}")
    if len(payload) > expected:
        raise FormatError(
            f"{path}: payload size {len(payload)} does not match header dimensions ({expected} bytes)"
        )
    values = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    values = values.reshape(n_sub, n_pos, 2, n_bins)
    subjects = [SubjectHrtf(sid, values[i]) for i, sid in enumerate(subject_ids)]
    return Database(header["name"], grid, positions, subjects, dict(header["provenance"]))


def find_common_positions(
    dbs: list[Database], tol: float = POSITION_TOL_DEG
) -> list[SourcePosition]:
    """Positions present in every database, matched by great-circle angle.

    Representatives come from the first database; the result is ordered by
    (elevation, azimuth). An empty intersection returns an empty list.
    """
    if len(dbs) < 2:
        raise ValidationError("need at least two databases to intersect positions")
    if tol < 0:
        raise ValidationError(f"tolerance must be non-negative, got {tol}")
    common = [
        p
        for p in dbs[0].positions
        if all(any(angle_between(p, q) <= tol for q in db.positions) for db in dbs[1:])
    ]
    common.sort(key=lambda p: (p.elevation, p.azimuth))
    return common


def select_positions(
    db: Database, positions: list[SourcePosition], tol: float = POSITION_TOL_DEG
) -> Database:
    """New database restricted to the given positions (in the given order)."""
    idx = [db.position_index(p, tol) for p in positions]
    kept = [db.positions[i] for i in idx]
    subjects = [SubjectHrtf(s.subject_id, s.spectra[idx]) for s in db.subjects]
    return Database(db.name, db.grid, kept, subjects, dict(db.provenance))
