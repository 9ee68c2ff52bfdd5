"""Synthetic multi-database corpora with known measurement-system contamination.

The generator separates what a real measurement mixes together: a pool of
"true" subject responses shared or sliced across databases, and a per-database
measurement-system response (loudspeaker, per-ear microphone, room ripple)
added in dB. Because the contamination is additive and known exactly, the
cancellation behaviour of per-position normalization is testable to floating
point precision rather than by eyeball.

All values are snapped to a dyadic grid (multiples of 2^-16 dB) at creation:
sums of such values are exact in float64 and the results are exactly
representable in the f32 container payload, so synthesized databases
round-trip through disk bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    Database,
    FrequencyGrid,
    SourcePosition,
    SubjectHrtf,
    ValidationError,
    angle_between,
    POSITION_TOL_DEG,
)
from .seeding import make_rng

#: Built-in mirror-symmetric 12-position grid used by the command line tools.
GRID12_AZIMUTHS_EL0 = (0.0, 30.0, 90.0, 150.0, 180.0, 210.0, 270.0, 330.0)
GRID12_AZIMUTHS_EL45 = (0.0, 90.0, 180.0, 270.0)

_SNAP = float(1 << 16)  # 2^-16 dB grid; see module docstring


def grid12(distance: float = 1.2) -> list[SourcePosition]:
    pts = [SourcePosition(az, 0.0, distance) for az in GRID12_AZIMUTHS_EL0]
    pts += [SourcePosition(az, 45.0, distance) for az in GRID12_AZIMUTHS_EL45]
    return pts


def _snap(values: np.ndarray) -> np.ndarray:
    return np.round(values * _SNAP) / _SNAP


def _log_axis(grid: FrequencyGrid) -> np.ndarray:
    """Log-frequency coordinate warped to [0, 1] across the grid."""
    f = grid.frequencies()
    x = np.log10(1.0 + f / 100.0)
    return x / x[-1]


def _smooth_curve(rng: np.random.Generator, x: np.ndarray, n_terms: int,
                  amp_low: float, amp_high: float) -> np.ndarray:
    """Random smooth dB curve: sum of n_terms cosines over the warped axis."""
    amps = rng.uniform(amp_low, amp_high, n_terms)
    phases = rng.uniform(0.0, 2.0 * np.pi, n_terms)
    periods = np.arange(1, n_terms + 1)
    return np.sum(amps[:, None] * np.cos(np.pi * periods[:, None] * x[None, :] + phases[:, None]), axis=0)


_EAR_AXES = np.array([[0.0, 1.0, 0.0], [0.0, -1.0, 0.0]])  # left, right


def _head_shadow(grid: FrequencyGrid, position: SourcePosition) -> np.ndarray:
    """Attenuation (2, n_bins): grows with frequency and source-to-ear angle.

    Zero at DC and on the ipsilateral axis; 20 dB at Nyquist for a fully
    contralateral source. Identical for all subjects.
    """
    f_rel = grid.frequencies() / grid.nyquist
    cos_angle = _EAR_AXES @ position.direction()
    depth = 20.0 * (1.0 - cos_angle) / 2.0
    return -depth[:, None] * f_rel[None, :]


def _pinna_notch(grid: FrequencyGrid, elevation: float, t0: float, slope: float) -> np.ndarray:
    """Gaussian notch in log-frequency, 15 dB deep, 0.1 octave wide.

    The center frequency is an elevation-dependent point in [6, 12] kHz,
    parameterized per subject by (t0, slope).
    """
    t = np.clip(t0 + slope * elevation / 90.0, 0.0, 1.0)
    center = 6000.0 * 2.0 ** t
    f = grid.frequencies()
    octaves = np.zeros_like(f)
    np.log2(f / center, out=octaves, where=f > 0.0)
    notch = -15.0 * np.exp(-0.5 * (octaves / 0.1) ** 2)
    notch[f <= 0.0] = 0.0
    return notch


@dataclass
class SubjectPool:
    """True (system-free) subject responses on a reference grid."""

    seed: int
    grid: FrequencyGrid
    positions: list[SourcePosition]
    subjects: list[SubjectHrtf]

    def as_database(self, name: str = "pool") -> Database:
        subjects = [SubjectHrtf(s.subject_id, s.spectra.copy()) for s in self.subjects]
        return Database(name, self.grid, list(self.positions), subjects,
                        {"synthetic": {"kind": "pool-truth", "pool_seed": self.seed}})


@dataclass
class SystemResponse:
    """Per-database measurement-system dB offsets over (position, ear, bin).

    loudspeaker: smooth random curve plus a direction-dependent spectral tilt
    microphone:  smooth random curve per ear, identical at every position
    room:        comb-filter magnitude ripple, reflection gain modulated by
                 elevation, with a per-database delay
    """

    seed: int
    grid: FrequencyGrid
    positions: list[SourcePosition]
    loudspeaker: np.ndarray  # (P, N)
    microphone: np.ndarray  # (2, N)
    room: np.ndarray  # (P, N)
    offsets: np.ndarray  # (P, 2, N), snapped sum of the three terms

    def max_abs_difference(self, other: "SystemResponse") -> float:
        return float(np.max(np.abs(self.offsets - other.offsets)))


def synth_subject_pool(
    count: int,
    positions: list[SourcePosition],
    grid: FrequencyGrid,
    seed: int,
    id_prefix: str = "s",
) -> SubjectPool:
    """Deterministic pool of ``count`` synthetic subjects.

    Each subject is a smooth random dB baseline (8 cosines, amplitudes up to
    3 dB), plus the shared head-shadow term, plus one subject-specific pinna
    notch. Left/right symmetry holds by construction: the right-ear response
    at azimuth a equals the left-ear response at 360 - a.
    """
    if count < 1:
        raise ValidationError(f"subject count must be >= 1, got {count}")
    x = _log_axis(grid)
    shadows = np.stack([_head_shadow(grid, p) for p in positions])  # (P, 2, N)
    elevations = [p.elevation for p in positions]
    subjects = []
    for s in range(count):
        rng = make_rng(seed, "subject", s)
        baseline = _smooth_curve(rng, x, 8, 0.0, 3.0)
        t0 = rng.uniform(0.15, 0.85)
        slope = rng.uniform(-0.35, 0.35)
        notches = np.stack([_pinna_notch(grid, el, t0, slope) for el in elevations])  # (P, N)
        spectra = baseline[None, None, :] + shadows + notches[:, None, :]
        subjects.append(SubjectHrtf(f"{id_prefix}{s:03d}", _snap(spectra)))
    return SubjectPool(seed, grid, list(positions), subjects)


def synth_system_response(
    grid: FrequencyGrid, positions: list[SourcePosition], seed: int
) -> SystemResponse:
    """Deterministic measurement-system response for one database.

    Term magnitudes are kept moderate so that databases are clearly
    classifiable before normalization without swamping subject variation:
    the position-independent parts (loudspeaker base curve, microphones)
    carry most of the signature, the position-dependent parts (tilt, room
    ripple) a smaller share. Every term stays within +/-12 dB.
    """
    x = _log_axis(grid)
    f = grid.frequencies()
    n_pos = len(positions)

    ls_rng = make_rng(seed, "loudspeaker")
    base = _smooth_curve(ls_rng, x, 6, 0.35, 1.45)
    tilt_axis = ls_rng.normal(size=3)
    tilt_axis /= np.linalg.norm(tilt_axis)
    tilt_scale = ls_rng.uniform(1.5, 3.0)
    ramp = 2.0 * x - 1.0
    loudspeaker = np.empty((n_pos, grid.n_bins))
    for i, p in enumerate(positions):
        loudspeaker[i] = base + tilt_scale * float(p.direction() @ tilt_axis) * ramp

    # Same microphone model in both ears: the right ear adds a small
    # independent deviation, so ear pooling leaves only a mild residual.
    mic_left = _smooth_curve(make_rng(seed, "microphone", 0), x, 6, 0.3, 1.2)
    mic_right = mic_left + _smooth_curve(make_rng(seed, "microphone", 1), x, 6, 0.08, 0.35)
    microphone = np.stack([mic_left, mic_right])

    room_rng = make_rng(seed, "room")
    gain0 = room_rng.uniform(0.12, 0.3)
    delay = room_rng.uniform(0.0008, 0.002)
    room = np.empty((n_pos, grid.n_bins))
    for i, p in enumerate(positions):
        gain = gain0 * (1.0 + 0.5 * np.sin(np.radians(p.elevation)))
        room[i] = 10.0 * np.log10(1.0 + gain**2 + 2.0 * gain * np.cos(2.0 * np.pi * f * delay))

    offsets = _snap(loudspeaker[:, None, :] + microphone[None, :, :] + room[:, None, :])
    return SystemResponse(seed, grid, list(positions), loudspeaker, microphone, room, offsets)


def _check_same_layout(pool: SubjectPool, sys: SystemResponse) -> None:
    if pool.grid != sys.grid:
        raise ValidationError(
            f"pool grid {pool.grid} does not match system grid {sys.grid}"
        )
    if len(pool.positions) != len(sys.positions) or any(
        angle_between(p, q) > POSITION_TOL_DEG for p, q in zip(pool.positions, sys.positions)
    ):
        raise ValidationError("pool and system response use different position lists")


def synth_database(pool: SubjectPool, sys: SystemResponse, name: str) -> Database:
    """Measured database: true subject dB plus system dB, exactly, per sample."""
    _check_same_layout(pool, sys)
    subjects = [SubjectHrtf(s.subject_id, s.spectra + sys.offsets) for s in pool.subjects]
    provenance = {
        "synthetic": {"kind": "measured", "pool_seed": pool.seed, "system_seed": sys.seed}
    }
    return Database(name, pool.grid, list(pool.positions), subjects, provenance)


@dataclass
class SynthCorpus:
    """A family of databases plus the ground truth that generated them."""

    databases: list[Database]
    pools: list[SubjectPool]
    systems: list[SystemResponse]


def synth_corpus(
    n_databases: int,
    n_subjects: int,
    positions: list[SourcePosition],
    grid: FrequencyGrid,
    seed: int,
    shared_pool: bool = True,
) -> SynthCorpus:
    """Seeded corpus of ``n_databases`` databases with distinct system responses.

    With ``shared_pool`` every database measures the same subjects, which makes
    per-position normalization cancel the system response exactly. Without it,
    each database gets its own subject slice from the same generative family.
    System responses are regenerated with a salted seed if a pair ever comes
    out closer than 1 dB anywhere (required to keep databases distinguishable).
    """
    if n_databases < 1:
        raise ValidationError(f"need at least one database, got {n_databases}")
    if shared_pool:
        pool = synth_subject_pool(n_subjects, positions, grid, seed=make_seed(seed, "pool"))
        pools = [pool] * n_databases
    else:
        pools = [
            synth_subject_pool(
                n_subjects, positions, grid,
                seed=make_seed(seed, "pool", i), id_prefix=f"d{i}s",
            )
            for i in range(n_databases)
        ]

    systems: list[SystemResponse] = []
    for i in range(n_databases):
        for attempt in range(16):
            sys = synth_system_response(grid, positions, seed=make_seed(seed, "system", i, attempt))
            if all(sys.max_abs_difference(prev) > 1.0 for prev in systems):
                break
        else:  # pragma: no cover - smooth random curves essentially never collide
            raise ValidationError(f"could not draw a distinguishable system response for database {i}")
        systems.append(sys)

    databases = [
        synth_database(pools[i], systems[i], name=f"db{i:02d}") for i in range(n_databases)
    ]
    return SynthCorpus(databases, pools, systems)


def make_seed(seed: int, *labels) -> int:
    """Derived 63-bit seed for a labelled sub-stream."""
    return int(make_rng(seed, *labels).integers(0, 2**63 - 1))
