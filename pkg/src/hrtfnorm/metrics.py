"""Log-spectral distortion and per-position diagnostics.

With spectra already stored in dB, the 20*log10 magnitude ratio between
ground truth and prediction is a plain dB difference, and the distortion is
the root mean square of those differences over positions and in-band bins.
When both ears are present they are pooled as additional positions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Database, FrequencyGrid, ValidationError

DEFAULT_BAND_LOW_HZ = 200.0
DEFAULT_BAND_HIGH_HZ = 18000.0


@dataclass(frozen=True)
class BandSelection:
    """Inclusive frequency band [f_low, f_high] resolved against a grid."""

    f_low: float = DEFAULT_BAND_LOW_HZ
    f_high: float = DEFAULT_BAND_HIGH_HZ

    def __post_init__(self):
        if not 0.0 <= self.f_low < self.f_high:
            raise ValidationError(
                f"band must satisfy 0 <= f_low < f_high, got [{self.f_low}, {self.f_high}]"
            )

    def bin_indices(self, grid: FrequencyGrid) -> np.ndarray:
        if self.f_high > grid.nyquist:
            raise ValidationError(
                f"band upper edge {self.f_high} Hz exceeds Nyquist {grid.nyquist} Hz"
            )
        f = grid.frequencies()
        idx = np.flatnonzero((f >= self.f_low) & (f <= self.f_high))
        if idx.size == 0:
            raise ValidationError(
                f"band [{self.f_low}, {self.f_high}] Hz selects no bins on this grid"
            )
        return idx


def _as_band_limited(truth, pred, grid: FrequencyGrid, band: BandSelection | None):
    truth = np.asarray(truth, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if truth.shape != pred.shape:
        raise ValidationError(f"shape mismatch: truth {truth.shape} vs prediction {pred.shape}")
    if truth.size == 0:
        raise ValidationError("empty spectra")
    if truth.shape[-1] != grid.n_bins:
        raise ValidationError(
            f"last axis has {truth.shape[-1]} bins but the grid has {grid.n_bins}"
        )
    idx = (band or BandSelection()).bin_indices(grid)
    return truth[..., idx], pred[..., idx]


def lsd(truth, pred, grid: FrequencyGrid, band: BandSelection | None = None) -> float:
    """RMS dB difference over all leading axes (positions, ears) and in-band bins."""
    t, p = _as_band_limited(truth, pred, grid, band)
    return float(np.sqrt(np.mean((t - p) ** 2)))


def lsd_per_position(
    truth, pred, grid: FrequencyGrid, band: BandSelection | None = None
) -> np.ndarray:
    """Per-position RMS dB difference; axis 0 indexes positions.

    Pooling the squares back over positions reproduces the global value:
    sqrt(mean(out**2)) == lsd(truth, pred).
    """
    t, p = _as_band_limited(truth, pred, grid, band)
    if t.ndim < 2:
        raise ValidationError("per-position distortion needs a leading position axis")
    sq = (t - p) ** 2
    return np.sqrt(sq.reshape(sq.shape[0], -1).mean(axis=1))


def database_lsd(
    truth_db: Database, pred_db: Database, band: BandSelection | None = None
) -> tuple[float, dict[str, float]]:
    """Mean and per-subject distortion between two databases.

    Subjects are matched by id; both ears enter the position pool.
    """
    if truth_db.grid != pred_db.grid:
        raise ValidationError("databases use different frequency grids")
    pred_by_id = {s.subject_id: s for s in pred_db.subjects}
    missing = [sid for sid in truth_db.subject_ids if sid not in pred_by_id]
    if missing:
        raise ValidationError(f"prediction database lacks subjects: {', '.join(missing)}")
    per_subject = {
        s.subject_id: lsd(s.spectra, pred_by_id[s.subject_id].spectra, truth_db.grid, band)
        for s in truth_db.subjects
    }
    return float(np.mean(list(per_subject.values()))), per_subject
