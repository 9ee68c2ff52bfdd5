"""Left/right ear-mirroring augmentation.

Under lateral symmetry, a right-ear response measured at azimuth a is a
left-ear response at azimuth 360 - a. Folding every right-ear measurement
onto the mirrored position doubles the left-ear sample count: each subject
becomes two augmented subjects (suffix ``_L`` for its own left ear, ``_R``
for the mirrored right ear). The result is a regular database whose right
ear slot duplicates the left, recorded in provenance.
"""

from __future__ import annotations

from .core import (
    Database,
    SourcePosition,
    SubjectHrtf,
    ValidationError,
    angle_between,
    POSITION_TOL_DEG,
)

import numpy as np


def mirror_position(p: SourcePosition) -> SourcePosition:
    """Reflect a position across the median plane: azimuth -> (360 - azimuth)."""
    return SourcePosition((360.0 - p.azimuth) % 360.0, p.elevation, p.distance)


def _mirror_index(db: Database, tol: float) -> list[int]:
    """For each position index i, the index of its mirror in the same grid."""
    mapping = []
    unmatched = []
    for i, p in enumerate(db.positions):
        target = mirror_position(p)
        for j, q in enumerate(db.positions):
            if angle_between(target, q) <= tol:
                mapping.append(j)
                break
        else:
            unmatched.append(f"({p.azimuth}, {p.elevation})")
    if unmatched:
        raise ValidationError(
            f"database {db.name!r} is not mirror-closed within {tol} deg; "
            f"unmatched positions: {', '.join(unmatched)}"
        )
    return mapping


def mirror_augment(db: Database, tol: float = POSITION_TOL_DEG) -> Database:
    """Fold right-ear spectra onto mirrored positions, doubling the subjects.

    Requires the position grid to be closed under mirroring within ``tol``.
    Augmented subject ``s_L`` carries s's left ear as measured; ``s_R``
    carries s's right ear re-indexed so that its value at position q is the
    right-ear measurement at mirror(q). Both ear slots of the output hold the
    left-ear data.
    """
    mapping = _mirror_index(db, tol)
    subjects = []
    for s in db.subjects:
        left = s.spectra[:, 0, :]
        right_folded = s.spectra[mapping, 1, :]
        for suffix, data in (("_L", left), ("_R", right_folded)):
            spectra = np.stack([data, data], axis=1)
            subjects.append(SubjectHrtf(s.subject_id + suffix, spectra))
    provenance = dict(db.provenance)
    provenance["mirror_augmented"] = {"source_subjects": len(db.subjects)}
    return Database(db.name, db.grid, list(db.positions), subjects, provenance)
