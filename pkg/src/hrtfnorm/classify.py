"""Database-identifiability evaluation.

Builds a labelled dataset of dB spectra (one sample per subject, position and
ear), trains the one-vs-one RBF C-SVC, and runs k-fold cross-validation with
a confusion matrix. The question the experiment answers: given a single
measured response, can a classifier tell which database it came from? After
good normalization the answer should be no.

Folds are subject-disjoint by default: all samples of one subject land in one
fold, so the classifier can never train and test on the same anatomy. A
sample-stratified strategy is available for comparison.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .core import Database, SourcePosition, ValidationError
from .seeding import make_rng
from .svm import (
    DEFAULT_MAX_ITER,
    DEFAULT_TOL,
    SvmModel,
    fit_svm,
    predict_many,
)


class FoldStrategy(Enum):
    SUBJECT_DISJOINT = "subject-disjoint"
    SAMPLE_STRATIFIED = "sample-stratified"


@dataclass
class LabeledDataset:
    """Feature vectors (dB spectra) with database labels and subject groups."""

    features: np.ndarray  # (n, d) float64
    labels: np.ndarray  # (n,) int
    groups: list[str]  # subject identity per sample
    label_names: list[str]

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = self.features.shape[0]
        if self.labels.shape != (n,) or len(self.groups) != n:
            raise ValidationError("features, labels, and groups must have equal lengths")
        if not np.isfinite(self.features).all():
            raise ValidationError("features contain non-finite values")

    @property
    def n_classes(self) -> int:
        return int(np.unique(self.labels).size)

    @property
    def cv_ready(self) -> bool:
        """False for degenerate datasets (fewer than two classes)."""
        return self.n_classes >= 2

    def class_counts(self) -> dict[str, int]:
        return {
            self.label_names[c]: int(np.sum(self.labels == c))
            for c in range(len(self.label_names))
        }


def build_dataset(
    dbs: list[Database],
    positions: list[SourcePosition],
    subjects_per_db: int,
    seed: int,
) -> LabeledDataset:
    """One sample per (subject, position, ear) from each database.

    Subjects are subsampled per database with the seeded stream
    (seed, "subset", db name); total per database is
    len(positions) * subjects_per_db * 2.
    """
    features = []
    labels = []
    groups = []
    for label, db in enumerate(dbs):
        if len(db.subjects) < subjects_per_db:
            raise ValidationError(
                f"database {db.name!r} has {len(db.subjects)} subjects, "
                f"need {subjects_per_db}"
            )
        idx = [db.position_index(p) for p in positions]
        rng = make_rng(seed, "subset", db.name)
        chosen = np.sort(rng.choice(len(db.subjects), size=subjects_per_db, replace=False))
        for s in chosen:
            subject = db.subjects[int(s)]
            for p in idx:
                for ear in (0, 1):
                    features.append(subject.spectra[p, ear])
                    labels.append(label)
                    groups.append(subject.subject_id)
    return LabeledDataset(np.array(features), np.array(labels), groups, [db.name for db in dbs])


def train_csvc(
    ds: LabeledDataset,
    C: float = 1.0,
    gamma: float | None = None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> SvmModel:
    """Fit the one-vs-one RBF C-SVC on the full dataset."""
    return fit_svm(ds.features, ds.labels, ds.label_names, C, gamma, tol, max_iter)


@dataclass
class CvReport:
    """Cross-validation outcome: confusion matrix and accuracies."""

    folds: int
    strategy: FoldStrategy
    seed: int
    C: float
    gamma: float | None
    label_names: list[str]
    confusion: np.ndarray  # (classes, classes) int counts, rows = true
    per_fold_accuracy: list[float]
    kkt_residuals: list[float] = field(default_factory=list)

    @property
    def total(self) -> int:
        return int(self.confusion.sum())

    @property
    def mean_accuracy(self) -> float:
        """Pooled accuracy over all held-out samples: trace / total."""
        return float(np.trace(self.confusion)) / float(self.total)

    def to_text(self) -> str:
        out = io.StringIO()
        gamma_str = "auto" if self.gamma is None else repr(self.gamma)
        print(f"folds={self.folds} strategy={self.strategy.value} seed={self.seed}", file=out)
        print(f"C={self.C!r} gamma={gamma_str}", file=out)
        print(f"classes={','.join(self.label_names)}", file=out)
        for k, acc in enumerate(self.per_fold_accuracy):
            print(f"fold {k} accuracy={acc:.6f}", file=out)
        print(f"mean accuracy={self.mean_accuracy:.6f}", file=out)
        print("confusion (rows true, columns predicted):", file=out)
        width = max(len(n) for n in self.label_names) + 2
        header = " " * width + "".join(f"{n:>{width}}" for n in self.label_names)
        print(header, file=out)
        for i, name in enumerate(self.label_names):
            row = "".join(f"{int(v):>{width}}" for v in self.confusion[i])
            print(f"{name:<{width}}{row}", file=out)
        return out.getvalue()

    def confusion_csv(self) -> str:
        lines = ["true\\predicted," + ",".join(self.label_names)]
        for i, name in enumerate(self.label_names):
            lines.append(name + "," + ",".join(str(int(v)) for v in self.confusion[i]))
        return "\n".join(lines) + "\n"


def _fold_assignment(
    ds: LabeledDataset, k: int, strategy: FoldStrategy, seed: int
) -> np.ndarray:
    """Fold index per sample."""
    n = ds.labels.size
    fold_of = np.full(n, -1, dtype=np.int64)
    if strategy is FoldStrategy.SUBJECT_DISJOINT:
        unique = sorted(set(ds.groups))
        if len(unique) < k:
            raise ValidationError(f"only {len(unique)} subject groups for {k} folds")
        order = make_rng(seed, "folds").permutation(len(unique))
        group_fold = {unique[g]: int(f % k) for f, g in enumerate(order)}
        for i, g in enumerate(ds.groups):
            fold_of[i] = group_fold[g]
    else:
        rng = make_rng(seed, "folds")
        for c in np.unique(ds.labels):
            idx = np.flatnonzero(ds.labels == c)
            idx = idx[rng.permutation(idx.size)]
            for pos, sample in enumerate(idx):
                fold_of[sample] = pos % k
    return fold_of


def cross_validate(
    ds: LabeledDataset,
    k: int = 5,
    strategy: FoldStrategy = FoldStrategy.SUBJECT_DISJOINT,
    C: float = 1.0,
    gamma: float | None = None,
    seed: int = 0,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> CvReport:
    """k-fold cross-validation with per-fold refitting of standardization.

    The confusion matrix accumulates held-out predictions over all folds;
    the reported mean accuracy is its trace divided by the total count.
    """
    if k < 2:
        raise ValidationError(f"need at least 2 folds, got {k}")
    if not ds.cv_ready:
        raise ValidationError("dataset has fewer than two classes; cannot cross-validate")
    n_classes = len(ds.label_names)
    fold_of = _fold_assignment(ds, k, strategy, seed)

    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    per_fold = []
    residuals = []
    for fold in range(k):
        test = fold_of == fold
        train = ~test
        if not np.any(test):
            raise ValidationError(f"fold {fold} is empty; use fewer folds")
        train_labels = ds.labels[train]
        present = np.unique(train_labels)
        if present.size < n_classes:
            missing = [ds.label_names[c] for c in range(n_classes) if c not in present]
            raise ValidationError(
                f"fold {fold} training set lacks classes {missing}; use fewer folds"
            )
        model = fit_svm(
            ds.features[train], train_labels, ds.label_names, C, gamma, tol, max_iter
        )
        residuals.extend(p.kkt_residual for p in model.pairs)
        predicted = predict_many(model, ds.features[test])
        truth = ds.labels[test]
        for t, p in zip(truth, predicted):
            confusion[int(t), int(p)] += 1
        per_fold.append(float(np.mean(predicted == truth)))

    return CvReport(
        folds=k,
        strategy=strategy,
        seed=seed,
        C=C,
        gamma=gamma,
        label_names=list(ds.label_names),
        confusion=confusion,
        per_fold_accuracy=per_fold,
        kkt_residuals=residuals,
    )
