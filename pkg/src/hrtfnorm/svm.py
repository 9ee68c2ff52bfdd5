"""RBF-kernel soft-margin SVM trained from scratch with SMO.

Solves the kernelized dual

    min_a  1/2 a'Qa - sum(a)   s.t.  y'a = 0,  0 <= a <= C,   Q_ij = y_i y_j K_ij

by sequential minimal optimization with second-order working-set selection:
pick the most violating index i among the upward-feasible set, then the
partner j giving the largest guaranteed objective decrease. Convergence is
declared when the maximal KKT violation m(a) - M(a) drops below ``tol``.

Multiclass is one-vs-one with majority voting; a decision value of exactly
zero votes for the lower class index, and vote ties resolve to the lowest
class index, which keeps predictions deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ValidationError

DEFAULT_TOL = 1e-3
DEFAULT_MAX_ITER = 1_000_000


class ConvergenceError(Exception):
    """SMO failed to reach the KKT tolerance within the iteration budget."""


def rbf_kernel(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    """exp(-gamma * ||x - x'||^2) for all row pairs of a and b."""
    sq = (
        np.sum(a**2, axis=1)[:, None]
        + np.sum(b**2, axis=1)[None, :]
        - 2.0 * (a @ b.T)
    )
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-gamma * sq)


def solve_smo(
    kernel: np.ndarray,
    y: np.ndarray,
    C: float,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> tuple[np.ndarray, float, float, int]:
    """Solve one binary dual problem.

    Returns (alpha, bias, kkt_residual, iterations). ``y`` must be -1/+1.
    """
    n = y.size
    q = kernel * np.outer(y, y)
    q_diag = np.diag(q).copy()
    alpha = np.zeros(n)
    grad = -np.ones(n)  # gradient of the dual objective at alpha = 0
    pos = y > 0

    it = 0
    residual = np.inf
    while True:
        viol = -y * grad
        up = np.where(pos, alpha < C, alpha > 0)
        low = np.where(pos, alpha > 0, alpha < C)
        up_viol = np.where(up, viol, -np.inf)
        low_viol = np.where(low, viol, np.inf)
        i = int(np.argmax(up_viol))
        m = up_viol[i]
        m_low = float(np.min(low_viol))
        residual = m - m_low
        if residual <= tol or not np.isfinite(residual):
            residual = max(residual, 0.0) if np.isfinite(residual) else 0.0
            break
        if it >= max_iter:
            raise ConvergenceError(
                f"SMO did not converge: residual {residual:.3e} > tol {tol:.1e} "
                f"after {it} pair updates (n={n}, C={C})"
            )

        # Second-order partner choice: largest decrease among violators.
        gap = m - viol
        cand = low & (gap > 0.0)
        quad = q_diag[i] + q_diag - 2.0 * y[i] * y * kernel[i]
        np.maximum(quad, 1e-12, out=quad)
        gain = np.where(cand, gap**2 / quad, -np.inf)
        j = int(np.argmax(gain))

        # Newton step along the feasible pair direction, clipped to the box.
        # Parametrize alpha_j += t, alpha_i -= y_i y_j t.
        same_sign = y[i] == y[j]
        t_star = -y[j] * (m - viol[j]) / quad[j]
        if same_sign:
            t_lo = max(-alpha[j], alpha[i] - C)
            t_hi = min(C - alpha[j], alpha[i])
        else:
            t_lo = max(-alpha[j], -alpha[i])
            t_hi = min(C - alpha[j], C - alpha[i])
        t = min(max(t_star, t_lo), t_hi)
        d_j = t
        d_i = -y[i] * y[j] * t
        alpha[i] += d_i
        alpha[j] += d_j
        grad += q[:, i] * d_i + q[:, j] * d_j
        it += 1

    free = (alpha > 1e-12) & (alpha < C - 1e-12)
    if np.any(free):
        bias = float(np.mean((-y * grad)[free]))
    elif np.isfinite(m) and np.isfinite(m_low):
        bias = float((m + m_low) / 2.0)
    else:
        bias = 0.0
    return alpha, bias, float(residual), it


@dataclass
class BinarySvm:
    """One trained pairwise classifier (+1 = first class of the pair)."""

    class_pair: tuple[int, int]
    support_vectors: np.ndarray
    coefficients: np.ndarray  # alpha * y at the support vectors
    bias: float
    kkt_residual: float
    iterations: int

    def decision(self, x_std: np.ndarray, gamma: float) -> np.ndarray:
        k = rbf_kernel(np.atleast_2d(x_std), self.support_vectors, gamma)
        return k @ self.coefficients + self.bias


@dataclass
class SvmModel:
    """One-vs-one RBF C-SVC with per-dimension standardization."""

    label_names: list[str]
    feature_mean: np.ndarray
    feature_scale: np.ndarray
    gamma: float
    C: float
    tol: float
    pairs: list[BinarySvm]

    @property
    def n_features(self) -> int:
        return self.feature_mean.size

    def standardize(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.n_features:
            raise ValidationError(
                f"feature dimension {x.shape[1]} does not match model ({self.n_features})"
            )
        return (x - self.feature_mean) / self.feature_scale


def resolve_gamma(x_std: np.ndarray, gamma: float | None) -> float:
    """Explicit gamma, or 1 / (d * mean per-dimension variance) when None."""
    if gamma is not None:
        if gamma <= 0:
            raise ValidationError(f"gamma must be positive, got {gamma}")
        return float(gamma)
    d = x_std.shape[1]
    mean_var = float(np.mean(np.var(x_std, axis=0)))
    if mean_var <= 0.0:
        return 1.0 / d
    return 1.0 / (d * mean_var)


def fit_svm(
    features: np.ndarray,
    labels: np.ndarray,
    label_names: list[str],
    C: float = 1.0,
    gamma: float | None = None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> SvmModel:
    """Train a one-vs-one RBF C-SVC on an already-assembled design matrix."""
    if C <= 0:
        raise ValidationError(f"C must be positive, got {C}")
    x = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if classes.size < 2:
        raise ValidationError("training data must contain at least two classes")

    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale == 0.0] = 1.0
    x_std = (x - mean) / scale
    gamma_value = resolve_gamma(x_std, gamma)

    pairs = []
    for ai in range(classes.size):
        for bi in range(ai + 1, classes.size):
            a, b = int(classes[ai]), int(classes[bi])
            mask = (labels == a) | (labels == b)
            x_pair = x_std[mask]
            y_pair = np.where(labels[mask] == a, 1.0, -1.0)
            kernel = rbf_kernel(x_pair, x_pair, gamma_value)
            if not np.isfinite(kernel).all():
                raise ValidationError(f"non-finite kernel values for class pair ({a}, {b})")
            alpha, bias, residual, iters = solve_smo(kernel, y_pair, C, tol, max_iter)
            sv = alpha > 1e-12
            pairs.append(
                BinarySvm(
                    (a, b),
                    x_pair[sv].copy(),
                    (alpha * y_pair)[sv],
                    bias,
                    residual,
                    iters,
                )
            )
    return SvmModel(list(label_names), mean, scale, gamma_value, C, tol, pairs)


def decision_values(model: SvmModel, x: np.ndarray) -> dict[tuple[int, int], np.ndarray]:
    """Pairwise decision values for each row of x."""
    x_std = model.standardize(x)
    return {p.class_pair: p.decision(x_std, model.gamma) for p in model.pairs}


def predict_many(model: SvmModel, x: np.ndarray) -> np.ndarray:
    """One-vs-one majority vote; ties go to the lowest class index."""
    x_std = model.standardize(x)
    votes = np.zeros((x_std.shape[0], len(model.label_names)), dtype=np.int64)
    for p in model.pairs:
        d = p.decision(x_std, model.gamma)
        a, b = p.class_pair
        votes[:, a] += d >= 0.0
        votes[:, b] += d < 0.0
    return np.argmax(votes, axis=1)  # argmax takes the first (lowest) max


def predict(model: SvmModel, x: np.ndarray) -> int:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValidationError("predict expects a single feature vector")
    return int(predict_many(model, x[None, :])[0])
