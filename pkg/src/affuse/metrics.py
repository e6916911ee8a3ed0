"""Concordance and multitask loss metrics.

All statistics are population statistics (divide by N) computed in double
precision, so the loss used during training and the reported scores agree
exactly. The concordance correlation is evaluated in its covariance form

    CCC = 2 * cov(x, y) / (var(x) + var(y) + (mean(x) - mean(y))**2)

which stays finite when one series is constant (covariance zero gives a
score of zero instead of an undefined Pearson correlation).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, InvalidWeightsError, ZeroVarianceError

DIMENSIONS = ("valence", "arousal", "dominance")

_WEIGHT_TOL = 1e-9


@dataclass(frozen=True)
class EmotionTriple:
    """Valence/arousal/dominance score record."""

    valence: float
    arousal: float
    dominance: float

    def __post_init__(self):
        for name in DIMENSIONS:
            value = getattr(self, name)
            if not np.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value!r}")

    def as_array(self) -> np.ndarray:
        return np.array([self.valence, self.arousal, self.dominance], dtype=np.float64)

    @classmethod
    def from_array(cls, values) -> "EmotionTriple":
        v, a, d = np.asarray(values, dtype=np.float64)
        return cls(float(v), float(a), float(d))


@dataclass(frozen=True)
class MtlWeights:
    """Multitask loss weights for valence (alpha) and arousal (beta).

    The dominance weight is the remainder 1 - alpha - beta and must not be
    negative, so alpha + beta <= 1.
    """

    alpha: float
    beta: float

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise InvalidWeightsError(
                f"weights must be non-negative, got alpha={self.alpha}, beta={self.beta}"
            )
        if self.alpha + self.beta > 1.0 + _WEIGHT_TOL:
            raise InvalidWeightsError(
                f"alpha + beta must not exceed 1, got {self.alpha} + {self.beta}"
            )

    @property
    def dominance(self) -> float:
        return max(0.0, 1.0 - self.alpha - self.beta)

    def as_array(self) -> np.ndarray:
        return np.array([self.alpha, self.beta, self.dominance], dtype=np.float64)


def as_score_series(values, name: str = "series") -> np.ndarray:
    """Validate and convert a score series to a 1-D float64 array.

    A score series needs at least two entries and all values finite.
    """
    x = np.asarray(values, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {x.shape}")
    if x.size < 2:
        raise ValueError(f"{name} needs length >= 2, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite values")
    return x


def _pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    xs = as_score_series(x, "x")
    ys = as_score_series(y, "y")
    if xs.size != ys.size:
        raise ValueError(f"series lengths differ: {xs.size} vs {ys.size}")
    return xs, ys


def pearson(x, y) -> float:
    """Pearson correlation coefficient between two equal-length series.

    Raises:
        ZeroVarianceError: if either series is constant.
    """
    xs, ys = _pair(x, y)
    dx = xs - xs.mean()
    dy = ys - ys.mean()
    sx = np.sqrt(np.mean(dx * dx))
    sy = np.sqrt(np.mean(dy * dy))
    if sx == 0.0 or sy == 0.0:
        raise ZeroVarianceError("pearson undefined for a constant series")
    r = np.mean(dx * dy) / (sx * sy)
    return float(np.clip(r, -1.0, 1.0))


def ccc(x, y) -> float:
    """Concordance correlation coefficient, covariance form.

    Constant series are handled gracefully (zero covariance gives 0) except
    for the fully degenerate case of two constant series with equal means,
    where the denominator vanishes.
    """
    xs, ys = _pair(x, y)
    dx = xs - xs.mean()
    dy = ys - ys.mean()
    cov = np.mean(dx * dy)
    var_x = np.mean(dx * dx)
    var_y = np.mean(dy * dy)
    denom = var_x + var_y + (xs.mean() - ys.mean()) ** 2
    if denom == 0.0:
        raise DegenerateInputError(
            "CCC undefined: both series constant with equal means"
        )
    # The exact value lies in [-1, 1]; the clip only guards float round-off.
    return float(np.clip(2.0 * cov / denom, -1.0, 1.0))


def ccc_loss(x, y) -> float:
    """Concordance loss 1 - CCC, in [0, 2]."""
    return 1.0 - ccc(x, y)


def per_dimension_ccc(pred, gold) -> np.ndarray:
    """CCC per emotion dimension for (n, 3) prediction/label arrays."""
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gold, dtype=np.float64)
    if p.shape != g.shape or p.ndim != 2 or p.shape[1] != 3:
        raise ValueError(f"expected matching (n, 3) arrays, got {p.shape} and {g.shape}")
    return np.array([ccc(p[:, k], g[:, k]) for k in range(3)], dtype=np.float64)


def mtl_loss(pred, gold, weights: MtlWeights) -> float:
    """Weighted multitask concordance loss over the three dimensions.

    ``pred`` and ``gold`` are (n, 3) arrays (columns: valence, arousal,
    dominance). The total is alpha * loss_V + beta * loss_A +
    (1 - alpha - beta) * loss_D.
    """
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gold, dtype=np.float64)
    if p.shape != g.shape or p.ndim != 2 or p.shape[1] != 3:
        raise ValueError(f"expected matching (n, 3) arrays, got {p.shape} and {g.shape}")
    w = weights.as_array()
    losses = np.array([ccc_loss(p[:, k], g[:, k]) for k in range(3)])
    return float(np.dot(w, losses))


def mean_ccc(values) -> float:
    """Arithmetic mean of the three per-dimension CCC scores."""
    v = np.asarray(values, dtype=np.float64)
    if v.shape != (3,):
        raise ValueError(f"expected exactly three values, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("CCC values must be finite")
    return float(v.mean())
