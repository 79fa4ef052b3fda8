"""Closed-form reference models with known attribution ground truth.

These share the prediction interface of the LSTM regressor so every
attribution method can be validated against analytic answers.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError


class LinearModel:
    """f(x) = sum(w * x). Shapley values against any baseline are w*(x - base)."""

    def __init__(self, weights: np.ndarray):
        self.weights = np.asarray(weights, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ShapeError("weights must be a (B, T) matrix")

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-2:] != self.weights.shape:
            raise ShapeError(f"input shape {x.shape} does not match weights {self.weights.shape}")
        return x

    def predict(self, x: np.ndarray) -> np.ndarray | float:
        x = self._check(x)
        out = np.einsum("...bt,bt->...", x, self.weights)
        return float(out) if out.ndim == 0 else out

    def input_gradient(self, x: np.ndarray) -> np.ndarray:
        x = self._check(x)
        return np.broadcast_to(self.weights, x.shape).copy()

    def attribution_ground_truth(self, x: np.ndarray, baseline: np.ndarray) -> np.ndarray:
        return self.weights * (np.asarray(x) - np.asarray(baseline))


class AdditiveModel:
    """f(x) = sum_bt g_bt(x_bt) with g(v) = alpha*v + beta*v^2.

    For any baseline-substitution coalition game the exact per-feature
    Shapley value is g(x_bt) - g(base_bt).
    """

    def __init__(self, alpha: np.ndarray, beta: np.ndarray):
        self.alpha = np.asarray(alpha, dtype=np.float64)
        self.beta = np.asarray(beta, dtype=np.float64)
        if self.alpha.ndim != 2 or self.beta.shape != self.alpha.shape:
            raise ShapeError("alpha and beta must be matching (B, T) matrices")

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-2:] != self.alpha.shape:
            raise ShapeError(f"input shape {x.shape} does not match terms {self.alpha.shape}")
        return x

    def predict(self, x: np.ndarray) -> np.ndarray | float:
        x = self._check(x)
        out = (self.alpha * x + self.beta * x * x).sum(axis=(-2, -1))
        return float(out) if out.ndim == 0 else out

    def input_gradient(self, x: np.ndarray) -> np.ndarray:
        x = self._check(x)
        return self.alpha + 2.0 * self.beta * x

    def attribution_ground_truth(self, x: np.ndarray, baseline: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        b = np.asarray(baseline)
        return self.alpha * (x - b) + self.beta * (x * x - b * b)
