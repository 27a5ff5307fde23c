"""Task risks, one-step adaptation and the A_F(α) matrix."""

from __future__ import annotations

from typing import Union

import numpy as np

from ..errors import ConfigError, DimensionMismatchError
from ..models import FixedSupport, RegressionTask

Design = Union[np.ndarray, FixedSupport]


def design_matrix(X_F: Design) -> np.ndarray:
    return X_F.X if isinstance(X_F, FixedSupport) else np.atleast_2d(np.asarray(X_F, dtype=np.float64))


def gram(X_F: Design) -> np.ndarray:
    if isinstance(X_F, FixedSupport):
        return X_F.gram
    X = design_matrix(X_F)
    return X.T @ X


def _delta(eta, task: RegressionTask) -> np.ndarray:
    eta = np.asarray(eta, dtype=np.float64).ravel()
    if eta.shape != task.theta.shape:
        raise DimensionMismatchError(f"eta has length {eta.size}, task dimension is {task.dim}")
    return eta - task.theta


def true_risk(eta, task: RegressionTask) -> float:
    """R(η; τ) = ½ (η−θ_τ)ᵀ Σ_τ (η−θ_τ) + ½ σ_τ²."""
    d = _delta(eta, task)
    return float(0.5 * d @ task.covariance @ d + 0.5 * task.sigma ** 2)


def fixed_support_risk(eta, X_F: Design, task: RegressionTask, per_sample: bool = True) -> float:
    """Expected squared loss on the fixed support design X_F (n rows).

    Total form: ½ (η−θ)ᵀ X_FᵀX_F (η−θ) + ½ n σ². With `per_sample` (default)
    the total is divided by n so it is comparable with `true_risk`.
    """
    d = _delta(eta, task)
    G = gram(X_F)
    if G.shape != (task.dim, task.dim):
        raise DimensionMismatchError("fixed support width must equal the task dimension")
    n = design_matrix(X_F).shape[0]
    total = 0.5 * d @ G @ d + 0.5 * n * task.sigma ** 2
    return float(total / n if per_sample else total)


def onestep_adapt(theta, X_s, y_s, alpha: float, normalize: bool = False) -> np.ndarray:
    """θ − α ∇_θ ½‖X_s θ − y_s‖², with the gradient divided by n when `normalize`."""
    theta = np.asarray(theta, dtype=np.float64).ravel()
    X_s = np.atleast_2d(np.asarray(X_s, dtype=np.float64))
    y_s = np.asarray(y_s, dtype=np.float64).ravel()
    if X_s.shape != (y_s.size, theta.size):
        raise DimensionMismatchError("support design must be n x p with n responses")
    grad = X_s.T @ (X_s @ theta - y_s)
    if normalize:
        grad = grad / X_s.shape[0]
    return theta - alpha * grad


def af_matrix(X_F: Design, alpha: float, n: int) -> np.ndarray:
    """A_F(α) = I − (α/n) X_FᵀX_F."""
    if n < 1:
        raise ConfigError("n must be at least 1")
    G = gram(X_F)
    return np.eye(G.shape[0]) - (alpha / n) * G


def step_scale(alpha: float, n: int, normalize: bool) -> float:
    """Effective inner step on X_sᵀX_s: α/n when normalized, α otherwise."""
    return alpha / n if normalize else alpha
