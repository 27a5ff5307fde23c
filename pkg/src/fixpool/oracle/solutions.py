"""Optimal and empirical solutions of the quadratic meta-regression objectives.

Population objectives are expectations over a finite TaskPopulation. The
ML inner expectation over Σ̂_τ = X_sᵀX_s/n is available in closed form for
Gaussian rows (E[Σ̂ΣΣ̂] = (1+1/n)Σ³ + tr(Σ²)Σ/n) or by Monte Carlo with
common random numbers across tasks.
"""

from __future__ import annotations

import logging
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .. import seeding
from ..errors import ConfigError, DegeneracyError, DimensionMismatchError
from ..models import RegressionTask, TaskPopulation
from ..parallel import pairwise_sum
from ..seeding import Seed
from ..taskspace import correlate_rows
from .risks import Design, af_matrix, design_matrix, step_scale

logger = logging.getLogger(__name__)

MAX_CONDITION = 1e12

TaskBatch = Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]
Objective = Callable[[np.ndarray], Tuple[float, np.ndarray]]


def spd_solve(H: np.ndarray, b: np.ndarray, what: str = "system") -> np.ndarray:
    """Solve H x = b for symmetric positive definite H, guarding the condition number."""
    H = 0.5 * (H + H.T)
    eig = np.linalg.eigvalsh(H)
    lam_min, lam_max = float(eig[0]), float(eig[-1])
    if lam_min <= 0 or lam_max / lam_min > MAX_CONDITION:
        raise DegeneracyError(f"{what} is singular or ill-conditioned (lambda_min={lam_min:.3e})")
    return cho_solve(cho_factor(H), b)


def _fixml_matrix(alpha: float, X_F: Design, normalize: bool) -> np.ndarray:
    n = design_matrix(X_F).shape[0]
    return af_matrix(X_F, alpha, n if normalize else 1)


# ─── FIX-ML ───


def theta_star_fml(alpha: float, X_F: Design, population: TaskPopulation, normalize: bool = True) -> np.ndarray:
    """(A E[Σ] A)⁻¹ E[A Σ A θ] with A = I − (α/n) X_FᵀX_F (or I − α X_FᵀX_F)."""
    A = _fixml_matrix(alpha, X_F, normalize)
    H = A @ population.expect(lambda t: t.covariance) @ A
    b = A @ population.expect(lambda t: t.covariance @ A @ t.theta)
    return spd_solve(H, b, "A E[Σ] A")


def fixml_population_objective(
    theta, alpha: float, X_F: Design, population: TaskPopulation, normalize: bool = True
) -> Tuple[float, np.ndarray]:
    """E_τ E_ε R(θ̂; τ) after one step on the fixed support, and its gradient."""
    theta = np.asarray(theta, dtype=np.float64)
    X = design_matrix(X_F)
    A = _fixml_matrix(alpha, X_F, normalize)
    a = step_scale(alpha, X.shape[0], normalize)

    def value(task: RegressionTask) -> float:
        d = theta - task.theta
        S = task.covariance
        noise = 0.5 * a ** 2 * task.sigma ** 2 * np.trace(X @ S @ X.T)
        return 0.5 * d @ A @ S @ A @ d + noise + 0.5 * task.sigma ** 2

    grad = population.expect(lambda t: A @ t.covariance @ A @ (theta - t.theta))
    return float(population.expect(value)), grad


# ─── ML ───


def ml_moment_exact(task: RegressionTask, a: float, n_support: int) -> np.ndarray:
    """E_Σ̂[(I − aΣ̂) Σ (I − aΣ̂)] for n_support Gaussian rows."""
    S = task.covariance
    S2 = S @ S
    S3 = S2 @ S
    return S - 2.0 * a * S2 + a ** 2 * ((1.0 + 1.0 / n_support) * S3 + np.trace(S2) * S / n_support)


def ml_moments(
    alpha: float,
    population: TaskPopulation,
    n_support: int,
    mc_budget: Optional[int] = None,
    seed: Seed = 0,
    normalize: bool = True,
) -> List[np.ndarray]:
    """Per-task M_τ = E_Σ̂[(I − aΣ̂) Σ_τ (I − aΣ̂)], exact or Monte Carlo."""
    if n_support < 1:
        raise ConfigError("n_support must be at least 1")
    # Σ̂ is normalized by n; without normalization the inner step is α·X_sᵀX_s = (α n) Σ̂
    a = alpha if normalize else alpha * n_support
    if mc_budget is None:
        return [ml_moment_exact(t, a, n_support) for t in population.tasks]
    if mc_budget < 1:
        raise ConfigError("mc_budget must be positive")
    p = population.dim
    white = seeding.rng(seed).standard_normal((mc_budget, n_support, p))
    eye = np.eye(p)
    moments = []
    for task in population.tasks:
        S = task.covariance
        draws = []
        for Z in white:
            X = correlate_rows(task, Z)
            P = eye - a * (X.T @ X) / n_support
            draws.append(P @ S @ P)
        moments.append(pairwise_sum(draws) / mc_budget)
    return moments


def theta_star_ml(
    alpha: float,
    population: TaskPopulation,
    n_support: int,
    mc_budget: Optional[int] = None,
    seed: Seed = 0,
    normalize: bool = True,
) -> np.ndarray:
    """(E_τ M_τ)⁻¹ E_τ[M_τ θ_τ]; M_τ exact when mc_budget is None."""
    moments = ml_moments(alpha, population, n_support, mc_budget, seed, normalize)
    H = pairwise_sum([w * M for w, M in zip(population.weights, moments)])
    b = pairwise_sum([w * M @ t.theta for w, M, t in zip(population.weights, moments, population.tasks)])
    return spd_solve(H, b, "E[(I-αΣ̂)Σ(I-αΣ̂)]")


def ml_population_objective(
    theta,
    alpha: float,
    population: TaskPopulation,
    n_support: int,
    mc_budget: Optional[int] = None,
    seed: Seed = 0,
    normalize: bool = True,
) -> Tuple[float, np.ndarray]:
    """E_τ E_{X_s,ε} R(θ̂; τ) up to the θ-independent noise terms, and its gradient."""
    theta = np.asarray(theta, dtype=np.float64)
    moments = ml_moments(alpha, population, n_support, mc_budget, seed, normalize)
    values, grads = [], []
    for w, M, task in zip(population.weights, moments, population.tasks):
        d = theta - task.theta
        values.append(w * (0.5 * d @ M @ d + 0.5 * task.sigma ** 2))
        grads.append(w * (M @ d))
    return float(pairwise_sum(values)), pairwise_sum(grads)


def hessians(
    alpha: float,
    X_F: Design,
    population: TaskPopulation,
    n_support: int,
    mc_budget: Optional[int] = None,
    seed: Seed = 0,
    normalize: bool = True,
) -> Tuple[np.ndarray, np.ndarray]:
    """(H_FML, H_ML) of the two population objectives."""
    A = _fixml_matrix(alpha, X_F, normalize)
    h_fml = A @ population.expect(lambda t: t.covariance) @ A
    moments = ml_moments(alpha, population, n_support, mc_budget, seed, normalize)
    h_ml = pairwise_sum([w * M for w, M in zip(population.weights, moments)])
    return 0.5 * (h_fml + h_fml.T), 0.5 * (h_ml + h_ml.T)


# ─── Empirical ML minimizer ───


def _check_batches(task_batches: Sequence[TaskBatch]) -> int:
    if not task_batches:
        raise ConfigError("need at least one task batch")
    p = np.atleast_2d(task_batches[0][0]).shape[1]
    for X_s, y_s, X_q, y_q in task_batches:
        if np.shape(X_s)[1] != p or np.shape(X_q)[1] != p:
            raise DimensionMismatchError("all designs must share the parameter dimension")
        if np.shape(X_s)[0] != np.size(y_s) or np.shape(X_q)[0] != np.size(y_q):
            raise DimensionMismatchError("one response per design row required")
    return p


def _adaptation(X_s, y_s, alpha: float, normalize: bool):
    """Adapted parameters are affine in θ: θ̂ = A θ + c."""
    X_s = np.asarray(X_s, dtype=np.float64)
    a = step_scale(alpha, X_s.shape[0], normalize)
    A = np.eye(X_s.shape[1]) - a * X_s.T @ X_s
    c = a * X_s.T @ np.asarray(y_s, dtype=np.float64)
    return A, c


def empirical_ml_objective(
    theta,
    task_batches: Sequence[TaskBatch],
    alpha: float,
    normalize: bool = True,
    query_normalize: bool = False,
) -> Tuple[float, np.ndarray]:
    """F̃(θ) = Σ_i ½‖X_q,i θ̂_i(θ) − y_q,i‖² (÷ n_q when `query_normalize`) and ∇F̃."""
    _check_batches(task_batches)
    theta = np.asarray(theta, dtype=np.float64)
    values, grads = [], []
    for X_s, y_s, X_q, y_q in task_batches:
        A, c = _adaptation(X_s, y_s, alpha, normalize)
        X_q = np.asarray(X_q, dtype=np.float64)
        r = X_q @ (A @ theta + c) - np.asarray(y_q, dtype=np.float64)
        scale = 1.0 / X_q.shape[0] if query_normalize else 1.0
        values.append(scale * 0.5 * r @ r)
        grads.append(scale * A.T @ X_q.T @ r)
    return float(pairwise_sum(values)), pairwise_sum(grads)


def theta_hat_ml_empirical(
    task_batches: Sequence[TaskBatch],
    alpha: float,
    normalize: bool = True,
    query_normalize: bool = False,
) -> np.ndarray:
    """Minimizer of F̃: solve [Σ A_i G_i A_i] θ = Σ A_i X_q,iᵀ (y_q,i − X_q,i c_i)."""
    _check_batches(task_batches)
    lhs, rhs = [], []
    for X_s, y_s, X_q, y_q in task_batches:
        A, c = _adaptation(X_s, y_s, alpha, normalize)
        X_q = np.asarray(X_q, dtype=np.float64)
        scale = 1.0 / X_q.shape[0] if query_normalize else 1.0
        lhs.append(scale * A.T @ (X_q.T @ X_q) @ A)
        rhs.append(scale * A.T @ X_q.T @ (np.asarray(y_q, dtype=np.float64) - X_q @ c))
    return spd_solve(pairwise_sum(lhs), pairwise_sum(rhs), "empirical normal matrix")


# ─── Diagonal special case ───


def diagonal_moments(population: TaskPopulation) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-coordinate E[Σ^j], E[Σ^j θ^j] and V[Σ^j] in the population's eigenbasis."""
    mean_s = population.expect(lambda t: t.spectrum)
    mean_st = population.expect(lambda t: t.spectrum * t.theta)
    var_s = population.expect(lambda t: (t.spectrum - mean_s) ** 2)
    return mean_s, mean_st, var_s


def theta_star_diag(
    alpha: float,
    diag_gram,
    mean_spectrum,
    mean_spectrum_theta,
    n: int = 1,
) -> np.ndarray:
    """θ*^j = (A^j)² E[Σ^j θ^j] / ((A^j)² E[Σ^j]); the gram enters only through A."""
    g = np.asarray(diag_gram, dtype=np.float64)
    mean_s = np.asarray(mean_spectrum, dtype=np.float64)
    mean_st = np.asarray(mean_spectrum_theta, dtype=np.float64)
    af = 1.0 - (alpha / n) * g
    if np.any(af == 0):
        raise DegeneracyError("A_F(α) has a zero diagonal entry")
    if np.any(mean_s <= 0):
        raise DegeneracyError("E[Σ^j] must be positive for every coordinate")
    return (af ** 2 * mean_st) / (af ** 2 * mean_s)


def optimal_af(alpha: float, mean_spectrum, kappa2: float) -> np.ndarray:
    """A_F^{i*} = sqrt(κ2 / E[Σ^i]): the smallest A meeting (A^i)² E[Σ^i] ≥ κ2.

    The result does not depend on α; `gram_for_af` turns it into the fixed
    support gram that realizes it at a given α.
    """
    mean_s = np.asarray(mean_spectrum, dtype=np.float64)
    if np.any(mean_s <= 0) or not kappa2 > 0:
        raise ConfigError("optimal_af needs positive E[Σ^i] and κ2")
    if not alpha > 0:
        raise ConfigError("alpha must be positive")
    return np.sqrt(kappa2 / mean_s)


def gram_for_af(af, alpha: float, n: int) -> np.ndarray:
    """Diagonal X_FᵀX_F with I − (α/n) X_FᵀX_F = diag(af); requires af ≤ 1."""
    af = np.asarray(af, dtype=np.float64)
    if np.any(af > 1):
        raise DegeneracyError("A_F entries above 1 need a negative gram")
    return n * (1.0 - af) / alpha


def af_variance_objective(af, var_spectrum) -> float:
    """max_i (A^i)² sqrt(V[Σ^i])."""
    af = np.asarray(af, dtype=np.float64)
    return float(np.max(af ** 2 * np.sqrt(np.asarray(var_spectrum, dtype=np.float64))))


# ─── Numerical oracle ───


def descend(
    objective: Objective,
    theta0,
    lr: float,
    steps: int,
    momentum: float = 0.0,
    tol: float = 0.0,
) -> np.ndarray:
    """Heavy-ball gradient descent on a (value, gradient) objective."""
    theta = np.array(theta0, dtype=np.float64)
    velocity = np.zeros_like(theta)
    for step in range(steps):
        _, grad = objective(theta)
        if tol > 0 and np.linalg.norm(grad) < tol:
            logger.debug("descend converged after %d steps", step)
            break
        velocity = momentum * velocity + grad
        theta = theta - lr * velocity
    return theta


def finite_difference_hessian(objective: Objective, theta, eps: float = 1e-4) -> np.ndarray:
    """Central differences of the analytic gradient."""
    theta = np.asarray(theta, dtype=np.float64)
    p = theta.size
    H = np.zeros((p, p))
    for j in range(p):
        step = np.zeros(p)
        step[j] = eps
        H[:, j] = (objective(theta + step)[1] - objective(theta - step)[1]) / (2 * eps)
    return 0.5 * (H + H.T)
