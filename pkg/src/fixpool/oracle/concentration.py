"""Measurable ingredients of the fixed-support concentration bounds.

With A = A_F(α), B_τ = A Σ_τ A is the population curvature of task τ and
B̃_i = A X_q,iᵀ X_q,i A / n_q its estimate from n_q query rows. The report
collects the quantities the Bernstein, Chernoff and T1/T2/T3 bounds are built
from, evaluated on a sample of m tasks.
"""

from __future__ import annotations

import logging
import math
from typing import List, Optional

import numpy as np

from .. import seeding
from ..errors import ConfigError
from ..models import ConcentrationReport, EstimatorStudy, TaskPopulation
from ..parallel import map_ordered, pairwise_sum
from ..seeding import Seed
from ..taskspace import correlate_rows, sample_population_task
from .risks import Design, af_matrix, design_matrix
from .solutions import theta_hat_ml_empirical, theta_star_fml, theta_star_ml

logger = logging.getLogger(__name__)


def spectral_norm(M: np.ndarray) -> float:
    """‖M‖₂ of a symmetric matrix."""
    return float(np.max(np.abs(np.linalg.eigvalsh(0.5 * (M + M.T)))))


def lambda_min(M: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(0.5 * (M + M.T))[0])


def curvature_variance(population: TaskPopulation, A: np.ndarray) -> np.ndarray:
    """V_τ[B_τ] = E[(B_τ − E B)²]."""
    mean_b = A @ population.expect(lambda t: t.covariance) @ A

    def centered_sq(task):
        D = A @ task.covariance @ A - mean_b
        return D @ D

    return population.expect(centered_sq)


def diagonal_variance_norm(af, var_spectrum) -> float:
    """‖V_τ[B_τ]‖ for diagonal A and Σ_τ: (max_i (A^i)² sqrt(V[Σ^i]))²."""
    af = np.asarray(af, dtype=np.float64)
    return float(np.max(af ** 2 * np.sqrt(np.asarray(var_spectrum, dtype=np.float64))) ** 2)


def _query_curvatures(population, m, A, n_query, gen):
    tasks = [sample_population_task(population, gen) for _ in range(m)]
    estimates = []
    for task in tasks:
        X = correlate_rows(task, gen.standard_normal((n_query, population.dim)))
        estimates.append(A @ (X.T @ X) @ A / n_query)
    return tasks, estimates


def chernoff_failure_bound(p: int, m: int, mu_min: float, l_bound: float, epsilon: float) -> float:
    """p·(e^{−ε}/(1−ε)^{1−ε})^{m μ_min / L}, clipped to 1."""
    if l_bound <= 0 or mu_min <= 0:
        return 1.0
    log_base = -epsilon - (1.0 - epsilon) * math.log(1.0 - epsilon)
    return min(1.0, p * math.exp(log_base * m * mu_min / l_bound))


def concentration_report(
    population: TaskPopulation,
    m: int,
    X_F: Design,
    alpha: float,
    n_query: int,
    delta: float = 0.05,
    rho: float = 0.05,
    epsilon: float = 0.5,
    seed: Seed = 0,
    n_resamples: int = 200,
    normalize: bool = True,
) -> ConcentrationReport:
    if m < 2:
        raise ConfigError("concentration_report needs m >= 2 tasks")
    if n_query < 1 or n_resamples < 1:
        raise ConfigError("n_query and n_resamples must be positive")
    for name, value in (("delta", delta), ("rho", rho), ("epsilon", epsilon)):
        if not 0 < value < 1:
            raise ConfigError(f"{name} must lie in (0, 1)")

    p = population.dim
    n_f = design_matrix(X_F).shape[0]
    A = af_matrix(X_F, alpha, n_f if normalize else 1)
    mean_b = A @ population.expect(lambda t: t.covariance) @ A
    mu_min = lambda_min(mean_b)
    theta_star = theta_star_fml(alpha, X_F, population, normalize)
    V = curvature_variance(population, A)
    variance_norm = spectral_norm(V)
    live = [t for t, w in zip(population.tasks, population.weights) if w > 0]
    kappa = max(spectral_norm(A @ t.covariance @ A - mean_b) for t in live)
    sup_dev = max(float(np.linalg.norm(t.theta - theta_star)) for t in live)

    tasks, estimates = _query_curvatures(population, m, A, n_query, seeding.rng(seed, 0))
    exact = [A @ t.covariance @ A for t in tasks]
    errors = tuple(spectral_norm(bt - b) for bt, b in zip(estimates, exact))
    centered = pairwise_sum([b - mean_b for b in exact]) / m
    sigma_f = [spectral_norm(b) for b in exact]
    devs = [t.theta - theta_star for t in tasks]

    t1 = float(np.linalg.norm(pairwise_sum([(bt - b) @ d for bt, b, d in zip(estimates, exact, devs)]) / m))
    t2 = float(np.linalg.norm(pairwise_sum([(b - mean_b) @ d for b, d in zip(exact, devs)]) / m))
    t3 = max(float(np.linalg.norm(mean_b @ d)) for d in devs)
    r = p + math.log(2 * m / rho)
    t1_rate = max(sigma_f) * (math.sqrt(r / n_query) + r / n_query)
    log_term = math.log(2 * p / delta)
    bernstein = math.sqrt(2 * variance_norm * log_term / m) + 2 * kappa * log_term / (3 * m)

    def resample(i: int):
        _, bts = _query_curvatures(population, m, A, n_query, seeding.rng(seed, 1, i))
        return lambda_min(pairwise_sum(bts)), max(spectral_norm(bt) for bt in bts)

    draws = map_ordered(resample, range(n_resamples))
    l_bound = max(max(d[1] for d in draws), max(spectral_norm(bt) for bt in estimates))
    threshold = (1.0 - epsilon) * m * mu_min
    frequency = sum(1 for d in draws if d[0] >= threshold) / n_resamples
    failure = chernoff_failure_bound(p, m, mu_min, l_bound, epsilon)
    logger.debug("chernoff: frequency %.3f, failure bound %.3g (mu_min=%.4g, L=%.4g)", frequency, failure, mu_min, l_bound)

    return ConcentrationReport(
        lambda_min_sum=lambda_min(pairwise_sum(estimates)),
        bernstein_deviation=spectral_norm(centered),
        per_task_cov_errors=errors,
        sup_theta_dev=sup_dev,
        variance_norm=variance_norm,
        kappa_bound=kappa,
        mu_min=mu_min,
        l_bound=l_bound,
        sigma_f_mean=float(np.mean(sigma_f)),
        sigma_f_max=float(max(sigma_f)),
        t1=t1,
        t2=t2,
        t3=t3,
        t1_rate=t1_rate,
        bernstein_bound=bernstein,
        chernoff_failure_bound=failure,
        chernoff_frequency=frequency,
        n_resamples=n_resamples,
        delta=delta,
        rho=rho,
        epsilon=epsilon,
    )


def _task_batch(task, X_s, n_query, gen):
    X_q = correlate_rows(task, gen.standard_normal((n_query, task.dim)))
    y_s = X_s @ task.theta
    y_q = X_q @ task.theta
    if task.sigma > 0:
        y_s = y_s + task.sigma * gen.standard_normal(X_s.shape[0])
        y_q = y_q + task.sigma * gen.standard_normal(n_query)
    return X_s, y_s, X_q, y_q


def fixed_support_study(
    population: TaskPopulation,
    m: int,
    X_F: Design,
    alpha: float,
    n_query: int,
    n_repeats: int,
    seed: Seed = 0,
    workers: Optional[int] = 1,
) -> EstimatorStudy:
    """Squared bias and trace variance around θ*_ML(α) of the empirical
    minimizer fitted with the fixed support X_F vs. fresh supports."""
    if n_repeats < 2 or m < 1:
        raise ConfigError("need n_repeats >= 2 and m >= 1")
    X_F = design_matrix(X_F)
    n = X_F.shape[0]
    theta_star = theta_star_ml(alpha, population, n)

    def repeat(r: int):
        gen = seeding.rng(seed, r)
        fixed, fresh = [], []
        for _ in range(m):
            task = sample_population_task(population, gen)
            fixed.append(_task_batch(task, X_F, n_query, gen))
            X_s = correlate_rows(task, gen.standard_normal((n, task.dim)))
            fresh.append(_task_batch(task, X_s, n_query, gen))
        return (
            theta_hat_ml_empirical(fixed, alpha, query_normalize=True),
            theta_hat_ml_empirical(fresh, alpha, query_normalize=True),
        )

    fits = map_ordered(repeat, range(n_repeats), workers)

    def bias_var(estimates: List[np.ndarray]):
        E = np.stack(estimates)
        mean = E.mean(axis=0)
        return float(np.sum((mean - theta_star) ** 2)), float(np.sum(E.var(axis=0, ddof=1)))

    fml_bias, fml_var = bias_var([f[0] for f in fits])
    ml_bias, ml_var = bias_var([f[1] for f in fits])
    logger.info("estimator study: fixed bias² %.4g var %.4g | fresh bias² %.4g var %.4g", fml_bias, fml_var, ml_bias, ml_var)
    return EstimatorStudy(tuple(float(v) for v in theta_star), fml_bias, fml_var, ml_bias, ml_var, n_repeats)
