"""Measured quantities of an ensemble on a dataset.

Everything here is a pure function of (ensemble, dataset, loss): the
surrogate risk, the soft-min smooth margin, the margin-distribution bound,
the first-order local-optimality estimate, and the Taylor-residual check
for the expansion of the risk under a particle perturbation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .data import Dataset
from .ensemble import ParticleEnsemble, classify_many, predict_mean_many
from .loss import LossSpec, eval_loss
from .model import targets_for, weighted_grad_margin_sum

DEFAULT_RHO_GRID = np.linspace(0.02, 1.0, 50)


def margins_of(ens: ParticleEnsemble, ds: Dataset) -> np.ndarray:
    """Per-sample margins of the mean prediction: y h(x) or y^T h(x)."""
    targets = targets_for(ens.spec, ds.labels)
    mean_out = predict_mean_many(ens, ds.features)
    if ens.spec.output == "tanh":
        return mean_out * targets
    return np.einsum("jc,jc->j", mean_out, targets)


def accuracy(ens: ParticleEnsemble, ds: Dataset) -> float:
    return float(np.mean(classify_many(ens, ds.features) == ds.labels))


def empirical_loss(ens: ParticleEnsemble, ds: Dataset, loss: LossSpec) -> float:
    """(1/N) sum_j l(-margin_j)."""
    vals, _, _ = eval_loss(loss, -margins_of(ens, ds))
    return float(np.mean(vals))


def smooth_margin_from_margins(margins: np.ndarray, alpha: float) -> float:
    """Soft minimum of the margins: -alpha * log-mean-exp(-margins / alpha)."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    margins = np.asarray(margins, dtype=np.float64)
    n = margins.size
    return float(-alpha * (logsumexp(-margins / alpha) - np.log(n)))


def smooth_margin(ens: ParticleEnsemble, ds: Dataset, alpha: float) -> float:
    return smooth_margin_from_margins(margins_of(ens, ds), alpha)


def _log_expm1(t: float) -> float:
    # log(e^t - 1), stable for both small and large t > 0
    if t < 30.0:
        return float(np.log(np.expm1(t)))
    return t + float(np.log1p(-np.exp(-t)))


def margin_bound_rhs(psi: float, alpha: float, rho: float) -> float:
    """Upper bound on the empirical margin CDF at rho, for 0 < rho < psi <= 1.

    (e^{(1-psi)/alpha} - 1) / (e^{(1-rho)/alpha} - 1), evaluated in log
    space so small alpha cannot overflow.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if psi <= 0:
        raise ValueError("bound requires a positive smooth margin")
    if psi > 1:
        raise ValueError("smooth margin above 1 is outside the bound's range")
    if not 0 < rho < psi:
        raise ValueError(f"rho must lie in (0, psi); got rho={rho}, psi={psi}")
    a = (1.0 - psi) / alpha
    b = (1.0 - rho) / alpha
    if a == 0.0:
        return 0.0
    return float(np.exp(_log_expm1(a) - _log_expm1(b)))


@dataclass
class MarginReport:
    """Margins, their empirical CDF over a threshold grid, and the soft margin.

    ``bound`` carries the distribution bound where it applies
    (rho < psi_alpha with psi_alpha > 0) and NaN elsewhere.
    """

    margins: np.ndarray
    rho_grid: np.ndarray
    cdf: np.ndarray
    psi_alpha: float
    alpha: float
    bound: np.ndarray


def margin_report(ens: ParticleEnsemble, ds: Dataset, alpha: float,
                  rho_grid: np.ndarray | None = None) -> MarginReport:
    rho_grid = DEFAULT_RHO_GRID if rho_grid is None else np.asarray(rho_grid, dtype=np.float64)
    if ((rho_grid <= 0) | (rho_grid > 1)).any():
        raise ValueError("rho grid values must lie in (0, 1]")
    margins = margins_of(ens, ds)
    cdf = np.array([np.mean(margins <= rho) for rho in rho_grid])
    psi = smooth_margin_from_margins(margins, alpha)
    bound = np.full_like(rho_grid, np.nan)
    if psi > 0:
        for i, rho in enumerate(rho_grid):
            if rho < psi:
                bound[i] = margin_bound_rhs(psi, alpha, float(rho))
    return MarginReport(margins, rho_grid, cdf, psi, alpha, bound)


def mean_update_field(ens: ParticleEnsemble, ds: Dataset, loss: LossSpec) -> np.ndarray:
    """Rows are the dataset-averaged update integrand at each particle.

    Row i equals (1/N) sum_j -l'(-m_j) grad_margin(theta_i, x_j, y_j),
    with m_j the margin of the ensemble-mean prediction.
    """
    targets = targets_for(ens.spec, ds.labels)
    _, lp, _ = eval_loss(loss, -margins_of(ens, ds))
    weighted = weighted_grad_margin_sum(ens.spec, ens.particles, ds.features, targets, lp)
    return -weighted / ds.n_samples


def optimality_norm(ens: ParticleEnsemble, ds: Dataset, loss: LossSpec) -> float:
    """(1/M) sum_i || (1/N) sum_j s(theta_i, x_j, y_j) ||^2; zero at local optima."""
    field = mean_update_field(ens, ds, loss)
    return float(np.mean(np.sum(field * field, axis=1)))


def taylor_residual(ens: ParticleEnsemble, ds: Dataset, loss: LossSpec,
                    direction: np.ndarray, epsilons) -> tuple:
    """First-order expansion residuals of the risk along a particle perturbation.

    For each eps: R(eps) = |L(theta + eps*xi) - L(theta) - eps * <field, xi>|
    with the inner product averaged over particles. Returns (residuals,
    slope of log R against log eps); the slope is NaN when fewer than two
    residuals are nonzero (degenerate direction).
    """
    direction = np.asarray(direction, dtype=np.float64)
    if direction.shape != ens.particles.shape:
        raise ValueError("direction must match the particle stack shape")
    epsilons = np.asarray(list(epsilons), dtype=np.float64)
    if (epsilons <= 0).any():
        raise ValueError("epsilons must be positive")
    base = empirical_loss(ens, ds, loss)
    field = mean_update_field(ens, ds, loss)
    first_order = float(np.mean(np.sum(field * direction, axis=1)))
    residuals = np.empty_like(epsilons)
    for i, eps in enumerate(epsilons):
        shifted = ParticleEnsemble(ens.spec, ens.particles + eps * direction)
        residuals[i] = abs(empirical_loss(shifted, ds, loss) - base - eps * first_order)
    mask = residuals > 0
    if mask.sum() < 2:
        return residuals, float("nan")
    slope = np.polyfit(np.log(epsilons[mask]), np.log(residuals[mask]), 1)[0]
    return residuals, float(slope)
