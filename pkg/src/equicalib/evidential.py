"""Evidential-regression primitives: Student's t density, normal-inverse-gamma
parameter summaries, and the training losses with analytic gradients.

Losses are written for scalar observations; the gradients are exact (the
stop-gradient factor in the beta-weighted likelihood is treated as a
constant, matching its training semantics).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, gammaln


@dataclass(frozen=True)
class NIGParams:
    """Normal-inverse-gamma parameters (gamma, nu, alpha, beta)."""

    gamma: float
    nu: float
    alpha: float
    beta: float

    def __post_init__(self):
        if self.nu <= 0:
            raise ValueError("nu must be positive")
        if self.alpha <= 1:
            raise ValueError("alpha must exceed 1")
        if self.beta <= 0:
            raise ValueError("beta must be positive")

    def as_array(self) -> np.ndarray:
        return np.array([self.gamma, self.nu, self.alpha, self.beta])


@dataclass(frozen=True)
class UncertaintySummary:
    """Point prediction with its aleatoric and epistemic variances."""

    prediction: float
    aleatoric: float
    epistemic: float


def student_t_pdf(t: float, mu: float, sigma: float, nu_df: float) -> float:
    """Density of the location-scale Student's t distribution."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if nu_df <= 0:
        raise ValueError("degrees of freedom must be positive")
    z = (t - mu) / sigma
    log_norm = (gammaln((nu_df + 1.0) / 2.0) - gammaln(nu_df / 2.0)
                - 0.5 * math.log(math.pi * nu_df) - math.log(sigma))
    return float(np.exp(log_norm - (nu_df + 1.0) / 2.0 * np.log1p(z * z / nu_df)))


def nig_summaries(params: NIGParams) -> UncertaintySummary:
    """Prediction gamma, aleatoric beta/(alpha-1), epistemic beta/(nu(alpha-1)).

    The aleatoric variance is exactly nu times the epistemic one.
    """
    aleatoric = params.beta / (params.alpha - 1.0)
    return UncertaintySummary(prediction=params.gamma, aleatoric=aleatoric,
                              epistemic=aleatoric / params.nu)


def evidential_nll(y: float, params: NIGParams,
                   lambda_reg: float = 0.0) -> tuple[float, np.ndarray]:
    """Evidential negative log likelihood with the residual regularizer.

    With Omega = 2 beta (1 + nu) and r = y - gamma:

        L_nll = 1/2 log(pi/nu) - alpha log Omega
                + (alpha + 1/2) log(r^2 nu + Omega)
                + log Gamma(alpha) - log Gamma(alpha + 1/2)
        L     = L_nll + lambda |r| (2 nu + alpha)

    Returns the loss and its gradient with respect to
    (gamma, nu, alpha, beta).  The regularizer's subgradient at r = 0
    is taken to be 0.
    """
    gamma, nu, alpha, beta = params.gamma, params.nu, params.alpha, params.beta
    r = y - gamma
    omega = 2.0 * beta * (1.0 + nu)
    arg = r * r * nu + omega
    loss_nll = (0.5 * math.log(math.pi / nu) - alpha * math.log(omega)
                + (alpha + 0.5) * math.log(arg)
                + float(gammaln(alpha) - gammaln(alpha + 0.5)))
    d_gamma = (alpha + 0.5) * (-2.0 * r * nu) / arg
    d_nu = (-0.5 / nu - alpha * (2.0 * beta) / omega
            + (alpha + 0.5) * (r * r + 2.0 * beta) / arg)
    d_alpha = (-math.log(omega) + math.log(arg)
               + float(digamma(alpha) - digamma(alpha + 0.5)))
    d_beta = (-alpha * 2.0 * (1.0 + nu) / omega
              + (alpha + 0.5) * 2.0 * (1.0 + nu) / arg)
    loss = loss_nll
    grad = np.array([d_gamma, d_nu, d_alpha, d_beta])
    if lambda_reg != 0.0:
        sign = 0.0 if r == 0.0 else math.copysign(1.0, r)
        loss += lambda_reg * abs(r) * (2.0 * nu + alpha)
        grad += lambda_reg * np.array([-sign * (2.0 * nu + alpha),
                                       2.0 * abs(r), abs(r), 0.0])
    return loss, grad


def beta_nll(y, mu, sigma2, beta_exp: float = 1.0):
    """Beta-weighted Gaussian negative log likelihood with stop-gradient factor.

    loss = detach(sigma2^beta) * (1/2 log sigma2 + (y - mu)^2 / (2 sigma2));
    the weighting factor is excluded from differentiation.  Broadcasts over
    arrays; returns (loss, (d/dmu, d/dsigma2)).
    """
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    sigma2 = np.asarray(sigma2, dtype=float)
    if np.any(sigma2 <= 0):
        raise ValueError("sigma2 must be positive")
    if not 0.0 <= beta_exp <= 1.0:
        raise ValueError("beta_exp must lie in [0, 1]")
    factor = sigma2 ** beta_exp
    r = y - mu
    loss = factor * (0.5 * np.log(sigma2) + r * r / (2.0 * sigma2))
    d_mu = factor * (-r / sigma2)
    d_sigma2 = factor * (0.5 / sigma2 - r * r / (2.0 * sigma2 * sigma2))
    if loss.ndim == 0:
        return float(loss), (float(d_mu), float(d_sigma2))
    return loss, (d_mu, d_sigma2)
