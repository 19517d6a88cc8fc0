"""L1-regularized logistic regression via coordinate descent.

Fits  min  (1/n) * nll(intercept, beta) + lambda * sum_j |beta_j|
by iteratively reweighted quadratic approximation: each outer iteration
builds the weighted least-squares surrogate at the current iterate and
solves it with cyclic coordinate descent and soft-threshold updates.  The
intercept is never penalized.

Features are imputed with train medians and standardized internally to
zero mean / unit variance; reported coefficients are unstandardized back
to the raw feature scale (zero-variance features keep coefficient 0).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConvergenceError, ModelError
from .features import FEATURE_NAMES, N_FEATURES, Dataset, FeatureVector
from .forest import impute, train_medians

_MIN_WEIGHT = 1e-8


def soft_threshold(z: float, gamma: float) -> float:
    """sign(z) * max(|z| - gamma, 0); the LASSO coordinate update kernel."""
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    if z > gamma:
        return z - gamma
    if z < -gamma:
        return z + gamma
    return 0.0


@dataclass
class GlmConfig:
    lam: float = 1e-3            # L1 shrinkage
    tolerance: float = 1e-7      # max coefficient change for convergence
    max_iterations: int = 10_000
    seed: int = 0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")


GLM_PRESETS = {
    "glm1": GlmConfig(lam=1e-8),
    "glm2": GlmConfig(lam=1e-3),
    "glm3": GlmConfig(lam=5e-3),
}


@dataclass
class GlmModel:
    intercept: float                      # raw-scale intercept
    coefficients: np.ndarray              # raw-scale, one per feature
    std_intercept: float                  # standardized-space intercept
    std_coefficients: np.ndarray          # standardized-space coefficients
    feature_means: np.ndarray
    feature_stds: np.ndarray              # 0 marks a zero-variance feature
    imputation_values: np.ndarray
    config: GlmConfig
    feature_names: tuple[str, ...] = FEATURE_NAMES
    iterations: int = 0

    @property
    def active_set(self) -> np.ndarray:
        return np.flatnonzero(self.std_coefficients != 0.0)


def _sigmoid(eta: np.ndarray) -> np.ndarray:
    out = np.empty_like(eta)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    ez = np.exp(eta[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def nll(intercept: float, beta: np.ndarray, X: np.ndarray, y: np.ndarray) -> float:
    """(1/n) negative log-likelihood of the logit model (the smooth part)."""
    eta = intercept + X @ beta
    # log(1 + exp(-|eta|)) + max(eta, 0) - y*eta, numerically stable
    return float(np.mean(np.logaddexp(0.0, eta) - y * eta))


def nll_gradient(intercept: float, beta: np.ndarray, X: np.ndarray,
                 y: np.ndarray) -> tuple[float, np.ndarray]:
    """Gradient of nll wrt (intercept, beta)."""
    resid = _sigmoid(intercept + X @ beta) - y
    return float(resid.mean()), X.T @ resid / len(y)


def _standardize(X: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    means = X.mean(axis=0)
    stds = X.std(axis=0)
    Z = np.zeros_like(X)
    ok = stds > 0
    Z[:, ok] = (X[:, ok] - means[ok]) / stds[ok]
    return Z, means, stds


def fit_lasso_logit(dataset: Dataset, cfg: Optional[GlmConfig] = None) -> GlmModel:
    """Fit the penalized logit; raises ConvergenceError past max_iterations.

    Convergence: the largest absolute coefficient change (intercept
    included, standardized space) across one outer reweighting step falls
    below cfg.tolerance.  Coordinates cycle in the fixed feature order.
    """
    cfg = cfg or GlmConfig()
    X_raw, ybool = dataset.to_matrix()
    if not ybool.any() or ybool.all():
        raise ModelError("training data must contain both classes")
    medians = train_medians(X_raw)
    X = impute(X_raw, medians)
    Z, means, stds = _standardize(X)
    y = ybool.astype(np.float64)
    n, p = Z.shape
    active_cols = np.flatnonzero(stds > 0)

    beta = np.zeros(p)
    pbar = y.mean()
    b0 = math.log(pbar / (1.0 - pbar))
    eta = np.full(n, b0)

    converged = False
    iterations = 0
    for outer in range(cfg.max_iterations):
        iterations = outer + 1
        prob = _sigmoid(eta)
        wgt = np.maximum(prob * (1.0 - prob), _MIN_WEIGHT)
        z_work = eta + (y - prob) / wgt
        wsum = wgt.sum()

        beta_prev = beta.copy()
        b0_prev = b0
        # cyclic coordinate descent on the weighted quadratic surrogate;
        # weights are fixed within the inner loop, so wZ and the per-column
        # curvature terms are computed once per outer iteration
        wZ = wgt[:, None] * Z
        curv = (wZ * Z).sum(axis=0) / n
        resid = z_work - b0 - Z @ beta
        for _ in range(1000):
            delta = 0.0
            for j in active_cols:
                old = beta[j]
                rho = np.dot(wZ[:, j], resid) / n + curv[j] * old
                new = soft_threshold(rho, cfg.lam) / curv[j]
                if new != old:
                    resid += (old - new) * Z[:, j]
                    beta[j] = new
                    delta = max(delta, abs(new - old))
            shift = np.dot(wgt, resid) / wsum
            if shift != 0.0:
                b0 += shift
                resid -= shift
                delta = max(delta, abs(shift))
            if delta < cfg.tolerance:
                break
        eta = b0 + Z @ beta
        outer_change = max(float(np.max(np.abs(beta - beta_prev))) if p else 0.0,
                           abs(b0 - b0_prev))
        if outer_change < cfg.tolerance:
            converged = True
            break

    raw_coef = np.zeros(p)
    raw_coef[active_cols] = beta[active_cols] / stds[active_cols]
    raw_b0 = b0 - float(np.sum(beta[active_cols] * means[active_cols] / stds[active_cols]))
    model = GlmModel(
        intercept=raw_b0,
        coefficients=raw_coef,
        std_intercept=b0,
        std_coefficients=beta,
        feature_means=means,
        feature_stds=stds,
        imputation_values=medians,
        config=cfg,
        iterations=iterations,
    )
    if not converged:
        raise ConvergenceError(
            f"no convergence after {cfg.max_iterations} iterations "
            f"(lambda={cfg.lam}, tolerance={cfg.tolerance})", model=model)
    return model


def _as_matrix(fv) -> np.ndarray:
    if isinstance(fv, FeatureVector):
        return fv.values.reshape(1, -1)
    arr = np.asarray(fv, dtype=np.float64)
    return arr.reshape(1, -1) if arr.ndim == 1 else arr


def predict_probs(model: GlmModel, fvs) -> np.ndarray:
    """Pump likelihood logistic(intercept + beta . x) on the raw feature scale."""
    X = _as_matrix(fvs)
    if X.shape[1] != len(model.coefficients):
        raise ModelError(
            f"feature count mismatch: expected {len(model.coefficients)}, got {X.shape[1]}")
    X = impute(X, model.imputation_values)
    return _sigmoid(model.intercept + X @ model.coefficients)


def predict_prob(model: GlmModel, fv) -> float:
    return float(predict_probs(model, fv)[0])


def kkt_violation(model: GlmModel, dataset: Dataset) -> tuple[float, float]:
    """Max KKT residual at the fitted point, in standardized space.

    Returns (active, inactive): active is max | |grad_j| - lambda | over
    nonzero coefficients, inactive is max(|grad_j| - lambda, 0) over zero
    ones.  Both should be ~0 at an exact optimum.
    """
    X_raw, ybool = dataset.to_matrix()
    X = impute(X_raw, model.imputation_values)
    Z = np.zeros_like(X)
    ok = model.feature_stds > 0
    Z[:, ok] = (X[:, ok] - model.feature_means[ok]) / model.feature_stds[ok]
    y = ybool.astype(np.float64)
    resid = _sigmoid(model.std_intercept + Z @ model.std_coefficients) - y
    grad = Z.T @ resid / len(y)
    lam = model.config.lam
    active = model.std_coefficients != 0.0
    worst_active = float(np.max(np.abs(np.abs(grad[active]) - lam))) if active.any() else 0.0
    inactive = ok & ~active
    worst_inactive = float(np.max(np.abs(grad[inactive]) - lam)) if inactive.any() else 0.0
    return worst_active, max(worst_inactive, 0.0)
