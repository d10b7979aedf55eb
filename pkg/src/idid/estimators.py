"""Point estimators: one-sample Wald, semiparametric multiply robust,
two-sample Wald, and the OLS / standard-IV comparators."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data import CELLS, CellTable, Dataset
from .errors import (
    CellTooSmall,
    DegenerateTrend,
    DeltaDNearZero,
    RankDeficient,
    ValidationError,
    WeakFirstStage,
)
from .regression import NuisanceFit, fit_linear

Z_CRIT = 1.96
DELTA_D_TOL = 1e-12
DELTA_D_FLOOR = 1e-6


@dataclass(frozen=True)
class WaldEstimate:
    beta: float
    delta_y: float
    delta_d: float
    se: float
    ci95: tuple[float, float]
    n: int
    method: str = "wald"


@dataclass(frozen=True)
class PsiEstimate:
    """Semiparametric estimate of the working-model parameters.

    ``covariance`` is the plug-in sandwich scaled to the estimator itself
    (i.e. already divided by n). ``per_obs_influence`` holds the estimating
    function evaluated at each observation.
    """

    psi: np.ndarray
    covariance: np.ndarray
    se: np.ndarray
    per_obs_influence: np.ndarray
    names: tuple[str, ...]
    n: int
    z_crit: float = Z_CRIT

    @property
    def ci95(self) -> np.ndarray:
        return np.column_stack([self.psi - self.z_crit * self.se, self.psi + self.z_crit * self.se])


@dataclass(frozen=True)
class WorkingModel:
    """Linear-in-parameters working model beta(v; psi) = V(x)' psi.

    ``modifiers`` lists the covariates entering V after the intercept; empty
    means the constant model psi. ``weight_fn`` maps the (n, dim) basis to
    nonnegative weights.
    """

    modifiers: tuple[str, ...] = ()
    weight_fn: Callable[[np.ndarray], np.ndarray] | None = field(default=None, compare=False)

    @classmethod
    def constant(cls) -> "WorkingModel":
        return cls(())

    @classmethod
    def linear(cls, modifiers: Sequence[str]) -> "WorkingModel":
        return cls(tuple(modifiers))

    @property
    def dim(self) -> int:
        return 1 + len(self.modifiers)

    @property
    def names(self) -> tuple[str, ...]:
        if not self.modifiers:
            return ("psi",)
        return ("intercept", *self.modifiers)

    def basis(self, data: Dataset) -> np.ndarray:
        cols = [np.ones(data.n)]
        for name in self.modifiers:
            if name not in data.covariate_names:
                raise ValidationError(f"effect modifier {name!r} is not a covariate")
            cols.append(data.x[:, data.covariate_names.index(name)])
        return np.column_stack(cols)

    def weights(self, v: np.ndarray) -> np.ndarray:
        if self.weight_fn is None:
            return np.ones(v.shape[0])
        w = np.asarray(self.weight_fn(v), dtype=float)
        if w.shape != (v.shape[0],) or (w < 0).any():
            raise ValidationError("weight function must return one nonnegative weight per row")
        return w


def _require_variance_cells(cells: CellTable) -> None:
    for c in cells.cells:
        if c.n_cell < 2:
            raise CellTooSmall(c.t, c.z, c.n_cell)


def _check_trend(delta_d: float) -> None:
    if not math.isfinite(delta_d) or abs(delta_d) <= DELTA_D_TOL:
        raise DegenerateTrend(delta_d)


def residual_cell_variance(cells: CellTable, slope_by_time: Sequence[float]) -> float:
    """Sum over cells of Var(Y - b_t D | t, z) / P(t, z) from cell moments."""
    total = 0.0
    for c in cells.cells:
        b = slope_by_time[c.t]
        v = c.var_y - 2.0 * b * c.cov_yd + b * b * c.var_d
        total += max(v, 0.0) / (c.n_cell / cells.n_total)
    return total


def wald_estimate(cells: CellTable | Dataset, z_crit: float = Z_CRIT) -> WaldEstimate:
    """Ratio of outcome to exposure double differences with its plug-in SE."""
    if isinstance(cells, Dataset):
        from .data import cell_table

        cells = cell_table(cells)
    if not cells.cov_available:
        raise ValidationError("one-sample Wald needs a microdata-backed cell table")
    dy, dd = cells.delta_y, cells.delta_d
    _check_trend(dd)
    _require_variance_cells(cells)
    beta = dy / dd
    var = residual_cell_variance(cells, (beta, beta)) / (cells.n_total * dd * dd)
    se = math.sqrt(var)
    return WaldEstimate(beta, dy, dd, se, (beta - z_crit * se, beta + z_crit * se), cells.n_total)


def two_sample_estimate(outcome: CellTable, exposure: CellTable, z_crit: float = Z_CRIT) -> WaldEstimate:
    """Two-sample ratio from outcome-sample and exposure-sample cell means.

    Only the cell means and their standard errors are used, so summary-backed
    tables work as well as microdata-backed ones.
    """
    dy, dd = outcome.delta_y, exposure.delta_d
    if not math.isfinite(dy):
        raise ValidationError("outcome table carries no outcome means")
    _check_trend(dd)
    beta = dy / dd
    var = sum(
        outcome[k].se_mean_y ** 2 + beta * beta * exposure[k].se_mean_d ** 2 for k in CELLS
    ) / (dd * dd)
    se = math.sqrt(var)
    return WaldEstimate(
        beta, dy, dd, se, (beta - z_crit * se, beta + z_crit * se),
        outcome.n_total + exposure.n_total, method="two_sample_wald",
    )


def semiparametric_estimate(
    data: Dataset,
    wm: WorkingModel,
    nuisance: NuisanceFit,
    delta_floor: float = DELTA_D_FLOOR,
    pi_clip: float | None = None,
    z_crit: float = Z_CRIT,
) -> PsiEstimate:
    """Multiply robust estimator for a linear working model.

    The estimating equation is linear in psi, so the solution is the
    weighted least-squares projection of the pseudo-outcome
    ``ratio + (2z-1)(2t-1) / (pi * delta_D) * [y - mu_Y - ratio (d - mu_D)]``
    onto the working-model basis. ``pi_clip`` bounds fitted propensities to
    ``[pi_clip, 1 - pi_clip]``.
    """
    t, z, x = data.t, data.z, data.x
    dd = nuisance.delta_D(x)
    small = np.abs(dd) <= delta_floor
    if small.any():
        raise DeltaDNearZero(int(small.sum()), delta_floor)
    ratio = nuisance.delta_Y(x) / dd
    pi = nuisance.predict_pi(t, z, x)
    if pi_clip is not None:
        pi = np.clip(pi, pi_clip, 1.0 - pi_clip)
    sign = (2.0 * z - 1.0) * (2.0 * t - 1.0)
    resid = data.y - nuisance.predict_muY(t, z, x) - ratio * (data.d - nuisance.predict_muD(t, z, x))
    pseudo = ratio + sign / (pi * dd) * resid

    v = wm.basis(data)
    w = wm.weights(v)
    fit = fit_linear(v, pseudo, weights=w)
    psi = fit.coefficients
    n = data.n
    phi = (w * (pseudo - v @ psi))[:, None] * v
    # M = -(1/n) sum w V V'; its inverse is -n (V'WV)^{-1}
    m_inv = -n * fit.xtx_inverse
    meat = phi.T @ phi / n
    cov = m_inv @ meat @ m_inv.T / n
    cov = (cov + cov.T) / 2.0
    return PsiEstimate(psi, cov, np.sqrt(np.diag(cov)), phi, wm.names, n, z_crit)


@dataclass(frozen=True)
class BaselineEstimates:
    ols_beta: float
    iv_beta: float
    ols_se: float
    iv_se: float
    include_covariates: bool

    @property
    def ses(self) -> tuple[float, float]:
        return (self.ols_se, self.iv_se)


def baseline_estimates(data: Dataset, include_covariates: bool = False) -> BaselineEstimates:
    """OLS of y on d and two-stage least squares with z instrumenting d.

    Both use homoskedastic standard errors. With ``include_covariates`` the
    covariates enter both regressions (as exogenous regressors for 2SLS).
    """
    n = data.n
    one = np.ones(n)
    exog = [one] + ([data.x[:, j] for j in range(data.p)] if include_covariates else [])
    d = data.d.astype(float)
    y = data.y

    ols = fit_linear(np.column_stack([d, *exog]), y)

    instruments = np.column_stack([data.z.astype(float), *exog])
    try:
        first = fit_linear(instruments, d)
    except RankDeficient:
        raise WeakFirstStage("instrument z has no variation beyond the exogenous regressors") from None
    if abs(first.coefficients[0]) <= 1e-12:
        raise WeakFirstStage("first-stage coefficient on z is zero")
    d_hat = instruments @ first.coefficients
    second = fit_linear(np.column_stack([d_hat, *exog]), y)
    regressors = np.column_stack([d, *exog])
    resid = y - regressors @ second.coefficients
    k = regressors.shape[1]
    sigma2 = float(resid @ resid) / (n - k)
    iv_se = math.sqrt(sigma2 * second.xtx_inverse[0, 0])
    return BaselineEstimates(
        float(ols.coefficients[0]), float(second.coefficients[0]),
        float(ols.se[0]), iv_se, include_covariates,
    )
