"""Weak-identification diagnostic for the interaction instrument."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import CELLS, CellTable, Dataset
from .errors import CellTooSmall, ZeroSE
from .regression import fit_linear

WEAK_THRESHOLD = 10.0


def is_weak(kappa2: float) -> bool:
    return kappa2 < WEAK_THRESHOLD


@dataclass(frozen=True)
class WeakIdReport:
    kappa2_estimate: float
    method: str  # "first_stage_F" | "squared_z"
    delta_d: float
    covariates_included: bool

    @property
    def weak(self) -> bool:
        return is_weak(self.kappa2_estimate)

    def to_dict(self) -> dict:
        return {
            "kappa2_estimate": self.kappa2_estimate,
            "method": self.method,
            "delta_d": self.delta_d,
            "weak": self.weak,
            "covariates_included": self.covariates_included,
        }


def _controls(data: Dataset, covariates: bool) -> np.ndarray:
    cols = [np.ones(data.n), data.z.astype(float), data.t.astype(float)]
    if covariates:
        cols.extend(data.x.T)
    return np.column_stack(cols)


def _check_cells(data: Dataset, k: int) -> None:
    for t, z in CELLS:
        m = int(((data.t == t) & (data.z == z)).sum())
        if m < 2:
            raise CellTooSmall(t, z, m)
    if data.n <= k:
        raise CellTooSmall(1, 1, data.n, required=k + 1)


def first_stage_kappa2(data: Dataset, covariates: bool = False) -> tuple[float, float]:
    """Squared t-statistic of zt in the regression of d on (1, z, t, zt[, x]).

    Returns ``(kappa2, coefficient)``.
    """
    controls = _controls(data, covariates)
    zt = (data.z * data.t).astype(float)
    design = np.column_stack([controls[:, :3], zt, controls[:, 3:]])
    _check_cells(data, design.shape[1])
    fit = fit_linear(design, data.d.astype(float))
    coef = float(fit.coefficients[3])
    var = fit.residual_variance * fit.xtx_inverse[3, 3]
    return coef * coef / var, coef


def fwl_kappa2(data: Dataset, covariates: bool = False) -> tuple[float, float]:
    """The same statistic through Frisch-Waugh-Lovell residualization.

    ``R`` is zt residualized on the controls; kappa2 = coef^2 R'R / sigma^2
    with sigma^2 the full first-stage mean squared error.
    """
    controls = _controls(data, covariates)
    k = controls.shape[1] + 1
    _check_cells(data, k)
    zt = (data.z * data.t).astype(float)
    d = data.d.astype(float)
    r = fit_linear(controls, zt).residuals
    rr = float(r @ r)
    coef = float(r @ d) / rr
    d_resid = fit_linear(controls, d).residuals - coef * r
    sigma2 = float(d_resid @ d_resid) / (data.n - k)
    return coef * coef * rr / sigma2, coef


def weak_id_statistic(source: Dataset | CellTable, covariates: bool = False) -> WeakIdReport:
    """Estimate the concentration parameter.

    Microdata: first-stage F for the zt coefficient (homoskedastic). Exposure
    summaries: squared z-score of the exposure double difference.
    """
    if isinstance(source, Dataset):
        kappa2, coef = first_stage_kappa2(source, covariates)
        return WeakIdReport(kappa2, "first_stage_F", coef, covariates)
    dd = source.delta_d
    ses = [source[k].se_mean_d for k in CELLS]
    if any(not (s > 0) for s in ses):
        raise ZeroSE("every exposure cell needs a positive standard error")
    z = dd / math.sqrt(sum(s * s for s in ses))
    return WeakIdReport(z * z, "squared_z", dd, False)
