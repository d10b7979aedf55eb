"""Bootstrap resampling and sensitivity analysis for time-varying effects."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data import CellTable, Dataset, cell_table
from .errors import (
    CellTooSmall,
    DegenerateTrend,
    DeltaDNearZero,
    EmptyCell,
    RankDeficient,
    Separation,
    TooManyDegenerateResamples,
    ValidationError,
)
from .estimators import (
    Z_CRIT,
    _check_trend,
    _require_variance_cells,
    residual_cell_variance,
    two_sample_estimate,
)

# Resample failures that reflect a degenerate draw rather than a bug.
REDRAW_ERRORS = (EmptyCell, DegenerateTrend, CellTooSmall, DeltaDNearZero, RankDeficient, Separation)


def replicate_rng(master_seed: int, index: int) -> np.random.Generator:
    """Independent counter-based (Philox) stream for replicate ``index``."""
    seq = np.random.SeedSequence([int(master_seed) & 0xFFFFFFFFFFFFFFFF, int(index)])
    return np.random.Generator(np.random.Philox(seq))


@dataclass(frozen=True)
class BootstrapConfig:
    replications: int = 200
    resample_unit: str = "row"
    master_seed: int = 0
    ci_level: float = 0.95

    def __post_init__(self):
        if self.replications < 2:
            raise ValueError("replications must be at least 2")
        if self.resample_unit not in ("row", "unit_id_block"):
            raise ValueError("resample_unit must be 'row' or 'unit_id_block'")
        if not 0.0 < self.ci_level < 1.0:
            raise ValueError("ci_level must lie in (0, 1)")


@dataclass(frozen=True)
class BootstrapResult:
    se: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    replicates: np.ndarray  # (B, k)
    attempts: int

    @property
    def ci(self) -> np.ndarray:
        return np.column_stack([self.ci_low, self.ci_high])


def _block_index(unit_id: np.ndarray) -> list[np.ndarray]:
    keys, inverse = np.unique(unit_id.astype(str), return_inverse=True)
    order = np.argsort(inverse, kind="stable")
    bounds = np.cumsum(np.bincount(inverse, minlength=len(keys)))[:-1]
    return np.split(order, bounds)


def percentile_bootstrap(
    data: Dataset,
    estimator: Callable[[Dataset], float | np.ndarray],
    cfg: BootstrapConfig,
    threads: int = 1,
) -> BootstrapResult:
    """Nonparametric bootstrap SE and percentile interval for ``estimator``.

    Rows (or whole ``unit_id`` blocks) are drawn with replacement. A resample
    on which the estimator hits a degenerate-data error is redrawn from the
    same replicate stream; more than ``10 * B`` draws in total is an error.
    Quantiles interpolate linearly between order statistics.
    """
    np.atleast_1d(estimator(data))  # must work on the observed sample
    blocks = None
    if cfg.resample_unit == "unit_id_block":
        if data.unit_id is None:
            raise ValidationError("block bootstrap needs a unit_id column")
        blocks = _block_index(data.unit_id)
    cap = 10 * cfg.replications

    def one(b: int) -> tuple[np.ndarray, int]:
        rng = replicate_rng(cfg.master_seed, b)
        for attempt in range(1, cap + 1):
            if blocks is None:
                idx = rng.integers(0, data.n, data.n)
            else:
                pick = rng.integers(0, len(blocks), len(blocks))
                idx = np.concatenate([blocks[j] for j in pick])
            try:
                return np.atleast_1d(np.asarray(estimator(data.take(idx)), dtype=float)), attempt
            except REDRAW_ERRORS:
                continue
        raise TooManyDegenerateResamples(f"replicate {b} failed {cap} times")

    if threads <= 1:
        out = [one(b) for b in range(cfg.replications)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            out = list(pool.map(one, range(cfg.replications)))
    attempts = sum(a for _, a in out)
    if attempts > cap:
        raise TooManyDegenerateResamples(f"{attempts} draws needed for {cfg.replications} replicates")
    reps = np.vstack([v for v, _ in out])
    alpha = 1.0 - cfg.ci_level
    lo = np.quantile(reps, alpha / 2, axis=0, method="linear")
    hi = np.quantile(reps, 1 - alpha / 2, axis=0, method="linear")
    return BootstrapResult(reps.std(axis=0, ddof=1), lo, hi, reps, attempts)


# -- sensitivity analysis ----------------------------------------------------------


@dataclass(frozen=True)
class SensitivityConfig:
    """Bounds on the change in average effect between the two time points."""

    gamma_lower: float = 0.0
    gamma_upper: float = 0.0
    grid_points: int = 101
    target: str = "time0_effect"
    z_crit: float = Z_CRIT

    def __post_init__(self):
        if not self.gamma_lower <= 0.0 <= self.gamma_upper:
            raise ValueError("need gamma_lower <= 0 <= gamma_upper")
        if self.grid_points < 2:
            raise ValueError("grid_points must be at least 2")
        if self.target not in ("time0_effect", "time1_effect"):
            raise ValueError("target must be 'time0_effect' or 'time1_effect'")

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(self.gamma_lower, self.gamma_upper, self.grid_points)


@dataclass(frozen=True)
class SensitivityPoint:
    delta: float
    estimate: float
    ci_low: float
    ci_high: float


@dataclass(frozen=True)
class SensitivityBand:
    grid: tuple[SensitivityPoint, ...]
    union_ci: tuple[float, float]
    target: str


def _shift_coefficient(means: dict, delta_d: float, target: str) -> float:
    """Coefficient a with estimate(Delta) = ratio - a * Delta."""
    if target == "time0_effect":
        return (means[1, 1] - means[1, 0]) / delta_d
    return (means[0, 1] - means[0, 0]) / delta_d


def _effect_by_time(estimate: float, delta: float, target: str) -> tuple[float, float]:
    """Average effect at t = 0 and t = 1 implied by the target effect and Delta."""
    if target == "time0_effect":
        return estimate, estimate + delta
    return estimate - delta, estimate


def _band(points: list[SensitivityPoint], target: str) -> SensitivityBand:
    lo = min(p.ci_low for p in points)
    hi = max(p.ci_high for p in points)
    return SensitivityBand(tuple(points), (lo, hi), target)


def sensitivity_one_sample(data: Dataset | CellTable, cfg: SensitivityConfig) -> SensitivityBand:
    """Wald estimate corrected for a time-varying effect, over a grid of Delta.

    Target ``time0_effect`` uses ratio - Delta (mu_D(1,1) - mu_D(1,0)) / delta_D;
    ``time1_effect`` uses ratio - Delta (mu_D(0,1) - mu_D(0,0)) / delta_D.
    CIs are unioned over the grid.
    """
    cells = cell_table(data) if isinstance(data, Dataset) else data
    if not cells.cov_available:
        raise ValidationError("one-sample sensitivity analysis needs microdata")
    dd = cells.delta_d
    _check_trend(dd)
    _require_variance_cells(cells)
    ratio = cells.delta_y / dd
    md = {(c.t, c.z): c.mean_d for c in cells.cells}
    a = _shift_coefficient(md, dd, cfg.target)
    points = []
    for delta in cfg.grid:
        delta = float(delta)
        est = ratio - a * delta
        var = residual_cell_variance(cells, _effect_by_time(est, delta, cfg.target)) / (cells.n_total * dd * dd)
        se = math.sqrt(var)
        points.append(SensitivityPoint(delta, est, est - cfg.z_crit * se, est + cfg.z_crit * se))
    return _band(points, cfg.target)


def sensitivity_two_sample(outcome: CellTable, exposure: CellTable, cfg: SensitivityConfig) -> SensitivityBand:
    """Two-sample analogue of :func:`sensitivity_one_sample` from cell means and SEs."""
    base = two_sample_estimate(outcome, exposure)  # validates both tables
    dd = base.delta_d
    md = {(c.t, c.z): c.mean_d for c in exposure.cells}
    a = _shift_coefficient(md, dd, cfg.target)
    points = []
    for delta in cfg.grid:
        delta = float(delta)
        est = base.beta - a * delta
        slopes = _effect_by_time(est, delta, cfg.target)
        var = sum(
            outcome[c.t, c.z].se_mean_y ** 2 + slopes[c.t] ** 2 * c.se_mean_d ** 2 for c in exposure.cells
        ) / (dd * dd)
        se = math.sqrt(var)
        points.append(SensitivityPoint(delta, est, est - cfg.z_crit * se, est + cfg.z_crit * se))
    return _band(points, cfg.target)
