"""Simulation designs (cases 1 and 2) and the parallel Monte Carlo engine."""

from __future__ import annotations

import csv
import io
import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, ndtr, ndtri

from .data import Dataset, cell_table
from .errors import IdidError
from .estimators import (
    Z_CRIT,
    WorkingModel,
    baseline_estimates,
    semiparametric_estimate,
    wald_estimate,
)
from .inference import BootstrapConfig, percentile_bootstrap, replicate_rng
from .regression import (
    CORRECT_MU,
    CORRECT_PI,
    MISSPECIFIED_MU_D,
    MISSPECIFIED_MU_Y,
    MISSPECIFIED_PI,
    NuisanceFit,
    fit_mean_model,
    fit_propensity,
)

log = logging.getLogger(__name__)

TRUE_EFFECT = 1.0
NUISANCES = ("pi", "mu_d", "mu_y")
ESTIMATORS = ("ols", "standard_iv", "wald", "semipar_constant", "semipar_linear")
MAX_FAILURE_RATE = 0.01
# misspecified propensities can get arbitrarily close to 0
PI_FLOOR = 1e-6

_TN_LO = float(ndtr(-1.0))
_TN_HI = float(ndtr(1.0))


def sample_truncated_normal(rng: np.random.Generator, size=None) -> np.ndarray | float:
    """Standard normal truncated to (-1, 1), by inverse-CDF sampling."""
    u = rng.random(size)
    return ndtri(_TN_LO + u * (_TN_HI - _TN_LO))


@dataclass(frozen=True)
class DgpCase:
    case: str = "case1"
    n: int = 20_000

    def __post_init__(self):
        if self.case not in ("case1", "case2"):
            raise ValueError(f"unknown case {self.case!r}")
        if self.n < 8:
            raise ValueError("n must be at least 8")


def generate_case_data(dgp: DgpCase, rng: np.random.Generator) -> Dataset:
    """One simulated sample with covariate ``x``.

    Both time points' latent variables are drawn for every row; T selects
    which one is observed.
    """
    n = dgp.n
    t = (rng.random(n) < 0.5).astype(np.int8)
    x = rng.standard_normal(n)
    pz = 0.5 if dgp.case == "case1" else expit(0.5 * x)
    z = (rng.random(n) < pz).astype(np.int8)
    u0 = 0.0 + sample_truncated_normal(rng, n)
    u1 = 1.0 + sample_truncated_normal(rng, n)
    e0 = rng.standard_normal(n)
    e1 = rng.standard_normal(n)
    p0 = (z + 1) * u0 / 8 + 0.5
    p1 = (z + 1) * u1 / 8 + 0.5
    d0 = (rng.random(n) < p0).astype(np.int8)
    d1 = (rng.random(n) < p1).astype(np.int8)
    y0 = (1 + x) * d0 + 2 + 2 * u0 + z + x + e0
    y1 = (1 + x) * d1 + 2 + 2 * u1 + z + x + e1
    d = np.where(t == 1, d1, d0)
    y = np.where(t == 1, y1, y0)
    return Dataset(t=t, z=z, d=d, y=y, x=x[:, None], covariate_names=("x",))


# -- scenario grid -------------------------------------------------------------


def scenario_id(correct: tuple[str, ...]) -> str:
    ordered = [k for k in NUISANCES if k in correct]
    return "(" + ", ".join(ordered) + ")" if ordered else "(none)"


def default_subsets(case: str) -> list[tuple[str, ...]]:
    subsets = []
    for r in range(len(NUISANCES), -1, -1):
        for combo in itertools.combinations(NUISANCES, r):
            # pi is always correct in case 1, so only subsets containing it are shown
            if case == "case1" and "pi" not in combo:
                continue
            subsets.append(combo)
    return subsets


@dataclass(frozen=True)
class ScenarioGrid:
    correct_subsets: tuple[tuple[str, ...], ...] | None = None
    estimators: tuple[str, ...] = ESTIMATORS
    replications: int = 500
    master_seed: int = 0
    se_method: str = "plugin"
    bootstrap_replications: int = 200
    iv_covariates: bool | None = None
    ols_covariates: bool = False
    repeat_stream: bool = False

    def __post_init__(self):
        if self.replications < 2:
            raise ValueError("replications must be at least 2")
        for e in self.estimators:
            if e not in ESTIMATORS:
                raise ValueError(f"unknown estimator {e!r}")
        if self.se_method not in ("plugin", "bootstrap"):
            raise ValueError("se_method must be 'plugin' or 'bootstrap'")
        if self.correct_subsets is not None:
            for s in self.correct_subsets:
                bad = set(s) - set(NUISANCES)
                if bad:
                    raise ValueError(f"unknown nuisance names {sorted(bad)}")

    def subsets(self, case: str) -> list[tuple[str, ...]]:
        if self.correct_subsets is None:
            return default_subsets(case)
        return [tuple(k for k in NUISANCES if k in s) for s in self.correct_subsets]


@dataclass(frozen=True)
class MonteCarloRow:
    case: str
    scenario: str
    estimator: str
    bias: float
    sd: float
    median_se: float
    coverage: float
    n_ok: int
    n_failed: int
    median_bias: float = float("nan")

    @property
    def valid(self) -> bool:
        return self.n_failed < MAX_FAILURE_RATE * (self.n_ok + self.n_failed)


@dataclass
class _Draw:
    estimate: float
    se: float
    lo: float
    hi: float


@dataclass
class _RepResult:
    index: int
    draws: dict = field(default_factory=dict)  # (scenario, estimator) -> _Draw | None


def _nuisance_for(data: Dataset, correct: tuple[str, ...], cache: dict) -> NuisanceFit:
    def get(key, fit):
        if key not in cache:
            cache[key] = fit()
        return cache[key]

    mu_y_spec = CORRECT_MU if "mu_y" in correct else MISSPECIFIED_MU_Y
    mu_d_spec = CORRECT_MU if "mu_d" in correct else MISSPECIFIED_MU_D
    pi_spec = CORRECT_PI if "pi" in correct else MISSPECIFIED_PI
    return NuisanceFit(
        mu_y=get(("mu_y", mu_y_spec), lambda: fit_mean_model(data, data.y, mu_y_spec)),
        mu_d=get(("mu_d", mu_d_spec), lambda: fit_mean_model(data, data.d.astype(float), mu_d_spec)),
        pi=get(("pi", pi_spec), lambda: fit_propensity(data, pi_spec)),
    )


def _semipar_draws(data, correct, wm, grid, rng, cache) -> list[_Draw]:
    nuis = _nuisance_for(data, correct, cache)
    est = semiparametric_estimate(data, wm, nuis, pi_clip=PI_FLOOR)
    if grid.se_method == "plugin":
        return [_Draw(p, s, *_ci(p, s)) for p, s in zip(est.psi, est.se)]

    def stat(sample: Dataset) -> np.ndarray:
        return semiparametric_estimate(sample, wm, _nuisance_for(sample, correct, {}), pi_clip=PI_FLOOR).psi

    cfg = BootstrapConfig(grid.bootstrap_replications, master_seed=int(rng.integers(2**63)))
    boot = percentile_bootstrap(data, stat, cfg)
    return [_Draw(*v) for v in zip(est.psi, boot.se, boot.ci_low, boot.ci_high)]


def _run_one(index: int, grid: ScenarioGrid, dgp: DgpCase) -> _RepResult:
    stream = 0 if grid.repeat_stream else index
    rng = replicate_rng(grid.master_seed, stream)
    data = generate_case_data(dgp, rng)
    out = _RepResult(index)

    def record(key, fn):
        try:
            out.draws[key] = fn()
        except (IdidError, np.linalg.LinAlgError, FloatingPointError) as exc:
            log.debug("replication %d, %s failed: %s", index, key, exc)
            out.draws[key] = None

    iv_cov = grid.iv_covariates if grid.iv_covariates is not None else dgp.case == "case2"
    if "ols" in grid.estimators or "standard_iv" in grid.estimators:
        def baselines():
            b_ols = baseline_estimates(data, include_covariates=grid.ols_covariates)
            b_iv = b_ols if iv_cov == grid.ols_covariates else baseline_estimates(data, iv_cov)
            return b_ols, b_iv

        try:
            b_ols, b_iv = baselines()
            if "ols" in grid.estimators:
                out.draws["", "ols"] = [_Draw(b_ols.ols_beta, b_ols.ols_se, *_ci(b_ols.ols_beta, b_ols.ols_se))]
            if "standard_iv" in grid.estimators:
                out.draws["", "standard_iv"] = [_Draw(b_iv.iv_beta, b_iv.iv_se, *_ci(b_iv.iv_beta, b_iv.iv_se))]
        except IdidError:
            for e in ("ols", "standard_iv"):
                if e in grid.estimators:
                    out.draws["", e] = None
    if "wald" in grid.estimators:
        def wald():
            w = wald_estimate(cell_table(data))
            return [_Draw(w.beta, w.se, *w.ci95)]

        record(("", "wald"), wald)
    cache: dict = {}
    for correct in grid.subsets(dgp.case):
        sid = scenario_id(correct)
        for name, wm in (("semipar_constant", WorkingModel.constant()), ("semipar_linear", WorkingModel.linear(["x"]))):
            if name in grid.estimators:
                record((sid, name), lambda: _semipar_draws(data, correct, wm, grid, rng, cache))
    return out


def _ci(est: float, se: float) -> tuple[float, float]:
    return est - Z_CRIT * se, est + Z_CRIT * se


def _row_labels(estimator: str, k: int) -> list[str]:
    if estimator == "semipar_linear":
        return [f"semipar_linear_psi{j + 1}" for j in range(k)]
    return [estimator]


def _aggregate(results: list[_RepResult], case: str) -> list[MonteCarloRow]:
    keys: list = []
    for r in results:
        for key in r.draws:
            if key not in keys:
                keys.append(key)
    rows = []
    for scenario, estimator in keys:
        draws = [r.draws.get((scenario, estimator)) for r in results]
        ok = [d for d in draws if d is not None]
        failed = len(draws) - len(ok)
        k = len(ok[0]) if ok else 1
        for j, label in enumerate(_row_labels(estimator, k)):
            if not ok:
                rows.append(MonteCarloRow(case, scenario, label, *([float("nan")] * 4), 0, failed))
                continue
            est = np.array([d[j].estimate for d in ok])
            se = np.array([d[j].se for d in ok])
            lo = np.array([d[j].lo for d in ok])
            hi = np.array([d[j].hi for d in ok])
            cover = (lo <= TRUE_EFFECT) & (TRUE_EFFECT <= hi)
            rows.append(
                MonteCarloRow(
                    case=case,
                    scenario=scenario,
                    estimator=label,
                    bias=float(est.mean() - TRUE_EFFECT),
                    sd=float(est.std(ddof=1)) if len(est) > 1 else 0.0,
                    median_se=float(np.median(se)),
                    coverage=float(cover.mean()),
                    n_ok=len(ok),
                    n_failed=failed,
                    median_bias=float(np.median(est) - TRUE_EFFECT),
                )
            )
    return rows


def run_monte_carlo(grid: ScenarioGrid, dgp: DgpCase, threads: int = 1) -> list[MonteCarloRow]:
    """Run ``grid.replications`` independent replications and summarize them.

    Replication ``r`` draws from its own counter-based stream keyed on
    ``(master_seed, r)``; results are gathered in replication order, so the
    output does not depend on ``threads``.
    """
    indices = range(grid.replications)
    if threads <= 1:
        results = [_run_one(i, grid, dgp) for i in indices]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda i: _run_one(i, grid, dgp), indices))
    results.sort(key=lambda r: r.index)
    return _aggregate(results, dgp.case)


# bias, sd, se, cp mirror the published tables; median_bias is a robust extra
MC_COLUMNS = ("case", "scenario", "estimator", "bias", "sd", "se", "cp", "n_ok", "n_failed", "median_bias")


def rows_to_csv(rows: list[MonteCarloRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(MC_COLUMNS)
    for r in rows:
        w.writerow([
            r.case, r.scenario, r.estimator,
            f"{r.bias:.6f}", f"{r.sd:.6f}", f"{r.median_se:.6f}", f"{r.coverage:.4f}",
            r.n_ok, r.n_failed, f"{r.median_bias:.6f}",
        ])
    return buf.getvalue()
