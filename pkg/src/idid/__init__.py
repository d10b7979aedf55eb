"""Instrumented difference-in-differences estimators."""

from .data import (
    CellSummary,
    CellTable,
    Dataset,
    Observation,
    Schema,
    cell_table,
    load_dataset,
    load_summary,
    summary_table,
    write_dataset,
    write_summary,
)
from .diagnostics import WeakIdReport, weak_id_statistic
from .estimators import (
    BaselineEstimates,
    PsiEstimate,
    WaldEstimate,
    WorkingModel,
    baseline_estimates,
    semiparametric_estimate,
    two_sample_estimate,
    wald_estimate,
)
from .inference import (
    BootstrapConfig,
    SensitivityBand,
    SensitivityConfig,
    percentile_bootstrap,
    sensitivity_one_sample,
    sensitivity_two_sample,
)
from .regression import DesignSpec, NuisanceFit, fit_linear, fit_logistic, fit_nuisance

__version__ = "0.1.0"
