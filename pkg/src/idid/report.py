"""JSON report assembly. Output is deterministic: sorted keys, fixed float repr."""

from __future__ import annotations

import json
import math

import numpy as np

from .diagnostics import WeakIdReport
from .estimators import BaselineEstimates, PsiEstimate, WaldEstimate
from .inference import BootstrapResult, SensitivityBand

SCHEMA_VERSION = "1.0"

WARNINGS = {
    "weak_identification": "weak identification (κ² < 10)",
    "pi_clipped": "fitted propensities were clipped before inversion",
    "summary_covariance_unavailable": "summary inputs carry no within-cell Y-D covariance",
    "bootstrap_redraws": "some bootstrap resamples were degenerate and were redrawn",
    "wald_ignores_covariates": "the Wald estimator ignores covariates; see the semiparametric result",
}


def warning(code: str) -> dict:
    return {"code": code, "message": WARNINGS[code]}


def clean(obj):
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(report: dict) -> str:
    return json.dumps(clean(report), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def new_report(command: str) -> dict:
    return {"schema_version": SCHEMA_VERSION, "command": command, "results": [], "warnings": []}


def wald_entry(w: WaldEstimate) -> dict:
    return {
        "method": w.method,
        "estimate": w.beta,
        "se": w.se,
        "ci95": list(w.ci95),
        "n": w.n,
        "delta_y": w.delta_y,
        "delta_d": w.delta_d,
    }


def psi_entry(p: PsiEstimate, working_model: str, nuisance: dict, boot: BootstrapResult | None = None) -> dict:
    entry = {
        "method": "semiparametric",
        "working_model": working_model,
        "estimates": dict(zip(p.names, p.psi)),
        "ses": dict(zip(p.names, p.se)),
        "ci95": {k: list(ci) for k, ci in zip(p.names, p.ci95)},
        "n": p.n,
        "nuisance": nuisance,
    }
    if boot is not None:
        entry["bootstrap"] = {
            "ses": dict(zip(p.names, boot.se)),
            "percentile_ci": {k: [lo, hi] for k, lo, hi in zip(p.names, boot.ci_low, boot.ci_high)},
            "replications": len(boot.replicates),
            "attempts": boot.attempts,
        }
    return entry


def baseline_entries(b: BaselineEstimates, n: int) -> list[dict]:
    return [
        {"method": "ols", "estimate": b.ols_beta, "se": b.ols_se,
         "ci95": [b.ols_beta - 1.96 * b.ols_se, b.ols_beta + 1.96 * b.ols_se], "n": n},
        {"method": "standard_iv", "estimate": b.iv_beta, "se": b.iv_se,
         "ci95": [b.iv_beta - 1.96 * b.iv_se, b.iv_beta + 1.96 * b.iv_se], "n": n},
    ]


def attach_weak_id(report: dict, w: WeakIdReport) -> None:
    report.setdefault("diagnostics", {})["weak_id"] = w.to_dict()
    if w.weak:
        report["warnings"].append(warning("weak_identification"))


def band_entry(band: SensitivityBand) -> dict:
    return {
        "method": "sensitivity",
        "target": band.target,
        "union_ci": list(band.union_ci),
        "gamma": [band.grid[0].delta, band.grid[-1].delta],
        "grid_points": len(band.grid),
    }


def band_csv(band: SensitivityBand) -> str:
    lines = ["delta,estimate,ci_low,ci_high"]
    for p in band.grid:
        lines.append(f"{p.delta!r},{p.estimate!r},{p.ci_low!r},{p.ci_high!r}")
    return "\n".join(lines) + "\n"
