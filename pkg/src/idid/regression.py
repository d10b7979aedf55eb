"""Least-squares and logistic fitting kernels plus the nuisance-model bundle.

Everything here is unpenalized and fails hard on rank deficiency or
separation rather than falling back to a pseudo-inverse.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .data import Dataset
from .errors import DimensionMismatch, NotConverged, RankDeficient, Separation

RANK_TOL = 1e-10
LOGIT_MAX_ITER = 100
LOGIT_STEP_TOL = 1e-10
LOGIT_SCORE_TOL = 1e-8
SEPARATION_BOUND = 1e3


@dataclass(frozen=True)
class LinearFit:
    coefficients: np.ndarray
    residual_variance: float
    xtx_inverse: np.ndarray
    residuals: np.ndarray
    design: "DesignSpec | None" = None

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(self.residual_variance * np.diag(self.xtx_inverse))


@dataclass(frozen=True)
class LogisticFit:
    coefficients: np.ndarray
    converged: bool
    iterations: int
    design: "DesignSpec | None" = None

    def predict(self, design: np.ndarray) -> np.ndarray:
        return expit(design @ self.coefficients)


def _qr_solve(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares solution of ``a @ beta = b`` and the triangular factor R."""
    q, r = np.linalg.qr(a, mode="reduced")
    diag = np.abs(np.diag(r))
    if diag.size and (diag.min() <= RANK_TOL * max(diag.max(), 1.0) or not np.isfinite(diag).all()):
        bad = int(np.argmin(diag))
        raise RankDeficient(f"design matrix is rank deficient (column {bad} is collinear)")
    beta = np.linalg.solve(r, q.T @ b)
    return beta, r


def fit_linear(design, response, weights=None, spec: "DesignSpec | None" = None) -> LinearFit:
    """(Weighted) least squares through a QR factorization.

    ``residual_variance`` is the weighted SSR over ``n - k``. Residuals are
    returned on the original (unweighted) scale.
    """
    x = np.asarray(design, dtype=float)
    y = np.asarray(response, dtype=float)
    if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"design {x.shape} incompatible with response {y.shape}")
    n, k = x.shape
    if n < k:
        raise RankDeficient(f"{n} rows cannot identify {k} coefficients")
    if weights is None:
        xw, yw = x, y
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != (n,):
            raise DimensionMismatch("weights length does not match the response")
        if (w < 0).any():
            raise ValueError("weights must be nonnegative")
        sw = np.sqrt(w)
        xw, yw = x * sw[:, None], y * sw
    beta, r = _qr_solve(xw, yw)
    resid = y - x @ beta
    wresid = yw - xw @ beta
    ssr = float(wresid @ wresid)
    rinv = np.linalg.inv(r)
    return LinearFit(
        coefficients=beta,
        residual_variance=ssr / (n - k) if n > k else 0.0,
        xtx_inverse=rinv @ rinv.T,
        residuals=resid,
        design=spec,
    )


def fit_logistic(design, response, spec: "DesignSpec | None" = None) -> LogisticFit:
    """Maximum-likelihood logistic regression by IRLS (Newton's method).

    Stops once the largest coefficient change is <= 1e-10 or the score's
    max-norm is <= 1e-8 * n. Raises ``Separation`` when coefficients blow up
    or fitted probabilities saturate at 0/1, ``NotConverged`` after 100
    iterations.
    """
    x = np.asarray(design, dtype=float)
    y = np.asarray(response, dtype=float)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"design {x.shape} incompatible with response {y.shape}")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("logistic response must be 0/1")
    n = len(y)
    if y.min() == y.max():
        raise Separation(f"response is constant ({y[0]:g}); the MLE does not exist")
    beta = np.zeros(x.shape[1])
    for it in range(1, LOGIT_MAX_ITER + 1):
        p = expit(x @ beta)
        if (p <= 0.0).any() or (p >= 1.0).any():
            raise Separation("fitted probabilities reached 0 or 1")
        wt = p * (1.0 - p)
        sw = np.sqrt(wt)
        step, _ = _qr_solve(x * sw[:, None], (y - p) / sw)
        beta = beta + step
        if np.abs(beta).max() > SEPARATION_BOUND:
            raise Separation(f"coefficient norm exceeded {SEPARATION_BOUND:g}")
        p = expit(x @ beta)
        score = x.T @ (y - p)
        if np.abs(step).max() <= LOGIT_STEP_TOL or np.abs(score).max() <= LOGIT_SCORE_TOL * n:
            if (p <= 0.0).any() or (p >= 1.0).any():
                raise Separation("fitted probabilities reached 0 or 1")
            return LogisticFit(beta, True, it, spec)
    raise NotConverged(f"IRLS did not converge in {LOGIT_MAX_ITER} iterations")


# -- design specifications -------------------------------------------------

KINDS = ("saturated_tz", "full_interactions", "main_effects", "logistic_propensity", "custom")
TRANSFORMS = ("exp_half",)


@dataclass(frozen=True)
class DesignSpec:
    """How a nuisance model's design matrix is built.

    kind:
        ``saturated_tz``        basis (1, z, t, zt); covariates ignored
        ``full_interactions``   (1, z, t, zt) crossed with (1, x)
        ``main_effects``        (1, t, z, x)
        ``logistic_propensity`` P(Z | X, T) on (1, t, x) times P(T | X) on (1, x)
        ``custom``              ``transform`` applied to x, then ``base``
    link:
        ``identity`` for least squares, ``logit`` for a logistic mean model.
        Ignored by ``logistic_propensity``.
    """

    kind: str
    link: str = "identity"
    base: str | None = None
    transform: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown design kind {self.kind!r}; choose from {KINDS}")
        if self.kind == "custom":
            if self.base not in KINDS or self.base == "custom":
                raise ValueError("custom designs need a non-custom base kind")
            if self.transform not in TRANSFORMS:
                raise ValueError(f"custom designs need a transform from {TRANSFORMS}")
        if self.link not in ("identity", "logit"):
            raise ValueError(f"unknown link {self.link!r}")

    @property
    def base_kind(self) -> str:
        return self.base if self.kind == "custom" else self.kind

    def transform_x(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "custom" and self.transform == "exp_half":
            return np.exp(x / 2.0)
        return x

    def matrix(self, t, z, x: np.ndarray) -> np.ndarray:
        """Outcome-model design for arrays (or scalars broadcast) t, z and x."""
        x = self.transform_x(np.asarray(x, dtype=float))
        n = x.shape[0]
        t = np.broadcast_to(np.asarray(t, dtype=float), (n,))
        z = np.broadcast_to(np.asarray(z, dtype=float), (n,))
        one = np.ones(n)
        kind = self.base_kind
        if kind == "saturated_tz":
            return np.column_stack([one, z, t, z * t])
        if kind == "full_interactions":
            blocks = [one, z, t, z * t]
            cols = []
            for b in blocks:
                cols.append(b)
                cols.extend(b[:, None] * x[:, j][:, None] for j in range(x.shape[1]))
            return np.column_stack([c.reshape(n) for c in cols])
        if kind == "main_effects":
            return np.column_stack([one, t, z, x])
        raise ValueError(f"{kind!r} does not define an outcome-model design")

    def propensity_matrices(self, t, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Designs for P(Z=1 | X, T) and P(T=1 | X)."""
        if self.base_kind != "logistic_propensity":
            raise ValueError(f"{self.kind!r} is not a propensity design")
        x = self.transform_x(np.asarray(x, dtype=float))
        n = x.shape[0]
        t = np.broadcast_to(np.asarray(t, dtype=float), (n,))
        one = np.ones(n)
        return np.column_stack([one, t, x]), np.column_stack([one, x])

    @property
    def name(self) -> str:
        if self.kind == "custom":
            return f"custom:{self.base}"
        if self.link == "logit":
            return f"{self.kind}:logit"
        return self.kind

    @classmethod
    def parse(cls, name: "str | DesignSpec") -> "DesignSpec":
        """Parse ``kind``, ``kind:logit`` or ``custom:<base>`` (exp(x/2) transform)."""
        if isinstance(name, DesignSpec):
            return name
        kind, _, arg = name.partition(":")
        if kind == "custom":
            return cls("custom", base=arg or "full_interactions", transform="exp_half")
        if arg == "logit":
            return cls(kind, link="logit")
        if arg:
            raise ValueError(f"cannot parse design spec {name!r}")
        return cls(kind)


CORRECT_MU = DesignSpec("full_interactions")
CORRECT_PI = DesignSpec("logistic_propensity")
MISSPECIFIED_MU_Y = DesignSpec("custom", base="full_interactions", transform="exp_half")
MISSPECIFIED_MU_D = DesignSpec("main_effects", link="logit")
MISSPECIFIED_PI = DesignSpec("custom", base="logistic_propensity", transform="exp_half")


# -- nuisance models -------------------------------------------------------


@dataclass(frozen=True)
class MeanModel:
    """A fitted conditional mean E(C | T, Z, X)."""

    spec: DesignSpec
    coefficients: np.ndarray

    def predict(self, t, z, x) -> np.ndarray:
        eta = self.spec.matrix(t, z, x) @ self.coefficients
        return expit(eta) if self.spec.link == "logit" else eta

    def delta(self, x) -> np.ndarray:
        """Double difference over (t, z) at each covariate row."""
        return (self.predict(1, 1, x) - self.predict(0, 1, x)) - (
            self.predict(1, 0, x) - self.predict(0, 0, x)
        )


def fit_mean_model(data: Dataset, response: np.ndarray, spec: DesignSpec) -> MeanModel:
    design = spec.matrix(data.t, data.z, data.x)
    if spec.link == "logit":
        return MeanModel(spec, fit_logistic(design, response, spec).coefficients)
    return MeanModel(spec, fit_linear(design, response, spec=spec).coefficients)


@dataclass(frozen=True)
class PropensityModel:
    """Joint P(T=t, Z=z | X) factorized as P(Z=z | X, T=t) * P(T=t | X)."""

    spec: DesignSpec
    z_coefficients: np.ndarray
    t_coefficients: np.ndarray

    def predict(self, t, z, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        zd, td = self.spec.propensity_matrices(t, x)
        pz1 = expit(zd @ self.z_coefficients)
        pt1 = expit(td @ self.t_coefficients)
        z = np.asarray(z, dtype=float)
        t = np.asarray(t, dtype=float)
        pz = z * pz1 + (1 - z) * (1 - pz1)
        pt = t * pt1 + (1 - t) * (1 - pt1)
        return pz * pt


def fit_propensity(data: Dataset, spec: DesignSpec) -> PropensityModel:
    zd, td = spec.propensity_matrices(data.t, data.x)
    zfit = fit_logistic(zd, data.z.astype(float), spec)
    tfit = fit_logistic(td, data.t.astype(float), spec)
    return PropensityModel(spec, zfit.coefficients, tfit.coefficients)


@dataclass(frozen=True)
class NuisanceFit:
    mu_y: MeanModel
    mu_d: MeanModel
    pi: PropensityModel

    def predict_muY(self, t, z, x) -> np.ndarray:
        return self.mu_y.predict(t, z, x)

    def predict_muD(self, t, z, x) -> np.ndarray:
        return self.mu_d.predict(t, z, x)

    def predict_pi(self, t, z, x) -> np.ndarray:
        return self.pi.predict(t, z, x)

    def delta_Y(self, x) -> np.ndarray:
        return self.mu_y.delta(x)

    def delta_D(self, x) -> np.ndarray:
        return self.mu_d.delta(x)


def fit_nuisance(
    data: Dataset,
    spec_muY: DesignSpec | str = CORRECT_MU,
    spec_muD: DesignSpec | str = CORRECT_MU,
    spec_pi: DesignSpec | str = CORRECT_PI,
) -> NuisanceFit:
    """Fit mu_Y, mu_D and pi on the full sample."""
    return NuisanceFit(
        mu_y=fit_mean_model(data, data.y, DesignSpec.parse(spec_muY)),
        mu_d=fit_mean_model(data, data.d.astype(float), DesignSpec.parse(spec_muD)),
        pi=fit_propensity(data, DesignSpec.parse(spec_pi)),
    )
