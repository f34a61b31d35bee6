"""OLS engine and diagnostics, bivariate slot comparisons, and home inference.

The solver uses a QR decomposition of the design matrix for conditioning; the
test suite checks it against an independent normal-equations oracle. P-values
come from the t-distribution with n - k - 1 degrees of freedom and AIC is
n*ln(RSS/n) + 2*(k+1).
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Collection, Iterable, Sequence

import numpy as np
from scipy import stats as sps
from scipy.linalg import solve_triangular

from .errors import DataError, SingularityError

logger = logging.getLogger(__name__)

DEFAULT_ALPHA = 0.01
DEFAULT_NIGHT_BINS = range(88, 96)  # 22:00-24:00


@dataclass
class OlsFit:
    """Full least-squares result; arrays align with ``names`` (intercept first)."""

    names: tuple[str, ...]
    coefficients: np.ndarray
    std_errors: np.ndarray
    t_stats: np.ndarray
    p_values: np.ndarray
    r2: float
    adj_r2: float
    f_stat: float
    f_p_value: float
    aic: float
    residuals: np.ndarray
    vif: dict[str, float]
    n: int
    intercept: bool
    warnings: list[str] = field(default_factory=list)

    @property
    def k(self) -> int:
        """Number of predictors, excluding the intercept."""
        return len(self.names) - (1 if self.intercept else 0)

    def coefficient(self, name: str) -> float:
        return float(self.coefficients[self.names.index(name)])

    def p_value(self, name: str) -> float:
        return float(self.p_values[self.names.index(name)])


def _validate_design(X: np.ndarray, names: Sequence[str]) -> None:
    if X.ndim != 2:
        raise DataError("X must be a 2-d array (observations x predictors)")
    for j, name in enumerate(names):
        if not np.any(X[:, j]):
            raise SingularityError([name], f"predictor {name!r} is all zero")
    for j in range(X.shape[1]):
        for i in range(j):
            if np.array_equal(X[:, i], X[:, j]):
                raise SingularityError([names[i], names[j]],
                                       f"predictors {names[i]!r} and {names[j]!r} are identical")


def _dependent_columns(design: np.ndarray, names: Sequence[str]) -> list[str]:
    """Columns that do not increase the rank of the preceding ones."""
    bad = []
    rank = 0
    for j in range(design.shape[1]):
        new_rank = np.linalg.matrix_rank(design[:, :j + 1])
        if new_rank == rank:
            bad.append(names[j])
        rank = new_rank
    return bad


def _aux_r2(y: np.ndarray, X: np.ndarray) -> float:
    """R-squared of y ~ X + intercept, for the VIF auxiliary regressions."""
    design = np.column_stack([np.ones(len(y)), X])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    tss = float(np.sum((y - y.mean()) ** 2))
    if tss == 0.0:
        return 0.0
    return 1.0 - float(resid @ resid) / tss


def fit_ols(y, X, names: Sequence[str] | None = None, intercept: bool = True) -> OlsFit:
    """Ordinary least squares of y on the columns of X.

    X excludes the intercept column; pass ``intercept=False`` to fit through
    the origin. Raises :class:`SingularityError` naming the offending columns
    for all-zero, duplicate, or linearly dependent predictors.
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    n, k = X.shape
    if len(y) != n:
        raise DataError(f"y has {len(y)} observations but X has {n}")
    if names is None:
        names = tuple(f"x{j + 1}" for j in range(k))
    elif len(names) != k:
        raise DataError("names must match the number of predictor columns")
    else:
        names = tuple(names)
    if n <= k + 1:
        raise DataError(f"need more than {k + 1} observations for {k} predictors, got {n}")
    if k:
        _validate_design(X, names)

    if intercept:
        design = np.column_stack([np.ones(n), X])
        all_names = ("intercept",) + names
    else:
        design = X
        all_names = names
    p = design.shape[1]
    if np.linalg.matrix_rank(design) < p:
        bad = _dependent_columns(design, all_names)
        raise SingularityError(bad or list(all_names))

    q, r = np.linalg.qr(design)
    coef = solve_triangular(r, q.T @ y)
    fitted = design @ coef
    residuals = y - fitted
    rss = float(residuals @ residuals)
    if intercept:
        tss = float(np.sum((y - y.mean()) ** 2))
    else:
        tss = float(y @ y)
    dof = n - p
    r2 = 0.0 if tss == 0.0 else 1.0 - rss / tss
    adj_r2 = r2 if dof == 0 else 1.0 - (1.0 - r2) * (n - 1) / dof

    sigma2 = rss / dof
    r_inv = solve_triangular(r, np.eye(p))
    cov = sigma2 * (r_inv @ r_inv.T)
    std_errors = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        t_stats = np.where(std_errors > 0, coef / np.where(std_errors > 0, std_errors, 1.0),
                           np.where(coef == 0, 0.0, np.inf * np.sign(coef)))
    p_values = 2.0 * sps.t.sf(np.abs(t_stats), dof)

    if k >= 1 and tss > 0.0:
        if rss == 0.0:
            f_stat, f_p = float("inf"), 0.0
        else:
            f_stat = ((tss - rss) / k) / (rss / dof)
            f_p = float(sps.f.sf(f_stat, k, dof))
    else:
        f_stat, f_p = float("nan"), float("nan")

    aic = float("-inf") if rss == 0.0 else n * np.log(rss / n) + 2.0 * (k + 1)

    vif: dict[str, float] = {}
    for j, name in enumerate(names):
        if k == 1:
            vif[name] = 1.0
            continue
        others = np.delete(X, j, axis=1)
        r2_j = _aux_r2(X[:, j], others)
        vif[name] = float("inf") if r2_j >= 1.0 else 1.0 / (1.0 - r2_j)

    return OlsFit(all_names, coef, std_errors, t_stats, p_values,
                  float(r2), float(adj_r2), float(f_stat), float(f_p), float(aic),
                  residuals, vif, n, intercept)


def _intercept_only_fit(y: np.ndarray) -> OlsFit:
    y = np.asarray(y, dtype=float).reshape(-1)
    n = len(y)
    mean = float(y.mean())
    residuals = y - mean
    rss = float(residuals @ residuals)
    dof = n - 1
    se = np.sqrt(rss / dof / n) if dof else 0.0
    t = mean / se if se > 0 else (0.0 if mean == 0 else float("inf"))
    p = float(2.0 * sps.t.sf(abs(t), dof)) if dof else float("nan")
    aic = float("-inf") if rss == 0.0 else n * np.log(rss / n) + 2.0
    return OlsFit(("intercept",), np.array([mean]), np.array([se]), np.array([t]),
                  np.array([p]), 0.0, 0.0, float("nan"), float("nan"), aic,
                  residuals, {}, n, True)


def stepwise_fit(y, X, names: Sequence[str] | None = None,
                 alpha: float = DEFAULT_ALPHA) -> tuple[OlsFit, list[str]]:
    """Two-pass elimination: fit all predictors, drop every one with p >= alpha, refit.

    Exactly two passes, never iterated. Any control variable in X is treated
    like the rest. If everything is dropped an intercept-only fit is returned
    with a warning attached.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if names is None:
        names = tuple(f"x{j + 1}" for j in range(X.shape[1]))
    first = fit_ols(y, X, names=names, intercept=True)
    dropped = [name for name in names if first.p_value(name) >= alpha]
    if not dropped:
        return first, []
    keep = [j for j, name in enumerate(names) if name not in dropped]
    if not keep:
        fit = _intercept_only_fit(y)
        fit.warnings.append("all predictors dropped; intercept-only model")
        logger.warning("stepwise elimination dropped every predictor")
        return fit, list(dropped)
    second = fit_ols(y, X[:, keep], names=[names[j] for j in keep], intercept=True)
    return second, dropped


@dataclass
class BivariateFit:
    """Simple regression of one slot distribution on another."""

    r2: float
    slope: float
    intercept: float
    residuals: np.ndarray
    std_residuals: np.ndarray


def bivariate_slot_ols(a, b) -> BivariateFit:
    """Fit b ~ a across zones; standardized residuals are residual / std(residual).

    A positive standardized residual marks a zone more active in b than its
    activity in a predicts.
    """
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    if len(a) != len(b):
        raise DataError("slot distributions must cover the same zones in the same order")
    if np.ptp(a) == 0.0:
        raise DataError("predictor slot has zero variance")
    design = np.column_stack([np.ones(len(a)), a])
    coef, *_ = np.linalg.lstsq(design, b, rcond=None)
    residuals = b - design @ coef
    tss = float(np.sum((b - b.mean()) ** 2))
    rss = float(residuals @ residuals)
    r2 = 0.0 if tss == 0.0 else 1.0 - rss / tss
    spread = float(np.std(residuals))
    # a perfect fit leaves only rounding noise; report zero residuals then
    if spread <= 1e-12 * max(1.0, float(np.abs(b).max())):
        std_residuals = np.zeros_like(residuals)
    else:
        std_residuals = residuals / spread
    return BivariateFit(float(r2), float(coef[1]), float(coef[0]), residuals, std_residuals)


@dataclass
class SlotDistribution:
    """Descriptive statistics of one slot's per-zone values (population std dev)."""

    slot: str
    n_zones: int
    mean: float
    std_dev: float
    minimum: float
    maximum: float
    total: float


def slot_descriptives(values, slot: str = "") -> SlotDistribution:
    values = np.asarray(values, dtype=float).reshape(-1)
    if len(values) == 0:
        raise DataError("descriptives need at least one zone")
    return SlotDistribution(
        slot=slot,
        n_zones=len(values),
        mean=float(values.mean()),
        std_dev=float(values.std()),
        minimum=float(values.min()),
        maximum=float(values.max()),
        total=float(values.sum()),
    )


def infer_home(user_events: Iterable[tuple[str, int]],
               night_bins: Collection[int] = DEFAULT_NIGHT_BINS,
               residential_zones: Collection[str] | None = None) -> str | None:
    """Most frequent night-time zone of one user, restricted to residential zones.

    Ties break by the user's total event count in the zone (all bins), then by
    zone_id. Returns None when the user has no qualifying night event.
    """
    night_bins = set(night_bins)
    night_counts: Counter[str] = Counter()
    total_counts: Counter[str] = Counter()
    for zone_id, b in user_events:
        total_counts[zone_id] += 1
        if b in night_bins and (residential_zones is None or zone_id in residential_zones):
            night_counts[zone_id] += 1
    if not night_counts:
        return None
    return min(night_counts, key=lambda z: (-night_counts[z], -total_counts[z], z))


def infer_homes(events: Iterable[tuple[str, str, int]],
                night_bins: Collection[int] = DEFAULT_NIGHT_BINS,
                residential_zones: Collection[str] | None = None) -> dict[str, str]:
    """Home zone per user for every user with at least one qualifying night event."""
    per_user: dict[str, list[tuple[str, int]]] = {}
    for user_id, zone_id, b in events:
        per_user.setdefault(user_id, []).append((zone_id, b))
    homes: dict[str, str] = {}
    for user_id in sorted(per_user):
        home = infer_home(per_user[user_id], night_bins, residential_zones)
        if home is not None:
            homes[user_id] = home
    return homes


def census_correlation(home_counts, census) -> float:
    """r-squared of the simple regression census ~ inferred-home counts."""
    x = np.asarray(home_counts, dtype=float).reshape(-1)
    y = np.asarray(census, dtype=float).reshape(-1)
    if len(x) != len(y):
        raise DataError("home counts and census must cover the same zones")
    if np.ptp(x) == 0.0 or np.ptp(y) == 0.0:
        raise DataError("zero variance in home counts or census")
    r = float(np.corrcoef(x, y)[0, 1])
    return r * r
