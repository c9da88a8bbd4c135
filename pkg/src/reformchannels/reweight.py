"""Propensity-ratio reweighting of a source cell towards a target population.

Two estimators are provided:

* IPW: source units are weighted by the fitted odds of target membership,
  then self-normalized.
* AST (auxiliary-to-study tilting): the source-side propensity is replaced
  by a tilted probit ``Phi(m'b_tilt)`` chosen so that the reweighted source
  moments equal the efficient first moments of the target population exactly.

All propensity models are pairwise: a probit of target membership fitted on
the pooled target and source rows, weighted by the inclusion weights.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize
from scipy.special import log_ndtr, ndtr

from .data import Dataset, GroupKey, design_column_names, design_matrix, group_mask
from .errors import (
    GroupError,
    SingularDesignError,
    SupportError,
    TiltingError,
)
from .probit import PROB_CLIP, PropensityFit, _check_rank, _norm_logpdf, column_scales, fit_probit

BALANCE_TOL = 1e-8
SUM_TOL = 1e-10
TILT_MAX_ITER = 500


class Estimator(str, enum.Enum):
    IPW = "ipw"
    AST = "ast"

    @classmethod
    def parse(cls, value) -> "Estimator":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown estimator {value!r}; expected 'ipw' or 'ast'") from None


@dataclass(frozen=True, eq=False)
class WeightVector:
    """Normalized weights over all dataset rows, zero outside the source cell."""

    weights: np.ndarray
    target_group: GroupKey
    source_group: GroupKey
    estimator: Estimator
    meta: dict = field(default_factory=dict)

    @property
    def total(self) -> float:
        return float(self.weights.sum())

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.weights)


@dataclass(frozen=True, eq=False)
class EfficientMoments:
    values: np.ndarray
    target_group: GroupKey
    column_names: tuple | None = None


@dataclass(frozen=True, eq=False)
class TiltedFit:
    """Tilted source-side probit solving the exact balance conditions.

    ``source_rows`` index the dataset; ``source_weights`` are the implied
    normalized weights on those rows. ``balance_residuals`` are reweighted
    source moments minus efficient moments, in the original column units.
    """

    base_fit: PropensityFit
    tilted_coefficients: np.ndarray
    balance_residuals: np.ndarray
    converged: bool
    iterations: int
    target_group: GroupKey
    source_group: GroupKey
    source_rows: np.ndarray
    source_weights: np.ndarray
    method: str = "newton"

    @property
    def max_residual(self) -> float:
        return float(np.max(np.abs(self.balance_residuals)))

    def to_dict(self) -> dict:
        return {
            "target_group": self.target_group.label,
            "source_group": self.source_group.label,
            "tilted_coefficients": [float(b) for b in self.tilted_coefficients],
            "balance_residuals": [float(r) for r in self.balance_residuals],
            "max_abs_residual": self.max_residual,
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "method": self.method,
        }


def _pool_rows(ds: Dataset, target: GroupKey, source: GroupKey) -> np.ndarray:
    if target == source:
        raise GroupError("target and source cells must differ for a pairwise propensity")
    mt, ms = group_mask(ds, target), group_mask(ds, source)
    if not mt.any():
        raise GroupError(f"target cell {target} is empty")
    if not ms.any():
        raise GroupError(f"source cell {source} is empty")
    return np.flatnonzero(mt | ms)


def fit_pair_propensity(
    ds: Dataset,
    target: GroupKey,
    source: GroupKey,
    moment_columns: np.ndarray | None = None,
    *,
    include_mediator: bool = False,
    start=None,
) -> PropensityFit:
    """Probit of target membership on the pooled target and source rows.

    Within the pool the fitted probability is ``pi(x) = Pr(target | x, pool)``.
    The population-level ratio ``p_target(x) / p_source(x)`` equals the pool
    odds ``pi / (1 - pi)``: the pool's own probability ``Pr(pool | x)``
    cancels, and any constant share factor drops out under normalization.

    Parameters
    ----------
    moment_columns : (N, P) array, optional
        Regressors for every dataset row. Defaults to the constant plus
        covariates, extended by the mediator columns if ``include_mediator``.
    start : array, optional
        Warm-start coefficients.
    """
    rows = _pool_rows(ds, target, source)
    if moment_columns is None:
        M = design_matrix(ds, include_mediator, rows=rows)
        names = design_column_names(ds, include_mediator)
    else:
        moment_columns = np.asarray(moment_columns, dtype=float)
        if moment_columns.shape[0] != ds.N:
            raise ValueError("moment_columns must have one row per dataset unit")
        M = moment_columns[rows]
        names = None
    labels = ((ds.d[rows] == target.d) & (ds.t[rows] == target.t)).astype(float)
    return fit_probit(M, labels, ds.w[rows], target_group=target, source_group=source,
                      rows=rows, column_names=names, start=start, keep_design=True)


def _fit_design(fit: PropensityFit, ds: Dataset, moment_columns) -> np.ndarray:
    if moment_columns is not None:
        moment_columns = np.asarray(moment_columns, dtype=float)
        return moment_columns[fit.rows] if moment_columns.shape[0] == ds.N else moment_columns
    if fit.design is None:
        raise ValueError("fit carries no design; pass moment_columns")
    return fit.design


def efficient_first_moments(ds: Dataset, target_fit: PropensityFit,
                            moment_columns: np.ndarray | None = None) -> EfficientMoments:
    """Target-population means estimated from the whole pool.

    ``values = sum_i w_i pi_i m_i / sum_i w_i pi_i`` over the pooled rows,
    where ``pi_i`` is the fitted target probability.
    """
    M = _fit_design(target_fit, ds, moment_columns)
    a = ds.w[target_fit.rows] * target_fit.fitted_probabilities
    denom = a.sum()
    if not denom > 0:
        raise SupportError("efficient moments undefined: zero total target probability")
    return EfficientMoments(a @ M / denom, target_fit.target_group, target_fit.column_names)


def _source_positions(ds: Dataset, fit: PropensityFit, source: GroupKey) -> np.ndarray:
    """Positions within ``fit.rows`` that belong to ``source``."""
    rows = fit.rows
    return np.flatnonzero((ds.d[rows] == source.d) & (ds.t[rows] == source.t))


def ipw_weights_from_scores(inclusion_weights, p_target, p_source) -> np.ndarray:
    """Self-normalized ``w * p_target / p_source`` over the source rows given."""
    raw = np.asarray(inclusion_weights, float) * np.asarray(p_target, float) / np.asarray(p_source, float)
    return raw / raw.sum()


def ipw_weights(ds: Dataset, target: GroupKey, source: GroupKey,
                fit: PropensityFit | None = None) -> WeightVector:
    """Inverse-probability weights moving ``source`` towards ``target``.

    For ``target == source`` the weights are the normalized inclusion weights
    and ``fit`` is not needed.
    """
    weights = np.zeros(ds.N)
    if target == source:
        rows = np.flatnonzero(group_mask(ds, source))
        if len(rows) == 0:
            raise GroupError(f"source cell {source} is empty")
        weights[rows] = ds.w[rows] / ds.w[rows].sum()
        return WeightVector(weights, target, source, Estimator.IPW)
    if fit is None:
        fit = fit_pair_propensity(ds, target, source)
    if fit.target_group != target:
        raise ValueError(f"fit targets {fit.target_group}, not {target}")
    pos = _source_positions(ds, fit, source)
    rows = fit.rows[pos]
    M = _fit_design(fit, ds, None) if fit.design is not None else design_matrix(ds, rows=fit.rows)
    z = M[pos] @ fit.coefficients
    p_src_raw = ndtr(-z)
    bad = p_src_raw < PROB_CLIP
    if bad.any():
        raise SupportError(
            f"{int(bad.sum())} source units have propensity below {PROB_CLIP:g}",
            units=[str(u) for u in ds.ids[rows[bad]]],
        )
    pi = fit.fitted_probabilities[pos]
    weights[rows] = ipw_weights_from_scores(ds.w[rows], pi, 1.0 - pi)
    return WeightVector(weights, target, source, Estimator.IPW)


def _tilt_residual_parts(b, Ms, a):
    z = Ms @ b
    # Trial steps during line search may overflow; the merit test rejects them.
    with np.errstate(over="ignore", invalid="ignore"):
        inv = np.exp(-log_ndtr(z))          # 1 / Phi(z)
        dens = np.exp(_norm_logpdf(z) + 2.0 * np.log(inv))  # phi / Phi^2
    return z, inv, dens


def ast_tilt(
    ds: Dataset,
    target: GroupKey,
    source: GroupKey,
    target_fit: PropensityFit,
    moments: EfficientMoments | None = None,
    moment_columns: np.ndarray | None = None,
    *,
    start=None,
    tol: float = BALANCE_TOL,
    max_iter: int = TILT_MAX_ITER,
) -> TiltedFit:
    """Solve the exact balance conditions for the tilted source propensity.

    Finds ``b`` such that, over the source rows,
    ``sum_i a_i m_i / Phi(m_i'b) = F`` with ``a_i = w_i pi_i / sum_pool w pi``
    and ``F`` the efficient moments. The map is the gradient of a concave
    function of ``b``, so its Jacobian is negative definite and the root, when
    it exists, is unique. Damped Newton iterates to machine precision; a
    trust-region least-squares pass is the fallback if Newton stalls.

    ``target == source`` tilts the target cell itself towards its efficient
    moments; the natural starting point is then the base coefficients, and
    for a distinct source their negation.
    """
    if target_fit.target_group != target:
        raise ValueError(f"fit targets {target_fit.target_group}, not {target}")
    M = _fit_design(target_fit, ds, moment_columns)
    if moments is None:
        moments = efficient_first_moments(ds, target_fit, M)
    F = np.asarray(moments.values, dtype=float)
    pos = _source_positions(ds, target_fit, source)
    if len(pos) == 0:
        raise GroupError(f"source cell {source} is absent from the fitted pool")
    rows = target_fit.rows[pos]
    pool_a = ds.w[target_fit.rows] * target_fit.fitted_probabilities
    a = pool_a[pos] / pool_a.sum()
    Msrc = M[pos]
    scale = column_scales(Msrc)
    Ms = Msrc / scale
    Fs = F / scale
    try:
        _check_rank(Ms, np.ones(len(pos)), target_fit.column_names)
    except SingularDesignError as exc:
        raise SingularDesignError(f"moment columns rank deficient on source {source}: {exc}",
                                  columns=exc.columns) from None

    if start is None:
        b0 = target_fit.coefficients if target == source else -target_fit.coefficients
    else:
        b0 = np.asarray(start, dtype=float)
    b = b0 * scale

    def resid(beta):
        z, inv, dens = _tilt_residual_parts(beta, Ms, a)
        with np.errstate(over="ignore", invalid="ignore"):
            return (a * inv) @ Ms - Fs, z, inv, dens

    r, z, inv, dens = resid(b)
    if not np.isfinite(r).all() and start is not None:
        b = (target_fit.coefficients if target == source else -target_fit.coefficients) * scale
        r, z, inv, dens = resid(b)
    merit = float(r @ r)
    it = 0
    method = "newton"
    stalled = False
    floor = 1e-6 * tol
    while it < max_iter and np.max(np.abs(r * scale)) > floor:
        it += 1
        J = -(Ms.T * (a * dens)) @ Ms
        try:
            step = np.linalg.solve(J, -r)
        except (np.linalg.LinAlgError, ValueError):
            step = np.linalg.lstsq(J, -r, rcond=None)[0]
        t = 1.0
        accepted = False
        for _ in range(60):
            cand = resid(b + t * step)
            with np.errstate(over="ignore", invalid="ignore"):
                cm = float(cand[0] @ cand[0])
            if np.isfinite(cm) and cm < merit * (1.0 - 1e-4 * t):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            # No further descent: either at the floating-point floor or stalled.
            stalled = True
            break
        b = b + t * step
        r, z, inv, dens = cand
        merit = cm

    if np.max(np.abs(r * scale)) > tol and (stalled or it >= max_iter):
        method = "least_squares"

        def fun(beta):
            return resid(beta)[0]

        def jac(beta):
            _, _, _, d = resid(beta)
            return -(Ms.T * (a * d)) @ Ms

        sol = scipy.optimize.least_squares(fun, b, jac=jac, method="trf",
                                           xtol=1e-15, ftol=1e-15, gtol=1e-15,
                                           max_nfev=max_iter)
        if np.isfinite(sol.fun).all() and sol.fun @ sol.fun < merit:
            b = sol.x
            r, z, inv, dens = resid(b)
        it += int(sol.nfev)

    residual = r * scale
    converged = bool(np.isfinite(residual).all() and np.max(np.abs(residual)) <= tol)
    if not converged:
        raise TiltingError(
            f"balance conditions for source {source} -> target {target} not solved; "
            f"max residual {np.max(np.abs(residual)):.3g}",
            residuals=residual,
        )
    raw = a * inv
    return TiltedFit(
        base_fit=target_fit,
        tilted_coefficients=b / scale,
        balance_residuals=residual,
        converged=converged,
        iterations=it,
        target_group=target,
        source_group=source,
        source_rows=rows,
        source_weights=raw / raw.sum(),
        method=method,
    )


def ast_weights(ds: Dataset, target: GroupKey, source: GroupKey,
                tilted: TiltedFit) -> WeightVector:
    """Normalized weights ``w pi / Phi(m'b_tilt)`` on the source rows."""
    if not tilted.converged:
        raise TiltingError("tilt did not converge", residuals=tilted.balance_residuals)
    if tilted.target_group != target or tilted.source_group != source:
        raise ValueError("tilted fit was computed for a different cell pair")
    weights = np.zeros(ds.N)
    weights[tilted.source_rows] = tilted.source_weights
    return WeightVector(weights, target, source, Estimator.AST,
                        meta={"max_abs_residual": tilted.max_residual})


def weighted_outcome_mean(ds: Dataset, wv: WeightVector | np.ndarray) -> np.ndarray:
    """Per-month weighted mean ``sum_i weight_i Y_i``."""
    weights = wv.weights if isinstance(wv, WeightVector) else np.asarray(wv, dtype=float)
    rows = np.flatnonzero(weights)
    return weights[rows] @ ds.Y[rows]


def reweighted_moments(weights: np.ndarray, M: np.ndarray) -> np.ndarray:
    return np.asarray(weights) @ np.asarray(M)
