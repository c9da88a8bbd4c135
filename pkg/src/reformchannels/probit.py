"""Weighted probit maximum likelihood, prediction and average marginal effects."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.special import log_ndtr, ndtr

from .data import GroupKey
from .errors import (
    DegenerateLabelError,
    NonConvergenceError,
    SingularDesignError,
)

PROB_CLIP = 1e-12
GRADIENT_TOL = 1e-8
LOGLIK_RTOL = 1e-12
MAX_ITER = 100
MAX_HALVINGS = 50
# Smallest eigenvalue of the per-observation information matrix (standardized
# columns) below which the optimum is treated as a separation artefact.
SEPARATION_TOL = 1e-7

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass(frozen=True, eq=False)
class PropensityFit:
    """Fitted probit model.

    ``rows`` records which dataset rows formed the estimation sample (``None``
    when the fit was made on a bare matrix).
    """

    coefficients: np.ndarray
    log_likelihood: float
    converged: bool
    iterations: int
    fitted_probabilities: np.ndarray
    max_score: float
    target_group: GroupKey | None = None
    source_group: GroupKey | None = None
    rows: np.ndarray | None = None
    column_names: tuple | None = None
    design: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "target_group": None if self.target_group is None else self.target_group.label,
            "source_group": None if self.source_group is None else self.source_group.label,
            "coefficients": [float(b) for b in self.coefficients],
            "column_names": None if self.column_names is None else list(self.column_names),
            "log_likelihood": float(self.log_likelihood),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "max_score": float(self.max_score),
            "n_rows": int(len(self.fitted_probabilities)),
        }


def _norm_logpdf(z):
    return -0.5 * z * z - _LOG_SQRT_2PI


def probit_loglik(beta, X, y, w) -> float:
    """Row-weighted probit log-likelihood ``sum w log Phi(q x'b)`` with ``q = 2y - 1``."""
    q = 2.0 * np.asarray(y, dtype=float) - 1.0
    return float(np.dot(w, log_ndtr(q * (X @ beta))))


def _lambda(z, q):
    # Derivative of log Phi(q z) with respect to z, computed in log space.
    return q * np.exp(_norm_logpdf(z) - log_ndtr(q * z))


def probit_score(beta, X, y, w) -> np.ndarray:
    """Analytic gradient of :func:`probit_loglik`."""
    q = 2.0 * np.asarray(y, dtype=float) - 1.0
    return X.T @ (w * _lambda(X @ beta, q))


def probit_hessian(beta, X, y, w) -> np.ndarray:
    q = 2.0 * np.asarray(y, dtype=float) - 1.0
    z = X @ beta
    lam = _lambda(z, q)
    return -(X.T * (w * lam * (lam + z))) @ X


def _check_rank(Xs: np.ndarray, w: np.ndarray, names) -> None:
    A = Xs * np.sqrt(w)[:, None]
    _, R, piv = scipy.linalg.qr(A, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = max(A.shape) * np.finfo(float).eps * 1e3 * (diag[0] if len(diag) else 1.0)
    rank = int((diag > tol).sum())
    if rank < Xs.shape[1]:
        bad = sorted(int(j) for j in piv[rank:])
        labels = [names[j] if names is not None else f"column {j}" for j in bad]
        raise SingularDesignError(
            "design matrix is rank deficient; collinear columns: " + ", ".join(map(str, labels)),
            columns=labels,
        )


def column_scales(X: np.ndarray) -> np.ndarray:
    s = np.sqrt(np.mean(X * X, axis=0))
    s[s == 0] = 1.0
    return s


def fit_probit(
    X,
    labels,
    row_weights=None,
    *,
    target_group: GroupKey | None = None,
    source_group: GroupKey | None = None,
    rows=None,
    column_names=None,
    start=None,
    gtol: float = GRADIENT_TOL,
    ftol: float = LOGLIK_RTOL,
    max_iter: int = MAX_ITER,
    check_rank: bool = True,
    keep_design: bool = False,
) -> PropensityFit:
    """Maximize the row-weighted probit likelihood by Newton-Raphson.

    Parameters
    ----------
    X : (N, P) array
        Design matrix including the constant column.
    labels : (N,) array of {0, 1}
    row_weights : (N,) array, optional
        Positive row weights. They are rescaled to mean one, so the estimate
        does not depend on their overall scale.
    start : (P,) array, optional
        Starting coefficients (warm start), on the original column scale.

    Returns
    -------
    PropensityFit
        ``max_score`` is the largest absolute component of the score with
        weights normalized to sum to one; convergence is declared when it is
        at most ``gtol`` or the relative log-likelihood change falls to ``ftol``.

    Raises
    ------
    DegenerateLabelError
        If only one class is present.
    SingularDesignError
        If the weighted design is rank deficient.
    NonConvergenceError
        On divergence, including (quasi-)complete separation.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(labels, dtype=float)
    n, p = X.shape
    if y.shape != (n,):
        raise ValueError("labels must have one entry per row of X")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("labels must be 0 or 1")
    w = np.ones(n) if row_weights is None else np.asarray(row_weights, dtype=float)
    if w.shape != (n,) or not (np.isfinite(w).all() and (w > 0).all()):
        raise ValueError("row_weights must be positive and finite, one per row")
    if y.min() == y.max():
        raise DegenerateLabelError("labels contain a single class")
    w = w / w.mean()

    scale = column_scales(X)
    Xs = X / scale
    if check_rank:
        _check_rank(Xs, w, column_names)
    q = 2.0 * y - 1.0

    if start is None:
        b = np.zeros(p)
    else:
        b = np.asarray(start, dtype=float) * scale
        if not np.isfinite(b).all():
            b = np.zeros(p)

    def evaluate(beta):
        z = Xs @ beta
        ll = float(np.dot(w, log_ndtr(q * z)))
        return z, ll

    z, ll = evaluate(b)
    if start is not None:
        # A poor warm start can be worse than the origin.
        z0, ll0 = evaluate(np.zeros(p))
        if not np.isfinite(ll) or ll0 > ll:
            b, z, ll = np.zeros(p), z0, ll0

    converged = False
    it = 0
    gmax = np.inf
    H = None
    path = [ll]
    for it in range(1, max_iter + 1):
        lam = _lambda(z, q)
        g = Xs.T @ (w * lam)
        gmax = float(np.max(np.abs(g / scale))) / n
        H = (Xs.T * (w * lam * (lam + z))) @ Xs  # negative Hessian
        if gmax <= gtol:
            converged = True
            it -= 1
            break
        try:
            step = np.linalg.solve(H, g)
        except (np.linalg.LinAlgError, ValueError):
            step = np.linalg.lstsq(H, g, rcond=None)[0]
        t = 1.0
        for _ in range(MAX_HALVINGS + 1):
            b_new = b + t * step
            z_new, ll_new = evaluate(b_new)
            if np.isfinite(ll_new) and ll_new >= ll:
                break
            t *= 0.5
        else:
            if gmax <= 1e3 * gtol:
                # Rounding noise at the optimum; no further ascent is possible.
                converged = True
                break
            raise NonConvergenceError(
                "probit line search failed to improve the likelihood",
                last_iterate=b / scale, iterations=it,
            )
        rel = abs(ll_new - ll) / max(abs(ll), 1e-300)
        b, z, ll = b_new, z_new, ll_new
        path.append(ll)
        if rel <= ftol:
            lam = _lambda(z, q)
            gmax = float(np.max(np.abs((Xs.T @ (w * lam)) / scale))) / n
            H = (Xs.T * (w * lam * (lam + z))) @ Xs
            converged = True
            break
    if converged:
        # A few extra Newton steps cost little and, by quadratic convergence,
        # take the iterate to rounding accuracy whichever rule stopped the loop.
        for _ in range(3):
            if gmax <= 1e-15 or not np.isfinite(H).all():
                break
            try:
                b_new = b + np.linalg.solve(H, Xs.T @ (w * _lambda(z, q)))
            except np.linalg.LinAlgError:
                break
            z_new, ll_new = evaluate(b_new)
            lam = _lambda(z_new, q)
            g_new = float(np.max(np.abs((Xs.T @ (w * lam)) / scale))) / n
            if not (np.isfinite(ll_new) and g_new < gmax):
                break
            b, z, ll, gmax = b_new, z_new, ll_new, g_new
            H = (Xs.T * (w * lam * (lam + z))) @ Xs
    if not converged:
        raise NonConvergenceError(
            f"probit did not converge in {max_iter} iterations",
            last_iterate=b / scale, iterations=it,
        )
    info_min = float(np.linalg.eigvalsh(H / n)[0])
    if info_min < SEPARATION_TOL or np.max(np.abs(b)) > 50.0:
        raise NonConvergenceError(
            "probit likelihood has no finite maximizer (quasi-complete separation)",
            last_iterate=b / scale, iterations=it,
        )
    beta = b / scale
    # Fitted probabilities use the rescaled design so that the stored values
    # are exactly those implied by the iterate.
    prob = np.clip(ndtr(z), PROB_CLIP, 1.0 - PROB_CLIP)
    ll_out = ll * float(np.mean(np.asarray(row_weights, dtype=float))) if row_weights is not None else ll
    return PropensityFit(
        coefficients=beta,
        log_likelihood=ll_out,
        converged=True,
        iterations=it,
        fitted_probabilities=prob,
        max_score=gmax,
        target_group=target_group,
        source_group=source_group,
        rows=None if rows is None else np.asarray(rows),
        column_names=None if column_names is None else tuple(column_names),
        design=X if keep_design else None,
        meta={"loglik_path": path},
    )


def predict_index(coefficients, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    beta = np.asarray(coefficients, dtype=float)
    if X.shape[1] != beta.shape[0]:
        raise ValueError(f"X has {X.shape[1]} columns but the fit has {beta.shape[0]} coefficients")
    return X @ beta


def predict_probability(fit: PropensityFit | np.ndarray, X) -> np.ndarray:
    """``Phi(x'b)`` per row, clipped into ``[1e-12, 1 - 1e-12]``."""
    beta = fit.coefficients if isinstance(fit, PropensityFit) else fit
    return np.clip(ndtr(predict_index(beta, X)), PROB_CLIP, 1.0 - PROB_CLIP)


def is_binary_column(x) -> bool:
    x = np.asarray(x)
    return bool(np.isin(x, (0.0, 1.0)).all())


def average_marginal_effect(fit: PropensityFit | np.ndarray, X, column: int,
                            row_weights=None) -> float:
    """Weighted average marginal effect of one regressor on ``Pr(y = 1)``.

    Binary (0/1) columns get the discrete contrast
    ``Phi(x'b | x_col = 1) - Phi(x'b | x_col = 0)``; other columns the
    derivative ``phi(x'b) b_col``.
    """
    beta = np.asarray(fit.coefficients if isinstance(fit, PropensityFit) else fit, dtype=float)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if not -beta.shape[0] <= column < beta.shape[0]:
        raise IndexError(f"column {column} out of range for {beta.shape[0]} coefficients")
    w = np.ones(len(X)) if row_weights is None else np.asarray(row_weights, dtype=float)
    if is_binary_column(X[:, column]):
        X1 = X.copy()
        X0 = X.copy()
        X1[:, column] = 1.0
        X0[:, column] = 0.0
        effect = ndtr(predict_index(beta, X1)) - ndtr(predict_index(beta, X0))
    else:
        z = predict_index(beta, X)
        effect = np.exp(_norm_logpdf(z)) * beta[column]
    return float(np.dot(w, effect) / w.sum())
