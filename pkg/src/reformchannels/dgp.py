"""Synthetic reform data with closed-form ground truth for every estimand.

Design
------
Covariates: ``n_gaussian`` independent standard normals followed by one
Bernoulli(``binary_prob``) dummy. The period ``T`` is Bernoulli(``period_prob``)
and independent of the covariates. Treatment follows a period-specific probit
``Pr(D = 1 | X, T = t) = Phi(b_t0 + b_t'X)``. Treated units draw a programme
type from the period's type shares and a planned duration uniformly from the
type's integer day range; the mediator is independent of ``X`` given the
period.

Outcomes for month ``h``::

    Y = m(X) + Delta(h) T
        + D [tau(h) + c'X + g(C, h) + T wedge(h)]
        + noise

with ``m(X) = a0 + a'X``, ``Delta(h) = trend_level (1 - exp(-h / trend_scale))``,
``tau(h) = effect_long + effect_lockin exp(-h / effect_decay)``,
``wedge(h) = wedge_size 1{h >= wedge_start}`` and ``g`` a table indexed by
duration category and month phase. Noise is equicorrelated across months.

Non-treated outcomes do not depend on the allocation system and the trend is
common to both treatment states, so every estimand is identified. The truth
is exact: covariate means of the treated follow from the Gaussian-probit
integral ``E[Z Phi(a + b'Z)] = b phi(a/s)/s`` with ``s = sqrt(1 + |b|^2)``,
and category probabilities from counting days in each uniform range.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .data import (
    DURATION_BOUNDARIES,
    DURATION_CATEGORIES,
    PROGRAMME_TYPES,
    Dataset,
    duration_category_index,
)

ESTIMANDS = (
    "att_pre",
    "att_post",
    "overall_reform",
    "selection",
    "time_bc0",
    "time_bc1",
    "policy",
    "direct",
    "indirect",
)
VIOLATIONS = ("broken_trend", "hidden_confounder", "support_hole")

PAPER_TYPE_SHARES_PRE = (0.16, 0.21, 0.41, 0.19, 0.02)
PAPER_TYPE_SHARES_POST = (0.13, 0.42, 0.19, 0.25, 0.01)


@dataclass(frozen=True)
class DgpConfig:
    """Parameters of the synthetic population.

    ``selection_pre``/``selection_post`` hold the probit intercept followed by
    one coefficient per covariate. ``duration_ranges_*`` give inclusive day
    ranges per programme type in :data:`PROGRAMME_TYPES` order.
    ``mediator_effects`` has one row per duration category and one column per
    month phase; phases start at month 0 and at each entry of ``phase_starts``.
    """

    n: int = 5000
    seed: int = 0
    horizon: int = 88
    n_gaussian: int = 2
    binary_prob: float = 0.4
    period_prob: float = 0.5
    selection_pre: tuple = (-0.6, 0.3, -0.2, 0.2)
    selection_post: tuple = (-0.7, 0.5, 0.1, 0.3)
    baseline_intercept: float = 0.45
    baseline_slopes: tuple = (0.04, -0.03, 0.05)
    trend_level: float = 0.04
    trend_scale: float = 12.0
    effect_long: float = 0.05
    effect_lockin: float = -0.20
    effect_decay: float = 8.0
    effect_slopes: tuple = (0.02, 0.0, -0.02)
    wedge_size: float = 0.03
    wedge_start: int = 36
    type_shares_pre: tuple = PAPER_TYPE_SHARES_PRE
    type_shares_post: tuple = PAPER_TYPE_SHARES_POST
    duration_ranges_pre: tuple = ((111, 291), (54, 174), (192, 512), (462, 1062), (203, 603))
    duration_ranges_post: tuple = ((66, 246), (56, 176), (192, 352), (499, 1099), (267, 667))
    dropout_pre: float = 0.15
    dropout_post: float = 0.11
    dropout_completion: tuple = (0.4, 1.0)
    mediator_effects: tuple = (
        (0.04, 0.0, 0.0),
        (0.0, 0.0, 0.0),
        (-0.02, -0.02, 0.01),
        (-0.05, -0.05, 0.02),
    )
    phase_starts: tuple = (24, 36)
    noise_sd: float = 0.25
    noise_corr: float = 0.5
    binary_outcome: bool = False
    control_sampling_rate: float = 1.0
    history_months: int = 0
    history_slope: float = 0.002

    @property
    def K(self) -> int:
        return self.n_gaussian + 1

    @property
    def covariate_names(self) -> tuple:
        return tuple(f"z{k + 1}" for k in range(self.n_gaussian)) + ("b1",)

    def replace(self, **changes) -> "DgpConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self) -> None:
        k1 = self.K + 1
        checks = [
            (self.n >= 1, "n must be positive"),
            (self.horizon >= 1, "horizon must be positive"),
            (self.n_gaussian >= 0, "n_gaussian must be non-negative"),
            (0 < self.binary_prob < 1, "binary_prob must lie in (0, 1)"),
            (0 < self.period_prob < 1, "period_prob must lie in (0, 1)"),
            (len(self.selection_pre) == k1, f"selection_pre needs {k1} entries"),
            (len(self.selection_post) == k1, f"selection_post needs {k1} entries"),
            (len(self.baseline_slopes) == self.K, f"baseline_slopes needs {self.K} entries"),
            (len(self.effect_slopes) == self.K, f"effect_slopes needs {self.K} entries"),
            (self.trend_scale > 0 and self.effect_decay > 0, "time scales must be positive"),
            (0 < self.control_sampling_rate <= 1, "control_sampling_rate must lie in (0, 1]"),
            (self.noise_sd >= 0, "noise_sd must be non-negative"),
            (0 <= self.noise_corr <= 1, "noise_corr must lie in [0, 1]"),
            (0 <= self.dropout_pre < 1 and 0 <= self.dropout_post < 1,
             "dropout rates must lie in [0, 1)"),
            (0 < self.dropout_completion[0] <= self.dropout_completion[1] <= 1,
             "dropout_completion must be an interval inside (0, 1]"),
            (len(self.mediator_effects) == len(DURATION_CATEGORIES),
             "mediator_effects needs one row per duration category"),
            (all(len(r) == len(self.phase_starts) + 1 for r in self.mediator_effects),
             "mediator_effects rows need one entry per month phase"),
            (self.history_months >= 0, "history_months must be non-negative"),
        ]
        for shares in (self.type_shares_pre, self.type_shares_post):
            checks.append((len(shares) == len(PROGRAMME_TYPES) and min(shares) >= 0
                           and sum(shares) > 0, "type shares must be non-negative, one per type"))
        for ranges in (self.duration_ranges_pre, self.duration_ranges_post):
            checks.append((len(ranges) == len(PROGRAMME_TYPES)
                           and all(1 <= lo <= hi for lo, hi in ranges),
                           "duration ranges must be 1 <= low <= high, one per type"))
        for ok, msg in checks:
            if not ok:
                raise ValueError(f"invalid DgpConfig: {msg}")


def null_config(**changes) -> DgpConfig:
    """Configuration with every structural effect switched off.

    Selection on covariates, the mediator laws and the noise remain, so the
    estimators still have to reweight; every estimand is zero.
    """
    base = DgpConfig(
        trend_level=0.0,
        effect_long=0.0,
        effect_lockin=0.0,
        effect_slopes=(0.0,) * 3,
        wedge_size=0.0,
        mediator_effects=tuple((0.0,) * 3 for _ in DURATION_CATEGORIES),
    )
    if "n_gaussian" in changes:
        K = changes["n_gaussian"] + 1
        changes.setdefault("effect_slopes", (0.0,) * K)
    return base.replace(**changes)


@dataclass(frozen=True, eq=False)
class DgpTruth:
    """Per-month true values of every estimand."""

    values: dict
    horizon: int
    meta: dict = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]

    def __getattr__(self, name):
        values = self.__dict__.get("values")
        if values is not None and name in values:
            return values[name]
        raise AttributeError(name)

    def to_dict(self) -> dict:
        return {
            "horizon": self.horizon,
            "estimands": {k: [float(x) for x in v] for k, v in self.values.items()},
            "meta": self.meta,
        }


@dataclass(frozen=True)
class ViolationDescriptor:
    kind: str
    magnitude: float
    expected_bias: dict
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "magnitude": self.magnitude,
            "expected_bias": {k: (v if isinstance(v, (int, float)) else [float(x) for x in v])
                              for k, v in self.expected_bias.items()},
            "details": self.details,
        }


# ---------------------------------------------------------------------------
# Structural functions


def trend(cfg: DgpConfig, months) -> np.ndarray:
    months = np.asarray(months, dtype=float)
    return cfg.trend_level * (1.0 - np.exp(-months / cfg.trend_scale))


def base_effect(cfg: DgpConfig, months) -> np.ndarray:
    months = np.asarray(months, dtype=float)
    return cfg.effect_long + cfg.effect_lockin * np.exp(-months / cfg.effect_decay)


def wedge(cfg: DgpConfig, months) -> np.ndarray:
    months = np.asarray(months)
    return cfg.wedge_size * (months >= cfg.wedge_start)


def mediator_effect_table(cfg: DgpConfig) -> np.ndarray:
    """``(4, H)`` array of the mediator effect by duration category and month."""
    months = np.arange(cfg.horizon)
    phase = np.searchsorted(cfg.phase_starts, months, side="right")
    return np.asarray(cfg.mediator_effects, dtype=float)[:, phase]


def _shares(values) -> np.ndarray:
    s = np.asarray(values, dtype=float)
    return s / s.sum()


def category_probabilities(shares, ranges) -> np.ndarray:
    """Exact duration-category probabilities for uniform integer day ranges."""
    edges = (0,) + tuple(DURATION_BOUNDARIES) + (math.inf,)
    probs = np.zeros(len(DURATION_CATEGORIES))
    for share, (lo, hi) in zip(_shares(shares), ranges):
        width = hi - lo + 1
        for k in range(len(DURATION_CATEGORIES)):
            first = max(lo, edges[k])
            last = min(hi, edges[k + 1] - 1)
            if last >= first:
                probs[k] += share * (last - first + 1) / width
    return probs


def _treated_covariate_mean(coef, binary_prob, extra_sd=0.0) -> np.ndarray:
    """``E[X | D = 1]`` for Gaussian covariates followed by one binary dummy.

    ``extra_sd`` adds an unobserved standard-normal index component with that
    loading.
    """
    coef = np.asarray(coef, dtype=float)
    intercept, beta_g, beta_b = coef[0], coef[1:-1], coef[-1]
    s = math.sqrt(1.0 + float(beta_g @ beta_g) + extra_sd ** 2)
    total = 0.0
    gauss = np.zeros(len(beta_g))
    binary = 0.0
    for b, q in ((0, 1.0 - binary_prob), (1, binary_prob)):
        a = (intercept + beta_b * b) / s
        pr = float(ndtr(a))
        dens = math.exp(-0.5 * a * a) / math.sqrt(2.0 * math.pi)
        total += q * pr
        gauss += q * beta_g * dens / s
        binary += q * pr * b
    return np.concatenate([gauss, [binary]]) / total


def compute_truth(cfg: DgpConfig, hidden_loading: float = 0.0) -> DgpTruth:
    """Closed-form truth; ``hidden_loading`` is the post-period selection loading
    on an unobserved confounder."""
    months = np.arange(cfg.horizon)
    c = np.asarray(cfg.effect_slopes, dtype=float)
    x_pre = _treated_covariate_mean(cfg.selection_pre, cfg.binary_prob)
    x_post = _treated_covariate_mean(cfg.selection_post, cfg.binary_prob, hidden_loading)
    g = mediator_effect_table(cfg)
    p_pre = category_probabilities(cfg.type_shares_pre, cfg.duration_ranges_pre)
    p_post = category_probabilities(cfg.type_shares_post, cfg.duration_ranges_post)
    g_pre = p_pre @ g
    g_post = p_post @ g
    tau = base_effect(cfg, months)
    wdg = wedge(cfg, months)
    delta = trend(cfg, months)
    att_pre = tau + c @ x_pre + g_pre
    att_post = tau + c @ x_post + g_post + wdg
    selection = np.full(cfg.horizon, float(c @ (x_post - x_pre)))
    direct = wdg.astype(float)
    indirect = g_post - g_pre
    values = {
        "att_pre": att_pre,
        "att_post": att_post,
        "overall_reform": att_post - att_pre,
        "selection": selection,
        "time_bc0": delta,
        "time_bc1": delta.copy(),
        "policy": direct + indirect,
        "direct": direct,
        "indirect": indirect,
    }
    meta = {
        "treated_covariate_mean_pre": x_pre.tolist(),
        "treated_covariate_mean_post": x_post.tolist(),
        "category_probabilities_pre": p_pre.tolist(),
        "category_probabilities_post": p_post.tolist(),
    }
    return DgpTruth(values=values, horizon=cfg.horizon, meta=meta)


# ---------------------------------------------------------------------------
# Simulation


def _draw(cfg: DgpConfig, violation: str | None = None, magnitude: float = 0.0):
    cfg.validate()
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(8)]
    r_x, r_t, r_d, r_c, r_noise, r_sample, r_u, r_hist = streams
    n, H = cfg.n, cfg.horizon

    Z = r_x.standard_normal((n, cfg.n_gaussian))
    B = (r_x.random(n) < cfg.binary_prob).astype(float)
    X = np.column_stack([Z, B])
    t = (r_t.random(n) < cfg.period_prob).astype(np.int64)
    U = r_u.standard_normal(n)

    coef = np.where(t[:, None] == 1, np.asarray(cfg.selection_post), np.asarray(cfg.selection_pre))
    index = coef[:, 0] + np.einsum("ij,ij->i", X, coef[:, 1:])
    if violation == "hidden_confounder":
        index = index + magnitude * U * t
    if violation == "support_hole":
        index = index + magnitude * B * t
    d = (r_d.random(n) < ndtr(index)).astype(np.int64)

    # Mediator: type, planned days, actual days.
    ptype = np.full(n, "", dtype=object)
    planned = np.zeros(n, dtype=np.int64)
    actual = np.zeros(n, dtype=np.int64)
    u_type = r_c.random(n)
    u_days = r_c.random(n)
    u_drop = r_c.random(n)
    u_comp = r_c.random(n)
    for period, shares, ranges, drop in (
        (0, cfg.type_shares_pre, cfg.duration_ranges_pre, cfg.dropout_pre),
        (1, cfg.type_shares_post, cfg.duration_ranges_post, cfg.dropout_post),
    ):
        sel = (d == 1) & (t == period)
        k = np.minimum(np.searchsorted(np.cumsum(_shares(shares)), u_type[sel], side="right"),
                       len(PROGRAMME_TYPES) - 1)
        lo = np.array([r[0] for r in ranges])[k]
        hi = np.array([r[1] for r in ranges])[k]
        days = lo + np.floor(u_days[sel] * (hi - lo + 1)).astype(np.int64)
        days = np.minimum(days, hi)
        lo_c, hi_c = cfg.dropout_completion
        completion = np.where(u_drop[sel] < drop, lo_c + (hi_c - lo_c) * u_comp[sel], 1.0)
        ptype[sel] = np.array(PROGRAMME_TYPES, dtype=object)[k]
        planned[sel] = days
        actual[sel] = np.clip(np.round(days * completion).astype(np.int64), 1, days)

    months = np.arange(H)
    base = cfg.baseline_intercept + X @ np.asarray(cfg.baseline_slopes, dtype=float)
    if violation == "hidden_confounder":
        base = base + 0.1 * magnitude * U
    g = mediator_effect_table(cfg)
    cat = duration_category_index(planned)
    mean = base[:, None] + trend(cfg, months)[None, :] * t[:, None]
    treat = (base_effect(cfg, months)[None, :]
             + (X @ np.asarray(cfg.effect_slopes, dtype=float))[:, None]
             + g[cat] + wedge(cfg, months)[None, :] * t[:, None])
    mean = mean + d[:, None] * treat
    if violation == "broken_trend":
        mean = mean + magnitude * ((d == 0) & (t == 1))[:, None]
    common = r_noise.standard_normal(n)
    idio = r_noise.standard_normal((n, H))
    noise = cfg.noise_sd * (math.sqrt(cfg.noise_corr) * common[:, None]
                            + math.sqrt(1.0 - cfg.noise_corr) * idio)
    if cfg.binary_outcome:
        Y = (r_noise.random((n, H)) < np.clip(mean, 0.0, 1.0)).astype(float)
    else:
        Y = mean + noise

    history = None
    if cfg.history_months > 0:
        L = cfg.history_months
        lags = np.arange(L)
        history = (base[:, None] + cfg.history_slope * lags[None, :]
                   + cfg.noise_sd * r_hist.standard_normal((n, L)))

    keep = np.ones(n, dtype=bool)
    w = np.ones(n)
    if cfg.control_sampling_rate < 1.0:
        keep = (d == 1) | (r_sample.random(n) < cfg.control_sampling_rate)
        w = np.where(d == 1, 1.0, 1.0 / cfg.control_sampling_rate)
    idx = np.flatnonzero(keep)
    width = len(str(n))
    ids = np.array([f"u{i:0{width}d}" for i in idx], dtype=object)
    ds = Dataset(
        ids=ids,
        d=d[idx], t=t[idx], w=w[idx], X=X[idx], Y=Y[idx],
        covariate_names=cfg.covariate_names,
        programme_type=ptype[idx], planned_days=planned[idx], actual_days=actual[idx],
        history=None if history is None else history[idx],
        meta={"source": "dgp", "seed": cfg.seed},
    )
    return ds, index[idx]


def simulate(cfg: DgpConfig) -> tuple[Dataset, DgpTruth]:
    """Draw a dataset and return it with the exact truth."""
    ds, _ = _draw(cfg)
    return ds, compute_truth(cfg)


def oracle_assumption_violation(cfg: DgpConfig, violation: str, magnitude: float = 0.02,
                                epsilons=(0.01, 0.001)):
    """Simulate with one identifying assumption broken.

    ``broken_trend`` adds ``magnitude`` to post-period non-treated outcomes;
    ``hidden_confounder`` loads post-period selection (coefficient
    ``magnitude``) and the baseline outcome (``0.1 * magnitude``) on an
    unobserved standard normal; ``support_hole`` adds ``magnitude`` times the
    binary covariate to the post-period selection index, pushing those
    propensities towards one.

    The truth keeps the original estimand definitions, so estimate minus truth
    measures the bias the violation induces. With ``magnitude == 0`` the
    result equals :func:`simulate`.
    """
    if violation not in VIOLATIONS:
        raise ValueError(f"unknown violation {violation!r}; expected one of {VIOLATIONS}")
    ds, index = _draw(cfg, violation, magnitude)
    truth = compute_truth(cfg, magnitude if violation == "hidden_confounder" else 0.0)
    expected: dict = {}
    details: dict = {}
    if violation == "broken_trend":
        expected = {
            "att_post": -magnitude,
            "overall_reform": -magnitude,
            "time_bc0": magnitude,
            "time_bc1": magnitude,
            "policy": -magnitude,
            "direct": -magnitude,
        }
    elif violation == "support_hole":
        post = ds.t == 1
        p = ndtr(index[post])
        details["expected_flagged"] = {
            str(eps): int(((p < eps) | (p > 1.0 - eps)).sum()) for eps in epsilons
        }
        details["pool"] = "11v|01v"
    descriptor = ViolationDescriptor(violation, float(magnitude),
                                     {k: float(v) for k, v in expected.items()}, details)
    return ds, truth, descriptor
