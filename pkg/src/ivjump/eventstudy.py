"""Post-jump event studies on implied-volatility changes.

Jump mornings contribute windows anchored at the detected jump minute;
no-jump mornings contribute reference windows whose start minutes are
drawn from the empirical distribution of the jump timestamps. Windowed
cumulative IV changes are regressed on jump-direction indicators plus
the morning's IV level, optionally excluding the movement simultaneous
with the jump. Bootstrap bands summarize the no-jump cumulative paths.

Series passed in are per-day vectors aligned to the 405-minute session
grid (NaN = missing) and are expected in volatility percentage points.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import stats as sstats

WINDOWS = (5, 15, 20, 30, 60)
BOOTSTRAP_DRAWS = 7000
BAND_LEVEL = 0.90
CURVE_HORIZON = 60


class MissingMinutes(ValueError):
    """A required minute of the window is missing; the day drops out for this window."""


class RankDeficientDesign(ValueError):
    """Regression design matrix is rank deficient."""


@dataclass(frozen=True)
class EventSample:
    """One (day, variable, window) observation of the regression."""

    day: str
    start_slot: int
    variable: str
    maturity: str
    window: int
    include_first: bool
    cum: float
    iv_level: float
    jump_sign: int  # +1 positive jump, -1 negative jump, 0 reference


@dataclass
class RegressionFit:
    """OLS estimates for [intercept, positive-jump, negative-jump, IV-level]."""

    beta: np.ndarray       # (4,)
    se: np.ndarray         # (4,)
    pvalues: np.ndarray    # (4,)
    r2: float
    nobs: int
    se_type: str = "classical"

    @property
    def beta0(self) -> float:
        return float(self.beta[0])

    @property
    def beta_pos(self) -> float:
        return float(self.beta[1])

    @property
    def beta_neg(self) -> float:
        return float(self.beta[2])

    @property
    def beta_iv(self) -> float:
        return float(self.beta[3])


@dataclass
class BootstrapBand:
    minutes: np.ndarray    # (H+1,)
    lower: np.ndarray
    upper: np.ndarray
    level: float
    draws: int
    seed: int


def build_reference_starts(no_jump_days: Sequence[str], jump_slots: Sequence[int],
                           seed: int) -> dict[str, int]:
    """Draw one window start per no-jump day from the jump-minute distribution.

    Draws are i.i.d. with replacement from the empirical multiset of jump
    slots and are deterministic for a given seed (days are processed in
    sorted order).
    """
    slots = np.asarray(jump_slots, dtype=int)
    if slots.size == 0:
        raise ValueError("empirical jump-minute distribution is empty")
    days = sorted(no_jump_days)
    rng = np.random.default_rng(seed)
    picks = slots[rng.integers(0, slots.size, size=len(days))]
    return {day: int(s) for day, s in zip(days, picks)}


def cumulative_delta(series: np.ndarray, start_slot: int, window: int,
                     include_first: bool) -> float:
    """Cumulative change over an event window.

    ``include_first`` sums the ``window`` changes starting at the jump
    minute itself; excluding it sums the ``window - 1`` changes that
    follow. Any missing minute raises MissingMinutes.
    """
    lo = start_slot if include_first else start_slot + 1
    hi = start_slot + window  # exclusive
    if lo < 0 or hi > series.size:
        raise MissingMinutes(f"window [{lo}, {hi}) outside the session grid")
    seg = series[lo:hi]
    if not np.all(np.isfinite(seg)):
        raise MissingMinutes(f"missing minutes in window starting at slot {start_slot}")
    return float(seg.sum())


def cumulative_curve(series: np.ndarray, start_slot: int, include_first: bool,
                     horizon: int = CURVE_HORIZON) -> np.ndarray:
    """Cumulative path over minutes 0..horizon from the jump-interval start.

    Minute 0 is the window anchor (value 0); with ``include_first`` the
    step from 0 to 1 is the jump-interval movement, otherwise the curve
    is anchored at minute 1 and minute 0 is NaN. Returns all-NaN past the
    first missing minute.
    """
    out = np.full(horizon + 1, np.nan)
    first = start_slot if include_first else start_slot + 1
    anchor = 0 if include_first else 1
    out[anchor] = 0.0
    acc = 0.0
    for t in range(anchor + 1, horizon + 1):
        slot = start_slot + t - 1
        if slot >= series.size or not np.isfinite(series[slot]):
            break
        acc += series[slot]
        out[t] = acc
    return out


def ols_fit(samples: Sequence[EventSample], se_type: str = "classical") -> RegressionFit:
    """OLS of cumulative changes on [1, I_P, I_N, IV-level].

    Classical homoskedastic two-sided t p-values by default; ``se_type``
    "hc1" switches to heteroskedasticity-consistent standard errors.
    """
    if se_type not in ("classical", "hc1"):
        raise ValueError(f"unknown se_type {se_type!r}")
    n = len(samples)
    if n < 5:
        raise ValueError("need at least 5 samples")
    y = np.array([s.cum for s in samples])
    x = np.column_stack([
        np.ones(n),
        np.array([1.0 if s.jump_sign > 0 else 0.0 for s in samples]),
        np.array([1.0 if s.jump_sign < 0 else 0.0 for s in samples]),
        np.array([s.iv_level for s in samples]),
    ])
    if np.linalg.matrix_rank(x) < 4:
        raise RankDeficientDesign("design matrix rank < 4")
    beta, _, _, _ = np.linalg.lstsq(x, y, rcond=None)
    resid = y - x @ beta
    dof = n - 4
    xtx_inv = np.linalg.inv(x.T @ x)
    if se_type == "classical":
        sigma2 = float(resid @ resid) / dof
        cov = sigma2 * xtx_inv
    else:
        meat = (x * (resid ** 2)[:, None]).T @ x
        cov = xtx_inv @ meat @ xtx_inv * (n / dof)
    se = np.sqrt(np.diag(cov))
    with np.errstate(divide="ignore", invalid="ignore"):
        tvals = np.where(se > 0, beta / se, np.inf * np.sign(beta))
    pvals = 2.0 * sstats.t.sf(np.abs(tvals), dof)
    tss = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float(resid @ resid) / tss if tss > 0 else 0.0
    return RegressionFit(beta=beta, se=se, pvalues=pvals, r2=r2, nobs=n, se_type=se_type)


def bootstrap_band(curves: np.ndarray, draws: int = BOOTSTRAP_DRAWS,
                   level: float = BAND_LEVEL, seed: int = 0) -> BootstrapBand:
    """Bootstrap band for the cross-sectional mean of no-jump cumulative paths.

    For each minute the day cross-section is resampled with replacement
    ``draws`` times; the band is the pair of symmetric empirical
    quantiles of the resampled means. The resampling indices depend only
    on the seed, so bands at different levels nest.
    """
    curves = np.asarray(curves, dtype=float)
    n_days, n_min = curves.shape
    if n_days < 2:
        raise ValueError("need at least 2 curves")
    rng = np.random.default_rng(seed)
    q_lo, q_hi = (1.0 - level) / 2.0, (1.0 + level) / 2.0
    lower = np.full(n_min, np.nan)
    upper = np.full(n_min, np.nan)
    for t in range(n_min):
        col = curves[:, t]
        col = col[np.isfinite(col)]
        idx = rng.integers(0, max(col.size, 1), size=(draws, max(col.size, 1)))
        if col.size == 0:
            continue
        means = col[idx].mean(axis=1)
        lower[t] = np.quantile(means, q_lo)
        upper[t] = np.quantile(means, q_hi)
    return BootstrapBand(minutes=np.arange(n_min), lower=lower, upper=upper,
                         level=level, draws=draws, seed=seed)


def average_curves(curves_by_class: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Minute-wise mean curve per class, ignoring missing entries."""
    out: dict[str, np.ndarray] = {}
    for name, curves in curves_by_class.items():
        arr = np.asarray(curves, dtype=float)
        if arr.size == 0:
            out[name] = np.array([])
            continue
        with np.errstate(invalid="ignore"):
            counts = np.isfinite(arr).sum(axis=0)
            sums = np.nansum(arr, axis=0)
            out[name] = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return out


def robustness_suite(result, iterations: int | None = None,
                     drivers: Sequence[str] = ("redraws", "alpha", "window"),
                     windows: Sequence[int] = (5, 60)):
    """Robustness drivers over a cached pipeline run; see pipeline.run_robustness."""
    from .pipeline import run_robustness

    return run_robustness(result, iterations=iterations, drivers=drivers, windows=windows)


def economic_significance(beta_neg: float, base_vol: float) -> float:
    """Approximate ATM option return (percent) from an IV shift in points.

    The at-the-money price approximation is linear in volatility, so the
    relative price change equals the relative volatility change.
    """
    if base_vol <= 0:
        raise ValueError("base_vol must be positive")
    return 100.0 * beta_neg / base_vol


def write_regression_report(fits: Mapping[tuple[str, str, int, bool], RegressionFit],
                            path: str) -> None:
    """``variable,maturity,window,include_first,beta0,betap,betan,betaiv,p0,pp,pn,piv,N``."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("variable,maturity,window,include_first,beta0,betap,betan,betaiv,"
                 "p0,pp,pn,piv,N\n")
        for (var, mat, window, include) in sorted(fits):
            fit = fits[(var, mat, window, include)]
            betas = ",".join(f"{b:.12g}" for b in fit.beta)
            ps = ",".join(f"{p:.12g}" for p in fit.pvalues)
            fh.write(f"{var},{mat},{window},{int(include)},{betas},{ps},{fit.nobs}\n")


def write_curve_dump(path: str, pos_mean: np.ndarray, neg_mean: np.ndarray,
                     ref_mean: np.ndarray, band: BootstrapBand | None) -> None:
    """``minute,pos_mean,neg_mean,ref_mean,band_lo,band_hi`` (band may be empty)."""

    def cell(x: float) -> str:
        return "" if not np.isfinite(x) else f"{x:.12g}"

    n = len(ref_mean)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("minute,pos_mean,neg_mean,ref_mean,band_lo,band_hi\n")
        for t in range(n):
            lo = band.lower[t] if band is not None else np.nan
            hi = band.upper[t] if band is not None else np.nan
            fh.write(f"{t},{cell(pos_mean[t])},{cell(neg_mean[t])},{cell(ref_mean[t])},"
                     f"{cell(lo)},{cell(hi)}\n")
