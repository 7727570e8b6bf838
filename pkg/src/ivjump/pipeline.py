"""End-to-end intraday pipeline: surfaces, jump labels, smile PCA, event study.

The pipeline consumes any dataset object exposing ``days``,
``underlying`` (an UnderlyingPanel), ``rates()`` and ``day_quotes(day)``
(a dict slot -> QuoteSlice); both the synthetic-market output and the
CSV loader satisfy this. Surfaces are fitted minute by minute inside a
configurable session window (by default through one hour past the jump
cutoff, which is all the event study can consume).

Smile levels stay decimal inside the surface stage; everything from the
change panels onward is expressed in volatility percentage points.
"""

from __future__ import annotations

import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import eventstudy as es
from . import jumps as jmod
from . import pricing, smilepca, surface as smod
from .config import MATURITY_NAMES, PipelineSettings
from .marketdata import (
    SESSION_MINUTES,
    QuoteSlice,
    UnderlyingPanel,
    minute_to_slot,
    parse_option_quotes,
    parse_rates,
    parse_underlying,
    quotes_to_slices,
    slot_to_minute,
)

log = logging.getLogger("ivjump")

MATURITY_TAU = dict(smod.MATURITY_LABELS)


@dataclass
class CsvDataset:
    days: list[str]
    underlying: UnderlyingPanel
    rate_curve: dict[str, float]
    slices: dict[str, dict[int, QuoteSlice]]

    def rates(self) -> dict[str, float]:
        return self.rate_curve

    def day_quotes(self, day: str) -> dict[int, QuoteSlice]:
        return self.slices.get(day, {})


def load_dataset(underlying_path: str, quotes_path: str, rates_path: str) -> CsvDataset:
    bars = parse_underlying(underlying_path)
    panel = UnderlyingPanel.from_bars(bars)
    rates = parse_rates(rates_path)
    by_key = quotes_to_slices(parse_option_quotes(quotes_path))
    slices: dict[str, dict[int, QuoteSlice]] = {}
    for (day, slot), sl in by_key.items():
        slices.setdefault(day, {})[slot] = sl
    return CsvDataset(days=panel.days, underlying=panel, rate_curve=rates, slices=slices)


# ---------------------------------------------------------------------------
# surfaces


@dataclass
class SurfaceSeries:
    """Per-minute smile bins and ATM levels on the session grid (decimal IV)."""

    days: list[str]
    start_slot: int
    end_slot: int
    bins: dict[str, np.ndarray]   # maturity -> (n_days, 405, N_BINS)
    atm: dict[str, np.ndarray]    # maturity -> (n_days, 405)
    failures: int = 0
    dropped_quotes: int = 0


def _dividends_for_day(slices: Mapping[int, QuoteSlice], prices_row: np.ndarray,
                       rate: float, slots: Iterable[int]) -> dict[float, float]:
    """Put-call-parity dividend yield per maturity from the nearest-ATM pair."""
    for slot in slots:
        sl = slices.get(slot)
        spot = prices_row[slot] if slot < prices_row.size else np.nan
        if sl is None or not np.isfinite(spot):
            continue
        out: dict[float, float] = {}
        for tau in np.unique(sl.tau):
            sel = sl.tau == tau
            calls = {float(k): float(m) for k, m in
                     zip(sl.strike[sel & sl.is_call], sl.mid[sel & sl.is_call])}
            puts = {float(k): float(m) for k, m in
                    zip(sl.strike[sel & ~sl.is_call], sl.mid[sel & ~sl.is_call])}
            common = sorted(set(calls) & set(puts), key=lambda k: abs(k - spot))
            q = 0.0
            for strike in common:
                try:
                    q = pricing.implied_dividend_yield(calls[strike], puts[strike],
                                                       float(spot), strike, float(tau), rate)
                    break
                except pricing.ParityDegenerate:
                    continue
            out[float(tau)] = q
        return out
    return {}


def _fit_day(day: str, prices_row: np.ndarray, slices: dict[int, QuoteSlice],
             rate: float, start_slot: int, end_slot: int, lam: float):
    """Fit every minute of one day; returns (bins, atm, failures, dropped)."""
    n_mat = len(smod.MATURITY_LABELS)
    bins = np.full((SESSION_MINUTES, n_mat, smod.N_BINS), np.nan)
    atm = np.full((SESSION_MINUTES, n_mat), np.nan)
    failures = 0
    dropped = 0
    window = range(start_slot, end_slot + 1)
    q_by_tau = _dividends_for_day(slices, prices_row, rate, window)
    prev_iv: np.ndarray | None = None
    for slot in window:
        sl = slices.get(slot)
        spot = prices_row[slot] if slot < prices_row.size else np.nan
        if sl is None or not np.isfinite(spot):
            failures += 1
            continue
        div = np.zeros(len(sl))
        for tau, q in q_by_tau.items():
            div[sl.tau == tau] = q
        sigma0 = prev_iv if prev_iv is not None and prev_iv.size == len(sl) else None
        try:
            cloud = smod.iv_points_from_arrays(sl.strike / spot, sl.tau, sl.is_call,
                                               sl.mid, float(spot), rate, div,
                                               sigma0=sigma0)
            model = smod.fit_surface(cloud, lam)
        except (smod.EmptyCrossSection, smod.SingularSystem):
            failures += 1
            continue
        dropped += cloud.dropped
        prev_iv = np.full(len(sl), np.nan)
        prev_iv[cloud.index] = cloud.iv
        smiles, levels = smod.smile_readout(model)
        for k, sample in enumerate(smiles):
            if sample.bins is not None:
                bins[slot, k] = sample.bins
            atm[slot, k] = levels[sample.label]
    return bins, atm, failures, dropped


def _fit_day_payload(args):
    return _fit_day(*args)


def build_surface_series(dataset, settings: PipelineSettings) -> SurfaceSeries:
    """Fit per-minute surfaces for every day in the dataset window."""
    days = dataset.days
    rates = dataset.rates()
    n = len(days)
    start_slot, end_slot = settings.surface_start_slot, settings.surface_end_slot
    n_mat = len(smod.MATURITY_LABELS)
    all_bins = np.full((n, SESSION_MINUTES, n_mat, smod.N_BINS), np.nan)
    all_atm = np.full((n, SESSION_MINUTES, n_mat), np.nan)
    failures = 0
    dropped = 0

    def payload(d: int):
        day = days[d]
        return (day, dataset.underlying.prices[d], dataset.day_quotes(day),
                rates.get(day, 0.0), start_slot, end_slot, settings.surface_lambda)

    if settings.jobs > 1:
        with ProcessPoolExecutor(max_workers=settings.jobs) as pool:
            results = list(pool.map(_fit_day_payload, (payload(d) for d in range(n)),
                                    chunksize=4))
    else:
        results = [_fit_day(*payload(d)) for d in range(n)]
    for d, (b, a, f, dr) in enumerate(results):
        all_bins[d] = b
        all_atm[d] = a
        failures += f
        dropped += dr

    bins = {lab: all_bins[:, :, k, :] for k, (lab, _) in enumerate(smod.MATURITY_LABELS)}
    atm = {lab: all_atm[:, :, k] for k, (lab, _) in enumerate(smod.MATURITY_LABELS)}
    return SurfaceSeries(days=list(days), start_slot=start_slot, end_slot=end_slot,
                         bins=bins, atm=atm, failures=failures, dropped_quotes=dropped)


def surface_series_from_truth(sim, settings: PipelineSettings) -> SurfaceSeries:
    """Surface series taken directly from simulator ground truth.

    Useful for fast statistical checks of the detection and event-study
    stages where surface fitting itself is not under test.
    """
    start_slot, end_slot = settings.surface_start_slot, settings.surface_end_slot
    n = len(sim.days)
    truth_bins = sim.truth_bins()
    truth_atm = sim.truth_atm()
    bins: dict[str, np.ndarray] = {}
    atm: dict[str, np.ndarray] = {}
    for lab in MATURITY_NAMES:
        b = np.full((n, SESSION_MINUTES, smod.N_BINS), np.nan)
        a = np.full((n, SESSION_MINUTES), np.nan)
        b[:, start_slot:end_slot + 1, :] = truth_bins[:, start_slot:end_slot + 1, :]
        a[:, start_slot:end_slot + 1] = truth_atm[:, start_slot:end_slot + 1]
        bins[lab] = b
        atm[lab] = a
    return SurfaceSeries(days=list(sim.days), start_slot=start_slot, end_slot=end_slot,
                         bins=bins, atm=atm)


# ---------------------------------------------------------------------------
# change variables

VariableKey = tuple[str, str]  # (variable name, maturity)


@dataclass
class VariableSet:
    """Raw (not deseasonalized) change variables in volatility points."""

    raw: dict[VariableKey, np.ndarray]  # (n_days, 405), NaN outside coverage
    pca_models: dict[str, smilepca.PcaModel] = field(default_factory=dict)
    score_series: dict[str, smilepca.ScoreSeries] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)


def _diff_within_day(values: np.ndarray, start_slot: int, end_slot: int) -> np.ndarray:
    out = np.full_like(values, np.nan)
    lo, hi = start_slot + 1, end_slot + 1
    out[:, lo:hi] = values[:, lo:hi] - values[:, lo - 1:hi - 1]
    return out


def delta_panel_from_grid(days: Sequence[str], values: np.ndarray,
                          start_slot: int, end_slot: int) -> smilepca.DeltaIvPanel:
    """Array equivalent of ``smilepca.delta_panel`` on session-grid data."""
    n_days = values.shape[0]
    diffs = _diff_within_day(values, start_slot, end_slot)
    ok = np.all(np.isfinite(diffs), axis=2)
    ok[:, :start_slot + 1] = False
    d_idx, slots = np.nonzero(ok)
    potential = n_days * (end_slot - start_slot)
    panel_days = np.array([days[d] for d in d_idx])
    minutes = np.array([slot_to_minute(int(s)) for s in slots])
    return smilepca.DeltaIvPanel(
        days=panel_days, minutes=minutes, slots=slots.astype(int),
        values=diffs[d_idx, slots], dropped=int(potential - d_idx.size),
    )


def _expand_rows(days: Sequence[str], panel_days: np.ndarray, slots: np.ndarray,
                 col: np.ndarray) -> np.ndarray:
    index = {d: i for i, d in enumerate(days)}
    out = np.full((len(days), SESSION_MINUTES), np.nan)
    d_idx = np.array([index[d] for d in panel_days], dtype=int)
    out[d_idx, slots] = col
    return out


def build_delta_variables(surf: SurfaceSeries, settings: PipelineSettings) -> VariableSet:
    """ATM-IV changes plus rotated-component scores, per maturity, in vol points."""
    raw: dict[VariableKey, np.ndarray] = {}
    models: dict[str, smilepca.PcaModel] = {}
    scores: dict[str, smilepca.ScoreSeries] = {}
    notes: list[str] = []
    for mat in settings.maturities:
        atm_pct = surf.atm[mat] * 100.0
        raw[("ATM-IV", mat)] = _diff_within_day(atm_pct, surf.start_slot, surf.end_slot)

        panel = delta_panel_from_grid(surf.days, surf.bins[mat] * 100.0,
                                      surf.start_slot, surf.end_slot)
        if len(panel) < smilepca.MIN_ROWS:
            notes.append(f"{mat}: only {len(panel)} change rows; components skipped")
            continue
        try:
            model = smilepca.pca_fit(panel)
            rotated = smilepca.varimax_rotate(model, kaiser=settings.kaiser)
        except (smilepca.RankDeficient, ValueError) as exc:
            notes.append(f"{mat}: component extraction failed ({exc})")
            continue
        series, labels = smilepca.project_and_label(rotated, panel)
        models[mat] = rotated
        scores[mat] = series
        for j, lab in enumerate(labels):
            if lab == smilepca.AMBIGUOUS_LABEL:
                notes.append(f"{mat}: component {j + 1} has an ambiguous region")
                continue
            raw[(lab, mat)] = _expand_rows(surf.days, panel.days, panel.slots,
                                           series.values[:, j])
    return VariableSet(raw=raw, pca_models=models, score_series=scores, notes=notes)


def deseasonalize_grid(values: np.ndarray, no_jump_mask: np.ndarray) -> np.ndarray:
    """Subtract per-slot means computed over no-jump days only."""
    ref = values[no_jump_mask]
    cnt = np.isfinite(ref).sum(axis=0)
    sums = np.where(np.isfinite(ref), ref, 0.0).sum(axis=0)
    has_data = np.isfinite(values).any(axis=0)
    orphan = has_data & (cnt == 0)
    if orphan.any():
        slot = int(np.flatnonzero(orphan)[0])
        raise smilepca.EmptyReferenceMinute(
            f"no no-jump observation at {slot_to_minute(slot)}")
    means = np.where(cnt > 0, sums / np.maximum(cnt, 1), 0.0)
    return values - means[None, :]


def deseasonalize_variables(varset: VariableSet, days: Sequence[str],
                            no_jump_days: Iterable[str]) -> dict[VariableKey, np.ndarray]:
    mask = np.isin(np.asarray(days), np.asarray(sorted(set(no_jump_days))))
    return {key: deseasonalize_grid(vals, mask) for key, vals in varset.raw.items()}


def completeness_from_surface(surf: SurfaceSeries, end_slot: int) -> dict[str, bool]:
    """A day is complete when every maturity has finite ATM and bins through end_slot."""
    lo, hi = surf.start_slot, min(end_slot, surf.end_slot) + 1
    ok = np.ones(len(surf.days), dtype=bool)
    for mat in surf.atm:
        ok &= np.all(np.isfinite(surf.atm[mat][:, lo:hi]), axis=1)
        ok &= np.all(np.isfinite(surf.bins[mat][:, lo:hi, :]), axis=(1, 2))
    return {day: bool(v) for day, v in zip(surf.days, ok)}


def iv_levels_from_surface(surf: SurfaceSeries, settings: PipelineSettings) -> dict[str, np.ndarray]:
    """Mean ATM level (percent) over the first 60 session minutes, per maturity."""
    out: dict[str, np.ndarray] = {}
    for mat in settings.maturities:
        seg = surf.atm[mat][:, :60] * 100.0
        cnt = np.isfinite(seg).sum(axis=1)
        sums = np.where(np.isfinite(seg), seg, 0.0).sum(axis=1)
        lvl = np.where(cnt >= settings.min_level_minutes, sums / np.maximum(cnt, 1), np.nan)
        out[mat] = lvl
    return out


# ---------------------------------------------------------------------------
# event samples, fits, curves


def jump_days_from_labels(labels: Sequence[jmod.DayLabel]) -> list[jmod.DayLabel]:
    return [l for l in labels if l.label in (jmod.LABEL_POSITIVE, jmod.LABEL_NEGATIVE)]


def jump_slot_distribution(labels: Sequence[jmod.DayLabel]) -> list[int]:
    return [l.jump_slot for l in jump_days_from_labels(labels)]


def no_jump_days_from_labels(labels: Sequence[jmod.DayLabel]) -> list[str]:
    return [l.day for l in labels if l.label == jmod.LABEL_NO_JUMP]


def build_event_samples(
    variables: Mapping[VariableKey, np.ndarray],
    iv_levels: Mapping[str, np.ndarray],
    labels: Sequence[jmod.DayLabel],
    ref_starts: Mapping[str, int],
    days: Sequence[str],
    settings: PipelineSettings,
) -> dict[tuple[str, str, int, bool], list[es.EventSample]]:
    index = {d: i for i, d in enumerate(days)}
    jump_labels = jump_days_from_labels(labels)
    samples: dict[tuple[str, str, int, bool], list[es.EventSample]] = {}
    for (var, mat), series in variables.items():
        lev_mat = mat if settings.iv_level_maturity == "same" else "3m"
        levels = iv_levels[lev_mat]
        for window in settings.windows:
            for include in (True, False):
                key = (var, mat, window, include)
                rows: list[es.EventSample] = []
                for lab in jump_labels:
                    di = index[lab.day]
                    if not np.isfinite(levels[di]):
                        continue
                    try:
                        cum = es.cumulative_delta(series[di], lab.jump_slot, window, include)
                    except es.MissingMinutes:
                        continue
                    sign = 1 if lab.label == jmod.LABEL_POSITIVE else -1
                    rows.append(es.EventSample(
                        day=lab.day, start_slot=lab.jump_slot, variable=var, maturity=mat,
                        window=window, include_first=include, cum=cum,
                        iv_level=float(levels[di]), jump_sign=sign))
                for day, start in ref_starts.items():
                    di = index[day]
                    if not np.isfinite(levels[di]):
                        continue
                    try:
                        cum = es.cumulative_delta(series[di], start, window, include)
                    except es.MissingMinutes:
                        continue
                    rows.append(es.EventSample(
                        day=day, start_slot=start, variable=var, maturity=mat,
                        window=window, include_first=include, cum=cum,
                        iv_level=float(levels[di]), jump_sign=0))
                samples[key] = rows
    return samples


def fit_regressions(samples: Mapping[tuple[str, str, int, bool], list[es.EventSample]],
                    settings: PipelineSettings) -> dict[tuple[str, str, int, bool], es.RegressionFit]:
    fits = {}
    for key, rows in samples.items():
        try:
            fits[key] = es.ols_fit(rows, se_type=settings.se_type)
        except (ValueError, es.RankDeficientDesign) as exc:
            log.warning("regression %s skipped: %s", key, exc)
    return fits


@dataclass
class CurveBundle:
    pos: np.ndarray            # (n_pos, 61)
    neg: np.ndarray
    ref: np.ndarray
    pos_mean: np.ndarray
    neg_mean: np.ndarray
    ref_mean: np.ndarray
    band: es.BootstrapBand | None


def _gather_curves(series: np.ndarray, day_idx: np.ndarray, starts: np.ndarray,
                   include: bool, horizon: int = es.CURVE_HORIZON) -> np.ndarray:
    """Vectorized cumulative curves over minutes 0..horizon; NaN < anchor."""
    n = day_idx.size
    out = np.full((n, horizon + 1), np.nan)
    if n == 0:
        return out
    offsets = np.arange(horizon)
    slots = starts[:, None] + offsets[None, :]
    valid_slot = slots < series.shape[1]
    slots_c = np.minimum(slots, series.shape[1] - 1)
    seg = series[day_idx[:, None], slots_c]
    seg = np.where(valid_slot, seg, np.nan)
    if include:
        out[:, 0] = 0.0
        out[:, 1:] = np.cumsum(seg, axis=1)
    else:
        out[:, 1] = 0.0
        out[:, 2:] = np.cumsum(seg[:, 1:], axis=1)
    return out


def build_curves(variables: Mapping[VariableKey, np.ndarray],
                 labels: Sequence[jmod.DayLabel], ref_starts: Mapping[str, int],
                 days: Sequence[str], settings: PipelineSettings,
                 ) -> dict[tuple[str, str, bool], CurveBundle]:
    index = {d: i for i, d in enumerate(days)}
    jump_labels = jump_days_from_labels(labels)
    pos = [(index[l.day], l.jump_slot) for l in jump_labels if l.label == jmod.LABEL_POSITIVE]
    neg = [(index[l.day], l.jump_slot) for l in jump_labels if l.label == jmod.LABEL_NEGATIVE]
    ref = [(index[d], s) for d, s in sorted(ref_starts.items())]
    out: dict[tuple[str, str, bool], CurveBundle] = {}
    for (var, mat) in settings.curve_variables:
        if (var, mat) not in variables:
            continue
        series = variables[(var, mat)]
        for include in (True, False):
            curves = {}
            for name, pairs in (("pos", pos), ("neg", neg), ("ref", ref)):
                di = np.array([p[0] for p in pairs], dtype=int)
                st = np.array([p[1] for p in pairs], dtype=int)
                curves[name] = _gather_curves(series, di, st, include)
            means = es.average_curves(curves)
            band = None
            if curves["ref"].shape[0] >= 2:
                band = es.bootstrap_band(curves["ref"], draws=settings.bootstrap_draws,
                                         level=settings.band_level,
                                         seed=settings.bootstrap_seed)
            out[(var, mat, include)] = CurveBundle(
                pos=curves["pos"], neg=curves["neg"], ref=curves["ref"],
                pos_mean=means["pos"], neg_mean=means["neg"], ref_mean=means["ref"],
                band=band)
    return out


# ---------------------------------------------------------------------------
# full run


@dataclass
class PipelineResult:
    settings: PipelineSettings
    days: list[str]
    underlying: UnderlyingPanel
    returns: np.ndarray
    stats: np.ndarray
    events: list[jmod.JumpEvent]
    labels: list[jmod.DayLabel]
    complete: dict[str, bool]
    surface: SurfaceSeries
    varset: VariableSet
    variables: dict[VariableKey, np.ndarray]
    iv_levels: dict[str, np.ndarray]
    jump_slot_dist: list[int]
    ref_starts: dict[str, int]
    samples: dict[tuple[str, str, int, bool], list[es.EventSample]]
    fits: dict[tuple[str, str, int, bool], es.RegressionFit]
    curves: dict[tuple[str, str, bool], CurveBundle]


def run_pipeline(dataset, settings: PipelineSettings,
                 surf: SurfaceSeries | None = None) -> PipelineResult:
    days = list(dataset.days)
    returns = jmod.build_return_panel(dataset.underlying)
    stats = jmod.jump_statistics(returns, settings.jump_window)
    events = jmod.detect_jumps(stats, returns, days, settings.alpha)
    if surf is None:
        surf = build_surface_series(dataset, settings)
    complete = completeness_from_surface(surf, settings.completeness_end_slot())
    labels = jmod.classify_days(days, events, complete, settings.cutoff)

    varset = build_delta_variables(surf, settings)
    no_jump = no_jump_days_from_labels(labels)
    if not no_jump:
        raise RuntimeError("no complete no-jump days; cannot deseasonalize")
    variables = deseasonalize_variables(varset, days, no_jump)
    iv_levels = iv_levels_from_surface(surf, settings)

    dist = jump_slot_distribution(labels)
    if not dist:
        raise RuntimeError("no labelled jump mornings; cannot place reference windows")
    ref_starts = es.build_reference_starts(no_jump, dist, settings.ref_seed)

    samples = build_event_samples(variables, iv_levels, labels, ref_starts, days, settings)
    fits = fit_regressions(samples, settings)
    curves = build_curves(variables, labels, ref_starts, days, settings)
    return PipelineResult(
        settings=settings, days=days, underlying=dataset.underlying, returns=returns,
        stats=stats, events=events, labels=labels, complete=complete, surface=surf,
        varset=varset, variables=variables, iv_levels=iv_levels,
        jump_slot_dist=dist, ref_starts=ref_starts, samples=samples, fits=fits,
        curves=curves)


def run_pipeline_from_truth(sim, settings: PipelineSettings) -> PipelineResult:
    """Run the pipeline on simulator ground-truth IV paths (no surface fitting)."""
    return run_pipeline(sim, settings, surf=surface_series_from_truth(sim, settings))


# ---------------------------------------------------------------------------
# robustness drivers


@dataclass
class CoefSummary:
    mean: float
    sd: float
    q025: float
    q975: float


@dataclass
class RobustnessReport:
    """Summaries across reference re-draws plus the two re-run variants."""

    iterations: int
    base_seed: int
    estimates: dict[tuple[str, str, int, str], CoefSummary]
    pvalues: dict[tuple[str, str, int, str], CoefSummary]
    draws: dict[tuple[str, str, int, str], np.ndarray]
    alpha_fits: dict[tuple[str, str, int, bool], es.RegressionFit] | None = None
    extended_fits: dict[tuple[str, str, int, bool], es.RegressionFit] | None = None
    notes: list[str] = field(default_factory=list)


_COEF_NAMES = ("beta0", "betap", "betan", "betaiv")


def _fast_ols(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Classical OLS betas and p-values via normal equations (speed path)."""
    from scipy import stats as sstats

    xtx = x.T @ x
    beta = np.linalg.solve(xtx, x.T @ y)
    resid = y - x @ beta
    dof = y.size - x.shape[1]
    sigma2 = float(resid @ resid) / dof
    se = np.sqrt(np.diag(sigma2 * np.linalg.inv(xtx)))
    with np.errstate(divide="ignore", invalid="ignore"):
        tvals = np.where(se > 0, beta / se, np.inf * np.sign(beta))
    pvals = 2.0 * sstats.t.sf(np.abs(tvals), dof)
    return beta, pvals


def _prefix_sums(series: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    vals = np.where(np.isfinite(series), series, 0.0)
    bad = (~np.isfinite(series)).astype(int)
    p = np.concatenate([np.zeros((series.shape[0], 1)), np.cumsum(vals, axis=1)], axis=1)
    nc = np.concatenate([np.zeros((series.shape[0], 1), dtype=int),
                         np.cumsum(bad, axis=1)], axis=1)
    return p, nc


def _relabel_fits(result: PipelineResult, settings: PipelineSettings,
                  events: list[jmod.JumpEvent], cutoff: str,
                  end_slot: int) -> dict[tuple[str, str, int, bool], es.RegressionFit]:
    """Re-run labelling, deseasonalization, sampling, and fits (exclude mode)."""
    complete = completeness_from_surface(result.surface, end_slot)
    labels = jmod.classify_days(result.days, events, complete, cutoff)
    no_jump = no_jump_days_from_labels(labels)
    dist = jump_slot_distribution(labels)
    if not no_jump or not dist:
        raise RuntimeError("relabelled run has no usable jump or reference days")
    variables = deseasonalize_variables(result.varset, result.days, no_jump)
    ref_starts = es.build_reference_starts(no_jump, dist, settings.ref_seed)
    sub = build_event_samples(variables, result.iv_levels, labels, ref_starts,
                              result.days, settings)
    exclude_only = {k: v for k, v in sub.items() if not k[3]}
    return fit_regressions(exclude_only, settings)


def run_robustness(result: PipelineResult, iterations: int | None = None,
                   drivers: Sequence[str] = ("redraws", "alpha", "window"),
                   windows: Sequence[int] = (5, 60)) -> RobustnessReport:
    """Robustness suite: reference re-draws, looser detection, longer morning.

    The re-draw driver repeats the exclude-mode regressions with fresh
    reference window draws (seed base + i), keeping the jump samples
    fixed, and reports mean/sd/2.5%/97.5% of each coefficient and its
    p-value across iterations.
    """
    settings = result.settings
    iters = settings.robustness_iterations if iterations is None else iterations
    report = RobustnessReport(iterations=iters, base_seed=settings.robustness_seed,
                              estimates={}, pvalues={}, draws={})

    if "redraws" in drivers:
        index = {d: i for i, d in enumerate(result.days)}
        jump_labels = jump_days_from_labels(result.labels)
        ref_days = sorted(no_jump_days_from_labels(result.labels))
        ref_idx = np.array([index[d] for d in ref_days], dtype=int)
        dist = np.asarray(result.jump_slot_dist, dtype=int)
        keys = [(var, mat) for (var, mat) in result.variables
                if mat in settings.maturities]
        for (var, mat) in keys:
            series = result.variables[(var, mat)]
            p_sum, p_bad = _prefix_sums(series)
            lev_mat = mat if settings.iv_level_maturity == "same" else "3m"
            levels = result.iv_levels[lev_mat]
            for window in windows:
                jump_rows = []
                for lab in jump_labels:
                    di = index[lab.day]
                    if not np.isfinite(levels[di]):
                        continue
                    lo, hi = lab.jump_slot + 1, lab.jump_slot + window
                    if hi > series.shape[1] or p_bad[di, hi] - p_bad[di, lo] > 0:
                        continue
                    jump_rows.append((p_sum[di, hi] - p_sum[di, lo],
                                      1.0 if lab.label == jmod.LABEL_POSITIVE else 0.0,
                                      1.0 if lab.label == jmod.LABEL_NEGATIVE else 0.0,
                                      levels[di]))
                jump_arr = np.array(jump_rows)
                betas = np.empty((iters, 4))
                pvals = np.empty((iters, 4))
                for it in range(iters):
                    rng = np.random.default_rng(settings.robustness_seed + it)
                    starts = dist[rng.integers(0, dist.size, size=ref_idx.size)]
                    lo = starts + 1
                    hi = starts + window
                    ok = (hi <= series.shape[1])
                    ok &= p_bad[ref_idx, hi] - p_bad[ref_idx, lo] == 0
                    ok &= np.isfinite(levels[ref_idx])
                    cums = p_sum[ref_idx, hi] - p_sum[ref_idx, lo]
                    ref_arr = np.column_stack([
                        cums[ok], np.zeros(ok.sum()), np.zeros(ok.sum()),
                        levels[ref_idx][ok]])
                    data = np.vstack([jump_arr, ref_arr])
                    y = data[:, 0]
                    x = np.column_stack([np.ones(data.shape[0]), data[:, 1], data[:, 2],
                                         data[:, 3]])
                    betas[it], pvals[it] = _fast_ols(x, y)
                for c, cname in enumerate(_COEF_NAMES):
                    key = (var, mat, window, cname)
                    report.draws[key] = betas[:, c].copy()
                    report.estimates[key] = CoefSummary(
                        mean=float(betas[:, c].mean()), sd=float(betas[:, c].std(ddof=1)),
                        q025=float(np.quantile(betas[:, c], 0.025)),
                        q975=float(np.quantile(betas[:, c], 0.975)))
                    report.pvalues[key] = CoefSummary(
                        mean=float(pvals[:, c].mean()), sd=float(pvals[:, c].std(ddof=1)),
                        q025=float(np.quantile(pvals[:, c], 0.025)),
                        q975=float(np.quantile(pvals[:, c], 0.975)))

    if "alpha" in drivers:
        events = jmod.detect_jumps(result.stats, result.returns, result.days,
                                   settings.robustness_alpha)
        try:
            report.alpha_fits = _relabel_fits(result, settings, events, settings.cutoff,
                                              settings.completeness_end_slot())
        except RuntimeError as exc:
            report.notes.append(f"alpha driver skipped: {exc}")

    if "window" in drivers:
        cutoff_slot = minute_to_slot(settings.robustness_cutoff)
        if result.surface.end_slot < cutoff_slot + 60:
            report.notes.append(
                "window driver skipped: surface coverage ends before "
                f"{settings.robustness_cutoff} + 60 minutes")
        else:
            try:
                report.extended_fits = _relabel_fits(
                    result, settings, result.events, settings.robustness_cutoff,
                    settings.completeness_end_slot(cutoff_slot))
            except RuntimeError as exc:
                report.notes.append(f"window driver skipped: {exc}")
    return report


def write_robustness_report(report: RobustnessReport, path: str) -> None:
    """``variable,maturity,window,coef,metric,mean,sd,q025,q975`` rows."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("variable,maturity,window,coef,metric,mean,sd,q025,q975\n")
        for key in sorted(report.estimates):
            var, mat, window, coef = key
            for metric, summ in (("estimate", report.estimates[key]),
                                 ("pvalue", report.pvalues[key])):
                fh.write(f"{var},{mat},{window},{coef},{metric},{summ.mean:.12g},"
                         f"{summ.sd:.12g},{summ.q025:.12g},{summ.q975:.12g}\n")
