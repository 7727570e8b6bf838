"""Nonparametric return-jump detection on minute log-returns.

Each minute return is scaled by a local bipower volatility estimate
(Lee-Mykland style) and compared against an extreme-value threshold
calibrated to the number of observations per day. The overnight move is
treated as one ordinary 1-minute-slot return at 09:31 and flagged, so
overnight jumps participate in detection. Mornings are then classified
as positive-jump, negative-jump, no-jump, or excluded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .marketdata import SESSION_MINUTES, UnderlyingPanel, minute_to_slot, slot_to_minute

DEFAULT_WINDOW = 270          # minutes of local-volatility history
DEFAULT_ALPHA = 0.01
DEFAULT_CUTOFF = "10:30"      # jumps after this minute are ignored

_C = math.sqrt(2.0 / math.pi)  # E|Z| for standard normal Z

POSITIVE = "positive"
NEGATIVE = "negative"

LABEL_POSITIVE = "PositiveJump"
LABEL_NEGATIVE = "NegativeJump"
LABEL_NO_JUMP = "NoJump"
LABEL_EXCLUDED = "Excluded"


class SeriesTooShort(ValueError):
    """Not enough observations to form the local volatility window."""


@dataclass(frozen=True)
class JumpTestConfig:
    window: int = DEFAULT_WINDOW
    alpha: float = DEFAULT_ALPHA
    cutoff: str = DEFAULT_CUTOFF

    def __post_init__(self) -> None:
        if self.window < 3:
            raise ValueError("window must be >= 3")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must be in (0, 1)")


@dataclass(frozen=True)
class JumpEvent:
    day: str
    minute: str
    slot: int
    direction: str        # "positive" | "negative"
    stat: float
    is_overnight: bool


@dataclass(frozen=True)
class DayLabel:
    day: str
    label: str            # PositiveJump | NegativeJump | NoJump | Excluded
    jump_slot: int | None = None
    jump_minute: str | None = None
    reason: str | None = None


def build_return_panel(panel: UnderlyingPanel) -> np.ndarray:
    """Minute log-returns aligned to the session grid, one row per day.

    Slot 0 of each day holds the overnight (previous close to 09:31)
    return; slots j >= 1 hold within-day returns. NaN marks returns that
    cannot be formed because a price is missing.
    """
    prices = panel.prices
    n_days, n_min = prices.shape
    logp = np.where(np.isfinite(prices), np.log(prices), np.nan)
    rets = np.full_like(logp, np.nan)
    rets[:, 1:] = logp[:, 1:] - logp[:, :-1]
    if n_days > 1:
        rets[1:, 0] = logp[1:, 0] - logp[:-1, -1]
    return rets


def local_bipower_sigma(returns: np.ndarray, window: int) -> np.ndarray:
    """Local volatility estimate from products of adjacent absolute returns.

    For each return index the estimate averages the ``window - 2`` most
    recent products |r_j||r_{j-1}| strictly before it; products with a
    missing return are skipped, and the backward scan never reaches
    before the first slot of the previous trading day. NaN marks indices
    where a full complement of products is unavailable.
    """
    n_days, n_per_day = returns.shape
    need = window - 2
    flat = returns.ravel()
    n = flat.size
    if n < window + 2:
        raise SeriesTooShort(f"need at least {window + 2} observations, got {n}")

    prod = np.full(n, np.nan)
    prod[1:] = np.abs(flat[1:]) * np.abs(flat[:-1])
    valid_idx = np.flatnonzero(np.isfinite(prod))
    prefix = np.concatenate([[0.0], np.cumsum(prod[valid_idx])])

    idx = np.arange(n)
    pos = np.searchsorted(valid_idx, idx - 1, side="right")
    ok = pos >= need
    first_used = np.where(ok, valid_idx[np.maximum(pos - need, 0)], -1)
    day_of = idx // n_per_day
    # earliest return touched is first_used - 1; it must lie in the
    # previous day or later
    lookback_floor = np.maximum(0, (day_of - 1) * n_per_day)
    ok &= first_used - 1 >= lookback_floor

    sums = np.where(ok, prefix[pos] - prefix[np.maximum(pos - need, 0)], np.nan)
    var = sums / need
    var = np.where(var > 0, var, np.nan)
    return np.sqrt(var).reshape(n_days, n_per_day)


def jump_statistics(returns: np.ndarray, window: int = DEFAULT_WINDOW) -> np.ndarray:
    """Bipower-scaled return statistic, NaN where undefined."""
    sigma = local_bipower_sigma(returns, window)
    with np.errstate(invalid="ignore", divide="ignore"):
        return returns / sigma


def rejection_threshold(n_per_day: int, alpha: float) -> float:
    """|statistic| rejection level from the extreme-value calibration.

    Rejects where (|L| - C_n)/S_n exceeds -log(-log(1 - alpha)) with
    C_n = (2 ln n)^{1/2}/c - (ln pi + ln ln n)/(2 c (2 ln n)^{1/2}) and
    S_n = 1/(c (2 ln n)^{1/2}), c = sqrt(2/pi).
    """
    if n_per_day < 2:
        raise ValueError("n_per_day must be >= 2")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    two_log_n = 2.0 * math.log(n_per_day)
    root = math.sqrt(two_log_n)
    c_n = root / _C - (math.log(math.pi) + math.log(math.log(n_per_day))) / (2.0 * _C * root)
    s_n = 1.0 / (_C * root)
    beta_star = -math.log(-math.log(1.0 - alpha))
    return c_n + s_n * beta_star


def detect_jumps(stats: np.ndarray, returns: np.ndarray, days: Sequence[str],
                 alpha: float = DEFAULT_ALPHA) -> list[JumpEvent]:
    """Threshold the statistic panel into dated jump events."""
    n_days, n_per_day = stats.shape
    thr = rejection_threshold(n_per_day, alpha)
    events: list[JumpEvent] = []
    hits = np.argwhere(np.abs(stats) > thr)
    for d, s in hits:
        r = returns[d, s]
        events.append(JumpEvent(
            day=days[d], minute=slot_to_minute(int(s)), slot=int(s),
            direction=POSITIVE if r > 0 else NEGATIVE,
            stat=float(stats[d, s]), is_overnight=bool(s == 0),
        ))
    return events


def classify_days(days: Sequence[str], events: Iterable[JumpEvent],
                  complete_by_day: Mapping[str, bool],
                  cutoff: str = DEFAULT_CUTOFF) -> list[DayLabel]:
    """Label each morning from its pre-cutoff jump count and data coverage.

    Exactly one jump at or before the cutoff gives a directional label;
    several give Excluded("multiple"). A morning with no jumps joins the
    no-jump sample only when its early-session data is complete,
    otherwise it is Excluded("missing").
    """
    cutoff_slot = minute_to_slot(cutoff)
    by_day: dict[str, list[JumpEvent]] = {d: [] for d in days}
    for ev in events:
        if ev.day in by_day and ev.slot <= cutoff_slot:
            by_day[ev.day].append(ev)
    labels: list[DayLabel] = []
    for day in days:
        evs = sorted(by_day[day], key=lambda e: e.slot)
        if len(evs) == 1:
            ev = evs[0]
            label = LABEL_POSITIVE if ev.direction == POSITIVE else LABEL_NEGATIVE
            labels.append(DayLabel(day=day, label=label, jump_slot=ev.slot,
                                   jump_minute=ev.minute))
        elif len(evs) > 1:
            labels.append(DayLabel(day=day, label=LABEL_EXCLUDED, reason="multiple"))
        elif complete_by_day.get(day, False):
            labels.append(DayLabel(day=day, label=LABEL_NO_JUMP))
        else:
            labels.append(DayLabel(day=day, label=LABEL_EXCLUDED, reason="missing"))
    return labels


def write_jump_report(events: Sequence[JumpEvent], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("day,minute,direction,L,overnight\n")
        for ev in sorted(events, key=lambda e: (e.day, e.slot)):
            fh.write(f"{ev.day},{ev.minute},{ev.direction},{ev.stat:.12g},"
                     f"{int(ev.is_overnight)}\n")


def read_jump_report(path: str) -> list[JumpEvent]:
    events: list[JumpEvent] = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != "day,minute,direction,L,overnight":
            raise ValueError(f"{path}: unexpected header {header!r}")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            day, minute, direction, stat, overnight = line.split(",")
            events.append(JumpEvent(day=day, minute=minute, slot=minute_to_slot(minute),
                                    direction=direction, stat=float(stat),
                                    is_overnight=bool(int(overnight))))
    return events


def write_label_report(labels: Sequence[DayLabel], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("day,class,jump_minute,reason\n")
        for lab in sorted(labels, key=lambda l: l.day):
            fh.write(f"{lab.day},{lab.label},{lab.jump_minute or ''},{lab.reason or ''}\n")


def read_label_report(path: str) -> list[DayLabel]:
    labels: list[DayLabel] = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != "day,class,jump_minute,reason":
            raise ValueError(f"{path}: unexpected header {header!r}")
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            day, label, minute, reason = line.split(",")
            labels.append(DayLabel(
                day=day, label=label,
                jump_slot=minute_to_slot(minute) if minute else None,
                jump_minute=minute or None, reason=reason or None,
            ))
    return labels
