"""Smile-change panels, intraday deseasonalization, PCA, and Varimax rotation.

The object of study is the minute-to-minute change of the binned smile,
never its level. Differencing stays inside a trading day (the first row
of a day is the second minute's change against the first). Principal
components are extracted from the column covariance of the change panel;
an orthogonal Varimax rotation is applied for interpretability, and each
rotated component is labelled by the moneyness region that carries most
of its squared loadings.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .marketdata import minute_to_slot, slot_to_minute
from .surface import BIN_CENTERS, N_BINS, SmileSample

ATM_LOW, ATM_HIGH = 0.95, 1.05

LABEL_ATM = "ATM-PC"
LABEL_OTM_CALL = "OTM-Call-PC"
LABEL_OTM_PUT = "OTM-Put-PC"
AMBIGUOUS_LABEL = "AmbiguousLabel"

MIN_ROWS = 50
VARIMAX_TOL = 1e-10
VARIMAX_MAX_SWEEPS = 500


class EmptyReferenceMinute(ValueError):
    """A minute in the data has no no-jump observation to deseasonalize against."""


class RankDeficient(ValueError):
    """Covariance rank below the requested number of components."""


@dataclass
class DeltaIvPanel:
    """Rows of minute-to-minute smile changes for one maturity."""

    days: np.ndarray      # (n,) row day
    minutes: np.ndarray   # (n,) row minute "HH:MM"
    slots: np.ndarray     # (n,) row session slot
    values: np.ndarray    # (n, N_BINS)
    dropped: int = 0

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass
class ScoreSeries:
    days: np.ndarray
    minutes: np.ndarray
    slots: np.ndarray
    values: np.ndarray    # (n, k)
    deseasonalized: bool = False


@dataclass
class PcaModel:
    loadings: np.ndarray          # (p, k), columns are components
    eigenvalues: np.ndarray       # (k,)
    explained: np.ndarray         # (k,) fraction of total variance
    nobs: int
    rotated: bool = False
    rotation: np.ndarray | None = None   # (k, k) orthogonal, loadings = base @ rotation
    labels: list[str] | None = None


def delta_panel(samples: Sequence[SmileSample]) -> DeltaIvPanel:
    """Difference consecutive smile samples within each day.

    ``samples`` may contain missing entries (``bins is None``); a missing
    minute invalidates its own change and the next minute's, and both are
    counted as dropped. Days are never differenced across.
    """
    by_day: dict[str, list[SmileSample]] = {}
    for s in samples:
        by_day.setdefault(s.day, []).append(s)
    days: list[str] = []
    minutes: list[str] = []
    slots: list[int] = []
    rows: list[np.ndarray] = []
    dropped = 0
    for day in sorted(by_day):
        seq = sorted(by_day[day], key=lambda s: s.minute)
        for prev, cur in zip(seq[:-1], seq[1:]):
            if prev.missing or cur.missing:
                dropped += 1
                continue
            days.append(day)
            minutes.append(cur.minute)
            slots.append(minute_to_slot(cur.minute))
            rows.append(cur.bins - prev.bins)
    values = np.array(rows, dtype=float) if rows else np.empty((0, N_BINS))
    return DeltaIvPanel(days=np.array(days), minutes=np.array(minutes),
                        slots=np.array(slots, dtype=int), values=values, dropped=dropped)


def deseasonalize(values: np.ndarray, slots: np.ndarray, days: np.ndarray,
                  no_jump_days: Iterable[str]) -> np.ndarray:
    """Subtract, per minute-of-day, the mean over no-jump days at that minute.

    Jump-day rows are adjusted with the no-jump means only; including
    jump rows in the reference would contaminate the intraday profile.
    """
    values = np.asarray(values, dtype=float)
    flat = values.reshape(len(values), -1)
    no_jump = np.isin(np.asarray(days), np.asarray(sorted(set(no_jump_days))))
    out = flat.copy()
    for slot in np.unique(slots):
        at_slot = slots == slot
        ref = at_slot & no_jump
        if not ref.any():
            raise EmptyReferenceMinute(f"no no-jump observation at {slot_to_minute(int(slot))}")
        out[at_slot] -= flat[ref].mean(axis=0)
    return out.reshape(values.shape)


def _sign_normalize(loadings: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude entry is positive."""
    out = loadings.copy()
    for j in range(out.shape[1]):
        col = out[:, j]
        if col[np.argmax(np.abs(col))] < 0:
            out[:, j] = -col
    return out


def pca_fit(panel: DeltaIvPanel | np.ndarray, k: int = 3) -> PcaModel:
    """Principal components of the column covariance of a change panel."""
    x = panel.values if isinstance(panel, DeltaIvPanel) else np.asarray(panel, dtype=float)
    n, p = x.shape
    if n < MIN_ROWS:
        raise ValueError(f"need at least {MIN_ROWS} rows, got {n}")
    if not np.all(np.isfinite(x)):
        raise ValueError("panel contains missing values")
    xc = x - x.mean(axis=0)
    cov = xc.T @ xc / (n - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = eigvals[order]
    eigvecs = eigvecs[:, order]
    rank = int(np.sum(eigvals > max(eigvals[0], 0.0) * 1e-10))
    if rank < k:
        raise RankDeficient(f"covariance rank {rank} < k={k}")
    loadings = _sign_normalize(eigvecs[:, :k])
    total = float(eigvals.sum())
    return PcaModel(
        loadings=loadings, eigenvalues=eigvals[:k].copy(),
        explained=eigvals[:k] / total, nobs=n,
    )


def varimax_criterion(loadings: np.ndarray) -> float:
    """Raw Varimax objective: summed per-column variance of squared loadings."""
    sq = loadings ** 2
    return float(np.sum((sq ** 2).mean(axis=0) - sq.mean(axis=0) ** 2))


def varimax_rotate(model: PcaModel, kaiser: bool = False,
                   tol: float = VARIMAX_TOL, max_sweeps: int = VARIMAX_MAX_SWEEPS) -> PcaModel:
    """Orthogonally rotate loadings to maximize the Varimax criterion.

    Uses cyclic pairwise plane rotations. ``kaiser=True`` row-normalizes
    loadings by their communalities during the search. Communalities and
    the spanned subspace are preserved exactly; if the sweep cap is hit a
    warning is issued and the best iterate is returned.
    """
    if model.rotated:
        raise ValueError("model is already rotated")
    base = model.loadings
    p, k = base.shape
    b = base.copy()
    weights = np.ones(p)
    if kaiser:
        comm = np.sqrt((b ** 2).sum(axis=1))
        weights = np.where(comm > 0, comm, 1.0)
        b = b / weights[:, None]
    rot = np.eye(k)

    crit = varimax_criterion(b)
    converged = k < 2
    for _ in range(max_sweeps):
        if converged:
            break
        for i in range(k - 1):
            for j in range(i + 1, k):
                u = b[:, i] ** 2 - b[:, j] ** 2
                v = 2.0 * b[:, i] * b[:, j]
                a_sum = u.sum()
                b_sum = v.sum()
                num = 2.0 * (u @ v) - 2.0 * a_sum * b_sum / p
                den = (u @ u) - (v @ v) - (a_sum ** 2 - b_sum ** 2) / p
                theta = 0.25 * np.arctan2(num, den)
                if theta == 0.0:
                    continue
                c, s = np.cos(theta), np.sin(theta)
                g = np.array([[c, -s], [s, c]])
                b[:, [i, j]] = b[:, [i, j]] @ g
                rot[:, [i, j]] = rot[:, [i, j]] @ g
        new_crit = varimax_criterion(b)
        if new_crit - crit < tol:
            converged = True
        crit = new_crit
    if not converged:
        warnings.warn("varimax rotation hit the sweep cap; returning best iterate",
                      RuntimeWarning)

    rotated = (b * weights[:, None]) if kaiser else b
    # re-apply the sign convention, keeping loadings == base @ rotation exact
    for j in range(k):
        col = rotated[:, j]
        if col[np.argmax(np.abs(col))] < 0:
            rotated[:, j] = -col
            rot[:, j] = -rot[:, j]
    variances = np.einsum("ij,i,ik->jk", rot, model.eigenvalues, rot).diagonal().copy()
    total = float(model.eigenvalues.sum() / model.explained.sum()) if model.explained.sum() else 1.0
    return PcaModel(
        loadings=rotated, eigenvalues=variances,
        explained=variances / total, nobs=model.nobs,
        rotated=True, rotation=rot,
    )


def region_of(m: float) -> str:
    if m < ATM_LOW:
        return LABEL_OTM_PUT
    if m > ATM_HIGH:
        return LABEL_OTM_CALL
    return LABEL_ATM


def label_components(loadings: np.ndarray, bin_moneyness: np.ndarray | None = None) -> list[str]:
    """Label each component by the moneyness region holding most squared loading.

    When two components claim the same region the larger claim keeps it
    and the rest are reported as ``AmbiguousLabel``.
    """
    centers = BIN_CENTERS if bin_moneyness is None else np.asarray(bin_moneyness, dtype=float)
    regions = np.array([region_of(float(c)) for c in centers])
    names = (LABEL_OTM_PUT, LABEL_ATM, LABEL_OTM_CALL)
    k = loadings.shape[1]
    shares = np.zeros((k, len(names)))
    for r, name in enumerate(names):
        mask = regions == name
        shares[:, r] = (loadings[mask] ** 2).sum(axis=0)
    picks = shares.argmax(axis=1)
    labels = [AMBIGUOUS_LABEL] * k
    for r, name in enumerate(names):
        claimants = np.flatnonzero(picks == r)
        if claimants.size == 0:
            continue
        winner = claimants[np.argmax(shares[claimants, r])]
        labels[winner] = name
    return labels


def project_and_label(model: PcaModel, panel: DeltaIvPanel,
                      bin_moneyness: np.ndarray | None = None) -> tuple[ScoreSeries, list[str]]:
    """Scores of the panel rows on the rotated components, plus region labels."""
    if not model.rotated:
        raise ValueError("project_and_label requires a rotated model")
    scores = panel.values @ model.loadings
    labels = label_components(model.loadings, bin_moneyness)
    model.labels = labels
    series = ScoreSeries(days=panel.days, minutes=panel.minutes, slots=panel.slots,
                         values=scores, deseasonalized=False)
    return series, labels


def write_loadings(models: dict[str, PcaModel], path: str) -> None:
    """Dump rotated loadings as ``maturity,component,bin_lo,loading`` rows."""
    from .surface import BIN_LOWER
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("maturity,component,bin_lo,loading\n")
        for maturity in sorted(models):
            model = models[maturity]
            labels = model.labels or [f"PC{j + 1}" for j in range(model.loadings.shape[1])]
            for j, lab in enumerate(labels):
                for b in range(model.loadings.shape[0]):
                    fh.write(f"{maturity},{lab},{BIN_LOWER[b]:.2f},"
                             f"{model.loadings[b, j]:.12g}\n")


def write_scores(series: ScoreSeries, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("day,minute,pc1,pc2,pc3\n")
        for i in range(len(series.days)):
            vals = ",".join(f"{v:.12g}" for v in series.values[i])
            fh.write(f"{series.days[i]},{series.minutes[i]},{vals}\n")
