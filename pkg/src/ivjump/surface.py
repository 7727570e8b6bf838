"""Per-minute implied-volatility surfaces over (moneyness, maturity).

A cross-section of OTM/ATM quotes is inverted to an IV point cloud, a
thin-plate spline is fitted over standardized (moneyness, maturity)
coordinates, and fixed-maturity smiles are read off the surface as
binned averages on the moneyness range [0.80, 1.30).

IVs here are decimal (0.20 = 20%). Fitting and evaluation are pure;
a fitted TpsModel must be treated as immutable and can be shared
across workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from . import pricing
from .marketdata import OptionQuote, year_fraction

MONEYNESS_LO = 0.80
MONEYNESS_HI = 1.30
N_BINS = 10
BIN_WIDTH = 0.05
BIN_LOWER = np.round(MONEYNESS_LO + BIN_WIDTH * np.arange(N_BINS), 2)
BIN_CENTERS = np.round(BIN_LOWER + BIN_WIDTH / 2, 3)
# width-0.01 sub-grid strictly inside each bin
_BIN_OFFSETS = np.array([0.005, 0.015, 0.025, 0.035, 0.045])

MATURITY_LABELS = (("3m", 0.25), ("6m", 0.50), ("9m", 0.75))

ATM_BAND = 0.005          # put/call overlap half-width around m = 1
MIN_POINTS = 12
MIN_MATURITIES = 3
DEFAULT_LAMBDA = 1e-6
HULL_EXPANSION = 1.05     # eval guard: hull scaled 5% about its centroid


class EmptyCrossSection(ValueError):
    """Too few usable quotes to fit a surface for this minute."""


class SingularSystem(ValueError):
    """Degenerate knot geometry (collinear or duplicated after merging)."""


class ExtrapolationOutOfRange(ValueError):
    """Evaluation point outside the expanded convex hull of the knots."""


@dataclass(frozen=True)
class IvPoint:
    m: float
    tau: float
    iv: float


@dataclass
class IvCloud:
    """Columnar IV point cloud plus the count of quotes dropped on inversion."""

    m: np.ndarray
    tau: np.ndarray
    iv: np.ndarray
    dropped: int = 0
    index: np.ndarray | None = None   # positions of retained points in the input

    def __len__(self) -> int:
        return self.m.size

    def points(self) -> list[IvPoint]:
        return [IvPoint(float(a), float(b), float(c))
                for a, b, c in zip(self.m, self.tau, self.iv)]


@dataclass
class TpsModel:
    """Fitted thin-plate spline; treat as immutable after construction."""

    centers: np.ndarray        # (n, 2) raw (m, tau) knots
    weights: np.ndarray        # (n,) radial weights
    affine: np.ndarray         # (3,) intercept + slopes in scaled coordinates
    lam: float
    m_offset: float
    m_scale: float
    tau_offset: float
    tau_scale: float
    hull_eqs: np.ndarray = field(repr=False)      # (f, 3) facet inequalities, scaled coords
    hull_centroid: np.ndarray = field(repr=False)  # (2,) scaled coords
    centers_scaled: np.ndarray = field(repr=False)

    def scale_xy(self, m, tau) -> np.ndarray:
        m = np.asarray(m, dtype=float)
        tau = np.asarray(tau, dtype=float)
        return np.column_stack([(m - self.m_offset) / self.m_scale,
                                (tau - self.tau_offset) / self.tau_scale])


@dataclass
class SmileSample:
    """Binned smile for one (minute, maturity); ``bins is None`` marks it missing."""

    day: str
    minute: str
    label: str
    tau: float
    bins: np.ndarray | None

    @property
    def missing(self) -> bool:
        return self.bins is None


def iv_points_from_arrays(m, tau, is_call, mid, spot, rate, dividend,
                          sigma0=None) -> IvCloud:
    """Invert a columnar quote cross-section to IV points.

    Puts contribute at m <= 1 + ATM_BAND, calls at m >= 1 - ATM_BAND
    (in-the-money-only quotes are excluded). Quotes whose mid cannot be
    inverted are dropped and counted. ``sigma0`` optionally seeds the
    root search (aligned with the unfiltered inputs).
    """
    m = np.asarray(m, dtype=float)
    tau = np.asarray(tau, dtype=float)
    is_call = np.asarray(is_call, dtype=bool)
    mid = np.asarray(mid, dtype=float)
    dividend = np.broadcast_to(np.asarray(dividend, dtype=float), m.shape)

    keep = np.where(is_call, m >= 1.0 - ATM_BAND, m <= 1.0 + ATM_BAND)
    m, tau, is_call, mid = m[keep], tau[keep], is_call[keep], mid[keep]
    dividend = dividend[keep]
    if sigma0 is not None:
        sigma0 = np.broadcast_to(np.asarray(sigma0, dtype=float), keep.shape)[keep]

    strike = m * spot
    iv = pricing.implied_vol_vec(mid, spot, strike, tau, rate, dividend, is_call,
                                 sigma0=sigma0)
    good = np.isfinite(iv) & (iv > 0) & (iv < 5.0)
    dropped = int((~good).sum())
    cloud = IvCloud(m=m[good], tau=tau[good], iv=iv[good], dropped=dropped,
                    index=np.flatnonzero(keep)[good])

    if len(cloud) < MIN_POINTS or np.unique(cloud.tau).size < MIN_MATURITIES:
        raise EmptyCrossSection(
            f"{len(cloud)} usable points / {np.unique(cloud.tau).size} maturities "
            f"(need >= {MIN_POINTS} and >= {MIN_MATURITIES})"
        )
    return cloud


def iv_points(quotes: Sequence[OptionQuote], spot: float, rate: float,
              dividend: float) -> IvCloud:
    """Invert one minute's option quotes (all sharing a timestamp) to IV points."""
    if not quotes:
        raise EmptyCrossSection("no quotes at this minute")
    stamp = (quotes[0].day, quotes[0].minute)
    if any((q.day, q.minute) != stamp for q in quotes):
        raise ValueError("quotes must share one timestamp")
    m = np.array([q.strike / spot for q in quotes])
    tau = np.array([year_fraction(q.day, q.expiry) for q in quotes])
    is_call = np.array([q.right == "call" for q in quotes])
    mid = np.array([q.mid for q in quotes])
    return iv_points_from_arrays(m, tau, is_call, mid, spot, rate, dividend)


def _as_arrays(points) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if isinstance(points, IvCloud):
        return points.m, points.tau, points.iv
    pts = list(points)
    m = np.array([p.m for p in pts], dtype=float)
    tau = np.array([p.tau for p in pts], dtype=float)
    iv = np.array([p.iv for p in pts], dtype=float)
    return m, tau, iv


def _tps_kernel(r2: np.ndarray) -> np.ndarray:
    """phi(r) = r^2 log r, evaluated from squared distances (phi(0) = 0)."""
    out = np.zeros_like(r2)
    nz = r2 > 0
    out[nz] = 0.5 * r2[nz] * np.log(r2[nz])
    return out


def fit_surface(points, lam: float = DEFAULT_LAMBDA) -> TpsModel:
    """Fit a smoothing thin-plate spline to scattered IV points.

    Coordinates are standardized to unit range before the radial kernel
    is applied, which keeps the anisotropic (m, tau) axes comparable.
    Coincident (m, tau) knots are merged by averaging their IVs. With
    lam = 0 the spline interpolates the knots; larger lam trades fit for
    smoothness through the usual augmented linear system.
    """
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    m, tau, iv = _as_arrays(points)
    if m.size < MIN_POINTS:
        raise ValueError(f"need at least {MIN_POINTS} points, got {m.size}")

    # merge coincident knots (exact coordinate equality) by averaging
    order = np.lexsort((tau, m))
    m, tau, iv = m[order], tau[order], iv[order]
    dup = (np.diff(m) == 0) & (np.diff(tau) == 0)
    if dup.any():
        starts = np.concatenate([[True], ~dup])
        gid = np.cumsum(starts) - 1
        iv = np.bincount(gid, weights=iv) / np.bincount(gid)
        keep_idx = np.flatnonzero(starts)
        m, tau = m[keep_idx], tau[keep_idx]

    n = m.size
    m_offset, m_range = float(m.min()), float(np.ptp(m))
    tau_offset, tau_range = float(tau.min()), float(np.ptp(tau))
    if m_range <= 0 or tau_range <= 0:
        raise SingularSystem("knots are collinear along a coordinate axis")

    xs = (m - m_offset) / m_range
    ys = (tau - tau_offset) / tau_range
    xy = np.column_stack([xs, ys])

    p_mat = np.column_stack([np.ones(n), xs, ys])
    if np.linalg.matrix_rank(p_mat) < 3:
        raise SingularSystem("knots are collinear in (m, tau)")

    d2 = ((xy[:, None, :] - xy[None, :, :]) ** 2).sum(axis=2)
    k_mat = _tps_kernel(d2)
    a_mat = np.zeros((n + 3, n + 3))
    a_mat[:n, :n] = k_mat + lam * np.eye(n)
    a_mat[:n, n:] = p_mat
    a_mat[n:, :n] = p_mat.T
    rhs = np.concatenate([iv, np.zeros(3)])
    try:
        sol = np.linalg.solve(a_mat, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc

    weights = sol[:n]
    affine = sol[n:]
    side = p_mat.T @ weights
    if not np.all(np.abs(side) <= 1e-9 * max(1.0, float(np.abs(weights).sum()))):
        raise SingularSystem("side conditions violated; system is numerically singular")

    try:
        hull = ConvexHull(xy)
        hull_eqs = hull.equations.copy()
    except QhullError as exc:
        raise SingularSystem(f"degenerate knot geometry: {exc}") from exc
    centroid = xy.mean(axis=0)

    return TpsModel(
        centers=np.column_stack([m, tau]), weights=weights, affine=affine, lam=lam,
        m_offset=m_offset, m_scale=m_range, tau_offset=tau_offset, tau_scale=tau_range,
        hull_eqs=hull_eqs, hull_centroid=centroid, centers_scaled=xy,
    )


def _inside_expanded_hull(model: TpsModel, xy: np.ndarray) -> np.ndarray:
    # shrink query points toward the hull centroid by the expansion factor,
    # then test the original facet inequalities A x + b <= 0
    shrunk = model.hull_centroid + (xy - model.hull_centroid) / HULL_EXPANSION
    vals = shrunk @ model.hull_eqs[:, :2].T + model.hull_eqs[:, 2]
    return np.all(vals <= 1e-9, axis=1)


def _eval_scaled(model: TpsModel, xy: np.ndarray) -> np.ndarray:
    d2 = ((xy[:, None, :] - model.centers_scaled[None, :, :]) ** 2).sum(axis=2)
    vals = _tps_kernel(d2) @ model.weights
    vals += model.affine[0] + model.affine[1] * xy[:, 0] + model.affine[2] * xy[:, 1]
    return vals


def eval_surface(model: TpsModel, m: float, tau: float) -> float:
    """Evaluate the fitted surface at one (moneyness, maturity) point."""
    xy = model.scale_xy([m], [tau])
    if not _inside_expanded_hull(model, xy)[0]:
        raise ExtrapolationOutOfRange(f"({m}, {tau}) outside fitted region")
    return float(_eval_scaled(model, xy)[0])


def eval_surface_many(model: TpsModel, m, tau) -> np.ndarray:
    """Vector evaluation; raises if any point falls outside the fitted region."""
    xy = model.scale_xy(m, tau)
    inside = _inside_expanded_hull(model, xy)
    if not inside.all():
        bad = int(np.flatnonzero(~inside)[0])
        raise ExtrapolationOutOfRange(
            f"({float(np.asarray(m).ravel()[bad])}, {float(np.asarray(tau).ravel()[bad])}) "
            "outside fitted region"
        )
    return _eval_scaled(model, xy)


_GRID_M = (BIN_LOWER[:, None] + _BIN_OFFSETS[None, :]).ravel()
_READOUT_M = np.concatenate([np.append(_GRID_M, 1.0) for _ in MATURITY_LABELS])
_READOUT_TAU = np.concatenate([np.full(_GRID_M.size + 1, tau) for _, tau in MATURITY_LABELS])


def smile_readout(model: TpsModel, day: str = "", minute: str = "",
                  ) -> tuple[list[SmileSample], dict[str, float]]:
    """Binned smiles and ATM levels for all maturities in one evaluation.

    Each bin value is the mean of the surface over the five width-0.01
    grid midpoints strictly inside the bin. A maturity whose grid leaves
    the fitted region yields a missing sample (and NaN ATM) rather than
    an error.
    """
    xy = model.scale_xy(_READOUT_M, _READOUT_TAU)
    inside = _inside_expanded_hull(model, xy)
    vals = _eval_scaled(model, xy)
    per_mat = _GRID_M.size + 1
    samples: list[SmileSample] = []
    levels: dict[str, float] = {}
    for k, (label, tau) in enumerate(MATURITY_LABELS):
        sl = slice(k * per_mat, (k + 1) * per_mat)
        v = vals[sl]
        ok = inside[sl]
        if ok[:-1].all():
            bins = v[:-1].reshape(N_BINS, _BIN_OFFSETS.size).mean(axis=1)
            if not np.all(np.isfinite(bins) & (bins > 0)):
                bins = None
        else:
            bins = None
        samples.append(SmileSample(day=day, minute=minute, label=label, tau=tau, bins=bins))
        levels[label] = float(v[-1]) if ok[-1] else math.nan
    return samples, levels


def extract_smiles(model: TpsModel, day: str = "", minute: str = "") -> list[SmileSample]:
    """Read the 3-, 6-, and 9-month binned smiles off a fitted surface."""
    return smile_readout(model, day, minute)[0]


def atm_levels(model: TpsModel) -> dict[str, float]:
    """Surface value at m = 1 for each labelled maturity (NaN when out of range)."""
    return smile_readout(model)[1]
