"""Black-Scholes pricing, implied-volatility inversion, and parity utilities.

All volatilities here are decimal annualized numbers (0.20 = 20%); rates
and dividend yields are continuously compounded. Every function is pure
and reentrant; the ``*_vec`` variants operate elementwise on arrays and
signal failures with NaN instead of raising, which is what the surface
builder wants when sweeping thousands of cross-sections.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

VOL_FLOOR = 1e-6
VOL_CEIL = 5.0
PRICE_TOL = 1e-10
MAX_ITER = 200

_SQRT_2PI = math.sqrt(2.0 * math.pi)


class PriceOutOfBounds(ValueError):
    """Option price at or outside its no-arbitrage bounds; no vol exists."""


class NoConvergence(RuntimeError):
    """Root search exhausted its iteration budget."""


class ParityDegenerate(ValueError):
    """Put-call parity produced a nonpositive forward term."""


@dataclass(frozen=True)
class BsInputs:
    """Inputs for a single European option valuation."""

    spot: float
    strike: float
    tau: float  # years
    rate: float
    dividend: float
    sigma: float
    right: str  # "call" | "put"

    def __post_init__(self) -> None:
        if self.spot <= 0 or self.strike <= 0:
            raise ValueError("spot and strike must be positive")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if self.right not in ("call", "put"):
            raise ValueError(f"right must be 'call' or 'put', got {self.right!r}")


def _bs_core(spot, strike, tau, rate, dividend, sigma, is_call):
    """Vectorized Black-Scholes price; sigma == 0 falls back to the forward intrinsic."""
    spot = np.asarray(spot, dtype=float)
    strike = np.asarray(strike, dtype=float)
    tau = np.asarray(tau, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    is_call = np.asarray(is_call, dtype=bool)

    df_q = np.exp(-np.asarray(dividend, dtype=float) * tau)
    df_r = np.exp(-np.asarray(rate, dtype=float) * tau)
    fwd = spot * df_q
    disc_k = strike * df_r

    vol = np.where(sigma > 0, sigma, 1.0) * np.sqrt(tau)
    with np.errstate(divide="ignore", invalid="ignore"):
        d1 = (np.log(spot / strike) + (np.asarray(rate) - np.asarray(dividend)) * tau) / vol + 0.5 * vol
    d2 = d1 - vol
    call = fwd * ndtr(d1) - disc_k * ndtr(d2)
    put = disc_k * ndtr(-d2) - fwd * ndtr(-d1)
    price = np.where(is_call, call, put)

    intrinsic = np.where(is_call, np.maximum(fwd - disc_k, 0.0), np.maximum(disc_k - fwd, 0.0))
    price = np.where(sigma > 0, price, intrinsic)
    return np.maximum(price, 0.0)


def _vega_core(spot, strike, tau, rate, dividend, sigma):
    sigma = np.asarray(sigma, dtype=float)
    vol = np.where(sigma > 0, sigma, 1.0) * np.sqrt(tau)
    with np.errstate(divide="ignore", invalid="ignore"):
        d1 = (np.log(spot / strike) + (rate - dividend) * np.asarray(tau, dtype=float)) / vol + 0.5 * vol
    pdf = np.exp(-0.5 * d1 * d1) / _SQRT_2PI
    v = spot * np.exp(-dividend * np.asarray(tau, dtype=float)) * pdf * np.sqrt(tau)
    return np.where(sigma > 0, v, 0.0)


def bs_price(inputs: BsInputs) -> float:
    """European option price under Black-Scholes."""
    return float(
        _bs_core(inputs.spot, inputs.strike, inputs.tau, inputs.rate,
                 inputs.dividend, inputs.sigma, inputs.right == "call")
    )


def bs_price_vec(spot, strike, tau, rate, dividend, sigma, is_call) -> np.ndarray:
    """Elementwise Black-Scholes prices (broadcasting inputs)."""
    return _bs_core(spot, strike, tau, rate, dividend, sigma, is_call)


def no_arb_bounds(spot, strike, tau, rate, dividend, is_call):
    """(lower, upper) European no-arbitrage price bounds."""
    tau = np.asarray(tau, dtype=float)
    fwd = np.asarray(spot, dtype=float) * np.exp(-np.asarray(dividend, dtype=float) * tau)
    disc_k = np.asarray(strike, dtype=float) * np.exp(-np.asarray(rate, dtype=float) * tau)
    lower = np.where(is_call, np.maximum(fwd - disc_k, 0.0), np.maximum(disc_k - fwd, 0.0))
    upper = np.where(is_call, fwd, disc_k)
    return lower, upper


def implied_vol_vec(price, spot, strike, tau, rate, dividend, is_call,
                    max_iter: int = MAX_ITER, sigma0=None) -> np.ndarray:
    """Elementwise implied volatility; NaN where no valid vol exists.

    Bisection-safeguarded Newton on sigma in [VOL_FLOOR, VOL_CEIL]: Newton
    steps use the analytic vega and fall back to bisection whenever they
    would leave the current bracket. Converges to |price error| <= PRICE_TOL
    and |sigma step| <= 1e-11. ``sigma0`` seeds the iteration (e.g. the
    previous minute's vols when sweeping a day).
    """
    price = np.atleast_1d(np.asarray(price, dtype=float))
    spot, strike, tau, is_call = np.broadcast_arrays(
        np.asarray(spot, dtype=float), np.asarray(strike, dtype=float),
        np.asarray(tau, dtype=float), np.asarray(is_call, dtype=bool))
    spot = np.broadcast_to(spot, price.shape).astype(float)
    strike = np.broadcast_to(strike, price.shape).astype(float)
    tau = np.broadcast_to(tau, price.shape).astype(float)
    is_call = np.broadcast_to(is_call, price.shape)

    lower, upper = no_arb_bounds(spot, strike, tau, rate, dividend, is_call)
    ok = (price > lower) & (price < upper) & np.isfinite(price)

    # loop-invariant pieces of the Black-Scholes evaluation
    tau_f = tau
    sqrt_tau = np.sqrt(tau_f)
    df_q = np.exp(-np.asarray(dividend, dtype=float) * tau_f)
    df_r = np.exp(-np.asarray(rate, dtype=float) * tau_f)
    fwd = spot * df_q
    disc_k = strike * df_r
    log_fk = np.log(spot / strike) + (np.asarray(rate) - np.asarray(dividend)) * tau_f

    def price_and_vega(sig):
        vol = sig * sqrt_tau
        with np.errstate(divide="ignore", invalid="ignore"):
            d1 = log_fk / vol + 0.5 * vol
        d2 = d1 - vol
        val = np.where(is_call, fwd * ndtr(d1) - disc_k * ndtr(d2),
                       disc_k * ndtr(-d2) - fwd * ndtr(-d1))
        vega = fwd * np.exp(-0.5 * d1 * d1) / _SQRT_2PI * sqrt_tau
        return val, vega

    lo = np.full(price.shape, VOL_FLOOR)
    hi = np.full(price.shape, VOL_CEIL)
    f_lo = price_and_vega(lo)[0] - price
    f_hi = price_and_vega(hi)[0] - price
    # root must be bracketed inside [VOL_FLOOR, VOL_CEIL]
    ok &= (f_lo <= 0.0) & (f_hi >= 0.0)

    sigma = np.clip(price / spot * _SQRT_2PI / np.sqrt(tau_f), 0.05, 2.0)
    if sigma0 is not None:
        seed = np.broadcast_to(np.asarray(sigma0, dtype=float), price.shape)
        good = np.isfinite(seed) & (seed > VOL_FLOOR) & (seed < VOL_CEIL)
        sigma = np.where(good, seed, sigma)
    sigma = np.where(ok, sigma, np.nan)
    done = ~ok
    f_prev = np.full(price.shape, np.inf)
    for _ in range(max_iter):
        if done.all():
            break
        val, vega = price_and_vega(sigma)
        f = val - price
        above = f > 0.0
        active = ~done
        hi = np.where(active & above, np.minimum(hi, sigma), hi)
        lo = np.where(active & ~above, np.maximum(lo, sigma), lo)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = sigma - f / vega
        # Newton clipped into the bracket; bisect when the last step
        # failed to halve |f| (guarantees progress)
        clipped = np.clip(newton, lo, hi)
        slow = np.abs(f) > 0.5 * np.abs(f_prev)
        nxt = np.where(~np.isfinite(newton) | slow, 0.5 * (lo + hi), clipped)
        converged = (np.abs(f) <= PRICE_TOL) & (np.abs(nxt - sigma) <= 1e-11)
        # keep the iterate where |f| was verified rather than stepping past it
        sigma = np.where(done | converged, sigma, nxt)
        done |= converged
        f_prev = np.where(active, f, f_prev)
    final_f = price_and_vega(sigma)[0] - price
    bad = ok & (np.abs(final_f) > PRICE_TOL)
    sigma = np.where(bad, np.nan, sigma)
    return sigma


def implied_vol(price: float, spot: float, strike: float, tau: float,
                rate: float, dividend: float, right: str) -> float:
    """Black-Scholes implied volatility for one market price.

    Raises PriceOutOfBounds when the price sits at or outside its
    no-arbitrage bounds, NoConvergence when no root exists in
    [VOL_FLOOR, VOL_CEIL] or the iteration cap is hit.
    """
    if right not in ("call", "put"):
        raise ValueError(f"right must be 'call' or 'put', got {right!r}")
    is_call = right == "call"
    lower, upper = no_arb_bounds(spot, strike, tau, rate, dividend, is_call)
    if not (lower < price < upper):
        raise PriceOutOfBounds(
            f"price {price} outside ({float(lower):.6g}, {float(upper):.6g}) for {right}"
        )
    sigma = implied_vol_vec(price, spot, strike, tau, rate, dividend, is_call)
    val = float(sigma[0])
    if not math.isfinite(val):
        raise NoConvergence(f"no implied vol in [{VOL_FLOOR}, {VOL_CEIL}] for price {price}")
    return val


def implied_dividend_yield(call_mid: float, put_mid: float, spot: float,
                           strike: float, tau: float, rate: float) -> float:
    """Dividend yield solved from put-call parity at one strike/maturity.

    q = -(1/tau) * ln((C - P + K e^{-r tau}) / S)
    """
    arg = (call_mid - put_mid + strike * math.exp(-rate * tau)) / spot
    if arg <= 0.0:
        raise ParityDegenerate(f"parity forward term nonpositive ({arg:.6g})")
    return -math.log(arg) / tau


def atm_price_approx(spot: float, sigma: float, tau: float) -> float:
    """At-the-money call value approximation, linear in volatility:
    ``spot * sigma * sqrt(tau / (2 pi))``."""
    if spot <= 0:
        raise ValueError("spot must be positive")
    if sigma < 0 or tau < 0:
        raise ValueError("sigma and tau must be nonnegative")
    return spot * sigma * math.sqrt(tau / (2.0 * math.pi))
