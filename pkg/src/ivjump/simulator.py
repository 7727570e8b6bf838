"""Synthetic minute-level market with a planted, configurable IV jump response.

The underlying log-price follows per-minute Gaussian increments plus
jump arrivals (Poisson, or one scheduled jump per day for the first
``scheduled_jump_days`` days). The IV surface is a static quadratic
smile in (m - 1) shifted by a common level process: after a jump of
sign s the level gains ``-s * (a0 + a1 * (1 - 2^(-t/h)))`` volatility
points, optionally on top of a within-day random-walk noise and a
deterministic opening elevation. Option quotes are Black-Scholes prices
at the truth IV, symmetric half-spread applied afterwards.

Day paths draw from per-day derived seeds, so a run is bit-reproducible
and days can be regenerated independently; price levels chain through
the overnight return (close to 09:31).
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace
from typing import Iterator

import numpy as np

from . import pricing
from .marketdata import (
    SESSION_MINUTES,
    MinuteBar,
    OptionQuote,
    QuoteSlice,
    UnderlyingPanel,
    minute_to_slot,
    serialize_rates,
    serialize_underlying,
    slot_to_minute,
    trading_days,
)

MINUTES_PER_YEAR = 252.0 * SESSION_MINUTES


class ConfigInvalid(ValueError):
    """Simulator configuration violates its invariants."""


@dataclass(frozen=True)
class ResponseParams:
    """Post-jump IV adjustment, in volatility points, for one jump sign."""

    immediate: float = 0.0    # applied within the jump minute
    gradual: float = 0.0      # asymptotic extra adjustment
    half_life: float = 5.0    # minutes to half of the gradual part

    def level(self, minutes_since: float) -> float:
        """Adjustment magnitude ``a0 + a1 * (1 - 2^(-t/h))`` at t >= 0."""
        return self.immediate + self.gradual * (1.0 - 2.0 ** (-minutes_since / self.half_life))


@dataclass(frozen=True)
class SimConfig:
    days: int = 10
    seed: int = 0
    spot0: float = 1000.0
    start_day: str = "2006-01-02"
    diffusion_vol: float = 0.15          # annualized
    jump_intensity: float = 1.0          # expected jumps per day (poisson mode)
    jump_size_mean: float = 0.005        # mean |log jump|
    jump_size_sd: float = 0.001
    smile_level: float = 0.20
    smile_skew: float = -0.08
    smile_curvature: float = 0.40
    response_pos: ResponseParams = ResponseParams()
    response_neg: ResponseParams = ResponseParams()
    rate: float = 0.02
    dividend: float = 0.0
    half_spread: float = 0.0             # price units, symmetric around the model price
    iv_noise: float = 0.0                # per-minute sd of the IV random walk(s) (decimal)
    iv_noise_mode: str = "level"         # "level": one common walk; "regions": independent
                                         # walks for the put / ATM / call moneyness regions
    opening_bump: float = 0.0            # vol points added at the open, decaying
    opening_bump_half_life: float = 10.0
    jump_mode: str = "poisson"           # "poisson" | "scheduled"
    scheduled_jump_days: int = 0         # first n days carry exactly one jump each
    scheduled_slot_lo: int = 0
    scheduled_slot_hi: int = 59
    quote_start: str = "09:31"
    quote_end: str = "16:15"
    moneyness_lo: float = 0.75
    moneyness_hi: float = 1.35
    moneyness_step: float = 0.025
    maturities: tuple[float, ...] = (0.25, 0.50, 0.75)

    def validate(self) -> None:
        if self.days < 1:
            raise ConfigInvalid("days must be >= 1")
        if self.diffusion_vol <= 0:
            raise ConfigInvalid("diffusion_vol must be positive")
        if self.jump_intensity < 0:
            raise ConfigInvalid("jump_intensity must be nonnegative")
        for rp in (self.response_pos, self.response_neg):
            if rp.half_life <= 0:
                raise ConfigInvalid("response half_life must be positive")
        if self.jump_mode not in ("poisson", "scheduled"):
            raise ConfigInvalid(f"unknown jump_mode {self.jump_mode!r}")
        if self.iv_noise_mode not in ("level", "regions"):
            raise ConfigInvalid(f"unknown iv_noise_mode {self.iv_noise_mode!r}")
        if self.scheduled_jump_days > self.days:
            raise ConfigInvalid("scheduled_jump_days exceeds days")
        if not 0 <= self.scheduled_slot_lo <= self.scheduled_slot_hi < SESSION_MINUTES:
            raise ConfigInvalid("scheduled slot range invalid")
        if minute_to_slot(self.quote_end) < minute_to_slot(self.quote_start):
            raise ConfigInvalid("quote window is empty")
        if self.moneyness_hi <= self.moneyness_lo or self.moneyness_step <= 0:
            raise ConfigInvalid("moneyness grid invalid")
        if self.half_spread < 0:
            raise ConfigInvalid("half_spread must be nonnegative")

    @property
    def minute_sd(self) -> float:
        return self.diffusion_vol / math.sqrt(MINUTES_PER_YEAR)

    @property
    def moneyness_grid(self) -> np.ndarray:
        n = int(round((self.moneyness_hi - self.moneyness_lo) / self.moneyness_step)) + 1
        return self.moneyness_lo + self.moneyness_step * np.arange(n)

    def response_for(self, sign: int) -> ResponseParams:
        return self.response_pos if sign > 0 else self.response_neg

    def base_smile(self, m) -> np.ndarray:
        x = np.asarray(m, dtype=float) - 1.0
        return self.smile_level + self.smile_skew * x + self.smile_curvature * x * x


def planted_response(minutes_since: float, sign: int, config: SimConfig) -> float:
    """Planted IV adjustment (vol points) ``t`` minutes after a jump of ``sign``."""
    if minutes_since < 0:
        raise ValueError("minutes_since must be nonnegative")
    rp = config.response_for(sign)
    return -float(sign) * rp.level(minutes_since)


def _region_index(m) -> np.ndarray:
    """0 = OTM-put, 1 = ATM, 2 = OTM-call moneyness region."""
    from .smilepca import ATM_HIGH, ATM_LOW

    m = np.asarray(m, dtype=float)
    return np.where(m < ATM_LOW, 0, np.where(m > ATM_HIGH, 2, 1))


@dataclass(frozen=True)
class TruthJump:
    day: str
    slot: int
    sign: int
    size: float  # log-return contribution


@dataclass
class SimOutput:
    """Simulated market plus the ground truth behind it."""

    config: SimConfig
    days: list[str]
    underlying: UnderlyingPanel
    shift: np.ndarray                    # (n_days, 405) common decimal IV shift
    region_shift: np.ndarray             # (n_days, 405, 3) put/ATM/call extra shift
    jumps: list[TruthJump]

    def day_index(self, day: str) -> int:
        return self.days.index(day)

    def truth_iv(self, day: str, m) -> np.ndarray:
        """Truth IV path (decimal) at fixed moneyness: (405, len(m))."""
        d = self.day_index(day)
        m = np.atleast_1d(np.asarray(m, dtype=float))
        base = self.config.base_smile(m)
        extra = self.region_shift[d][:, _region_index(m)]
        return np.maximum(base[None, :] + self.shift[d][:, None] + extra, 1e-4)

    def truth_atm(self) -> np.ndarray:
        """ATM (m = 1) truth IV paths, (n_days, 405), decimal."""
        atm = self.config.base_smile(1.0) + self.shift + self.region_shift[:, :, 1]
        return np.maximum(atm, 1e-4)

    def truth_bins(self) -> np.ndarray:
        """Truth IV at the smile bin centers, (n_days, 405, 10), decimal."""
        from .surface import BIN_CENTERS
        base = self.config.base_smile(BIN_CENTERS)
        extra = self.region_shift[:, :, _region_index(BIN_CENTERS)]
        return np.maximum(base[None, None, :] + self.shift[:, :, None] + extra, 1e-4)

    def day_quotes(self, day: str) -> dict[int, QuoteSlice]:
        return _day_quotes(self.config, self.day_index(day), self.days,
                           self.underlying.prices, self.shift, self.region_shift)

    def rates(self) -> dict[str, float]:
        return {d: self.config.rate for d in self.days}

    def iter_quotes(self) -> Iterator[OptionQuote]:
        for day in self.days:
            slices = self.day_quotes(day)
            expiries = _expiries(day, self.config.maturities)
            taus = np.array([t for _, t in expiries])
            for slot in sorted(slices):
                sl = slices[slot]
                minute = slot_to_minute(slot)
                for j in range(len(sl)):
                    mat_idx = int(np.argmin(np.abs(taus - sl.tau[j])))
                    yield OptionQuote(
                        day=day, minute=minute, expiry=expiries[mat_idx][0],
                        strike=float(sl.strike[j]),
                        right="call" if sl.is_call[j] else "put",
                        bid=float(sl.bid[j]), ask=float(sl.ask[j]),
                    )

    def write(self, outdir: str) -> dict[str, str]:
        """Write underlying/quotes/rates/truth files; returns their paths."""
        os.makedirs(outdir, exist_ok=True)
        paths = {
            "underlying": os.path.join(outdir, "underlying.csv"),
            "quotes": os.path.join(outdir, "quotes.csv"),
            "rates": os.path.join(outdir, "rates.csv"),
            "truth": os.path.join(outdir, "truth.csv"),
        }
        serialize_underlying(self.underlying.to_bars(), paths["underlying"])
        from .marketdata import serialize_option_quotes
        serialize_option_quotes(self.iter_quotes(), paths["quotes"])
        serialize_rates(self.rates(), paths["rates"])
        with open(paths["truth"], "w", encoding="utf-8") as fh:
            fh.write("day,minute,sign,a0,a1,h\n")
            for j in self.jumps:
                rp = self.config.response_for(j.sign)
                fh.write(f"{j.day},{slot_to_minute(j.slot)},{j.sign},"
                         f"{rp.immediate:.12g},{rp.gradual:.12g},{rp.half_life:.12g}\n")
        return paths


def _day_rng(config: SimConfig, day_index: int) -> np.random.Generator:
    return np.random.default_rng((config.seed, day_index))


def _day_randomness(config: SimConfig, day_index: int):
    """Increments, jump list, and IV noise walk for one day (seeded)."""
    rng = _day_rng(config, day_index)
    incr = rng.normal(0.0, config.minute_sd, SESSION_MINUTES)
    if day_index == 0:
        incr[0] = 0.0  # the first day opens exactly at spot0

    jumps: list[tuple[int, int, float]] = []  # (slot, sign, log size)
    if config.jump_mode == "poisson":
        counts = rng.poisson(config.jump_intensity / SESSION_MINUTES, SESSION_MINUTES)
        for slot in np.flatnonzero(counts):
            for _ in range(int(counts[slot])):
                sign = 1 if rng.random() < 0.5 else -1
                size = abs(rng.normal(config.jump_size_mean, config.jump_size_sd))
                jumps.append((int(slot), sign, sign * size))
    else:
        if day_index < config.scheduled_jump_days:
            slot = int(rng.integers(config.scheduled_slot_lo, config.scheduled_slot_hi + 1))
            sign = 1 if rng.random() < 0.5 else -1
            size = abs(rng.normal(config.jump_size_mean, config.jump_size_sd))
            jumps.append((slot, sign, sign * size))

    level_noise = np.zeros(SESSION_MINUTES)
    region_noise = np.zeros((SESSION_MINUTES, 3))
    if config.iv_noise > 0:
        if config.iv_noise_mode == "level":
            level_noise = np.cumsum(rng.normal(0.0, config.iv_noise, SESSION_MINUTES))
        else:
            region_noise = np.cumsum(
                rng.normal(0.0, config.iv_noise, (SESSION_MINUTES, 3)), axis=0)
    return incr, jumps, level_noise, region_noise


def _day_shift(config: SimConfig, jumps: list[tuple[int, int, float]],
               level_noise: np.ndarray) -> np.ndarray:
    """Common decimal IV shift path (jump responses, opening bump, level noise)."""
    shift = level_noise.copy()
    if config.opening_bump != 0.0:
        t = np.arange(SESSION_MINUTES, dtype=float)
        shift = shift + config.opening_bump / 100.0 * 2.0 ** (-t / config.opening_bump_half_life)
    for slot, sign, _size in jumps:
        t = np.arange(SESSION_MINUTES - slot, dtype=float)
        rp = config.response_for(sign)
        shift[slot:] += -sign * rp.level(t) / 100.0
    return shift


def _expiries(day: str, maturities: tuple[float, ...]) -> list[tuple[str, float]]:
    """(expiry date, year fraction) per maturity; chosen so the year
    fraction is never below its nominal label."""
    import datetime as dt

    d0 = dt.date.fromisoformat(day)
    out = []
    for tau in maturities:
        days_out = math.ceil(tau * 365.0)
        out.append(((d0 + dt.timedelta(days=days_out)).isoformat(), days_out / 365.0))
    return out


def _day_quotes(config: SimConfig, day_index: int, days: list[str],
                prices: np.ndarray, shift: np.ndarray,
                region_shift: np.ndarray) -> dict[int, QuoteSlice]:
    day = days[day_index]
    expiries = _expiries(day, config.maturities)
    taus = np.array([t for _, t in expiries])
    grid = config.moneyness_grid
    strikes = grid * prices[day_index, 0]
    n_m, n_t = strikes.size, taus.size

    strike_col = np.tile(np.repeat(strikes, n_t), 2)
    tau_col = np.tile(np.tile(taus, n_m), 2)
    is_call_col = np.repeat([True, False], n_m * n_t)

    lo = minute_to_slot(config.quote_start)
    hi = minute_to_slot(config.quote_end)
    out: dict[int, QuoteSlice] = {}
    for slot in range(lo, hi + 1):
        spot = prices[day_index, slot]
        if not np.isfinite(spot):
            continue
        m_now = strike_col / spot
        extra = region_shift[day_index, slot, _region_index(m_now)]
        iv = np.maximum(config.base_smile(m_now) + shift[day_index, slot] + extra, 1e-4)
        mid = pricing.bs_price_vec(spot, strike_col, tau_col, config.rate,
                                   config.dividend, iv, is_call_col)
        out[slot] = QuoteSlice(
            strike=strike_col, tau=tau_col, is_call=is_call_col,
            bid=np.maximum(mid - config.half_spread, 0.0),
            ask=mid + config.half_spread,
        )
    return out


def simulate_market(config: SimConfig) -> SimOutput:
    """Generate the full synthetic market for a configuration."""
    config.validate()
    days = trading_days(config.start_day, config.days)
    prices = np.empty((config.days, SESSION_MINUTES))
    shift = np.empty((config.days, SESSION_MINUTES))
    region_shift = np.empty((config.days, SESSION_MINUTES, 3))
    jumps: list[TruthJump] = []

    log_close = math.log(config.spot0)
    for d in range(config.days):
        incr, day_jumps, level_noise, region_noise = _day_randomness(config, d)
        steps = incr.copy()
        for slot, _sign, size in day_jumps:
            steps[slot] += size
        logp = log_close + np.cumsum(steps)
        prices[d] = np.exp(logp)
        log_close = logp[-1]
        shift[d] = _day_shift(config, day_jumps, level_noise)
        region_shift[d] = region_noise
        for slot, sign, size in day_jumps:
            jumps.append(TruthJump(day=days[d], slot=slot, sign=sign, size=size))

    panel = UnderlyingPanel(days=list(days), prices=prices)
    return SimOutput(config=config, days=list(days), underlying=panel,
                     shift=shift, region_shift=region_shift, jumps=jumps)
