"""Minute-level market data: file formats, validation, and session alignment.

Three comma-separated text formats are supported (UTF-8, ``.`` decimal
separator, mandatory header row):

* underlying bars   ``date,minute,price``
* option quotes     ``date,minute,expiry,strike,right,bid,ask``
* daily rates       ``date,rate``

Dates are ISO ``YYYY-MM-DD`` and minutes are ``HH:MM`` exchange time.
The trading session runs 09:31 through 16:15 inclusive (405 minutes).
Missing minutes are represented as gaps, never forward-filled; the
day-exclusion rules downstream consume gap information directly.
"""

from __future__ import annotations

import datetime as _dt
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

SESSION_START = "09:31"
SESSION_END = "16:15"
_START_MIN_OF_DAY = 9 * 60 + 31
_END_MIN_OF_DAY = 16 * 60 + 15
SESSION_MINUTES = _END_MIN_OF_DAY - _START_MIN_OF_DAY + 1  # 405


class ParseError(ValueError):
    """A data file violated its format or a row-level invariant."""


def minute_to_slot(minute: str) -> int:
    """Map ``HH:MM`` to a 0-based session slot (09:31 -> 0, 16:15 -> 404)."""
    try:
        hh, mm = minute.split(":")
        mod = int(hh) * 60 + int(mm)
    except ValueError as exc:
        raise ParseError(f"bad minute {minute!r}") from exc
    slot = mod - _START_MIN_OF_DAY
    if not 0 <= slot < SESSION_MINUTES:
        raise ParseError(f"minute {minute!r} outside session {SESSION_START}..{SESSION_END}")
    return slot


def slot_to_minute(slot: int) -> str:
    if not 0 <= slot < SESSION_MINUTES:
        raise ValueError(f"slot {slot} outside session")
    mod = _START_MIN_OF_DAY + slot
    return f"{mod // 60:02d}:{mod % 60:02d}"


def session_grid(day: str) -> "SessionGrid":
    """Full minute grid for a trading day (405 stamps, 09:31..16:15)."""
    return SessionGrid(day=day, minutes=tuple(slot_to_minute(s) for s in range(SESSION_MINUTES)))


@dataclass(frozen=True)
class SessionGrid:
    day: str
    minutes: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.minutes)


@dataclass(frozen=True, slots=True)
class MinuteBar:
    """One minute-stamped observation of the underlying index level."""

    day: str
    minute: str
    price: float


@dataclass(frozen=True, slots=True)
class OptionQuote:
    """One minute-stamped option quote."""

    day: str
    minute: str
    expiry: str
    strike: float
    right: str  # "call" | "put"
    bid: float
    ask: float

    @property
    def mid(self) -> float:
        return 0.5 * (self.bid + self.ask)


def _parse_date(token: str, where: str) -> str:
    try:
        _dt.date.fromisoformat(token)
    except ValueError as exc:
        raise ParseError(f"{where}: bad date {token!r}") from exc
    return token


def _fmt(x: float) -> str:
    """Canonical float rendering: 12 significant digits."""
    return f"{x:.12g}"


def parse_underlying(path: str) -> list[MinuteBar]:
    """Load underlying minute bars, rejecting invalid rows by line number.

    Rows must be in non-decreasing file order within each day; duplicated
    or backward minutes are errors. Output is sorted by (day, minute).
    """
    bars: list[MinuteBar] = []
    last_slot: dict[str, int] = {}
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != "date,minute,price":
            raise ParseError(f"{path}: expected header 'date,minute,price', got {header!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise ParseError(f"{path}:{lineno}: expected 3 fields, got {len(parts)}")
            day = _parse_date(parts[0], f"{path}:{lineno}")
            try:
                slot = minute_to_slot(parts[1])
            except ParseError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
            try:
                price = float(parts[2])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: bad price {parts[2]!r}") from None
            if not math.isfinite(price) or price <= 0.0:
                raise ParseError(f"{path}:{lineno}: nonpositive price {parts[2]}")
            prev = last_slot.get(day)
            if prev is not None:
                if slot == prev:
                    raise ParseError(f"{path}:{lineno}: duplicate timestamp {day} {parts[1]}")
                if slot < prev:
                    raise ParseError(f"{path}:{lineno}: non-monotone timestamp {day} {parts[1]}")
            last_slot[day] = slot
            bars.append(MinuteBar(day=day, minute=parts[1], price=price))
    bars.sort(key=lambda b: (b.day, b.minute))
    return bars


def serialize_underlying(bars: Iterable[MinuteBar], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("date,minute,price\n")
        for b in bars:
            fh.write(f"{b.day},{b.minute},{_fmt(b.price)}\n")


_RIGHTS = {"call": "call", "put": "put"}


def parse_option_quotes(path: str) -> list[OptionQuote]:
    """Load option quotes; crossed quotes and stale expiries are rejected."""
    quotes: list[OptionQuote] = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != "date,minute,expiry,strike,right,bid,ask":
            raise ParseError(
                f"{path}: expected header 'date,minute,expiry,strike,right,bid,ask', got {header!r}"
            )
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 7:
                raise ParseError(f"{path}:{lineno}: expected 7 fields, got {len(parts)}")
            day = _parse_date(parts[0], f"{path}:{lineno}")
            try:
                minute_to_slot(parts[1])
            except ParseError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
            expiry = _parse_date(parts[2], f"{path}:{lineno}")
            if expiry <= day:
                raise ParseError(f"{path}:{lineno}: expiry {expiry} on/before quote date {day}")
            right = _RIGHTS.get(parts[4].lower())
            if right is None:
                raise ParseError(f"{path}:{lineno}: unknown right {parts[4]!r}")
            try:
                strike = float(parts[3])
                bid = float(parts[5])
                ask = float(parts[6])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: bad numeric field") from None
            if strike <= 0:
                raise ParseError(f"{path}:{lineno}: nonpositive strike")
            if bid < 0 or not math.isfinite(bid) or not math.isfinite(ask):
                raise ParseError(f"{path}:{lineno}: bad bid/ask")
            if bid > ask:
                raise ParseError(f"{path}:{lineno}: crossed quote bid={parts[5]} ask={parts[6]}")
            quotes.append(
                OptionQuote(day=day, minute=parts[1], expiry=expiry, strike=strike,
                            right=right, bid=bid, ask=ask)
            )
    return quotes


def serialize_option_quotes(quotes: Iterable[OptionQuote], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("date,minute,expiry,strike,right,bid,ask\n")
        for q in quotes:
            fh.write(
                f"{q.day},{q.minute},{q.expiry},{_fmt(q.strike)},{q.right},"
                f"{_fmt(q.bid)},{_fmt(q.ask)}\n"
            )


def group_quotes(quotes: Iterable[OptionQuote]) -> dict[tuple[str, str], list[OptionQuote]]:
    """Group quotes by (day, minute) preserving input order."""
    grouped: dict[tuple[str, str], list[OptionQuote]] = {}
    for q in quotes:
        grouped.setdefault((q.day, q.minute), []).append(q)
    return grouped


def parse_rates(path: str) -> dict[str, float]:
    """Load the daily continuously-compounded rate curve (``date,rate``)."""
    rates: dict[str, float] = {}
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != "date,rate":
            raise ParseError(f"{path}: expected header 'date,rate', got {header!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise ParseError(f"{path}:{lineno}: expected 2 fields, got {len(parts)}")
            day = _parse_date(parts[0], f"{path}:{lineno}")
            try:
                rate = float(parts[1])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: bad rate {parts[1]!r}") from None
            if day in rates:
                raise ParseError(f"{path}:{lineno}: duplicate rate for {day}")
            rates[day] = rate
    return rates


def serialize_rates(rates: dict[str, float], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("date,rate\n")
        for day in sorted(rates):
            fh.write(f"{day},{_fmt(rates[day])}\n")


def year_fraction(day: str, expiry: str) -> float:
    """Calendar-day count over 365 between a quote date and its expiry."""
    d0 = _dt.date.fromisoformat(day)
    d1 = _dt.date.fromisoformat(expiry)
    return (d1 - d0).days / 365.0


@dataclass
class QuoteSlice:
    """Columnar option cross-section for one (day, minute)."""

    strike: np.ndarray
    tau: np.ndarray
    is_call: np.ndarray
    bid: np.ndarray
    ask: np.ndarray

    @property
    def mid(self) -> np.ndarray:
        return 0.5 * (self.bid + self.ask)

    def __len__(self) -> int:
        return self.strike.size


def quotes_to_slices(quotes: Iterable[OptionQuote]) -> dict[tuple[str, int], QuoteSlice]:
    """Reshape parsed quotes into per-(day, slot) columnar cross-sections."""
    grouped = group_quotes(quotes)
    out: dict[tuple[str, int], QuoteSlice] = {}
    for (day, minute), qs in grouped.items():
        out[(day, minute_to_slot(minute))] = QuoteSlice(
            strike=np.array([q.strike for q in qs]),
            tau=np.array([year_fraction(q.day, q.expiry) for q in qs]),
            is_call=np.array([q.right == "call" for q in qs]),
            bid=np.array([q.bid for q in qs]),
            ask=np.array([q.ask for q in qs]),
        )
    return out


def trading_days(start_day: str, count: int) -> list[str]:
    """``count`` consecutive weekdays starting at (or after) ``start_day``."""
    day = _dt.date.fromisoformat(start_day)
    out: list[str] = []
    while len(out) < count:
        if day.weekday() < 5:
            out.append(day.isoformat())
        day += _dt.timedelta(days=1)
    return out


@dataclass
class UnderlyingPanel:
    """Session-aligned price matrix, one row per day, NaN where minutes are missing."""

    days: list[str]
    prices: np.ndarray  # (n_days, SESSION_MINUTES)

    @classmethod
    def from_bars(cls, bars: Sequence[MinuteBar]) -> "UnderlyingPanel":
        days = sorted({b.day for b in bars})
        index = {d: i for i, d in enumerate(days)}
        prices = np.full((len(days), SESSION_MINUTES), np.nan)
        for b in bars:
            prices[index[b.day], minute_to_slot(b.minute)] = b.price
        return cls(days=days, prices=prices)

    def to_bars(self) -> list[MinuteBar]:
        out: list[MinuteBar] = []
        for i, day in enumerate(self.days):
            row = self.prices[i]
            for slot in np.flatnonzero(np.isfinite(row)):
                out.append(MinuteBar(day=day, minute=slot_to_minute(int(slot)), price=float(row[slot])))
        return out

    def missing_minutes(self, day: str) -> list[str]:
        row = self.prices[self.days.index(day)]
        return [slot_to_minute(int(s)) for s in np.flatnonzero(~np.isfinite(row))]
