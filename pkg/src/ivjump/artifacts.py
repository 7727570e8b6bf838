"""Comma-separated artifact files exchanged between CLI stages.

Every writer renders floats at 12 significant digits and emits rows in a
deterministic order, so re-running a stage on unchanged inputs rewrites
byte-identical files.
"""

from __future__ import annotations

import numpy as np

from .config import PipelineSettings
from .marketdata import SESSION_MINUTES, minute_to_slot, slot_to_minute
from .pipeline import SurfaceSeries, VariableKey
from .surface import BIN_LOWER, MATURITY_LABELS, N_BINS


def write_smiles(surf: SurfaceSeries, path: str) -> None:
    """``day,minute,maturity,bin_lo,iv``; missing samples are simply absent."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("day,minute,maturity,bin_lo,iv\n")
        for d, day in enumerate(surf.days):
            for slot in range(surf.start_slot, surf.end_slot + 1):
                minute = slot_to_minute(slot)
                for mat, _tau in MATURITY_LABELS:
                    row = surf.bins[mat][d, slot]
                    if not np.all(np.isfinite(row)):
                        continue
                    for b in range(N_BINS):
                        fh.write(f"{day},{minute},{mat},{BIN_LOWER[b]:.2f},{row[b]:.12g}\n")


def write_atm(surf: SurfaceSeries, path: str) -> None:
    """``day,minute,maturity,iv`` ATM levels (decimal)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("day,minute,maturity,iv\n")
        for d, day in enumerate(surf.days):
            for slot in range(surf.start_slot, surf.end_slot + 1):
                minute = slot_to_minute(slot)
                for mat, _tau in MATURITY_LABELS:
                    v = surf.atm[mat][d, slot]
                    if np.isfinite(v):
                        fh.write(f"{day},{minute},{mat},{v:.12g}\n")


def read_surface_series(smiles_path: str, atm_path: str, days: list[str],
                        settings: PipelineSettings) -> SurfaceSeries:
    index = {d: i for i, d in enumerate(days)}
    bins = {mat: np.full((len(days), SESSION_MINUTES, N_BINS), np.nan)
            for mat, _ in MATURITY_LABELS}
    atm = {mat: np.full((len(days), SESSION_MINUTES), np.nan) for mat, _ in MATURITY_LABELS}
    bin_pos = {f"{lo:.2f}": i for i, lo in enumerate(BIN_LOWER)}

    with open(smiles_path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != "day,minute,maturity,bin_lo,iv":
            raise ValueError(f"{smiles_path}: unexpected header {header!r}")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            day, minute, mat, bin_lo, iv = line.split(",")
            if day not in index:
                continue
            bins[mat][index[day], minute_to_slot(minute), bin_pos[bin_lo]] = float(iv)
    with open(atm_path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != "day,minute,maturity,iv":
            raise ValueError(f"{atm_path}: unexpected header {header!r}")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            day, minute, mat, iv = line.split(",")
            if day not in index:
                continue
            atm[mat][index[day], minute_to_slot(minute)] = float(iv)
    return SurfaceSeries(days=list(days), start_slot=settings.surface_start_slot,
                         end_slot=settings.surface_end_slot, bins=bins, atm=atm)


def write_variables(variables: dict[VariableKey, np.ndarray], days: list[str],
                    path: str) -> None:
    """``day,minute,variable,maturity,value`` deseasonalized changes (vol points)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("day,minute,variable,maturity,value\n")
        for (var, mat) in sorted(variables):
            series = variables[(var, mat)]
            for d, day in enumerate(days):
                finite = np.flatnonzero(np.isfinite(series[d]))
                for slot in finite:
                    fh.write(f"{day},{slot_to_minute(int(slot))},{var},{mat},"
                             f"{series[d, slot]:.12g}\n")


def read_variables(path: str, days: list[str]) -> dict[VariableKey, np.ndarray]:
    index = {d: i for i, d in enumerate(days)}
    out: dict[VariableKey, np.ndarray] = {}
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != "day,minute,variable,maturity,value":
            raise ValueError(f"{path}: unexpected header {header!r}")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            day, minute, var, mat, value = line.split(",")
            if day not in index:
                continue
            key = (var, mat)
            if key not in out:
                out[key] = np.full((len(days), SESSION_MINUTES), np.nan)
            out[key][index[day], minute_to_slot(minute)] = float(value)
    return out
