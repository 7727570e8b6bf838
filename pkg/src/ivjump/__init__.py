"""Intraday option analytics: implied-volatility surfaces, underlying
return-jump detection, smile PCA, and post-jump event studies, validated
end-to-end against a built-in synthetic market simulator."""

__version__ = "0.1.0"

from . import (  # noqa: F401
    artifacts,
    charts,
    config,
    eventstudy,
    jumps,
    marketdata,
    pipeline,
    pricing,
    simulator,
    smilepca,
    surface,
)
