"""Run configuration: analysis settings, simulator settings, and the
plain ``key = value`` file format used by the CLI.

Unknown keys are rejected so typos fail loudly. ``IVJUMP_SEED`` in the
environment overrides every configured seed (simulation, reference
draws, bootstrap, robustness) for reproducible CI runs.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace

from .jumps import DEFAULT_ALPHA, DEFAULT_CUTOFF, DEFAULT_WINDOW
from .marketdata import minute_to_slot
from .simulator import ResponseParams, SimConfig

MATURITY_NAMES = ("3m", "6m", "9m")
VARIABLE_NAMES = ("ATM-IV", "ATM-PC", "OTM-Call-PC", "OTM-Put-PC")


@dataclass(frozen=True)
class PipelineSettings:
    """Analysis parameters for the event-study pipeline."""

    surface_lambda: float = 1e-6
    jump_window: int = DEFAULT_WINDOW
    alpha: float = DEFAULT_ALPHA
    cutoff: str = DEFAULT_CUTOFF
    surface_start: str = "09:31"
    surface_end: str = ""                 # empty: cutoff + 60 minutes
    windows: tuple[int, ...] = (5, 15, 20, 30, 60)
    maturities: tuple[str, ...] = MATURITY_NAMES
    bootstrap_draws: int = 7000
    band_level: float = 0.90
    ref_seed: int = 902_001
    bootstrap_seed: int = 902_002
    iv_level_maturity: str = "same"       # "same" | "3m"
    min_level_minutes: int = 30
    se_type: str = "classical"            # "classical" | "hc1"
    kaiser: bool = False
    curve_variables: tuple[tuple[str, str], ...] = (("ATM-IV", "3m"),)
    robustness_iterations: int = 1000
    robustness_seed: int = 902_003
    robustness_alpha: float = 0.05
    robustness_cutoff: str = "12:30"
    jobs: int = 1

    def __post_init__(self) -> None:
        if not set(self.windows) <= {5, 15, 20, 30, 60}:
            raise ValueError(f"windows must be within {{5,15,20,30,60}}, got {self.windows}")
        if self.iv_level_maturity not in ("same", "3m"):
            raise ValueError("iv_level_maturity must be 'same' or '3m'")
        if self.se_type not in ("classical", "hc1"):
            raise ValueError("se_type must be 'classical' or 'hc1'")

    @property
    def cutoff_slot(self) -> int:
        return minute_to_slot(self.cutoff)

    @property
    def surface_start_slot(self) -> int:
        return minute_to_slot(self.surface_start)

    @property
    def surface_end_slot(self) -> int:
        if self.surface_end:
            return minute_to_slot(self.surface_end)
        return min(self.cutoff_slot + 60, 404)

    def completeness_end_slot(self, cutoff_slot: int | None = None) -> int:
        """Last slot that must be present for a no-jump morning to qualify."""
        c = self.cutoff_slot if cutoff_slot is None else cutoff_slot
        return min(c + 60, self.surface_end_slot)


def parse_kv_file(path: str) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw.rstrip()!r}")
            key, value = line.split("=", 1)
            key = key.strip()
            if key in out:
                raise ValueError(f"{path}:{lineno}: duplicate key {key!r}")
            out[key] = value.strip()
    return out


_SIM_FLOAT = {
    "spot0", "diffusion_vol", "jump_intensity", "jump_size_mean", "jump_size_sd",
    "smile_level", "smile_skew", "smile_curvature", "rate", "dividend", "half_spread",
    "iv_noise", "opening_bump", "opening_bump_half_life",
    "moneyness_lo", "moneyness_hi", "moneyness_step",
}
_SIM_INT = {"days", "seed", "scheduled_jump_days", "scheduled_slot_lo", "scheduled_slot_hi"}
_SIM_STR = {"start_day", "jump_mode", "quote_start", "quote_end", "iv_noise_mode"}
_RESP = {
    "response_pos_a0": ("response_pos", "immediate"),
    "response_pos_a1": ("response_pos", "gradual"),
    "response_pos_h": ("response_pos", "half_life"),
    "response_neg_a0": ("response_neg", "immediate"),
    "response_neg_a1": ("response_neg", "gradual"),
    "response_neg_h": ("response_neg", "half_life"),
}
_PIPE_FLOAT = {"surface_lambda", "alpha", "band_level", "robustness_alpha"}
_PIPE_INT = {
    "jump_window", "bootstrap_draws", "ref_seed", "bootstrap_seed",
    "min_level_minutes", "robustness_iterations", "robustness_seed", "jobs",
}
_PIPE_STR = {
    "cutoff", "surface_start", "surface_end", "iv_level_maturity", "se_type",
    "robustness_cutoff",
}
_PIPE_BOOL = {"kaiser"}


@dataclass(frozen=True)
class RunConfig:
    """Everything a CLI run needs: simulation, analysis, and output location."""

    sim: SimConfig
    pipeline: PipelineSettings
    out_dir: str = "out"


def run_config_from_mapping(kv: dict[str, str]) -> RunConfig:
    sim_kwargs: dict = {}
    resp: dict[str, dict[str, float]] = {"response_pos": {}, "response_neg": {}}
    pipe_kwargs: dict = {}
    out_dir = "out"
    for key, value in kv.items():
        if key in _SIM_FLOAT:
            sim_kwargs[key] = float(value)
        elif key in _SIM_INT:
            sim_kwargs[key] = int(value)
        elif key in _SIM_STR:
            sim_kwargs[key] = value
        elif key in _RESP:
            target, attr = _RESP[key]
            resp[target][attr] = float(value)
        elif key in _PIPE_FLOAT:
            pipe_kwargs[key] = float(value)
        elif key in _PIPE_INT:
            pipe_kwargs[key] = int(value)
        elif key in _PIPE_STR:
            pipe_kwargs[key] = value
        elif key in _PIPE_BOOL:
            pipe_kwargs[key] = value.lower() in ("1", "true", "yes")
        elif key == "windows":
            pipe_kwargs["windows"] = tuple(int(v) for v in value.split(",") if v.strip())
        elif key == "maturities":
            pipe_kwargs["maturities"] = tuple(v.strip() for v in value.split(",") if v.strip())
        elif key == "curve_variables":
            pairs = []
            for item in value.split(";"):
                item = item.strip()
                if item:
                    var, mat = item.split(",")
                    pairs.append((var.strip(), mat.strip()))
            pipe_kwargs["curve_variables"] = tuple(pairs)
        elif key == "out_dir":
            out_dir = value
        else:
            raise ValueError(f"unknown configuration key {key!r}")
    for target, attrs in resp.items():
        if attrs:
            sim_kwargs[target] = ResponseParams(**attrs)
    config = RunConfig(sim=SimConfig(**sim_kwargs),
                       pipeline=PipelineSettings(**pipe_kwargs), out_dir=out_dir)
    return apply_seed_override(config)


def apply_seed_override(config: RunConfig) -> RunConfig:
    env = os.environ.get("IVJUMP_SEED")
    if not env:
        return config
    base = int(env)
    return RunConfig(
        sim=replace(config.sim, seed=base),
        pipeline=replace(config.pipeline, ref_seed=base + 1, bootstrap_seed=base + 2,
                         robustness_seed=base + 3),
        out_dir=config.out_dir,
    )


def load_run_config(path: str) -> RunConfig:
    return run_config_from_mapping(parse_kv_file(path))


def resolved_text(config: RunConfig) -> str:
    """Render the fully-resolved configuration for the artifact echo."""
    lines = [f"out_dir = {config.out_dir}"]
    for f in fields(config.sim):
        value = getattr(config.sim, f.name)
        if isinstance(value, ResponseParams):
            prefix = f.name
            lines.append(f"{prefix}_a0 = {value.immediate:.12g}")
            lines.append(f"{prefix}_a1 = {value.gradual:.12g}")
            lines.append(f"{prefix}_h = {value.half_life:.12g}")
        elif isinstance(value, tuple):
            lines.append(f"{f.name} = {','.join(str(v) for v in value)}")
        else:
            lines.append(f"{f.name} = {value}")
    for f in fields(config.pipeline):
        value = getattr(config.pipeline, f.name)
        if f.name == "curve_variables":
            lines.append(f"{f.name} = {';'.join(f'{v},{m}' for v, m in value)}")
        elif isinstance(value, tuple):
            lines.append(f"{f.name} = {','.join(str(v) for v in value)}")
        else:
            lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"
