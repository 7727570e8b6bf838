"""Command-line pipeline driver.

Stages communicate through comma-separated artifacts in the configured
output directory and each prints a one-line summary:

    simulate -> underlying.csv quotes.csv rates.csv truth.csv
    detect -> jumps.csv
    surfaces -> smiles.csv atm_iv.csv
    pca -> labels.csv loadings.csv scores_<mat>.csv variables.csv
    eventstudy -> regressions.csv curves_<var>_<mat>_<mode>.csv
    robustness -> robustness_redraws.csv robustness_alpha.csv robustness_window.csv
    plot -> one SVG per table dump

Configuration is a ``key = value`` file (see README); the environment
variable IVJUMP_SEED overrides all configured seeds.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from . import artifacts, charts
from . import eventstudy as es
from . import jumps as jmod
from . import pipeline as pl
from . import smilepca
from .config import RunConfig, load_run_config, resolved_text
from .marketdata import UnderlyingPanel, parse_underlying
from .simulator import simulate_market

STAGES = ("simulate", "detect", "surfaces", "pca", "eventstudy", "robustness", "plot")


def _echo_config(config: RunConfig) -> None:
    os.makedirs(config.out_dir, exist_ok=True)
    with open(os.path.join(config.out_dir, "config_resolved.txt"), "w",
              encoding="utf-8") as fh:
        fh.write(resolved_text(config))


def _path(config: RunConfig, name: str) -> str:
    return os.path.join(config.out_dir, name)


def _load_panel(config: RunConfig) -> UnderlyingPanel:
    return UnderlyingPanel.from_bars(parse_underlying(_path(config, "underlying.csv")))


def stage_simulate(config: RunConfig) -> str:
    sim = simulate_market(config.sim)
    sim.write(config.out_dir)
    return (f"simulate: {config.sim.days} days, {len(sim.jumps)} planted jumps "
            f"-> {config.out_dir}/underlying.csv quotes.csv rates.csv truth.csv")


def stage_detect(config: RunConfig) -> str:
    panel = _load_panel(config)
    settings = config.pipeline
    returns = jmod.build_return_panel(panel)
    stats = jmod.jump_statistics(returns, settings.jump_window)
    events = jmod.detect_jumps(stats, returns, panel.days, settings.alpha)
    jmod.write_jump_report(events, _path(config, "jumps.csv"))
    return (f"detect: {len(events)} jumps on {len(panel.days)} days "
            f"(alpha={settings.alpha}) -> jumps.csv")


def stage_surfaces(config: RunConfig) -> str:
    dataset = pl.load_dataset(_path(config, "underlying.csv"),
                              _path(config, "quotes.csv"), _path(config, "rates.csv"))
    surf = pl.build_surface_series(dataset, config.pipeline)
    artifacts.write_smiles(surf, _path(config, "smiles.csv"))
    artifacts.write_atm(surf, _path(config, "atm_iv.csv"))
    minutes = len(surf.days) * (surf.end_slot - surf.start_slot + 1)
    return (f"surfaces: {minutes} minutes fitted, {surf.failures} failures, "
            f"{surf.dropped_quotes} quotes dropped -> smiles.csv atm_iv.csv")


def stage_pca(config: RunConfig) -> str:
    settings = config.pipeline
    panel = _load_panel(config)
    surf = artifacts.read_surface_series(_path(config, "smiles.csv"),
                                         _path(config, "atm_iv.csv"),
                                         panel.days, settings)
    events = jmod.read_jump_report(_path(config, "jumps.csv"))
    complete = pl.completeness_from_surface(surf, settings.completeness_end_slot())
    labels = jmod.classify_days(panel.days, events, complete, settings.cutoff)
    jmod.write_label_report(labels, _path(config, "labels.csv"))

    varset = pl.build_delta_variables(surf, settings)
    no_jump = pl.no_jump_days_from_labels(labels)
    if not no_jump:
        raise RuntimeError("no complete no-jump days; cannot deseasonalize")
    variables = pl.deseasonalize_variables(varset, panel.days, no_jump)
    artifacts.write_variables(variables, panel.days, _path(config, "variables.csv"))
    smilepca.write_loadings(varset.pca_models, _path(config, "loadings.csv"))
    for mat, series in varset.score_series.items():
        adjusted = smilepca.deseasonalize(series.values, series.slots, series.days, no_jump)
        out = smilepca.ScoreSeries(days=series.days, minutes=series.minutes,
                                   slots=series.slots, values=adjusted, deseasonalized=True)
        smilepca.write_scores(out, _path(config, f"scores_{mat}.csv"))
    counts = {lab: sum(1 for l in labels if l.label == lab)
              for lab in (jmod.LABEL_POSITIVE, jmod.LABEL_NEGATIVE, jmod.LABEL_NO_JUMP,
                          jmod.LABEL_EXCLUDED)}
    return (f"pca: labels {counts} -> labels.csv loadings.csv variables.csv "
            f"scores_<maturity>.csv")


def stage_eventstudy(config: RunConfig) -> str:
    settings = config.pipeline
    panel = _load_panel(config)
    labels = jmod.read_label_report(_path(config, "labels.csv"))
    variables = artifacts.read_variables(_path(config, "variables.csv"), panel.days)
    surf = artifacts.read_surface_series(_path(config, "smiles.csv"),
                                         _path(config, "atm_iv.csv"),
                                         panel.days, settings)
    iv_levels = pl.iv_levels_from_surface(surf, settings)
    no_jump = pl.no_jump_days_from_labels(labels)
    dist = pl.jump_slot_distribution(labels)
    if not dist or not no_jump:
        raise RuntimeError("need both labelled jump mornings and no-jump mornings")
    ref_starts = es.build_reference_starts(no_jump, dist, settings.ref_seed)
    samples = pl.build_event_samples(variables, iv_levels, labels, ref_starts,
                                     panel.days, settings)
    fits = pl.fit_regressions(samples, settings)
    es.write_regression_report(fits, _path(config, "regressions.csv"))
    curves = pl.build_curves(variables, labels, ref_starts, panel.days, settings)
    for (var, mat, include), bundle in curves.items():
        mode = "include" if include else "exclude"
        es.write_curve_dump(_path(config, f"curves_{var}_{mat}_{mode}.csv"),
                            bundle.pos_mean, bundle.neg_mean, bundle.ref_mean, bundle.band)
    return (f"eventstudy: {len(fits)} regressions, {len(curves)} curve dumps "
            f"-> regressions.csv curves_*.csv")


def stage_robustness(config: RunConfig) -> str:
    settings = config.pipeline
    panel = _load_panel(config)
    surf = artifacts.read_surface_series(_path(config, "smiles.csv"),
                                         _path(config, "atm_iv.csv"),
                                         panel.days, settings)
    dataset = pl.CsvDataset(days=panel.days, underlying=panel, rate_curve={}, slices={})
    result = pl.run_pipeline(dataset, settings, surf=surf)
    report = pl.run_robustness(result)
    pl.write_robustness_report(report, _path(config, "robustness_redraws.csv"))
    if report.alpha_fits is not None:
        es.write_regression_report(report.alpha_fits, _path(config, "robustness_alpha.csv"))
    if report.extended_fits is not None:
        es.write_regression_report(report.extended_fits, _path(config, "robustness_window.csv"))
    notes = f" notes: {'; '.join(report.notes)}" if report.notes else ""
    return (f"robustness: {report.iterations} reference re-draws "
            f"-> robustness_redraws.csv{notes}")


def stage_plot(config: RunConfig) -> str:
    rendered = 0
    for name in sorted(os.listdir(config.out_dir)):
        if name.startswith("curves_") and name.endswith(".csv"):
            title = name[len("curves_"):-len(".csv")].replace("_", " ")
            svg = charts.render_curve_chart(os.path.join(config.out_dir, name),
                                            f"cumulative IV response: {title}")
            with open(os.path.join(config.out_dir, name[:-4] + ".svg"), "wb") as fh:
                fh.write(svg)
            rendered += 1
    loadings_path = _path(config, "loadings.csv")
    if os.path.exists(loadings_path):
        with open(loadings_path, "r", encoding="utf-8") as fh:
            fh.readline()
            maturities = sorted({line.split(",")[0] for line in fh if line.strip()})
        for mat in maturities:
            svg = charts.render_loadings_chart(loadings_path, mat,
                                               f"rotated loadings: {mat}")
            with open(_path(config, f"loadings_{mat}.svg"), "wb") as fh:
                fh.write(svg)
            rendered += 1
    return f"plot: {rendered} SVG charts -> {config.out_dir}"


_STAGE_FUNCS = {
    "simulate": stage_simulate,
    "detect": stage_detect,
    "surfaces": stage_surfaces,
    "pca": stage_pca,
    "eventstudy": stage_eventstudy,
    "robustness": stage_robustness,
    "plot": stage_plot,
}


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="ivjump",
        description="Intraday IV jump-response pipeline (simulate, detect, surfaces, "
                    "pca, eventstudy, robustness, plot)")
    sub = parser.add_subparsers(dest="stage", required=True)
    for name in STAGES + ("all",):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="key=value configuration file")
        p.add_argument("--jobs", type=int, default=None,
                       help="worker processes for the surfaces stage")
    args = parser.parse_args(argv)

    try:
        config = load_run_config(args.config)
    except (OSError, ValueError) as exc:
        print(f"ivjump: bad configuration {args.config}: {exc}", file=sys.stderr)
        return 1
    if args.jobs is not None:
        config = RunConfig(sim=config.sim,
                           pipeline=replace(config.pipeline, jobs=args.jobs),
                           out_dir=config.out_dir)
    _echo_config(config)

    stages = STAGES if args.stage == "all" else (args.stage,)
    for name in stages:
        try:
            print(_STAGE_FUNCS[name](config))
        except Exception as exc:  # pragma: no cover - error formatting
            print(f"ivjump: stage '{name}' failed: {exc}", file=sys.stderr)
            return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
