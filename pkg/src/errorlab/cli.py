"""Batch command-line front end.

One scenario file drives every command; the command picks which
computation runs.  Exit codes: 0 success, 2 config error, 3 numerical
failure, 4 internal invariant breach (always a bug).
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__, worldgen
from .config import Scenario, parse_config, scenario_to_yaml
from .decomp import (
    bias_variance_monte_carlo,
    check_telescoping,
    component_covariances,
    decompose_bundle,
    estimate_ceiling,
    representativeness_probe,
)
from .errors import ConfigError, ErrorLabError, FitError, InvalidSpecError, InvariantError
from .experiments import monotone_under_ci, regime_gallery, run_learning_curve, run_panel_scenarios
from .models import fit_regimes, model_to_json
from .runio import RunManifest, render_csv, render_json, sha256_text, write_outputs

COMMANDS = ("simulate", "decompose", "biasvar", "curve", "panels", "gallery", "probe")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_INVARIANT = 4


@dataclass
class RunConfig:
    command: str
    config_path: Path
    out_dir: Path
    seed: Optional[int] = None
    workers: int = 1
    replicates: Optional[int] = None


def _apply_overrides(scenario: Scenario, run_config: RunConfig) -> Scenario:
    if run_config.seed is not None:
        seed = run_config.seed
        scenario.seed = seed
        scenario.world = dataclasses.replace(scenario.world, master_seed=seed).validate()
        if scenario.gallery is not None:
            scenario.gallery.low_world = dataclasses.replace(
                scenario.gallery.low_world, master_seed=seed
            ).validate()
            scenario.gallery.high_world = dataclasses.replace(
                scenario.gallery.high_world, master_seed=seed
            ).validate()
    if run_config.replicates is not None:
        reps = run_config.replicates
        scenario.biasvar.replicates = reps
        if scenario.curve is not None:
            scenario.curve.replicates = reps
        if scenario.gallery is not None:
            scenario.gallery.replicates = reps
    return scenario


def _curve_rows(curve, scenario_name: str, variant: str):
    rows = []
    for p in curve.points:
        rows.append(
            [
                scenario_name,
                variant,
                p.level_index,
                p.n_train,
                p.n_features,
                p.fidelity_y,
                p.fidelity_x,
                p.mean_mse,
                p.ci_half_width,
                p.mean_abs_approx,
                p.mean_abs_meas_y,
                p.mean_abs_meas_x,
                p.performance,
            ]
        )
    return rows


_CURVE_HEADER = [
    "scenario",
    "variant",
    "level_index",
    "n_train",
    "n_features",
    "fidelity_y",
    "fidelity_x",
    "mean_mse",
    "ci_half_width",
    "mean_abs_approx",
    "mean_abs_meas_y",
    "mean_abs_meas_x",
    "performance",
]


def _point_payload(p) -> dict:
    return {
        "level_index": p.level_index,
        "n_train": p.n_train,
        "n_features": p.n_features,
        "fidelity_y": p.fidelity_y,
        "fidelity_x": p.fidelity_x,
        "mean_mse": p.mean_mse,
        "ci_half_width": p.ci_half_width,
        "mean_abs_approx": p.mean_abs_approx,
        "mean_abs_meas_y": p.mean_abs_meas_y,
        "mean_abs_meas_x": p.mean_abs_meas_x,
        "performance": p.performance,
    }


def _cmd_simulate(scenario: Scenario, run_config: RunConfig, seed_log: set) -> dict[str, str]:
    cfg = scenario.simulate
    seed_log.add(cfg.label)
    bundle = worldgen.sample(scenario.world, cfg.n, cfg.label)
    header, rows = worldgen.bundle_columns(bundle)
    summary = {
        "n": cfg.n,
        "coverage": bundle.coverage,
        "epsilon_mean": float(np.mean(bundle.epsilon)),
        "epsilon_var": float(np.var(bundle.epsilon, ddof=1)) if cfg.n > 1 else 0.0,
        "delta_y_mean": float(np.mean(bundle.delta_y)),
        "delta_y_var": float(np.var(bundle.delta_y, ddof=1)) if cfg.n > 1 else 0.0,
        "observed_dim": int(bundle.x_observed.shape[1]),
    }
    return {
        "samples.csv": render_csv(header, rows),
        "summary.json": render_json(summary),
    }


def _cmd_decompose(scenario: Scenario, run_config: RunConfig, seed_log: set) -> dict[str, str]:
    cfg = scenario.decompose
    world = scenario.world
    seed_log.update(("decompose/train", "decompose/eval"))
    train = worldgen.sample(world, cfg.train_n, "decompose/train")
    regimes = fit_regimes(world, train, scenario.model)
    heldout = worldgen.sample(world, cfg.n, "decompose/eval")
    table = decompose_bundle(world, regimes, heldout)
    check_telescoping(table)
    header = [
        "row",
        "model_approx_gain",
        "meas_gain_y",
        "meas_gain_x",
        "current_prediction",
        "aleatoric",
        "err_x",
        "err_y",
        "delta_f",
        "aleatoric_term",
        "y_true",
        "y_pred",
    ]
    rows = [
        [
            i,
            table.model_approx_gain[i],
            table.meas_gain_y[i],
            table.meas_gain_x[i],
            table.current_prediction[i],
            table.aleatoric[i],
            table.err_x[i],
            table.err_y[i],
            table.delta_f[i],
            table.aleatoric_term[i],
            table.y_true[i],
            table.y_pred[i],
        ]
        for i in range(table.n)
    ]
    summary = {
        "n": table.n,
        "train_n": cfg.train_n,
        "mse": float(np.mean((table.y_pred - table.y_true) ** 2)),
        "mean_abs_model_approx_gain": float(np.mean(np.abs(table.model_approx_gain))),
        "mean_abs_meas_gain_y": float(np.mean(np.abs(table.meas_gain_y))),
        "mean_abs_meas_gain_x": float(np.mean(np.abs(table.meas_gain_x))),
        "mean_epsilon": float(np.mean(table.aleatoric)),
    }
    models_doc = {
        "OO": model_to_json(regimes.oo),
        "TO": model_to_json(regimes.to),
        "TT": model_to_json(regimes.tt),
    }
    return {
        "decomposition.csv": render_csv(header, rows),
        "summary.json": render_json(summary),
        "models.json": render_json(models_doc),
    }


def _cmd_biasvar(scenario: Scenario, run_config: RunConfig, seed_log: set) -> dict[str, str]:
    cfg = scenario.biasvar
    world = scenario.world
    seed_log.add("biasvar/test_grid")
    grid = worldgen.draw_inputs(world, cfg.test_points, "biasvar/test_grid")
    report = bias_variance_monte_carlo(
        world,
        scenario.model,
        cfg.regime,
        cfg.n_train,
        cfg.replicates,
        grid,
        base_label="biasvar",
        workers=run_config.workers,
        seed_log=seed_log,
    )
    payload = {
        "regime": cfg.regime,
        "n_train": cfg.n_train,
        "replicates": report.replicate_count,
        "empirical_mse": report.empirical_mse,
        "bias": report.bias,
        "variance": report.variance,
        "aleatoric_variance": report.aleatoric_variance,
        "identity_gap": report.identity_gap,
        "se_mse": report.se_mse,
        "se_bias": report.se_bias,
        "se_variance": report.se_variance,
        "se_identity_gap": report.se_identity_gap,
        "identity_z": report.identity_z,
        "bias_z": report.bias_z,
        "variance_within": report.variance_within,
        "bias_dispersion": report.bias_dispersion,
        "self_check_identity_ok": bool(abs(report.identity_z) < 3.0),
    }
    files = {
        "biasvar.json": render_json(payload),
        "replicates.csv": render_csv(
            ["replicate", "mse"],
            [[r, float(v)] for r, v in enumerate(report.replicate_mse)],
        ),
    }
    if cfg.components_replicates > 0:
        comp = component_covariances(
            world,
            scenario.model,
            cfg.n_train,
            cfg.components_replicates,
            grid,
            base_label="components",
            workers=run_config.workers,
            seed_log=seed_log,
        )
        files["components.json"] = render_json(
            {
                "component_names": list(comp.component_names),
                "means": comp.means,
                "covariance": comp.covariance,
                "replicates": comp.replicate_count,
            }
        )
    return files


def _require_curve(scenario: Scenario):
    if scenario.curve is None:
        raise ConfigError("curve: required section is missing for this command")
    return scenario.curve


def _cmd_curve(scenario: Scenario, run_config: RunConfig, seed_log: set) -> dict[str, str]:
    cfg = _require_curve(scenario)
    curve = run_learning_curve(
        scenario.world,
        scenario.model,
        cfg.axis,
        cfg.replicates,
        test_points=cfg.test_points,
        comp_points=cfg.comp_points,
        base_label="curve",
        workers=run_config.workers,
        seed_log=seed_log,
    )
    payload = {
        "replicates": cfg.replicates,
        "var_y_test": curve.var_y_test,
        "monotone_under_ci": monotone_under_ci(curve.points),
        "points": [_point_payload(p) for p in curve.points],
    }
    return {
        "curve.csv": render_csv(_CURVE_HEADER, _curve_rows(curve, "curve", "baseline")),
        "curve.json": render_json(payload),
    }


def _cmd_panels(scenario: Scenario, run_config: RunConfig, seed_log: set) -> dict[str, str]:
    cfg = _require_curve(scenario)
    if scenario.panels is None:
        raise ConfigError("panels: required section is missing for this command")
    result = run_panel_scenarios(
        scenario.world,
        scenario.panels,
        cfg.axis,
        scenario.model,
        cfg.replicates,
        test_points=cfg.test_points,
        comp_points=cfg.comp_points,
        base_label="panels",
        workers=run_config.workers,
        seed_log=seed_log,
    )
    rows = []
    for idx, (panel, curve) in enumerate(zip(result.scenarios, result.curves)):
        rows.extend(_curve_rows(curve, f"panel{idx}", panel.variant))
    comparisons = [
        {
            "variant": c.variant,
            "terminal_mean_mse": c.terminal_mean_mse,
            "terminal_ci_half_width": c.terminal_ci_half_width,
            "mean_diff_vs_baseline": c.mean_diff_vs_baseline,
            "se_diff": c.se_diff,
            "strictly_below_baseline": c.strictly_below_baseline,
        }
        for c in result.comparisons
    ]
    return {
        "panels.csv": render_csv(_CURVE_HEADER, rows),
        "panels.json": render_json({"comparisons": comparisons}),
    }


def _cmd_gallery(scenario: Scenario, run_config: RunConfig, seed_log: set) -> dict[str, str]:
    if scenario.gallery is None:
        raise ConfigError("gallery: required section is missing for this command")
    cfg = scenario.gallery
    result = regime_gallery(
        cfg.low_world,
        cfg.low_model,
        cfg.high_world,
        cfg.high_model,
        cfg.axis,
        cfg.replicates,
        test_points=cfg.test_points,
        ceiling_n=cfg.ceiling_n,
        base_label="gallery",
        workers=run_config.workers,
        seed_log=seed_log,
    )
    rows = []
    payload = {}
    for side in (result.low_noise, result.high_noise):
        rows.extend(_curve_rows(side.curve, "gallery", side.name))
        payload[side.name] = {
            "ceiling_mse": side.ceiling.ceiling_mse,
            "ceiling_r2": side.ceiling.ceiling_r2,
            "se_ceiling_r2": side.ceiling.se_ceiling_r2,
            "attainment_level": side.attainment_level,
            "monotone_under_ci": monotone_under_ci(side.curve.points),
        }
    return {
        "gallery.csv": render_csv(_CURVE_HEADER, rows),
        "gallery.json": render_json(payload),
    }


def _cmd_probe(scenario: Scenario, run_config: RunConfig, seed_log: set) -> dict[str, str]:
    report = representativeness_probe(
        scenario.world, scenario.probe.n, base_label="probe", seed_log=seed_log
    )
    ceiling = estimate_ceiling(
        scenario.world, max(scenario.probe.n, 2), base_label="probe/ceiling", seed_log=seed_log
    )
    payload = {
        "eps_mean_full": report.eps_mean_full,
        "eps_mean_selected": report.eps_mean_selected,
        "eps_var_full": report.eps_var_full,
        "eps_var_selected": report.eps_var_selected,
        "z_mean": report.z_mean,
        "z_var": report.z_var,
        "coverage": report.coverage,
        "n": report.n,
        "n_selected": report.n_selected,
        "ceiling_r2": ceiling.ceiling_r2,
    }
    return {"probe.json": render_json(payload)}


_HANDLERS = {
    "simulate": _cmd_simulate,
    "decompose": _cmd_decompose,
    "biasvar": _cmd_biasvar,
    "curve": _cmd_curve,
    "panels": _cmd_panels,
    "gallery": _cmd_gallery,
    "probe": _cmd_probe,
}


def run(run_config: RunConfig) -> RunManifest:
    """Execute one command; validates fully before any output is written."""
    started = time.perf_counter()
    scenario = parse_config(run_config.config_path)
    scenario = _apply_overrides(scenario, run_config)
    normalized = scenario_to_yaml(scenario)
    config_hash = sha256_text(
        normalized + f"|command={run_config.command}|replicates={run_config.replicates}"
    )

    seed_log: set[str] = set()
    handler = _HANDLERS[run_config.command]
    compute_started = time.perf_counter()
    payloads = handler(scenario, run_config, seed_log)
    compute_seconds = time.perf_counter() - compute_started

    out_dir = Path(run_config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payloads = {"scenario.normalized.yaml": normalized, **payloads}
    checksums = write_outputs(out_dir, payloads)
    manifest = RunManifest(
        command=run_config.command,
        config_hash=config_hash,
        artifact_version=__version__,
        files=checksums,
        seed_labels=sorted(seed_log),
        timings={
            "compute_seconds": compute_seconds,
            "total_seconds": time.perf_counter() - started,
        },
    )
    (out_dir / "manifest.json").write_text(
        render_json(manifest.to_payload()), encoding="utf-8"
    )
    return manifest


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="errorlab",
        description="Simulate prediction worlds and decompose their prediction error.",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="scenario YAML file")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="master seed override")
    parser.add_argument("--workers", type=int, default=1, help="parallel worker bound")
    parser.add_argument("--replicates", type=int, default=None, help="replicate override")
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    run_config = RunConfig(
        command=args.command,
        config_path=Path(args.config),
        out_dir=Path(args.out),
        seed=args.seed,
        workers=args.workers,
        replicates=args.replicates,
    )
    try:
        manifest = run(run_config)
    except (ConfigError, InvalidSpecError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FitError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except InvariantError as exc:
        print(f"internal invariant breach: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except ErrorLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(f"{run_config.command}: wrote {len(manifest.files)} files to {run_config.out_dir}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
