"""Command-line experiment runner.

Subcommands: ``run`` executes every (noise level, seed) reconstruction of a
configuration (optionally starting from a named preset), writing per-run
artifact directories; ``validate`` checks a configuration; ``presets`` lists
the named desk-scale experiments.  Exit codes: 0 on success, 1 for
configuration errors, 2 when any run's solver failed.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import json
import sys
import time
from pathlib import Path

from . import __version__
from .config import (
    PRESET_NOTES,
    PRESETS,
    ExperimentConfig,
    build_lm_settings,
    build_model_params,
    build_grid,
    dump_config,
    mutation_case,
    trial_nodes,
    validate_config,
)
from .forward_nonlocal import write_geometry_csv
from .grid import field_csv_name, write_field_csv
from .inverse import TikhonovProblem, sweep_and_select, synthesize_measurement
from .mutation_space import write_space_csv

_PLOT_STUB = """\
#!/usr/bin/env python3
# Render the reconstruction artifacts written next to this script.
# Usage: python plot_results.py <run-directory>
import csv
import json
import sys
from pathlib import Path

import matplotlib.pyplot as plt

run = Path(sys.argv[1])
result = json.loads((run / "result.json").read_text())
rows = list(csv.DictReader((run / "alpha_table.csv").open()))

fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
ax1.loglog([float(r["alpha"]) for r in rows], [float(r["misfit"]) for r in rows], "o-")
ax1.axvline(result["selected_alpha"], color="red", ls="--", label="selected")
ax1.set_xlabel("alpha"); ax1.set_ylabel("data misfit"); ax1.legend()

recon = list(csv.reader((run / "reconstruction.csv").open()))
if recon[0][0] == "node":
    xs = [float(r[0]) for r in recon[1:]]
    ys = [float(r[1]) for r in recon[1:]]
    ax2.plot(xs, ys, "o-")
    ax2.set_xlabel("density"); ax2.set_ylabel("reconstructed law")
else:
    vals = [[float(x) for x in r[1:]] for r in recon[1:]]
    im = ax2.imshow(vals, origin="lower", aspect="auto")
    fig.colorbar(im, ax=ax2)
    ax2.set_xlabel("matrix node"); ax2.set_ylabel("cell node")
fig.tight_layout()
plt.show()
"""


def _run_name(noise: float, seed: int) -> str:
    return f"noise{noise:g}_seed{seed}"


def run_single(config: ExperimentConfig, noise: float, seed: int, run_dir: Path) -> dict:
    """One synthesize -> sweep -> artifacts cycle."""
    run_dir.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()

    grid = build_grid(config)
    params = build_model_params(config)
    case = mutation_case(config)
    model = str(config.get("model.kind"))
    geometry = params.geometry() if model == "nonlocal" else None

    measurement = synthesize_measurement(case, model, params, grid, noise, seed, geometry)
    problem = TikhonovProblem(
        case=case,
        model=model,
        measurement=measurement,
        params=params,
        grid=grid,
        geometry=geometry,
        trial_m=trial_nodes(config),
        alpha_grid=tuple(float(a) for a in config.as_list("inverse.alphas")),
        initial_coeff=config.as_float("inverse.initial_coeff"),
        tau=config.as_float("inverse.tau"),
        settings=build_lm_settings(config),
    )
    result = sweep_and_select(problem)
    wall = time.perf_counter() - started

    payload = {
        "config": {k: config.values[k] for k in sorted(config.values)},
        "noise": noise,
        "seed": seed,
        "model": model,
        "case": case.value,
        "trial_m": problem.trial_m,
        "sigmas": {"c1": measurement.sigmas[0], "c2": measurement.sigmas[1], "v": measurement.sigmas[2]},
        "noise_energy": result.noise_energy,
        "alpha_table": [rec.as_dict() for rec in result.records],
        "selected_alpha": result.selected_alpha,
        "discrepancy_satisfied": result.discrepancy_satisfied,
        "restricted_error": result.restricted_rel_error,
        "accessible_region": result.accessible_region.as_dict() if result.accessible_region else None,
        "reconstruction": [float(x) for x in result.selected_coeffs],
    }
    (run_dir / "result.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")

    with open(run_dir / "alpha_table.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["alpha", "misfit", "penalty", "iterations", "status"])
        for rec in result.records:
            writer.writerow([f"{rec.alpha:.15g}", f"{rec.misfit:.15g}", f"{rec.penalty:.15g}",
                             rec.iterations, rec.status])

    write_space_csv(result.reconstruction_space(), run_dir / "reconstruction.csv")

    if bool(config.get("output.save_fields")):
        t_final = params.t_final
        for name, values in (("c1_star", measurement.c1_star),
                             ("c2_star", measurement.c2_star),
                             ("v_star", measurement.v_star)):
            write_field_csv(values, run_dir / field_csv_name(name, t_final))

    manifest = dict(config.values)
    manifest["run.noise"] = noise
    manifest["run.seed"] = seed
    manifest["run.code_version"] = __version__
    manifest["run.wall_time_s"] = round(wall, 3)
    (run_dir / "manifest.txt").write_text(dump_config(manifest))

    return {
        "run": run_dir.name,
        "status": "ok",
        "selected_alpha": result.selected_alpha,
        "restricted_error": result.restricted_rel_error,
    }


def _run_task(values: dict, noise: float, seed: int, run_dir: str) -> dict:
    config = ExperimentConfig(values)
    try:
        return run_single(config, noise, seed, Path(run_dir))
    except Exception as err:  # noqa: BLE001 - per-run records keep the batch going
        Path(run_dir).mkdir(parents=True, exist_ok=True)
        (Path(run_dir) / "error.txt").write_text(f"{type(err).__name__}: {err}\n")
        return {"run": Path(run_dir).name, "status": "error", "message": str(err)}


def run_experiment(config: ExperimentConfig, out_dir: Path | None = None) -> int:
    """Run every (noise, seed) combination; returns the process exit code."""
    violations = validate_config(config)
    if violations:
        for line in violations:
            print(f"config error: {line}", file=sys.stderr)
        return 1

    out = Path(out_dir) if out_dir is not None else Path(str(config.get("output.dir")))
    out.mkdir(parents=True, exist_ok=True)
    (out / "plot_results.py").write_text(_PLOT_STUB)
    if config.get("model.kind") == "nonlocal":
        write_geometry_csv(build_model_params(config).geometry(), out / "geometry.csv")

    tasks = [
        (float(noise), int(seed))
        for noise in config.as_list("noise.levels")
        for seed in config.as_list("noise.seeds")
    ]
    jobs = config.as_int("run.jobs")
    summaries = []
    if jobs > 1 and len(tasks) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [
                pool.submit(_run_task, config.values, noise, seed,
                            str(out / _run_name(noise, seed)))
                for noise, seed in tasks
            ]
            summaries = [f.result() for f in futures]
    else:
        for noise, seed in tasks:
            summaries.append(_run_task(config.values, noise, seed,
                                       str(out / _run_name(noise, seed))))

    (out / "summary.json").write_text(json.dumps(summaries, indent=2, sort_keys=True) + "\n")
    failed = [s for s in summaries if s["status"] != "ok"]
    for s in summaries:
        if s["status"] == "ok":
            err = s["restricted_error"]
            err_text = f"{err:.4g}" if err is not None else "n/a"
            print(f"{s['run']}: alpha*={s['selected_alpha']:g} restricted_error={err_text}")
        else:
            print(f"{s['run']}: FAILED ({s['message']})", file=sys.stderr)
    return 2 if failed else 0


def _load_config(args) -> ExperimentConfig:
    config = ExperimentConfig.from_file(args.config)
    if getattr(args, "preset", None):
        if args.preset not in PRESETS:
            raise KeyError(f"unknown preset {args.preset!r}; see 'mutrecon presets'")
        config = config.with_overrides(PRESETS[args.preset])
    return config


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mutrecon",
        description="Reconstruct tumour mutation laws from final-time density snapshots.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run the reconstruction experiment of a configuration")
    run_p.add_argument("config", help="flat key=value configuration file")
    run_p.add_argument("--preset", help="apply a named preset on top of the file")
    run_p.add_argument("--seed", type=int, help="run a single seed")
    run_p.add_argument("--noise", type=float, help="run a single noise level")
    run_p.add_argument("--jobs", type=int, help="worker processes for independent runs")
    run_p.add_argument("--out", help="output directory")

    val_p = sub.add_parser("validate", help="check a configuration file")
    val_p.add_argument("config")
    val_p.add_argument("--preset", help="apply a named preset before validating")

    sub.add_parser("presets", help="list named experiment presets")

    args = parser.parse_args(argv)

    if args.command == "presets":
        for name in PRESETS:
            print(f"{name}: {PRESET_NOTES[name]}")
        return 0

    try:
        config = _load_config(args)
    except (OSError, ValueError, KeyError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return 1

    if args.command == "validate":
        violations = validate_config(config)
        for line in violations:
            print(f"violation: {line}")
        if not violations:
            print("configuration is valid")
        return 1 if violations else 0

    overrides = {}
    if args.seed is not None:
        overrides["noise.seeds"] = [args.seed]
    if args.noise is not None:
        overrides["noise.levels"] = [args.noise]
    if args.jobs is not None:
        overrides["run.jobs"] = args.jobs
    if overrides:
        config = config.with_overrides(overrides)
    return run_experiment(config, Path(args.out) if args.out else None)


if __name__ == "__main__":
    sys.exit(main())
