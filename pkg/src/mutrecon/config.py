"""Experiment configuration: flat key=value files, defaults, validation.

One configuration drives one reconstruction experiment (model, case,
proliferation rules, grids, kinetics, adhesion, trial space, noise levels,
seeds, solver settings, output layout).  The file format is a flat,
diffable ``section.key = value`` text; lists are comma-separated.  Defaults
follow the published parameter set; presets override them to desk scale for
the named figure experiments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .forward_local import LocalModelParams
from .forward_nonlocal import AdhesionParams, NonlocalModelParams
from .grid import Grid
from .kinetics import KineticParams, ProliferationRule
from .mutation_space import MutationCase
from .optimize import LMSettings

DEFAULTS: dict = {
    "model.kind": "local",
    "model.case": "i",
    "model.proliferation": "logistic_both",
    "grid.side": 4.0,
    "grid.spacing": 0.03125,
    "time.dt": 1e-3,
    "time.t_final": 15.0,
    "transport.d1": 0.00675,
    "transport.d2": 0.00675,
    "transport.eta1": 2.85e-2,
    "transport.eta2": 2.85e-2,
    "kinetics.mu_c": 0.25,
    "kinetics.k_c": 1.0,
    "kinetics.rho": 2.0,
    "kinetics.mu_v": 0.4,
    "kinetics.delta_0": 0.3,
    "kinetics.t_switch": 10.0,
    "kinetics.t_steepness": 3.0,
    "kinetics.kappa": 0.35,
    "adhesion.s_cc_11": 0.5,
    "adhesion.s_cc_12": 0.0,
    "adhesion.s_cc_21": 0.0,
    "adhesion.s_cc_22": 0.3,
    "adhesion.s_cv_1": 0.1,
    "adhesion.s_cv_2": 0.5,
    "adhesion.radius": 0.1,
    "adhesion.annuli": 3,
    "adhesion.sector_exponent": 2,
    "adhesion.kernel": "uniform",
    "trial.spacing": 0.0625,
    "inverse.alphas": [10.0**-i for i in range(1, 13)],
    "inverse.tau": 1.1,
    "inverse.initial_coeff": 1e-3,
    "inverse.max_iterations": 200,
    "inverse.step_tol": 1e-8,
    "inverse.objective_tol": 1e-10,
    "inverse.fd_increment": 1e-6,
    "noise.levels": [0.0, 0.01, 0.03],
    "noise.seeds": [1],
    "run.jobs": 1,
    "output.dir": "runs",
    "output.snapshot_every": 0,
    "output.save_fields": True,
}

# Keys a run manifest may add on top of a configuration.
MANIFEST_EXTRA_KEYS = {"run.noise", "run.seed", "run.code_version", "run.wall_time_s"}

_DESK_SCALE = {
    "grid.spacing": 0.0625,
    "time.dt": 2e-3,
    "time.t_final": 12.0,
    "trial.spacing": 0.125,
}

PRESETS: dict[str, dict] = {
    "fig2-local-case-i": {**_DESK_SCALE, "model.kind": "local", "model.case": "i"},
    "fig3-local-case-ii": {**_DESK_SCALE, "model.kind": "local", "model.case": "ii"},
    "fig4-local-case-iii": {**_DESK_SCALE, "model.kind": "local", "model.case": "iii"},
    "fig5-local-mixed": {
        **_DESK_SCALE,
        "model.kind": "local",
        "model.case": "iii",
        "model.proliferation": "mixed_gompertz_c2",
    },
    "fig6-nonlocal-case-iii": {**_DESK_SCALE, "model.kind": "nonlocal", "model.case": "iii"},
    "fig6b-nonlocal-mixed": {
        **_DESK_SCALE,
        "model.kind": "nonlocal",
        "model.case": "iii",
        "model.proliferation": "mixed_gompertz_c2",
    },
}

PRESET_NOTES = {
    "fig2-local-case-i": "local model, cell-driven 1-D law, desk scale",
    "fig3-local-case-ii": "local model, matrix-window 1-D law, desk scale",
    "fig4-local-case-iii": "local model, general 2-D law, desk scale",
    "fig5-local-mixed": "local model, 2-D law, Gompertz growth for mutated cells",
    "fig6-nonlocal-case-iii": "nonlocal adhesion model, general 2-D law, desk scale",
    "fig6b-nonlocal-mixed": "nonlocal adhesion model, 2-D law, mixed growth",
}


def _parse_scalar(text: str):
    text = text.strip()
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def parse_value(text: str):
    if "," in text:
        return [_parse_scalar(part) for part in text.split(",") if part.strip()]
    return _parse_scalar(text)


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple, np.ndarray)):
        return ",".join(format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config_text(text: str) -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        values[key.strip()] = parse_value(val)
    return values


def dump_config(values: dict) -> str:
    return "".join(f"{key} = {format_value(values[key])}\n" for key in sorted(values))


@dataclass
class ExperimentConfig:
    """Flat configuration mapping with defaults applied."""

    values: dict

    @classmethod
    def default(cls) -> "ExperimentConfig":
        return cls(dict(DEFAULTS))

    @classmethod
    def from_mapping(cls, overrides: dict) -> "ExperimentConfig":
        cfg = dict(DEFAULTS)
        cfg.update(overrides)
        return cls(cfg)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_mapping(parse_config_text(fh.read()))

    def with_overrides(self, overrides: dict) -> "ExperimentConfig":
        merged = dict(self.values)
        merged.update(overrides)
        return ExperimentConfig(merged)

    def get(self, key: str):
        return self.values[key]

    def as_float(self, key: str) -> float:
        return float(self.values[key])

    def as_int(self, key: str) -> int:
        return int(self.values[key])

    def as_list(self, key: str) -> list:
        val = self.values[key]
        return list(val) if isinstance(val, (list, tuple)) else [val]


def _check(violations, ok: bool, key: str, value, bound: str):
    if not ok:
        violations.append(f"{key} = {value!r}: must {bound}")


def validate_config(config: ExperimentConfig | dict) -> list[str]:
    """All invariant and stability-guard violations, empty when runnable."""
    cfg = config.values if isinstance(config, ExperimentConfig) else config
    violations: list[str] = []

    unknown = set(cfg) - set(DEFAULTS) - MANIFEST_EXTRA_KEYS
    for key in sorted(unknown):
        violations.append(f"{key} = {cfg[key]!r}: unknown configuration key")
    missing = set(DEFAULTS) - set(cfg)
    for key in sorted(missing):
        violations.append(f"{key}: missing")
    if violations:
        return violations

    _check(violations, cfg["model.kind"] in ("local", "nonlocal"),
           "model.kind", cfg["model.kind"], "be local or nonlocal")
    _check(violations, cfg["model.case"] in ("i", "ii", "iii"),
           "model.case", cfg["model.case"], "be one of i, ii, iii")
    _check(violations, cfg["model.proliferation"] in ("logistic_both", "mixed_gompertz_c2"),
           "model.proliferation", cfg["model.proliferation"],
           "be logistic_both or mixed_gompertz_c2")

    side = float(cfg["grid.side"])
    dx = float(cfg["grid.spacing"])
    _check(violations, side > 0, "grid.side", side, "be positive")
    _check(violations, dx > 0, "grid.spacing", dx, "be positive")
    if side > 0 and dx > 0:
        cells = side / dx
        _check(violations, abs(cells - round(cells)) < 1e-9 and round(cells) + 1 >= 3,
               "grid.spacing", dx, f"tile grid.side {side} into at least 2 cells")

    dt = float(cfg["time.dt"])
    t_final = float(cfg["time.t_final"])
    _check(violations, dt > 0, "time.dt", dt, "be positive")
    _check(violations, t_final > 0, "time.t_final", t_final, "be positive")
    if dt > 0 and t_final > 0:
        steps = t_final / dt
        _check(violations, abs(steps - round(steps)) < 1e-6,
               "time.t_final", t_final, f"be an integer multiple of time.dt {dt}")

    for key in ("transport.d1", "transport.d2", "transport.eta1", "transport.eta2"):
        _check(violations, float(cfg[key]) >= 0, key, cfg[key], "be nonnegative")

    for key in ("kinetics.mu_c", "kinetics.k_c", "kinetics.rho", "kinetics.mu_v",
                "kinetics.delta_0", "kinetics.t_steepness"):
        _check(violations, float(cfg[key]) > 0, key, cfg[key], "be strictly positive")
    _check(violations, float(cfg["kinetics.t_switch"]) >= 0,
           "kinetics.t_switch", cfg["kinetics.t_switch"], "be nonnegative")
    kappa = float(cfg["kinetics.kappa"])
    _check(violations, 0.0 < kappa < 1.0, "kinetics.kappa", kappa, "lie in (0,1)")

    if dx > 0 and dt > 0:
        cfl = 4.0 * max(float(cfg["transport.d1"]), float(cfg["transport.d2"])) * dt / dx**2
        _check(violations, cfl <= 1.0 + 1e-12, "time.dt", dt,
               f"keep the diffusion stability number 4*D*dt/dx^2 <= 1 (got {cfl:.3g})")

    for key in ("adhesion.s_cc_11", "adhesion.s_cc_12", "adhesion.s_cc_21",
                "adhesion.s_cc_22", "adhesion.s_cv_1", "adhesion.s_cv_2"):
        _check(violations, float(cfg[key]) >= 0, key, cfg[key], "be nonnegative")
    _check(violations, float(cfg["adhesion.radius"]) > 0,
           "adhesion.radius", cfg["adhesion.radius"], "be positive")
    _check(violations, int(cfg["adhesion.annuli"]) >= 1,
           "adhesion.annuli", cfg["adhesion.annuli"], "be at least 1")
    _check(violations, int(cfg["adhesion.sector_exponent"]) >= 0,
           "adhesion.sector_exponent", cfg["adhesion.sector_exponent"], "be nonnegative")
    _check(violations, cfg["adhesion.kernel"] == "uniform",
           "adhesion.kernel", cfg["adhesion.kernel"], "be uniform")

    deta = float(cfg["trial.spacing"])
    k_c = float(cfg["kinetics.k_c"])
    _check(violations, deta > 0, "trial.spacing", deta, "be positive")
    if deta > 0 and k_c > 0:
        m = k_c / deta
        _check(violations, abs(m - round(m)) < 1e-9 and round(m) >= 1,
               "trial.spacing", deta, f"tile [0, {k_c}] into at least one element")

    alphas = [float(a) for a in _as_list(cfg["inverse.alphas"])]
    ok = len(alphas) > 0 and all(a > 0 for a in alphas) and all(
        a > b for a, b in zip(alphas, alphas[1:])
    )
    _check(violations, ok, "inverse.alphas", cfg["inverse.alphas"],
           "be a strictly positive, strictly descending list")
    _check(violations, float(cfg["inverse.tau"]) >= 1.0,
           "inverse.tau", cfg["inverse.tau"], "be at least 1")
    _check(violations, int(cfg["inverse.max_iterations"]) >= 1,
           "inverse.max_iterations", cfg["inverse.max_iterations"], "be at least 1")
    for key in ("inverse.step_tol", "inverse.objective_tol", "inverse.fd_increment"):
        _check(violations, float(cfg[key]) > 0, key, cfg[key], "be positive")
    _check(violations, float(cfg["inverse.initial_coeff"]) == float(cfg["inverse.initial_coeff"]),
           "inverse.initial_coeff", cfg["inverse.initial_coeff"], "be a number")

    for level in _as_list(cfg["noise.levels"]):
        _check(violations, float(level) >= 0, "noise.levels", level, "be nonnegative")
    for seed in _as_list(cfg["noise.seeds"]):
        _check(violations, float(seed) == int(seed), "noise.seeds", seed, "be integers")
    _check(violations, int(cfg["run.jobs"]) >= 1, "run.jobs", cfg["run.jobs"], "be at least 1")
    _check(violations, int(cfg["output.snapshot_every"]) >= 0,
           "output.snapshot_every", cfg["output.snapshot_every"], "be nonnegative")

    return violations


def _as_list(value):
    return list(value) if isinstance(value, (list, tuple)) else [value]


# --- builders ----------------------------------------------------------------


def build_grid(cfg: ExperimentConfig) -> Grid:
    return Grid.from_side(cfg.as_float("grid.side"), cfg.as_float("grid.spacing"))


def build_kinetics(cfg: ExperimentConfig) -> KineticParams:
    return KineticParams(
        mu_c=cfg.as_float("kinetics.mu_c"),
        k_c=cfg.as_float("kinetics.k_c"),
        rho=cfg.as_float("kinetics.rho"),
        mu_v=cfg.as_float("kinetics.mu_v"),
        delta_0=cfg.as_float("kinetics.delta_0"),
        t_switch=cfg.as_float("kinetics.t_switch"),
        t_steepness=cfg.as_float("kinetics.t_steepness"),
        kappa=cfg.as_float("kinetics.kappa"),
    )


def _rules(cfg: ExperimentConfig):
    mixed = cfg.get("model.proliferation") == "mixed_gompertz_c2"
    return ProliferationRule.LOGISTIC, (
        ProliferationRule.GOMPERTZ if mixed else ProliferationRule.LOGISTIC
    )


def build_model_params(cfg: ExperimentConfig):
    """Local or nonlocal model parameters per ``model.kind``."""
    kin = build_kinetics(cfg)
    rule1, rule2 = _rules(cfg)
    if cfg.get("model.kind") == "local":
        return LocalModelParams(
            d1=cfg.as_float("transport.d1"),
            d2=cfg.as_float("transport.d2"),
            eta1=cfg.as_float("transport.eta1"),
            eta2=cfg.as_float("transport.eta2"),
            kinetics=kin,
            rule_c1=rule1,
            rule_c2=rule2,
            dt=cfg.as_float("time.dt"),
            t_final=cfg.as_float("time.t_final"),
        )
    adhesion = AdhesionParams(
        s_cc=np.array(
            [
                [cfg.as_float("adhesion.s_cc_11"), cfg.as_float("adhesion.s_cc_12")],
                [cfg.as_float("adhesion.s_cc_21"), cfg.as_float("adhesion.s_cc_22")],
            ]
        ),
        s_cv=np.array([cfg.as_float("adhesion.s_cv_1"), cfg.as_float("adhesion.s_cv_2")]),
        radius=cfg.as_float("adhesion.radius"),
        kernel=str(cfg.get("adhesion.kernel")),
    )
    return NonlocalModelParams(
        d1=cfg.as_float("transport.d1"),
        d2=cfg.as_float("transport.d2"),
        kinetics=kin,
        rule_c1=rule1,
        rule_c2=rule2,
        dt=cfg.as_float("time.dt"),
        t_final=cfg.as_float("time.t_final"),
        adhesion=adhesion,
        annuli=cfg.as_int("adhesion.annuli"),
        sector_exponent=cfg.as_int("adhesion.sector_exponent"),
    )


def trial_nodes(cfg: ExperimentConfig) -> int:
    k_c = cfg.as_float("kinetics.k_c")
    return int(round(k_c / cfg.as_float("trial.spacing"))) + 1


def build_lm_settings(cfg: ExperimentConfig) -> LMSettings:
    return LMSettings(
        max_iterations=cfg.as_int("inverse.max_iterations"),
        step_tol=cfg.as_float("inverse.step_tol"),
        objective_decrease_tol=cfg.as_float("inverse.objective_tol"),
        fd_increment=cfg.as_float("inverse.fd_increment"),
    )


def mutation_case(cfg: ExperimentConfig) -> MutationCase:
    return MutationCase.parse(cfg.get("model.case"))
