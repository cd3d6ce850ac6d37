"""Experiment configuration files.

The format is INI with one section per concern::

    [experiment]
    id = fig5
    mode = trajectory          ; or ensemble
    metrics = tv, w2
    reference = analytic_grid  ; or long_run_pool

    [target]
    id = abs_quad

    [run]
    n_iters = 100000
    burn_in_fraction = 0.2
    master_seed = 2025
    x0 = 0.0

    [grid]
    axis0 = -3, 3, 400

    [kernel MASLA]
    step = 0.1

Kernel sections are named ``kernel <label>``; ``variant`` defaults to the
label. Keys placed before any section belong to ``[experiment]``, where the
shorthands ``target``, ``kernel`` and ``step`` describe a one-kernel run.
:func:`echo_config` writes a config back out with every default filled in.
"""

from __future__ import annotations

import configparser
import io
import re
from dataclasses import dataclass, replace
from pathlib import Path


from .ensemble import InitSpec, RunSpec
from .kernel import ConfigurationError, KernelConfig, Variant, check_compatible
from .metrics import GridSpec
from .potential import TARGETS, SelectionRule, Unsupported, make_target

__all__ = ["ConfigError", "KernelSpec", "ExperimentConfig", "parse_config", "load_config", "echo_config"]

MODES = ("trajectory", "ensemble")
METRICS = ("tv", "w2")
REFERENCES = ("analytic_grid", "long_run_pool")


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


@dataclass(frozen=True)
class KernelSpec:
    label: str
    config: KernelConfig
    x0: tuple[float, ...] | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    experiment_id: str
    target_id: str
    kernels: tuple[KernelSpec, ...]
    run: RunSpec
    schedule: tuple[int, ...]
    target_params: tuple[tuple[str, object], ...] = ()
    grid: GridSpec | None = None
    metrics: tuple[str, ...] = ()
    reference: str = "analytic_grid"
    mode: str = "trajectory"
    output_dir: str = ""
    write_trajectories: bool = False
    write_histograms: bool = True
    reference_step: float = 0.01
    reference_iters: int = 2000
    reference_chains: int = 2000
    scale: float = 1.0
    nominal_chains: int = 0
    nominal_iters: int = 0
    notes: str = ""

    def make_target(self):
        return make_target(self.target_id, **dict(self.target_params))

    def effective_grid(self) -> GridSpec:
        return self.grid if self.grid is not None else self.make_target().default_grid

    def scaled(self, factor: float) -> "ExperimentConfig":
        """Shrink (or grow) the run: chains in ensemble mode, iterations in
        trajectory mode. Scheduled iterations beyond the new length are dropped."""
        if not factor > 0:
            raise ConfigError(f"scale must be positive, got {factor}")
        run = self.run
        if self.mode == "ensemble":
            run = replace(run, n_chains=max(1, int(round(self.run.n_chains * factor))))
            schedule = self.schedule
        else:
            run = replace(run, n_iters=max(1, int(round(self.run.n_iters * factor))))
            schedule = tuple(k for k in self.schedule if k <= run.n_iters) or (run.n_iters,)
        return replace(self, run=run, schedule=schedule, scale=self.scale * factor)


_SECTION_KEYS = {
    "experiment": {
        "id", "mode", "metrics", "reference", "output_dir", "trajectories", "histograms",
        "reference_step", "reference_iters", "reference_chains", "scale", "nominal_chains",
        "nominal_iters", "notes", "target", "kernel", "step",
    },
    "target": {"id", "sigma", "lambda", "y_data", "dim"},
    "run": {"n_chains", "n_iters", "burn_in_fraction", "master_seed", "init", "x0", "init_mean", "init_scale"},
    "schedule": {"iterations"},
    "kernel": {"variant", "step", "theta", "selection", "rwm_scale", "x0"},
}


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in re.split(r"[,\s]+", text.strip()) if t)


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _read(text: str) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    lines = text.splitlines()
    first = next((ln.strip() for ln in lines if ln.strip() and ln.strip()[0] not in "#;"), "")
    offset = 0
    if not first.startswith("["):
        text, offset = "[experiment]\n" + text, 1
    try:
        cp.read_string(text, source="<config>")
    except configparser.Error as err:
        lineno = getattr(err, "lineno", None)
        if lineno is None and getattr(err, "errors", None):
            lineno = err.errors[0][0]
        where = f" (line {lineno - offset})" if lineno is not None else ""
        raise ConfigError(f"cannot parse configuration{where}: {err.message.splitlines()[0]}") from None
    return cp


def _check_keys(name: str, kind: str, section) -> None:
    unknown = set(section) - _SECTION_KEYS[kind]
    if unknown:
        valid = ", ".join(sorted(_SECTION_KEYS[kind]))
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in [{name}]; valid keys: {valid}")


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate configuration text."""
    cp = _read(text)
    try:
        return _build(cp)
    except (ConfigError, ConfigurationError, Unsupported):
        raise
    except ValueError as err:
        raise ConfigError(str(err)) from None


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


def _build(cp: configparser.ConfigParser) -> ExperimentConfig:
    known = {"experiment", "target", "run", "schedule", "grid"}
    for name in cp.sections():
        if name not in known and not name.startswith("kernel"):
            raise ConfigError(f"unknown section [{name}]; expected {sorted(known)} or [kernel <label>]")
    exp = cp["experiment"] if cp.has_section("experiment") else {}
    _check_keys("experiment", "experiment", exp)

    # target
    tsec = dict(cp["target"]) if cp.has_section("target") else {}
    _check_keys("target", "target", tsec)
    target_id = tsec.pop("id", None) or exp.get("target")
    if target_id is None:
        raise ConfigError("no target given; set [target] id = <one of " + ", ".join(TARGETS) + ">")
    if target_id not in TARGETS:
        raise ConfigError(f"unknown target {target_id!r}; valid targets: {', '.join(TARGETS)}")
    params = []
    for key, raw in sorted(tsec.items()):
        if key == "y_data":
            params.append((key, _floats(raw)))
        elif key == "dim":
            params.append((key, int(raw)))
        else:
            params.append((key, float(raw)))
    target = make_target(target_id, **dict(params))

    # kernels
    specs = []
    for name in cp.sections():
        if not name.startswith("kernel"):
            continue
        label = name[len("kernel"):].strip()
        sec = cp[name]
        _check_keys(name, "kernel", sec)
        variant = sec.get("variant", label)
        if not label:
            label = variant
        specs.append(_kernel_spec(label, variant, sec))
    if "kernel" in exp:
        variant = exp["kernel"]
        specs.append(_kernel_spec(variant, variant, {"step": exp.get("step", "")}))
    if not specs:
        raise ConfigError("no kernels configured; add a [kernel <label>] section")
    labels = [s.label for s in specs]
    if len(set(labels)) != len(labels):
        raise ConfigError(f"duplicate kernel labels: {labels}")
    for s in specs:
        check_compatible(s.config, target)

    # run
    rsec = cp["run"] if cp.has_section("run") else {}
    _check_keys("run", "run", rsec)
    init_kind = rsec.get("init", "point")
    if init_kind == "point":
        mean = _floats(rsec.get("x0", "")) or (0.0,) * target.dim
        init = InitSpec("point", mean)
    else:
        mean = _floats(rsec.get("init_mean", "")) or (0.0,) * target.dim
        init = InitSpec(init_kind, mean, float(rsec.get("init_scale", "1.0")))
    if len(init.mean) != target.dim:
        raise ConfigError(f"initial point has dimension {len(init.mean)}, target needs {target.dim}")
    run = RunSpec(
        n_chains=int(rsec.get("n_chains", "1")),
        n_iters=int(rsec.get("n_iters", "1000")),
        burn_in_fraction=float(rsec.get("burn_in_fraction", "0.0")),
        master_seed=int(rsec.get("master_seed", "0")),
        init=init,
    )

    mode = exp.get("mode", "trajectory")
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; valid modes: {', '.join(MODES)}")
    if mode == "ensemble" and run.burn_in_fraction:
        raise ConfigError("burn-in applies to trajectory experiments only; ensembles keep every scheduled iterate")

    ssec = cp["schedule"] if cp.has_section("schedule") else {}
    _check_keys("schedule", "schedule", ssec)
    schedule = tuple(sorted({int(v) for v in _floats(ssec.get("iterations", ""))})) or (run.n_iters,)
    if schedule[0] < 0 or schedule[-1] > run.n_iters:
        raise ConfigError(f"schedule {list(schedule)} must lie within [0, {run.n_iters}]")

    grid = None
    if cp.has_section("grid"):
        axes = []
        for j in range(len(cp["grid"])):
            key = f"axis{j}"
            if key not in cp["grid"]:
                raise ConfigError(f"[grid] needs keys axis0..axis{len(cp['grid']) - 1}, missing {key}")
            lo, hi, n = _floats(cp["grid"][key])
            if n != int(n):
                raise ConfigError(f"[grid] {key}: bin count must be an integer")
            axes.append((lo, hi, int(n)))
        grid = GridSpec(tuple(axes))
        if grid.dim != target.dim:
            raise ConfigError(f"grid has {grid.dim} axes, target {target_id!r} has dimension {target.dim}")

    metrics = tuple(m for m in re.split(r"[,\s]+", exp.get("metrics", "")) if m)
    for m in metrics:
        if m not in METRICS:
            raise ConfigError(f"unknown metric {m!r}; valid metrics: {', '.join(METRICS)}")
    reference = exp.get("reference", "analytic_grid")
    if reference not in REFERENCES:
        raise ConfigError(f"unknown reference {reference!r}; valid references: {', '.join(REFERENCES)}")

    experiment_id = exp.get("id", "custom")
    return ExperimentConfig(
        experiment_id=experiment_id,
        target_id=target_id,
        target_params=tuple(params),
        kernels=tuple(specs),
        run=run,
        schedule=schedule,
        grid=grid,
        metrics=metrics,
        reference=reference,
        mode=mode,
        output_dir=exp.get("output_dir", f"out/{experiment_id}"),
        write_trajectories=_bool(exp.get("trajectories", "false")),
        write_histograms=_bool(exp.get("histograms", "true")),
        reference_step=float(exp.get("reference_step", "0.01")),
        reference_iters=int(exp.get("reference_iters", "2000")),
        reference_chains=int(exp.get("reference_chains", "2000")),
        scale=float(exp.get("scale", "1.0")),
        nominal_chains=int(exp.get("nominal_chains", str(run.n_chains))),
        nominal_iters=int(exp.get("nominal_iters", str(run.n_iters))),
        notes=exp.get("notes", ""),
    )


def _kernel_spec(label: str, variant: str, sec) -> KernelSpec:
    if variant not in Variant.__members__:
        valid = ", ".join(Variant.__members__)
        raise ConfigError(f"unknown kernel {variant!r} in [kernel {label}]; valid kernels: {valid}")
    if not sec.get("step"):
        raise ConfigError(f"[kernel {label}] needs a step")
    theta = sec.get("theta")
    scale = sec.get("rwm_scale")
    cfg = KernelConfig(
        variant=variant,
        step=float(sec["step"]),
        theta=None if theta is None else float(theta),
        selection=SelectionRule.parse(sec.get("selection", "min_norm")),
        rwm_scale=None if scale is None else float(scale),
    )
    x0 = _floats(sec["x0"]) if sec.get("x0") else None
    return KernelSpec(label=label, config=cfg, x0=x0)


def _join(values) -> str:
    return ", ".join(repr(float(v)) if isinstance(v, float) else str(v) for v in values)


def echo_config(cfg: ExperimentConfig) -> str:
    """Canonical configuration text; ``parse_config(echo_config(c)) == c``."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp["experiment"] = {
        "id": cfg.experiment_id,
        "mode": cfg.mode,
        "metrics": ", ".join(cfg.metrics),
        "reference": cfg.reference,
        "output_dir": cfg.output_dir,
        "trajectories": str(cfg.write_trajectories).lower(),
        "histograms": str(cfg.write_histograms).lower(),
        "reference_step": repr(cfg.reference_step),
        "reference_iters": str(cfg.reference_iters),
        "reference_chains": str(cfg.reference_chains),
        "scale": repr(cfg.scale),
        "nominal_chains": str(cfg.nominal_chains),
        "nominal_iters": str(cfg.nominal_iters),
    }
    if cfg.notes:
        cp["experiment"]["notes"] = cfg.notes
    target = {"id": cfg.target_id}
    for key, value in cfg.target_params:
        target[key] = _join(value) if isinstance(value, tuple) else repr(value)
    cp["target"] = target
    run = cfg.run
    rsec = {
        "n_chains": str(run.n_chains),
        "n_iters": str(run.n_iters),
        "burn_in_fraction": repr(run.burn_in_fraction),
        "master_seed": str(run.master_seed),
        "init": run.init.kind,
    }
    if run.init.kind == "point":
        rsec["x0"] = _join(run.init.mean)
    else:
        rsec["init_mean"] = _join(run.init.mean)
        rsec["init_scale"] = repr(run.init.scale)
    cp["run"] = rsec
    cp["schedule"] = {"iterations": ", ".join(str(k) for k in cfg.schedule)}
    if cfg.grid is not None:
        cp["grid"] = {f"axis{j}": f"{lo!r}, {hi!r}, {n}" for j, (lo, hi, n) in enumerate(cfg.grid.axes)}
    for spec in cfg.kernels:
        k = spec.config
        sec = {"variant": k.variant.value, "step": repr(k.step), "selection": k.selection.value}
        if k.theta is not None:
            sec["theta"] = repr(k.theta)
        if k.variant is Variant.RWM:
            sec["rwm_scale"] = repr(k.rwm_scale)
        if spec.x0 is not None:
            sec["x0"] = _join(spec.x0)
        cp[f"kernel {spec.label}"] = sec
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()
