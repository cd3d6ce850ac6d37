"""Experiment orchestration: run kernels, score them, write plot-ready files.

Every data file is comma-separated text with numbers in 17-significant-digit
scientific notation, so equal configs and seeds give byte-identical files.
Outputs per kernel ``<label>``:

* ``curve_<label>.csv`` -- ``iteration,kernel,metric,value``
* ``histogram_<label>.csv`` -- one bin-center column per dimension, ``mass``
* ``trajectory_<label>.csv`` -- ``chain,iteration,x0[,x1]`` (optional)

plus ``reference_histogram.csv`` and ``manifest.json``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, KernelSpec, echo_config, parse_config
from .ensemble import InitSpec, RunSpec, derive_seed, run_ensemble
from .kernel import KernelConfig, Variant
from .metrics import (
    W2_POINT_CAP,
    EmpiricalDistribution,
    GridSpec,
    WeightedPointSet,
    build_histogram,
    distance_curve,
    quantile_points,
    sample_points,
    subsample,
)
from .potential import reference_density

__all__ = ["Manifest", "run_experiment", "FIGURES", "figure_config", "emit_figure_data"]

logger = logging.getLogger(__name__)

# key offset for streams that must not collide with any chain of the run
_REFERENCE_STREAM = 1 << 63


@dataclass
class Manifest:
    experiment_id: str
    config: str
    master_seed: int
    files: dict[str, str]
    timings: dict[str, float]
    version: str
    sizes: dict[str, object]
    results: dict[str, dict[str, list[tuple[int, float]]]] = field(default_factory=dict)
    acceptance: dict[str, float] = field(default_factory=dict)
    plots: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def _fmt(v: float) -> str:
    return f"{float(v):.16e}"


def _slug(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", label)


def _write(path: Path, header: str, rows) -> None:
    with path.open("w", newline="\n") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _histogram_rows(hist: EmpiricalDistribution):
    grid = hist.grid
    try:
        masses = hist.masses
    except ValueError:
        masses = np.full(grid.shape, np.nan)
    mesh = np.meshgrid(*grid.centers(), indexing="ij")
    cols = [m.ravel() for m in mesh] + [np.asarray(masses).ravel()]
    for vals in zip(*cols):
        yield [_fmt(v) for v in vals]


def _histogram_header(dim: int) -> str:
    return ",".join([f"x{j}" for j in range(dim)] + ["mass"])


class _Reference:
    """Reference distribution for one experiment, built lazily per metric."""

    def __init__(self, cfg: ExperimentConfig, target, grid: GridSpec, workers: int):
        self.cfg, self.target, self.grid, self.workers = cfg, target, grid, workers
        self._hist = None
        self._pool = None

    def _long_run(self) -> np.ndarray:
        if self._pool is None:
            cfg = self.cfg
            run = RunSpec(
                n_chains=cfg.reference_chains,
                n_iters=cfg.reference_iters,
                master_seed=(cfg.run.master_seed ^ _REFERENCE_STREAM),
                init=cfg.run.init,
            )
            kc = KernelConfig(Variant.MASLA, cfg.reference_step)
            snaps = run_ensemble(kc, self.target, run, [run.n_iters], workers=self.workers)
            self._pool = snaps.snapshots[-1]
        return self._pool

    def histogram(self) -> EmpiricalDistribution:
        if self._hist is None:
            if self.cfg.reference == "analytic_grid":
                self._hist = reference_density(self.target, self.grid)
            else:
                self._hist = build_histogram(self._long_run(), self.grid)
        return self._hist

    def points(self, n: int) -> WeightedPointSet:
        """Reference point cloud to compare against ``n`` samples."""
        if self.cfg.reference == "long_run_pool":
            pts = self._long_run()
            if self.target.dim > 1:
                pts = subsample(pts, seed=self.cfg.run.master_seed)
            return WeightedPointSet.uniform(pts)
        if self.target.dim == 1:
            return WeightedPointSet.uniform(quantile_points(reference_density(self.target, self.grid), n))
        fine = reference_density(self.target, self.target.default_grid)
        seed = derive_seed(self.cfg.run.master_seed, _REFERENCE_STREAM)
        return WeightedPointSet.uniform(sample_points(fine, min(n, W2_POINT_CAP), seed=seed))


class _Snapshots:
    """Minimal stand-in for a SnapshotSet when scoring pooled samples."""

    def __init__(self, schedule, snapshots):
        self.schedule, self.snapshots = schedule, snapshots


def _score(cfg, ref: _Reference, schedule, snapshots) -> dict[str, list[tuple[int, float]]]:
    out = {}
    snaps = _Snapshots(schedule, snapshots)
    for metric in cfg.metrics:
        if metric == "tv":
            out[metric] = distance_curve(snaps, ref.histogram(), "tv")
        else:
            n = len(snapshots[0])
            out[metric] = distance_curve(snaps, ref.points(n), "w2", seed=cfg.run.master_seed)
    return out


def _run_kernel(cfg: ExperimentConfig, spec: KernelSpec, target, workers: int):
    """Returns (schedule, per-schedule samples, full trajectories or None, accept rate)."""
    run = cfg.run
    if spec.x0 is not None:
        run = replace(run, init=InitSpec("point", spec.x0))
    if cfg.mode == "ensemble":
        snaps = run_ensemble(spec.config, target, run, cfg.schedule, workers=workers)
        rate = float(snaps.accepts.mean() / run.n_iters) if spec.config.adjusted and run.n_iters else 1.0
        return list(snaps.schedule), list(snaps.snapshots), None, rate
    everything = run_ensemble(spec.config, target, run, range(run.n_iters + 1), workers=workers)
    traj = everything.snapshots  # (n_iters + 1, n_chains, d)
    drop = int(np.floor(run.burn_in_fraction * run.n_iters))
    pooled = traj[1 + drop :].reshape(-1, target.dim)
    rate = float(everything.accepts.mean() / run.n_iters) if spec.config.adjusted and run.n_iters else 1.0
    return [run.n_iters], [pooled], traj, rate


def run_experiment(cfg: ExperimentConfig, output_dir=None, workers: int = 1, plot: bool = False) -> Manifest:
    """Run every kernel of ``cfg`` and write its data files and manifest."""
    out = Path(output_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    target = cfg.make_target()
    grid = cfg.effective_grid()
    ref = _Reference(cfg, target, grid, workers)
    files, timings, results, acceptance = {}, {}, {}, {}

    if cfg.write_histograms:
        path = out / "reference_histogram.csv"
        _write(path, _histogram_header(target.dim), _histogram_rows(ref.histogram()))
        files[path.name] = _sha256(path)

    for spec in cfg.kernels:
        slug = _slug(spec.label)
        t0 = time.perf_counter()
        schedule, samples, traj, rate = _run_kernel(cfg, spec, target, workers)
        timings[spec.label] = time.perf_counter() - t0
        acceptance[spec.label] = rate
        logger.info("%s: %.2fs, acceptance %.3f", spec.label, timings[spec.label], rate)

        curves = _score(cfg, ref, schedule, samples)
        results[spec.label] = curves
        path = out / f"curve_{slug}.csv"
        rows = (
            [str(k), spec.label, metric, _fmt(v)]
            for metric, curve in curves.items()
            for k, v in curve
        )
        _write(path, "iteration,kernel,metric,value", rows)
        files[path.name] = _sha256(path)

        if cfg.write_histograms:
            path = out / f"histogram_{slug}.csv"
            _write(path, _histogram_header(target.dim), _histogram_rows(build_histogram(samples[-1], grid)))
            files[path.name] = _sha256(path)

        if cfg.write_trajectories:
            if traj is None:
                traj = np.stack(samples)
                iters = schedule
            else:
                iters = range(traj.shape[0])
            path = out / f"trajectory_{slug}.csv"
            header = ",".join(["chain", "iteration"] + [f"x{j}" for j in range(target.dim)])
            rows = (
                [str(i), str(k)] + [_fmt(v) for v in traj[j, i]]
                for i in range(traj.shape[1])
                for j, k in enumerate(iters)
            )
            _write(path, header, rows)
            files[path.name] = _sha256(path)

    manifest = Manifest(
        experiment_id=cfg.experiment_id,
        config=echo_config(cfg),
        master_seed=cfg.run.master_seed,
        files=files,
        timings=timings,
        version=__version__,
        sizes={
            "scale": cfg.scale,
            "nominal": {"n_chains": cfg.nominal_chains, "n_iters": cfg.nominal_iters},
            "effective": {"n_chains": cfg.run.n_chains, "n_iters": cfg.run.n_iters},
        },
        results={k: {m: [list(p) for p in c] for m, c in v.items()} for k, v in results.items()},
        acceptance=acceptance,
    )
    if plot:
        from .plotting import render_experiment

        manifest.plots = render_experiment(out, manifest)
    (out / "manifest.json").write_text(manifest.to_json() + "\n")
    return manifest


# -- figure catalogue ---------------------------------------------------------

FIGURE_SEED = 2025
TV_L2_TAUS = (1e-3, 1e-4, 1e-5)
# iteration count of the tv_l2 convergence figures; override with n_iters
TV_L2_ITERS = 5000
TV_L2_SCHEDULE = (0, 1, 2, 5, 10, 20, 50, 100, 200, 500, 1000, 2000, 5000)

_FIG1 = f"""
[experiment]
id = fig1
mode = trajectory
trajectories = true
histograms = false
notes = quartic trajectories; MALA from 0, ULA from 5 to expose the overshoot
[target]
id = quartic
[run]
n_iters = 10000
master_seed = {FIGURE_SEED}
[kernel MALA]
step = 0.1
x0 = 0.0
[kernel ULA]
step = 0.1
x0 = 5.0
"""

_FIG2 = f"""
[experiment]
id = fig2
mode = trajectory
metrics = tv, w2
[target]
id = quartic
[run]
n_iters = 100000
burn_in_fraction = 0.2
master_seed = {FIGURE_SEED}
x0 = 0.0
[kernel MALA]
step = 0.001
[kernel ULA]
step = 0.001
"""

_FIG5 = f"""
[experiment]
id = fig5
mode = trajectory
metrics = tv, w2
[target]
id = abs_quad
[run]
n_iters = 100000
burn_in_fraction = 0.2
master_seed = {FIGURE_SEED}
x0 = 0.0
[grid]
axis0 = -3.0, 3.0, 400
[kernel USLA]
step = 0.1
[kernel MASLA]
step = 0.1
"""


def _tv_l2_figure(fig_id: str, variants, metric: str, grid: str, n_iters: int) -> str:
    schedule = ", ".join(str(k) for k in TV_L2_SCHEDULE if k <= n_iters)
    head = f"""
[experiment]
id = {fig_id}
mode = ensemble
metrics = {metric}
[target]
id = tv_l2
[run]
n_chains = 10000
n_iters = {n_iters}
master_seed = {FIGURE_SEED}
x0 = -1.0, 1.0
[schedule]
iterations = {schedule}
"""
    if grid:
        head += f"[grid]\n{grid}\n"
    for tau in TV_L2_TAUS:
        for v in variants:
            head += f"[kernel {v} tau={tau:g}]\nvariant = {v}\nstep = {tau!r}\n"
            if v == "MYULA":
                head += "theta = 0.01\n"
    return head


FIGURES = {
    "fig1": "quartic: MALA vs ULA trajectories, step 0.1, 1e4 iterations",
    "fig2": "quartic: MALA vs ULA histograms, step 0.001, 1e5 iterations",
    "fig3": "tv_l2: W2 convergence of MASLA, GradSub, ProxSub at three step sizes",
    "fig4": "tv_l2: TV convergence of MASLA, ProxSub, PMALA, MYULA at three step sizes",
    "fig5": "abs_quad: USLA vs MASLA, step 0.1, 1e5 iterations, 20% burn-in",
}


def figure_config(fig_id: str, n_iters: int | None = None) -> ExperimentConfig:
    """Pre-registered configuration of a catalogue figure."""
    if fig_id == "fig1":
        text = _FIG1
    elif fig_id == "fig2":
        text = _FIG2
    elif fig_id == "fig5":
        text = _FIG5
    elif fig_id == "fig3":
        text = _tv_l2_figure("fig3", ("MASLA", "GradSub", "ProxSub"), "w2", "", n_iters or TV_L2_ITERS)
    elif fig_id == "fig4":
        text = _tv_l2_figure(
            "fig4", ("MASLA", "ProxSub", "PMALA", "MYULA"), "tv",
            "axis0 = -4.0, 4.0, 16\naxis1 = -4.0, 4.0, 16", n_iters or TV_L2_ITERS,
        )
    else:
        raise ConfigError(f"unknown figure {fig_id!r}; valid figures: {', '.join(FIGURES)}")
    if n_iters is not None and fig_id not in ("fig3", "fig4"):
        cfg = parse_config(text)
        return replace(cfg, run=replace(cfg.run, n_iters=n_iters), nominal_iters=n_iters,
                       schedule=tuple(k for k in cfg.schedule if k <= n_iters) or (n_iters,))
    return parse_config(text)


def emit_figure_data(fig_id: str, output_dir=None, scale: float = 1.0, n_iters: int | None = None,
                     workers: int = 1, plot: bool = False) -> Manifest:
    """Run a catalogue figure, optionally scaled down, and write its files."""
    cfg = figure_config(fig_id, n_iters)
    if scale != 1.0:
        cfg = cfg.scaled(scale)
    return run_experiment(cfg, output_dir or f"out/{fig_id}", workers=workers, plot=plot)
