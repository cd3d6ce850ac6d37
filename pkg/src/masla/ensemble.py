"""Single trajectories and ensembles of independent chains.

Chain ``i`` of an ensemble with master seed ``s`` draws from a Philox
counter-based generator keyed by ``derive_seed(s, i) = (s << 64) | i``, so
streams of different chains never share a key and any chain can be
replayed alone with :func:`run_chain`. Uniforms are drawn in blocks; for a
given key the sequence is the same as drawing step by step.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .kernel import Kernel, KernelConfig, uniform_to_normal
from .potential import Target

__all__ = [
    "InitSpec",
    "RunSpec",
    "Trajectory",
    "SnapshotSet",
    "derive_seed",
    "chain_generator",
    "run_chain",
    "run_ensemble",
    "acceptance_rate",
    "burn_in",
]

_MASK64 = (1 << 64) - 1
# uniforms held in memory per block: block_len * n_chains * n_draws
_BLOCK_BUDGET = 1 << 20


def derive_seed(master_seed: int, index: int) -> int:
    """128-bit Philox key for chain ``index`` of an ensemble."""
    if index < 0 or index > _MASK64:
        raise ValueError(f"chain index out of range: {index}")
    return ((int(master_seed) & _MASK64) << 64) | int(index)


def chain_generator(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(seed) & ((1 << 128) - 1)))


@dataclass(frozen=True)
class InitSpec:
    """Initial law: a point mass at ``mean`` or ``N(mean, scale^2 I)``."""

    kind: str = "point"
    mean: tuple[float, ...] = (0.0,)
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("point", "gaussian"):
            raise ValueError(f"init must be 'point' or 'gaussian', got {self.kind!r}")
        object.__setattr__(self, "mean", tuple(float(m) for m in np.atleast_1d(self.mean)))
        if self.kind == "gaussian" and not self.scale > 0:
            raise ValueError("gaussian init needs scale > 0")
        object.__setattr__(self, "scale", float(self.scale))


@dataclass(frozen=True)
class RunSpec:
    n_chains: int
    n_iters: int
    burn_in_fraction: float = 0.0
    master_seed: int = 0
    init: InitSpec = field(default_factory=InitSpec)

    def __post_init__(self):
        if self.n_chains < 1:
            raise ValueError("n_chains must be positive")
        if self.n_iters < 0:
            raise ValueError("n_iters must be non-negative")
        if not 0.0 <= self.burn_in_fraction < 1.0:
            raise ValueError("burn_in_fraction must lie in [0, 1)")
        if not 0 <= self.master_seed <= _MASK64:
            raise ValueError("master_seed must be an unsigned 64-bit integer")


@dataclass(frozen=True, eq=False)
class Trajectory:
    positions: np.ndarray
    accepts: int
    kernel_id: str
    target_id: str
    seed: int
    adjusted: bool = True

    @property
    def n_iters(self) -> int:
        return self.positions.shape[0] - 1


@dataclass(frozen=True, eq=False)
class SnapshotSet:
    """Positions of every chain at each scheduled iteration.

    ``snapshots[j, i]`` is chain ``i`` at iteration ``schedule[j]``.
    """

    schedule: tuple[int, ...]
    snapshots: np.ndarray
    accepts: np.ndarray
    init: InitSpec

    def at(self, k: int) -> np.ndarray:
        return self.snapshots[self.schedule.index(k)]


def _initial_points(init: InitSpec, gens, dim: int) -> np.ndarray:
    mean = np.broadcast_to(np.asarray(init.mean, dtype=float), (dim,))
    if init.kind == "point":
        return np.tile(mean, (len(gens), 1))
    z = np.stack([uniform_to_normal(g.random(dim)) for g in gens])
    return mean + init.scale * z


def _simulate(kern: Kernel, X: np.ndarray, gens, n_iters: int, record):
    """Advance a batch of chains; ``record`` is a sorted array of iterations
    to keep, or ``None`` to keep every iterate."""
    n, c = len(gens), kern.n_draws
    u0 = np.array([g.random() for g in gens]) if kern.random_selection else None
    U, D = kern.initial(X, u0)
    keep_all = record is None
    if keep_all:
        out = np.empty((n_iters + 1, n, kern.dim))
        slot = {k: k for k in range(n_iters + 1)}
    else:
        out = np.empty((len(record), n, kern.dim))
        slot = {int(k): j for j, k in enumerate(record)}
    if 0 in slot:
        out[slot[0]] = X
    accepts = np.zeros(n, dtype=np.int64)
    block = max(1, _BLOCK_BUDGET // max(1, n * c))
    k = 0
    while k < n_iters:
        b = min(block, n_iters - k)
        draws = np.stack([g.random((b, c)) for g in gens], axis=1)
        for j in range(b):
            X, U, D, acc = kern.advance(X, U, D, draws[j])
            accepts += acc
            k += 1
            if k in slot:
                out[slot[k]] = X
    if not kern.adjusted:
        accepts[:] = 0
    return out, accepts


def run_chain(config: KernelConfig, target: Target, x0, n_iters: int, seed: int) -> Trajectory:
    """One chain of ``n_iters`` transitions from ``x0``; deterministic in ``seed``."""
    if n_iters < 0:
        raise ValueError("n_iters must be non-negative")
    kern = Kernel(config, target)
    X = np.atleast_1d(np.asarray(x0, dtype=float)).reshape(1, target.dim)
    out, acc = _simulate(kern, X, [chain_generator(seed)], n_iters, None)
    return Trajectory(
        positions=out[:, 0, :],
        accepts=int(acc[0]),
        kernel_id=config.variant.value,
        target_id=target.id,
        seed=int(seed),
        adjusted=kern.adjusted,
    )


def _run_block(config, target, run: RunSpec, record, lo: int, hi: int):
    kern = Kernel(config, target)
    gens = [chain_generator(derive_seed(run.master_seed, i)) for i in range(lo, hi)]
    X = _initial_points(run.init, gens, target.dim)
    return _simulate(kern, X, gens, run.n_iters, record)


def run_ensemble(
    config: KernelConfig,
    target: Target,
    run: RunSpec,
    schedule,
    workers: int = 1,
) -> SnapshotSet:
    """Run ``run.n_chains`` independent chains and keep the scheduled iterates.

    Gaussian initial points consume ``dim`` uniforms from each chain's stream
    before any transition. The result does not depend on ``workers``.
    """
    sched = sorted({int(k) for k in schedule})
    if not sched:
        raise ValueError("schedule must contain at least one iteration")
    if sched[0] < 0 or sched[-1] > run.n_iters:
        raise ValueError(f"schedule must lie in [0, {run.n_iters}]")
    Kernel(config, target)  # surface configuration errors before spawning workers
    record = np.array(sched)
    workers = max(1, min(int(workers), run.n_chains))
    bounds = np.linspace(0, run.n_chains, workers + 1).astype(int)
    parts = list(zip(bounds[:-1], bounds[1:]))
    if workers == 1:
        results = [_run_block(config, target, run, record, lo, hi) for lo, hi in parts]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_block, config, target, run, record, int(lo), int(hi)) for lo, hi in parts]
            results = [f.result() for f in futures]
    snaps = np.concatenate([r[0] for r in results], axis=1)
    accepts = np.concatenate([r[1] for r in results])
    return SnapshotSet(schedule=tuple(sched), snapshots=snaps, accepts=accepts, init=run.init)


def acceptance_rate(trajectory: Trajectory) -> float:
    """Fraction of accepted proposals; 1.0 for kernels without rejection."""
    if trajectory.n_iters == 0:
        raise ValueError("acceptance rate of a zero-length trajectory is undefined")
    if not trajectory.adjusted:
        return 1.0
    return trajectory.accepts / trajectory.n_iters


def burn_in(trajectory: Trajectory, fraction: float) -> np.ndarray:
    """Iterates after discarding the first ``floor(fraction * n_iters)`` transitions.

    The starting point is never retained, so ``n_iters - floor(fraction * n_iters)``
    samples remain.
    """
    if not 0.0 <= fraction < 1.0:
        raise ValueError("burn-in fraction must lie in [0, 1)")
    drop = math.floor(fraction * trajectory.n_iters)
    return trajectory.positions[1 + drop :]
