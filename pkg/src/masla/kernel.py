"""Transition kernels: Metropolis-adjusted and unadjusted Langevin variants.

All kernels are evaluated on batches of chains (arrays of shape ``(n, d)``)
by :class:`Kernel`; the single-chain functions below wrap a batch of one, so
a chain advanced with :func:`step` and the same chain advanced inside an
ensemble follow identical arithmetic.

Randomness is consumed as standard uniforms, per step and in this order:
``d`` uniforms mapped to the Gaussian noise, one uniform for the
accept/reject test (adjusted kernels only), and one uniform for the
set-valued selection (``uniform_random`` rule only).
"""

from __future__ import annotations

import enum
import functools
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import ndtri

from .potential import ProxPart, SelectionRule, Target, Unsupported

__all__ = [
    "Variant",
    "ADJUSTED",
    "KernelConfig",
    "ConfigurationError",
    "ChainState",
    "Kernel",
    "check_compatible",
    "uniform_to_normal",
    "propose",
    "log_proposal_density",
    "log_acceptance",
    "step",
]


class ConfigurationError(ValueError):
    """Kernel parameters are invalid for the chosen target."""


class Variant(str, enum.Enum):
    MASLA = "MASLA"
    MALA = "MALA"
    RWM = "RWM"
    PMALA = "PMALA"
    ULA = "ULA"
    USLA = "USLA"
    ProxSub = "ProxSub"
    GradSub = "GradSub"
    MYULA = "MYULA"

    @classmethod
    def parse(cls, value) -> "Variant":
        try:
            return cls(value)
        except ValueError:
            valid = ", ".join(v.value for v in cls)
            raise ValueError(f"unknown kernel {value!r}; valid kernels: {valid}") from None


ADJUSTED = frozenset({Variant.MASLA, Variant.MALA, Variant.RWM, Variant.PMALA})
_LANGEVIN_MEAN = frozenset({Variant.MASLA, Variant.MALA, Variant.PMALA, Variant.ULA, Variant.USLA})


@dataclass(frozen=True)
class KernelConfig:
    """Sampler variant and its parameters.

    ``step`` is the Langevin step size (gamma, or tau for the composite
    kernels). ``theta`` is the Moreau-Yosida parameter used by MYULA.
    ``rwm_scale`` defaults to ``sqrt(2 * step)`` for RWM.
    """

    variant: Variant
    step: float
    theta: float | None = None
    selection: SelectionRule = SelectionRule.MIN_NORM
    rwm_scale: float | None = None

    def __post_init__(self):
        variant = Variant.parse(self.variant)
        object.__setattr__(self, "variant", variant)
        object.__setattr__(self, "selection", SelectionRule.parse(self.selection))
        step = float(self.step)
        if not (np.isfinite(step) and step > 0):
            raise ConfigurationError(f"step must be positive, got {self.step}")
        object.__setattr__(self, "step", step)
        if variant is Variant.MYULA:
            if self.theta is None or not float(self.theta) > 0:
                raise ConfigurationError(f"MYULA needs theta > 0, got {self.theta}")
            object.__setattr__(self, "theta", float(self.theta))
        if variant is Variant.RWM:
            scale = np.sqrt(2 * step) if self.rwm_scale is None else float(self.rwm_scale)
            if not scale > 0:
                raise ConfigurationError(f"rwm_scale must be positive, got {self.rwm_scale}")
            object.__setattr__(self, "rwm_scale", float(scale))

    @property
    def adjusted(self) -> bool:
        return self.variant in ADJUSTED

    def with_step(self, step: float) -> "KernelConfig":
        return replace(self, step=step, rwm_scale=None if self.variant is Variant.RWM else self.rwm_scale)


def check_compatible(config: KernelConfig, target: Target) -> None:
    """Raise if ``config`` cannot run on ``target``."""
    v = config.variant
    if v in (Variant.MALA, Variant.ULA) and not target.smooth:
        raise Unsupported(
            f"{v.value} needs a differentiable potential; target {target.id!r} is not "
            f"(use {'MASLA' if v is Variant.MALA else 'USLA'})"
        )
    if v is Variant.PMALA and (ProxPart.FULL not in target.prox_parts or not target.convex):
        raise Unsupported(f"PMALA needs a convex target with a full proximal map; {target.id!r} has none")
    if v in (Variant.ProxSub, Variant.GradSub, Variant.MYULA) and target.composite is None:
        raise Unsupported(f"{v.value} needs a composite F + G(K.) target; {target.id!r} is not one")
    if v is Variant.MYULA:
        bound = config.theta / (config.theta * target.composite.grad_lipschitz + 1)
        if config.step > bound:
            raise ConfigurationError(
                f"MYULA step {config.step} exceeds theta/(theta*L + 1) = {bound:.6g} "
                f"for theta={config.theta}, L={target.composite.grad_lipschitz}"
            )


_HALF_ULP = 2.0**-54


def uniform_to_normal(u: np.ndarray) -> np.ndarray:
    """Map uniforms on [0, 1) (multiples of 2**-53) to standard normals.

    Each uniform is moved to the center of its 2**-53 cell so the result is
    always finite; the upper half is mirrored to keep full precision.
    """
    u = np.asarray(u, dtype=float)
    lower = u < 0.5
    z = np.empty_like(u)
    z[lower] = ndtri(u[lower] + _HALF_ULP)
    z[~lower] = -ndtri((1.0 - u[~lower]) - _HALF_ULP)
    return z


class Kernel:
    """A :class:`KernelConfig` bound to a target, evaluated on chain batches."""

    def __init__(self, config: KernelConfig, target: Target):
        check_compatible(config, target)
        self.config = config
        self.target = target
        self.variant = config.variant
        self.h = config.step
        self.dim = target.dim
        self.adjusted = config.adjusted
        self.rule = config.selection
        self.random_selection = self.rule is SelectionRule.UNIFORM_RANDOM
        self.n_draws = self.dim + int(self.adjusted) + int(self.random_selection)
        self._noise_scale = np.sqrt(2 * self.h)
        self._log_norm = -0.5 * self.dim * np.log(
            2 * np.pi * (config.rwm_scale**2 if self.variant is Variant.RWM else 2 * self.h)
        )

    # -- drift and proposal -------------------------------------------------

    def drift(self, X: np.ndarray, u=None) -> np.ndarray:
        """Kernel-specific drift at ``X``, cached in chain states."""
        v, t = self.variant, self.target
        if v in (Variant.MASLA, Variant.USLA, Variant.MALA, Variant.ULA):
            return t.select(X, self.rule, u)
        if v is Variant.PMALA:
            return (X - t.prox(ProxPart.FULL, X, self.h)) / self.h
        c = t.composite
        if v in (Variant.ProxSub, Variant.GradSub):
            return c.apply_Kt(c.select_G(c.apply_K(X), self.rule, u))
        if v is Variant.MYULA:
            theta = self.config.theta
            return c.F_grad(X) + (X - c.prox_GK(X, theta)) / theta
        return np.zeros_like(X)

    def mean(self, X: np.ndarray, D: np.ndarray) -> np.ndarray:
        """Center of the Gaussian proposal from ``X`` (adjusted kernels)."""
        if self.variant is Variant.RWM:
            return X
        return X - self.h * D

    def candidate(self, X: np.ndarray, D: np.ndarray, Z: np.ndarray) -> np.ndarray:
        v, h = self.variant, self.h
        if v in _LANGEVIN_MEAN:
            return X - h * D + self._noise_scale * Z
        if v is Variant.RWM:
            return X + self.config.rwm_scale * Z
        c = self.target.composite
        if v is Variant.ProxSub:
            return c.prox_F(X - h * D, h) + self._noise_scale * Z
        if v is Variant.GradSub:
            half = X - h * D
            return half - h * c.F_grad(X) + self._noise_scale * Z
        theta = self.config.theta
        return (1 - h / theta) * X - h * c.F_grad(X) + (h / theta) * c.prox_GK(X, theta) + self._noise_scale * Z

    def log_q(self, X: np.ndarray, D: np.ndarray, Y: np.ndarray) -> np.ndarray:
        """Log density of moving from ``X`` (with drift ``D``) to ``Y``."""
        r = Y - self.mean(X, D)
        var = self.config.rwm_scale**2 if self.variant is Variant.RWM else 2 * self.h
        return self._log_norm - (r * r).sum(axis=1) / (2 * var)

    def log_alpha(self, X, Ux, Dx, Y, Uy, Dy) -> np.ndarray:
        forward = self.log_q(X, Dx, Y)
        reverse = self.log_q(Y, Dy, X)
        return np.minimum(0.0, (Ux - Uy) + (reverse - forward))

    # -- transitions --------------------------------------------------------

    def initial(self, X: np.ndarray, u_select=None):
        """Cached potential and drift at starting points."""
        return self.target.potential(X), self.drift(X, u_select)

    def advance(self, X, Ux, Dx, draws):
        """One transition for every chain; ``draws`` is ``(n, n_draws)`` uniforms.

        Returns the new ``(X, U, D)`` and a boolean array of accepted moves.
        """
        d = self.dim
        Z = uniform_to_normal(draws[:, :d])
        u_sel = draws[:, -1] if self.random_selection else None
        with np.errstate(over="ignore", invalid="ignore"):
            Y = self.candidate(X, Dx, Z)
            Uy = self.target.potential(Y)
            Dy = self.drift(Y, u_sel)
            if not self.adjusted:
                return Y, Uy, Dy, np.ones(len(X), dtype=bool)
            la = self.log_alpha(X, Ux, Dx, Y, Uy, Dy)
            acc = draws[:, d] < np.exp(la)
        X = np.where(acc[:, None], Y, X)
        Ux = np.where(acc, Uy, Ux)
        Dx = np.where(acc[:, None], Dy, Dx)
        return X, Ux, Dx, acc


@functools.lru_cache(maxsize=64)
def _kernel(config: KernelConfig, target: Target) -> Kernel:
    return Kernel(config, target)


@dataclass(frozen=True, eq=False)
class ChainState:
    """Current point of one chain with its cached potential and drift."""

    position: np.ndarray
    cached_potential: float
    cached_drift: np.ndarray
    iteration: int = 0
    accepts: int = 0

    @classmethod
    def start(cls, config: KernelConfig, target: Target, x0, rng=None) -> "ChainState":
        """Initial state at ``x0``.

        With the ``uniform_random`` rule one uniform is drawn from ``rng``
        for the initial drift.
        """
        kern = _kernel(config, target)
        X = np.atleast_1d(np.asarray(x0, dtype=float)).reshape(1, target.dim)
        u = None
        if kern.random_selection:
            if rng is None:
                raise ValueError("uniform_random selection needs a random generator")
            u = np.array([rng.random()])
        U, D = kern.initial(X, u)
        return cls(X[0], float(U[0]), D[0])


def propose(config: KernelConfig, target: Target, state: ChainState, noise) -> np.ndarray:
    """Candidate next point from ``state`` given a standard-normal ``noise``."""
    kern = _kernel(config, target)
    Z = np.atleast_1d(np.asarray(noise, dtype=float)).reshape(1, target.dim)
    with np.errstate(over="ignore", invalid="ignore"):
        return kern.candidate(state.position[None, :], state.cached_drift[None, :], Z)[0]


def _adjusted_kernel(config, target) -> Kernel:
    kern = _kernel(config, target)
    if not kern.adjusted:
        raise Unsupported(f"{config.variant.value} has no accept/reject step")
    return kern


def _drift_at(kern: Kernel, X):
    # uniform_random is evaluated at the midpoint of the set; points where
    # the set is not a singleton have Lebesgue measure zero
    u = np.array([0.5]) if kern.random_selection else None
    return kern.drift(X, u)


def log_proposal_density(config: KernelConfig, target: Target, frm, to) -> float:
    """log q(frm, to) for an adjusted kernel."""
    kern = _adjusted_kernel(config, target)
    X = np.atleast_1d(np.asarray(frm, dtype=float)).reshape(1, target.dim)
    Y = np.atleast_1d(np.asarray(to, dtype=float)).reshape(1, target.dim)
    return float(kern.log_q(X, _drift_at(kern, X), Y)[0])


def log_acceptance(config: KernelConfig, target: Target, x, y) -> float:
    """log alpha(x, y) = min(0, U(x) - U(y) + log q(y, x) - log q(x, y))."""
    kern = _adjusted_kernel(config, target)
    X = np.atleast_1d(np.asarray(x, dtype=float)).reshape(1, target.dim)
    Y = np.atleast_1d(np.asarray(y, dtype=float)).reshape(1, target.dim)
    U = target.potential
    return float(kern.log_alpha(X, U(X), _drift_at(kern, X), Y, U(Y), _drift_at(kern, Y))[0])


def step(config: KernelConfig, target: Target, state: ChainState, rng: np.random.Generator) -> ChainState:
    """Advance one chain by one transition, drawing uniforms from ``rng``."""
    kern = _kernel(config, target)
    draws = rng.random(kern.n_draws)[None, :]
    X, U, D, acc = kern.advance(
        state.position[None, :], np.array([state.cached_potential]), state.cached_drift[None, :], draws
    )
    accepted = bool(acc[0]) and kern.adjusted
    return ChainState(
        position=X[0],
        cached_potential=float(U[0]),
        cached_drift=D[0],
        iteration=state.iteration + 1,
        accepts=state.accepts + int(accepted),
    )
