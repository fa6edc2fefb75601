"""Tabular iteration schemes: explicit MDVI, Munchausen VI, BAL and Expected Sarsa.

Every scheme is driven by :func:`run_scheme`, which records one
:class:`IterationRecord` per iterate ``Psi_k`` (k = 0..K). Record ``k`` holds
the greedy policy of ``Psi_k`` (the policy used to build ``Psi_{k+1}``) and
the diagnostics of that transition.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from . import bounding
from .bounding import BoundingFn, validate_bounding
from .mdp import TabularMdp
from .soft_ops import (
    RegParams,
    entropy,
    greedy_policy,
    kl_divergence,
    regularized_bellman,
    regularized_greedy,
    soft_advantage,
    soft_value,
)


class Scheme(str, Enum):
    MDVI_EXPLICIT = "mdvi"
    MVI = "mvi"
    BAL = "bal"
    EXPECTED_SARSA = "expected_sarsa"


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class NoiseSpec:
    distribution: str = "uniform"
    magnitude: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.distribution not in ("uniform", "gaussian"):
            raise ValueError(f"unknown noise distribution {self.distribution!r}")
        if self.magnitude < 0:
            raise ValueError("noise magnitude must be non-negative")

    def sample(self, rng: np.random.Generator, shape) -> np.ndarray:
        if self.distribution == "uniform":
            return rng.uniform(-self.magnitude, self.magnitude, size=shape)
        return rng.normal(0.0, self.magnitude, size=shape)


@dataclass(frozen=True, eq=False)
class PsiInit:
    """Initial table: ``zeros``, ``uniform`` in (-magnitude, magnitude),
    ``uniform_vmax`` in (-V^tau_max, V^tau_max), or an ``explicit`` table."""

    kind: str = "zeros"
    magnitude: float = 0.0
    table: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("zeros", "uniform", "uniform_vmax", "explicit"):
            raise ValueError(f"unknown psi_init {self.kind!r}")
        if self.kind == "explicit" and self.table is None:
            raise ValueError("explicit psi_init needs a table")

    def draw(self, mdp: TabularMdp, params: RegParams, rng: np.random.Generator) -> np.ndarray:
        shape = (mdp.num_states, mdp.num_actions)
        if self.kind == "zeros":
            return np.zeros(shape)
        if self.kind == "explicit":
            table = np.array(self.table, dtype=np.float64)
            if table.shape != shape:
                raise ValueError(f"explicit psi_init has shape {table.shape}, expected {shape}")
            return table
        m = self.magnitude if self.kind == "uniform" else mdp.v_max(params.tau)
        return rng.uniform(-m, m, size=shape)


@dataclass(frozen=True, eq=False)
class SolverConfig:
    scheme: Scheme
    params: RegParams
    f: BoundingFn = field(default_factory=bounding.identity)
    g: BoundingFn = field(default_factory=bounding.identity)
    iterations: int = 100
    seed: int = 0
    noise: NoiseSpec | None = None
    psi_init: PsiInit = field(default_factory=PsiInit)
    record_tables: bool = True
    divergence_factor: float = 1e6
    allow_invalid_bounding: bool = False

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if self.scheme is Scheme.MVI:
            if not (self.f.is_identity and self.g.is_identity):
                raise ValueError("mvi fixes f = g = identity; use scheme 'bal' for other choices")
        if self.scheme is Scheme.EXPECTED_SARSA:
            object.__setattr__(self, "f", bounding.zero())
            object.__setattr__(self, "g", bounding.zero())
        if self.scheme is Scheme.MDVI_EXPLICIT:
            if not (self.f.is_identity and self.g.is_identity):
                raise ValueError("explicit MDVI has no bounding functions")
            if self.params.alpha <= 0:
                raise ValueError("explicit MDVI needs alpha > 0")
        if not self.allow_invalid_bounding:
            for name, fn in (("f", self.f), ("g", self.g)):
                if fn.flagged_invalid or not validate_bounding(fn).valid:
                    raise ValueError(
                        f"{name} = {fn.label()} violates the bounding-function conditions; "
                        "set allow_invalid_bounding to run it anyway"
                    )


@dataclass
class StepDiagnostics:
    entropy: np.ndarray
    kl: np.ndarray
    condition_residual: np.ndarray


@dataclass
class IterationRecord:
    iteration: int
    value: np.ndarray
    policy: np.ndarray
    entropy: np.ndarray
    kl: np.ndarray
    condition_residual: np.ndarray
    gap_min: float
    gap_mean: float
    gap_max: float
    psi: np.ndarray | None = None
    q: np.ndarray | None = None
    wall_time: float = field(default=0.0, compare=False)


@dataclass
class RunTrace:
    config: SolverConfig
    records: list[IterationRecord] = field(default_factory=list)
    diverged: bool = False
    divergence_message: str = ""

    def __len__(self):
        return len(self.records)

    @property
    def psis(self) -> np.ndarray:
        if any(r.psi is None for r in self.records):
            raise ValueError("trace was recorded without tables")
        return np.stack([r.psi for r in self.records])

    @property
    def values(self) -> np.ndarray:
        return np.stack([r.value for r in self.records])

    @property
    def policies(self) -> np.ndarray:
        return np.stack([r.policy for r in self.records])

    def equals(self, other: RunTrace) -> bool:
        """Bit-level equality of every numeric field (wall time excluded)."""
        if len(self) != len(other) or self.diverged != other.diverged:
            return False
        for a, b in zip(self.records, other.records):
            if a.iteration != b.iteration:
                return False
            for name in ("value", "policy", "entropy", "kl", "condition_residual", "psi"):
                x, y = getattr(a, name), getattr(b, name)
                if (x is None) != (y is None):
                    return False
                if x is not None and not np.array_equal(x, y, equal_nan=True):
                    return False
            for name in ("gap_min", "gap_mean", "gap_max"):
                x, y = getattr(a, name), getattr(b, name)
                if not (x == y or (math.isnan(x) and math.isnan(y))):
                    return False
        return True


def uniform_policy(num_states: int, num_actions: int) -> np.ndarray:
    return np.full((num_states, num_actions), 1.0 / num_actions)


def condition_residual(
    mdp: TabularMdp,
    pi_next: np.ndarray,
    pi_prev: np.ndarray,
    advantage: np.ndarray,
    params: RegParams,
    g: BoundingFn,
    step: int = 0,
) -> np.ndarray:
    """``lam KL(pi_next || pi_prev) - gamma P^{pi_next}(alpha H(pi_next) + <pi_next, g(A)>)``.

    Non-negative entries mark states where the BAL convergence condition
    holds. ``pi_next`` must be the greedy policy of the iterate whose soft
    advantage is ``advantage``; the entropy term then equals
    ``-<pi_next, A>`` and is evaluated that way so that ``g = identity``
    cancels exactly.
    """
    inner = (pi_next * (bounding.bound_eval(g, advantage, step) - advantage)).sum(axis=1)
    out = -mdp.discount * (mdp.policy_kernel(pi_next) @ inner)
    if params.lam > 0:
        out = out + params.lam * kl_divergence(pi_next, pi_prev)
    return out


def action_gap_summary(psi: np.ndarray, value: np.ndarray) -> tuple[float, float, float]:
    """(min, mean, max) of ``V(s) - Psi(s, a)`` over non-greedy actions."""
    if psi.shape[1] < 2:
        return math.nan, math.nan, math.nan
    gaps = value[:, None] - psi
    mask = np.ones_like(psi, dtype=bool)
    mask[np.arange(psi.shape[0]), np.argmax(psi, axis=1)] = False
    sub = gaps[mask]
    return float(sub.min()), float(sub.mean()), float(sub.max())


def _diagnose(mdp, psi, pi_prev, params, g, step):
    pi_next = greedy_policy(psi, params.alpha)
    adv = soft_advantage(psi, params.alpha)
    if params.alpha > 0:
        kl = kl_divergence(pi_next, pi_prev)
    else:
        kl = np.full(mdp.num_states, np.nan)
    diag = StepDiagnostics(
        entropy=entropy(pi_next),
        kl=kl,
        condition_residual=condition_residual(mdp, pi_next, pi_prev, adv, params, g, step),
    )
    return pi_next, adv, diag


def bal_operator(mdp, psi, pi_next, adv, params, f, g, step=0) -> np.ndarray:
    """``R + kappa f(A) + gamma P <pi_next, Psi - g(A)>``."""
    f_adv = bounding.bound_eval(f, adv, step)
    g_adv = bounding.bound_eval(g, adv, step)
    return mdp.reward + params.kappa * f_adv + mdp.discount * mdp.expect_next(
        (pi_next * (psi - g_adv)).sum(axis=1)
    )


def bal_step(
    mdp: TabularMdp,
    psi: np.ndarray,
    params: RegParams,
    f: BoundingFn,
    g: BoundingFn,
    step: int = 0,
    noise: np.ndarray | None = None,
    pi_prev: np.ndarray | None = None,
):
    """One BAL iteration. Returns ``(psi_next, pi_next, diagnostics)``.

    ``pi_prev`` (default uniform) only enters the KL diagnostics.
    """
    if pi_prev is None:
        pi_prev = uniform_policy(mdp.num_states, mdp.num_actions)
    pi_next, adv, diag = _diagnose(mdp, psi, pi_prev, params, g, step)
    psi_next = bal_operator(mdp, psi, pi_next, adv, params, f, g, step)
    if noise is not None:
        psi_next = psi_next + noise
    return psi_next, pi_next, diag


def munchausen_step(mdp: TabularMdp, psi: np.ndarray, params: RegParams,
                    noise: np.ndarray | None = None) -> np.ndarray:
    """Munchausen VI written with the log-policy bonus.

    ``Psi' = R + gamma P <pi, Psi - alpha log pi> + kappa alpha log pi``, with
    ``pi = softmax(Psi / alpha)`` and ``log pi`` from a stable log-softmax.
    """
    alpha = params.alpha
    shifted = (psi - psi.max(axis=1, keepdims=True)) / alpha
    log_pi = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    pi = np.exp(log_pi)
    out = (mdp.reward
           + mdp.discount * mdp.expect_next((pi * (psi - alpha * log_pi)).sum(axis=1))
           + params.kappa * alpha * log_pi)
    return out if noise is None else out + noise


def expected_sarsa_step(mdp: TabularMdp, psi: np.ndarray, params: RegParams,
                        noise: np.ndarray | None = None) -> np.ndarray:
    """``Psi' = R + gamma P <pi, Psi>`` with the softmax (or argmax) policy of ``Psi``."""
    pi = greedy_policy(psi, params.alpha)
    out = mdp.reward + mdp.discount * mdp.expect_next((pi * psi).sum(axis=1))
    return out if noise is None else out + noise


def mdvi_explicit_step(
    mdp: TabularMdp,
    q: np.ndarray,
    pi_k: np.ndarray,
    params: RegParams,
    noise: np.ndarray | None = None,
):
    """One step of KL-entropy regularized value iteration with a stored policy.

    Returns ``(q_next, pi_next)``.
    """
    pi_next = regularized_greedy(q, pi_k, params)
    q_next = regularized_bellman(mdp, q, pi_next, pi_k, params)
    if noise is not None:
        q_next = q_next + noise
    return q_next, pi_next


def mirror_descent_residual(
    mdp: TabularMdp,
    psi: np.ndarray,
    params: RegParams,
    f: BoundingFn,
    g: BoundingFn,
    step: int = 0,
    pi_prev: np.ndarray | None = None,
) -> float:
    """Max-abs gap between the BAL operator and its regularized-Bellman form.

    The right-hand side is built from ``Q = Psi - lam log pi_prev`` (any full
    support ``pi_prev``, uniform by default):
    ``T_{pi'|pi_prev} Q + lam log pi' - kappa (A - f(A)) + gamma P <pi', A - g(A)>``,
    with ``lam log pi'`` taken as ``kappa A`` so that underflowed probabilities
    cannot produce infinities.
    """
    if params.alpha <= 0:
        raise ValueError("mirror_descent_residual needs alpha > 0")
    if pi_prev is None:
        pi_prev = uniform_policy(mdp.num_states, mdp.num_actions)
    pi_next = greedy_policy(psi, params.alpha)
    adv = soft_advantage(psi, params.alpha)
    lhs = bal_operator(mdp, psi, pi_next, adv, params, f, g, step)

    q = psi - params.lam * np.log(pi_prev)
    f_adv = bounding.bound_eval(f, adv, step)
    g_adv = bounding.bound_eval(g, adv, step)
    rhs = (regularized_bellman(mdp, q, pi_next, pi_prev, params)
           + params.kappa * adv
           - params.kappa * (adv - f_adv)
           + mdp.discount * mdp.expect_next((pi_next * (adv - g_adv)).sum(axis=1)))
    return float(np.max(np.abs(lhs - rhs)))


def _rngs(config: SolverConfig):
    init_seq, noise_seq = np.random.SeedSequence(config.seed).spawn(2)
    if config.noise is not None:
        noise_seq = np.random.SeedSequence([config.seed, config.noise.seed])
    return np.random.default_rng(init_seq), np.random.default_rng(noise_seq)


def run_scheme(mdp: TabularMdp, config: SolverConfig) -> RunTrace:
    """Iterate the configured scheme for ``config.iterations`` steps.

    Divergence (a non-finite entry or ``|Psi|`` above
    ``divergence_factor * V^alpha_max``) stops the run and marks the trace
    instead of raising.
    """
    params = config.params
    f, g = config.f, config.g
    init_rng, noise_rng = _rngs(config)
    psi = config.psi_init.draw(mdp, params, init_rng)
    pi_prev = uniform_policy(mdp.num_states, mdp.num_actions)
    explicit = config.scheme is Scheme.MDVI_EXPLICIT
    q = psi - params.lam * np.log(pi_prev) if explicit else None
    ceiling = config.divergence_factor * max(mdp.v_max(params.alpha), 1.0)
    trace = RunTrace(config)
    start = time.perf_counter()

    for k in range(config.iterations + 1):
        if explicit:
            pi_next = regularized_greedy(q, pi_prev, params)
            diag = StepDiagnostics(
                entropy(pi_next),
                kl_divergence(pi_next, pi_prev),
                condition_residual(mdp, pi_next, pi_prev,
                                   soft_advantage(psi, params.alpha), params, g, k),
            )
        else:
            pi_next, adv, diag = _diagnose(mdp, psi, pi_prev, params, g, k)
        value = soft_value(psi, params.alpha)
        gmin, gmean, gmax = action_gap_summary(psi, value)
        trace.records.append(IterationRecord(
            iteration=k,
            value=value,
            policy=pi_next,
            entropy=diag.entropy,
            kl=diag.kl,
            condition_residual=diag.condition_residual,
            gap_min=gmin,
            gap_mean=gmean,
            gap_max=gmax,
            psi=psi if config.record_tables else None,
            q=q if (explicit and config.record_tables) else None,
            wall_time=time.perf_counter() - start,
        ))
        if k == config.iterations:
            break

        noise = None
        if config.noise is not None and config.noise.magnitude > 0:
            noise = config.noise.sample(noise_rng, psi.shape)

        if explicit:
            q, _ = mdvi_explicit_step(mdp, q, pi_prev, params, noise)
            with np.errstate(divide="ignore"):
                new = q + params.lam * np.log(pi_next)
        elif config.scheme is Scheme.EXPECTED_SARSA:
            new = expected_sarsa_step(mdp, psi, params, noise)
        else:
            new = bal_operator(mdp, psi, pi_next, adv, params, f, g, k)
            if noise is not None:
                new = new + noise

        if not np.all(np.isfinite(new)) or np.max(np.abs(new)) > ceiling:
            trace.diverged = True
            trace.divergence_message = (
                f"iterate {k + 1} left the ceiling {ceiling:.6g} "
                f"(max |Psi| = {np.max(np.abs(new)):.6g})"
            )
            break
        psi = new
        pi_prev = pi_next
    return trace


def munchausen_config(params: RegParams, **kwargs) -> SolverConfig:
    return SolverConfig(Scheme.MVI, params, **kwargs)


def advantage_learning_config(params: RegParams, **kwargs) -> SolverConfig:
    """AL: BAL with identity bounding, i.e. Munchausen VI."""
    return SolverConfig(Scheme.BAL, params, bounding.identity(), bounding.identity(), **kwargs)


def expected_sarsa_config(params: RegParams, **kwargs) -> SolverConfig:
    """BAL with f = g = 0."""
    return SolverConfig(Scheme.BAL, params, bounding.zero(), bounding.zero(), **kwargs)


def with_scheme(config: SolverConfig, scheme: Scheme, **changes) -> SolverConfig:
    return replace(config, scheme=scheme, **changes)
