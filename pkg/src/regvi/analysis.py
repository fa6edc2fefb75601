"""Post-hoc analytics over run traces: suboptimality, IQM, limit bounds, error terms."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import bounding
from .bounding import BoundingFn, delta_bar
from .mdp import TabularMdp, soft_policy_evaluation
from .soft_ops import RegParams, argmax_policy, entropy, soft_optimal_value, softmax_policy
from .solvers import RunTrace, action_gap_summary

CONVERGENCE_TOL = 1e-8
CONVERGENCE_WINDOW = 10


def suboptimality(
    mdp: TabularMdp,
    trace: RunTrace,
    tau: float,
    v_star_tau: np.ndarray,
    method: str = "solve",
    tol: float = 1e-10,
) -> np.ndarray:
    """``||V^{pi}_tau - V*_tau||_inf`` for the greedy policy of every recorded iterate."""
    return np.array([
        np.max(np.abs(soft_policy_evaluation(mdp, rec.policy, tau, tol, method) - v_star_tau))
        for rec in trace.records
    ])


def normalize_curve(raw: np.ndarray) -> np.ndarray:
    raw = np.asarray(raw, dtype=np.float64)
    if raw.size == 0 or raw[0] == 0:
        return raw.copy()
    return raw / raw[0]


def suboptimality_curve(
    mdp: TabularMdp,
    trace: RunTrace,
    tau: float,
    v_star_tau: np.ndarray,
    method: str = "solve",
) -> np.ndarray:
    """Suboptimality divided by its iteration-0 value, so curves start at 1."""
    return normalize_curve(suboptimality(mdp, trace, tau, v_star_tau, method))


def iqm(values, axis: int | None = None):
    """Interquartile mean: drop ``n // 4`` order statistics from each tail, average the rest."""
    x = np.asarray(values, dtype=np.float64)
    if axis is None:
        x = x.ravel()
        axis = 0
    n = x.shape[axis]
    if n == 0:
        raise ValueError("iqm of an empty sample")
    cut = n // 4
    x = np.sort(x, axis=axis)
    kept = np.take(x, np.arange(cut, n - cut), axis=axis)
    out = kept.mean(axis=axis)
    return float(out) if np.ndim(out) == 0 else out


def is_converged(trace: RunTrace, window: int = CONVERGENCE_WINDOW,
                 tol: float = CONVERGENCE_TOL) -> bool:
    if len(trace) < window + 1 or trace.diverged:
        return False
    values = trace.values[-(window + 1):]
    return bool(np.max(np.abs(np.diff(values, axis=0))) <= tol)


@dataclass
class BoundReport:
    v_star_alpha: np.ndarray
    v_star_tau: np.ndarray
    v_tilde: np.ndarray
    lower_slack: np.ndarray
    upper_slack: np.ndarray
    c_f: float
    delta_bar_g: float
    width: float
    converged: bool
    condition_held: bool
    satisfied: dict[str, bool] = field(default_factory=dict)

    @property
    def all_satisfied(self) -> bool:
        return all(self.satisfied.values())

    def to_dict(self) -> dict:
        def num(x):
            return None if not math.isfinite(x) else x
        return {
            "converged": self.converged,
            "condition_held": self.condition_held,
            "c_f": num(self.c_f),
            "delta_bar_g": self.delta_bar_g,
            "width": num(self.width),
            "min_lower_slack": num(float(np.min(self.lower_slack))),
            "min_upper_slack": float(np.min(self.upper_slack)),
            "satisfied": dict(self.satisfied),
        }


def limit_bound_check(
    mdp: TabularMdp,
    trace: RunTrace,
    params: RegParams,
    f: BoundingFn,
    g: BoundingFn,
    atol: float = 1e-6,
    window: int = CONVERGENCE_WINDOW,
    v_star_alpha: np.ndarray | None = None,
    v_star_tau: np.ndarray | None = None,
) -> BoundReport:
    """Compare the last iterates of a BAL run with the limit bounds.

    Checks ``V*_alpha >= V~ >= V*_alpha - (kappa c_f + gamma alpha dbar_g log|A|)/(1-gamma)``,
    ``max Psi <= Q*_alpha`` and ``min Psi >= Q~ - (kappa c_f + gamma alpha dbar_g log|A|)``
    over the trailing window. With ``g = identity`` it also checks the
    entropy-regularized sandwich ``V*_tau <= V~ <= V*_alpha`` and
    ``min Psi >= (Q~ - kappa V~) / (1 - kappa)``. Non-converged traces are
    flagged through ``converged`` but still evaluated.
    """
    gamma = mdp.discount
    alpha, kappa, tau = params.alpha, params.kappa, params.tau
    if v_star_alpha is None:
        v_star_alpha = soft_optimal_value(mdp, alpha, 1e-12)
    if v_star_tau is None:
        v_star_tau = soft_optimal_value(mdp, tau, 1e-12)
    q_star_alpha = mdp.reward + gamma * mdp.expect_next(v_star_alpha)

    last = len(trace) - 1
    v_tilde = trace.records[-1].value
    q_tilde = mdp.reward + gamma * mdp.expect_next(v_tilde)
    c_f = f.bound_at(last)
    dbar = delta_bar(g, alpha, last) if alpha > 0 else 0.0
    log_a = math.log(mdp.num_actions)
    f_term = 0.0 if kappa == 0 else kappa * c_f
    per_step = f_term + gamma * alpha * dbar * log_a
    width = per_step / (1.0 - gamma)

    upper_slack = v_star_alpha - v_tilde
    lower_slack = v_tilde - (v_star_alpha - width)
    satisfied = {
        "value_upper": bool(np.all(upper_slack >= -atol)),
        "value_lower": bool(np.all(lower_slack >= -atol)),
    }
    try:
        psis = trace.psis[-min(window, len(trace)):]
    except ValueError:
        psis = None
    if psis is not None:
        satisfied["psi_upper"] = bool(np.all(psis.max(axis=0) <= q_star_alpha + atol))
        satisfied["psi_lower"] = bool(np.all(psis.min(axis=0) >= q_tilde - per_step - atol))
    if g.is_identity:
        satisfied["entropy_floor"] = bool(np.all(v_tilde >= v_star_tau - atol))
        if psis is not None and kappa < 1:
            floor = (q_tilde - kappa * v_tilde[:, None]) / (1.0 - kappa)
            satisfied["psi_floor"] = bool(np.all(psis.min(axis=0) >= floor - atol))

    residuals = np.array([r.condition_residual for r in trace.records])
    return BoundReport(
        v_star_alpha=v_star_alpha,
        v_star_tau=v_star_tau,
        v_tilde=v_tilde,
        lower_slack=lower_slack,
        upper_slack=upper_slack,
        c_f=c_f,
        delta_bar_g=dbar,
        width=width,
        converged=is_converged(trace, window),
        condition_held=bool(np.all(residuals >= 0)),
        satisfied=satisfied,
    )


def optimal_reference(mdp: TabularMdp, params: RegParams, anchor: str = "alpha",
                      tol: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
    """Optimal policy of the tau-regularized MDP and the advantage anchor of the error terms.

    ``pi*`` is the softmax of ``Q*_tau / tau`` (argmax when tau is 0). The
    anchor is ``alpha log pi*`` by default, so that ``<pi*, anchor> =
    -alpha H(pi*)``; ``anchor="tau"`` returns ``Q*_tau - V*_tau = tau log pi*``.
    """
    tau = params.tau
    v_star = soft_optimal_value(mdp, tau, tol)
    q_star = mdp.reward + mdp.discount * mdp.expect_next(v_star)
    if tau > 0:
        pi_star = softmax_policy(q_star, tau)
        tau_adv = q_star - v_star[:, None]
    else:
        pi_star = argmax_policy(q_star)
        tau_adv = q_star - v_star[:, None]
    if anchor == "tau":
        return pi_star, tau_adv
    if anchor != "alpha":
        raise ValueError(f"unknown anchor {anchor!r}")
    if tau > 0:
        return pi_star, (params.alpha / tau) * tau_adv
    # Hard limit: alpha log pi* is 0 on the support and -inf elsewhere.
    return pi_star, np.where(pi_star > 0, 0.0, -np.inf)


@dataclass
class ErrorTermReport:
    """Sup-norms of the inherent error terms for k = 1..K.

    ``cross``/``entropy_term``/``total`` use the run's f and g;
    the ``*_identity`` columns evaluate the same iterates with f = g = identity.
    ``premise`` marks iterations where ``gamma P^{pi*} H(pi_k) <= kappa H(pi*)`` at every state.
    """

    iterations: np.ndarray
    cross: np.ndarray
    cross_identity: np.ndarray
    entropy_term: np.ndarray
    entropy_identity: np.ndarray
    total: np.ndarray
    premise: np.ndarray
    c_f: float

    def to_dict(self) -> dict:
        def top(x):
            return float(np.max(x)) if len(x) else 0.0
        return {
            "iterations": int(len(self.iterations)),
            "max_cross": top(self.cross),
            "max_cross_identity": top(self.cross_identity),
            "max_entropy_term": top(self.entropy_term),
            "max_entropy_identity": top(self.entropy_identity),
            "max_total": top(self.total),
            "premise_iterations": int(np.sum(self.premise)),
        }


def _inner(pi: np.ndarray, table: np.ndarray) -> np.ndarray:
    return np.where(pi > 0, pi * table, 0.0).sum(axis=1)


def error_terms(
    mdp: TabularMdp,
    trace: RunTrace,
    params: RegParams,
    f: BoundingFn,
    g: BoundingFn,
    pi_star: np.ndarray,
    a_star: np.ndarray,
) -> ErrorTermReport:
    """Cross term ``-kappa <pi*, f(A_{k-1})>`` and entropy term
    ``<pi*, kappa A* - gamma P <pi_k, A_{k-1} - g(A_{k-1})>>`` per iteration.

    ``A_{k-1}`` is the soft advantage of record k-1 and ``pi_k`` its greedy policy.
    """
    if pi_star.shape != (mdp.num_states, mdp.num_actions) or a_star.shape != pi_star.shape:
        raise ValueError("pi_star and a_star must have shape (S, A)")
    psis = trace.psis
    alpha, kappa, gamma = params.alpha, params.kappa, mdp.discount
    anchor = kappa * _inner(pi_star, a_star)
    h_star = entropy(pi_star)
    kernel_star = mdp.policy_kernel(pi_star)

    rows = []
    for k in range(1, len(trace)):
        prev = trace.records[k - 1]
        adv = psis[k - 1] - prev.value[:, None]
        pi_k = prev.policy
        step = k - 1
        cross = -kappa * _inner(pi_star, bounding.bound_eval(f, adv, step))
        cross_id = -kappa * _inner(pi_star, adv)
        succ = (pi_k * (adv - bounding.bound_eval(g, adv, step))).sum(axis=1)
        ent = anchor - gamma * (kernel_star @ succ)
        premise = bool(np.all(gamma * (kernel_star @ entropy(pi_k)) <= kappa * h_star))
        rows.append((k, np.max(np.abs(cross)), np.max(np.abs(cross_id)),
                     np.max(np.abs(ent)), np.max(np.abs(anchor)),
                     np.max(np.abs(cross + ent)), premise))
    cols = list(zip(*rows)) if rows else [()] * 7
    return ErrorTermReport(
        iterations=np.array(cols[0], dtype=int),
        cross=np.array(cols[1], dtype=float),
        cross_identity=np.array(cols[2], dtype=float),
        entropy_term=np.array(cols[3], dtype=float),
        entropy_identity=np.array(cols[4], dtype=float),
        total=np.array(cols[5], dtype=float),
        premise=np.array(cols[6], dtype=bool),
        c_f=f.c_h,
    )


@dataclass
class GapStatistics:
    iterations: np.ndarray
    gap_min: np.ndarray
    gap_mean: np.ndarray
    gap_max: np.ndarray


def gap_statistics(trace: RunTrace) -> GapStatistics:
    """Per-iteration distribution of ``V_k(s) - Psi_k(s, a)`` over non-greedy actions."""
    rows = []
    for rec in trace.records:
        if rec.psi is not None:
            rows.append((rec.iteration, *action_gap_summary(rec.psi, rec.value)))
        else:
            rows.append((rec.iteration, rec.gap_min, rec.gap_mean, rec.gap_max))
    arr = np.array(rows, dtype=float).reshape(-1, 4)
    return GapStatistics(arr[:, 0].astype(int), arr[:, 1], arr[:, 2], arr[:, 3])
