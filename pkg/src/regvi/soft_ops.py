"""Log-sum-exp, softmax policies, entropy/KL and the regularized Bellman operators.

All tables are numpy arrays: Q/Psi tables have shape (S, A), value vectors
shape (S,). Every exponential subtracts the row maximum first; with a
temperature of 0 the soft maximum collapses to a hard maximum and the
softmax to a lowest-index argmax.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .mdp import DEFAULT_TOL, NumericalError, TabularMdp, _iteration_cap, _xlogx


@dataclass(frozen=True)
class RegParams:
    """Temperature ``alpha`` and KL share ``kappa``.

    The entropy weight is ``tau = (1 - kappa) alpha`` and the KL weight
    ``lam = kappa alpha``.
    """

    alpha: float
    kappa: float

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and self.alpha >= 0):
            raise ValueError(f"alpha must be finite and non-negative, got {self.alpha}")
        if not 0.0 <= self.kappa < 1.0:
            raise ValueError(f"kappa must lie in [0, 1), got {self.kappa}")

    @classmethod
    def from_weights(cls, tau: float, lam: float) -> RegParams:
        alpha = tau + lam
        return cls(alpha, lam / alpha if alpha > 0 else 0.0)

    @property
    def lam(self) -> float:
        return self.kappa * self.alpha

    @property
    def tau(self) -> float:
        return self.alpha - self.lam


def _check_finite(x: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"{what} contains non-finite entries")


def log_sum_exp(psi_row, alpha: float) -> float:
    """``alpha * log sum_a exp(psi(a) / alpha)``; the plain maximum when alpha is 0."""
    row = np.asarray(psi_row, dtype=np.float64)
    if row.ndim != 1 or row.size == 0:
        raise ValueError("log_sum_exp expects a non-empty 1-D row")
    return float(soft_value(row[None, :], alpha)[0])


def soft_value(psi: np.ndarray, alpha: float) -> np.ndarray:
    psi = np.asarray(psi, dtype=np.float64)
    _check_finite(psi, "psi")
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    top = psi.max(axis=1)
    if alpha == 0:
        return top
    return top + alpha * np.log(np.exp((psi - top[:, None]) / alpha).sum(axis=1))


def argmax_policy(q: np.ndarray) -> np.ndarray:
    """Deterministic greedy policy; ties go to the lowest action index."""
    q = np.asarray(q, dtype=np.float64)
    out = np.zeros_like(q)
    out[np.arange(q.shape[0]), np.argmax(q, axis=1)] = 1.0
    return out


def softmax_policy(psi: np.ndarray, alpha: float) -> np.ndarray:
    if alpha <= 0:
        raise ValueError("softmax_policy needs alpha > 0; use argmax_policy for the hard case")
    psi = np.asarray(psi, dtype=np.float64)
    _check_finite(psi, "psi")
    z = np.exp((psi - psi.max(axis=1, keepdims=True)) / alpha)
    return z / z.sum(axis=1, keepdims=True)


def greedy_policy(psi: np.ndarray, alpha: float) -> np.ndarray:
    """Softmax at temperature alpha, or argmax when alpha is 0."""
    return argmax_policy(psi) if alpha == 0 else softmax_policy(psi, alpha)


def soft_advantage(psi: np.ndarray, alpha: float) -> np.ndarray:
    """``psi - L^alpha psi``; equals ``alpha * log softmax(psi / alpha)``."""
    psi = np.asarray(psi, dtype=np.float64)
    return psi - soft_value(psi, alpha)[:, None]


def entropy(policy: np.ndarray) -> np.ndarray:
    return -_xlogx(np.asarray(policy, dtype=np.float64)).sum(axis=1)


def kl_divergence(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Per-state KL(p || q); +inf where p puts mass on an action q excludes."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {q.shape}")
    support = p > 0
    blocked = np.any(support & (q <= 0), axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(support & (q > 0), p * (np.log(np.where(support, p, 1.0))
                                                 - np.log(np.where(q > 0, q, 1.0))), 0.0)
    out = np.maximum(terms.sum(axis=1), 0.0)
    out[blocked] = np.inf
    return out


def regularized_greedy(q: np.ndarray, mu: np.ndarray, params: RegParams) -> np.ndarray:
    """Maximizer of ``<pi, Q> + tau H(pi) - lam KL(pi || mu)``.

    Closed form ``pi ∝ mu^kappa exp(Q / alpha)``, evaluated in the log domain
    so that zero entries of ``mu`` simply drop out of the support.
    """
    if params.alpha <= 0:
        raise ValueError("regularized_greedy needs tau + lam > 0")
    q = np.asarray(q, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    _check_finite(q, "q")
    logits = q / params.alpha
    if params.kappa > 0:
        if np.any(np.all(mu <= 0, axis=1)):
            raise ValueError("reference policy has an all-zero row")
        with np.errstate(divide="ignore"):
            logits = logits + params.kappa * np.log(mu)
    top = logits.max(axis=1, keepdims=True)
    z = np.exp(logits - top)
    return z / z.sum(axis=1, keepdims=True)


def regularized_bellman(
    mdp: TabularMdp,
    q: np.ndarray,
    pi: np.ndarray,
    mu: np.ndarray,
    params: RegParams,
) -> np.ndarray:
    """``R + gamma P (<pi, Q> + tau H(pi) - lam KL(pi || mu))``."""
    inner = (pi * q).sum(axis=1)
    if params.tau > 0:
        inner = inner + params.tau * entropy(pi)
    if params.lam > 0:
        kl = kl_divergence(pi, mu)
        if not np.all(np.isfinite(kl)):
            raise NumericalError("infinite KL divergence between successive policies")
        inner = inner - params.lam * kl
    return mdp.reward + mdp.discount * mdp.expect_next(inner)


def soft_bellman_backup(mdp: TabularMdp, psi: np.ndarray, alpha: float) -> np.ndarray:
    """``R + gamma P L^alpha psi``."""
    return mdp.reward + mdp.discount * mdp.expect_next(soft_value(psi, alpha))


def soft_optimal_value(mdp: TabularMdp, temperature: float, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Fixed point of ``V -> L^temperature(R + gamma P V)`` iterated from zero."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    values = np.zeros(mdp.num_states)
    for _ in range(_iteration_cap(mdp, tol, temperature)):
        new = soft_value(mdp.reward + mdp.discount * mdp.expect_next(values), temperature)
        residual = np.max(np.abs(new - values))
        values = new
        if residual <= tol:
            return values
    raise NumericalError("soft value iteration did not reach tolerance within the iteration cap")


def soft_optimal_q(mdp: TabularMdp, temperature: float, tol: float = DEFAULT_TOL) -> np.ndarray:
    return mdp.reward + mdp.discount * mdp.expect_next(soft_optimal_value(mdp, temperature, tol))
