"""Independent reference computations used by the tests.

Nothing here imports the solver code paths it checks; each oracle is the
slow, obvious way of computing the same quantity.
"""

import itertools
import math

import numpy as np


def brute_force_v_star(transition, reward, gamma):
    """Max over all deterministic policies of their exact linear-solve values."""
    n_s, n_a = reward.shape
    best = np.full(n_s, -np.inf)
    for actions in itertools.product(range(n_a), repeat=n_s):
        p = transition[np.arange(n_s), actions]
        r = reward[np.arange(n_s), actions]
        v = np.linalg.solve(np.eye(n_s) - gamma * p, r)
        best = np.maximum(best, v)
    return best


def linear_policy_value(transition, reward, gamma, policy, tau=0.0):
    n_s = reward.shape[0]
    p = np.einsum("sa,sat->st", policy, transition)
    ent = -np.array([sum(x * math.log(x) for x in row if x > 0) for row in policy])
    r = (policy * reward).sum(axis=1) + tau * ent
    return np.linalg.solve(np.eye(n_s) - gamma * p, r)


def scalar_lse(row, alpha):
    """Loop-based log-sum-exp in pure Python floats."""
    m = max(row)
    if alpha == 0:
        return m
    return m + alpha * math.log(sum(math.exp((x - m) / alpha) for x in row))


def simplex_grid(n_actions, resolution):
    """All points of the probability simplex with coordinates k / resolution."""
    pts = []
    for combo in itertools.product(range(resolution + 1), repeat=n_actions - 1):
        if sum(combo) <= resolution:
            pts.append(list(combo) + [resolution - sum(combo)])
    return np.array(pts, dtype=float) / resolution


def regularized_objective(pi, q, mu, tau, lam):
    """<pi, q> + tau H(pi) - lam KL(pi || mu) for a batch of simplex points."""
    pi = np.atleast_2d(pi)
    with np.errstate(divide="ignore", invalid="ignore"):
        logp = np.where(pi > 0, np.log(np.where(pi > 0, pi, 1.0)), 0.0)
        logmu = np.log(mu)
    ent = -(pi * logp).sum(axis=1)
    kl = (pi * (logp - logmu)).sum(axis=1)
    return pi @ q + tau * ent - lam * kl


def hand_bal_step(P, R, gamma, psi, alpha, kappa, f, g):
    """Scalar, loop-by-loop evaluation of one BAL update."""
    n_s, n_a = len(R), len(R[0])
    v = [scalar_lse(list(psi[s]), alpha) for s in range(n_s)]
    adv = [[psi[s][a] - v[s] for a in range(n_a)] for s in range(n_s)]
    pi = [[math.exp(adv[s][a] / alpha) for a in range(n_a)] for s in range(n_s)]
    nxt = [sum(pi[s][a] * (psi[s][a] - g(adv[s][a])) for a in range(n_a)) for s in range(n_s)]
    out = np.zeros((n_s, n_a))
    for s in range(n_s):
        for a in range(n_a):
            out[s, a] = (R[s][a] + kappa * f(adv[s][a])
                         + gamma * sum(P[s][a][t] * nxt[t] for t in range(n_s)))
    return out


def iqm_sort_slice(values):
    x = sorted(values)
    n = len(x)
    k = n // 4
    mid = x[k:n - k]
    return sum(mid) / len(mid)
