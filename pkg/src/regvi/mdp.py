"""Finite MDPs: containers, builders, validation and exact evaluation oracles.

Arrays follow the layout ``transition[s, a, s']`` and ``reward[s, a]``.
Policies are ``(num_states, num_actions)`` row-stochastic tables.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

STOCHASTIC_ATOL = 1e-12
DEFAULT_TOL = 1e-10

# North, South, West, East as (row, col) offsets; row 0 is the top of the grid.
GRID_MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))
ACTION_NAMES = ("North", "South", "West", "East")

JSON_FORMAT = "regvi.tabular_mdp/1"


class MdpValidationError(ValueError):
    """Raised when an MDP violates one of its structural invariants."""


class NumericalError(ArithmeticError):
    """Raised when an iteration produces non-finite values."""


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=np.float64, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class TabularMdp:
    transition: np.ndarray
    reward: np.ndarray
    discount: float
    r_max: float | None = None
    num_states: int = field(init=False)
    num_actions: int = field(init=False)

    def __post_init__(self):
        p = _frozen(self.transition)
        r = _frozen(self.reward)
        if p.ndim != 3 or p.shape[0] != p.shape[2]:
            raise MdpValidationError(f"transition must have shape (S, A, S), got {p.shape}")
        if r.shape != p.shape[:2]:
            raise MdpValidationError(f"reward shape {r.shape} does not match transition {p.shape}")
        object.__setattr__(self, "transition", p)
        object.__setattr__(self, "reward", r)
        object.__setattr__(self, "discount", float(self.discount))
        object.__setattr__(self, "num_states", p.shape[0])
        object.__setattr__(self, "num_actions", p.shape[1])
        if self.r_max is None:
            object.__setattr__(self, "r_max", float(np.max(np.abs(r))) if r.size else 0.0)
        else:
            object.__setattr__(self, "r_max", float(self.r_max))

    def v_max(self, tau: float = 0.0) -> float:
        """(r_max + tau log|A|) / (1 - gamma), the bound on any tau-regularized value."""
        return (self.r_max + tau * math.log(self.num_actions)) / (1.0 - self.discount)

    def expect_next(self, values: np.ndarray) -> np.ndarray:
        """``(P V)(s, a) = sum_s' P(s'|s,a) V(s')``."""
        return self.transition @ values

    def policy_kernel(self, policy: np.ndarray) -> np.ndarray:
        """State-to-state kernel ``P^pi`` of shape (S, S)."""
        return np.einsum("sa,sat->st", policy, self.transition)

    def with_reward(self, reward: np.ndarray, r_max: float | None = None) -> TabularMdp:
        return TabularMdp(self.transition, reward, self.discount, r_max)

    def __eq__(self, other):
        if not isinstance(other, TabularMdp):
            return NotImplemented
        return (
            self.discount == other.discount
            and self.r_max == other.r_max
            and np.array_equal(self.transition, other.transition)
            and np.array_equal(self.reward, other.reward)
        )

    __hash__ = None


@dataclass(frozen=True)
class GridWorldConfig:
    width: int = 5
    height: int = 5
    reward_top_right: float = 1.0
    reward_bottom_left: float = 1.0
    reward_bottom_right: float = 2.0
    slip_probability: float = 0.1
    # "uniform_all": a slip executes any of the four actions uniformly (the
    # attempted one included); "other_actions": one of the remaining three.
    slip_mode: str = "uniform_all"
    discount: float = 0.99

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise MdpValidationError(f"grid must be non-empty, got {self.width}x{self.height}")
        if not 0.0 <= self.slip_probability <= 1.0:
            raise MdpValidationError(f"slip_probability must lie in [0, 1], got {self.slip_probability}")
        if self.slip_mode not in ("uniform_all", "other_actions"):
            raise MdpValidationError(f"unknown slip_mode {self.slip_mode!r}")

    @property
    def num_states(self) -> int:
        return self.width * self.height

    def cell_index(self, row: int, col: int) -> int:
        return row * self.width + col

    def cell_rewards(self) -> np.ndarray:
        """Reward attached to each destination cell.

        On degenerate grids where corners coincide, later corners win in the
        order top-right, bottom-left, bottom-right.
        """
        cells = np.zeros(self.num_states)
        cells[self.cell_index(0, self.width - 1)] = self.reward_top_right
        cells[self.cell_index(self.height - 1, 0)] = self.reward_bottom_left
        cells[self.cell_index(self.height - 1, self.width - 1)] = self.reward_bottom_right
        return cells


def build_gridworld(config: GridWorldConfig | None = None) -> TabularMdp:
    """Slippery four-action grid world with rewarded corner cells.

    ``R[s, a]`` is the expected reward of the destination cell under the slip
    dynamics; moves into the boundary leave the agent in place.
    """
    config = config or GridWorldConfig()
    w, h = config.width, config.height
    n = config.num_states
    num_actions = len(GRID_MOVES)

    def dest(s: int, move: int) -> int:
        row, col = divmod(s, w)
        dr, dc = GRID_MOVES[move]
        r2, c2 = row + dr, col + dc
        if 0 <= r2 < h and 0 <= c2 < w:
            return r2 * w + c2
        return s

    slip = config.slip_probability
    transition = np.zeros((n, num_actions, n))
    for s in range(n):
        for a in range(num_actions):
            transition[s, a, dest(s, a)] += 1.0 - slip
            if config.slip_mode == "uniform_all":
                for b in range(num_actions):
                    transition[s, a, dest(s, b)] += slip / num_actions
            else:
                for b in range(num_actions):
                    if b != a:
                        transition[s, a, dest(s, b)] += slip / (num_actions - 1)

    cells = config.cell_rewards()
    reward = transition @ cells
    r_max = float(np.max(np.abs([config.reward_top_right, config.reward_bottom_left,
                                  config.reward_bottom_right])))
    mdp = TabularMdp(transition, reward, config.discount, r_max)
    validate_mdp(mdp)
    return mdp


def build_random_mdp(
    num_states: int,
    num_actions: int,
    seed: int,
    reward_scale: float = 1.0,
    discount: float = 0.9,
) -> TabularMdp:
    """Seeded random MDP with dense transitions and rewards in [-scale, scale]."""
    if num_states < 1 or num_actions < 1:
        raise MdpValidationError("num_states and num_actions must be positive")
    rng = np.random.default_rng(seed)
    transition = rng.random((num_states, num_actions, num_states))
    transition /= transition.sum(axis=2, keepdims=True)
    reward = rng.uniform(-reward_scale, reward_scale, size=(num_states, num_actions))
    mdp = TabularMdp(transition, reward, discount, float(reward_scale))
    validate_mdp(mdp)
    return mdp


def validate_mdp(mdp: TabularMdp) -> None:
    if not 0.0 < mdp.discount < 1.0:
        raise MdpValidationError(f"discount must lie in (0, 1), got {mdp.discount}")
    p, r = mdp.transition, mdp.reward
    if not np.all(np.isfinite(p)):
        s, a, t = np.argwhere(~np.isfinite(p))[0]
        raise MdpValidationError(f"non-finite transition probability at (s={s}, a={a}, s'={t})")
    if np.any(p < 0):
        s, a, t = np.argwhere(p < 0)[0]
        raise MdpValidationError(f"negative transition probability at (s={s}, a={a}, s'={t})")
    sums = p.sum(axis=2)
    bad = np.abs(sums - 1.0) > STOCHASTIC_ATOL
    if np.any(bad):
        s, a = np.argwhere(bad)[0]
        raise MdpValidationError(
            f"transition row (s={s}, a={a}) sums to {sums[s, a]!r}, not 1"
        )
    if not np.all(np.isfinite(r)):
        s, a = np.argwhere(~np.isfinite(r))[0]
        raise MdpValidationError(f"non-finite reward at (s={s}, a={a})")
    over = np.abs(r) > mdp.r_max
    if np.any(over):
        s, a = np.argwhere(over)[0]
        raise MdpValidationError(f"|R[{s}, {a}]| = {abs(r[s, a])!r} exceeds r_max = {mdp.r_max!r}")


def _iteration_cap(mdp: TabularMdp, tol: float, tau: float = 0.0, margin: int = 1000) -> int:
    scale = max(mdp.v_max(tau), 1.0)
    n = math.log(tol * (1.0 - mdp.discount) / scale) / math.log(mdp.discount)
    return max(int(math.ceil(n)), 1) + margin


def _xlogx(p: np.ndarray) -> np.ndarray:
    safe = np.where(p > 0, p, 1.0)
    return np.where(p > 0, p * np.log(safe), 0.0)


def soft_policy_evaluation(
    mdp: TabularMdp,
    policy: np.ndarray,
    tau: float,
    tol: float = DEFAULT_TOL,
    method: str = "iterate",
) -> np.ndarray:
    """Fixed point of ``V -> <pi, R + gamma P V> + tau H(pi)``.

    ``method="iterate"`` runs the evaluation operator from ``V = 0`` until the
    residual drops below ``tol``. ``method="solve"`` solves the linear system
    ``(I - gamma P^pi) V = r^pi + tau H(pi)`` directly and is much faster for
    discounts close to one.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if tau < 0:
        raise ValueError("tau must be non-negative")
    policy = np.asarray(policy, dtype=np.float64)
    bonus = (policy * mdp.reward).sum(axis=1)
    if tau > 0:
        bonus = bonus - tau * _xlogx(policy).sum(axis=1)
    kernel = mdp.policy_kernel(policy)
    gamma = mdp.discount

    if method == "solve":
        values = np.linalg.solve(np.eye(mdp.num_states) - gamma * kernel, bonus)
        if not np.all(np.isfinite(values)):
            raise NumericalError("policy evaluation produced non-finite values")
        return values
    if method != "iterate":
        raise ValueError(f"unknown method {method!r}")

    values = np.zeros(mdp.num_states)
    for _ in range(_iteration_cap(mdp, tol, tau)):
        new = bonus + gamma * (kernel @ values)
        if not np.all(np.isfinite(new)):
            raise NumericalError("policy evaluation produced non-finite values")
        residual = np.max(np.abs(new - values))
        values = new
        if residual <= tol:
            return values
    raise NumericalError("policy evaluation did not reach tolerance within the iteration cap")


def exact_v_star(mdp: TabularMdp, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Unregularized optimal values by value iteration, accurate to ``tol``."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    # ||V - V*|| <= ||TV - V|| / (1 - gamma)
    stop = tol * (1.0 - mdp.discount)
    values = np.zeros(mdp.num_states)
    for _ in range(_iteration_cap(mdp, stop)):
        new = np.max(mdp.reward + mdp.discount * mdp.expect_next(values), axis=1)
        residual = np.max(np.abs(new - values))
        values = new
        if residual <= stop:
            break
    return values


def mdp_to_dict(mdp: TabularMdp) -> dict:
    return {
        "format": JSON_FORMAT,
        "discount": mdp.discount,
        "r_max": mdp.r_max,
        "transition": {"shape": list(mdp.transition.shape), "data": mdp.transition.ravel().tolist()},
        "reward": {"shape": list(mdp.reward.shape), "data": mdp.reward.ravel().tolist()},
    }


def mdp_from_dict(data: dict) -> TabularMdp:
    if data.get("format") != JSON_FORMAT:
        raise MdpValidationError(f"unsupported MDP format {data.get('format')!r}")

    def unpack(entry):
        return np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])

    mdp = TabularMdp(unpack(data["transition"]), unpack(data["reward"]),
                     data["discount"], data["r_max"])
    validate_mdp(mdp)
    return mdp


def save_mdp(mdp: TabularMdp, path: str | Path) -> None:
    Path(path).write_text(json.dumps(mdp_to_dict(mdp)))


def load_mdp(path: str | Path) -> TabularMdp:
    return mdp_from_dict(json.loads(Path(path).read_text()))
