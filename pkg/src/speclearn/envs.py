"""Built-in environments and their atomic predicates.

Every environment is vectorised: ``reset(n, rng)`` returns an ``(n, d)``
array of initial states and ``step(states, actions, rng)`` advances a
batch.  ``predicates`` is the registry that specifications over the
environment are parsed against, and ``state_bounds()`` is a box that
contains every state reachable within the horizon (used to bound guard
robustness when shaping rewards).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .lang import AtomicPredicateDecl, PredicateRegistry

logger = logging.getLogger(__name__)

__all__ = [
    "PointRobotEnv",
    "CartPoleEnv",
    "GridEnv",
    "point_robot_step",
    "builtin_predicates",
    "reach_decl",
    "avoid_decl",
]


def _corner_bound(lo, hi, fn) -> float:
    """max |fn| over the corners of a box (exact for the piecewise-linear
    distances below, whose extremes sit on corners or are bounded by 1)."""
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    corners = np.array(np.meshgrid(*zip(lo, hi))).reshape(len(lo), -1).T
    return float(np.max(np.abs(fn(corners))))


def reach_decl(dims=(0, 1)) -> AtomicPredicateDecl:
    """``reach c``: within L-inf distance 1 of ``c``; robustness ``1 - d_inf``."""
    dims = list(dims)

    def quant(s, *c):
        s = np.asarray(s, dtype=float)
        return 1.0 - np.max(np.abs(s[..., dims] - np.asarray(c)), axis=-1)

    def boolean(s, *c):
        s = np.asarray(s, dtype=float)
        return np.max(np.abs(s[..., dims] - np.asarray(c)), axis=-1) < 1.0

    def bound(lo, hi, *c):
        sub_lo, sub_hi = np.asarray(lo)[dims], np.asarray(hi)[dims]
        return max(1.0, _corner_bound(sub_lo, sub_hi, lambda x: quant_sub(x, c)))

    def quant_sub(x, c):
        return 1.0 - np.max(np.abs(x - np.asarray(c)), axis=-1)

    return AtomicPredicateDecl("reach", len(dims), boolean, quant, bound)


def _box_signed_distance(p, lo, hi):
    """L-inf distance from points ``p`` to the box [lo, hi]; negative inside
    (minus the distance to the nearest face)."""
    outside = np.max(np.maximum(np.maximum(lo - p, p - hi), 0.0), axis=-1)
    inside = np.min(np.minimum(p - lo, hi - p), axis=-1)
    return np.where(outside > 0, outside, -inside)


def avoid_decl(dims=(0, 1)) -> AtomicPredicateDecl:
    """``avoid(x_lo, x_hi, y_lo, y_hi)``: outside the closed box.

    Robustness is the signed L-inf distance to the box, so it is zero on the
    boundary and negative inside.
    """
    dims = list(dims)

    def split(params):
        params = np.asarray(params, dtype=float).reshape(len(dims), 2)
        return params[:, 0], params[:, 1]

    def quant(s, *params):
        lo, hi = split(params)
        return _box_signed_distance(np.asarray(s, dtype=float)[..., dims], lo, hi)

    def boolean(s, *params):
        lo, hi = split(params)
        p = np.asarray(s, dtype=float)[..., dims]
        return ~np.all((p >= lo) & (p <= hi), axis=-1)

    def bound(lo, hi, *params):
        blo, bhi = split(params)
        corner = _corner_bound(np.asarray(lo)[dims], np.asarray(hi)[dims], lambda x: _box_signed_distance(x, blo, bhi))
        return max(corner, float(np.max(bhi - blo)) / 2)

    return AtomicPredicateDecl("avoid", 2 * len(dims), boolean, quant, bound)


def _component_decl(name, index, threshold=0.0, absolute=False) -> AtomicPredicateDecl:
    """``threshold - |s_i|`` when ``absolute``, else ``s_i - threshold``."""

    def quant(s):
        x = np.asarray(s, dtype=float)[..., index]
        return threshold - np.abs(x) if absolute else x - threshold

    def boolean(s):
        return quant(s) > 0

    def bound(lo, hi):
        return float(np.max(np.abs(quant(np.stack([lo, hi])))))

    return AtomicPredicateDecl(name, 0, boolean, quant, bound)


# ---------------------------------------------------------------------------
# Point robot


def point_robot_step(state, action, sigma: float = 0.0, rng=None):
    """One step of the point robot: position moves by the action plus
    Gaussian noise, fuel drops by ``0.1 * |x_1| * ||a||``.

    Works on a single state ``(3,)`` or a batch ``(B, 3)``.  Actions outside
    ``[-1, 1]^2`` are clamped.
    """
    state = np.asarray(state, dtype=float)
    action = np.asarray(action, dtype=float)
    clamped = np.clip(action, -1.0, 1.0)
    if np.any(clamped != action):
        logger.debug("clamped %d out-of-box action(s)", int(np.sum(np.any(clamped != action, axis=-1))))
    pos = state[..., :2]
    fuel = state[..., 2]
    new_pos = pos + clamped
    if sigma > 0:
        rng = np.random.default_rng() if rng is None else rng
        new_pos = new_pos + rng.normal(0.0, sigma, size=new_pos.shape)
    new_fuel = fuel - 0.1 * np.abs(pos[..., 0]) * np.linalg.norm(clamped, axis=-1)
    return np.concatenate([new_pos, new_fuel[..., None]], axis=-1)


@dataclass
class PointRobotEnv:
    """2D robot with a fuel tank; state ``(x_1, x_2, r)``, action a velocity in ``[-1,1]^2``."""

    noise: float = 0.05
    horizon: int = 40
    initial_state: tuple = (5.0, 0.0, 7.0)
    state_dim: int = field(default=3, init=False)
    action_dim: int = field(default=2, init=False)

    def __post_init__(self):
        self.predicates = builtin_predicates(self)
        self.action_low = -np.ones(2)
        self.action_high = np.ones(2)

    def reset(self, n=None, rng=None):
        s0 = np.asarray(self.initial_state, dtype=float)
        return s0.copy() if n is None else np.tile(s0, (n, 1))

    def step(self, states, actions, rng=None):
        return point_robot_step(states, actions, self.noise, rng)

    def state_bounds(self):
        s0 = np.asarray(self.initial_state, dtype=float)
        # unit speed per axis plus a 6-sigma allowance for accumulated noise
        reach = self.horizon + 6.0 * self.noise * math.sqrt(self.horizon) + 1.0
        max_x1 = abs(s0[0]) + reach
        lo = np.array([s0[0] - reach, s0[1] - reach, s0[2] - 0.1 * max_x1 * math.sqrt(2) * self.horizon])
        hi = np.array([s0[0] + reach, s0[1] + reach, s0[2]])
        return lo, hi

    def random_actions(self, n, rng):
        return rng.uniform(-1.0, 1.0, size=(n, 2))


# ---------------------------------------------------------------------------
# Cart-pole (continuous force)


@dataclass
class CartPoleEnv:
    """Cart-pole with the classic open-source physics constants and a
    continuous force ``10 * a`` for ``a`` in ``[-1, 1]``; never terminates
    early.  State ``(x, x_dot, theta, theta_dot)``."""

    horizon: int = 200
    gravity: float = 9.8
    masscart: float = 1.0
    masspole: float = 0.1
    length: float = 0.5  # half the pole length
    force_mag: float = 10.0
    tau: float = 0.02
    init_spread: float = 0.05
    state_dim: int = field(default=4, init=False)
    action_dim: int = field(default=1, init=False)

    def __post_init__(self):
        self.predicates = builtin_predicates(self)
        self.action_low = -np.ones(1)
        self.action_high = np.ones(1)

    def reset(self, n=None, rng=None):
        rng = np.random.default_rng() if rng is None else rng
        shape = (4,) if n is None else (n, 4)
        return rng.uniform(-self.init_spread, self.init_spread, size=shape)

    def step(self, states, actions, rng=None):
        s = np.asarray(states, dtype=float)
        a = np.clip(np.asarray(actions, dtype=float)[..., 0], -1.0, 1.0)
        x, x_dot, theta, theta_dot = (s[..., i] for i in range(4))
        force = self.force_mag * a
        total_mass = self.masscart + self.masspole
        polemass_length = self.masspole * self.length
        cos, sin = np.cos(theta), np.sin(theta)
        temp = (force + polemass_length * theta_dot**2 * sin) / total_mass
        theta_acc = (self.gravity * sin - cos * temp) / (
            self.length * (4.0 / 3.0 - self.masspole * cos**2 / total_mass)
        )
        x_acc = temp - polemass_length * theta_acc * cos / total_mass
        return np.stack(
            [
                x + self.tau * x_dot,
                x_dot + self.tau * x_acc,
                theta + self.tau * theta_dot,
                theta_dot + self.tau * theta_acc,
            ],
            axis=-1,
        )

    def state_bounds(self):
        # |x_acc| and |theta_acc| are loosely bounded by 30 and 300 for these constants
        t = self.horizon * self.tau
        lo = np.array([-(0.05 + 0.5 * 30 * t * t), -30 * t - 0.05, -(0.05 + 0.5 * 300 * t * t), -300 * t - 0.05])
        return lo, -lo

    def random_actions(self, n, rng):
        return rng.uniform(-1.0, 1.0, size=(n, 1))


# ---------------------------------------------------------------------------
# Discrete grid (for exhaustive oracle checks)


@dataclass
class GridEnv:
    """Deterministic ``size x size`` grid; actions 0..3 move right, up,
    left, down and are blocked by the walls.  State ``(x, y)``."""

    size: int = 4
    horizon: int = 4
    start: tuple = (0, 0)
    state_dim: int = field(default=2, init=False)
    action_dim: int = field(default=1, init=False)
    n_actions: int = field(default=4, init=False)

    MOVES = np.array([[1, 0], [0, 1], [-1, 0], [0, -1]], dtype=float)

    def __post_init__(self):
        self.predicates = builtin_predicates(self)

    def reset(self, n=None, rng=None):
        s0 = np.asarray(self.start, dtype=float)
        return s0.copy() if n is None else np.tile(s0, (n, 1))

    def step(self, states, actions, rng=None):
        idx = np.asarray(actions).astype(int).reshape(np.shape(states)[:-1])
        return np.clip(np.asarray(states, dtype=float) + self.MOVES[idx], 0, self.size - 1)

    def state_bounds(self):
        return np.zeros(2), np.full(2, self.size - 1.0)

    def random_actions(self, n, rng):
        return rng.integers(0, 4, size=(n, 1)).astype(float)


def builtin_predicates(env) -> PredicateRegistry:
    """Predicates for a built-in environment.

    Point robot and grid: ``reach(x, y)``, ``avoid(x_lo, x_hi, y_lo, y_hi)``
    and (point robot only) ``fuel_positive``.  Cart-pole: ``reach(c)`` on
    the cart position and ``balance`` (pole angle within pi/15).
    """
    if isinstance(env, CartPoleEnv):
        return PredicateRegistry(
            [reach_decl(dims=(0,)), _component_decl("balance", 2, threshold=math.pi / 15, absolute=True)]
        )
    decls = [reach_decl(), avoid_decl()]
    if isinstance(env, PointRobotEnv):
        decls.append(_component_decl("fuel_positive", 2))
    return PredicateRegistry(decls)
