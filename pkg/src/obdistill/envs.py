"""Deterministic desk-scale environments, rollouts and return evaluation.

Every environment is a small state machine over a flat float vector. A
``reset(seed)`` fully determines the episode given the action sequence.

Seeds for episodes are derived from a run seed with :func:`derive_seed`,
which feeds ``(seed, crc32(tag), *indices)`` to ``numpy.random.SeedSequence``
and takes the first 64-bit word of its state.
"""
from __future__ import annotations

import copy
import math
import zlib
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .core import ActionSpec, ObdistillError


class EnvironmentFault(ObdistillError, RuntimeError):
    pass


def derive_seed(seed: int, tag: str, *indices: int) -> int:
    key = [int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(tag.encode())] + [int(i) for i in indices]
    ss = np.random.SeedSequence(key)
    return int(ss.generate_state(1, dtype=np.uint64)[0])


class Environment:
    """Base class: subclasses implement ``_reset(rng)`` and ``_step(action)``."""

    name = "env"
    feature_names: tuple[str, ...] = ()
    action_spec: ActionSpec
    max_episode_steps = 1000

    def __init__(self):
        self._state = None
        self._done = True
        self._t = 0
        self.rng = np.random.default_rng(0)

    @property
    def p(self) -> int:
        return len(self.feature_names)

    def reset(self, seed: int) -> np.ndarray:
        self.rng = np.random.default_rng(seed)
        self._t = 0
        self._done = False
        self._state = np.asarray(self._reset(self.rng), dtype=np.float64)
        return self._state.copy()

    def step(self, action):
        if self._done:
            raise EnvironmentFault(f"{self.name}: step() called on a finished episode")
        state, reward, done = self._step(action)
        self._t += 1
        if self._t >= self.max_episode_steps:
            done = True
        self._state = np.asarray(state, dtype=np.float64)
        self._done = bool(done)
        return self._state.copy(), float(reward), self._done

    def _reset(self, rng):
        raise NotImplementedError

    def _step(self, action):
        raise NotImplementedError

    def metadata(self) -> dict:
        return {"name": self.name, "p": self.p, "feature_names": list(self.feature_names),
                "action_spec": self.action_spec.to_json(),
                "max_episode_steps": self.max_episode_steps}


# ---------------------------------------------------------------------------
# ToyPong
# ---------------------------------------------------------------------------

class ToyPong(Environment):
    """Two paddles on the unit square; the player defends x=0.05.

    The enemy chases the ball faster than it can move vertically but is
    confined to ``y in [0.25, 0.75]``, so balls arriving near the walls beat
    it. With ``lazy_enemy`` the enemy stays put while the ball travels
    towards the player.
    """

    name = "toypong"
    feature_names = ("player.x", "player.y", "enemy.x", "enemy.y",
                     "ball.x", "ball.y", "ball.dx", "ball.dy")
    action_spec = ActionSpec.discrete(["NOOP", "UP", "DOWN"])
    max_episode_steps = 1000

    PLAYER_X = 0.05
    ENEMY_X = 0.95
    HALF_PADDLE = 0.08
    PLAYER_SPEED = 0.05
    ENEMY_SPEED = 0.05
    ENEMY_BAND = (0.25, 0.75)
    BALL_DX = 0.04

    def __init__(self, lazy_enemy: bool = False):
        super().__init__()
        self.lazy_enemy = lazy_enemy
        if lazy_enemy:
            self.name = "toypong-lazy"

    def _reset(self, rng):
        dy = rng.uniform(0.01, 0.03) * rng.choice([-1.0, 1.0])
        return [self.PLAYER_X, 0.5, self.ENEMY_X, 0.5,
                0.5, rng.uniform(0.3, 0.7), self.BALL_DX, dy]

    def _step(self, action):
        px, py, ex, ey, bx, by, dx, dy = self._state
        py = min(max(py + (0.0, self.PLAYER_SPEED, -self.PLAYER_SPEED)[int(action)], 0.0), 1.0)
        if not (self.lazy_enemy and dx < 0):
            ey += min(max(by - ey, -self.ENEMY_SPEED), self.ENEMY_SPEED)
            ey = min(max(ey, self.ENEMY_BAND[0]), self.ENEMY_BAND[1])
        bx += dx
        by += dy
        if by < 0.0:
            by, dy = -by, -dy
        elif by > 1.0:
            by, dy = 2.0 - by, -dy
        reward, done = 0.0, False
        if dx < 0 and bx <= self.PLAYER_X:
            if abs(by - py) <= self.HALF_PADDLE:
                bx = 2 * self.PLAYER_X - bx
                dx = self.BALL_DX
                dy = self.rng.uniform(0.02, 0.045) * self.rng.choice([-1.0, 1.0])
            else:
                reward, done = -1.0, True
        elif dx > 0 and bx >= self.ENEMY_X:
            if abs(by - ey) <= self.HALF_PADDLE:
                bx = 2 * self.ENEMY_X - bx
                dx = -self.BALL_DX
                dy = self.rng.uniform(0.01, 0.04) * self.rng.choice([-1.0, 1.0])
            else:
                reward, done = 1.0, True
        return [px, py, ex, ey, bx, by, dx, dy], reward, done


# ---------------------------------------------------------------------------
# CartPole
# ---------------------------------------------------------------------------

class CartPoleClassic(Environment):
    """Classic cart-pole with Euler integration and textbook constants."""

    name = "cartpole"
    feature_names = ("cart.x", "cart.v", "pole.theta", "pole.omega")
    action_spec = ActionSpec.discrete(["LEFT", "RIGHT"])
    max_episode_steps = 500

    GRAVITY = 9.8
    MASS_CART = 1.0
    MASS_POLE = 0.1
    HALF_LENGTH = 0.5
    FORCE = 10.0
    TAU = 0.02
    THETA_LIMIT = 12 * 2 * math.pi / 360
    X_LIMIT = 2.4

    def _reset(self, rng):
        return rng.uniform(-0.05, 0.05, size=4)

    def _step(self, action):
        x, v, theta, omega = self._state
        force = self.FORCE if int(action) == 1 else -self.FORCE
        total_mass = self.MASS_CART + self.MASS_POLE
        pml = self.MASS_POLE * self.HALF_LENGTH
        cos, sin = math.cos(theta), math.sin(theta)
        temp = (force + pml * omega ** 2 * sin) / total_mass
        alpha = (self.GRAVITY * sin - cos * temp) / (
            self.HALF_LENGTH * (4.0 / 3.0 - self.MASS_POLE * cos ** 2 / total_mass))
        acc = temp - pml * alpha * cos / total_mass
        x += self.TAU * v
        v += self.TAU * acc
        theta += self.TAU * omega
        omega += self.TAU * alpha
        done = abs(x) > self.X_LIMIT or abs(theta) > self.THETA_LIMIT
        return [x, v, theta, omega], 1.0, done


# ---------------------------------------------------------------------------
# CropSim
# ---------------------------------------------------------------------------

class CropSim(Environment):
    """Daily maize-like nitrogen management toy.

    Thermal time drives the growth stage (1..9); applied nitrogen enters a
    soil pool that leaches and is taken up according to stage demand.
    Reward is uptake minus a fertilizer cost.
    """

    name = "cropsim"
    feature_names = ("days_after_planting", "growth_stage", "cumulative_nitrogen")
    action_spec = ActionSpec.discrete(["apply_0", "apply_27", "apply_35", "apply_54"])
    max_episode_steps = 160

    DOSES = (0.0, 27.0, 35.0, 54.0)
    BASE_TEMP = 8.0
    # ~17 days per stage; stage changes stay clear of the fertilization days
    GDD_PER_STAGE = 204.0
    TEMP_STD = 2.0
    # relative N demand per growth stage, highest around grain filling
    DEMAND = (0.2, 0.4, 0.7, 1.0, 1.2, 1.5, 1.6, 1.0, 0.4)
    FERTILIZER_COST = 0.02

    def _reset(self, rng):
        self._gdd = 0.0
        self._pool = 20.0
        return [0.0, 1.0, 0.0]

    def _step(self, action):
        day, stage, cum_n = self._state
        dose = self.DOSES[int(action)]
        self._pool += dose
        demand = 0.25 * self.DEMAND[int(stage) - 1]
        uptake = min(0.1 * self._pool, demand)
        self._pool = (self._pool - uptake) * 0.99
        temp = 20.0 + self.TEMP_STD * self.rng.standard_normal()
        self._gdd += max(temp - self.BASE_TEMP, 0.0)
        stage = max(stage, min(9.0, 1.0 + math.floor(self._gdd / self.GDD_PER_STAGE)))
        reward = uptake - self.FERTILIZER_COST * dose
        return [day + 1.0, stage, cum_n + dose], reward, False


# ---------------------------------------------------------------------------
# DoubleIntegrator
# ---------------------------------------------------------------------------

class DoubleIntegrator(Environment):
    name = "integrator"
    feature_names = ("position", "velocity")
    action_spec = ActionSpec.continuous([-1.0], [1.0])
    max_episode_steps = 200
    DT = 0.05

    def _reset(self, rng):
        return [rng.uniform(-1.0, 1.0), rng.uniform(-0.5, 0.5)]

    def _step(self, action):
        x, v = self._state
        a = float(np.clip(np.asarray(action, dtype=np.float64).reshape(-1)[0], -1.0, 1.0))
        reward = -(x * x + 0.1 * v * v)
        return [x + self.DT * v, v + self.DT * a], reward, False


# ---------------------------------------------------------------------------
# Wrappers and registry
# ---------------------------------------------------------------------------

class StickyActions(Environment):
    """Repeat the previous action with probability ``repeat_prob``."""

    def __init__(self, env: Environment, repeat_prob: float = 0.25):
        super().__init__()
        if not 0.0 <= repeat_prob < 1.0:
            raise ValueError("repeat_prob must be in [0, 1)")
        self.env = env
        self.repeat_prob = repeat_prob
        self.name = f"{env.name}+sticky"
        self.feature_names = env.feature_names
        self.action_spec = env.action_spec
        self.max_episode_steps = env.max_episode_steps
        self._last = None

    def reset(self, seed):
        self.rng = np.random.default_rng(derive_seed(seed, "sticky"))
        self._last = None
        return self.env.reset(seed)

    def step(self, action):
        if self._last is not None and self.rng.random() < self.repeat_prob:
            action = self._last
        self._last = action
        return self.env.step(action)


ENVIRONMENTS = {
    "toypong": lambda: ToyPong(),
    "toypong-lazy": lambda: ToyPong(lazy_enemy=True),
    "cartpole": CartPoleClassic,
    "cropsim": CropSim,
    "integrator": DoubleIntegrator,
}


def make_env(name: str, sticky: float = 0.0) -> Environment:
    try:
        env = ENVIRONMENTS[name]()
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(ENVIRONMENTS)}") from None
    return StickyActions(env, sticky) if sticky > 0 else env


# ---------------------------------------------------------------------------
# Rollouts and evaluation
# ---------------------------------------------------------------------------

def rollout(policy, env: Environment, t: int, seed: int):
    """Collect exactly ``t`` states (recorded before acting) and the actions taken.

    Episodes are concatenated; episode ``k`` is reset with
    ``derive_seed(seed, "episode", k)``. Returns ``(states, actions)`` with
    ``states`` of shape ``(t, p)``.
    """
    if t < 1:
        raise ValueError("t must be >= 1")
    states = np.empty((t, env.p))
    actions = []
    episode = 0
    try:
        s = env.reset(derive_seed(seed, "episode", episode))
        for k in range(t):
            a = policy.act(s)
            states[k] = s
            actions.append(a)
            s, _, done = env.step(a)
            if done and k + 1 < t:
                episode += 1
                s = env.reset(derive_seed(seed, "episode", episode))
    except EnvironmentFault:
        raise
    except Exception as exc:
        raise EnvironmentFault(f"{env.name}: rollout failed: {exc}") from exc
    return states, actions


def run_episode(policy, env: Environment, seed: int) -> float:
    try:
        s = env.reset(seed)
        total, done = 0.0, False
        while not done:
            s, r, done = env.step(policy.act(s))
            total += r
    except EnvironmentFault:
        raise
    except Exception as exc:
        raise EnvironmentFault(f"{env.name}: episode failed: {exc}") from exc
    return total


def _episode_job(args):
    policy, env, seed = args
    return run_episode(policy, env, seed)


def episode_seeds(seed: int, episodes: int) -> list[int]:
    return [derive_seed(seed, "eval", k) for k in range(episodes)]


def evaluate_return(policy, env: Environment, episodes: int, seed: int, jobs: int = 1):
    """Mean and sample std of undiscounted returns, plus the per-episode list.

    With ``jobs > 1`` episodes run in worker processes on copies of ``env``;
    results are reduced in episode order so the output does not depend on
    scheduling.
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    seeds = episode_seeds(seed, episodes)
    if jobs > 1 and episodes > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            returns = list(pool.map(_episode_job,
                                    [(policy, copy.deepcopy(env), s) for s in seeds]))
    else:
        returns = [run_episode(policy, env, s) for s in seeds]
    arr = np.asarray(returns)
    std = float(arr.std(ddof=1)) if episodes > 1 else 0.0
    return float(arr.mean()), std, returns

