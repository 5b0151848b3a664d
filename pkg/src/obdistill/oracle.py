"""Oracle policies: scripted heuristics and feed-forward networks from JSON.

Oracle file format::

    {"input_dim": p,
     "layers": [{"w": [[...], ...], "b": [...], "act": "relu"|"tanh"|"identity"}, ...],
     "head": "q" | "logits" | "mean",
     "action_names": [...],            # discrete heads
     "action_low": [...], "action_high": [...]}   # "mean" head

``w`` is row-major with shape ``(out, in)``; a layer computes ``act(w @ x + b)``.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .core import ActionSpec, ObdistillError
from .envs import make_env


class ParseError(ObdistillError, ValueError):
    pass


class DimensionMismatch(ObdistillError, ValueError):
    pass


class UnknownActivation(ObdistillError, ValueError):
    pass


class NotStochastic(ObdistillError, ValueError):
    pass


class QUnavailable(ObdistillError, ValueError):
    pass


class Oracle:
    """Policy to imitate. ``act`` is deterministic given the state."""

    action_spec: ActionSpec
    has_q = False
    is_stochastic = False

    def act(self, s):
        raise NotImplementedError

    def act_batch(self, S: np.ndarray) -> list:
        return [self.act(s) for s in S]

    def q_values(self, s) -> np.ndarray:
        raise QUnavailable(f"{type(self).__name__} exposes no Q-values")

    def q_values_batch(self, S: np.ndarray) -> np.ndarray:
        return np.stack([self.q_values(s) for s in S])

    def log_policy(self, s) -> np.ndarray:
        raise NotStochastic(f"{type(self).__name__} is not a stochastic policy")


# ---------------------------------------------------------------------------
# Networks
# ---------------------------------------------------------------------------

ACTIVATIONS = {
    "relu": lambda z: np.maximum(z, 0.0),
    "tanh": np.tanh,
    "identity": lambda z: z,
}


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    shift = z.max(axis=-1, keepdims=True)
    return z - shift - np.log(np.exp(z - shift).sum(axis=-1, keepdims=True))


class MlpOracle(Oracle):
    def __init__(self, layers, head, action_spec: ActionSpec, input_dim: int | None = None):
        if head not in ("q", "logits", "mean"):
            raise ParseError(f"unknown head {head!r}")
        if not layers:
            raise DimensionMismatch("network needs at least one layer")
        self.layers = []
        prev = input_dim
        for k, (w, b, act) in enumerate(layers):
            w = np.asarray(w, dtype=np.float64)
            b = np.asarray(b, dtype=np.float64)
            if act not in ACTIVATIONS:
                raise UnknownActivation(f"layer {k}: unknown activation {act!r}")
            if w.ndim != 2 or b.ndim != 1 or b.shape[0] != w.shape[0]:
                raise DimensionMismatch(f"layer {k}: weight {w.shape} and bias {b.shape} disagree")
            if prev is not None and w.shape[1] != prev:
                raise DimensionMismatch(f"layer {k}: expects {w.shape[1]} inputs, gets {prev}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ParseError(f"layer {k}: non-finite parameters")
            self.layers.append((w, b, act))
            prev = w.shape[0]
        self.input_dim = self.layers[0][0].shape[1]
        self.head = head
        self.action_spec = action_spec
        out = prev
        if head == "mean":
            if action_spec.is_discrete or out != action_spec.dim:
                raise DimensionMismatch("mean head needs a continuous spec of matching dim")
        elif not action_spec.is_discrete or out != action_spec.n:
            raise DimensionMismatch(f"{head} head outputs {out} values for {action_spec.n} actions")
        self.has_q = head == "q"
        self.is_stochastic = head == "logits"

    def forward(self, x: np.ndarray) -> np.ndarray:
        h = np.asarray(x, dtype=np.float64)
        for w, b, act in self.layers:
            h = ACTIVATIONS[act](h @ w.T + b)
        return h

    def act(self, s):
        out = self.forward(s)
        if self.head == "mean":
            return np.clip(out, self.action_spec.low, self.action_spec.high)
        return int(np.argmax(out))

    def act_batch(self, S):
        out = self.forward(S)
        if self.head == "mean":
            return list(np.clip(out, self.action_spec.low, self.action_spec.high))
        return [int(a) for a in np.argmax(out, axis=1)]

    def q_values(self, s):
        if self.head != "q":
            raise QUnavailable("network has no Q head")
        return self.forward(s)

    def q_values_batch(self, S):
        if self.head != "q":
            raise QUnavailable("network has no Q head")
        return self.forward(S)

    def log_policy(self, s):
        if self.head != "logits":
            raise NotStochastic("network has no policy-logits head")
        return log_softmax(self.forward(s))

    def to_json(self) -> dict:
        d = {"input_dim": self.input_dim,
             "layers": [{"w": w.tolist(), "b": b.tolist(), "act": act}
                        for w, b, act in self.layers],
             "head": self.head}
        if self.action_spec.is_discrete:
            d["action_names"] = list(self.action_spec.names)
        else:
            d["action_low"] = list(self.action_spec.low)
            d["action_high"] = list(self.action_spec.high)
        return d


def oracle_from_dict(d: dict) -> MlpOracle:
    try:
        head = d["head"]
        layers = [(layer["w"], layer["b"], layer.get("act", "identity")) for layer in d["layers"]]
        if head == "mean":
            spec = ActionSpec.continuous(d["action_low"], d["action_high"])
        else:
            spec = ActionSpec.discrete(d["action_names"])
        input_dim = d.get("input_dim")
    except (KeyError, TypeError) as exc:
        raise ParseError(f"malformed oracle description: {exc!r}") from exc
    try:
        return MlpOracle(layers, head, spec, input_dim)
    except ValueError as exc:
        if isinstance(exc, ObdistillError):
            raise
        raise DimensionMismatch(str(exc)) from exc


def load_oracle(path) -> Oracle:
    """Load an oracle from a JSON file, or a built-in via ``builtin:NAME``."""
    path = str(path)
    if path.startswith("builtin:"):
        return builtin_oracle(path.split(":", 1)[1])
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if not isinstance(d, dict):
        raise ParseError(f"{path}: expected a JSON object")
    return oracle_from_dict(d)


class LogPolicyQ(Oracle):
    """Expose ``log pi(s, .)`` of a stochastic discrete oracle as its Q-values."""

    has_q = True

    def __init__(self, base: Oracle):
        self.base = base
        self.action_spec = base.action_spec

    def act(self, s):
        return self.base.act(s)

    def act_batch(self, S):
        return self.base.act_batch(S)

    def q_values(self, s):
        return self.base.log_policy(s)

    def q_values_batch(self, S):
        if isinstance(self.base, MlpOracle):
            return self.base.log_policy(S)
        return super().q_values_batch(S)


def q_from_log_policy(oracle: Oracle) -> Oracle:
    if not getattr(oracle, "is_stochastic", False) or not oracle.action_spec.is_discrete:
        raise NotStochastic(f"{type(oracle).__name__} has no log-policy over discrete actions")
    return LogPolicyQ(oracle)


# ---------------------------------------------------------------------------
# Scripted oracles
# ---------------------------------------------------------------------------

class ToyPongTracker(Oracle):
    """Move the paddle towards the ball's height, idle within a deadband."""

    action_spec = make_env("toypong").action_spec

    def __init__(self, deadband: float = 0.01, target: str = "ball.y"):
        names = make_env("toypong").feature_names
        self.deadband = deadband
        self.target = names.index(target)
        self.player = names.index("player.y")

    def act(self, s):
        gap = s[self.target] - s[self.player]
        if gap > self.deadband:
            return 1
        if gap < -self.deadband:
            return 2
        return 0


class CropHeuristic(Oracle):
    """Fixed fertilization calendar: 27, 35, 54 kg/ha on the first day at or after 39, 45, 80."""

    action_spec = make_env("cropsim").action_spec
    SCHEDULE = ((39.0, 1), (45.0, 2), (80.0, 3))

    def act(self, s):
        day = s[0]
        for start, action in self.SCHEDULE:
            if start <= day < start + 1.0:
                return action
        return 0


class CartPolePD(Oracle):
    action_spec = make_env("cartpole").action_spec

    def __init__(self, gains=(0.1, 0.5, 10.0, 2.0)):
        self.gains = np.asarray(gains, dtype=np.float64)

    def act(self, s):
        return 1 if float(self.gains @ np.asarray(s)) > 0 else 0


class IntegratorPD(Oracle):
    action_spec = make_env("integrator").action_spec

    def __init__(self, kp: float = 2.0, kd: float = 2.5):
        self.kp, self.kd = kp, kd

    def act(self, s):
        return np.array([min(max(-self.kp * s[0] - self.kd * s[1], -1.0), 1.0)])


def toypong_q_network(deadband: float = 0.01) -> dict:
    """Two-layer ReLU Q-network whose greedy policy is the deadband tracker.

    Hidden units are ``relu(+gap)`` and ``relu(-gap)`` with ``gap = ball.y -
    player.y``; ``Q = [0, gap - deadband, -gap - deadband]``.
    """
    names = make_env("toypong").feature_names
    up = [0.0] * len(names)
    up[names.index("ball.y")], up[names.index("player.y")] = 1.0, -1.0
    down = [-v for v in up]
    return {
        "input_dim": len(names),
        "layers": [
            {"w": [up, down], "b": [0.0, 0.0], "act": "relu"},
            {"w": [[0.0, 0.0], [1.0, -1.0], [-1.0, 1.0]],
             "b": [0.0, -deadband, -deadband], "act": "identity"},
        ],
        "head": "q",
        "action_names": list(make_env("toypong").action_spec.names),
    }


def toypong_logits_network(scale: float = 50.0, deadband: float = 0.01) -> dict:
    d = toypong_q_network(deadband)
    last = d["layers"][-1]
    last["w"] = [[v * scale for v in row] for row in last["w"]]
    last["b"] = [v * scale for v in last["b"]]
    d["head"] = "logits"
    return d


BUILTINS = {
    "tracker": ToyPongTracker,
    "shortcut": lambda: ToyPongTracker(target="enemy.y"),
    "crop": CropHeuristic,
    "cartpole-pd": CartPolePD,
    "integrator-pd": IntegratorPD,
    "toypong-q": lambda: oracle_from_dict(toypong_q_network()),
    "toypong-logits": lambda: oracle_from_dict(toypong_logits_network()),
}

# environment each built-in is written for
BUILTIN_ENVS = {"tracker": "toypong", "shortcut": "toypong", "crop": "cropsim",
                "cartpole-pd": "cartpole", "integrator-pd": "integrator",
                "toypong-q": "toypong", "toypong-logits": "toypong"}


def builtin_oracle(name: str) -> Oracle:
    try:
        return BUILTINS[name]()
    except KeyError:
        raise ParseError(f"unknown built-in oracle {name!r}; choose from {sorted(BUILTINS)}") from None

