"""Feed-forward motor-command policy and its portable file format."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .observation import OBS_DIM

POLICY_FORMAT = "aforge-policy"
POLICY_VERSION = 1
HIDDEN = (64, 64, 64)
N_ACTIONS = 6

# fixed observation scaling: position, R6D, velocity, body rates
DEFAULT_OBS_SCALE = np.array([1.0] * 3 + [1.0] * 6 + [0.5] * 3 + [0.2] * 3)

_ACTIVATIONS = {"tanh": np.tanh, "relu": lambda x: np.maximum(x, 0.0)}


@dataclass
class PolicyNetwork:
    """MLP ``15 -> 64 -> 64 -> 64 -> 6`` with a tanh-squashed output.

    The squashed unit ``a`` in ``[-1, 1]`` maps affinely onto the rotor
    speed range, so outputs are within actuator bounds for every input.
    """

    weights: list
    biases: list
    rps_min: float
    rps_max: float
    activation: str = "tanh"
    obs_scale: np.ndarray = field(default_factory=lambda: DEFAULT_OBS_SCALE.copy())

    def __post_init__(self):
        self.weights = [np.asarray(w, dtype=float) for w in self.weights]
        self.biases = [np.asarray(b, dtype=float) for b in self.biases]
        self.obs_scale = np.asarray(self.obs_scale, dtype=float)
        shapes = [w.shape for w in self.weights]
        if shapes[0][1] != OBS_DIM or shapes[-1][0] != N_ACTIONS:
            raise ValueError(f"unexpected layer shapes {shapes}")
        for a, b in zip(shapes[:-1], shapes[1:]):
            if a[0] != b[1]:
                raise ValueError(f"layer shapes do not chain: {shapes}")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation '{self.activation}'")

    @property
    def layer_sizes(self) -> tuple:
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    def pre_squash(self, obs) -> np.ndarray:
        h = np.atleast_2d(np.asarray(obs, dtype=float)) * self.obs_scale
        act = _ACTIVATIONS[self.activation]
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = act(h @ w.T + b)
        return h @ self.weights[-1].T + self.biases[-1]

    def normalized(self, obs) -> np.ndarray:
        """Squashed action in ``[-1, 1]``."""
        return np.tanh(self.pre_squash(obs))

    def to_rps(self, a) -> np.ndarray:
        mid = 0.5 * (self.rps_max + self.rps_min)
        half = 0.5 * (self.rps_max - self.rps_min)
        return np.clip(mid + half * a, self.rps_min, self.rps_max)

    def __call__(self, obs) -> np.ndarray:
        return self.to_rps(self.normalized(obs))

    def to_json_dict(self) -> dict:
        return {
            "format": POLICY_FORMAT,
            "version": POLICY_VERSION,
            "activation": self.activation,
            "output": "tanh-affine",
            "layer_sizes": list(self.layer_sizes),
            "actuator_bounds": {"rps_min": self.rps_min, "rps_max": self.rps_max},
            "obs_scale": self.obs_scale.tolist(),
            "layers": [{"shape": list(w.shape), "weight": w.ravel().tolist(), "bias": b.tolist()}
                       for w, b in zip(self.weights, self.biases)],
        }

    @classmethod
    def from_json_dict(cls, d) -> "PolicyNetwork":
        if d.get("format") != POLICY_FORMAT:
            raise ValueError("not a policy file")
        if int(d.get("version", -1)) > POLICY_VERSION:
            raise ValueError(f"policy file version {d['version']} is newer than supported")
        ws = [np.asarray(l["weight"], dtype=float).reshape(l["shape"]) for l in d["layers"]]
        bs = [np.asarray(l["bias"], dtype=float) for l in d["layers"]]
        b = d["actuator_bounds"]
        return cls(ws, bs, float(b["rps_min"]), float(b["rps_max"]), d.get("activation", "tanh"),
                   np.asarray(d.get("obs_scale", DEFAULT_OBS_SCALE), dtype=float))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict()) + "\n")

    @classmethod
    def load(cls, path) -> "PolicyNetwork":
        return cls.from_json_dict(json.loads(Path(path).read_text()))


def random_policy(rng: np.random.Generator, rps_min: float, rps_max: float, sizes=(OBS_DIM,) + HIDDEN + (N_ACTIONS,),
                  activation: str = "tanh") -> PolicyNetwork:
    """Glorot-uniform initialization with zero biases."""
    ws, bs = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        lim = np.sqrt(6.0 / (n_in + n_out))
        ws.append(rng.uniform(-lim, lim, (n_out, n_in)))
        bs.append(np.zeros(n_out))
    return PolicyNetwork(ws, bs, rps_min, rps_max, activation)
