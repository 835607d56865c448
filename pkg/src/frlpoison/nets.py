"""One-hidden-layer tanh actor and critic networks over flat parameter vectors.

Every gradient here is written out by hand. The batched helpers
(:func:`score`, :func:`critic_backward`) return weighted sums of per-sample
gradients, which is the only shape the learners need.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .envs import ActionSpec
from .errors import InputError

HIDDEN = 32
LOG_PROB_FLOOR = 1e-12
_LOG_FLOOR = math.log(LOG_PROB_FLOOR)
_HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)

Layout = tuple[tuple[str, tuple[int, ...]], ...]


@dataclass(frozen=True)
class ParamVector:
    """Flat float64 parameters plus the (name, shape) layout they unpack into.

    Treated as a value: operations return new vectors and never write into
    ``values``.
    """

    values: np.ndarray
    layout: Layout

    def __post_init__(self) -> None:
        size = sum(math.prod(shape) for _, shape in self.layout)
        if self.values.ndim != 1 or self.values.size != size:
            raise InputError(f"parameter vector of size {self.values.size} does not match "
                             f"layout size {size}")

    def __len__(self) -> int:
        return self.values.size

    def unflatten(self) -> dict[str, np.ndarray]:
        out, offset = {}, 0
        for name, shape in self.layout:
            size = math.prod(shape)
            out[name] = self.values[offset:offset + size].reshape(shape)
            offset += size
        return out

    @classmethod
    def flatten(cls, arrays: Mapping[str, np.ndarray], layout: Layout) -> "ParamVector":
        parts = [np.asarray(arrays[name], dtype=float).reshape(-1) for name, _ in layout]
        return cls(np.concatenate(parts), layout)

    def with_values(self, values: np.ndarray) -> "ParamVector":
        return ParamVector(np.asarray(values, dtype=float), self.layout)

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.layout)

    def same_layout(self, other: "ParamVector") -> bool:
        return self.layout == other.layout

    def equals(self, other: "ParamVector") -> bool:
        """Bitwise equality of layout and values."""
        return self.layout == other.layout and self.values.tobytes() == other.values.tobytes()


def actor_layout(obs_dim: int, spec: ActionSpec, hidden: int = HIDDEN) -> Layout:
    layout = [
        ("pi.W1", (hidden, obs_dim)),
        ("pi.b1", (hidden,)),
        ("pi.W2", (spec.dim, hidden)),
        ("pi.b2", (spec.dim,)),
    ]
    if not spec.discrete:
        layout.append(("pi.log_std", (spec.dim,)))
    return tuple(layout)


def critic_layout(obs_dim: int, hidden: int = HIDDEN) -> Layout:
    return (
        ("v.W1", (hidden, obs_dim)),
        ("v.b1", (hidden,)),
        ("v.W2", (1, hidden)),
        ("v.b2", (1,)),
    )


def _init(layout: Layout, rng: np.random.Generator) -> ParamVector:
    arrays = {}
    for name, shape in layout:
        if name.endswith("log_std"):
            arrays[name] = np.zeros(shape)
            continue
        # fan_in of a layer is the column count of its weight matrix
        weight = next(s for n, s in layout if n == name[:-2] + "W" + name[-1])
        bound = 1.0 / math.sqrt(weight[1])
        arrays[name] = rng.uniform(-bound, bound, size=shape)
    return ParamVector.flatten(arrays, layout)


def init_actor(obs_dim: int, spec: ActionSpec, rng: np.random.Generator,
               hidden: int = HIDDEN) -> ParamVector:
    return _init(actor_layout(obs_dim, spec, hidden), rng)


def init_critic(obs_dim: int, rng: np.random.Generator, hidden: int = HIDDEN) -> ParamVector:
    return _init(critic_layout(obs_dim, hidden), rng)


def is_gaussian(params: ParamVector) -> bool:
    return any(name == "pi.log_std" for name, _ in params.layout)


@dataclass(frozen=True)
class Categorical:
    probs: np.ndarray


@dataclass(frozen=True)
class Gaussian:
    mean: np.ndarray
    std: np.ndarray


def _as_batch(params: ParamVector, states) -> tuple[dict, np.ndarray]:
    w = params.unflatten()
    W1 = w[params.layout[0][0]]
    x = np.asarray(states, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[-1] != W1.shape[1]:
        raise InputError(f"observation dimension {x.shape[-1]} != network input {W1.shape[1]}")
    return w, x


def _actor_head(w: dict, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    h = np.tanh(x @ w["pi.W1"].T + w["pi.b1"])
    return h, h @ w["pi.W2"].T + w["pi.b2"]


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=1, keepdims=True)
    z = logits - m
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def actor_forward(params: ParamVector, observation) -> Categorical | Gaussian:
    w, x = _as_batch(params, observation)
    _, out = _actor_head(w, x)
    if is_gaussian(params):
        return Gaussian(out[0], np.exp(w["pi.log_std"]))
    return Categorical(np.exp(_log_softmax(out))[0])


def _batch_log_probs(params, w, x, actions, out):
    if is_gaussian(params):
        a = np.asarray(actions, dtype=float).reshape(out.shape)
        log_std = w["pi.log_std"]
        std = np.exp(log_std)
        z = (a - out) / std
        lp = -0.5 * (z * z).sum(axis=1) - log_std.sum() - out.shape[1] * _HALF_LOG_2PI
        return lp, z, std
    a = np.asarray(actions, dtype=int).reshape(-1)
    logp = _log_softmax(out)
    raw = logp[np.arange(a.size), a]
    return np.maximum(raw, _LOG_FLOOR), logp, a


def log_probs(params: ParamVector, states, actions) -> np.ndarray:
    """Log-probability (or log-density) of each action in a batch."""
    w, x = _as_batch(params, states)
    _, out = _actor_head(w, x)
    return _batch_log_probs(params, w, x, actions, out)[0]


def log_prob(params: ParamVector, observation, action) -> float:
    return float(log_probs(params, observation, [action])[0])


def score(params: ParamVector, states, actions, weights) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(log_probs, sum_t weights[t] * grad log pi(a_t|s_t))``.

    The gradient comes back as a flat array in ``params.layout`` order.
    """
    w, x = _as_batch(params, states)
    h, out = _actor_head(w, x)
    lp, aux, extra = _batch_log_probs(params, w, x, actions, out)
    weights = np.asarray(weights, dtype=float).reshape(-1)
    grads = {}
    if is_gaussian(params):
        z, std = aux, extra
        g_out = weights[:, None] * z / std
        grads["pi.log_std"] = (weights[:, None] * (z * z - 1.0)).sum(axis=0)
    else:
        logp, a = aux, extra
        g_out = -np.exp(logp)
        g_out[np.arange(a.size), a] += 1.0
        # floored log-probs are constants
        live = logp[np.arange(a.size), a] >= _LOG_FLOOR
        g_out *= (weights * live)[:, None]
    grads["pi.W2"] = g_out.T @ h
    grads["pi.b2"] = g_out.sum(axis=0)
    g_pre = (g_out @ w["pi.W2"]) * (1.0 - h * h)
    grads["pi.W1"] = g_pre.T @ x
    grads["pi.b1"] = g_pre.sum(axis=0)
    return lp, ParamVector.flatten(grads, params.layout).values


def log_prob_grad(params: ParamVector, observation, action) -> ParamVector:
    _, g = score(params, observation, [action], [1.0])
    return params.with_values(g)


def critic_values(params: ParamVector, states) -> np.ndarray:
    w, x = _as_batch(params, states)
    h = np.tanh(x @ w["v.W1"].T + w["v.b1"])
    return (h @ w["v.W2"].T)[:, 0] + w["v.b2"][0]


def critic_forward(params: ParamVector, observation) -> float:
    return float(critic_values(params, observation)[0])


def critic_backward(params: ParamVector, states, weights) -> np.ndarray:
    """Flat ``sum_t weights[t] * grad V(s_t)``."""
    w, x = _as_batch(params, states)
    h = np.tanh(x @ w["v.W1"].T + w["v.b1"])
    weights = np.asarray(weights, dtype=float).reshape(-1)
    g_pre = weights[:, None] * w["v.W2"] * (1.0 - h * h)
    grads = {
        "v.W2": (weights @ h)[None, :],
        "v.b2": np.array([weights.sum()]),
        "v.W1": g_pre.T @ x,
        "v.b1": g_pre.sum(axis=0),
    }
    return ParamVector.flatten(grads, params.layout).values


def critic_grad(params: ParamVector, observation) -> ParamVector:
    return params.with_values(critic_backward(params, observation, [1.0]))


class PolicySampler:
    """Fast single-observation action sampling for rollout loops."""

    def __init__(self, params: ParamVector, spec: ActionSpec) -> None:
        w = params.unflatten()
        self.W1, self.b1, self.W2, self.b2 = w["pi.W1"], w["pi.b1"], w["pi.W2"], w["pi.b2"]
        self.spec = spec
        self.std = np.exp(w["pi.log_std"]) if spec.kind == "continuous" else None

    def sample(self, obs: np.ndarray, rng: np.random.Generator):
        out = self.W2 @ np.tanh(self.W1 @ obs + self.b1) + self.b2
        if self.std is not None:
            return out + self.std * rng.standard_normal(out.size)
        p = np.exp(out - out.max())
        cdf = np.cumsum(p)
        return min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")),
                   out.size - 1)

    def sample_batch(self, obs: np.ndarray, rng: np.random.Generator):
        out = np.tanh(obs @ self.W1.T + self.b1) @ self.W2.T + self.b2
        if self.std is not None:
            return out + self.std * rng.standard_normal(out.shape)
        p = np.exp(out - out.max(axis=1, keepdims=True))
        cdf = np.cumsum(p, axis=1)
        u = rng.random(len(obs))[:, None] * cdf[:, -1:]
        return np.minimum((cdf <= u).sum(axis=1), out.shape[1] - 1)


def save_params(path: str | Path, params: ParamVector) -> None:
    """Plain-text layout header, then raw little-endian float64 values."""
    header = ["frlpoison-params 1"]
    header += [f"{name} {' '.join(str(d) for d in shape)}" for name, shape in params.layout]
    header.append("end")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(params.values.astype("<f8").tobytes())


def load_params(path: str | Path) -> ParamVector:
    with open(path, "rb") as fh:
        if fh.readline().decode("ascii").strip() != "frlpoison-params 1":
            raise InputError(f"{path}: not a parameter checkpoint")
        layout = []
        while True:
            line = fh.readline().decode("ascii").strip()
            if line == "end":
                break
            if not line:
                raise InputError(f"{path}: truncated layout header")
            name, *dims = line.split()
            layout.append((name, tuple(int(d) for d in dims)))
        values = np.frombuffer(fh.read(), dtype="<f8").astype(float)
    return ParamVector(values, tuple(layout))

