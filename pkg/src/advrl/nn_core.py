"""Dense networks with hand-written gradients, Adam, softmax and RNG helpers.

Every network keeps all of its parameters in one flat float64 vector (weights
of every layer first, then biases), so optimizer steps, soft target updates
and checkpoints each touch a single array.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from . import kernels
from .errors import ContractError, FormatError, NumericError, ShapeError

ACTIVATIONS = {"identity": kernels.IDENTITY, "relu": kernels.RELU, "tanh": kernels.TANH}

CKPT_MAGIC = "RRLCKPT"
CKPT_VERSION = "v1"


class Layer(NamedTuple):
    weight: np.ndarray  # [out x in], a view into DenseNet.params
    bias: np.ndarray
    activation: str


class DenseNet:
    """Multilayer perceptron ``input_dim -> sizes[0] -> ... -> sizes[-1]``."""

    def __init__(self, input_dim: int, sizes: Sequence[int], activations: Sequence[str],
                 params: np.ndarray | None = None):
        if input_dim < 1 or not sizes or any(s < 1 for s in sizes):
            raise ShapeError(f"bad architecture in={input_dim} sizes={list(sizes)}")
        if len(sizes) != len(activations):
            raise ShapeError("one activation per layer required")
        for a in activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        self.dims = (int(input_dim),) + tuple(int(s) for s in sizes)
        self.activations = tuple(activations)
        self._act_codes = tuple(ACTIVATIONS[a] for a in activations)
        n = self.num_params(self.dims)
        if params is None:
            params = np.zeros(n)
        params = np.ascontiguousarray(params, dtype=np.float64)
        if params.shape != (n,):
            raise ShapeError(f"expected {n} parameters, got {params.shape}")
        self.params = params
        self.version = 0

    @staticmethod
    def num_params(dims) -> int:
        return sum(dims[i] * dims[i + 1] + dims[i + 1] for i in range(len(dims) - 1))

    @property
    def input_dim(self) -> int:
        return self.dims[0]

    @property
    def output_dim(self) -> int:
        return self.dims[-1]

    @property
    def layers(self) -> list[Layer]:
        return [Layer(w, b, a) for (w, b), a in zip(self.unflatten(self.params), self.activations)]

    def unflatten(self, flat: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        """Split a parameter-shaped vector into per-layer ``(weight, bias)`` views."""
        dims = self.dims
        out = []
        w_off = 0
        b_off = sum(dims[i] * dims[i + 1] for i in range(len(dims) - 1))
        for i in range(len(dims) - 1):
            n_w = dims[i] * dims[i + 1]
            out.append((flat[w_off:w_off + n_w].reshape(dims[i + 1], dims[i]),
                        flat[b_off:b_off + dims[i + 1]]))
            w_off += n_w
            b_off += dims[i + 1]
        return out

    def touch(self) -> None:
        """Mark parameters as modified; outstanding forward caches go stale."""
        self.version += 1

    def copy(self) -> "DenseNet":
        return DenseNet(self.dims[0], self.dims[1:], self.activations, self.params.copy())

    def same_architecture(self, other: "DenseNet") -> bool:
        return self.dims == other.dims and self.activations == other.activations

    def descriptor(self) -> str:
        layers = ",".join(f"{d}:{a}" for d, a in zip(self.dims[1:], self.activations))
        return f"in:{self.dims[0]};layers:{layers}"

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return forward(self, x)[0]

    def __repr__(self) -> str:
        return f"DenseNet({self.descriptor()})"


def init_dense(input_dim: int, sizes: Sequence[int], activations: Sequence[str],
               rng: np.random.Generator) -> DenseNet:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases."""
    net = DenseNet(input_dim, sizes, activations)
    for w, b in net.unflatten(net.params):
        bound = 1.0 / math.sqrt(w.shape[1])
        w[...] = rng.uniform(-bound, bound, size=w.shape)
        b[...] = rng.uniform(-bound, bound, size=b.shape)
    return net


def mlp(input_dim: int, hidden: Sequence[int], output_dim: int, rng: np.random.Generator,
        output_activation: str = "identity") -> DenseNet:
    """ReLU hidden layers with the given output activation."""
    sizes = list(hidden) + [output_dim]
    acts = ["relu"] * len(hidden) + [output_activation]
    return init_dense(input_dim, sizes, acts, rng)


@dataclass
class Cache:
    net_id: int
    version: int
    x: np.ndarray
    pre: np.ndarray
    post: np.ndarray
    squeeze: bool


def forward(net: DenseNet, x: np.ndarray) -> tuple[np.ndarray, Cache]:
    """Evaluate ``net`` on one input vector or a ``(batch, input_dim)`` array."""
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    X = np.ascontiguousarray(x.reshape(1, -1) if squeeze else x)
    if X.ndim != 2 or X.shape[1] != net.input_dim:
        raise ShapeError(f"input shape {x.shape} does not match input_dim={net.input_dim}")
    pre, post = kernels.forward(net.params, net.dims, net._act_codes, X)
    out = post[:, post.shape[1] - net.output_dim:]
    cache = Cache(id(net), net.version, X, pre, post, squeeze)
    return (out[0] if squeeze else out), cache


def backward(net: DenseNet, cache: Cache, upstream: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of ``sum(upstream * output)`` w.r.t. the flat parameters and the input.

    For a batched forward the parameter gradient is summed over rows and the
    input gradient is returned per row.
    """
    if cache.net_id != id(net) or cache.version != net.version:
        raise ContractError("forward cache does not belong to this network state")
    G = np.asarray(upstream, dtype=np.float64)
    if cache.squeeze:
        G = G.reshape(1, -1)
    if G.shape != (cache.x.shape[0], net.output_dim):
        raise ShapeError(f"upstream shape {np.shape(upstream)} does not match output")
    grad, dx = kernels.backward(net.params, net.dims, net._act_codes, cache.x,
                                cache.pre, cache.post, np.ascontiguousarray(G))
    return grad, (dx[0] if cache.squeeze else dx)


def input_gradient(net: DenseNet, x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    _, cache = forward(net, x)
    return backward(net, cache, upstream)[1]


# --- optimizer -----------------------------------------------------------------

@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon_stab: float = 1e-8
    step_count: int = 0

    @classmethod
    def for_params(cls, params: np.ndarray, learning_rate: float = 1e-3, **kw) -> "AdamState":
        return cls(np.zeros_like(params), np.zeros_like(params), learning_rate, **kw)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState):
    """In-place bias-corrected Adam update; returns ``(params, state)``."""
    if grads.shape != params.shape or state.first_moment.shape != params.shape:
        raise ShapeError("params, grads and Adam moments must share a shape")
    if not np.isfinite(grads).all():
        raise NumericError("non-finite gradient passed to adam_step")
    state.step_count += 1
    t = state.step_count
    m, v = state.first_moment, state.second_moment
    m *= state.beta1
    m += (1.0 - state.beta1) * grads
    v *= state.beta2
    v += (1.0 - state.beta2) * grads * grads
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    params -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon_stab)
    return params, state


def soft_update(target: DenseNet, source: DenseNet, tau: float) -> None:
    """``target <- tau * source + (1 - tau) * target``."""
    if not target.same_architecture(source):
        raise ShapeError("soft update between different architectures")
    if tau == 1.0:
        target.params[...] = source.params
    else:
        target.params *= 1.0 - tau
        target.params += tau * source.params
    target.touch()


# --- policy helpers --------------------------------------------------------------

def softmax(q: np.ndarray) -> np.ndarray:
    """Max-shifted softmax along the last axis."""
    q = np.asarray(q, dtype=np.float64)
    if not np.isfinite(q).all():
        raise NumericError("softmax of non-finite logits")
    z = np.exp(q - q.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


PMF_FLOOR = 1e-12


class WorstActionLoss(NamedTuple):
    loss: float
    logit_grad: np.ndarray
    clamped: bool


def worst_action_loss(pmf: np.ndarray, worst_action_index: int) -> WorstActionLoss:
    """Cross-entropy against the one-hot on the worst action, ``-log pmf[w]``.

    ``logit_grad`` is the derivative w.r.t. the logits the pmf came from,
    ``pmf - onehot(w)``.
    """
    pmf = np.asarray(pmf, dtype=np.float64)
    w = int(worst_action_index)
    if not 0 <= w < pmf.shape[-1]:
        raise IndexError(f"worst action {w} out of range for {pmf.shape[-1]} actions")
    p = pmf[w]
    clamped = bool(p < PMF_FLOOR)
    loss = -math.log(max(p, PMF_FLOOR))
    grad = pmf.copy()
    grad[w] -= 1.0
    return WorstActionLoss(loss, grad, clamped)


# --- randomness --------------------------------------------------------------------

def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def spawn_rng(seed: int, *indices: int) -> np.random.Generator:
    """Independent stream keyed by ``(seed, *indices)``; order of creation is irrelevant."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, *indices])))


def sample_beta(rng: np.random.Generator, alpha_b: float, beta_b: float, size=None):
    """Beta draw(s) as ``X / (X + Y)`` with ``X ~ Gamma(alpha_b)``, ``Y ~ Gamma(beta_b)``."""
    if not (alpha_b > 0 and beta_b > 0):
        raise ValueError(f"beta shape parameters must be positive, got ({alpha_b}, {beta_b})")
    x = rng.standard_gamma(alpha_b, size)
    y = rng.standard_gamma(beta_b, size)
    s = x + y
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(s > 0, x / np.where(s > 0, s, 1.0), 0.5)
    return float(out) if size is None else out


# --- checkpoints -------------------------------------------------------------------

def save_dense(net: DenseNet, path) -> None:
    header = f"{CKPT_MAGIC} {CKPT_VERSION} {net.descriptor()}\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(net.params.astype("<f8").tobytes())


def _parse_descriptor(desc: str):
    try:
        head, layers = desc.split(";", 1)
        if not head.startswith("in:") or not layers.startswith("layers:"):
            raise ValueError
        input_dim = int(head[3:])
        sizes, acts = [], []
        for item in layers[len("layers:"):].split(","):
            d, a = item.split(":")
            sizes.append(int(d))
            acts.append(a)
    except ValueError:
        raise FormatError(f"malformed architecture descriptor {desc!r}") from None
    return input_dim, sizes, acts


def load_dense(path) -> DenseNet:
    data = Path(path).read_bytes()
    nl = data.find(b"\n")
    if nl < 0:
        raise FormatError(f"{path}: missing header line")
    parts = data[:nl].decode("ascii", errors="replace").split(" ")
    if len(parts) != 3 or parts[0] != CKPT_MAGIC:
        found = parts[0] if parts else ""
        raise FormatError(f"{path}: expected magic {CKPT_MAGIC!r}, found {found!r}")
    if parts[1] != CKPT_VERSION:
        raise FormatError(f"{path}: expected version {CKPT_VERSION!r}, found {parts[1]!r}")
    input_dim, sizes, acts = _parse_descriptor(parts[2])
    n = DenseNet.num_params((input_dim, *sizes))
    body = data[nl + 1:]
    if len(body) != 8 * n:
        raise FormatError(f"{path}: expected {8 * n} parameter bytes, found {len(body)}")
    params = np.frombuffer(body, dtype="<f8").astype(np.float64)
    if not np.isfinite(params).all():
        raise FormatError(f"{path}: non-finite parameters")
    try:
        return DenseNet(input_dim, sizes, acts, params)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
