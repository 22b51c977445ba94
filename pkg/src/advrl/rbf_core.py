"""Gaussian radial-basis-function Q approximator trained by plain TD(0) SGD."""

from __future__ import annotations

import itertools
from pathlib import Path

import numpy as np

from .errors import FormatError, ShapeError

RBF_MAGIC = "RRLRBF"
RBF_VERSION = "v1"


class RbfNet:
    """``b**state_dim`` Gaussian kernels on a uniform grid over ``[0, 1]^state_dim``.

    Features use one joint Euclidean kernel per centroid,
    ``phi_k(s) = exp(-|s - c_k|^2 / (2 * kernel_variance))``.
    """

    def __init__(self, bins_per_dim: int, state_dim: int, num_actions: int,
                 kernel_variance: float | None = None, output_weights: np.ndarray | None = None):
        if bins_per_dim < 1 or state_dim < 1 or num_actions < 1:
            raise ShapeError("bins, state_dim and num_actions must be positive")
        self.bins_per_dim = int(bins_per_dim)
        self.state_dim = int(state_dim)
        self.num_actions = int(num_actions)
        axis = np.linspace(0.0, 1.0, self.bins_per_dim) if self.bins_per_dim > 1 else np.array([0.5])
        self.centroids = np.array(list(itertools.product(axis, repeat=self.state_dim)))
        if kernel_variance is None:
            kernel_variance = 2.0 / self.bins_per_dim ** 2
        if not kernel_variance > 0:
            raise ValueError("kernel_variance must be positive")
        self.kernel_variance = float(kernel_variance)
        k = len(self.centroids)
        if output_weights is None:
            output_weights = np.zeros((self.num_actions, k))
        output_weights = np.array(output_weights, dtype=np.float64)
        if output_weights.shape != (self.num_actions, k):
            raise ShapeError(f"output_weights must be {(self.num_actions, k)}")
        self.output_weights = output_weights
        self._axis = axis

    @property
    def num_features(self) -> int:
        return len(self.centroids)

    def features(self, s: np.ndarray) -> np.ndarray:
        """phi(s) for one state ``(d,)`` or a batch ``(B, d)``; no clipping."""
        s = np.asarray(s, dtype=np.float64)
        if s.shape[-1] != self.state_dim:
            raise ShapeError(f"state dim {s.shape[-1]} != {self.state_dim}")
        # the centroid grid is a Cartesian product, so phi is the outer product of
        # per-dimension kernels (first dimension slowest, as in the centroid order)
        per_dim = np.exp(-(s[..., :, None] - self._axis) ** 2 / (2.0 * self.kernel_variance))
        phi = per_dim[..., 0, :]
        for j in range(1, self.state_dim):
            phi = (phi[..., :, None] * per_dim[..., j, None, :]).reshape(*phi.shape[:-1], -1)
        return phi

    def copy(self) -> "RbfNet":
        return RbfNet(self.bins_per_dim, self.state_dim, self.num_actions,
                      self.kernel_variance, self.output_weights.copy())


def clip_state(s: np.ndarray) -> tuple[np.ndarray, bool]:
    s = np.asarray(s, dtype=np.float64)
    c = np.clip(s, 0.0, 1.0)
    return c, bool((c != s).any())


def rbf_q_values(net: RbfNet, s: np.ndarray, return_flag: bool = False):
    """Q values per action. States outside ``[0,1]`` are clipped first."""
    c, clipped = clip_state(s)
    q = net.features(c) @ net.output_weights.T
    return (q, clipped) if return_flag else q


def rbf_q_input_gradient(net: RbfNet, s: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """d/ds of ``sum(upstream * Q(s))``; zero along clipped coordinates."""
    s = np.asarray(s, dtype=np.float64)
    c = np.clip(s, 0.0, 1.0)
    phi = net.features(c)                                   # (..., K)
    coef = (np.asarray(upstream) @ net.output_weights) * phi  # (..., K)
    # sum_k coef_k (c - c_k) without the (..., K, d) temporary
    g = -(coef.sum(-1)[..., None] * c - coef @ net.centroids) / net.kernel_variance
    inside = (s >= 0.0) & (s <= 1.0)
    return g * inside


def rbf_td_update(net: RbfNet, s, a: int, r: float, s_next, done: bool,
                  gamma: float, lr: float) -> float:
    """One TD(0) step on row ``a`` of the output weights; returns the TD error."""
    phi = net.features(clip_state(s)[0])
    q_sa = float(net.output_weights[a] @ phi)
    target = r
    if not done:
        target += gamma * float(rbf_q_values(net, s_next).max())
    delta = target - q_sa
    if delta != 0.0:
        net.output_weights[a] += lr * delta * phi
    return delta


def save_rbf(net: RbfNet, path) -> None:
    header = (f"{RBF_MAGIC} {RBF_VERSION} {net.bins_per_dim};{net.state_dim};"
              f"{net.num_actions};{net.kernel_variance!r}\n").encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(net.output_weights.astype("<f8").tobytes())


def load_rbf(path) -> RbfNet:
    data = Path(path).read_bytes()
    nl = data.find(b"\n")
    if nl < 0:
        raise FormatError(f"{path}: missing header line")
    parts = data[:nl].decode("ascii", errors="replace").split(" ")
    if len(parts) != 3 or parts[0] != RBF_MAGIC:
        raise FormatError(f"{path}: expected magic {RBF_MAGIC!r}, found {parts[0]!r}")
    if parts[1] != RBF_VERSION:
        raise FormatError(f"{path}: expected version {RBF_VERSION!r}, found {parts[1]!r}")
    try:
        b, d, na, var = parts[2].split(";")
        b, d, na, var = int(b), int(d), int(na), float(var)
    except ValueError:
        raise FormatError(f"{path}: malformed RBF header {parts[2]!r}") from None
    k = b ** d
    body = data[nl + 1:]
    if len(body) != 8 * na * k:
        raise FormatError(f"{path}: expected {8 * na * k} weight bytes, found {len(body)}")
    w = np.frombuffer(body, dtype="<f8").reshape(na, k)
    return RbfNet(b, d, na, var, w)
