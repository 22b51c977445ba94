"""Pure-numpy MLP kernels.

Reference implementation of the dense forward/backward kernels. The compiled
module ``advrl._kernels`` exposes the same two functions with identical
signatures; :mod:`advrl.kernels` picks one at import time.

Parameter layout (shared with the checkpoint format): one flat float64 vector
holding every layer's weight matrix ``[out x in]`` row-major, layer by layer,
followed by every layer's bias vector, layer by layer.

Activations are stored in two ``(batch, H)`` buffers, ``pre`` and ``post``,
where ``H = sum(dims[1:])`` and layer ``l`` owns a contiguous column block.
"""

import numpy as np

IDENTITY, RELU, TANH = 0, 1, 2


def _offsets(dims):
    w_off = [0]
    for l in range(len(dims) - 1):
        w_off.append(w_off[-1] + dims[l + 1] * dims[l])
    b_off = [w_off[-1]]
    for l in range(len(dims) - 1):
        b_off.append(b_off[-1] + dims[l + 1])
    c_off = [0]
    for l in range(len(dims) - 1):
        c_off.append(c_off[-1] + dims[l + 1])
    return w_off, b_off, c_off


def forward(params, dims, acts, X):
    n_layers = len(dims) - 1
    w_off, b_off, c_off = _offsets(dims)
    batch = X.shape[0]
    pre = np.empty((batch, c_off[-1]))
    post = np.empty((batch, c_off[-1]))
    h = X
    for l in range(n_layers):
        d_in, d_out = dims[l], dims[l + 1]
        W = params[w_off[l]:w_off[l + 1]].reshape(d_out, d_in)
        b = params[b_off[l]:b_off[l + 1]]
        z = h @ W.T + b
        pre[:, c_off[l]:c_off[l + 1]] = z
        if acts[l] == RELU:
            a = np.maximum(z, 0.0)
        elif acts[l] == TANH:
            a = np.tanh(z)
        else:
            a = z
        post[:, c_off[l]:c_off[l + 1]] = a
        h = a
    return pre, post


def backward(params, dims, acts, X, pre, post, G):
    n_layers = len(dims) - 1
    w_off, b_off, c_off = _offsets(dims)
    grad = np.empty_like(params)
    delta = np.asarray(G, dtype=np.float64)
    for l in range(n_layers - 1, -1, -1):
        d_in, d_out = dims[l], dims[l + 1]
        cols = slice(c_off[l], c_off[l + 1])
        if acts[l] == RELU:
            delta = delta * (pre[:, cols] > 0.0)
        elif acts[l] == TANH:
            a = post[:, cols]
            delta = delta * (1.0 - a * a)
        h_in = X if l == 0 else post[:, c_off[l - 1]:c_off[l]]
        grad[w_off[l]:w_off[l + 1]] = (delta.T @ h_in).ravel()
        grad[b_off[l]:b_off[l + 1]] = delta.sum(axis=0)
        W = params[w_off[l]:w_off[l + 1]].reshape(d_out, d_in)
        delta = delta @ W
    return grad, delta
