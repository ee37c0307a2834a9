"""Reference kernel implementations on top of numpy.

Every function takes and returns float64 arrays.  The compiled backend
in _native.pyx mirrors these signatures exactly; tests compare the two.
"""

import numpy as np


def matmul(a, b):
    return a @ b


def sigmoid(x):
    # Branch on sign so exp never sees a large positive argument.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def tanh(x):
    return np.tanh(x)


def relu(x):
    return np.maximum(x, 0.0)


def softmax_rows(x):
    # x is 2-D; max subtraction keeps exp in range for any finite input.
    m = x.max(axis=1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=1, keepdims=True)


def layer_norm_rows(x, gain, bias, eps):
    """Normalize each row to zero mean / unit variance, then apply gain and bias.

    Returns (out, xhat, inv_std); the latter two are reused by the
    backward pass.
    """
    mu = x.mean(axis=1, keepdims=True)
    var = np.square(x - mu).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv_std
    return xhat * gain + bias, xhat, inv_std
