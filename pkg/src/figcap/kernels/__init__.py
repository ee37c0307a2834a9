"""Numeric kernel backends.

The hot inner loops (matrix product, gated activations, row softmax,
layer normalization) live behind a small function table.  At import time
the compiled Cython extension is preferred when it built successfully;
otherwise the numpy implementations are used.  Set FIGCAP_KERNELS=numpy
or FIGCAP_KERNELS=native to force a backend.
"""

import importlib
import os

_KNOWN = ("native", "numpy")


def load_backend(name):
    """Import a kernel backend module by name ('native' or 'numpy')."""
    if name == "native":
        return importlib.import_module("figcap.kernels._native")
    if name == "numpy":
        return importlib.import_module("figcap.kernels.numpy_backend")
    raise ValueError(f"unknown kernel backend {name!r}, expected one of {_KNOWN}")


def available_backends():
    """Names of backends that can actually be imported on this machine."""
    out = []
    for name in _KNOWN:
        try:
            load_backend(name)
        except ImportError:
            continue
        out.append(name)
    return out


_requested = os.environ.get("FIGCAP_KERNELS", "").strip().lower()
if _requested and _requested not in _KNOWN:
    raise ValueError(f"FIGCAP_KERNELS={_requested!r} not supported, expected one of {_KNOWN}")

if _requested:
    _impl = load_backend(_requested)
    BACKEND = _requested
else:
    try:
        _impl = load_backend("native")
        BACKEND = "native"
    except ImportError:
        _impl = load_backend("numpy")
        BACKEND = "numpy"

matmul = _impl.matmul
sigmoid = _impl.sigmoid
tanh = _impl.tanh
relu = _impl.relu
softmax_rows = _impl.softmax_rows
layer_norm_rows = _impl.layer_norm_rows
