"""Runtime backend and precision selection.

Two interchangeable kernel backends exist for the convolution hot path:

* ``numpy`` -- strided pad/slice gather and scatter (the default: numpy's
  bulk copy loops win on single-core hosts),
* ``numba`` -- ``@njit``-compiled fused loops that parallelize over the
  batch; worth selecting on multi-core machines.

Both feed the same BLAS matmul, and the scatter accumulates in the same
kernel-position order, so the two backends produce bitwise-identical
results.  Selection: ``TANET_BACKEND`` environment variable (``auto``,
``numba``, ``numpy``) or :func:`set_backend` at runtime;
benchmarks/bench_kernels.py measures both on the current machine.

Precision: float64 is the default and the precision all gradient checks
run at.  float32 is an optional runtime mode (``TANET_DTYPE=float32`` or
:func:`set_default_dtype`) that roughly halves CPU training time.
"""

import os

import numpy as np

_VALID_BACKENDS = ("auto", "numba", "numpy")

_backend_name = None
_kernels = None

_DTYPES = {"float64": np.float64, "float32": np.float32}
_default_dtype = _DTYPES.get(os.environ.get("TANET_DTYPE", "float64"))
if _default_dtype is None:
    raise ValueError(
        f"TANET_DTYPE must be one of {sorted(_DTYPES)}, "
        f"got {os.environ.get('TANET_DTYPE')!r}"
    )


def _resolve(name):
    if name == "numpy" or name == "auto":
        from tanet import kernels_numpy
        return "numpy", kernels_numpy
    from tanet import kernels_numba
    return "numba", kernels_numba


def set_backend(name):
    """Select the kernel backend by name ('auto', 'numba' or 'numpy')."""
    global _backend_name, _kernels
    if name not in _VALID_BACKENDS:
        raise ValueError(f"unknown backend {name!r}, expected one of {_VALID_BACKENDS}")
    _backend_name, _kernels = _resolve(name)


def active_backend():
    """Name of the backend currently in use ('numba' or 'numpy')."""
    if _backend_name is None:
        set_backend(os.environ.get("TANET_BACKEND", "auto"))
    return _backend_name


def kernels():
    """The active kernel module."""
    if _kernels is None:
        active_backend()
    return _kernels


def default_dtype():
    """Floating dtype used for newly created tensors and parameters."""
    return _default_dtype


def set_default_dtype(dtype):
    """Set the default floating dtype (np.float64 or np.float32)."""
    global _default_dtype
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float64), np.dtype(np.float32)):
        raise ValueError(f"unsupported dtype {dtype}, expected float64 or float32")
    _default_dtype = dtype.type
