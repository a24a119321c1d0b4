"""Kernel backend selection.

The numeric hot spots (autoencoder minibatch passes, Lloyd iterations) have
two interchangeable implementations: a Cython extension (_ckern) and a
numpy fallback (_pykern). The extension is used when importable; set
HABCLUST_KERNELS=python or HABCLUST_KERNELS=c to force a backend. Both
expose the same functions over the flat parameter layout in _layout.
"""

from __future__ import annotations

import os

from . import _pykern
from ._layout import (  # noqa: F401  (re-exported for drivers)
    fae_component_shapes,
    fae_param_count,
    fae_views,
    mlp_param_count,
    mlp_views,
    n_pairs,
    pair_indices,
)

try:
    from . import _ckern

    HAVE_EXTENSION = True
except ImportError:
    _ckern = None
    HAVE_EXTENSION = False

_BACKENDS = {"python": _pykern}
if HAVE_EXTENSION:
    _BACKENDS["c"] = _ckern

_env = os.environ.get("HABCLUST_KERNELS", "").strip().lower()
if _env in ("python", "py", "numpy"):
    _active = _pykern
elif _env in ("c", "ext", "cython"):
    if not HAVE_EXTENSION:
        raise ImportError("HABCLUST_KERNELS requests the compiled backend but it is not built")
    _active = _ckern
elif _env:
    raise ImportError(f"unknown HABCLUST_KERNELS value {_env!r} (use 'python' or 'c')")
else:
    _active = _ckern if HAVE_EXTENSION else _pykern


def backend_name() -> str:
    return _active.BACKEND_NAME


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def use_backend(name: str) -> str:
    """Switch the active backend; returns the previous backend's name."""
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r}; available: {available_backends()}")
    previous = _active.BACKEND_NAME
    _active = _BACKENDS[name]
    return previous


def fae_value_grad(theta, x, m, h_width, lat, with_global, loss_kind):
    return _active.fae_value_grad(theta, x, m, h_width, lat, with_global, loss_kind)


def fae_encode(theta, x, m, h_width, lat, with_global):
    return _active.fae_encode(theta, x, m, h_width, lat, with_global)


def fae_reconstruct(theta, x, m, h_width, lat, with_global):
    return _active.fae_reconstruct(theta, x, m, h_width, lat, with_global)


def mlp_value_grad(theta, x, dims):
    return _active.mlp_value_grad(theta, x, dims)


def mlp_encode(theta, x, dims, n_encode_layers):
    return _active.mlp_encode(theta, x, dims, n_encode_layers)


def assign_nearest(points, centroids):
    return _active.assign_nearest(points, centroids)


def lloyd(points, centroids_init, max_iter):
    return _active.lloyd(points, centroids_init, max_iter)
