"""Dispatch to the selected kernel backend (see backend.py)."""

from .backend import USE_NUMBA

if USE_NUMBA:
    from ._kernels_numba import (  # noqa: F401
        conv3d_forward,
        conv3d_grad_input,
        conv3d_grad_weight,
        directed_surface_distances,
    )
else:
    from ._kernels_numpy import (  # noqa: F401
        conv3d_forward,
        conv3d_grad_input,
        conv3d_grad_weight,
        directed_surface_distances,
    )
