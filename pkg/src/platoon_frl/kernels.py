"""Hot-kernel dispatch.

The compiled extension is used when it was built and imports cleanly; the
NumPy implementation is used otherwise. Set ``PLATOON_FRL_KERNELS=python`` to
force the fallback (the benchmark and the parity tests do this).
"""
import logging
import os

from platoon_frl import _kernels_py

logger = logging.getLogger(__name__)

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("PLATOON_FRL_KERNELS", "auto").lower() != "python":
    try:
        from platoon_frl import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        logger.debug("compiled kernels unavailable, using NumPy fallback")

bn_act_forward = _impl.bn_act_forward
bn_act_backward = _impl.bn_act_backward
bn_act_eval = _impl.bn_act_eval
adam_update = _impl.adam_update
lerp_ = _impl.lerp_
affine_step = _impl.affine_step

__all__ = [
    "BACKEND",
    "bn_act_forward",
    "bn_act_backward",
    "bn_act_eval",
    "adam_update",
    "lerp_",
    "affine_step",
]
