"""Backend selection for the distance kernels.

The compiled extension is used when importable; setting
``GOALSTATE_PURE_PYTHON=1`` forces the numpy fallback. Both backends expose
the same four functions with identical results.
"""
import os

from . import _pykernels

BACKEND = "python"

if os.environ.get("GOALSTATE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels
else:
    _impl = _pykernels

pairwise_sqdist = _impl.pairwise_sqdist
nearest_neighbors = _impl.nearest_neighbors
segment_aabb_sqdist = _impl.segment_aabb_sqdist
points_in_boxes = _impl.points_in_boxes

__all__ = ["BACKEND", "pairwise_sqdist", "nearest_neighbors",
           "segment_aabb_sqdist", "points_in_boxes"]
