"""Kernel dispatch: the compiled ``_core`` extension when importable, numpy otherwise.

Set ``HIERCOP_PURE_PYTHON=1`` before import to force the numpy kernels.
"""
import os

from hiercop import _pykernels

if os.environ.get("HIERCOP_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from hiercop import _core as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels
        BACKEND = "python"

bvn_cdf = _impl.bvn_cdf
kendall_rowsums = _impl.kendall_rowsums
exch_pair_sums = _impl.exch_pair_sums

__all__ = ["BACKEND", "bvn_cdf", "kendall_rowsums", "exch_pair_sums"]
