"""Numba-callable wrappers around scipy's cython special functions.

The functions are registered as named external symbols so that jitted
callers stay cacheable across processes.
"""

import llvmlite.binding as llvm
from numba import types
from numba.extending import get_cython_function_address


def _external(name):
    symbol = f"qhet_{name}"
    llvm.add_symbol(symbol, get_cython_function_address("scipy.special.cython_special", name))
    return types.ExternalFunction(symbol, types.float64(types.float64, types.float64))


gammainc = _external("gammainc")
chdtr = _external("chdtr")
