"""Sparse KKT assembly, fill-reducing ordering and LDL^T factor/solve."""
from .ldl import (
    KktFactorization,
    as_csc,
    build_kkt,
    dense_ldl,
    ldl_factor,
    ldl_solve,
)
from .ordering import fill_in, symbolic_order

__all__ = [
    "KktFactorization",
    "as_csc",
    "build_kkt",
    "dense_ldl",
    "fill_in",
    "ldl_factor",
    "ldl_solve",
    "symbolic_order",
]
