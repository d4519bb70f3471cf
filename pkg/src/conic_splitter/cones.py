"""Cone descriptions and Euclidean projections onto them.

A cone is a Cartesian product of blocks laid out contiguously in a vector:
the zero cone ``{0}^r``, the nonnegative orthant ``R^p_+`` and second-order
cones ``{(y, x) : ||x||_2 <= y}``. A second-order block of dimension 1 is the
nonnegative ray.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable

import numba
import numpy as np

from .exceptions import DimensionError, InputError


class ConeKind(enum.IntEnum):
    ZERO = 0
    NONNEGATIVE = 1
    SECOND_ORDER = 2


_TEXT_TAGS = {ConeKind.ZERO: "z", ConeKind.NONNEGATIVE: "l", ConeKind.SECOND_ORDER: "q"}


@dataclass(frozen=True)
class ConeSpec:
    """Ordered list of ``(kind, dim)`` blocks.

    Block order is the memory layout; nothing is reordered internally.
    """

    blocks: tuple[tuple[ConeKind, int], ...]

    def __init__(self, blocks: Iterable[tuple[ConeKind | int | str, int]]):
        normalized = []
        for kind, dim in blocks:
            kind = _coerce_kind(kind)
            dim = int(dim)
            if dim < 1:
                raise InputError(f"cone block dimension must be positive, got {dim}")
            normalized.append((kind, dim))
        object.__setattr__(self, "blocks", tuple(normalized))

    @classmethod
    def from_counts(cls, zero=0, nonneg=0, soc=()):
        """Build the canonical ``z, l, q...`` layout used by the file format."""
        blocks = []
        if zero:
            blocks.append((ConeKind.ZERO, zero))
        if nonneg:
            blocks.append((ConeKind.NONNEGATIVE, nonneg))
        blocks.extend((ConeKind.SECOND_ORDER, d) for d in soc)
        return cls(blocks)

    @property
    def dim(self) -> int:
        return sum(d for _, d in self.blocks)

    def __len__(self):
        return len(self.blocks)

    def arrays(self):
        """Return ``(kinds, starts, dims)`` int64 arrays for the compiled kernels."""
        kinds = np.array([int(k) for k, _ in self.blocks], dtype=np.int64)
        dims = np.array([d for _, d in self.blocks], dtype=np.int64)
        starts = np.zeros(len(dims), dtype=np.int64)
        if len(dims):
            starts[1:] = np.cumsum(dims)[:-1]
        return kinds, starts, dims

    def slices(self):
        """Yield ``(kind, slice)`` per block."""
        start = 0
        for kind, dim in self.blocks:
            yield kind, slice(start, start + dim)
            start += dim

    def to_text(self) -> str:
        """Encode as ``cones: z:<r> l:<p> q:<d1>,<d2>,...``.

        Only the canonical order (zero, then nonnegative, then second-order)
        is representable; consecutive zero or nonnegative blocks are merged.
        """
        zero = nonneg = 0
        soc: list[int] = []
        stage = ConeKind.ZERO
        for kind, dim in self.blocks:
            if kind < stage:
                raise InputError("cone blocks are not in z, l, q order; cannot encode")
            stage = kind
            if kind == ConeKind.ZERO:
                zero += dim
            elif kind == ConeKind.NONNEGATIVE:
                nonneg += dim
            else:
                soc.append(dim)
        parts = []
        if zero:
            parts.append(f"z:{zero}")
        if nonneg:
            parts.append(f"l:{nonneg}")
        if soc:
            parts.append("q:" + ",".join(str(d) for d in soc))
        return ("cones: " + " ".join(parts)).rstrip()

    @classmethod
    def from_text(cls, text: str) -> "ConeSpec":
        """Parse the ``cones:`` line; raises ``ValueError`` with a column hint on failure."""
        body = text.strip()
        if body.startswith("cones:"):
            body = body[len("cones:"):]
        zero = nonneg = 0
        soc: list[int] = []
        for token in body.split():
            tag, sep, value = token.partition(":")
            if not sep or not value:
                raise ValueError(f"bad cone token {token!r}")
            try:
                if tag == "z":
                    zero = int(value)
                elif tag == "l":
                    nonneg = int(value)
                elif tag == "q":
                    soc = [int(v) for v in value.split(",") if v]
                else:
                    raise ValueError(f"unknown cone tag {tag!r}")
            except ValueError as exc:
                raise ValueError(f"bad cone token {token!r}: {exc}") from None
        if zero < 0 or nonneg < 0 or any(d < 1 for d in soc):
            raise ValueError("cone dimensions must be positive")
        return cls.from_counts(zero, nonneg, soc)


def _coerce_kind(kind) -> ConeKind:
    if isinstance(kind, str):
        lookup = {
            "z": ConeKind.ZERO, "zero": ConeKind.ZERO,
            "l": ConeKind.NONNEGATIVE, "nonnegative": ConeKind.NONNEGATIVE,
            "q": ConeKind.SECOND_ORDER, "secondorder": ConeKind.SECOND_ORDER,
            "second_order": ConeKind.SECOND_ORDER, "soc": ConeKind.SECOND_ORDER,
        }
        try:
            return lookup[kind.lower()]
        except KeyError:
            raise InputError(f"unknown cone kind {kind!r}") from None
    return ConeKind(kind)


def project_nonneg(v):
    """Elementwise positive part."""
    return np.maximum(np.asarray(v, dtype=float), 0.0)


def project_soc(y: float, x) -> tuple[float, np.ndarray]:
    """Project ``(y, x)`` onto ``{(y, x) : ||x||_2 <= y}``.

    Cases are tested in order with ``<=`` so boundary ties take the earlier
    branch; all branches agree on the boundary.
    """
    x = np.asarray(x, dtype=float)
    y = float(y)
    nx = float(np.linalg.norm(x)) if x.size else 0.0
    if nx <= -y:
        return 0.0, np.zeros_like(x)
    if nx <= y:
        return y, x.copy()
    scale = 0.5 * (1.0 + y / nx)
    return scale * nx, scale * x


def _check_length(spec: ConeSpec, v: np.ndarray):
    if v.ndim != 1 or v.shape[0] != spec.dim:
        raise DimensionError(f"vector of length {v.shape} does not match cone dimension {spec.dim}")


def project_cone(spec: ConeSpec, v) -> np.ndarray:
    """Block-wise projection onto the cone described by ``spec``."""
    v = np.asarray(v, dtype=float)
    _check_length(spec, v)
    out = np.empty_like(v)
    for kind, sl in spec.slices():
        if kind == ConeKind.ZERO:
            out[sl] = 0.0
        elif kind == ConeKind.NONNEGATIVE:
            out[sl] = project_nonneg(v[sl])
        else:
            block = v[sl]
            y, x = project_soc(block[0], block[1:])
            out[sl.start] = y
            out[sl.start + 1:sl.stop] = x
    return out


def project_dual_cone(spec: ConeSpec, v) -> np.ndarray:
    """Projection onto the dual cone: zero blocks become free, the rest are self-dual."""
    v = np.asarray(v, dtype=float)
    _check_length(spec, v)
    out = project_cone(spec, v)
    for kind, sl in spec.slices():
        if kind == ConeKind.ZERO:
            out[sl] = v[sl]
    return out


def cone_distance(spec: ConeSpec, v, dual=False) -> float:
    """Euclidean distance from ``v`` to the cone (or its dual)."""
    v = np.asarray(v, dtype=float)
    proj = project_dual_cone(spec, v) if dual else project_cone(spec, v)
    return float(np.linalg.norm(v - proj))


@numba.njit(cache=True)
def project_blocks_inplace(v, kinds, starts, dims, dual):
    """Compiled block projection used inside the solver loop.

    ``dual=True`` projects onto the dual cone (zero blocks left untouched).
    """
    for b in range(kinds.shape[0]):
        s = starts[b]
        d = dims[b]
        k = kinds[b]
        if k == 0:
            if not dual:
                for i in range(s, s + d):
                    v[i] = 0.0
        elif k == 1:
            for i in range(s, s + d):
                if v[i] < 0.0:
                    v[i] = 0.0
        else:
            y = v[s]
            nx2 = 0.0
            for i in range(s + 1, s + d):
                nx2 += v[i] * v[i]
            nx = math.sqrt(nx2)
            if nx <= -y:
                for i in range(s, s + d):
                    v[i] = 0.0
            elif nx <= y:
                pass
            else:
                scale = 0.5 * (1.0 + y / nx)
                v[s] = scale * nx
                for i in range(s + 1, s + d):
                    v[i] = scale * v[i]
