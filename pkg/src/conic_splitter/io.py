"""Cone-program text format.

::

    n: 4
    m: 9
    cones: q:1,1,2,2,3
    c: 1 0 0 0
    b: 3.1623 0 0 0 0 0 0 0 1
    %%MatrixMarket matrix coordinate real general
    9 4 11
    1 2 1
    ...

The ``c:``/``b:`` labels are optional; the vectors follow the header in that
order. ``A`` is a Matrix Market coordinate block with one-based indices.
Blank lines and ``#`` comments are allowed anywhere before the matrix block.
Stored zeros in the matrix block are kept as structural entries.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .cones import ConeSpec
from .exceptions import ParseError
from .solver import ConeProgram, SolveResult

MM_HEADER = "%%MatrixMarket matrix coordinate real general"


def format_cone_program(p: ConeProgram) -> str:
    A = sp.coo_matrix(p.A)
    order = np.lexsort((A.row, A.col))
    lines = [
        f"n: {p.n}",
        f"m: {p.m}",
        p.cone.to_text(),
        "c: " + " ".join(repr(float(x)) for x in p.c),
        "b: " + " ".join(repr(float(x)) for x in p.b),
        MM_HEADER,
        f"{p.m} {p.n} {A.nnz}",
    ]
    lines += [f"{i + 1} {j + 1} {float(v)!r}"
              for i, j, v in zip(A.row[order], A.col[order], A.data[order])]
    return "\n".join(lines) + "\n"


def write_cone_program(p: ConeProgram, path) -> None:
    Path(path).write_text(format_cone_program(p))


def read_cone_program(path) -> ConeProgram:
    return parse_cone_program(Path(path).read_text())


def _content_lines(text):
    for number, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped or (stripped.startswith("#")):
            continue
        yield number, raw


def _value_column(raw):
    """1-based column of the first non-blank character after the label colon."""
    i = raw.index(":") + 1
    return i + len(raw[i:]) - len(raw[i:].lstrip()) + 1


def _int_field(number, raw, name):
    head, sep, value = raw.partition(":")
    if not sep or head.strip() != name:
        raise ParseError(f"expected '{name}: <int>'", number, 1)
    try:
        out = int(value)
    except ValueError:
        raise ParseError(f"'{name}' must be an integer", number, _value_column(raw)) from None
    if out < 0:
        raise ParseError(f"'{name}' must be non-negative", number, _value_column(raw))
    return out


def _reals(number, raw, label, expected):
    body = raw
    col0 = 0
    stripped = raw.lstrip()
    if stripped.startswith(label + ":"):
        col0 = raw.index(":") + 1
        body = raw[col0:]
    values = []
    pos = col0
    for token in body.split():
        pos = raw.index(token, pos)
        try:
            values.append(float(token))
        except ValueError:
            raise ParseError(f"bad real {token!r} in {label}", number, pos + 1) from None
        pos += len(token)
    if len(values) != expected:
        raise ParseError(f"{label} has {len(values)} entries, expected {expected}", number, 1)
    return np.asarray(values)


def parse_cone_program(text: str) -> ConeProgram:
    """Parse the text format; errors name the 1-based line and column."""
    lines = list(_content_lines(text))
    # matrix-market header lines start with '%', which is not a comment here
    if len(lines) < 7:
        last = lines[-1][0] if lines else 1
        raise ParseError("truncated cone-program file", last, 1)
    it = iter(lines)
    num, raw = next(it)
    n = _int_field(num, raw, "n")
    num, raw = next(it)
    m = _int_field(num, raw, "m")
    num, raw = next(it)
    if not raw.strip().startswith("cones:"):
        raise ParseError("expected 'cones:' line", num, 1)
    try:
        cone = ConeSpec.from_text(raw)
    except ValueError as exc:
        raise ParseError(str(exc), num, _value_column(raw)) from None
    if cone.dim != m:
        raise ParseError(f"cone dimension {cone.dim} does not match m = {m}", num, 1)
    num, raw = next(it)
    c = _reals(num, raw, "c", n)
    num, raw = next(it)
    b = _reals(num, raw, "b", m)
    num, raw = next(it)
    if not raw.strip().lower().startswith("%%matrixmarket matrix coordinate real"):
        raise ParseError("expected Matrix Market coordinate header", num, 1)
    num, raw = next(it)
    parts = raw.split()
    try:
        rows, cols, nnz = (int(x) for x in parts)
    except ValueError:
        raise ParseError("expected '<rows> <cols> <nnz>'", num, 1) from None
    if (rows, cols) != (m, n):
        raise ParseError(f"matrix is {rows}x{cols}, header says {m}x{n}", num, 1)
    I = np.empty(nnz, dtype=np.int64)
    J = np.empty(nnz, dtype=np.int64)
    V = np.empty(nnz)
    count = 0
    for num, raw in it:
        if raw.lstrip().startswith("%"):
            continue
        parts = raw.split()
        if count >= nnz:
            raise ParseError("more matrix entries than declared", num, 1)
        if len(parts) != 3:
            raise ParseError("matrix entry must be '<row> <col> <value>'", num, 1)
        try:
            i, j, val = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError:
            raise ParseError("bad matrix entry", num, 1) from None
        if not (1 <= i <= m):
            raise ParseError(f"row index {i} out of range", num, raw.index(parts[0]) + 1)
        if not (1 <= j <= n):
            raise ParseError(f"column index {j} out of range", num, raw.index(parts[1], raw.index(parts[0]) + len(parts[0])) + 1)
        I[count], J[count], V[count] = i - 1, j - 1, val
        count += 1
    if count != nnz:
        raise ParseError(f"expected {nnz} matrix entries, found {count}", lines[-1][0], 1)
    order = np.lexsort((I, J))
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, J + 1, 1)
    np.cumsum(indptr, out=indptr)
    A = sp.csc_matrix((V[order], I[order], indptr), shape=(m, n))
    A.sum_duplicates()
    return ConeProgram(A, b, c, cone)


def result_json(result: SolveResult, indent=None) -> str:
    return json.dumps(result.to_dict(), indent=indent)
