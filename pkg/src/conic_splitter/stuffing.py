"""Matrix stuffing for the coordinated-beamforming SOCP family.

A :class:`StuffingTemplate` fixes the sparsity pattern of ``(A, b, c)`` and
the cone for one network shape. Every instance-dependent entry of the
standard form is recorded as a slot; :func:`stuff` only writes instance
values into copies of the template's value arrays, sharing the index arrays.

Variable layout: ``nu = [x0; y0_1..y0_L; t0_1..t0_K; (z_1..z_L); v]`` where
``z_l`` exist only for the group-norm objective and ``v`` stacks the per-user
beamformers ``v_1..v_K`` (each ``N`` reals, or ``[Re; Im]`` of ``2N`` reals).

Row blocks, in order: per-RAU power rows, per-user SINR rows (both
nonnegative rays), the objective cone ``(x0, v)``, the group cones
``(z_l, v_l)`` (group-norm only), the per-RAU power cones ``(y0_l, D_l v)``
and the per-user QoS cones ``(t0_k, C_k v + g_k)``.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .cones import ConeKind, ConeSpec
from .exceptions import DimensionError, InputError, UsageError
from .solver import ConeProgram, SolveResult, Status

TEMPLATE_FORMAT = "conic-splitter-template"
TEMPLATE_VERSION = 1


class Objective(str, enum.Enum):
    TOTAL_NORM = "TotalNorm"
    GROUP_NORM = "GroupNorm"


class Field(str, enum.Enum):
    REAL = "Real"
    COMPLEX = "Complex"


@dataclass(frozen=True)
class NetworkShape:
    L: int
    K: int
    antennas: tuple[int, ...]
    objective: Objective = Objective.TOTAL_NORM

    def __post_init__(self):
        object.__setattr__(self, "antennas", tuple(int(a) for a in self.antennas))
        object.__setattr__(self, "objective", Objective(self.objective))
        if self.L < 1 or self.K < 1:
            raise InputError("need at least one RAU and one user")
        if len(self.antennas) != self.L or min(self.antennas) < 1:
            raise InputError("antennas must list a positive count per RAU")

    @classmethod
    def uniform(cls, L, K, N_l=1, objective=Objective.TOTAL_NORM):
        return cls(L, K, (N_l,) * L, objective)

    @property
    def N(self) -> int:
        return sum(self.antennas)

    @property
    def antenna_offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.antennas)]).astype(np.int64)

    def with_objective(self, objective) -> "NetworkShape":
        return NetworkShape(self.L, self.K, self.antennas, Objective(objective))

    def key(self):
        return (self.L, self.K, self.antennas)


@dataclass
class NetworkInstance:
    """Channels and QoS parameters of one network realization.

    ``channels[k]`` is the aggregate channel ``h_k`` of user ``k`` (length
    ``N``), RAU blocks in order; ``P`` per RAU in watts, ``sigma`` noise
    standard deviations, ``gamma`` linear SINR targets, ``omega`` group weights.
    """

    shape: NetworkShape
    channels: np.ndarray
    P: np.ndarray
    sigma: np.ndarray
    gamma: np.ndarray
    omega: np.ndarray | None = None

    def __post_init__(self):
        s = self.shape
        self.channels = np.asarray(self.channels, dtype=complex).reshape(s.K, -1)
        self.P = np.asarray(self.P, dtype=float).ravel()
        self.sigma = np.asarray(self.sigma, dtype=float).ravel()
        self.gamma = np.asarray(self.gamma, dtype=float).ravel()
        self.omega = (np.ones(s.L) if self.omega is None
                      else np.asarray(self.omega, dtype=float).ravel())
        if self.channels.shape != (s.K, s.N):
            raise DimensionError(f"channels must be {s.K} x {s.N}, got {self.channels.shape}")
        for name, arr, size in (("P", self.P, s.L), ("sigma", self.sigma, s.K),
                                ("gamma", self.gamma, s.K), ("omega", self.omega, s.L)):
            if arr.shape != (size,):
                raise DimensionError(f"{name} must have length {size}")
        if not all(np.all(np.isfinite(a)) for a in (self.channels, self.P, self.sigma, self.omega)):
            raise InputError("channels, P, sigma and omega must be finite")
        if not (np.all(self.gamma > 0) and np.all(self.P > 0) and np.all(self.sigma > 0)):
            raise InputError("gamma, P and sigma must be positive")
        if np.any(self.omega <= 0):
            raise InputError("group weights must be positive")

    @property
    def field(self) -> Field:
        return Field.COMPLEX if np.any(self.channels.imag != 0) else Field.REAL

    def channel(self, k, l) -> np.ndarray:
        off = self.shape.antenna_offsets
        return self.channels[k, off[l]:off[l + 1]]

    def with_gamma(self, gamma) -> "NetworkInstance":
        g = np.broadcast_to(np.asarray(gamma, dtype=float), (self.shape.K,)).copy()
        return NetworkInstance(self.shape, self.channels, self.P, self.sigma, g, self.omega)

    def subnetwork(self, active) -> "NetworkInstance":
        """Instance restricted to the RAUs listed in ``active``."""
        active = sorted(int(a) for a in active)
        if not active:
            raise InputError("subnetwork needs at least one RAU")
        off = self.shape.antenna_offsets
        cols = np.concatenate([np.arange(off[l], off[l + 1]) for l in active])
        shape = NetworkShape(len(active), self.shape.K,
                             tuple(self.shape.antennas[l] for l in active), self.shape.objective)
        return NetworkInstance(shape, self.channels[:, cols], self.P[active], self.sigma,
                               self.gamma, self.omega[active])

    def to_json(self) -> dict:
        s = self.shape
        return {
            "L": s.L, "K": s.K, "N": list(s.antennas),
            "P": self.P.tolist(), "sigma": self.sigma.tolist(), "gamma": self.gamma.tolist(),
            "omega": self.omega.tolist(),
            "channels": [[[float(z.real), float(z.imag)] for z in row] for row in self.channels],
        }

    @classmethod
    def from_json(cls, data: dict) -> "NetworkInstance":
        try:
            shape = NetworkShape(int(data["L"]), int(data["K"]), tuple(data["N"]))
            ch = np.asarray(data["channels"], dtype=float)
            if ch.ndim != 3 or ch.shape[-1] != 2:
                raise InputError("channels must be a K x N list of [re, im] pairs")
            return cls(shape, ch[..., 0] + 1j * ch[..., 1], data["P"], data["sigma"],
                       data["gamma"], data.get("omega"))
        except KeyError as exc:
            raise InputError(f"network instance is missing field {exc}") from None


def complex_to_real(h) -> np.ndarray:
    """Lift ``h in C^N`` to ``[[Re h, -Im h], [Im h, Re h]]`` of shape ``(2N, 2)``.

    With ``v~ = [Re v; Im v]``, ``lift(h).T @ v~ = [Re(h^H v), Im(h^H v)]``.
    """
    h = np.asarray(h, dtype=complex).ravel()
    return np.block([[h.real[:, None], -h.imag[:, None]], [h.imag[:, None], h.real[:, None]]])


def lift_rows(h, field: Field) -> np.ndarray:
    """Rows that map ``v~_i`` to the parts of ``h^H v_i``: ``(1, N)`` real, ``(2, 2N)`` complex."""
    h = np.asarray(h)
    if field == Field.REAL:
        return np.real(h)[None, :].astype(float)
    return complex_to_real(h).T


@dataclass
class StuffingTemplate:
    shape: NetworkShape
    field: Field
    skeleton: ConeProgram
    power_slots: np.ndarray          # (L,) positions in b
    noise_slots: np.ndarray          # (K,) positions in b
    sinr_channel_slots: np.ndarray   # (K, R) positions in A.data
    channel_block_slots: np.ndarray  # (K, K, r, R) positions in A.data
    weight_slots: np.ndarray         # (L,) positions in c (group-norm only)
    v_offset: int
    _perm: np.ndarray | None = field(default=None, repr=False)
    _block_strides: tuple | None = field(default=None, repr=False)

    @property
    def n(self):
        return self.skeleton.n

    @property
    def m(self):
        return self.skeleton.m

    @property
    def parts(self) -> int:
        return 1 if self.field == Field.REAL else 2

    def kkt_perm(self) -> np.ndarray:
        """Fill-reducing order of the KKT pattern, computed once per template."""
        if self._perm is None:
            from .linalg import build_kkt, symbolic_order
            self._perm = symbolic_order(build_kkt(self.skeleton.A))
        return self._perm

    def block_strides(self):
        """``(start, strides)`` when the channel-block slots form a strided view of
        ``A.data``, else ``()``. In column-major order they always do, which lets
        :func:`stuff` write the block without a fancy-index scatter."""
        if self._block_strides is None:
            S = self.channel_block_slots
            strides = []
            for ax in range(S.ndim):
                if S.shape[ax] < 2:
                    strides.append(0)
                    continue
                d = np.diff(S, axis=ax)
                if not np.all(d == d.flat[0]) or d.flat[0] < 0:
                    self._block_strides = ()
                    return self._block_strides
                strides.append(int(d.flat[0]))
            self._block_strides = (int(S.flat[0]) if S.size else 0, tuple(strides))
        return self._block_strides

    def index_maps(self) -> dict:
        return {
            "power_slots": self.power_slots.tolist(),
            "noise_slots": self.noise_slots.tolist(),
            "sinr_channel_slots": self.sinr_channel_slots.tolist(),
            "channel_block_slots": self.channel_block_slots.tolist(),
            "weight_slots": self.weight_slots.tolist(),
            "v_offset": self.v_offset,
        }


class _Triplets:
    """COO accumulator that remembers which entries are parameter slots."""

    def __init__(self):
        self.rows, self.cols, self.vals = [], [], []
        self.count = 0

    def add(self, rows, cols, vals):
        rows = np.atleast_1d(np.asarray(rows, dtype=np.int64))
        cols = np.atleast_1d(np.asarray(cols, dtype=np.int64))
        rows, cols = np.broadcast_arrays(rows, cols)
        vals = np.broadcast_to(np.asarray(vals, dtype=float), rows.shape)
        ids = np.arange(self.count, self.count + rows.size).reshape(rows.shape)
        self.rows.append(rows.ravel())
        self.cols.append(cols.ravel())
        self.vals.append(vals.ravel())
        self.count += rows.size
        return ids

    def to_csc(self, shape):
        rows = np.concatenate(self.rows)
        cols = np.concatenate(self.cols)
        vals = np.concatenate(self.vals)
        order = np.lexsort((rows, cols))
        position = np.empty_like(order)
        position[order] = np.arange(order.size)
        indptr = np.zeros(shape[1] + 1, dtype=np.int64)
        np.add.at(indptr, cols + 1, 1)
        np.cumsum(indptr, out=indptr)
        A = sp.csc_matrix((vals[order], rows[order].astype(np.int32), indptr.astype(np.int32)),
                          shape=shape)
        A.has_sorted_indices = True
        return A, position


def build_template(shape: NetworkShape, field=Field.REAL) -> StuffingTemplate:
    """Generate the standard-form skeleton and its parameter index maps."""
    field = Field(field)
    L, K, N = shape.L, shape.K, shape.N
    group = shape.objective == Objective.GROUP_NORM
    r = 1 if field == Field.REAL else 2
    R = r * N
    aoff = shape.antenna_offsets

    # columns
    x0 = 0
    y0 = 1 + np.arange(L)
    t0 = 1 + L + np.arange(K)
    z = 1 + L + K + np.arange(L) if group else np.empty(0, dtype=np.int64)
    v_offset = 1 + L + K + (L if group else 0)
    n = v_offset + K * R
    vcols = v_offset + np.arange(K * R).reshape(K, R)  # user k, lifted antenna index

    def rau_cols(l):
        # columns of v_lk for all k, ordered by k then (Re, Im) part then antenna
        idx = []
        for k in range(K):
            for part in range(r):
                idx.append(vcols[k, part * N + aoff[l]:part * N + aoff[l + 1]])
        return np.concatenate(idx)

    T = _Triplets()
    b_parts: list[np.ndarray] = []
    blocks: list[tuple[ConeKind, int]] = []
    row = 0

    # per-RAU power rows: y0_l + mu = sqrt(P_l)
    T.add(row + np.arange(L), y0, 1.0)
    power_slots = row + np.arange(L)
    b_parts.append(np.zeros(L))
    blocks += [(ConeKind.SECOND_ORDER, 1)] * L
    row += L

    # per-user SINR rows: t0_k - beta_k r_k^T v + mu = 0
    T.add(row + np.arange(K), t0, 1.0)
    sinr_ids = T.add((row + np.arange(K))[:, None], vcols, 0.0)
    b_parts.append(np.zeros(K))
    blocks += [(ConeKind.SECOND_ORDER, 1)] * K
    row += K

    # objective cone (x0, v)
    T.add(row, x0, -1.0)
    T.add(row + 1 + np.arange(K * R), vcols.ravel(), -1.0)
    b_parts.append(np.zeros(1 + K * R))
    blocks.append((ConeKind.SECOND_ORDER, 1 + K * R))
    row += 1 + K * R

    # group cones (z_l, v_l)
    if group:
        for l in range(L):
            cols = rau_cols(l)
            T.add(row, z[l], -1.0)
            T.add(row + 1 + np.arange(cols.size), cols, -1.0)
            b_parts.append(np.zeros(1 + cols.size))
            blocks.append((ConeKind.SECOND_ORDER, 1 + cols.size))
            row += 1 + cols.size

    # per-RAU power cones (y0_l, D_l v)
    for l in range(L):
        cols = rau_cols(l)
        T.add(row, y0[l], -1.0)
        T.add(row + 1 + np.arange(cols.size), cols, -1.0)
        b_parts.append(np.zeros(1 + cols.size))
        blocks.append((ConeKind.SECOND_ORDER, 1 + cols.size))
        row += 1 + cols.size

    # per-user QoS cones (t0_k, C_k v + g_k)
    chan_ids = np.empty((K, K, r, R), dtype=np.int64)
    noise_slots = np.empty(K, dtype=np.int64)
    for k in range(K):
        T.add(row, t0[k], -1.0)
        crow = row + 1 + np.arange(K * r).reshape(K, r)
        chan_ids[k] = T.add(crow[:, :, None], vcols[:, None, :], 0.0)
        size = 2 + K * r
        b_parts.append(np.zeros(size))
        noise_slots[k] = row + size - 1
        blocks.append((ConeKind.SECOND_ORDER, size))
        row += size

    m = row
    A, position = T.to_csc((m, n))
    b = np.concatenate(b_parts)
    c = np.zeros(n)
    if group:
        c[z] = 1.0
        weight_slots = z.copy()
    else:
        c[x0] = 1.0
        weight_slots = np.empty(0, dtype=np.int64)
    skeleton = ConeProgram(A, b, c, ConeSpec(blocks))
    return StuffingTemplate(
        shape=shape, field=field, skeleton=skeleton,
        power_slots=power_slots, noise_slots=noise_slots,
        sinr_channel_slots=position[sinr_ids], channel_block_slots=position[chan_ids],
        weight_slots=weight_slots, v_offset=v_offset,
    )


@lru_cache(maxsize=64)
def _cached_template(key, field, objective):
    L, K, antennas = key
    return build_template(NetworkShape(L, K, antennas, objective), field)


def get_template(shape: NetworkShape, field=Field.REAL) -> StuffingTemplate:
    """Template cache keyed by ``(L, K, antennas, field, objective)``."""
    return _cached_template(shape.key(), Field(field), shape.objective)


def lifted_channels(inst: NetworkInstance, field: Field) -> np.ndarray:
    """``(K, r, R)`` array of rows mapping ``v~_i`` to the parts of ``h_k^H v_i``."""
    H = inst.channels
    if field == Field.REAL:
        if np.any(H.imag != 0):
            raise InputError("complex channels need the Complex template")
        return H.real[:, None, :].copy()
    re, im = H.real, H.imag
    return np.stack([np.concatenate([re, im], axis=1),
                     np.concatenate([-im, re], axis=1)], axis=1)


def stuff(template: StuffingTemplate, inst: NetworkInstance) -> ConeProgram:
    """Copy instance parameters into a fresh program sharing the template pattern."""
    if inst.shape.key() != template.shape.key():
        raise InputError(f"instance shape {inst.shape.key()} does not match template "
                         f"{template.shape.key()}")
    sk = template.skeleton
    Ht = lifted_channels(inst, template.field)
    beta = np.sqrt(1.0 + 1.0 / inst.gamma)
    data = sk.A.data.copy()
    data[template.sinr_channel_slots] = -(beta[:, None] * Ht[:, 0, :])
    view = template.block_strides()
    if view and template.channel_block_slots.size:
        start, strides = view
        item = data.itemsize
        block = np.lib.stride_tricks.as_strided(
            data[start:], shape=template.channel_block_slots.shape,
            strides=tuple(item * st for st in strides), writeable=True)
        # (i, col, k, part) puts the contiguous axes innermost
        np.copyto(block.transpose(1, 3, 0, 2), -np.ascontiguousarray(Ht.transpose(2, 0, 1)))
    else:
        data[template.channel_block_slots] = -Ht[:, None, :, :]
    b = sk.b.copy()
    b[template.power_slots] = np.sqrt(inst.P)
    b[template.noise_slots] = inst.sigma
    c = sk.c.copy()
    if template.weight_slots.size:
        c[template.weight_slots] = inst.omega
    A = sp.csc_matrix((data, sk.A.indices, sk.A.indptr), shape=sk.A.shape, copy=False)
    A.has_sorted_indices = True
    # the skeleton was validated and the instance values are finite
    return ConeProgram.trusted(A, b, c, sk.cone)


@dataclass
class BeamformingSolution:
    beamformers: np.ndarray   # (K, N) complex, row k is v_k
    rau_power: np.ndarray     # (L,)
    total_power: float
    sinr: np.ndarray          # (K,)
    objective: float
    result: SolveResult = field(repr=False)

    def per_rau(self, shape: NetworkShape, l: int) -> np.ndarray:
        off = shape.antenna_offsets
        return self.beamformers[:, off[l]:off[l + 1]]


def achieved_sinr(H, V, sigma) -> np.ndarray:
    """``|h_k^H v_k|^2 / (sum_{i != k} |h_k^H v_i|^2 + sigma_k^2)`` per user."""
    G = np.abs(np.conj(H) @ np.asarray(V).T) ** 2
    signal = np.diag(G)
    interference = G.sum(axis=1) - signal
    return signal / (interference + np.asarray(sigma) ** 2)


def recover_beamformers(template: StuffingTemplate, inst: NetworkInstance,
                        result: SolveResult) -> BeamformingSolution:
    """Read ``v`` off the tail of the solution and evaluate powers and SINRs."""
    if result.status != Status.OPTIMAL:
        raise UsageError(f"cannot recover beamformers from a {result.status} result")
    s = template.shape
    K, N = s.K, s.N
    tail = result.nu[template.v_offset:]
    if template.field == Field.REAL:
        V = tail.reshape(K, N).astype(complex)
    else:
        lifted = tail.reshape(K, 2 * N)
        V = lifted[:, :N] + 1j * lifted[:, N:]
    off = s.antenna_offsets
    rau_power = np.array([np.sum(np.abs(V[:, off[l]:off[l + 1]]) ** 2) for l in range(s.L)])
    return BeamformingSolution(
        beamformers=V, rau_power=rau_power, total_power=float(rau_power.sum()),
        sinr=achieved_sinr(inst.channels, V, inst.sigma), objective=result.objective,
        result=result,
    )


def save_template(template: StuffingTemplate, path) -> Path:
    """Write the skeleton as a cone-program file plus a JSON index-map sidecar."""
    from .io import write_cone_program
    path = Path(path)
    write_cone_program(template.skeleton, path)
    sidecar = path.with_name(path.name + ".index.json")
    meta = {
        "format": TEMPLATE_FORMAT, "version": TEMPLATE_VERSION,
        "L": template.shape.L, "K": template.shape.K, "N": list(template.shape.antennas),
        "objective": template.shape.objective.value, "field": template.field.value,
        **template.index_maps(),
    }
    sidecar.write_text(json.dumps(meta))
    return sidecar


def load_template(path) -> StuffingTemplate:
    from .io import read_cone_program
    path = Path(path)
    sidecar = path.with_name(path.name + ".index.json")
    meta = json.loads(sidecar.read_text())
    if meta.get("format") != TEMPLATE_FORMAT or meta.get("version") != TEMPLATE_VERSION:
        raise InputError(f"unsupported template sidecar header in {sidecar}")
    skeleton = read_cone_program(path)
    shape = NetworkShape(meta["L"], meta["K"], tuple(meta["N"]), meta["objective"])
    field_ = Field(meta["field"])
    r = 1 if field_ == Field.REAL else 2
    R = r * shape.N
    return StuffingTemplate(
        shape=shape, field=field_, skeleton=skeleton,
        power_slots=np.asarray(meta["power_slots"], dtype=np.int64),
        noise_slots=np.asarray(meta["noise_slots"], dtype=np.int64),
        sinr_channel_slots=np.asarray(meta["sinr_channel_slots"], dtype=np.int64).reshape(shape.K, R),
        channel_block_slots=np.asarray(meta["channel_block_slots"], dtype=np.int64).reshape(
            shape.K, shape.K, r, R),
        weight_slots=np.asarray(meta["weight_slots"], dtype=np.int64),
        v_offset=int(meta["v_offset"]),
    )
