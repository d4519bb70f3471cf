"""Network-level algorithms on top of matrix stuffing and the HSDE solver.

All programs are solved in normalized units: unit noise and a largest
per-RAU budget of one (see :func:`normalize_instance`). SINRs are invariant
under that scaling, beamformers map back by a single factor, and it keeps the
stuffed data near one so that the solver's ``1 + ||b||`` relative tolerances
mean the same thing for every instance.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .cones import ConeSpec
from .exceptions import InputError, SolverStatusError
from .network import PowerModelConfig
from .solver import (CertificateReport, ConeProgram, SolveResult, SolverOptions, Status,
                     solve, verify_certificate)
from .stuffing import (BeamformingSolution, NetworkInstance, Objective, achieved_sinr,
                       get_template, recover_beamformers, stuff)

logger = logging.getLogger(__name__)

# Ruiz scaling is needed on realistic path-loss spreads; see the solver module.
# The cost is weighted up for optimization so the objective is accurate at the
# default tolerance, and certificates returned to callers are held to a tighter
# test than the solver default. eps is half the solver default: at 1e-3 the
# primal tolerance (relative to 1 + ||b||) lets a single-user power land about
# 1% off, or a budget 1% short be called feasible, once the budget is slack.
DEFAULT_OPTIONS = SolverOptions(eps=5e-4, equilibrate=True, overrelax=True, cost_scale=10.0,
                                eps_infeas=1e-6)
# Probes only read the verdict and drop the objective altogether (see
# feasibility_program).
PROBE_OPTIONS = SolverOptions(equilibrate=True, overrelax=True, cost_scale=1.0)


def normalize_instance(inst: NetworkInstance) -> tuple[NetworkInstance, float]:
    """Unit noise and ``max_l P_l = 1``; returns the instance and the power scale.

    With ``s = max_l P_l`` the channels become ``h_k sqrt(s) / sigma_k`` and
    the budgets ``P_l / s``. Beamformers ``v'`` of the scaled network map back
    to ``sqrt(s) v'`` with the same SINRs.
    """
    s = float(np.max(inst.P))
    H = inst.channels * (math.sqrt(s) / inst.sigma[:, None])
    return NetworkInstance(inst.shape, H, inst.P / s, np.ones(inst.shape.K), inst.gamma,
                           inst.omega), s


def _recover(template, inst: NetworkInstance, result: SolveResult, scale: float):
    """Beamformers of the original network from a solve in normalized units."""
    sol = recover_beamformers(template, inst, result)
    V = math.sqrt(scale) * sol.beamformers
    return replace(sol, beamformers=V, rau_power=scale * sol.rau_power,
                   total_power=scale * sol.total_power,
                   sinr=achieved_sinr(inst.channels, V, inst.sigma),
                   objective=math.sqrt(scale) * sol.objective)


@dataclass
class PowerMinResult:
    status: Status
    result: SolveResult
    program: ConeProgram = field(repr=False)
    solution: BeamformingSolution | None = None
    certificate: CertificateReport | None = None
    modeling_time: float = 0.0
    solving_time: float = 0.0

    @property
    def feasible(self) -> bool:
        return self.status == Status.OPTIMAL

    @property
    def total_power(self) -> float:
        return self.solution.total_power if self.solution is not None else math.nan


def feasibility_program(program: ConeProgram) -> ConeProgram:
    """Same constraints with a zero cost.

    Near the feasibility boundary the splitting method converges far faster
    on the pure feasibility problem than with the power objective attached.
    """
    return ConeProgram(program.A, program.b, np.zeros_like(program.c), program.cone)


def _stuff_and_solve(inst: NetworkInstance, opts, warm_start=None, objective=Objective.TOTAL_NORM,
                     feasibility=False):
    shape = inst.shape.with_objective(objective)
    template = get_template(shape, inst.field)
    t0 = time.perf_counter()
    scaled, scale = normalize_instance(inst)
    program = stuff(template, scaled)
    if feasibility:
        program = feasibility_program(program)
    t1 = time.perf_counter()
    result = solve(program, opts, warm_start=warm_start, perm=template.kkt_perm())
    t2 = time.perf_counter()
    return template, program, result, scale, t1 - t0, t2 - t1


def min_power(inst: NetworkInstance, opts: SolverOptions | None = None,
              warm_start=None) -> PowerMinResult:
    """Total transmit power minimization with per-RAU budgets and QoS targets.

    Returns the beamformers on Optimal, the verified certificate on
    PrimalInfeasible; any other verdict raises :class:`SolverStatusError`.
    """
    opts = opts or DEFAULT_OPTIONS
    template, program, result, scale, tm, ts = _stuff_and_solve(inst, opts, warm_start)
    out = PowerMinResult(result.status, result, program, modeling_time=tm, solving_time=ts)
    if result.status == Status.OPTIMAL:
        out.solution = _recover(template, inst, result, scale)
    elif result.status == Status.PRIMAL_INFEASIBLE:
        out.certificate = verify_certificate(program, result)
    else:
        raise SolverStatusError(f"power minimization ended with status {result.status}", result)
    return out


def is_feasible(inst: NetworkInstance, opts: SolverOptions | None = None, warm_start=None):
    """Feasibility probe of P1; returns ``(feasible, result)``.

    An iteration-limit verdict counts as infeasible (logged); Indeterminate
    raises :class:`SolverStatusError`.
    """
    opts = opts or PROBE_OPTIONS
    result = _stuff_and_solve(inst, opts, warm_start, feasibility=True)[2]
    if result.status == Status.INDETERMINATE:
        raise SolverStatusError("feasibility probe was indeterminate", result)
    if result.status == Status.ITERATION_LIMIT:
        logger.warning("feasibility probe hit the iteration limit; treating as infeasible")
    return result.status == Status.OPTIMAL, result


# -- group-sparse beamforming -------------------------------------------------

@dataclass
class SelectionStep:
    rau: int
    candidate: tuple[int, ...]   # active set probed with ``rau`` switched off
    feasible: bool


@dataclass
class NetworkPowerReport:
    status: Status
    active: tuple[int, ...] = ()
    network_power: float = math.nan
    normalized_power: float = math.nan
    transmit_power: float = math.nan
    beamformers: np.ndarray | None = None    # (K, N), zeros on inactive RAUs
    rau_power: np.ndarray | None = None
    group_norms: np.ndarray | None = None
    trace: list[SelectionStep] = field(default_factory=list)
    stage1: SolveResult | None = field(default=None, repr=False)
    solution: PowerMinResult | None = field(default=None, repr=False)
    modeling_time: float = 0.0
    solving_time: float = 0.0

    @property
    def feasible(self) -> bool:
        return self.status == Status.OPTIMAL

    @property
    def probes(self) -> int:
        return len(self.trace)


def group_sparse_beamforming(inst: NetworkInstance, power_cfg: PowerModelConfig | None = None,
                             opts: SolverOptions | None = None,
                             probe_opts: SolverOptions | None = None) -> NetworkPowerReport:
    """Two-stage network power minimization.

    Stage 1 solves the weighted group-norm program. Stage 2 walks the RAUs in
    ascending group norm (ties by index) and switches each off while the
    reduced power minimization stays feasible, stopping at the first
    infeasible probe; P1 is then solved on the final active set.
    """
    power_cfg = power_cfg or PowerModelConfig()
    opts = opts or DEFAULT_OPTIONS
    probe_opts = probe_opts or PROBE_OPTIONS
    s = inst.shape
    template, _, r1, scale, tm, ts = _stuff_and_solve(inst, opts, objective=Objective.GROUP_NORM)
    report = NetworkPowerReport(Status.PRIMAL_INFEASIBLE, stage1=r1, modeling_time=tm,
                                solving_time=ts)
    if r1.status == Status.PRIMAL_INFEASIBLE:
        return report
    if r1.status != Status.OPTIMAL:
        raise SolverStatusError(f"group-norm stage ended with status {r1.status}", r1)
    sol1 = _recover(template, inst, r1, scale)
    norms = np.sqrt(sol1.rau_power)
    report.group_norms = norms

    active = list(range(s.L))
    for l in np.argsort(norms, kind="stable"):
        if len(active) == 1:
            break
        candidate = tuple(a for a in active if a != l)
        feasible, probe = is_feasible(inst.subnetwork(candidate), probe_opts)
        report.solving_time += probe.solve_time
        report.trace.append(SelectionStep(int(l), candidate, feasible))
        if not feasible:
            break
        active = list(candidate)

    final = min_power(inst.subnetwork(active), opts)
    report.modeling_time += final.modeling_time
    report.solving_time += final.solving_time
    if not final.feasible:
        # stage 1 said feasible but the final solve disagrees: report it as is
        report.solution = final
        return report
    off = s.antenna_offsets
    sub_off = inst.subnetwork(active).shape.antenna_offsets
    V = np.zeros((s.K, s.N), dtype=complex)
    rau_power = np.zeros(s.L)
    for j, l in enumerate(active):
        V[:, off[l]:off[l + 1]] = final.solution.beamformers[:, sub_off[j]:sub_off[j + 1]]
        rau_power[l] = final.solution.rau_power[j]
    mask = np.zeros(s.L, dtype=bool)
    mask[active] = True
    report.status = Status.OPTIMAL
    report.active = tuple(active)
    report.beamformers = V
    report.rau_power = rau_power
    report.transmit_power = float(rau_power.sum())
    report.network_power = power_cfg.network_power(rau_power, mask)
    report.normalized_power = report.network_power / power_cfg.max_network_power(inst.P)
    report.solution = final
    return report


# -- max-min fairness ----------------------------------------------------------

@dataclass
class MaxMinResult:
    gamma: float
    beamformers: np.ndarray | None
    trace: list[tuple[float, float]]
    scheme: str = "optimal"
    feasible_result: SolveResult | None = field(default=None, repr=False)
    sinr: np.ndarray | None = None
    iterations: int = 0
    modeling_time: float = 0.0
    solving_time: float = 0.0

    @property
    def min_rate(self) -> float:
        return math.log2(1.0 + self.gamma)

    @property
    def probes(self) -> int:
        return len(self.trace)


def sinr_upper_bound(inst: NetworkInstance) -> float:
    """``sum_l P_l * max_k ||h_k||^2 / min_k sigma_k^2``; interference-free bound."""
    h2 = np.sum(np.abs(inst.channels) ** 2, axis=1)
    return float(np.sum(inst.P) * h2.max() / np.min(inst.sigma) ** 2)


def bisection_steps(gamma_hi: float, tol: float) -> int:
    return max(0, math.ceil(math.log2(gamma_hi / tol))) if gamma_hi > 0 else 0


def _bisect(probe, gamma_hi, tol):
    """Largest feasible common target on ``[0, gamma_hi]``.

    ``probe(gamma, previous_feasible)`` returns ``(feasible, payload)``.
    Runs exactly :func:`bisection_steps` probes.
    """
    if tol <= 0:
        raise InputError("bisection tolerance must be positive")
    lo, hi = 0.0, float(gamma_hi)
    best = None
    trace = []
    for _ in range(bisection_steps(hi, tol)):
        mid = 0.5 * (lo + hi)
        feasible, payload = probe(mid, best)
        if feasible:
            lo, best = mid, payload
        else:
            hi = mid
        trace.append((lo, hi))
    return lo, best, trace


def max_min_rate(inst: NetworkInstance, tol: float = 0.01, gamma_hi: float | None = None,
                 opts: SolverOptions | None = None, warm_start: bool = True) -> MaxMinResult:
    """Bisection on a common SINR target with P1 feasibility probes.

    The targets stored in ``inst`` are ignored. Consecutive probes are warm
    started from the last Optimal probe when ``warm_start`` is set.
    """
    opts = opts or PROBE_OPTIONS
    gamma_hi = sinr_upper_bound(inst) if gamma_hi is None else float(gamma_hi)
    stats = {"it": 0, "tm": 0.0, "ts": 0.0}

    def probe(gamma, best):
        sub = inst.with_gamma(gamma)
        ws = best[1] if (warm_start and best is not None) else None
        template, _, result, scale, tm, ts = _stuff_and_solve(sub, opts, ws, feasibility=True)
        stats["it"] += result.iterations
        stats["tm"] += tm
        stats["ts"] += ts
        if result.status == Status.INDETERMINATE:
            raise SolverStatusError(f"probe at gamma={gamma:g} was indeterminate", result)
        if result.status == Status.ITERATION_LIMIT:
            logger.warning("probe at gamma=%g hit the iteration limit; treating as infeasible",
                           gamma)
        if result.status != Status.OPTIMAL:
            return False, None
        return True, (template, result, sub, scale)

    gamma, best, trace = _bisect(probe, gamma_hi, tol)
    out = MaxMinResult(gamma, None, trace, iterations=stats["it"],
                       modeling_time=stats["tm"], solving_time=stats["ts"])
    if best is not None:
        template, result, sub, scale = best
        sol = _recover(template, sub, result, scale)
        out.beamformers, out.sinr, out.feasible_result = sol.beamformers, sol.sinr, result
    return out


# -- heuristic baselines -------------------------------------------------------

SCHEMES = ("ZFBF", "RZF", "MRT")


def beam_directions(inst: NetworkInstance, scheme: str) -> np.ndarray:
    """Unit-norm directions ``w_k`` as rows of a ``(K, N)`` array.

    Uses ``G = conj(H)`` so that ``(G w)_k = h_k^H w``.
    """
    scheme = scheme.upper()
    H = inst.channels
    K, N = H.shape
    G = np.conj(H)
    if scheme == "MRT":
        W = H.copy()
    elif scheme == "ZFBF":
        if K > N:
            raise InputError(f"zero-forcing needs K <= N (K={K}, N={N})")
        W = np.linalg.pinv(G).T
    elif scheme == "RZF":
        load = K * np.mean(inst.sigma ** 2) / np.sum(inst.P)
        W = np.linalg.solve(G.conj().T @ G + load * np.eye(N), G.conj().T).T
    else:
        raise InputError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    norms = np.linalg.norm(W, axis=1)
    norms[norms == 0] = 1.0
    return W / norms[:, None]


def direction_gains(inst: NetworkInstance, W: np.ndarray) -> np.ndarray:
    """``g_ki = |h_k^H w_i|^2 / sigma_k^2`` for fixed directions ``W``."""
    Hn = inst.channels / inst.sigma[:, None]
    return np.abs(np.conj(Hn) @ W.T) ** 2


def power_control_program(inst: NetworkInstance, W: np.ndarray, gamma: float) -> ConeProgram:
    """Feasibility LP over received signal powers ``x_k = g_kk p_k >= 0``.

    Rows: ``-x <= 0``; ``sum_{i != k} (g_ki / g_ii) x_i - x_k / gamma <= -1``;
    ``sum_k ||w_k^l||^2 x_k / (g_kk P_l) <= 1``. This is the per-user power LP
    with rows and columns divided through by their natural scales; written
    in raw powers the entries span many decades and infeasibility
    certificates take orders of magnitude more iterations to emerge.
    """
    if gamma <= 0:
        raise InputError("SINR target must be positive")
    s = inst.shape
    K = s.K
    gains = direction_gains(inst, W)
    d = np.diag(gains).copy()
    d[d == 0] = np.finfo(float).tiny
    sinr_rows = gains / d[None, :]
    sinr_rows[np.diag_indices(K)] = -1.0 / gamma
    off = s.antenna_offsets
    share = np.array([np.sum(np.abs(W[:, off[l]:off[l + 1]]) ** 2, axis=1) for l in range(s.L)])
    power_rows = share / d[None, :] / inst.P[:, None]
    A = sp.vstack([-sp.identity(K), sp.csr_matrix(sinr_rows), sp.csr_matrix(power_rows)],
                  format="csc")
    b = np.concatenate([np.zeros(K), -np.ones(K), np.ones(s.L)])
    return ConeProgram(A, b, np.zeros(K), ConeSpec([("NonNegative", 2 * K + s.L)]))


def baseline_max_min(inst: NetworkInstance, scheme: str, tol: float = 0.01,
                     gamma_hi: float | None = None, opts: SolverOptions | None = None,
                     warm_start: bool = True) -> MaxMinResult:
    """Max-min common SINR for fixed ZFBF/RZF/MRT directions with LP power control."""
    opts = opts or PROBE_OPTIONS
    scheme = scheme.upper()
    t0 = time.perf_counter()
    W = beam_directions(inst, scheme)
    gamma_hi = sinr_upper_bound(inst) if gamma_hi is None else float(gamma_hi)
    stats = {"it": 0, "tm": time.perf_counter() - t0, "ts": 0.0}

    def probe(gamma, best):
        t1 = time.perf_counter()
        program = power_control_program(inst, W, gamma)
        t2 = time.perf_counter()
        ws = best if (warm_start and best is not None) else None
        result = solve(program, opts, warm_start=ws)
        stats["it"] += result.iterations
        stats["tm"] += t2 - t1
        stats["ts"] += time.perf_counter() - t2
        if result.status == Status.INDETERMINATE:
            raise SolverStatusError(f"{scheme} probe at gamma={gamma:g} was indeterminate", result)
        if result.status == Status.ITERATION_LIMIT:
            logger.warning("%s probe at gamma=%g hit the iteration limit", scheme, gamma)
        return result.status == Status.OPTIMAL, (result if result.status == Status.OPTIMAL
                                                 else None)

    gamma, best, trace = _bisect(probe, gamma_hi, tol)
    out = MaxMinResult(gamma, None, trace, scheme=scheme, iterations=stats["it"],
                       modeling_time=stats["tm"], solving_time=stats["ts"])
    if best is not None:
        p = np.maximum(best.nu, 0.0) / np.diag(direction_gains(inst, W))
        V = np.sqrt(p)[:, None] * W
        out.beamformers, out.feasible_result = V, best
        out.sinr = achieved_sinr(inst.channels, V, inst.sigma)
    return out


def with_options(opts: SolverOptions | None, **changes) -> SolverOptions:
    return replace(opts or DEFAULT_OPTIONS, **changes)
