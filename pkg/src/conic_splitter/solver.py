"""Operator-splitting solver for the homogeneous self-dual embedding.

Solves the primal-dual pair

    minimize c^T nu  s.t.  A nu + mu = b,  mu in K
    maximize -b^T eta  s.t. -A^T eta + lambda = c,  lambda = 0, eta in K*

by iterating

    u~ = (I + Q)^{-1} (u + v)
    u  = Pi_C(u~ - v)
    v  = v - u~ + u

on the embedding ``v = Q u`` with ``u = (nu, eta, tau)``, ``v = (lambda, mu, kappa)``,
``C = R^n x K* x R_+``. The linear system is reduced to the quasidefinite
``S = [[I, -A^T], [-A, -I]]`` whose LDL^T factorization is computed once.
"""
from __future__ import annotations

import enum
import logging
import time
from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator
from scipy.sparse.linalg import norm as sparse_norm

from .cones import ConeKind, ConeSpec, cone_distance, project_blocks_inplace, project_cone
from .exceptions import DimensionError, InputError, UsageError
from .linalg import build_kkt, ldl_factor
from .linalg.ldl import _permuted_solve, _permuted_solve_work

logger = logging.getLogger(__name__)

INDETERMINATE_TOL = 1e-9


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    PRIMAL_INFEASIBLE = "PrimalInfeasible"
    DUAL_INFEASIBLE = "DualInfeasible"
    INDETERMINATE = "Indeterminate"
    ITERATION_LIMIT = "IterationLimit"

    def __str__(self):
        return self.value


@dataclass
class ConeProgram:
    """``minimize c^T nu  s.t.  A nu + mu = b, mu in cone``.

    ``A`` keeps whatever sparsity pattern it is given (stuffed programs rely
    on a fixed pattern, explicit zeros included).
    """

    A: sp.csc_matrix
    b: np.ndarray
    c: np.ndarray
    cone: ConeSpec

    def __post_init__(self):
        self.A = sp.csc_matrix(self.A, dtype=float)
        self.A.sort_indices()
        self.b = np.asarray(self.b, dtype=float).ravel()
        self.c = np.asarray(self.c, dtype=float).ravel()
        m, n = self.A.shape
        if self.b.shape != (m,):
            raise DimensionError(f"b has length {self.b.size}, A has {m} rows")
        if self.c.shape != (n,):
            raise DimensionError(f"c has length {self.c.size}, A has {n} columns")
        if self.cone.dim != m:
            raise DimensionError(f"cone dimension {self.cone.dim} != {m} rows of A")
        if not (np.all(np.isfinite(self.A.data)) and np.all(np.isfinite(self.b))
                and np.all(np.isfinite(self.c))):
            raise InputError("cone program data must be finite")

    @classmethod
    def trusted(cls, A, b, c, cone) -> "ConeProgram":
        """Wrap already-validated float data without copying or re-checking it."""
        p = object.__new__(cls)
        p.A, p.b, p.c, p.cone = A, b, c, cone
        return p

    @property
    def n(self) -> int:
        return self.A.shape[1]

    @property
    def m(self) -> int:
        return self.A.shape[0]


@dataclass
class SolverOptions:
    eps: float = 1e-3
    eps_infeas: float = 1e-5
    max_iters: int = 20000
    check_interval: int = 25
    overrelax: bool = False
    alpha: float = 1.5
    equilibrate: bool = False
    equilibrate_passes: int = 10
    cost_scale: float = 1.0

    def __post_init__(self):
        if not (self.eps > 0 and self.eps_infeas > 0):
            raise InputError("tolerances must be positive")
        if self.max_iters < 1 or self.check_interval < 1:
            raise InputError("max_iters and check_interval must be >= 1")
        if self.cost_scale <= 0:
            raise InputError("cost_scale must be positive")
        if not 0 < self.alpha < 2:
            raise InputError("over-relaxation parameter must lie in (0, 2)")

    @property
    def relaxation(self) -> float:
        return self.alpha if self.overrelax else 1.0


@dataclass
class EmbeddingIterate:
    """ADMM state: ``u = (nu, eta, tau)`` and ``v = (lambda, mu, kappa)``."""

    u: np.ndarray
    v: np.ndarray
    iteration: int = 0

    @classmethod
    def default(cls, n, m):
        u = np.zeros(n + m + 1)
        u[-1] = 1.0
        return cls(u, np.zeros(n + m + 1), 0)

    def copy(self):
        return EmbeddingIterate(self.u.copy(), self.v.copy(), self.iteration)


@dataclass
class SolveResult:
    status: Status
    objective: float
    residuals: dict
    iterations: int
    solve_time: float
    nu: np.ndarray | None = None
    mu: np.ndarray | None = None
    eta: np.ndarray | None = None
    certificate: np.ndarray | None = None
    iterate: EmbeddingIterate | None = field(default=None, repr=False)

    def __post_init__(self):
        has_solution = self.nu is not None
        has_cert = self.certificate is not None
        if self.status == Status.OPTIMAL and not (has_solution and not has_cert):
            raise ValueError("Optimal result needs nu/mu/eta and no certificate")
        if self.status in (Status.PRIMAL_INFEASIBLE, Status.DUAL_INFEASIBLE) and not (
            has_cert and not has_solution
        ):
            raise ValueError("infeasible result needs a certificate only")
        if self.status in (Status.INDETERMINATE, Status.ITERATION_LIMIT) and (has_solution or has_cert):
            raise ValueError(f"{self.status} result carries no payload")

    @property
    def time_ms(self) -> float:
        return 1e3 * self.solve_time

    def to_dict(self) -> dict:
        out = {
            "status": str(self.status),
            "objective": _json_float(self.objective),
            "residuals": {k: _json_float(v) for k, v in self.residuals.items()},
            "iterations": self.iterations,
            "time_ms": self.time_ms,
        }
        if self.status == Status.OPTIMAL:
            out["nu"] = self.nu.tolist()
            out["eta"] = self.eta.tolist()
            out["mu"] = self.mu.tolist()
        elif self.certificate is not None:
            out["certificate"] = self.certificate.tolist()
        return out


def _json_float(x):
    x = float(x)
    if np.isfinite(x):
        return x
    return None if np.isnan(x) else ("inf" if x > 0 else "-inf")


class Embedding:
    """Cached data for one cone program: factorization of ``S`` and ``M^{-1} h``.

    ``Q`` itself is never formed densely; :meth:`Q` returns a linear operator.
    Immutable after construction, so one embedding can serve several
    concurrent solves holding their own iterates.
    """

    def __init__(self, program: ConeProgram, perm=None, factorization=None):
        self.program = program
        A = program.A
        self.n, self.m = program.n, program.m
        self.A = A
        self.AT = A.T.tocsr()
        self.h = np.concatenate([program.c, program.b])
        if factorization is None:
            factorization = ldl_factor(build_kkt(A), perm)
        self.factorization = factorization
        self._kinds, self._starts, self._dims = program.cone.arrays()
        self.minv_h = self._solve_m(self.h)
        self._denom = 1.0 + float(self.h @ self.minv_h)

    def _solve_m(self, r, out=None):
        """Solve ``M z = r`` with ``M = [[I, A^T], [-A, I]]`` through ``S``."""
        f = self.factorization
        if out is None:
            out = np.empty(self.n + self.m)
        _permuted_solve(f.perm, f.Lp, f.Li, f.Lx, f.D, r, out)
        out[self.n:] *= -1.0
        return out

    def Q(self) -> LinearOperator:
        n, m = self.n, self.m
        A, AT, b, c = self.A, self.AT, self.program.b, self.program.c

        def matvec(x):
            x = np.ravel(x)
            nu, eta, tau = x[:n], x[n:n + m], x[-1]
            return np.concatenate([AT @ eta + c * tau, -(A @ nu) + b * tau,
                                   [-(c @ nu) - (b @ eta)]])

        d = n + m + 1
        return LinearOperator((d, d), matvec=matvec, dtype=float)

    def dense_Q(self) -> np.ndarray:
        A = self.A.toarray()
        b, c = self.program.b, self.program.c
        n, m = self.n, self.m
        Q = np.zeros((n + m + 1, n + m + 1))
        Q[:n, n:n + m] = A.T
        Q[:n, -1] = c
        Q[n:n + m, :n] = -A
        Q[n:n + m, -1] = b
        Q[-1, :n] = -c
        Q[-1, n:n + m] = -b
        return Q

    def subspace_project(self, w) -> np.ndarray:
        """Solve ``(I + Q) x = w`` by eliminating the ``tau`` coordinate."""
        w = np.asarray(w, dtype=float)
        if w.shape != (self.n + self.m + 1,):
            raise DimensionError("w has the wrong length")
        out = np.empty_like(w)
        self._subspace_into(w, out, np.empty(self.n + self.m))
        return out

    def _subspace_into(self, w, out, work):
        k = self.n + self.m
        z = self._solve_m(w[:k], work)
        tau = (w[k] + self.h @ z) / self._denom
        out[:k] = z - tau * self.minv_h
        out[k] = tau

    def project_C(self, x) -> np.ndarray:
        """Projection onto ``R^n x K* x R_+`` (in place on a copy)."""
        out = np.array(x, dtype=float)
        self._project_C_inplace(out)
        return out

    def _project_C_inplace(self, x):
        n, m = self.n, self.m
        project_blocks_inplace(x[n:n + m], self._kinds, self._starts, self._dims, True)
        if x[-1] < 0.0:
            x[-1] = 0.0


@numba.njit(cache=True)
def _admm_run(u, v, iters, alpha, n, perm, Lp, Li, Lx, D, h, minv_h, denom,
              kinds, starts, dims):
    """``iters`` ADMM iterations in place on ``(u, v)``; mirrors :func:`admm_step`."""
    d = u.shape[0]
    k = d - 1
    w = np.empty(k)
    z = np.empty(k)
    work = np.empty(k)
    ut = np.empty(d)
    for _ in range(iters):
        for i in range(k):
            w[i] = u[i] + v[i]
        _permuted_solve_work(perm, Lp, Li, Lx, D, w, z, work)
        for i in range(n, k):
            z[i] = -z[i]
        acc = u[k] + v[k]
        for i in range(k):
            acc += h[i] * z[i]
        tau = acc / denom
        for i in range(k):
            ut[i] = z[i] - tau * minv_h[i]
        ut[k] = tau
        if alpha != 1.0:
            for i in range(d):
                ut[i] = alpha * ut[i] + (1.0 - alpha) * u[i]
        for i in range(d):
            u[i] = ut[i] - v[i]
        project_blocks_inplace(u[n:k], kinds, starts, dims, True)
        if u[k] < 0.0:
            u[k] = 0.0
        for i in range(d):
            v[i] += u[i] - ut[i]


def build_embedding(program: ConeProgram, perm=None) -> Embedding:
    return Embedding(program, perm)


def admm_step(ctx: Embedding, iterate: EmbeddingIterate, alpha: float = 1.0) -> EmbeddingIterate:
    """One over-relaxed ADMM iteration (``alpha = 1`` is the plain method)."""
    u, v = iterate.u, iterate.v
    ut = ctx.subspace_project(u + v)
    if alpha != 1.0:
        ut = alpha * ut + (1.0 - alpha) * u
    u_new = ut - v
    ctx._project_C_inplace(u_new)
    v_new = v - ut + u_new
    return EmbeddingIterate(u_new, v_new, iterate.iteration + 1)


@dataclass(frozen=True)
class Scaling:
    """Data scaling ``A_s = D A E``, ``b_s = sb D b``, ``c_s = sc E c``.

    A scaled embedding point maps back through ``nu = E nu_s / sb``,
    ``eta = D eta_s / sc``, ``mu = D^{-1} mu_s / sb``, ``kappa = kappa_s / (sb sc)``;
    ``tau`` is unchanged.
    """

    row: np.ndarray
    col: np.ndarray
    sb: float = 1.0
    sc: float = 1.0

    @classmethod
    def identity(cls, n, m):
        return cls(np.ones(m), np.ones(n))

    def _factors(self):
        n = self.col.shape[0]
        fu = np.concatenate([self.col / self.sb, self.row / self.sc, [1.0]])
        fv = np.concatenate([1.0 / (self.col * self.sc), 1.0 / (self.row * self.sb),
                             [1.0 / (self.sb * self.sc)]])
        return fu, fv

    def unscale(self, u, v):
        fu, fv = self._factors()
        return u * fu, v * fv

    def scale(self, u, v):
        fu, fv = self._factors()
        return u / fu, v / fv


def equilibrate(program: ConeProgram, passes: int = 10, cost_scale: float | None = 1.0):
    """Ruiz-style row/column infinity-norm scaling of ``A``, then of ``b`` and ``c``.

    Returns ``(scaled_program, scaling)``. Rows of one second-order block
    share a factor so the cone is preserved. Unless ``cost_scale`` is None,
    ``b`` is brought to the mean column norm of the scaled matrix and ``c``
    to ``cost_scale`` times its mean row norm; weighting the cost up trades
    a few iterations for markedly better objective accuracy at loose
    tolerances.
    """
    A = program.A.tocsc(copy=True)
    m, n = A.shape
    row = np.ones(m)
    col = np.ones(n)
    groups = []
    for kind, sl in program.cone.slices():
        if kind == ConeKind.SECOND_ORDER:
            groups.append(sl)
    for _ in range(passes):
        absA = abs(sp.diags(row) @ A @ sp.diags(col))
        rn = np.asarray(absA.max(axis=1).todense()).ravel()
        for sl in groups:
            rn[sl] = rn[sl].max()
        cn = np.asarray(absA.max(axis=0).todense()).ravel()
        rn[rn == 0] = 1.0
        cn[cn == 0] = 1.0
        row /= np.sqrt(rn)
        col /= np.sqrt(cn)
    row = np.clip(row, 1e-4, 1e4)
    col = np.clip(col, 1e-4, 1e4)
    As = (sp.diags(row) @ A @ sp.diags(col)).tocsc()
    bs, cs = row * program.b, col * program.c
    sb = sc = 1.0
    if cost_scale is not None:
        col_norms = sp.linalg.norm(As, axis=0)
        row_norms = sp.linalg.norm(As, axis=1)
        nb, nc = _norm(bs), _norm(cs)
        if nb > 0:
            sb = float(np.clip(np.mean(col_norms) / nb, 1e-4, 1e4))
        if nc > 0:
            sc = float(np.clip(cost_scale * np.mean(row_norms) / nc, 1e-4, 1e4))
    scaled = ConeProgram(As, sb * bs, sc * cs, program.cone)
    return scaled, Scaling(row, col, sb, sc)


def _norm(x):
    return float(np.linalg.norm(x))


def solve(program: ConeProgram, opts: SolverOptions | None = None, warm_start=None,
          embedding: Embedding | None = None, perm=None) -> SolveResult:
    """Run the HSDE splitting method until a verdict or ``max_iters``.

    ``warm_start`` may be a previous :class:`SolveResult` (its final iterate
    is reused) or a tuple ``(nu, eta, mu)`` of a candidate solution.
    ``embedding`` lets callers reuse a factorization across solves of the
    same data; it is ignored when equilibration is on.
    """
    opts = opts or SolverOptions()
    t0 = time.perf_counter()
    p = program
    n, m = p.n, p.m
    if opts.equilibrate:
        work_prog, scaling = equilibrate(p, opts.equilibrate_passes, opts.cost_scale)
        ctx = Embedding(work_prog, perm)
    else:
        scaling = Scaling.identity(n, m)
        ctx = embedding if embedding is not None else Embedding(p, perm)
    if ctx.n != n or ctx.m != m:
        raise DimensionError("embedding does not match program")

    it = _initial_iterate(p, warm_start)
    # iterate lives in the scaled space
    u, v = scaling.scale(it.u, it.v)
    fu, fv = scaling._factors()

    alpha = opts.relaxation
    A, AT, b, c = p.A, p.A.T.tocsr(), p.b, p.c
    nb, nc = _norm(b), _norm(c)
    residuals = {"primal": np.nan, "dual": np.nan, "gap": np.nan}
    status = None
    payload = {}
    f = ctx.factorization
    k = 0
    if warm_start is not None:
        # a warm start that already meets the tolerances is returned as is
        status, residuals, payload = _check(p, A, AT, b, c, nb, nc, it.u[:n], it.u[n:n + m],
                                            it.v[n:n + m], it.u[-1], it.v[-1], u, v, opts)
    while status is None and k < opts.max_iters:
        step = min(opts.check_interval - k % opts.check_interval, opts.max_iters - k)
        _admm_run(u, v, step, alpha, n, f.perm, f.Lp, f.Li, f.Lx, f.D, ctx.h, ctx.minv_h,
                  ctx._denom, ctx._kinds, ctx._starts, ctx._dims)
        k += step
        nu, eta, tau = u[:n] * fu[:n], u[n:n + m] * fu[n:n + m], u[-1]
        mu, kappa = v[n:n + m] * fv[n:n + m], v[-1] * fv[-1]
        status, residuals, payload = _check(p, A, AT, b, c, nb, nc, nu, eta, mu, tau, kappa,
                                            u, v, opts)
    if status is None:
        status = Status.ITERATION_LIMIT
        payload = {}

    final = EmbeddingIterate(*scaling.unscale(u, v), k)
    elapsed = time.perf_counter() - t0
    objective = payload.pop("objective", np.nan)
    logger.debug("solve finished: %s after %d iterations (%.1f ms)", status, k, 1e3 * elapsed)
    return SolveResult(status, objective, residuals, k, elapsed, iterate=final, **payload)


def _initial_iterate(p: ConeProgram, warm_start) -> EmbeddingIterate:
    n, m = p.n, p.m
    if warm_start is None:
        return EmbeddingIterate.default(n, m)
    if isinstance(warm_start, SolveResult):
        # the stored iterate is the full ADMM state (lambda and kappa included)
        if warm_start.iterate is not None and warm_start.iterate.u.shape == (n + m + 1,):
            return warm_start.iterate.copy()
        if warm_start.status != Status.OPTIMAL:
            return EmbeddingIterate.default(n, m)
        warm_start = (warm_start.nu, warm_start.eta, warm_start.mu)
    if isinstance(warm_start, EmbeddingIterate):
        if warm_start.u.shape != (n + m + 1,) or warm_start.v.shape != (n + m + 1,):
            raise DimensionError("warm start iterate does not match the program")
        return warm_start.copy()
    nu, eta, mu = (np.asarray(x, dtype=float) for x in warm_start)
    if nu.shape != (n,) or eta.shape != (m,) or mu.shape != (m,):
        raise DimensionError("warm start vectors do not match the program")
    u = np.concatenate([nu, eta, [1.0]])
    v = np.concatenate([np.zeros(n), mu, [0.0]])
    return EmbeddingIterate(u, v, 0)


def _check(p, A, AT, b, c, nb, nc, nu, eta, mu, tau, kappa, u, v, opts):
    residuals = {"primal": np.nan, "dual": np.nan, "gap": np.nan}
    if tau > 0:
        x, y, s = nu / tau, eta / tau, mu / tau
        cx, by = float(c @ x), float(b @ y)
        residuals = {
            "primal": _norm(A @ x + s - b) / (1.0 + nb),
            "dual": _norm(AT @ y + c) / (1.0 + nc),
            "gap": abs(cx + by) / (1.0 + abs(cx) + abs(by)),
        }
        if max(residuals.values()) <= opts.eps:
            return Status.OPTIMAL, residuals, {"nu": x, "mu": s, "eta": y, "objective": cx}
    beta = float(b @ eta)
    if beta < 0 and nb > 0 and _norm(AT @ eta) <= opts.eps_infeas * (-beta) / nb:
        return Status.PRIMAL_INFEASIBLE, residuals, {
            "certificate": eta / (-beta), "objective": np.inf}
    gamma = float(c @ nu)
    if gamma < 0 and nc > 0:
        dist = cone_distance(p.cone, -(A @ nu))
        if dist <= opts.eps_infeas * (-gamma) / nc:
            return Status.DUAL_INFEASIBLE, residuals, {
                "certificate": nu / (-gamma), "objective": -np.inf}
    if (_norm(u) < INDETERMINATE_TOL and _norm(v) < INDETERMINATE_TOL
            and tau <= INDETERMINATE_TOL and kappa <= INDETERMINATE_TOL):
        return Status.INDETERMINATE, residuals, {}
    return None, residuals, {}


@dataclass
class CertificateReport:
    kind: Status
    violations: dict
    max_violation: float
    tolerance: float

    @property
    def valid(self) -> bool:
        return self.max_violation <= self.tolerance


def verify_certificate(program: ConeProgram, result: SolveResult, tol: float = 1e-6) -> CertificateReport:
    """Check an infeasibility certificate against the alternative systems.

    Primal: ``A^T eta = 0``, ``eta in K*``, ``b^T eta = -1``.
    Dual: ``-A nu in K``, ``c^T nu = -1``.
    The report is valid when the largest violation is at most
    ``tol * (1 + ||A||_F)``.
    """
    p = program
    cert = result.certificate
    if result.status == Status.PRIMAL_INFEASIBLE:
        eta = np.asarray(cert, dtype=float)
        violations = {
            "A^T eta": float(np.max(np.abs(p.A.T @ eta), initial=0.0)),
            "cone": cone_distance(p.cone, eta, dual=True),
            "b^T eta + 1": abs(float(p.b @ eta) + 1.0),
        }
    elif result.status == Status.DUAL_INFEASIBLE:
        nu = np.asarray(cert, dtype=float)
        violations = {
            "cone": cone_distance(p.cone, -(p.A @ nu)),
            "c^T nu + 1": abs(float(p.c @ nu) + 1.0),
        }
    else:
        raise UsageError(f"no certificate to verify for status {result.status}")
    scale = 1.0 + (float(sparse_norm(p.A)) if p.A.nnz else 0.0)
    return CertificateReport(result.status, violations, max(violations.values()), tol * scale)


def kkt_report(program: ConeProgram, result: SolveResult) -> dict:
    """Residuals of the optimality conditions and cone distances for a solution."""
    if result.status != Status.OPTIMAL:
        raise UsageError("KKT report needs an Optimal result")
    p = program
    nu, mu, eta = result.nu, result.mu, result.eta
    return {
        "primal": _norm(p.A @ nu + mu - p.b) / (1.0 + _norm(p.b)),
        "dual": _norm(p.A.T @ eta + p.c) / (1.0 + _norm(p.c)),
        "gap": abs(p.c @ nu + p.b @ eta) / (1.0 + abs(p.c @ nu) + abs(p.b @ eta)),
        "mu_cone": float(np.linalg.norm(mu - project_cone(p.cone, mu))),
        "eta_cone": cone_distance(p.cone, eta, dual=True),
        "complementarity": abs(float(mu @ eta)),
    }
