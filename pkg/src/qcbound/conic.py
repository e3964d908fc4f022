"""Solver-agnostic conic form and the backends that solve it.

A :class:`ConicProblem` is::

    minimise    c @ v
    subject to  F0 + sum_k v_k F_k  <=  0        (negative semidefinite)
                v_k >= 0                        for k in nonneg

It is exported to the standard primal form ``h - G v in K`` with
``K = R_+^l x S_+^n``; the PSD block uses svec ordering (lower triangle,
row-major, off-diagonals scaled by sqrt 2), which coincides with Clarabel's
upper-triangle column-major ``PSDTriangleConeT``.
"""
from __future__ import annotations

import os
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

BACKENDS = ("clarabel", "cvxopt")
DEFAULT_BACKEND_ENV = "QCBOUND_SOLVER"
CVXOPT_MIN_TOL = 1e-8  # tighter requests stall or divide by zero inside cvxopt's scaling update


class UnsupportedCone(ValueError):
    pass


def tril_indices(n: int) -> tuple[np.ndarray, np.ndarray]:
    """(row, col) of the packed lower triangle, row-major."""
    return np.tril_indices(n)


def pack(A: np.ndarray) -> np.ndarray:
    i, j = tril_indices(A.shape[0])
    return A[i, j]


def unpack(p: np.ndarray, n: int) -> np.ndarray:
    i, j = tril_indices(n)
    A = np.zeros((n, n))
    A[i, j] = p
    A[j, i] = p
    return A


def svec_scale(n: int) -> np.ndarray:
    i, j = tril_indices(n)
    return np.where(i == j, 1.0, np.sqrt(2.0))


@dataclass
class ConicProblem:
    c: np.ndarray
    F0: np.ndarray
    F: np.ndarray  # (n(n+1)/2, n_var) packed lower triangles of F_k
    nonneg: np.ndarray  # bool mask over variables

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.F0 = np.asarray(self.F0, dtype=float)
        self.nonneg = np.asarray(self.nonneg, dtype=bool)
        n = self.F0.shape[0]
        if self.F.shape != (n * (n + 1) // 2, self.c.shape[0]) or self.nonneg.shape != self.c.shape:
            raise ValueError("inconsistent conic problem dimensions")

    @property
    def n_var(self) -> int:
        return self.c.shape[0]

    @property
    def dim(self) -> int:
        return self.F0.shape[0]

    def lmi(self, v: np.ndarray) -> np.ndarray:
        return self.F0 + unpack(self.F @ v, self.dim)


@dataclass
class StandardForm:
    c: np.ndarray
    G: sp.csc_matrix
    h: np.ndarray
    n_nonneg: int
    psd_dims: tuple[int, ...]


def export(problem: ConicProblem) -> StandardForm:
    n = problem.dim
    idx = np.flatnonzero(problem.nonneg)
    G_l = sp.csr_matrix((-np.ones(idx.size), (np.arange(idx.size), idx)),
                        shape=(idx.size, problem.n_var))
    scale = svec_scale(n)
    G_s = sp.csr_matrix(problem.F * scale[:, None])
    h = np.concatenate([np.zeros(idx.size), -pack(problem.F0) * scale])
    return StandardForm(problem.c.copy(), sp.vstack([G_l, G_s]).tocsc(), h, int(idx.size), (n,))


def import_solution(problem: ConicProblem, x) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != problem.n_var:
        raise ValueError(f"solution has {x.shape[0]} entries, problem has {problem.n_var} variables")
    return x


@dataclass
class ConicResult:
    x: np.ndarray
    status: str  # optimal | near_optimal | infeasible | numerical_failure
    objective: float
    backend: str
    solve_time: float
    iterations: int = 0
    raw_status: str = ""
    info: dict = field(default_factory=dict)


@dataclass(frozen=True)
class SolverSettings:
    backend: str = ""
    max_iter: int = 200
    tol: float = 1e-8

    def resolved_backend(self) -> str:
        name = (self.backend or os.environ.get(DEFAULT_BACKEND_ENV) or "clarabel").lower()
        if name not in BACKENDS:
            raise ValueError(f"unknown solver backend {name!r}; available: {', '.join(BACKENDS)}")
        return name


def solve_conic(problem: ConicProblem, settings: SolverSettings = SolverSettings()) -> ConicResult:
    backend = settings.resolved_backend()
    if problem.n_var == 0:
        # nothing to optimise: feasibility of F0 <= 0 decides
        ok = np.linalg.eigvalsh(problem.F0).max(initial=-np.inf) <= 0
        return ConicResult(np.zeros(0), "optimal" if ok else "infeasible", 0.0, backend, 0.0)
    std = export(problem)
    t0 = time.perf_counter()
    if backend == "clarabel":
        result = _solve_clarabel(std, settings)
    else:
        result = _solve_cvxopt(std, settings)
    result.solve_time = time.perf_counter() - t0
    result.backend = backend
    result.x = import_solution(problem, result.x) if result.x.size else np.full(problem.n_var, np.nan)
    return result


def _solve_clarabel(std: StandardForm, settings: SolverSettings) -> ConicResult:
    import clarabel

    n_var = std.c.shape[0]
    P = sp.csc_matrix((n_var, n_var))
    cones = []
    if std.n_nonneg:
        cones.append(clarabel.NonnegativeConeT(std.n_nonneg))
    cones.extend(clarabel.PSDTriangleConeT(n) for n in std.psd_dims)
    opts = clarabel.DefaultSettings()
    opts.verbose = False
    opts.max_iter = settings.max_iter
    opts.tol_gap_abs = settings.tol
    opts.tol_gap_rel = settings.tol
    opts.tol_feas = settings.tol
    solver = clarabel.DefaultSolver(P, std.c, std.G, std.h, cones, opts)
    sol = solver.solve()
    raw = str(sol.status)
    if raw == "Solved":
        status = "optimal"
    elif raw == "AlmostSolved":
        status = "near_optimal"
    elif "PrimalInfeasible" in raw:
        status = "infeasible"
    else:
        status = "numerical_failure"
    return ConicResult(np.asarray(sol.x, dtype=float), status, float(sol.obj_val), "clarabel", 0.0,
                       int(sol.iterations), raw)


def _solve_cvxopt(std: StandardForm, settings: SolverSettings) -> ConicResult:
    from cvxopt import matrix, solvers, spmatrix

    l = std.n_nonneg
    (n,) = std.psd_dims
    G = std.G.tocoo()
    lin = G.row < l
    Gl = spmatrix(G.data[lin].tolist(), G.row[lin].tolist(), G.col[lin].tolist(), (l, G.shape[1]))
    # cvxopt wants the full column-major vec of each matrix; only the lower triangle is read
    ti, tj = tril_indices(n)
    scale = svec_scale(n)
    rows = G.row[~lin] - l
    Gs = spmatrix((G.data[~lin] / scale[rows]).tolist(), (ti[rows] + tj[rows] * n).tolist(),
                  G.col[~lin].tolist(), (n * n, G.shape[1]))
    hs = np.zeros((n, n))
    hs[ti, tj] = std.h[l:] / scale
    hs = hs + np.tril(hs, -1).T
    tol = max(settings.tol, CVXOPT_MIN_TOL)
    opts = {"show_progress": False, "maxiters": settings.max_iter, "abstol": tol, "reltol": tol, "feastol": tol}
    try:
        sol = solvers.sdp(matrix(std.c), Gl=Gl, hl=matrix(std.h[:l]), Gs=[Gs], hs=[matrix(hs)], options=opts)
    except (ArithmeticError, ValueError) as err:
        # cvxopt can break down inside the scaling update when pushed to tight tolerances
        return ConicResult(np.zeros(0), "numerical_failure", np.nan, "cvxopt", 0.0, raw_status=repr(err))
    raw = sol["status"]
    x = np.array(sol["x"]).reshape(-1) if sol["x"] is not None else np.zeros(0)
    if raw == "optimal":
        status = "optimal"
    elif raw == "primal infeasible":
        status = "infeasible"
    elif raw == "unknown" and x.size and sol.get("primal infeasibility", 1) is not None \
            and sol["primal infeasibility"] < 1e-6:
        status = "near_optimal"
    else:
        status = "numerical_failure"
    obj = float(sol["primal objective"]) if sol.get("primal objective") is not None else np.nan
    return ConicResult(x, status, obj, "cvxopt", 0.0, int(sol.get("iterations", 0)), raw)
