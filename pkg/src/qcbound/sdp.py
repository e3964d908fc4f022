"""Worst-case error bound SDP: assembly, solve and independent certificate check.

The LMI is assembled here directly from affine row functionals in eta
coordinates (every QC is a symmetrised product ``(l @ eta) * (r @ eta)``).
:func:`check_certificate` re-builds the same matrix through the block-matrix
builders of :mod:`qcbound.qc`, so the two routes cross-check each other.
"""
from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .conic import ConicProblem, SolverSettings, pack, solve_conic, unpack
from .network import Activation, CompactForm, NeuralNetwork, build_compact_form, forward, network_to_dict
from .qc import (ActivationQCConfig, Coupling, Gammas, InputSpec, MultiplierSet, QCError,
                 activation_qc, error_qc, input_qc, quantisation_qc)

GAMMA_NAMES = ("x1", "x2", "x", "affine")
NEG_GAMMA_TOL = 1e-9  # below this a raw solver value is reported in the certificate message


@dataclass(frozen=True)
class ObjectiveWeights:
    w_x1: float = 1.0
    w_x2: float = 1.0
    w_x: float = 1.0
    w_affine: float = 1.0

    def __post_init__(self):
        w = self.as_tuple()
        if min(w) < 0 or max(w) == 0:
            raise ValueError("objective weights must be non-negative and not all zero")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.w_x1, self.w_x2, self.w_x, self.w_affine)

    def scaled(self, alpha: float) -> "ObjectiveWeights":
        return ObjectiveWeights(*(alpha * w for w in self.as_tuple()))


@dataclass(frozen=True)
class SolverOptions:
    backend: str = ""  # empty: QCBOUND_SOLVER env var, else clarabel
    eps: float = 1e-8
    max_iter: int = 200
    tol: float = 1e-8
    # if the returned LMI is not strictly negative, eps is raised (x100, or past the
    # observed violation if that is larger) and the SDP re-solved, up to this value
    max_eps: float = 1e-3
    activation: ActivationQCConfig = ActivationQCConfig()

    def settings(self) -> SolverSettings:
        return SolverSettings(self.backend, self.max_iter, self.tol)

    def to_dict(self) -> dict:
        return {"backend": self.settings().resolved_backend(), "eps": self.eps, "max_iter": self.max_iter,
                "tol": self.tol, "max_eps": self.max_eps, "slope": self.activation.slope}

    @classmethod
    def from_dict(cls, data: dict) -> "SolverOptions":
        data = dict(data)
        slope = data.pop("slope", "none")
        return cls(activation=ActivationQCConfig(slope), **data)


# ---------------------------------------------------------------- assembly

@dataclass
class VariableBlock:
    name: str
    shape: tuple[int, ...]
    nonneg: bool
    coeffs: np.ndarray  # (n_tri, size) packed lower triangle of each variable's matrix

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))


def _sym_outer_packed(left: np.ndarray, right: np.ndarray) -> np.ndarray:
    """Packed sym(l r^T) for each row pair; returns (n_tri, K)."""
    i, j = np.tril_indices(left.shape[1])
    return (0.5 * (left[:, i] * right[:, j] + right[:, i] * left[:, j])).T


@dataclass
class LMIAssembly:
    """``F0 + sum_b blocks[b].coeffs @ vec(value_b)`` in (possibly reduced) eta coordinates."""
    cf: CompactForm
    spec: InputSpec
    config: ActivationQCConfig
    reduce: np.ndarray  # eta = reduce @ eta_reduced
    F0: np.ndarray
    blocks: list[VariableBlock] = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.F0.shape[0]

    @property
    def n_slope(self) -> int:
        return self.config.slope_pairs(self.cf.M).shape[0]

    def block(self, name: str) -> VariableBlock:
        for b in self.blocks:
            if b.name == name:
                return b
        raise KeyError(name)

    def evaluate(self, mult: MultiplierSet, gammas: Gammas) -> np.ndarray:
        p = pack(self.F0)
        for b in self.blocks:
            val = np.asarray(gammas.as_tuple()) if b.name == "gamma" else getattr(mult, b.name)
            p = p + b.coeffs @ np.ravel(val)
        return unpack(p, self.dim)

    def to_conic(self, weights: ObjectiveWeights, eps: float) -> tuple[ConicProblem, list[tuple[str, slice]]]:
        cols, c, nonneg, layout = [], [], [], []
        start = 0
        for b in self.blocks:
            cols.append(b.coeffs)
            c.append(np.asarray(weights.as_tuple()) if b.name == "gamma" else np.zeros(b.size))
            nonneg.append(np.full(b.size, b.nonneg))
            layout.append((b.name, slice(start, start + b.size)))
            start += b.size
        problem = ConicProblem(np.concatenate(c), self.F0 + eps * np.eye(self.dim),
                               np.hstack(cols), np.concatenate(nonneg))
        return problem, layout

    def unpack_solution(self, v: np.ndarray, layout) -> tuple[MultiplierSet, Gammas]:
        mult = MultiplierSet.zeros(self.cf.n_x, self.cf.M, self.n_slope)
        gam = Gammas()
        for name, sl in layout:
            shape = self.block(name).shape
            if name == "gamma":
                gam = Gammas(*(float(t) for t in v[sl]))
            else:
                setattr(mult, name, v[sl].reshape(shape).copy())
        return mult, gam


def reduction_matrix(cf: CompactForm, spec: InputSpec) -> np.ndarray:
    """Linear identification of coupled coordinates (identical inputs share one block)."""
    n = cf.eta_dim
    if spec.coupling is not Coupling.IDENTICAL:
        return np.eye(n)
    keep = [k for k in range(n) if k not in range(cf.x_slice(2).start, cf.x_slice(2).stop)]
    R = np.eye(n)[:, keep]
    R[cf.x_slice(2), :cf.n_x] = np.eye(cf.n_x)
    return R


def assemble_lmi(nets: tuple[NeuralNetwork, NeuralNetwork], spec: InputSpec,
                 config: ActivationQCConfig = ActivationQCConfig(),
                 cf: Optional[CompactForm] = None) -> LMIAssembly:
    net1, net2 = nets
    for net in nets:
        if net.activation is not Activation.RELU:
            raise QCError(f"activation QCs are implemented for ReLU only, got {net.activation.value}")
    cf = cf or build_compact_form(net1, net2)
    if spec.n_x != cf.n_x:
        raise QCError(f"input spec has dimension {spec.n_x}, networks take {cf.n_x}")
    R = reduction_matrix(cf, spec)
    M, nx = cf.M, cf.n_x
    e = cf.const_row()[None, :]
    X1, X2 = cf.x_rows(1), cf.x_rows(2)
    P1, P2 = cf.phi_rows(1), cf.phi_rows(2)
    Xi1, Xi2 = cf.xi_rows(1), cf.xi_rows(2)
    ones_m = np.repeat(e, M, axis=0)
    ones_x = np.repeat(e, nx, axis=0)

    blocks: list[VariableBlock] = []

    def family(name, shape, nonneg, left, right):
        blocks.append(VariableBlock(name, shape, nonneg, _sym_outer_packed(left @ R, right @ R)))

    def outer_family(name, left, right):
        a, b = np.meshgrid(np.arange(M), np.arange(M), indexing="ij")
        family(name, (M, M), True, left[a.ravel()], right[b.ravel()])

    # error form: constant part ||f1 - f2||^2 and the four bound coefficients
    f1 = cf.V[2 * nx:2 * nx + cf.n_f]
    f2 = cf.V[2 * nx + cf.n_f:2 * nx + 2 * cf.n_f]
    D = (f1 - f2) @ R
    F0 = D.T @ D
    dx = X1 - X2
    g_rows = [X1, X2, dx, e]
    blocks.append(VariableBlock("gamma", (4,), True, np.stack(
        [-_sym_outer_packed(rows @ R, rows @ R).sum(axis=1) for rows in g_rows], axis=1)))

    # input box per network: (x - lo)(hi - x) >= 0
    for name, X, lo, hi in (("x_inf1", X1, spec.lower1, spec.upper1), ("x_inf2", X2, spec.lower2, spec.upper2)):
        family(name, (nx,), True, X - lo[:, None] * e, hi[:, None] * e - X)
    if spec.joint_available:
        lo, hi = spec.lower1[:, None], spec.upper1[:, None]
        s, d = X1 + X2, X2 - X1
        family("x_sum", (nx,), True, 2 * hi * e - s, s - 2 * lo * e)
        family("x_diff", (nx,), True, (hi - lo) * e - d, d + (hi - lo) * e)

    # ReLU
    family("comp1", (M,), False, Xi1 - P1, P1)
    family("comp2", (M,), False, Xi2 - P2, P2)
    family("pos1", (M,), True, P1, ones_m)
    family("pos2", (M,), True, P2, ones_m)
    family("cpos1", (M,), True, P1 - Xi1, ones_m)
    family("cpos2", (M,), True, P2 - Xi2, ones_m)
    outer_family("crx1", P1, P2 - Xi2)
    outer_family("crx2", P1 - Xi1, P2)
    outer_family("crx_phi", P1, P2)
    pairs = config.slope_pairs(M)
    if pairs.shape[0]:
        act = Activation.RELU.spec
        dxi = Xi1[pairs[:, 0]] - Xi2[pairs[:, 1]]
        dphi = P1[pairs[:, 0]] - P2[pairs[:, 1]]
        family("slope", (pairs.shape[0],), True, act.slope_upper * dxi - dphi, dphi - act.slope_lower * dxi)

    if spec.coupling is Coupling.QUANTISED:
        delta = spec.fmt.step
        low = X2 - X1 + delta * e
        up = X1 - X2 + delta * e
        family("q_sec", (nx,), True, X1 - X2, X2)
        family("q_low", (nx,), True, low, ones_x)
        family("q_up", (nx,), True, up, ones_x)
        family("q_quad", (nx,), True, low, up)
    return LMIAssembly(cf, spec, config, R, F0, blocks)


def numeric_lmi(nets, spec: InputSpec, mult: MultiplierSet, gammas: Gammas,
                config: ActivationQCConfig = ActivationQCConfig(),
                cf: Optional[CompactForm] = None) -> np.ndarray:
    """Sum of the four block-matrix builders, reduced by the coupling identification."""
    cf = cf or build_compact_form(*nets)
    A = (input_qc(cf, spec, mult).matrix + activation_qc(cf, nets, mult, config).matrix
         + quantisation_qc(cf, spec, mult).matrix + error_qc(cf, gammas).matrix)
    R = reduction_matrix(cf, spec)
    return R.T @ A @ R


# ---------------------------------------------------------------- certificate

STATUSES = ("optimal", "near_optimal", "infeasible", "numerical_failure")


def fingerprint(nets, spec: InputSpec, config: ActivationQCConfig = ActivationQCConfig()) -> str:
    payload = {"nets": [network_to_dict(n) for n in nets], "spec": spec.to_dict(), "slope": config.slope}
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


@dataclass
class BoundCertificate:
    gammas: Gammas
    weights: ObjectiveWeights
    multipliers: MultiplierSet
    lmi_max_eigenvalue: float
    status: str
    fingerprint: str
    eps: float = 1e-8
    backend: str = ""
    objective: float = float("nan")
    solve_time: float = 0.0
    slope: str = "none"
    raw_gammas: tuple = ()
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status in ("optimal", "near_optimal")

    def bound(self, X1, X2) -> np.ndarray:
        return self.gammas.bound(X1, X2)

    def to_dict(self) -> dict:
        return {
            "gamma_x1": self.gammas.x1, "gamma_x2": self.gammas.x2, "gamma_x": self.gammas.x,
            "gamma": self.gammas.affine,
            "weights": dict(zip(("w_x1", "w_x2", "w_x", "w_affine"), self.weights.as_tuple())),
            "status": self.status, "lmi_max_eigenvalue": self.lmi_max_eigenvalue,
            "fingerprint": self.fingerprint, "eps": self.eps, "backend": self.backend,
            "objective": self.objective, "solve_time": self.solve_time, "slope": self.slope,
            "raw_gammas": list(self.raw_gammas), "message": self.message,
            "multipliers": self.multipliers.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BoundCertificate":
        if data.get("status") not in STATUSES:
            raise ValueError(f"unknown certificate status {data.get('status')!r}")
        return cls(
            Gammas(float(data["gamma_x1"]), float(data["gamma_x2"]), float(data["gamma_x"]), float(data["gamma"])),
            ObjectiveWeights(**data["weights"]), MultiplierSet.from_dict(data["multipliers"]),
            float(data["lmi_max_eigenvalue"]), data["status"], data["fingerprint"],
            float(data.get("eps", 1e-8)), data.get("backend", ""), float(data.get("objective", np.nan)),
            float(data.get("solve_time", 0.0)), data.get("slope", "none"), tuple(data.get("raw_gammas", ())),
            data.get("message", ""))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "BoundCertificate":
        return cls.from_dict(json.loads(Path(path).read_text()))


def solve(nets: tuple[NeuralNetwork, NeuralNetwork], spec: InputSpec,
          weights: ObjectiveWeights = ObjectiveWeights(),
          options: SolverOptions = SolverOptions()) -> BoundCertificate:
    """Minimise the weighted bound coefficients subject to the LMI."""
    asm = assemble_lmi(nets, spec, options.activation)
    fp = fingerprint(nets, spec, options.activation)
    eps = options.eps
    t0 = time.perf_counter()
    while True:
        problem, layout = asm.to_conic(weights, eps)
        result = solve_conic(problem, options.settings())
        cert = _certificate_from(result, asm, layout, nets, spec, weights, options, eps, fp)
        if cert.ok or result.status == "infeasible" or eps >= options.max_eps:
            break
        miss = cert.lmi_max_eigenvalue + eps if np.isfinite(cert.lmi_max_eigenvalue) else 0.0
        eps = min(options.max_eps, max(100 * eps, 10 * miss))
    cert.solve_time = time.perf_counter() - t0
    return cert


def _certificate_from(result, asm: LMIAssembly, layout, nets, spec, weights, options, eps, fp) -> BoundCertificate:
    base = dict(weights=weights, fingerprint=fp, eps=eps, backend=result.backend,
                objective=result.objective, slope=options.activation.slope)
    if result.status in ("infeasible", "numerical_failure") or not np.all(np.isfinite(result.x)):
        return BoundCertificate(Gammas(), multipliers=MultiplierSet.zeros(asm.cf.n_x, asm.cf.M, asm.n_slope),
                                lmi_max_eigenvalue=float("nan"), status=result.status,
                                message=f"solver returned {result.raw_status}", **base)
    mult, raw = asm.unpack_solution(result.x, layout)
    mult = mult.clip_signs()
    gammas = Gammas(*(max(g, 0.0) for g in raw.as_tuple()))
    lmax = float(np.linalg.eigvalsh(numeric_lmi(nets, spec, mult, gammas, options.activation, asm.cf)).max())
    status, msg = result.status, ""
    if min(raw.as_tuple()) < -NEG_GAMMA_TOL:
        # each gamma multiplies a negative semidefinite matrix, so raising it to 0
        # keeps the LMI negative definite; lmax above is computed after clamping
        msg = f"clamped slightly negative solver values {raw.as_tuple()}"
    if not lmax < 0:
        status, msg = "numerical_failure", f"LMI not negative definite (max eigenvalue {lmax:.3e}) at eps={eps:g}"
    return BoundCertificate(gammas, multipliers=mult, lmi_max_eigenvalue=lmax, status=status,
                            raw_gammas=raw.as_tuple(), message=msg, **base)


@dataclass
class Violation:
    kind: str  # fingerprint | status | sign | gamma | lmi | pointwise
    detail: str
    witness: Optional[tuple] = None


@dataclass
class CertificateReport:
    valid: bool
    lmi_max_eigenvalue: float
    max_excess: float  # max over samples of error^2 - bound
    n_samples: int
    violations: list[Violation]

    def summary(self) -> str:
        head = "valid" if self.valid else f"INVALID ({len(self.violations)} violation(s))"
        lines = [f"{head}: lmi_max_eigenvalue={self.lmi_max_eigenvalue:.3e}, "
                 f"max(error^2 - bound)={self.max_excess:.3e} over {self.n_samples} samples"]
        lines += [f"  [{v.kind}] {v.detail}" for v in self.violations]
        return "\n".join(lines)


def check_certificate(cert: BoundCertificate, nets, spec: InputSpec, n_samples: int = 10_000,
                      seed: int = 0, tol: float = 1e-7) -> CertificateReport:
    """Independent validation: signs, LMI negativity (re-assembled), pointwise bound on samples."""
    config = ActivationQCConfig(cert.slope)
    violations = []
    if cert.fingerprint != fingerprint(nets, spec, config):
        violations.append(Violation("fingerprint", "certificate was issued for different networks or input set"))
    if not cert.ok:
        violations.append(Violation("status", f"solver status {cert.status}: {cert.message}"))
    for name, idx, val in cert.multipliers.sign_violations():
        violations.append(Violation("sign", f"multiplier {name}{list(idx)} = {val:.3e} < 0"))
    g = cert.gammas
    for name, val in zip(GAMMA_NAMES, g.as_tuple()):
        if val < 0:
            violations.append(Violation("gamma", f"gamma_{name} = {val:.3e} < 0"))
    lmax = float("nan")
    try:
        clipped = Gammas(*(max(v, 0.0) for v in g.as_tuple()))
        A = numeric_lmi(nets, spec, cert.multipliers.clip_signs(), clipped, config)
        lmax = float(np.linalg.eigvalsh(A).max())
    except QCError as err:
        violations.append(Violation("lmi", f"cannot assemble LMI: {err}"))
    if not lmax < 0:
        violations.append(Violation("lmi", f"re-assembled LMI has max eigenvalue {lmax:.3e} >= 0"))

    rng = np.random.default_rng(seed)
    X1, X2 = spec.sample(rng, n_samples)
    corners = _box_corners(spec)
    if corners is not None:
        X1, X2 = np.vstack([X1, corners[0]]), np.vstack([X2, corners[1]])
    err = np.sum((forward(nets[0], X1) - forward(nets[1], X2)) ** 2, axis=1)
    excess = err - g.bound(X1, X2)
    worst = int(np.argmax(excess))
    n_bad = int(np.sum(excess > tol))
    if n_bad:
        violations.append(Violation(
            "pointwise", f"{n_bad} sample(s) exceed the bound; worst error^2 - bound = {excess[worst]:.3e}",
            (X1[worst].tolist(), X2[worst].tolist())))
    return CertificateReport(not violations, lmax, float(excess[worst]), X1.shape[0], violations)


def _box_corners(spec: InputSpec):
    n = spec.n_x
    if n > 8:
        return None
    bits = np.array(np.meshgrid(*[[0, 1]] * n, indexing="ij")).reshape(n, -1).T
    C1 = np.where(bits, spec.upper1, spec.lower1)
    if spec.coupling is Coupling.INDEPENDENT:
        C2 = np.where(bits, spec.upper2, spec.lower2)
        i, j = np.meshgrid(np.arange(len(C1)), np.arange(len(C2)), indexing="ij")
        return C1[i.ravel()], C2[j.ravel()]
    return C1, spec.couple(C1)
