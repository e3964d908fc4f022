"""Quadratic constraints in eta coordinates.

Every builder returns a symmetric matrix ``P`` such that ``eta @ P @ eta`` is
non-negative along genuine forward passes (input, activation, quantisation),
or equals ``||f1 - f2||^2 - bound`` (error form).  All builders are linear in
their multiplier arguments.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .network import Activation, CompactForm, NeuralNetwork
from .transforms import FixedPointFormat, quantize


class QCError(ValueError):
    pass


class Coupling(enum.Enum):
    INDEPENDENT = "independent"
    QUANTISED = "quantised"  # x2 = q(x1)
    IDENTICAL = "identical"  # x2 = x1


@dataclass(frozen=True, eq=False)
class InputSpec:
    lower1: np.ndarray
    upper1: np.ndarray
    lower2: np.ndarray
    upper2: np.ndarray
    coupling: Coupling = Coupling.INDEPENDENT
    fmt: Optional[FixedPointFormat] = None

    def __post_init__(self):
        for name in ("lower1", "upper1", "lower2", "upper2"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        object.__setattr__(self, "coupling", Coupling(self.coupling))
        n = self.lower1.shape[0]
        if any(getattr(self, f).shape != (n,) for f in ("upper1", "lower2", "upper2")):
            raise QCError("all bound vectors must have the same length")
        if np.any(self.lower1 > self.upper1) or np.any(self.lower2 > self.upper2):
            raise QCError("lower bound exceeds upper bound")
        if self.coupling is Coupling.QUANTISED:
            if self.fmt is None:
                raise QCError("quantised coupling requires a fixed-point format")
            # q is monotone, so x2 = q(x1) ranges over [q(lower1), q(upper1)]
            if np.any(quantize(self.lower1, self.fmt) < self.lower2) or \
                    np.any(quantize(self.upper1, self.fmt) > self.upper2):
                raise QCError("box of network 2 does not contain q(box of network 1)")
        if self.coupling is Coupling.IDENTICAL and not self.joint_available:
            raise QCError("identical coupling requires equal boxes")

    @classmethod
    def box(cls, n_x: int, lower=-1.0, upper=1.0, coupling=Coupling.INDEPENDENT,
            fmt: Optional[FixedPointFormat] = None) -> "InputSpec":
        lo = np.broadcast_to(np.asarray(lower, dtype=float), (n_x,)).copy()
        hi = np.broadcast_to(np.asarray(upper, dtype=float), (n_x,)).copy()
        return cls(lo, hi, lo.copy(), hi.copy(), coupling, fmt)

    @property
    def n_x(self) -> int:
        return self.lower1.shape[0]

    @property
    def joint_available(self) -> bool:
        return bool(np.array_equal(self.lower1, self.lower2) and np.array_equal(self.upper1, self.upper2))

    def couple(self, X1: np.ndarray) -> np.ndarray:
        """Second input implied by the coupling (independent coupling has none)."""
        if self.coupling is Coupling.QUANTISED:
            return quantize(X1, self.fmt)
        if self.coupling is Coupling.IDENTICAL:
            return np.array(X1, dtype=float)
        raise QCError("independent coupling does not determine x2")

    def sample(self, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
        X1 = rng.uniform(self.lower1, self.upper1, size=(n, self.n_x))
        if self.coupling is Coupling.INDEPENDENT:
            X2 = rng.uniform(self.lower2, self.upper2, size=(n, self.n_x))
        else:
            X2 = self.couple(X1)
        return X1, X2

    def contains(self, X1, X2, atol: float = 0.0) -> np.ndarray:
        X1, X2 = np.atleast_2d(X1), np.atleast_2d(X2)
        ok = np.all((X1 >= self.lower1 - atol) & (X1 <= self.upper1 + atol), axis=1)
        ok &= np.all((X2 >= self.lower2 - atol) & (X2 <= self.upper2 + atol), axis=1)
        if self.coupling is not Coupling.INDEPENDENT:
            ok &= np.all(np.abs(X2 - self.couple(X1)) <= atol, axis=1)
        return ok

    def to_dict(self) -> dict:
        out = {"lower1": self.lower1.tolist(), "upper1": self.upper1.tolist(),
               "lower2": self.lower2.tolist(), "upper2": self.upper2.tolist(),
               "coupling": self.coupling.value}
        if self.fmt is not None:
            out["fmt"] = self.fmt.to_dict()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "InputSpec":
        fmt = FixedPointFormat.from_dict(data["fmt"]) if data.get("fmt") else None
        return cls(data["lower1"], data["upper1"], data["lower2"], data["upper2"],
                   Coupling(data.get("coupling", "independent")), fmt)


@dataclass(frozen=True)
class ActivationQCConfig:
    """Which optional activation QC families enter the LMI.

    ``slope`` adds slope-restriction constraints between neurons of the two
    networks: ``"none"``, ``"same_index"`` (neuron a of net 1 against neuron a of
    net 2) or ``"all_cross"`` (every pair across the two networks).
    """
    slope: str = "none"

    def __post_init__(self):
        if self.slope not in ("none", "same_index", "all_cross"):
            raise QCError(f"unknown slope pairing {self.slope!r}")

    def slope_pairs(self, M: int) -> np.ndarray:
        if self.slope == "none":
            return np.zeros((0, 2), dtype=int)
        if self.slope == "same_index":
            return np.stack([np.arange(M), np.arange(M)], axis=1)
        a, b = np.meshgrid(np.arange(M), np.arange(M), indexing="ij")
        return np.stack([a.ravel(), b.ravel()], axis=1)


# ---------------------------------------------------------------- multipliers

_NX, _M, _MM, _P = "n_x", "M", "MxM", "P"


@dataclass(eq=False)
class MultiplierSet:
    """Scaling variables of every QC family.

    Activation cross terms (all entries non-negative)::

        crx1[a, b]    : phi1_a * (phi2_b - xi2_b) >= 0
        crx2[a, b]    : (phi1_a - xi1_a) * phi2_b >= 0
        crx_phi[a, b] : phi1_a * phi2_b >= 0

    ``comp1``/``comp2`` scale the ReLU complementarity equality and are sign-free.
    """
    x_inf1: np.ndarray
    x_inf2: np.ndarray
    x_sum: np.ndarray
    x_diff: np.ndarray
    comp1: np.ndarray
    comp2: np.ndarray
    pos1: np.ndarray
    pos2: np.ndarray
    cpos1: np.ndarray
    cpos2: np.ndarray
    crx1: np.ndarray
    crx2: np.ndarray
    crx_phi: np.ndarray
    slope: np.ndarray
    q_sec: np.ndarray
    q_low: np.ndarray
    q_up: np.ndarray
    q_quad: np.ndarray

    SHAPES = {
        "x_inf1": _NX, "x_inf2": _NX, "x_sum": _NX, "x_diff": _NX,
        "comp1": _M, "comp2": _M, "pos1": _M, "pos2": _M, "cpos1": _M, "cpos2": _M,
        "crx1": _MM, "crx2": _MM, "crx_phi": _MM, "slope": _P,
        "q_sec": _NX, "q_low": _NX, "q_up": _NX, "q_quad": _NX,
    }
    FREE = frozenset({"comp1", "comp2"})

    @staticmethod
    def shape_of(name: str, n_x: int, M: int, n_slope: int = 0) -> tuple[int, ...]:
        kind = MultiplierSet.SHAPES[name]
        return {_NX: (n_x,), _M: (M,), _MM: (M, M), _P: (n_slope,)}[kind]

    @classmethod
    def zeros(cls, n_x: int, M: int, n_slope: int = 0) -> "MultiplierSet":
        return cls(**{f: np.zeros(cls.shape_of(f, n_x, M, n_slope)) for f in cls.SHAPES})

    @classmethod
    def random(cls, rng: np.random.Generator, n_x: int, M: int, n_slope: int = 0,
               scale: float = 1.0) -> "MultiplierSet":
        """Sign-feasible random draw (exponential magnitudes, random sign on free fields)."""
        out = {}
        for f in cls.SHAPES:
            shape = cls.shape_of(f, n_x, M, n_slope)
            v = rng.exponential(scale, size=shape)
            if f in cls.FREE:
                v *= rng.choice((-1.0, 1.0), size=shape)
            out[f] = v
        return cls(**out)

    @property
    def n_x(self) -> int:
        return self.x_inf1.shape[0]

    @property
    def M(self) -> int:
        return self.comp1.shape[0]

    def check_shapes(self, n_x: int, M: int) -> None:
        """Shape check of every family except ``slope``, whose length depends on the config."""
        for f in self.SHAPES:
            if f == "slope":
                continue
            v = getattr(self, f)
            if v.shape != self.shape_of(f, n_x, M):
                raise QCError(f"multiplier {f} has shape {v.shape}, expected {self.shape_of(f, n_x, M)}")

    def sign_violations(self, tol: float = 0.0) -> list[tuple[str, tuple, float]]:
        bad = []
        for f in self.SHAPES:
            if f in self.FREE:
                continue
            v = getattr(self, f)
            for idx in np.argwhere(v < -tol):
                idx = tuple(int(i) for i in idx)
                bad.append((f, idx, float(v[idx])))
        return bad

    def clip_signs(self) -> "MultiplierSet":
        return MultiplierSet(**{f: (getattr(self, f) if f in self.FREE else np.maximum(getattr(self, f), 0.0))
                                for f in self.SHAPES})

    def scaled(self, alpha: float) -> "MultiplierSet":
        return MultiplierSet(**{f: alpha * getattr(self, f) for f in self.SHAPES})

    def __add__(self, other: "MultiplierSet") -> "MultiplierSet":
        return MultiplierSet(**{f: getattr(self, f) + getattr(other, f) for f in self.SHAPES})

    def to_dict(self) -> dict:
        return {f: getattr(self, f).tolist() for f in self.SHAPES}

    @classmethod
    def from_dict(cls, data: dict) -> "MultiplierSet":
        return cls(**{f: np.asarray(data[f], dtype=float) for f in cls.SHAPES})


# ---------------------------------------------------------------- forms

@dataclass(frozen=True, eq=False)
class QuadraticForm:
    matrix: np.ndarray
    tag: str

    def __post_init__(self):
        A = np.asarray(self.matrix, dtype=float)
        object.__setattr__(self, "matrix", (A + A.T) / 2)

    def value(self, eta: np.ndarray) -> float:
        return float(eta @ self.matrix @ eta)

    def values(self, etas: np.ndarray) -> np.ndarray:
        return np.einsum("ni,ij,nj->n", etas, self.matrix, etas)

    def __add__(self, other: "QuadraticForm") -> "QuadraticForm":
        return QuadraticForm(self.matrix + other.matrix, f"{self.tag}+{other.tag}")


def _sym_bilinear(A: np.ndarray, L: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Symmetric matrix of the bilinear form (A z)^T L (B z)."""
    G = A.T @ L @ B
    return (G + G.T) / 2


def _embed(cf: CompactForm, small: np.ndarray, blocks) -> np.ndarray:
    """Lift a form written in [x_blocks..., 1] coordinates into eta coordinates."""
    S = np.vstack([*(cf.x_rows(i) for i in blocks), cf.const_row()])
    return S.T @ small @ S


def _require_nonneg(mult: MultiplierSet, names) -> None:
    for name in names:
        if np.any(getattr(mult, name) < 0):
            raise QCError(f"multiplier {name} has negative entries")


def input_qc(cf: CompactForm, spec: InputSpec, mult: MultiplierSet) -> QuadraticForm:
    _require_nonneg(mult, ("x_inf1", "x_inf2", "x_sum", "x_diff"))
    n = cf.n_x
    P = np.zeros((cf.eta_dim, cf.eta_dim))
    for i, lam, lo, hi in ((1, mult.x_inf1, spec.lower1, spec.upper1),
                           (2, mult.x_inf2, spec.lower2, spec.upper2)):
        small = np.zeros((n + 1, n + 1))
        small[:n, :n] = -np.diag(lam)
        small[:n, n] = small[n, :n] = lam * (lo + hi) / 2
        small[n, n] = -lo @ (lam * hi)
        P += _embed(cf, small, (i,))
    if np.any(mult.x_sum) or np.any(mult.x_diff):
        if not spec.joint_available:
            raise QCError("joint input QC needs identical boxes for both networks")
        lo, hi = spec.lower1, spec.upper1
        eye = np.eye(n)
        # rows act on [x1; x2; 1]
        left = np.block([[-eye, -eye, (2 * hi)[:, None]],
                         [eye, -eye, (hi - lo)[:, None]]])
        right = np.block([[eye, eye, (-2 * lo)[:, None]],
                          [-eye, eye, (hi - lo)[:, None]]])
        lam = np.diag(np.concatenate([mult.x_sum, mult.x_diff]))
        P += _embed(cf, _sym_bilinear(left, lam, right), (1, 2))
    return QuadraticForm(P, "input")


def build_lambda(cf: CompactForm, mult: MultiplierSet,
                 config: ActivationQCConfig = ActivationQCConfig()) -> np.ndarray:
    """ReLU multiplier matrix in mu coordinates (5 x 5 block layout)."""
    M = cf.M
    mult.check_shapes(cf.n_x, M)
    _require_nonneg(mult, ("pos1", "pos2", "cpos1", "cpos2", "crx1", "crx2", "crx_phi", "slope"))
    L = np.zeros((4 * M + 1, 4 * M + 1))
    b1, b2, b3, b4 = (slice(k * M, (k + 1) * M) for k in range(4))
    c = 4 * M

    def put(rows, cols, block):
        L[rows, cols] += block
        L[cols, rows] += np.asarray(block).T

    # off-diagonal blocks carry half of each bilinear term, so mu^T L mu
    # reproduces the constraint exactly
    put(b1, b3, np.diag(mult.comp1) / 2)
    L[b3, b3] -= np.diag(mult.comp1)
    put(b2, b4, np.diag(mult.comp2) / 2)
    L[b4, b4] -= np.diag(mult.comp2)
    put(b1, b4, -mult.crx2 / 2)
    put(b2, b3, -mult.crx1.T / 2)
    put(b3, b4, (mult.crx_phi + mult.crx1 + mult.crx2) / 2)
    put(b3, slice(c, c + 1), ((mult.pos1 + mult.cpos1) / 2)[:, None])
    put(b4, slice(c, c + 1), ((mult.pos2 + mult.cpos2) / 2)[:, None])
    put(b1, slice(c, c + 1), (-mult.cpos1 / 2)[:, None])
    put(b2, slice(c, c + 1), (-mult.cpos2 / 2)[:, None])

    pairs = config.slope_pairs(M)
    if mult.slope.shape[0] != pairs.shape[0]:
        raise QCError(f"slope multiplier has {mult.slope.shape[0]} entries, config needs {pairs.shape[0]}")
    if pairs.shape[0]:
        spec = Activation.RELU.spec
        I = np.eye(4 * M + 1)
        for lam, (a, b) in zip(mult.slope, pairs):
            dxi = I[a] - I[M + b]
            dphi = I[2 * M + a] - I[3 * M + b]
            left = spec.slope_upper * dxi - dphi
            right = dphi - spec.slope_lower * dxi
            L += lam * (np.outer(left, right) + np.outer(right, left)) / 2
    return L


def activation_qc(cf: CompactForm, nets: tuple[NeuralNetwork, NeuralNetwork], mult: MultiplierSet,
                  config: ActivationQCConfig = ActivationQCConfig()) -> QuadraticForm:
    for net in nets:
        if net.activation is not Activation.RELU:
            raise QCError(f"activation QCs are implemented for ReLU only, got {net.activation.value}")
    Lam = build_lambda(cf, mult, config)
    return QuadraticForm(cf.E.T @ Lam @ cf.E, "activation")


def quantisation_qc(cf: CompactForm, spec: InputSpec, mult: MultiplierSet) -> QuadraticForm:
    if spec.coupling is not Coupling.QUANTISED:
        return QuadraticForm(np.zeros((cf.eta_dim, cf.eta_dim)), "quantisation")
    if spec.fmt is None:
        raise QCError("quantised coupling without a fixed-point format")
    _require_nonneg(mult, ("q_sec", "q_low", "q_up", "q_quad"))
    n, delta = cf.n_x, spec.fmt.step
    eye, zc = np.eye(n), np.zeros((n, 1))
    one = np.zeros((1, 2 * n + 1))
    one[0, -1] = 1.0
    # affine maps of [x1; x2; 1]; x2 stands for q(x1)
    x2 = np.hstack([0 * eye, eye, zc])
    gap = np.hstack([eye, -eye, zc])                          # x1 - q(x1)
    low = np.hstack([-eye, eye, np.full((n, 1), delta)])     # q(x1) - x1 + delta
    up = np.hstack([eye, -eye, np.full((n, 1), delta)])      # x1 + delta - q(x1)
    ones = np.repeat(one, n, axis=0)
    small = (_sym_bilinear(gap, np.diag(mult.q_sec), x2)
             + _sym_bilinear(low, np.diag(mult.q_low), ones)
             + _sym_bilinear(up, np.diag(mult.q_up), ones)
             + _sym_bilinear(low, np.diag(mult.q_quad), up))
    return QuadraticForm(_embed(cf, small, (1, 2)), "quantisation")


@dataclass(frozen=True)
class Gammas:
    x1: float = 0.0
    x2: float = 0.0
    x: float = 0.0
    affine: float = 0.0

    def bound(self, X1, X2) -> np.ndarray:
        X1, X2 = np.atleast_2d(X1), np.atleast_2d(X2)
        return (self.affine + self.x1 * np.sum(X1 ** 2, axis=1) + self.x2 * np.sum(X2 ** 2, axis=1)
                + self.x * np.sum((X1 - X2) ** 2, axis=1))

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.x2, self.x, self.affine)


def error_matrix_gamma(cf: CompactForm, g: Gammas) -> np.ndarray:
    """The middle matrix of the error form, acting on [x1; x2; f1; f2; 1]."""
    n, nf = cf.n_x, cf.n_f
    Ix, If = np.eye(n), np.eye(nf)
    G = np.zeros((2 * n + 2 * nf + 1,) * 2)
    G[:2 * n, :2 * n] = -np.block([[(g.x1 + g.x) * Ix, -g.x * Ix],
                                    [-g.x * Ix, (g.x2 + g.x) * Ix]])
    G[2 * n:2 * n + 2 * nf, 2 * n:2 * n + 2 * nf] = np.block([[If, -If], [-If, If]])
    G[-1, -1] = -g.affine
    return G


def error_qc(cf: CompactForm, gammas: Gammas) -> QuadraticForm:
    if min(gammas.as_tuple()) < 0:
        raise QCError("bound coefficients must be non-negative")
    return QuadraticForm(cf.V.T @ error_matrix_gamma(cf, gammas) @ cf.V, "error")
