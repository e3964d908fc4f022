"""Empirical checks of certified bounds: tightness and worst-case search."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .network import NeuralNetwork, forward
from .qc import Coupling, Gammas, InputSpec

SOUNDNESS_TOL = 1e-7


class SoundnessViolation(RuntimeError):
    """A sampled error exceeds the certified bound."""


@dataclass(frozen=True)
class TightnessSample:
    x1: np.ndarray
    x2: np.ndarray
    error_sq: float
    bound_value: float
    T: float  # ln(error^2) - ln(bound); -inf where the error vanishes

    @property
    def log_gap(self) -> float:
        return -self.T


def squared_error(nets, X1, X2) -> np.ndarray:
    return np.sum((forward(nets[0], X1) - forward(nets[1], X2)) ** 2, axis=1)


def log_tightness(error_sq: np.ndarray, bound: np.ndarray, tol: float = SOUNDNESS_TOL) -> np.ndarray:
    """Elementwise ln(error^2) - ln(bound); raises if the bound is exceeded."""
    error_sq, bound = np.asarray(error_sq, float), np.asarray(bound, float)
    excess = error_sq - bound
    if np.any(excess > tol):
        k = int(np.argmax(excess))
        raise SoundnessViolation(f"error^2 {error_sq.flat[k]:.6g} exceeds bound {bound.flat[k]:.6g}")
    T = np.full(error_sq.shape, -np.inf)
    pos = error_sq > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        T[pos] = np.log(error_sq[pos]) - np.log(bound[pos])
    return T


def tightness(cert, nets, x1, x2, tol: float = SOUNDNESS_TOL) -> TightnessSample:
    gammas: Gammas = cert.gammas if hasattr(cert, "gammas") else cert
    x1, x2 = np.atleast_1d(np.asarray(x1, float)), np.atleast_1d(np.asarray(x2, float))
    err = float(squared_error(nets, x1[None], x2[None])[0])
    bound = float(gammas.bound(x1, x2)[0])
    if bound <= 0 and err > 0:
        raise SoundnessViolation(f"non-positive bound {bound} with error^2 {err}")
    T = float(log_tightness(np.array([err]), np.array([bound]), tol)[0])
    return TightnessSample(x1, x2, err, bound, T)


def finite_stats(T: np.ndarray) -> dict:
    """Mean/max/min of the finite entries plus the count of -inf sentinels."""
    fin = T[np.isfinite(T)]
    if fin.size == 0:
        return {"mean_T": float("nan"), "max_T": float("nan"), "min_T": float("nan"), "n_neg_inf": int(T.size)}
    return {"mean_T": float(fin.mean()), "max_T": float(fin.max()), "min_T": float(fin.min()),
            "n_neg_inf": int(T.size - fin.size)}


# ---------------------------------------------------------------- worst case search

def input_grid(spec: InputSpec, resolution: int) -> tuple[np.ndarray, np.ndarray]:
    """Grid of admissible pairs: over x1 for coupled inputs, over (x1, x2) otherwise."""
    axes1 = [np.linspace(lo, hi, resolution) for lo, hi in zip(spec.lower1, spec.upper1)]
    if spec.coupling is Coupling.INDEPENDENT:
        axes2 = [np.linspace(lo, hi, resolution) for lo, hi in zip(spec.lower2, spec.upper2)]
        G = np.array(list(itertools.product(*axes1, *axes2)))
        return G[:, :spec.n_x], G[:, spec.n_x:]
    X1 = np.array(list(itertools.product(*axes1)))
    return X1, spec.couple(X1)


def brute_force_worst_error(nets: tuple[NeuralNetwork, NeuralNetwork], spec: InputSpec,
                            resolution: int = 100) -> tuple[float, tuple[np.ndarray, np.ndarray]]:
    free_dims = spec.n_x * (2 if spec.coupling is Coupling.INDEPENDENT else 1)
    if free_dims > 3:
        raise ValueError(f"grid search over {free_dims} free input dimensions is not supported (max 3)")
    if resolution < 100:
        raise ValueError("resolution must be at least 100 points per dimension")
    X1, X2 = input_grid(spec, resolution)
    err = squared_error(nets, X1, X2)
    k = int(np.argmax(err))
    return float(err[k]), (X1[k], X2[k])


def hill_climb_worst_error(nets, spec: InputSpec, rng: np.random.Generator, restarts: int = 100,
                           steps: int = 200, step0: float = 0.25) -> tuple[float, tuple[np.ndarray, np.ndarray]]:
    """Randomised local search for the largest squared error (restart, shrink step on failure)."""
    lo1, hi1, lo2, hi2 = spec.lower1, spec.upper1, spec.lower2, spec.upper2
    independent = spec.coupling is Coupling.INDEPENDENT
    best, best_pair = -np.inf, None
    for _ in range(restarts):
        X1, X2 = spec.sample(rng, 1)
        cur = squared_error(nets, X1, X2)[0]
        step = step0
        for _ in range(steps):
            Y1 = np.clip(X1 + rng.normal(scale=step * (hi1 - lo1), size=X1.shape), lo1, hi1)
            Y2 = np.clip(X2 + rng.normal(scale=step * (hi2 - lo2), size=X2.shape), lo2, hi2) \
                if independent else spec.couple(Y1)
            val = squared_error(nets, Y1, Y2)[0]
            if val > cur:
                X1, X2, cur = Y1, Y2, val
            else:
                step *= 0.97
        if cur > best:
            best, best_pair = float(cur), (X1[0], X2[0])
    return best, best_pair
