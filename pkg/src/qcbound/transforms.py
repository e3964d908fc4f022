"""Fixed-point quantisation and magnitude pruning of networks."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .network import NeuralNetwork


class SaturationError(ValueError):
    """Value lies outside the integer range of the fixed-point format."""


@dataclass(frozen=True)
class FixedPointFormat:
    integer_bits: int
    fraction_bits: int

    def __post_init__(self):
        if int(self.integer_bits) < 1 or int(self.fraction_bits) < 1:
            raise ValueError("integer_bits and fraction_bits must be positive")
        if self.fraction_bits > 52:
            raise ValueError("fraction_bits > 52 is not representable in binary64")

    @property
    def step(self) -> float:
        return 2.0 ** (-self.fraction_bits)

    @property
    def limit(self) -> float:
        return 2.0 ** (self.integer_bits - 1)

    @property
    def n_bits(self) -> int:
        return self.integer_bits + self.fraction_bits

    @classmethod
    def from_dict(cls, data: dict) -> "FixedPointFormat":
        return cls(int(data["IB"]), int(data["FB"]))

    def to_dict(self) -> dict:
        return {"IB": self.integer_bits, "FB": self.fraction_bits}


def quantize(s, fmt: FixedPointFormat) -> np.ndarray:
    """Round toward zero onto the grid of multiples of ``fmt.step`` (elementwise)."""
    s = np.asarray(s, dtype=float)
    bad = ~(np.abs(s) < fmt.limit)
    if np.any(bad):
        idx = tuple(int(i) for i in np.argwhere(bad)[0]) if s.ndim else ()
        raise SaturationError(
            f"value {s[idx] if s.ndim else float(s)} at index {idx} exceeds the "
            f"<{fmt.integer_bits},{fmt.fraction_bits}> range |s| < {fmt.limit}")
    # division by a power of two is exact, so floor sees the true quotient
    return np.sign(s) * np.floor(np.abs(s) / fmt.step) * fmt.step


def quantize_scalar(s: float, fmt: FixedPointFormat) -> float:
    return float(quantize(s, fmt))


def decode_fixed_point(bits: Sequence[int], fmt: FixedPointFormat) -> float:
    """Bits are MSB first: integer part (2^(IB-1) .. 2^0) then fraction (2^-1 .. 2^-FB)."""
    bits = [int(b) for b in bits]
    if len(bits) != fmt.n_bits:
        raise ValueError(f"expected {fmt.n_bits} bits, got {len(bits)}")
    if any(b not in (0, 1) for b in bits):
        raise ValueError("bits must be 0 or 1")
    ib = fmt.integer_bits
    whole = sum(b * 2 ** (ib - 1 - i) for i, b in enumerate(bits[:ib]))
    frac = sum(b * 2.0 ** -(j + 1) for j, b in enumerate(bits[ib:]))
    return float(whole + frac)


def encode_fixed_point(value: float, fmt: FixedPointFormat) -> list[int]:
    """Inverse of :func:`decode_fixed_point` for non-negative grid values."""
    if value < 0 or value >= 2 ** fmt.integer_bits:
        raise ValueError(f"{value} is not representable without a sign bit")
    ticks = value / fmt.step
    if ticks != np.floor(ticks):
        raise ValueError(f"{value} is not on the 2^-{fmt.fraction_bits} grid")
    n = int(ticks)
    return [(n >> (fmt.n_bits - 1 - i)) & 1 for i in range(fmt.n_bits)]


def quantize_network(net: NeuralNetwork, fmt: FixedPointFormat) -> NeuralNetwork:
    ws, bs = [], []
    for k, (W, b) in enumerate(zip(net.weights, net.biases)):
        try:
            ws.append(quantize(W, fmt))
        except SaturationError as err:
            raise SaturationError(f"layer {k} weights: {err}") from None
        try:
            bs.append(quantize(b, fmt))
        except SaturationError as err:
            raise SaturationError(f"layer {k} bias: {err}") from None
    return net.replace(ws, bs)


# ---------------------------------------------------------------- pruning

@dataclass(frozen=True)
class PruneSpec:
    count: Optional[int] = None
    threshold: Optional[float] = None
    norm: float = 2
    include_bias: bool = True

    def __post_init__(self):
        if (self.count is None) == (self.threshold is None):
            raise ValueError("give exactly one of count or threshold")
        if self.count is not None and self.count < 0:
            raise ValueError("count must be non-negative")
        if self.threshold is not None and self.threshold < 0:
            raise ValueError("threshold must be non-negative")

    @classmethod
    def from_dict(cls, data: dict) -> "PruneSpec":
        return cls(count=data.get("count"), threshold=data.get("threshold"),
                   norm=data.get("norm", 2), include_bias=data.get("include_bias", True))

    def to_dict(self) -> dict:
        out = {"norm": self.norm, "include_bias": self.include_bias}
        out.update({"count": self.count} if self.count is not None else {"threshold": self.threshold})
        return out


def neuron_scores(net: NeuralNetwork, norm: float = 2, include_bias: bool = True) -> np.ndarray:
    """p-norm of each hidden neuron's incoming weights (and bias), in xi order."""
    scores = []
    for W, b in zip(net.weights[:-1], net.biases[:-1]):
        rows = np.hstack([W, b[:, None]]) if include_bias else W
        scores.append(np.linalg.norm(rows, ord=norm, axis=1))
    return np.concatenate(scores)


def prune_network(net: NeuralNetwork, spec: PruneSpec) -> NeuralNetwork:
    M = net.n_neurons
    scores = neuron_scores(net, spec.norm, spec.include_bias)
    if spec.count is not None:
        if spec.count >= M:
            raise ValueError(f"cannot prune {spec.count} of {M} hidden neurons")
        # stable sort: ties go to the lowest index
        chosen = np.argsort(scores, kind="stable")[:spec.count]
    else:
        chosen = np.flatnonzero(scores < spec.threshold)
        if chosen.size >= M:
            raise ValueError("threshold would prune every hidden neuron")
    ws = [W.copy() for W in net.weights]
    bs = [b.copy() for b in net.biases]
    offsets = np.cumsum((0, *net.widths))
    for idx in chosen:
        k = int(np.searchsorted(offsets, idx, side="right") - 1)
        j = int(idx - offsets[k])
        ws[k][j, :] = 0.0
        bs[k][j] = 0.0
        ws[k + 1][:, j] = 0.0
    return net.replace(ws, bs)
