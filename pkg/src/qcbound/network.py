"""Feed-forward networks, forward evaluation and the compact (xi / mu / eta) form.

Coordinate conventions used across the package::

    mu  = [xi_1, xi_2, phi(xi_1), phi(xi_2), 1]        length 4M + 1
    eta = [x_1,  x_2,  phi(xi_1), phi(xi_2), 1]        length 2(n_x + M) + 1

``xi_i`` stacks the pre-activations of every hidden layer of network ``i``.
``mu`` is affine in ``eta``; the lifting matrix ``E`` satisfies ``mu = E @ eta``.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np


class ModelError(ValueError):
    """Malformed network description or dimension mismatch."""


@dataclass(frozen=True)
class ActivationSpec:
    # sector [0, sector_upper], slope in [slope_lower, slope_upper]
    sector_upper: float
    slope_lower: float
    slope_upper: float
    sector_bounded: bool
    slope_restricted: bool
    bounded: bool
    positive: bool
    positive_complement: bool
    complementarity: bool


class Activation(enum.Enum):
    RELU = "relu"
    SIGMOID = "sigmoid"  # shifted logistic sigma(s) - 1/2, so that phi(0) = 0
    TANH = "tanh"
    ELU = "elu"
    SATURATION = "saturation"

    @classmethod
    def parse(cls, tag: str) -> "Activation":
        try:
            return cls(str(tag).strip().lower())
        except ValueError:
            raise ModelError(f"unknown activation {tag!r}") from None

    @property
    def spec(self) -> ActivationSpec:
        return _ACTIVATION_SPECS[self]

    def __call__(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        if self is Activation.RELU:
            return np.maximum(s, 0.0)
        if self is Activation.SIGMOID:
            return 1.0 / (1.0 + np.exp(-s)) - 0.5
        if self is Activation.TANH:
            return np.tanh(s)
        if self is Activation.ELU:
            return np.where(s > 0, s, np.expm1(np.minimum(s, 0.0)))
        return np.clip(s, -1.0, 1.0)


_ACTIVATION_SPECS = {
    Activation.RELU: ActivationSpec(1.0, 0.0, 1.0, True, True, False, True, True, True),
    Activation.SIGMOID: ActivationSpec(0.25, 0.0, 0.25, True, True, True, False, False, False),
    Activation.TANH: ActivationSpec(1.0, 0.0, 1.0, True, True, True, False, False, False),
    Activation.ELU: ActivationSpec(1.0, 0.0, 1.0, True, True, False, False, False, False),
    Activation.SATURATION: ActivationSpec(1.0, 0.0, 1.0, True, True, True, False, False, False),
}


@dataclass(frozen=True, eq=False)
class NeuralNetwork:
    """Layers ``(W^k, b^k)`` for k = 0..l; the last pair is the affine output layer."""

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    activation: Activation = Activation.RELU

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ModelError("number of weight matrices and bias vectors differ")
        if len(self.weights) < 2:
            raise ModelError("network needs at least one hidden layer")
        ws, bs = [], []
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            W = np.array(W, dtype=float)
            b = np.array(b, dtype=float).reshape(-1)
            if W.ndim != 2:
                raise ModelError(f"layer {k}: weight matrix must be 2-D, got shape {W.shape}")
            if W.shape[0] != b.shape[0]:
                raise ModelError(
                    f"layer {k}: weight matrix has {W.shape[0]} rows but bias has {b.shape[0]} entries")
            if k > 0 and W.shape[1] != ws[-1].shape[0]:
                raise ModelError(
                    f"layer {k}: expects {W.shape[1]} inputs but layer {k - 1} has {ws[-1].shape[0]} outputs")
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise ModelError(f"layer {k}: non-finite parameters")
            W.setflags(write=False)
            b.setflags(write=False)
            ws.append(W)
            bs.append(b)
        object.__setattr__(self, "weights", tuple(ws))
        object.__setattr__(self, "biases", tuple(bs))
        if not isinstance(self.activation, Activation):
            object.__setattr__(self, "activation", Activation.parse(self.activation))

    @property
    def n_hidden_layers(self) -> int:
        return len(self.weights) - 1

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def widths(self) -> tuple[int, ...]:
        """Hidden layer widths n_1..n_l."""
        return tuple(W.shape[0] for W in self.weights[:-1])

    @property
    def n_neurons(self) -> int:
        return sum(self.widths)

    def same_architecture(self, other: "NeuralNetwork") -> bool:
        return (self.input_dim == other.input_dim and self.output_dim == other.output_dim
                and self.widths == other.widths)

    def replace(self, weights=None, biases=None) -> "NeuralNetwork":
        return NeuralNetwork(tuple(self.weights if weights is None else weights),
                             tuple(self.biases if biases is None else biases), self.activation)

    def __eq__(self, other):
        if not isinstance(other, NeuralNetwork):
            return NotImplemented
        return (self.activation is other.activation
                and len(self.weights) == len(other.weights)
                and all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights))
                and all(np.array_equal(a, b) for a, b in zip(self.biases, other.biases)))

    __hash__ = None


class Trace(NamedTuple):
    output: np.ndarray
    activations: list  # x^1..x^l (post-activation)
    preactivations: list  # xi^1..xi^l


def evaluate(net: NeuralNetwork, x) -> Trace:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != net.input_dim:
        raise ModelError(f"layer 0: input has dimension {x.shape[0]}, expected {net.input_dim}")
    acts, pres = [], []
    h = x
    for W, b in zip(net.weights[:-1], net.biases[:-1]):
        xi = W @ h + b
        h = net.activation(xi)
        pres.append(xi)
        acts.append(h)
    out = net.weights[-1] @ h + net.biases[-1]
    return Trace(out, acts, pres)


def forward(net: NeuralNetwork, X) -> np.ndarray:
    """Batched forward pass; ``X`` has shape (batch, n_x), returns (batch, n_f)."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None] if net.input_dim == 1 else X[None, :]
    if X.shape[-1] != net.input_dim:
        raise ModelError(f"layer 0: input has dimension {X.shape[-1]}, expected {net.input_dim}")
    H = X
    for W, b in zip(net.weights[:-1], net.biases[:-1]):
        H = net.activation(H @ W.T + b)
    return H @ net.weights[-1].T + net.biases[-1]


INITS = ("unit", "fan_in")


def random_network(rng: np.random.Generator, input_dim: int, widths: Sequence[int],
                   output_dim: int, activation=Activation.RELU, init: str = "unit") -> NeuralNetwork:
    """i.i.d. normal weights and biases.

    ``init="unit"`` draws N(0, 1); ``init="fan_in"`` scales each layer by 1/sqrt(fan-in),
    which keeps output magnitudes roughly depth independent.
    """
    if init not in INITS:
        raise ValueError(f"unknown init {init!r}, expected one of {INITS}")
    dims = [input_dim, *widths, output_dim]
    ws, bs = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        scale = 1.0 / np.sqrt(fan_in) if init == "fan_in" else 1.0
        ws.append(rng.standard_normal((fan_out, fan_in)) * scale)
        bs.append(rng.standard_normal(fan_out) * scale)
    return NeuralNetwork(tuple(ws), tuple(bs), Activation(activation))


# ---------------------------------------------------------------- compact form

@dataclass(frozen=True, eq=False)
class CompactForm:
    n_x: int
    n_f: int
    widths: tuple[int, ...]
    E: np.ndarray  # (4M+1, 2(n_x+M)+1)
    V: np.ndarray  # (2 n_x + 2 n_f + 1, 2(n_x+M)+1)
    offsets: tuple[int, ...] = field(default=())  # start of each hidden layer inside xi

    @property
    def M(self) -> int:
        return sum(self.widths)

    @property
    def eta_dim(self) -> int:
        return 2 * (self.n_x + self.M) + 1

    @property
    def mu_dim(self) -> int:
        return 4 * self.M + 1

    # index helpers into eta
    def x_slice(self, i: int) -> slice:
        return slice((i - 1) * self.n_x, i * self.n_x)

    def phi_slice(self, i: int) -> slice:
        start = 2 * self.n_x + (i - 1) * self.M
        return slice(start, start + self.M)

    @property
    def const_index(self) -> int:
        return self.eta_dim - 1

    def neuron_index(self, layer: int, neuron: int) -> int:
        """Position of hidden neuron ``neuron`` of layer ``layer`` (1-based layer) inside xi."""
        if not 1 <= layer <= len(self.widths) or not 0 <= neuron < self.widths[layer - 1]:
            raise IndexError((layer, neuron))
        return self.offsets[layer - 1] + neuron

    # selector rows in eta coordinates
    def x_rows(self, i: int) -> np.ndarray:
        return np.eye(self.eta_dim)[self.x_slice(i)]

    def phi_rows(self, i: int) -> np.ndarray:
        return np.eye(self.eta_dim)[self.phi_slice(i)]

    def xi_rows(self, i: int) -> np.ndarray:
        return self.E[(i - 1) * self.M:i * self.M]

    def const_row(self) -> np.ndarray:
        e = np.zeros(self.eta_dim)
        e[-1] = 1.0
        return e

    def eta(self, x1, x2, trace1: Trace, trace2: Trace) -> np.ndarray:
        return np.concatenate([np.ravel(x1), np.ravel(x2), *trace1.activations,
                               *trace2.activations, [1.0]])

    def mu(self, trace1: Trace, trace2: Trace) -> np.ndarray:
        return np.concatenate([*trace1.preactivations, *trace2.preactivations,
                               *trace1.activations, *trace2.activations, [1.0]])

    def eta_batch(self, X1, X2, net1, net2) -> np.ndarray:
        """Rows of eta for a batch of input pairs, shape (batch, eta_dim)."""
        cols = [np.atleast_2d(X1), np.atleast_2d(X2)]
        for net, X in ((net1, X1), (net2, X2)):
            H = np.atleast_2d(X)
            for W, b in zip(net.weights[:-1], net.biases[:-1]):
                H = net.activation(H @ W.T + b)
                cols.append(H)
        cols.append(np.ones((cols[0].shape[0], 1)))
        return np.hstack(cols)


def build_compact_form(net1: NeuralNetwork, net2: NeuralNetwork) -> CompactForm:
    if net1.input_dim != net2.input_dim or net1.output_dim != net2.output_dim:
        raise ModelError("networks must share input and output dimensions")
    if net1.widths != net2.widths:
        raise ModelError(
            f"hidden architectures differ ({net1.widths} vs {net2.widths}); only equal architectures are supported")
    n_x, n_f, widths = net1.input_dim, net1.output_dim, net1.widths
    M = sum(widths)
    offsets = tuple(int(o) for o in np.cumsum((0, *widths[:-1])))
    n_eta = 2 * (n_x + M) + 1
    E = np.zeros((4 * M + 1, n_eta))
    V = np.zeros((2 * n_x + 2 * n_f + 1, n_eta))
    for i, net in enumerate((net1, net2)):
        xi0 = i * M  # rows of xi_i in mu
        x_col = i * n_x
        phi_col = 2 * n_x + i * M
        for k, (W, b) in enumerate(zip(net.weights[:-1], net.biases[:-1])):
            rows = slice(xi0 + offsets[k], xi0 + offsets[k] + widths[k])
            if k == 0:
                E[rows, x_col:x_col + n_x] = W
            else:
                src = phi_col + offsets[k - 1]
                E[rows, src:src + widths[k - 1]] = W
            E[rows, -1] = b
        # phi(xi_i) rows select the phi block of eta
        E[2 * M + i * M:2 * M + (i + 1) * M, phi_col:phi_col + M] = np.eye(M)
        # V: [x_i; f_i]
        V[i * n_x:(i + 1) * n_x, x_col:x_col + n_x] = np.eye(n_x)
        f_rows = slice(2 * n_x + i * n_f, 2 * n_x + (i + 1) * n_f)
        last = phi_col + offsets[-1]
        V[f_rows, last:last + widths[-1]] = net.weights[-1]
        V[f_rows, -1] = net.biases[-1]
    E[-1, -1] = 1.0
    V[-1, -1] = 1.0
    E.setflags(write=False)
    V.setflags(write=False)
    return CompactForm(n_x, n_f, widths, E, V, offsets)


# ---------------------------------------------------------------- JSON I/O

def network_to_dict(net: NeuralNetwork) -> dict:
    return {
        "input_dim": net.input_dim,
        "activation": net.activation.value,
        "layers": [{"W": W.tolist(), "b": b.tolist()} for W, b in zip(net.weights, net.biases)],
    }


def network_from_dict(data: dict) -> NeuralNetwork:
    try:
        layers = data["layers"]
        input_dim = int(data["input_dim"])
        activation = Activation.parse(data.get("activation", "relu"))
        ws, bs = [], []
        for k, layer in enumerate(layers):
            W = np.array(layer["W"], dtype=float)
            if W.ndim == 1 and k == 0 and input_dim == 1:
                W = W[:, None]
            ws.append(W)
            bs.append(np.array(layer["b"], dtype=float).reshape(-1))
    except (KeyError, TypeError, ValueError) as err:
        if isinstance(err, ModelError):
            raise
        raise ModelError(f"malformed model description: {err}") from err
    if ws and ws[0].ndim == 2 and ws[0].shape[1] != input_dim:
        raise ModelError(f"layer 0: weight matrix has {ws[0].shape[1]} columns, input_dim is {input_dim}")
    return NeuralNetwork(tuple(ws), tuple(bs), activation)


def save_model(net: NeuralNetwork, path) -> None:
    # json writes floats with repr(), which round-trips binary64 exactly
    Path(path).write_text(json.dumps(network_to_dict(net), indent=1))


def load_model(path) -> NeuralNetwork:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as err:
        raise ModelError(f"{path}: invalid JSON ({err})") from err
    return network_from_dict(data)
