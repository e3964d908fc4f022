import numpy as np
import pytest

from qcbound import NeuralNetwork, random_network


def naive_forward(net, x):
    """Loop-only reference evaluation with left-to-right summation, no matrix products."""
    h = list(map(float, x))
    for k, (W, b) in enumerate(zip(net.weights, net.biases)):
        out = []
        for i in range(W.shape[0]):
            s = b[i]
            for j in range(W.shape[1]):
                s += W[i, j] * h[j]
            out.append(s if k == len(net.weights) - 1 else max(s, 0.0))
        h = out
    return np.array(h)


def identity_relu_net() -> NeuralNetwork:
    """f(x) = relu(x): one hidden neuron with unit weights and zero biases."""
    return NeuralNetwork((np.array([[1.0]]), np.array([[1.0]])), (np.zeros(1), np.zeros(1)))


def zero_output_net() -> NeuralNetwork:
    return NeuralNetwork((np.array([[1.0]]), np.array([[0.0]])), (np.zeros(1), np.zeros(1)))


def random_pair(seed: int, widths=(10,), n_x=1, n_f=1):
    rng = np.random.default_rng(seed)
    return random_network(rng, n_x, list(widths), n_f), random_network(rng, n_x, list(widths), n_f)


@pytest.fixture
def relu1():
    return identity_relu_net()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# criterion number -> (description, passed); filled by tests/test_acceptance.py
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        desc, ok = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {desc}")
