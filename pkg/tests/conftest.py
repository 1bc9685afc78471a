import sys

import numpy as np
import pytest

from east.layers import LayerSpec, Network, activation_shapes


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Print the verdict lines the end-to-end gate collected, if it ran."""
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None) if mod else None
    if lines:
        terminalreporter.section("acceptance measurements")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def small_net(seed: int = 0, in_shape=(8, 8, 3), channels=(4, 6), classes=5) -> Network:
    """Tiny conv net for fast unit tests, same construction rules as the
    toy model but a few hundred parameters."""
    rng = np.random.default_rng(seed)
    specs = []
    in_c = in_shape[2]
    for j, out_c in enumerate(channels):
        specs.append(LayerSpec("conv2d", out_channels=out_c, in_channels=in_c, kernel=3))
        specs.append(LayerSpec("relu"))
        specs.append(
            LayerSpec("max_pool", window=2, stride=2)
            if j < len(channels) - 1
            else LayerSpec("global_avg_pool")
        )
        in_c = out_c
    specs.append(LayerSpec("flatten"))
    specs.append(LayerSpec("fully_connected", out_features=classes, in_features=in_c))
    net = Network(layers=specs, input_shape=in_shape)
    for i, spec in enumerate(specs):
        if not spec.has_weights:
            continue
        shape = spec.weight_shape()
        fan_in = int(np.prod(shape[1:]))
        net.weights[i] = rng.normal(0, np.sqrt(2 / fan_in), size=shape).astype(np.float32)
        net.biases[i] = np.zeros(shape[0], dtype=np.float32)
        net.masks[i] = np.ones(net.weights[i].size, dtype=np.float32)
    activation_shapes(net)
    return net


@pytest.fixture
def tiny_net():
    return small_net()
