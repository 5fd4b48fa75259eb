"""Shared fixtures and random-network builders."""

from __future__ import annotations

import sys

import numpy as np
import pytest
from hypothesis import strategies as st

from loadkit.case_io import Line, Network, bundled_path, load_network, merge_lines
from loadkit.powerflow import VoltageState, state_from_json

FIXTURES = ("tri3_resistive", "tri3_lossy", "tri3_reactance", "two_bus")
IEEE = ("case14", "case30", "case57", "case118", "case300")


def fixture_net(name: str) -> Network:
    return load_network(bundled_path(name))


def fixture_state(name: str, net: Network) -> VoltageState:
    return state_from_json(bundled_path(name).read_text(), net)


def symmetric_state(net: Network, v2: float, v3: float, im2: float = 0.0, im3: float = 0.0) -> VoltageState:
    return VoltageState.from_vector(net, [v2, v3, im2, im3])


def triangle(g: float, b: float, p=(0.0, 0.0), q=(0.0, 0.0)) -> Network:
    lines = (Line(1, 2, g, b), Line(1, 3, g, b), Line(2, 3, g, b))
    return Network(1, 1.0, (2, 3), np.array(p, float), np.array(q, float), lines)


def random_network(rng: np.random.Generator, size: int, lossless: bool = False) -> Network:
    """Connected network of ``size`` buses (slack included) with inductive lines."""
    lines = []
    for k in range(2, size + 1):
        lines.append((int(rng.integers(1, k)), k))
    for _ in range(int(rng.integers(0, size))):
        a, b = rng.choice(np.arange(1, size + 1), 2, replace=False)
        lines.append((int(a), int(b)))
    out = []
    for a, b in lines:
        g = 0.0 if lossless else float(rng.uniform(0.2, 5.0))
        out.append(Line(a, b, g, -float(rng.uniform(0.2, 10.0))))
    slack = complex(rng.uniform(0.95, 1.05), rng.uniform(-0.1, 0.1))
    n = size - 1
    return Network(1, slack, tuple(range(2, size + 1)), rng.uniform(-1, 1, n), rng.uniform(-1, 1, n),
                   merge_lines(out))


def random_state(rng: np.random.Generator, net: Network, spread: float = 0.3) -> VoltageState:
    n = net.n
    mag = rng.uniform(1 - spread, 1 + spread, n)
    ang = rng.uniform(-spread, spread, n)
    return VoltageState.from_complex(net, mag * np.exp(1j * ang))


seeds = st.integers(min_value=0, max_value=2 ** 32 - 1)


@pytest.fixture(scope="session")
def resistive():
    return fixture_net("tri3_resistive")


@pytest.fixture(scope="session")
def reactance():
    return fixture_net("tri3_reactance")


@pytest.fixture(scope="session")
def lossy():
    return fixture_net("tri3_lossy")


@pytest.fixture(scope="session")
def two_bus():
    return fixture_net("two_bus")


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)
