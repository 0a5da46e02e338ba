import numpy as np
import pytest

from mtdcsim.controllers import ControllerConfig
from mtdcsim.grid import GridTopology
from mtdcsim.integrator import KERNELS
from mtdcsim.scenario import bundled_scenario_path, parse_scenario

FIG1_EDGES = [(0, 1), (0, 2), (1, 2), (1, 3), (2, 3)]
FIG1_V0 = np.array([105.0, 104.96, 104.9, 105.07]) * 1e3


@pytest.fixture
def fig1():
    return GridTopology.uniform(4, FIG1_EDGES, 3.7)


@pytest.fixture
def scenario():
    return parse_scenario(bundled_scenario_path())


def make_cfg(kind, n=4, K_P=10.0, K_I=10.0, V_nom=100e3, V_lo=95e3, V_hi=105e3):
    return ControllerConfig(kind, K_P, V_nom, K_I=K_I, V_lo=V_lo, V_hi=V_hi, n_terminals=n)


def random_topology(rng, n, extra=None, r_range=(0.5, 5.0)):
    """Connected random grid: a random spanning tree plus some extra lines."""
    order = rng.permutation(n)
    edges = set()
    for k in range(1, n):
        a, b = order[k], order[rng.integers(k)]
        edges.add((min(a, b), max(a, b)))
    extra = rng.integers(0, n) if extra is None else extra
    for _ in range(extra):
        a, b = rng.choice(n, 2, replace=False)
        edges.add((min(a, b), max(a, b)))
    lines = tuple((int(a), int(b), float(rng.uniform(*r_range))) for a, b in sorted(edges))
    caps = tuple(float(c) for c in rng.uniform(0.005, 0.02, n))
    return GridTopology(n, lines, caps)


@pytest.fixture(params=sorted(KERNELS))
def backend(request):
    return request.param
