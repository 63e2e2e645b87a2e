import math

import numpy as np
import pytest

from ppsdoa.bench import four_source_scenario
from ppsdoa.model import ArrayConfig, SourceParams, generate_snapshots

FC = 450.0
WC = 2 * math.pi * FC


@pytest.fixture(scope="session")
def four_src():
    return four_source_scenario()


@pytest.fixture(scope="session")
def cfg(four_src):
    return four_src.array


@pytest.fixture(scope="session")
def small_cfg():
    # short block for cheap cost/gradient checks
    return ArrayConfig(M=4, d=1.5, c=1500.0, delta=0.01, N=32, omega_c=WC)


@pytest.fixture(scope="session")
def noiseless_block(four_src):
    return generate_snapshots(four_src.array, four_src.sources, 0.0)


def random_sources(rng, n, K, spread=0.5):
    """Well separated random sources near the carrier."""
    thetas = np.sort(rng.uniform(-spread, spread, size=n))
    out = []
    for l, th in enumerate(thetas):
        phi = [WC + rng.uniform(-80, 80)] + list(rng.uniform(-100, 100, size=K - 1))
        amp = complex(rng.normal(), rng.normal())
        out.append(SourceParams(float(th), tuple(phi), amp))
    return out
