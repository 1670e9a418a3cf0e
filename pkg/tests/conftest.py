import math

import hypothesis
import hypothesis.strategies as st
import numpy as np
import pytest

from cavityeo.model import SystemConfig, reference_device

TWO_PI = 2.0 * math.pi
MHZ = TWO_PI * 1e6

hypothesis.settings.register_profile("default", max_examples=60, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=10, deadline=None)
hypothesis.settings.register_profile("thorough", max_examples=500, deadline=None)
hypothesis.settings.load_profile("default")

np.seterr(all="warn")


def random_config(rng, case, tm_detuned=False, c_max=None):
    """A random valid configuration and a cooperativity-derived g for ``case``."""
    ko = rng.uniform(5, 60) * MHZ
    ke = rng.uniform(2, 30) * MHZ
    cfg = SystemConfig.build(
        case, ko, rng.uniform(0.05, 0.95) * ko, ke, rng.uniform(0.05, 0.95) * ke,
        g0=TWO_PI * 37.0,
        j=0.0 if case == "symmetric" else rng.uniform(1, 100) * MHZ,
        kappa_tm=rng.uniform(2, 40) * MHZ,
        delta_s=rng.uniform(-0.3, 0.3) * ko, delta_as=rng.uniform(-0.3, 0.3) * ko,
        delta_tm=rng.uniform(-0.5, 0.5) * ko if tm_detuned else None,
        delta_e=rng.uniform(-0.2, 0.2) * ke)
    if c_max is None:
        c_max = 0.9 if case == "stokes" else 3.0
    g = cfg.g_for_cooperativity(rng.uniform(0, c_max))
    return cfg, g


@st.composite
def configs(draw, case=None, tm_detuned=False):
    if case is None:
        case = draw(st.sampled_from(["symmetric", "stokes", "anti_stokes"]))
    seed = draw(st.integers(0, 2**32 - 1))
    return random_config(np.random.default_rng(seed), case, tm_detuned)


@pytest.fixture
def stokes_device():
    return reference_device("stokes")


@pytest.fixture
def anti_stokes_device():
    return reference_device("anti_stokes")


@pytest.fixture
def symmetric_device():
    return reference_device("symmetric")
