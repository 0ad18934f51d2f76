import numpy as np
import pytest

from hris.geometry import LinkState, LinkStates, Scenario, build_channels


def random_scenario(rng, K=2, Nx=8, Nz=4, M=4, **kw):
    """UEs dropped uniformly over the default 50 m area at handset height."""
    ues = np.column_stack([rng.uniform(-25, 25, K), rng.uniform(1, 50, K), np.full(K, 1.5)])
    return Scenario(Nx=Nx, Nz=Nz, M=M, **kw).with_ues(ues)


def random_channels(rng, K=2, nlos_prob=0.0, **kw):
    sc = random_scenario(rng, K, **kw)
    draw = lambda: LinkState.NLOS if rng.random() < nlos_prob else LinkState.LOS
    links = LinkStates(LinkState.LOS, tuple(draw() for _ in range(K)),
                       tuple(draw() for _ in range(K)))
    return sc, build_channels(sc, links)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def scenario():
    return Scenario()


def ue_at_azimuth(scenario, phi, horizontal=None):
    """UE at azimuth ``phi`` on the design-elevation cone at handset height."""
    horizontal = scenario.area_side / 2.0 if horizontal is None else horizontal
    return scenario.ris_center + np.array([horizontal * np.cos(phi), horizontal * np.sin(phi),
                                           scenario.ue_height - scenario.ris_center[2]])


@pytest.fixture(scope="session")
def maxmin_book():
    from hris.codebook import design_codebook
    return design_codebook(Scenario(), 32, "max-min-discretized")
