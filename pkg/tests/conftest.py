import pytest

from fsirom.mesh import ChannelGeometry, generate_channel_mesh
from fsirom.offline import FsiConfig, FsiDiscretization, run_offline
from fsirom.pod import build_reduced_spaces


@pytest.fixture(scope="session")
def tiny_mesh():
    return generate_channel_mesh(ChannelGeometry(target_edge_size=0.5))


@pytest.fixture(scope="session")
def coarse_mesh():
    return generate_channel_mesh(ChannelGeometry(target_edge_size=0.25))


@pytest.fixture(scope="session")
def tiny_disc(tiny_mesh):
    return FsiDiscretization(tiny_mesh, FsiConfig())


@pytest.fixture(scope="session")
def tiny_run(tiny_mesh, tiny_disc):
    """30 full-order steps on the 252-triangle mesh."""
    return run_offline(FsiConfig(n_steps=30), tiny_mesh, disc=tiny_disc)


@pytest.fixture(scope="session")
def tiny_spaces(tiny_run, tiny_disc):
    return build_reduced_spaces([tiny_run.snapshots], tiny_disc)


@pytest.fixture(scope="session")
def tiny_long_run(tiny_mesh, tiny_disc):
    """The full 500-step schedule on the 252-triangle mesh."""
    return run_offline(FsiConfig(n_steps=500), tiny_mesh, disc=tiny_disc)
