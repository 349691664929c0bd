import pytest

from htsfem.materials import MagneticLaw, Materials, PowerLaw, VACUUM
from htsfem.mesh import (GeometryParams, Interface, Region, Scenario,
                         build_stacked_bar_mesh, build_tape_mesh)
from htsfem.spaces import build_a_space, build_h_space, build_t_space


@pytest.fixture(scope="session")
def bar_params():
    return GeometryParams(scenario=Scenario.STACKED_BAR, delta=0.002)


@pytest.fixture(scope="session")
def bar_mesh(bar_params):
    return build_stacked_bar_mesh(bar_params)


@pytest.fixture(scope="session")
def tape_params():
    return GeometryParams(scenario=Scenario.SINGLE_TAPE, delta=0.0005,
                          air_half=0.02)


@pytest.fixture(scope="session")
def tape_mesh(tape_params):
    return build_tape_mesh(tape_params)


@pytest.fixture(scope="session")
def bar_materials_linear():
    # linear conductor at the reference resistivity, mu_r = 1000 above
    return Materials(PowerLaw(e_c=1.6e-8 * 3e8, j_c=3e8, n=1),
                     {int(Region.OMEGA_A_FERRO): MagneticLaw(1000.0),
                      int(Region.OMEGA_A_AIR): VACUUM})


@pytest.fixture(scope="session")
def bar_materials_power():
    return Materials(PowerLaw(e_c=1e-4, j_c=3e8, n=20),
                     {int(Region.OMEGA_A_FERRO): MagneticLaw(1000.0),
                      int(Region.OMEGA_A_AIR): VACUUM})


@pytest.fixture(scope="session")
def tape_materials_power():
    return Materials(PowerLaw(e_c=1e-4, j_c=2.5e8, n=20),
                     {int(Region.OMEGA_A_AIR): VACUUM})


@pytest.fixture(scope="session")
def bar_spaces_11(bar_mesh):
    h = build_h_space(bar_mesh, 1, {0: ("current", 0.0)})
    a = build_a_space(bar_mesh, 1, Interface.GAMMA_M)
    return h, a


@pytest.fixture(scope="session")
def tape_spaces_11(tape_mesh):
    t = build_t_space(tape_mesh, 1, {0: ("current", 0.0)})
    a = build_a_space(tape_mesh, 1, Interface.GAMMA_W)
    return t, a
