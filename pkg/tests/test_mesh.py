import numpy as np
import pytest

from htsfem.mesh import (Boundary, GeometryParams, Interface, Region,
                         Scenario, UnderResolvedError, build_stacked_bar_mesh,
                         read_msh22, read_native, refine, write_native)


def test_stacked_bar_interface_perimeter(bar_mesh):
    segs, _ = bar_mesh.interface(Interface.GAMMA_M)
    perim = bar_mesh.segment_lengths(segs).sum()
    assert abs(perim - 0.060) < 1e-12
    # closed polyline
    assert segs[0, 0] == segs[-1, 1]


def test_under_resolved_bar_rejected():
    params = GeometryParams(scenario=Scenario.STACKED_BAR, delta=0.005)
    with pytest.raises(UnderResolvedError):
        build_stacked_bar_mesh(params)


def test_bar_area_partition(bar_mesh, bar_params):
    total = bar_mesh.signed_areas.sum()
    box = (2.0 * bar_params.air_half) ** 2
    assert abs(total - box) / box < 1e-12


def test_region_areas(bar_mesh, bar_params):
    bar = bar_params.bar_width * bar_params.bar_height
    for region in (Region.OMEGA_H_SC, Region.OMEGA_A_FERRO):
        area = bar_mesh.signed_areas[bar_mesh.region_tris(region)].sum()
        assert abs(area - bar) / bar < 1e-12


def test_tape_segments(tape_mesh):
    segs, _ = tape_mesh.interface(Interface.GAMMA_W)
    assert len(segs) == 20
    assert len(np.unique(segs)) == 21
    assert tape_mesh.w == 1e-6
    lens = tape_mesh.segment_lengths(segs)
    assert lens.max() / lens.min() <= 1.01
    # endpoint markers sit at the tape ends
    minus = tape_mesh.nodes[tape_mesh.tape_endpoints["minus"]]
    plus = tape_mesh.nodes[tape_mesh.tape_endpoints["plus"]]
    assert minus[0] < plus[0]
    assert abs(plus[0] - minus[0] - 0.01) < 1e-12


def test_refine_counts_and_delta(bar_mesh):
    fine = refine(bar_mesh)
    assert fine.n_triangles == 4 * bar_mesh.n_triangles
    assert abs(fine.delta - bar_mesh.delta / 2) < 1e-15
    assert abs(fine.signed_areas.sum() - bar_mesh.signed_areas.sum()) \
        < 1e-12 * bar_mesh.signed_areas.sum()
    segs, _ = fine.interface(Interface.GAMMA_M)
    coarse_segs, _ = bar_mesh.interface(Interface.GAMMA_M)
    fine_len = fine.segment_lengths(segs).sum()
    coarse_len = bar_mesh.segment_lengths(coarse_segs).sum()
    assert abs(fine_len - coarse_len) < 1e-12 * coarse_len
    assert segs[0, 0] == segs[-1, 1]


def test_refine_tape_uniform_and_markers(tape_mesh):
    fine = refine(tape_mesh)
    segs, _ = fine.interface(Interface.GAMMA_W)
    lens = fine.segment_lengths(segs)
    assert lens.max() / lens.min() <= 1.01
    assert fine.tape_endpoints == tape_mesh.tape_endpoints
    assert len(segs) == 40


def test_conforming_no_hanging_nodes(bar_mesh):
    fine = refine(bar_mesh)
    assert fine.edge_tri_count.max() <= 2


def test_interface_normals(bar_mesh):
    segs, norms = bar_mesh.interface(Interface.GAMMA_M)
    assert np.allclose(np.hypot(norms[:, 0], norms[:, 1]), 1.0, atol=1e-14)
    # outward from the conductor: normal points away from the bar center
    mids = 0.5 * (bar_mesh.nodes[segs[:, 0]] + bar_mesh.nodes[segs[:, 1]])
    center = np.array([0.0, -0.005])
    assert np.all(np.einsum("sd,sd->s", norms, mids - center) > 0.0)


def test_native_roundtrip(tmp_path, bar_mesh):
    path = tmp_path / "mesh.txt"
    write_native(bar_mesh, path)
    back = read_native(path)
    assert np.array_equal(back.triangles, bar_mesh.triangles)
    assert np.allclose(back.nodes, bar_mesh.nodes)
    assert np.array_equal(back.tri_region, bar_mesh.tri_region)
    assert back.delta == bar_mesh.delta
    segs, _ = back.interface(Interface.GAMMA_M)
    ref, _ = bar_mesh.interface(Interface.GAMMA_M)
    assert back.segment_lengths(segs).sum() == pytest.approx(
        bar_mesh.segment_lengths(ref).sum(), rel=1e-14)


def test_native_roundtrip_tape(tmp_path, tape_mesh):
    path = tmp_path / "mesh.txt"
    write_native(tape_mesh, path)
    back = read_native(path)
    assert back.w == tape_mesh.w
    assert back.tape_endpoints == tape_mesh.tape_endpoints


def test_msh22_import(tmp_path):
    # two triangles on the unit square, air region, tagged outer boundary
    msh = """$MeshFormat
2.2 0 8
$EndMeshFormat
$Nodes
4
1 0 0 0
2 1 0 0
3 1 1 0
4 0 1 0
$EndNodes
$Elements
6
1 2 2 3 1 1 2 3
2 2 2 3 1 1 3 4
3 1 2 10 1 1 2
4 1 2 10 1 2 3
5 1 2 10 1 3 4
6 1 2 10 1 4 1
$EndElements
"""
    path = tmp_path / "square.msh"
    path.write_text(msh)
    mesh = read_msh22(path)
    assert mesh.n_nodes == 4
    assert mesh.n_triangles == 2
    assert np.all(mesh.signed_areas > 0)
    assert set(mesh.boundary_tags) == {int(Boundary.GAMMA_E)}
    assert abs(mesh.signed_areas.sum() - 1.0) < 1e-14


def test_geometry_validation():
    with pytest.raises(ValueError):
        GeometryParams(delta=-1.0)
    with pytest.raises(ValueError):
        GeometryParams(delta=0.015)  # not below half the bar width
