import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial import cKDTree

from insertbench.core import ValidationError
from insertbench.decomp import (
    CylinderSpec,
    RoughnessSpec,
    SphereSet,
    SphereSetParseError,
    apply_roughness,
    decompose_cylinder_lateral,
    hole_surface_spheres,
    load_sphere_set,
    save_sphere_set,
)


def radial(s):
    return np.hypot(s.centers[:, 0], s.centers[:, 1])


def test_peg_lattice_on_surface():
    s = decompose_cylinder_lateral(CylinderSpec(0.01, 0.04), 2000, 1e-3)
    assert len(s) == 2000
    assert np.all(np.abs(radial(s) - 0.01) < 1e-9)
    assert np.all(s.radii == 1e-3)
    assert s.centers[:, 2].min() >= 0.0 and s.centers[:, 2].max() <= 0.04 + 1e-12


def test_single_sphere():
    s = decompose_cylinder_lateral(CylinderSpec(0.01, 0.04), 1, 1e-3)
    assert len(s) == 1
    assert abs(radial(s)[0] - 0.01) < 1e-12


@pytest.mark.parametrize("count", [500, 1000, 2000, 5000])
def test_lattice_spacing_uniform(count):
    s = decompose_cylinder_lateral(CylinderSpec(0.01, 0.04), count, 1e-3)
    d, _ = cKDTree(s.centers).query(s.centers, k=2)
    nn = d[:, 1]
    assert nn.std() / nn.mean() < 0.35


def test_validation():
    with pytest.raises(ValidationError):
        decompose_cylinder_lateral(CylinderSpec(0.01, 0.04), 0, 1e-3)
    with pytest.raises(ValidationError):
        decompose_cylinder_lateral(CylinderSpec(0.01, 0.04), 10, 0.0)
    with pytest.raises(ValidationError):
        CylinderSpec(-1.0, 0.04)
    with pytest.raises(ValidationError):
        RoughnessSpec(-1e-6)
    with pytest.raises(ValidationError):
        SphereSet(np.zeros((2, 3)), [1e-3, -1e-3])


def test_roughness_zero_is_identity():
    s = decompose_cylinder_lateral(CylinderSpec(0.01, 0.04), 300, 1e-3)
    assert apply_roughness(s, RoughnessSpec(0.0), rng=1) == s


@pytest.mark.parametrize("dist", ["gaussian", "uniform"])
def test_roughness_statistics(dist):
    s = decompose_cylinder_lateral(CylinderSpec(0.01, 0.04), 2000, 1e-3)
    r = apply_roughness(s, RoughnessSpec(50e-6, dist), rng=np.random.default_rng(3))
    delta = radial(r) - 0.01
    assert abs(np.mean(np.abs(delta)) - 50e-6) / 50e-6 < 0.10
    # zero-mean along the normal: mean radius stays nominal (standard error ~1.4 um)
    assert abs(np.mean(delta)) < 6e-6
    assert len(r) == len(s) and np.array_equal(r.radii, s.radii)


def test_roughness_along_normals():
    s = decompose_cylinder_lateral(CylinderSpec(0.01, 0.04), 500, 1e-3)
    r = apply_roughness(s, RoughnessSpec(1e-4), rng=2)
    cross = np.cross(r.centers - s.centers, s.normals)
    assert np.allclose(cross, 0.0, atol=1e-15)


def test_roughness_explicit_normals_validated():
    s = decompose_cylinder_lateral(CylinderSpec(0.01, 0.04), 10, 1e-3)
    with pytest.raises(ValidationError):
        apply_roughness(s, RoughnessSpec(1e-5), surface_normals=np.ones((3, 3)), rng=0)


def test_roughness_deterministic():
    s = decompose_cylinder_lateral(CylinderSpec(0.01, 0.04), 400, 1e-3)
    a = apply_roughness(s, RoughnessSpec(1e-4), rng=9)
    b = apply_roughness(s, RoughnessSpec(1e-4), rng=9)
    assert a == b
    assert decompose_cylinder_lateral(CylinderSpec(0.01, 0.04), 400, 1e-3) == s


def test_hole_spheres_radius():
    h = hole_surface_spheres(0.0101, 0.04, 2000, 1e-3)
    assert len(h) == 2000
    assert np.all(np.abs(radial(h) - 0.0101) < 1e-9)
    assert np.all(h.centers[:, 2] <= 0.0) and np.all(h.centers[:, 2] >= -0.04 - 1e-12)
    # normals point into the bore
    assert np.all(np.einsum("ij,ij->i", h.normals[:, :2], h.centers[:, :2]) < 0)


def test_hole_ring_of_four():
    h = hole_surface_spheres(0.01, 0.0, 4, 1e-3)
    ang = np.sort(np.mod(np.arctan2(h.centers[:, 1], h.centers[:, 0]), 2 * np.pi))
    assert np.allclose(np.diff(ang), np.pi / 2)
    assert np.all(h.centers[:, 2] == 0.0)


def test_clearance_between_lattices():
    peg = decompose_cylinder_lateral(CylinderSpec(0.01, 0.04), 2000, 1e-3)
    hole = hole_surface_spheres(0.0101, 0.04, 2000, 1e-3)
    # radial gap between the two surfaces is exactly bore - peg radius
    gap = radial(hole).min() - radial(peg).max()
    assert gap == pytest.approx(1e-4, abs=1e-12)
    # no center pair is closer than the clearance at perfect alignment
    shifted = peg.centers - np.array([0, 0, 0.04])
    d, _ = cKDTree(hole.centers).query(shifted)
    assert d.min() >= 1e-4 - 1e-12


def test_round_trip(tmp_path):
    s = apply_roughness(decompose_cylinder_lateral(CylinderSpec(0.01, 0.04), 50, 1e-3), RoughnessSpec(1e-5), rng=4)
    p = tmp_path / "s.csv"
    save_sphere_set(s, p)
    assert load_sphere_set(p) == s


def test_load_single_record(tmp_path):
    p = tmp_path / "one.csv"
    p.write_text("0,0,0,0.001\n")
    s = load_sphere_set(p)
    assert len(s) == 1
    assert np.array_equal(s.centers[0], [0.0, 0.0, 0.0]) and s.radii[0] == 0.001


def test_load_empty_file(tmp_path):
    p = tmp_path / "empty.csv"
    p.write_text("")
    with pytest.raises(SphereSetParseError):
        load_sphere_set(p)


def test_load_reports_line_number(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("# comment\n0,0,0,0.001\n0,0,x,0.001\n")
    with pytest.raises(SphereSetParseError) as err:
        load_sphere_set(p)
    assert err.value.line == 3
    p.write_text("0,0,0,-0.001\n")
    with pytest.raises(ValidationError):
        load_sphere_set(p)


@settings(max_examples=25)
@given(st.integers(1, 3000), st.floats(0.001, 0.05), st.floats(0.001, 0.1))
def test_lattice_count_and_radius_property(count, radius, height):
    s = decompose_cylinder_lateral(CylinderSpec(radius, height), count, 5e-4)
    assert len(s) == count
    assert np.all(np.abs(radial(s) - radius) < 1e-9)
