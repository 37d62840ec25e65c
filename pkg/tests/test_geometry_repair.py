import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from aforge.design_space import DIM, MIRROR, BodyGeometry, Motor, decode, layout_from_motors
from aforge.geometry_repair import (
    PRISM_SIDES, CollisionBody, GeometryError, RepairConfig, airflow_cylinder, build_collision_set,
    max_penetration, pairwise_depths, penetration_depth, repair)
from aforge.rotations import rot_x

from oracles import directional_depth


def random_pair(rng):
    R1 = Rotation.random(random_state=rng).as_matrix()
    R2 = Rotation.random(random_state=rng).as_matrix()
    cyl = airflow_cylinder(rng.normal(scale=0.02, size=3), R1, 0.0375)
    if rng.random() < 0.5:
        other = CollisionBody("cuboid", rng.normal(scale=0.08, size=3), R2, tuple(rng.uniform(0.02, 0.06, 3)))
    else:
        other = airflow_cylinder(rng.normal(scale=0.08, size=3), R2, 0.0375)
    return cyl, other


def test_prism_circumscribes_cylinder():
    c = airflow_cylinder(np.zeros(3), np.eye(3), 0.0375)
    v = c.local_vertices()
    assert v.shape == (2 * PRISM_SIDES, 3)
    r = 0.0385
    # face midpoints touch the true radius
    mid = 0.5 * (v[0, :2] + v[1, :2])
    assert np.linalg.norm(mid) == pytest.approx(r, rel=1e-12)
    assert np.ptp(v[:, 2]) == pytest.approx(0.15)


def test_degenerate_bodies_rejected():
    with pytest.raises(GeometryError):
        CollisionBody("sphere", np.zeros(3), np.eye(3), (1.0,))
    with pytest.raises(GeometryError):
        CollisionBody("cuboid", np.zeros(3), np.eye(3), (1.0, 0.0, 1.0))


def test_axis_aligned_cuboids_exact_depth():
    a = CollisionBody("cuboid", np.zeros(3), np.eye(3), (0.1, 0.1, 0.1))
    b = CollisionBody("cuboid", np.array([0.15, 0.02, 0.0]), np.eye(3), (0.1, 0.1, 0.1))
    assert penetration_depth(a, b) == pytest.approx(0.05, abs=1e-12)
    assert penetration_depth(a, b.translated([0.1, 0, 0])) == 0.0


def test_coaxial_cylinder_overlap_is_length_overlap():
    a = airflow_cylinder(np.zeros(3), np.eye(3), 0.0375)
    b = airflow_cylinder(np.array([0.0, 0.0, 0.1]), np.eye(3), 0.0375)
    assert penetration_depth(a, b) == pytest.approx(0.05, abs=1e-12)


def test_depth_matches_direction_oracle(rng):
    for _ in range(60):
        a, b = random_pair(rng)
        d = penetration_depth(a, b)
        assert abs(d - directional_depth(a, b)) < 2e-3


@given(st.floats(-0.3, 0.3), st.floats(-0.3, 0.3), st.floats(-0.3, 0.3))
def test_depth_is_symmetric_and_nonnegative(x, y, z):
    a = airflow_cylinder(np.zeros(3), rot_x(0.4), 0.0375)
    b = CollisionBody("cuboid", np.array([x, y, z]), np.eye(3), (0.045, 0.03, 0.045))
    d1, d2 = penetration_depth(a, b), penetration_depth(b, a)
    assert d1 >= 0 and d1 == pytest.approx(d2, abs=1e-12)


def test_pairwise_matrix_shape(planar):
    bodies = build_collision_set(planar)
    m = pairwise_depths(bodies)
    assert m.shape == (7, 7)
    assert np.array_equal(m, m.T) and np.all(np.diag(m) == 0)


def test_planar_baseline_is_feasible(planar):
    assert max_penetration(planar) == 0.0
    res = repair(planar)
    assert res.total_cost == 0.0 and res.converged
    assert np.all(res.translations == 0)


@settings(max_examples=8)
@given(st.integers(0, 2**31 - 1))
def test_repair_output_is_sound(seed):
    xi = np.random.default_rng(seed).random(DIM)
    lay = decode(xi)
    res = repair(lay)
    assert res.converged
    assert res.max_penetration < 1e-6
    out = res.repaired_layout
    assert out.mirror_error() < 1e-15
    assert np.array_equal(out.rotations, lay.rotations)
    t = res.translations
    assert np.allclose(t[3:], t[:3] @ MIRROR, atol=0)
    assert res.total_cost == pytest.approx(np.linalg.norm(t, axis=1).sum(), rel=1e-9)


def test_repair_is_deterministic():
    lay = decode(np.linspace(0.2, 0.8, DIM))
    a, b = repair(lay), repair(lay)
    assert np.array_equal(a.translations, b.translations)


def coaxial_layout(gap):
    # motor 1 thrusts along -y at y = gap/2; its mirror sits on the same line
    far = [Motor(np.array([x, 0.3, 0.0]), np.eye(3), s) for x, s in ((0.35, -1), (-0.35, 1))]
    return layout_from_motors([Motor(np.array([0.3, 0.5 * gap, 0.0]), rot_x(np.pi / 2), 1)] + far)


def test_coaxial_pair_repair_cost():
    gap = 0.04
    lay = coaxial_layout(gap)
    geom = BodyGeometry()
    bodies = build_collision_set(lay, geom)
    # sideways is the shortest way out for a free body ...
    assert penetration_depth(bodies[0], bodies[3]) == pytest.approx(2 * 0.0385, abs=1e-12)
    res = repair(lay, geom)
    assert res.converged
    # ... but mirrored motors can only separate along the shared axis
    assert res.total_cost == pytest.approx(0.15 - gap, rel=0.1)
    assert res.total_cost >= (0.15 - gap) * (1 - 1e-6)


def test_repair_result_json(planar):
    doc = repair(planar, cfg=RepairConfig(seed=3)).to_json_dict()
    assert doc["converged"] is True and len(doc["translations"]) == 6
