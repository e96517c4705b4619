"""Scene primitives, the voxel SDF and collision checks."""

from __future__ import annotations

import numpy as np
import pytest

from dloplan.errors import ConfigurationError, FormatError, InvalidInputError
from dloplan.services.der_model import DloParams, straight_config
from dloplan.services.scene_sdf import (
    EXTERIOR_SENTINEL,
    Box,
    Capsule,
    CollisionMargins,
    Scene,
    Sphere,
    build_sdf,
    dlo_sphere_centers,
    load_grid,
    save_grid,
    sdf_query,
    state_collision_free,
)

from conftest import GRID_CELL


def _scene_payload(**extra):
    payload = {
        "format": "dloplan.scene",
        "version": 1,
        "name": "payload",
        "bounds": {"min": [0.0, 0.0, 0.0], "max": [1.0, 1.0, 1.0]},
        "primitives": [{"type": "sphere", "center": [0.5, 0.5, 0.5], "radius": 0.1}],
    }
    payload.update(extra)
    return payload


class TestPrimitives:
    def test_box_distance_outside_and_inside(self):
        box = Box(np.zeros(3), np.array([0.1, 0.1, 0.1]))
        np.testing.assert_allclose(box.distance(np.array([[0.3, 0.0, 0.0], [0.0, 0.0, 0.0]])), [0.2, -0.1])

    def test_rotated_box_uses_its_local_axes(self):
        yaw = np.pi / 2
        rotation = np.array([[np.cos(yaw), -np.sin(yaw), 0.0], [np.sin(yaw), np.cos(yaw), 0.0], [0.0, 0.0, 1.0]])
        box = Box(np.zeros(3), np.array([0.3, 0.1, 0.1]), rotation)
        np.testing.assert_allclose(box.distance(np.array([[0.0, 0.5, 0.0]])), [0.2], atol=1e-12)

    def test_sphere_distance(self):
        sphere = Sphere(np.array([1.0, 0.0, 0.0]), 0.25)
        np.testing.assert_allclose(sphere.distance(np.array([[0.0, 0.0, 0.0]])), [0.75])

    def test_capsule_distance_to_segment(self):
        capsule = Capsule(np.zeros(3), np.array([1.0, 0.0, 0.0]), 0.1)
        points = np.array([[0.5, 0.3, 0.0], [-0.5, 0.0, 0.0]])
        np.testing.assert_allclose(capsule.distance(points), [0.2, 0.4])

    def test_empty_scene_reports_the_sentinel(self):
        scene = Scene("empty", (), np.zeros(3), np.ones(3))
        np.testing.assert_array_equal(scene.distance(np.zeros((2, 3))), EXTERIOR_SENTINEL)


class TestSceneDocument:
    def test_parses_primitives(self):
        scene = Scene.from_mapping(_scene_payload())
        assert len(scene.primitives) == 1
        assert scene.distance(np.array([0.5, 0.5, 0.8]))[0] == pytest.approx(0.2)

    def test_wrong_format_is_rejected(self):
        with pytest.raises(FormatError):
            Scene.from_mapping(_scene_payload(format="dloplan.task"))

    def test_missing_bounds_are_rejected(self):
        payload = _scene_payload()
        del payload["bounds"]
        with pytest.raises(FormatError):
            Scene.from_mapping(payload)

    def test_empty_bounds_are_rejected(self):
        with pytest.raises(InvalidInputError):
            Scene.from_mapping(_scene_payload(bounds={"min": [0.0, 0.0, 0.0], "max": [1.0, 0.0, 1.0]}))

    def test_digest_tracks_content(self):
        first = Scene.from_mapping(_scene_payload())
        same = Scene.from_mapping(_scene_payload())
        moved = Scene.from_mapping(
            _scene_payload(primitives=[{"type": "sphere", "center": [0.4, 0.5, 0.5], "radius": 0.1}])
        )
        assert first.digest() == same.digest()
        assert first.digest() != moved.digest()


QUERY_SCENES = {
    "box": (Box(np.array([0.5, 0.0, 0.3]), np.array([0.05, 0.05, 0.1])),),
    "sphere": (Sphere(np.array([0.4, 0.1, 0.25]), 0.08),),
    "box_and_sphere": (
        Box(np.array([0.5, 0.0, 0.3]), np.array([0.05, 0.05, 0.1])),
        Sphere(np.array([0.35, 0.15, 0.4]), 0.06),
    ),
}


class TestSdfGrid:
    @pytest.mark.parametrize("name", sorted(QUERY_SCENES))
    def test_query_error_is_within_one_cell(self, name):
        scene = Scene(name, QUERY_SCENES[name], np.array([0.2, -0.3, 0.0]), np.array([0.8, 0.3, 0.6]))
        grid = build_sdf(scene, GRID_CELL)
        rng = np.random.default_rng(0)
        points = rng.uniform(scene.bounds_min, scene.bounds_max, size=(10_000, 3))
        sample = sdf_query(grid, points)
        assert not np.any(sample.clamped)
        assert float(np.abs(sample.distance - scene.distance(points)).max()) <= GRID_CELL

    def test_query_flags_clamped_points(self, box_grid):
        points = np.array([box_grid.voxel_center((3, 3, 3)), box_grid.upper_corner + 0.5])
        sample = sdf_query(box_grid, points)
        np.testing.assert_array_equal(sample.clamped, [False, True])
        np.testing.assert_allclose(sample.distance[1], box_grid.query(box_grid.upper_corner)[0])

    def test_voxel_centers_hold_exact_distances(self, box_scene, box_grid):
        index = (7, 11, 13)
        center = box_grid.voxel_center(index)
        assert box_grid.values[index] == pytest.approx(float(box_scene.distance(center)[0]))

    def test_gradient_points_away_from_the_box(self, box_grid):
        _, gradient = box_grid.query(np.array([[0.65, 0.0, 0.3]]), with_gradient=True)
        assert gradient[0, 0] > 0.9

    def test_points_outside_are_clamped(self, box_grid):
        inside = box_grid.query(np.array([box_grid.upper_corner]))
        outside = box_grid.query(np.array([box_grid.upper_corner + 1.0]))
        np.testing.assert_allclose(outside, inside)
        assert box_grid.out_of_bounds(np.array([box_grid.upper_corner + 1.0]))[0]

    def test_cell_size_must_be_positive(self, box_scene):
        with pytest.raises(ConfigurationError):
            build_sdf(box_scene, 0.0)

    def test_voxel_cap(self, box_scene):
        with pytest.raises(ConfigurationError):
            build_sdf(box_scene, 0.001, max_voxels=1000)

    def test_cache_round_trip(self, box_grid, tmp_path):
        path = tmp_path / "grid.npz"
        save_grid(box_grid, path)
        loaded = load_grid(path)
        np.testing.assert_array_equal(loaded.values, box_grid.values)
        assert loaded.scene_digest == box_grid.scene_digest
        assert loaded.cell_size == box_grid.cell_size

    def test_unreadable_cache_is_a_format_error(self, tmp_path):
        path = tmp_path / "broken.npz"
        path.write_text("not a grid", encoding="utf-8")
        with pytest.raises(FormatError):
            load_grid(path)


class TestCollisionChecks:
    def test_rod_spheres_interpolate_feature_points(self):
        features = np.array([[0.0, 0.0, 0.0], [0.3, 0.0, 0.0], [0.3, 0.3, 0.0]])
        centers = dlo_sphere_centers(features)
        assert centers.shape == (3 * (3 - 1) + 1, 3)
        np.testing.assert_allclose(centers[1], [0.1, 0.0, 0.0])
        np.testing.assert_allclose(centers[-1], features[-1])

    def test_rod_through_the_box_collides(self, box_grid):
        params = DloParams()
        cfg = straight_config(np.array([0.3, 0.0, 0.3]), np.array([1.0, 0.0, 0.0]), params)
        assert not state_collision_free(cfg, None, None, box_grid, CollisionMargins.for_rod(params.diameter))

    def test_rod_beside_the_box_is_free(self, box_grid):
        params = DloParams()
        cfg = straight_config(np.array([0.25, -0.2, 0.3]), np.array([1.0, 0.0, 0.0]), params)
        assert state_collision_free(cfg, None, None, box_grid, CollisionMargins.for_rod(params.diameter))

    def test_margins_scale_with_diameter(self):
        margins = CollisionMargins.for_rod(0.02)
        assert margins.dlo_radius == pytest.approx(0.012)
