import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from airsense.lidar_sim import (
    THRESHOLD_DENSE,
    THRESHOLD_SPARSE,
    DirectivityGrid,
    Pose2D,
    ScanPattern,
    VoxelRegion,
    directivity_analysis,
    gen_pattern,
    lambertian,
    rays_to_sensor_frame,
    simulate_frame,
    transform_rays,
)
from airsense.mesh import TriangleMesh, icosphere, quadcopter_mesh
from airsense.raytrace import Bvh, Ray, RayBundle

FAST = ScanPattern(points_per_second=24_000, seed=7)


def brute_force_hits(origins, dirs, mesh):
    """Exhaustive all-triangle nearest-hit oracle."""
    v0, v1, v2 = mesh.triangles()
    n = len(origins)
    best_t = np.full(n, np.inf)
    best = np.full(n, -1, dtype=np.int64)
    for ti in range(mesh.num_triangles):
        e1 = v1[ti] - v0[ti]
        e2 = v2[ti] - v0[ti]
        pvec = np.cross(dirs, e2)
        det = pvec @ e1
        ok = np.abs(det) > 1e-12
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        tvec = origins - v0[ti]
        u = np.sum(tvec * pvec, axis=1) * inv
        qvec = np.cross(tvec, e1)
        v = np.sum(dirs * qvec, axis=1) * inv
        t = (qvec @ e2) * inv
        ok &= (u >= 0) & (u <= 1) & (v >= 0) & (u + v <= 1) & (t > 1e-9)
        upd = ok & (t < best_t)
        best_t[upd] = t[upd]
        best[upd] = ti
    return best_t, best


class TestPattern:
    def test_ray_budget_100ms(self):
        rays = gen_pattern(ScanPattern(seed=1), 100.0)
        assert len(rays) == 24_000

    def test_ray_budget_exact_rounding(self):
        assert len(gen_pattern(FAST, 100.0)) == 2400
        assert len(gen_pattern(FAST, 33.3)) == round(24_000 * 0.0333)

    def test_zero_duration_rejected(self):
        with pytest.raises(ValueError):
            gen_pattern(FAST, 0.0)

    def test_directions_inside_fov(self):
        rays = gen_pattern(ScanPattern(seed=5), 100.0)
        az = np.degrees(np.arctan2(rays.directions[:, 1], rays.directions[:, 0]))
        el = np.degrees(np.arcsin(np.clip(rays.directions[:, 2], -1, 1)))
        assert np.abs(az).max() <= 70.4 / 2 + 1e-9
        assert np.abs(el).max() <= 77.2 / 2 + 1e-9

    def test_unit_directions(self):
        rays = gen_pattern(FAST, 50.0)
        np.testing.assert_allclose(np.linalg.norm(rays.directions, axis=1), 1.0,
                                   atol=1e-12)

    def test_prefix_consistency(self):
        a = gen_pattern(FAST, 100.0)
        b = gen_pattern(FAST, 200.0)
        assert np.array_equal(b.directions[: len(a)], a.directions)
        assert np.array_equal(b.t_us[: len(a)], a.t_us)

    def test_non_repetitive_across_frames(self):
        a = gen_pattern(FAST, 100.0, start_ms=0.0)
        b = gen_pattern(FAST, 100.0, start_ms=100.0)
        assert not np.allclose(a.directions, b.directions)

    def test_seed_changes_pattern(self):
        a = gen_pattern(ScanPattern(points_per_second=24_000, seed=1), 50.0)
        b = gen_pattern(ScanPattern(points_per_second=24_000, seed=2), 50.0)
        assert not np.allclose(a.directions, b.directions)

    def test_timestamps_monotone(self):
        rays = gen_pattern(FAST, 100.0)
        assert (np.diff(rays.t_us) >= 0).all()
        assert rays.t_us[0] >= 0 and rays.t_us[-1] < 100_000


class TestTransform:
    def test_identity_pose(self):
        rays = gen_pattern(FAST, 10.0)
        out = transform_rays(rays, Pose2D(0.0, (0.0, 0.0, 0.0)))
        assert np.array_equal(out.directions, rays.directions)
        assert np.array_equal(out.origins, rays.origins)

    def test_quarter_turn_direction(self):
        bundle = RayBundle(np.zeros((1, 3)), np.array([[0.0, 1.0, 0.0]]), np.array([0]))
        out = transform_rays(bundle, Pose2D(math.pi / 2, (0, 0, 0)))
        np.testing.assert_allclose(out.directions[0], [1.0, 0.0, 0.0], atol=1e-12)
        # and the pose rotation itself maps +x to +y
        np.testing.assert_allclose(Pose2D(math.pi / 2).rotation() @ [1, 0, 0],
                                   [0, 1, 0], atol=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_equivalent_to_rotating_the_mesh(self, seed):
        r = np.random.default_rng(seed)
        mesh = icosphere(0.7, 1)
        bvh = Bvh(mesh)
        yaw = float(r.uniform(-math.pi, math.pi))
        t = np.array([r.uniform(4, 30), r.uniform(-6, 6), r.uniform(-4, 4)])
        pose = Pose2D(yaw, tuple(t))
        rays = gen_pattern(ScanPattern(points_per_second=24_000, seed=seed), 40.0)
        hits = bvh.intersect(transform_rays(rays, pose))
        # oracle: actually rotate and translate the mesh, rebuild, intersect
        posed = TriangleMesh(mesh.vertices @ pose.rotation().T + t, mesh.faces.copy())
        ref = Bvh(posed).intersect(rays)
        assert np.array_equal(hits.hit, ref.hit)
        if hits.hit.any():
            back = rays_to_sensor_frame(hits.points[hits.hit], pose)
            assert np.abs(back - ref.points[ref.hit]).max() <= 1e-6


class TestIntersect:
    def test_axis_aligned_triangle_at_five_meters(self):
        tri = TriangleMesh(np.array([[5.0, -1.0, -1.0], [5.0, 1.0, -1.0],
                                     [5.0, 0.0, 1.5]]), np.array([[0, 1, 2]]))
        bvh = Bvh(tri)
        hits = bvh.intersect(RayBundle(np.zeros((1, 3)), np.array([[1.0, 0, 0]]),
                                       np.array([0])))
        assert hits.hit[0]
        np.testing.assert_allclose(hits.points[0], [5.0, 0.0, 0.0], atol=1e-12)
        assert hits.cos_incidence[0] == pytest.approx(1.0)

    def test_miss_aabb_zero_triangle_tests(self):
        bvh = Bvh(icosphere(0.5, 1, center=(10, 0, 0)))
        bundle = RayBundle(np.zeros((5, 3)), np.tile([-1.0, 0.0, 0.0], (5, 1)),
                           np.arange(5))
        hits = bvh.intersect(bundle)
        assert hits.count == 0
        assert bvh.triangle_tests == 0

    def test_degenerate_triangles_skipped(self):
        verts = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [5, -1, -1],
                          [5, 1, -1], [5, 0, 1]], dtype=float)
        mesh = TriangleMesh(verts, np.array([[0, 1, 2], [3, 4, 5]]))
        assert mesh.degenerate_skipped == 1
        assert mesh.num_triangles == 1

    @settings(max_examples=10, deadline=None)
    @given(seed=st.integers(0, 1000))
    def test_matches_brute_force(self, seed):
        r = np.random.default_rng(seed)
        mesh = icosphere(0.8, 2, center=(8, 0, 0))  # 320 triangles
        bvh = Bvh(mesh)
        n = 2000
        dirs = r.normal(size=(n, 3))
        dirs[:, 0] = np.abs(dirs[:, 0]) + 2.0
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        origins = np.zeros((n, 3))
        hits = bvh.intersect(RayBundle(origins, dirs, np.arange(n)))
        bt, bi = brute_force_hits(origins, dirs, mesh)
        ref_hit = np.isfinite(bt)
        assert np.array_equal(hits.hit, ref_hit)
        assert np.array_equal(hits.triangle[hits.hit], bi[ref_hit])
        ref_pts = origins[ref_hit] + bt[ref_hit, None] * dirs[ref_hit]
        assert np.abs(hits.points[hits.hit] - ref_pts).max() <= 1e-7

    def test_ray_requires_unit_direction(self):
        with pytest.raises(ValueError):
            Ray(np.zeros(3), np.array([1.0, 1.0, 0.0]))


class TestLambertian:
    def test_normal_incidence(self):
        assert lambertian(2.5, 0.0) == 2.5

    def test_sixty_degrees(self):
        assert lambertian(1.0, math.pi / 3) == pytest.approx(0.5, abs=1e-15)

    def test_grazing(self):
        assert lambertian(1.0, math.pi / 2) == pytest.approx(0.0, abs=1e-15)

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            lambertian(1.0, -0.1)
        with pytest.raises(ValueError):
            lambertian(1.0, 2.0)

    @settings(max_examples=50)
    @given(a=st.floats(0.0, math.pi / 2), b=st.floats(0.0, math.pi / 2))
    def test_monotone_and_bounded(self, a, b):
        lo, hi = min(a, b), max(a, b)
        assert lambertian(1.0, lo) >= lambertian(1.0, hi) - 1e-15
        assert 0.0 <= lambertian(1.0, lo) <= 1.0


class TestSimulateFrame:
    def test_mesh_outside_fov_empty(self):
        sim = simulate_frame(FAST, quadcopter_mesh(), Pose2D(0.0, (-20, 0, 0)), 100.0)
        assert sim.hit_count == 0
        assert not sim.accepted
        assert len(sim.frame) == 0

    def test_closer_target_yields_more_returns(self):
        mesh = quadcopter_mesh()
        near = simulate_frame(FAST, mesh, Pose2D(0.4, (10, 0, 0)), 100.0)
        far = simulate_frame(FAST, mesh, Pose2D(0.4, (40, 0, 0)), 100.0)
        assert near.hit_count > far.hit_count

    def test_min_hits_threshold(self):
        mesh = quadcopter_mesh()
        sim = simulate_frame(FAST, mesh, Pose2D(0.0, (12, 0, 0)), 100.0, min_hits=10)
        assert sim.accepted == (sim.hit_count >= 10)
        # force a thin cluster via an absurd threshold
        thin = simulate_frame(FAST, mesh, Pose2D(0.0, (12, 0, 0)), 100.0,
                              min_hits=sim.hit_count + 1)
        assert not thin.accepted

    def test_intensities_bounded_by_incident(self):
        sim = simulate_frame(FAST, quadcopter_mesh(), Pose2D(0.2, (10, 0, 0)),
                             100.0, i0=0.8)
        assert len(sim.frame) > 0
        assert sim.frame.intensity.min() >= 0.0
        assert sim.frame.intensity.max() <= 0.8 + 1e-12

    def test_points_near_posed_target(self):
        loc = np.array([14.0, 2.0, -1.0])
        sim = simulate_frame(FAST, icosphere(0.6, 1), Pose2D(1.0, tuple(loc)), 100.0)
        assert sim.hit_count > 0
        assert np.abs(sim.frame.points - loc).max() <= 0.6 + 1e-9


class TestDirectivity:
    def test_window_monotonicity_and_preset_nesting(self):
        mesh = quadcopter_mesh()
        region = VoxelRegion((9.0, 12.0), (-1.5, 1.5), (-1.5, 1.5))
        g100 = directivity_analysis(FAST, mesh, 100.0, THRESHOLD_SPARSE, region)
        g200 = directivity_analysis(FAST, mesh, 200.0, THRESHOLD_SPARSE, region)
        assert (g200.counts >= g100.counts).all()
        dense = DirectivityGrid(g100.centers, g100.counts, THRESHOLD_DENSE, 100.0)
        sparse_set = {tuple(c) for c in g100.included_centers()}
        dense_set = {tuple(c) for c in dense.included_centers()}
        assert dense_set <= sparse_set

    def test_close_voxel_included_at_threshold_one(self):
        mesh = quadcopter_mesh()
        region = VoxelRegion((9.0, 10.0), (-0.5, 0.5), (-0.5, 0.5))
        grid = directivity_analysis(FAST, mesh, 100.0, 1, region)
        assert grid.included().any()

    def test_out_of_fov_voxels_excluded(self):
        mesh = icosphere(0.5, 1)
        region = VoxelRegion((-3.0, -2.0), (-0.5, 0.5), (-0.5, 0.5))
        grid = directivity_analysis(FAST, mesh, 50.0, 1, region)
        assert not grid.included().any()

    def test_threshold_validated(self):
        with pytest.raises(ValueError):
            directivity_analysis(FAST, icosphere(0.5, 1), 50.0, 0,
                                 VoxelRegion((5, 6), (0, 1), (0, 1)))

    def test_csv_excludes_subthreshold(self, tmp_path):
        mesh = quadcopter_mesh()
        region = VoxelRegion((9.0, 12.0), (-1.5, 1.5), (-0.5, 0.5))
        grid = directivity_analysis(FAST, mesh, 100.0, THRESHOLD_SPARSE, region)
        path = tmp_path / "grid.csv"
        grid.to_csv(path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "x,y,z,count"
        assert len(lines) - 1 == int(grid.included().sum())
        for line in lines[1:]:
            assert int(line.split(",")[3]) >= THRESHOLD_SPARSE
