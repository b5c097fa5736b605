import numpy as np
import pytest
from _utils import (
    assert_gbuffer_consistent,
    box_cavity_volume,
    make_volume,
    numpy_fine_step_hit,
    random_outside_in_rays,
    slab_volume,
)

from isosr.errors import ConfigError
from isosr.raycast import (
    Camera,
    ambient_occlusion,
    ambient_occlusion_batch,
    brute_force_first_hit_batch,
    camera_rays,
    first_hit,
    first_hit_batch,
    first_hit_skipped_segments,
    render_gbuffer,
    render_ground_truth,
    render_hits,
    screen_space_flow,
    Hits,
)
from isosr.volume import build_pyramid, gen_procedural, gradient_central, sample_trilinear


def sphere_volume(n=33, r_frac=0.3):
    vol = gen_procedural("sphere", n, seed=0)
    r = r_frac * (n - 1)
    return vol, vol.world_center, r


class TestCamera:
    def test_position_roundtrip(self):
        eye = np.array([10.0, -5.0, 3.0])
        view = Camera.look_at(eye, (0, 0, 0), up=(0, 0, 1))
        cam = Camera(view, Camera.perspective(45, 1.0, 0.1, 100.0), 0.1, 100.0, (8, 8))
        assert np.allclose(cam.position, eye, atol=1e-9)

    def test_rejects_non_rigid_view(self):
        bad = np.eye(4)
        bad[0, 0] = 2.0
        with pytest.raises(ConfigError):
            Camera(bad, Camera.perspective(45, 1.0, 0.1, 10.0), 0.1, 10.0, (8, 8))

    def test_rays_pass_through_frustum(self):
        vol = gen_procedural("sphere", 17, seed=0)
        cam = Camera.framing(vol, eye=vol.world_center + [0, -40, 0], resolution=(9, 9))
        origins, dirs = camera_rays(cam)
        assert np.allclose(np.linalg.norm(dirs, axis=1), 1.0, atol=1e-12)
        # center ray of an odd-resolution image goes straight at the target
        center = dirs.reshape(9, 9, 3)[4, 4]
        expect = vol.world_center - cam.position
        expect = expect / np.linalg.norm(expect)
        assert np.allclose(center, expect, atol=1e-9)


class TestFirstHit:
    def test_sphere_analytic_distance(self):
        vol, c, r = sphere_volume(33)
        pyr = build_pyramid(vol)
        for axis in range(3):
            for sign in (1.0, -1.0):
                d = np.zeros(3)
                d[axis] = -sign
                o = c.copy()
                o[axis] += sign * 40.0
                res = first_hit(vol, pyr, o, d, 0.5)
                assert res is not None
                t_hit, p_hit = res
                assert t_hit == pytest.approx(40.0 - r, abs=1e-3 * r)
                assert np.allclose(p_hit, o + t_hit * d)

    def test_iso_above_max_misses(self):
        vol = gen_procedural("metaballs", 16, seed=1)
        pyr = build_pyramid(vol)
        rng = np.random.default_rng(0)
        origins, dirs = random_outside_in_rays(vol, 200, rng)
        _, hit = first_hit_batch(vol, pyr, origins, dirs, 1.5)
        assert not hit.any()

    def test_near_far_window(self):
        vol, c, r = sphere_volume(33)
        pyr = build_pyramid(vol)
        o = c + np.array([40.0, 0.0, 0.0])
        d = np.array([-1.0, 0.0, 0.0])
        # far plane in front of the sphere -> miss
        _, hit = first_hit_batch(vol, pyr, o[None], d[None], 0.5, near=0.0, far=20.0)
        assert not hit[0]
        # near plane beyond the front crossing -> back-side hit
        t, hit = first_hit_batch(vol, pyr, o[None], d[None], 0.5,
                                 near=40.0 - r + 2.0, far=np.inf)
        assert hit[0] and t[0] == pytest.approx(40.0 + r, abs=1e-2 * r)

    @pytest.mark.parametrize("kind,seed", [("metaballs", 3), ("csg", 4), ("fractal-noise", 5)])
    def test_matches_brute_force_oracle(self, kind, seed):
        vol = gen_procedural(kind, 32, seed=seed)
        pyr = build_pyramid(vol)
        rng = np.random.default_rng(seed)
        origins, dirs = random_outside_in_rays(vol, 500, rng)
        t_acc, hit_acc = first_hit_batch(vol, pyr, origins, dirs, 0.5)
        t_ref, hit_ref = brute_force_first_hit_batch(vol, origins, dirs, 0.5)
        assert np.array_equal(hit_acc, hit_ref)
        both = hit_acc & hit_ref
        assert np.abs(t_acc[both] - t_ref[both]).max() <= 1e-4 * vol.diagonal

    def test_brute_force_against_numpy_oracle(self):
        # cross-check the compiled reference against a pure-numpy marcher
        vol = gen_procedural("metaballs", 24, seed=9)
        rng = np.random.default_rng(9)
        origins, dirs = random_outside_in_rays(vol, 40, rng)
        t_ref, hit_ref = brute_force_first_hit_batch(vol, origins, dirs, 0.5)
        for i in range(40):
            t_np = numpy_fine_step_hit(vol, origins[i], dirs[i], 0.5)
            assert (t_np is not None) == bool(hit_ref[i])
            if t_np is not None:
                assert abs(t_np - t_ref[i]) <= 1e-3 * vol.diagonal

    def test_skipped_segments_contain_no_crossing(self):
        # fine-step scan over every skipped interval finds no sign change
        vol = gen_procedural("fractal-noise", 32, seed=11)
        pyr = build_pyramid(vol)
        rng = np.random.default_rng(11)
        origins, dirs = random_outside_in_rays(vol, 60, rng)
        total_segments = 0
        for i in range(60):
            _, _, segs = first_hit_skipped_segments(vol, pyr, origins[i], dirs[i], 0.5)
            total_segments += len(segs)
            for t0, t1 in segs:
                ts = np.linspace(t0, t1, max(int((t1 - t0) / 0.1) + 2, 2))
                pts = origins[i][None] + ts[:, None] * dirs[i][None]
                vals = np.asarray(sample_trilinear(vol, pts)) - 0.5
                sg = vals > 0
                assert np.all(sg == sg[0])
        assert total_segments > 50  # the pyramid actually skipped things


class TestRenderGBuffer:
    def test_iso_above_max_gives_defaults(self):
        vol = gen_procedural("csg", 16, seed=2)
        pyr = build_pyramid(vol)
        cam = Camera.framing(vol, eye=vol.world_center + [0, -40, 0], resolution=(16, 16))
        gb = render_gbuffer(vol, pyr, cam, 2.0)
        assert np.all(gb.mask == -1.0)
        assert np.all(gb.depth == 0.0)
        assert_gbuffer_consistent(gb)

    def test_sphere_center_normal_faces_viewer(self):
        vol, c, r = sphere_volume(33)
        pyr = build_pyramid(vol)
        cam = Camera.framing(vol, eye=c + [0, -50, 0], resolution=(65, 65))
        gb = render_gbuffer(vol, pyr, cam, 0.5)
        n_center = gb.normal[:, 32, 32]
        assert gb.mask[32, 32] == 1.0
        assert np.allclose(n_center, (0, 0, 1), atol=1e-2)
        assert_gbuffer_consistent(gb)

    def test_depth_encoding(self):
        vol, c, r = sphere_volume(33)
        pyr = build_pyramid(vol)
        cam = Camera.framing(vol, eye=c + [0, -50, 0], resolution=(65, 65))
        hits = render_hits(vol, pyr, cam, 0.5)
        gb = render_gbuffer(vol, pyr, cam, 0.5, hits=hits)
        t = hits.t[32, 32]
        expect = 1e-3 + (1 - 1e-3) * (t - cam.near) / (cam.far - cam.near)
        assert gb.depth[32, 32] == pytest.approx(expect, rel=1e-5)

    def test_bit_identical_rerender(self):
        vol = gen_procedural("metaballs", 24, seed=5)
        pyr = build_pyramid(vol)
        cam = Camera.framing(vol, eye=vol.world_center + [12, -30, 18], resolution=(32, 32))
        a = render_gbuffer(vol, pyr, cam, 0.5)
        b = render_gbuffer(vol, pyr, cam, 0.5)
        assert np.array_equal(a.mask, b.mask)
        assert np.array_equal(a.normal, b.normal)
        assert np.array_equal(a.depth, b.depth)


class TestScreenSpaceFlow:
    def test_static_camera_zero_flow(self):
        vol = gen_procedural("metaballs", 24, seed=5)
        pyr = build_pyramid(vol)
        cam = Camera.framing(vol, eye=vol.world_center + [0, -30, 10], resolution=(32, 32))
        hits = render_hits(vol, pyr, cam, 0.5)
        ff = screen_space_flow(hits, cam, cam)
        assert np.array_equal(ff.valid, hits.hit)
        assert np.all(ff.flow[:, ff.valid] == 0.0)

    def test_hand_constructed_projection_oracle(self):
        vol = gen_procedural("sphere", 17, seed=0)
        cam_t = Camera.framing(vol, eye=vol.world_center + [0, -30, 5], resolution=(24, 24))
        cam_p = Camera.framing(vol, eye=vol.world_center + [4, -29, 6], resolution=(24, 24))
        p = vol.world_center + np.array([1.2, 3.4, -2.2])

        def project(cam, p):
            clip = cam.mvp @ np.append(p, 1.0)
            ndc = clip[:3] / clip[3]
            w, h = cam.resolution
            return np.array([(ndc[0] + 1) / 2 * w - 0.5, (1 - ndc[1]) / 2 * h - 0.5])

        hits = Hits(
            t=np.full((24, 24), 0.0),
            points=np.zeros((24, 24, 3)),
            hit=np.zeros((24, 24), dtype=bool),
        )
        hits.hit[10, 7] = True
        hits.points[10, 7] = p
        hits.t[10, 7] = 1.0
        ff = screen_space_flow(hits, cam_t, cam_p)
        expect = project(cam_t, p) - project(cam_p, p)
        assert np.allclose(ff.flow[:, 10, 7], expect, atol=1e-4)
        assert ff.valid[10, 7]

    def test_camera_roll_is_tangential(self):
        vol, c, r = sphere_volume(33)
        pyr = build_pyramid(vol)
        cam_prev = Camera.framing(vol, eye=c + [0, -50, 0], resolution=(64, 64))
        theta = np.radians(2.0)
        rz = np.eye(4)
        rz[0, 0] = rz[1, 1] = np.cos(theta)
        rz[0, 1] = -np.sin(theta)
        rz[1, 0] = np.sin(theta)
        cam_t = Camera(rz @ cam_prev.view, cam_prev.proj, cam_prev.near,
                       cam_prev.far, cam_prev.resolution)
        hits = render_hits(vol, pyr, cam_t, 0.5)
        ff = screen_space_flow(hits, cam_t, cam_prev)
        center = np.array([(64 - 1) / 2.0, (64 - 1) / 2.0])
        chord = 2.0 * np.sin(theta / 2.0)
        checked = 0
        for y, x in np.argwhere(ff.valid):
            radial = np.array([x, y], dtype=float) - center
            rr = np.linalg.norm(radial)
            if rr < 8.0:
                continue
            f = ff.flow[:, y, x]
            mag = np.linalg.norm(f)
            assert mag == pytest.approx(chord * rr, rel=0.05)
            cosang = abs(np.dot(f / mag, radial / rr))
            assert cosang < 0.05
            checked += 1
        assert checked > 20

    def test_points_behind_previous_camera_invalid(self):
        vol = gen_procedural("sphere", 17, seed=0)
        cam_t = Camera.framing(vol, eye=vol.world_center + [0, -30, 0], resolution=(8, 8))
        # previous camera faces away, with the point behind it
        view_p = Camera.look_at(vol.world_center + [0, 30, 0], vol.world_center + [0, 60, 0])
        cam_p = Camera(view_p, cam_t.proj, cam_t.near, cam_t.far, (8, 8))
        hits = Hits(t=np.ones((8, 8)), points=np.zeros((8, 8, 3)), hit=np.zeros((8, 8), dtype=bool))
        hits.hit[4, 4] = True
        hits.points[4, 4] = vol.world_center
        ff = screen_space_flow(hits, cam_t, cam_p)
        assert not ff.valid[4, 4]


class TestAmbientOcclusion:
    def test_flat_slab_fully_open(self):
        vol = slab_volume(32)
        pyr = build_pyramid(vol)
        p = np.array([15.5, 15.5, 15.5])
        ao = ambient_occlusion(vol, pyr, p, (0, 0, 1), n_samples=512,
                               max_dist=12.0, seed=3)
        assert ao == 1.0

    def test_box_interior_heavily_occluded(self):
        vol, p, n = box_cavity_volume(32)
        pyr = build_pyramid(vol)
        ao = ambient_occlusion(vol, pyr, p, n, n_samples=512, max_dist=24.0, seed=3)
        ref = ambient_occlusion(vol, pyr, p, n, n_samples=16384, max_dist=24.0, seed=4)
        assert ao < 0.2
        assert ao == pytest.approx(ref, abs=0.05)

    def test_statistical_convergence(self):
        # 512-sample estimate within 3 sigma of the 16384-sample reference
        vol, p, n = box_cavity_volume(32)
        pyr = build_pyramid(vol)
        ref = ambient_occlusion(vol, pyr, p, n, n_samples=16384, max_dist=24.0, seed=10)
        est = ambient_occlusion(vol, pyr, p, n, n_samples=512, max_dist=24.0, seed=11)
        sigma = np.sqrt(max(ref * (1 - ref), 1e-6) / 512)
        assert abs(est - ref) <= 3 * sigma

    def test_monotone_under_added_occluder(self):
        vol_a, p, n = box_cavity_volume(32, lid=False)
        vol_b, _, _ = box_cavity_volume(32, lid=True)
        ao_a = ambient_occlusion(vol_a, build_pyramid(vol_a), p, n, 512, 24.0, seed=3)
        ao_b = ambient_occlusion(vol_b, build_pyramid(vol_b), p, n, 512, 24.0, seed=3)
        assert 0.0 <= ao_b <= ao_a <= 1.0

    def test_determinism_and_range(self):
        vol = gen_procedural("csg", 24, seed=6)
        pyr = build_pyramid(vol)
        rng = np.random.default_rng(0)
        pts = vol.world_center + rng.standard_normal((16, 3)) * 3.0
        ns = rng.standard_normal((16, 3))
        ns /= np.linalg.norm(ns, axis=1, keepdims=True)
        a = ambient_occlusion_batch(vol, pyr, pts, ns, 0.5, 64, 10.0, seed=1)
        b = ambient_occlusion_batch(vol, pyr, pts, ns, 0.5, 64, 10.0, seed=1)
        assert np.array_equal(a, b)
        assert a.min() >= 0.0 and a.max() <= 1.0


class TestRenderGroundTruth:
    def test_iso_above_max(self):
        vol = gen_procedural("metaballs", 16, seed=1)
        pyr = build_pyramid(vol)
        cam = Camera.framing(vol, eye=vol.world_center + [0, -40, 0], resolution=(8, 8))
        gt = render_ground_truth(vol, pyr, cam.hires(4), 2.0, ao_samples=16, seed=0)
        assert np.all(gt.mask == -1.0)
        assert np.all(gt.ao == 1.0)

    def test_slab_face_fully_open(self):
        vol = slab_volume(32)
        pyr = build_pyramid(vol)
        eye = vol.world_center + np.array([0.0, 0.0, 55.0])
        cam = Camera.framing(vol, eye=eye, resolution=(16, 16), up=(0, 1, 0))
        gt = render_ground_truth(vol, pyr, cam.hires(4), 0.5, ao_samples=128, seed=2)
        hit = gt.mask > 0
        assert hit.sum() > 100
        assert np.all(gt.ao[hit] == 1.0)
        assert np.all(gt.ao[~hit] == 1.0)

    def test_deterministic(self):
        vol = gen_procedural("csg", 24, seed=4)
        pyr = build_pyramid(vol)
        cam = Camera.framing(vol, eye=vol.world_center + [10, -28, 14], resolution=(12, 12))
        a = render_ground_truth(vol, pyr, cam.hires(4), 0.5, ao_samples=32, seed=9)
        b = render_ground_truth(vol, pyr, cam.hires(4), 0.5, ao_samples=32, seed=9)
        for fa, fb in [(a.mask, b.mask), (a.normal, b.normal), (a.depth, b.depth), (a.ao, b.ao)]:
            assert np.array_equal(fa, fb)
        assert a.ao.min() >= 0.0 and a.ao.max() <= 1.0
