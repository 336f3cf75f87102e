import math

import numpy as np
import pytest

from fisheyemotion.camera import RoadFrame
from fisheyemotion.constraints import (
    AboveHorizonError,
    CameraPose,
    ConstraintConfig,
    ConstraintDeviations,
    Correspondence,
    DegenerateEpipolarPlaneError,
    SkippedFeatureError,
    UndefinedProjectionError,
    adaptive_lambda_p,
    depth_deviation,
    epipolar_deviation,
    epipolar_frame,
    evaluate,
    evaluate_rays,
    fuse,
    height_and_antiparallel,
    project_onto_epipolar_plane,
    road_ray,
    static_camera_deviation,
)

FRONT_R = np.column_stack([[0, -1, 0], [0, 0, -1], [1, 0, 0]]).astype(float)


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def pose(c):
    return CameraPose(c=np.asarray(c, dtype=float), r=FRONT_R)


def corr_from_points(point_prev, point_curr, prev, curr):
    """World-oriented rays straight from world geometry (pixels unused)."""
    return Correspondence(
        uv_prev=np.zeros(2), uv_curr=np.zeros(2),
        p_prev=unit(np.asarray(point_prev) - prev.c),
        p_curr=unit(np.asarray(point_curr) - curr.c),
    )


ROAD = RoadFrame(eta_c=1.0, r_c=np.eye(3))


class TestEpipolarFrame:
    def test_baseline_and_normal(self):
        prev, curr = pose([0, 0, 0]), pose([1, 0, 0])
        frame = epipolar_frame(prev, curr, unit([2, 0, 1]))
        np.testing.assert_allclose(frame.e_prime, [-1, 0, 0], atol=1e-15)
        # n' = (p x e') / |p x e'|; perpendicular to both by construction
        np.testing.assert_allclose(frame.n_prime, [0, -1, 0], atol=1e-15)
        assert abs(frame.n_prime @ unit([2, 0, 1])) < 1e-12
        assert abs(frame.n_prime @ frame.e_prime) < 1e-12

    def test_zero_baseline_degenerate(self):
        prev = curr = pose([1, 2, 3])
        frame = epipolar_frame(prev, curr, unit([0, 0, 1]))
        assert frame.degenerate
        assert frame.e_prime is None

    def test_feature_along_baseline_raises(self):
        prev, curr = pose([0, 0, 0]), pose([1, 0, 0])
        with pytest.raises(DegenerateEpipolarPlaneError):
            epipolar_frame(prev, curr, np.array([-1.0, 0.0, 0.0]))


class TestEpipolarDeviation:
    def test_coplanar_is_zero(self):
        assert epipolar_deviation(unit([1, 1, 0]), np.array([0.0, 0.0, 1.0])) == 0.0

    def test_normal_is_one(self):
        n = np.array([0.0, 0.0, 1.0])
        assert epipolar_deviation(n, n) == 1.0

    def test_oblique_value(self):
        got = epipolar_deviation(unit([1, 1, 1]), np.array([0.0, 0.0, 1.0]))
        assert abs(got - 1 / math.sqrt(3)) < 1e-12


class TestProjection:
    def test_in_plane_unchanged(self):
        n = np.array([0.0, 0.0, 1.0])
        p = unit([3, 4, 0])
        np.testing.assert_allclose(project_onto_epipolar_plane(p, n), p, atol=1e-15)

    def test_projects_and_renormalizes(self):
        n = np.array([0.0, 0.0, 1.0])
        got = project_onto_epipolar_plane(unit([1, 0, 1]), n)
        np.testing.assert_allclose(got, [1, 0, 0], atol=1e-15)
        assert abs(got @ n) < 1e-12

    def test_parallel_to_normal_raises(self):
        n = np.array([0.0, 0.0, 1.0])
        with pytest.raises(UndefinedProjectionError):
            project_onto_epipolar_plane(n, n)


class TestDepthDeviation:
    # static/overtaking geometry: cameras at (0,0,0) and (1,0,0)
    def test_zero_parallax(self):
        p = unit([2, 0, 1])
        assert depth_deviation(p, p, np.array([0.0, -1.0, 0.0])) == 0.0

    def test_static_point_in_front(self):
        prev, curr = pose([0, 0, 0]), pose([1, 0, 0])
        p = unit([2, 0, 1])
        frame = epipolar_frame(prev, curr, p)
        p_pi = project_onto_epipolar_plane(unit([1, 0, 1]), frame.n_prime)
        assert depth_deviation(p, p_pi, frame.n_prime) == 0.0

    def test_overtaking_point_behind(self):
        prev, curr = pose([0, 0, 0]), pose([1, 0, 0])
        p = unit([2, 0, 1])
        frame = epipolar_frame(prev, curr, p)
        p_pi = project_onto_epipolar_plane(unit([3, 0, 1]), frame.n_prime)
        xi_d = depth_deviation(p, p_pi, frame.n_prime)
        assert abs(xi_d - 1 / math.sqrt(50)) < 1e-12


class TestRoadRay:
    def test_road_point_direction(self):
        # camera 1 m above road moving +x; previous ray hits the road at (3,0,0)
        p = unit([3, 0, -1])
        t = np.array([-1.0, 0.0, 0.0])
        h = np.array([0.0, 0.0, -1.0])
        got = road_ray(p, t, h, 1.0)
        np.testing.assert_allclose(got, unit([2, 0, -1]), atol=1e-12)

    def test_static_road_point_matches_current_ray(self):
        prev, curr = pose([0, 0, 1]), pose([1, 0, 1])
        point = np.array([3.0, 0.0, 0.0])
        p = unit(point - prev.c)
        p_curr = unit(point - curr.c)
        got = road_ray(p, prev.c - curr.c, np.array([0.0, 0.0, -1.0]), 1.0)
        np.testing.assert_allclose(got, p_curr, atol=1e-12)

    def test_horizon_ray_rejected(self):
        h = np.array([0.0, 0.0, -1.0])
        with pytest.raises(AboveHorizonError):
            road_ray(np.array([1.0, 0.0, 0.0]), np.array([-1.0, 0.0, 0.0]), h, 1.0)


def road_setup(point_prev, point_curr):
    """Epipolar frame + projected/road rays for the worked road examples."""
    prev, curr = pose([0, 0, 1]), pose([1, 0, 1])
    h = np.array([0.0, 0.0, -1.0])
    p = unit(np.asarray(point_prev, dtype=float) - prev.c)
    p_curr = unit(np.asarray(point_curr, dtype=float) - curr.c)
    frame = epipolar_frame(prev, curr, p)
    p_pi = project_onto_epipolar_plane(p_curr, frame.n_prime)
    p_r = road_ray(p, frame.t, h, 1.0)
    return p, p_pi, p_r, frame


class TestHeightAndAntiparallel:
    def test_preceding_slower_vehicle_fires_height(self):
        p, p_pi, p_r, frame = road_setup([3, 0, 0], [3.5, 0, 0])
        cfg = ConstraintConfig()
        xi_h, xi_p, ah, ap = height_and_antiparallel(p, p_pi, p_r, frame.n_prime, cfg, cfg.lambda_p)
        v = 0.5 / math.sqrt(36.25)
        assert ah and not ap
        assert abs(xi_h - (v - 0.001)) < 1e-9
        assert xi_p == 0.0

    def test_approaching_vehicle_fires_antiparallel(self):
        p, p_pi, p_r, frame = road_setup([5, 0, 0], [4, 0, 0])
        cfg = ConstraintConfig()
        xi_h, xi_p, ah, ap = height_and_antiparallel(p, p_pi, p_r, frame.n_prime, cfg, cfg.lambda_p)
        v = 1 / math.sqrt(170)
        assert ap and not ah
        assert abs(xi_p - (v - 0.001)) < 1e-9
        assert xi_h == 0.0

    def test_static_road_point_fires_neither(self):
        p, p_pi, p_r, frame = road_setup([3, 0, 0], [3, 0, 0])
        cfg = ConstraintConfig()
        xi_h, xi_p, _, _ = height_and_antiparallel(p, p_pi, p_r, frame.n_prime, cfg, cfg.lambda_p)
        assert xi_h < 1e-12 and xi_p < 1e-12


class TestAdaptiveLambdaP:
    def test_off_returns_constant(self):
        cfg = ConstraintConfig()
        assert adaptive_lambda_p(unit([1, 0, -1]), unit([1, 0, -2]), cfg) == 0.001

    def test_zero_parallax_floors(self):
        cfg = ConstraintConfig(adaptive_lambda_p=True)
        p = unit([1, 0, -1])
        assert adaptive_lambda_p(p, p, cfg) == cfg.lambda_p

    def test_scales_with_road_parallax(self):
        cfg = ConstraintConfig(adaptive_lambda_p=True, k_p=0.25)
        p, p_r = unit([3, 0, -1]), unit([2, 0, -1])
        got = adaptive_lambda_p(p, p_r, cfg)
        assert abs(got - 0.25 / math.sqrt(50)) < 1e-12


class TestStaticCamera:
    def test_no_flow(self):
        p = unit([1, 2, 3])
        assert static_camera_deviation(p, p) == 0.0

    def test_orthogonal_rays(self):
        assert abs(static_camera_deviation(np.array([1.0, 0, 0]), np.array([0.0, 1, 0])) - 1.0) < 1e-15

    def test_small_rotation(self):
        p = np.array([1.0, 0.0, 0.0])
        pc = np.array([math.cos(0.01), math.sin(0.01), 0.0])
        assert abs(static_camera_deviation(p, pc) - math.sin(0.01)) < 1e-12


class TestFuse:
    def test_zeros_and_ones(self):
        cfg = ConstraintConfig()
        assert fuse(ConstraintDeviations(), cfg) == 0.0
        d = ConstraintDeviations(xi_e=1, xi_d=1, xi_h=1, xi_p=1)
        assert abs(fuse(d, cfg) - 1.0) < 1e-15

    def test_weighted_mean(self):
        cfg = ConstraintConfig()
        d = ConstraintDeviations(xi_e=0.1, xi_d=0.0, xi_h=0.0, xi_p=0.0757)
        assert abs(fuse(d, cfg) - (0.1 + 0.2 * 0.0757) / 2.4) < 1e-12

    def test_monotone_and_weight_scale_invariant(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            devs = rng.uniform(0, 1, 4)
            cfg = ConstraintConfig()
            d = ConstraintDeviations(*devs)
            base = fuse(d, cfg)
            k = int(rng.integers(0, 4))
            bumped = devs.copy()
            bumped[k] = min(1.0, bumped[k] + rng.uniform(0, 0.5))
            assert fuse(ConstraintDeviations(*bumped), cfg) >= base - 1e-15
            scaled = ConstraintConfig(weights=tuple(3.7 * w for w in cfg.weights))
            assert abs(fuse(d, scaled) - base) < 1e-12


class TestEvaluate:
    def test_static_road_point_all_zero(self):
        prev, curr = pose([0, 0, 1]), pose([1, 0, 1])
        corr = corr_from_points([3, 0, 0], [3, 0, 0], prev, curr)
        d = evaluate(corr, prev, curr, ROAD)
        for value in (d.xi_e, d.xi_d, d.xi_h, d.xi_p, d.xi):
            assert value < 1e-12
        assert not d.static_case

    def test_overtaking_composition(self):
        prev, curr = pose([0, 0, 0]), pose([1, 0, 0])
        # point jumps (2,0,1) -> (4,0,1) while the camera moves 1 m
        corr = corr_from_points([2, 0, 1], [4, 0, 1], prev, curr)
        rf = RoadFrame(eta_c=1.0, r_c=np.eye(3))
        d = evaluate(corr, prev, curr, rf)
        assert d.xi_e < 1e-12
        assert abs(d.xi_d - 1 / math.sqrt(50)) < 1e-12
        assert d.xi_h == 0.0 and d.xi_p == 0.0
        assert abs(d.xi - (1 / math.sqrt(50)) / 2.4) < 1e-12

    def test_static_point_above_road_epipolar_exact(self):
        # static geometry keeps the epipolar and depth deviations at zero
        # even when the anti-parallel channel flags the point
        prev, curr = pose([0, 0, 1]), pose([1, 0, 1])
        corr = corr_from_points([3, 0.4, 0.7], [3, 0.4, 0.7], prev, curr)
        d = evaluate(corr, prev, curr, ROAD)
        assert d.xi_e < 1e-9 and d.xi_d < 1e-9

    def test_zero_baseline_static_branch(self):
        prev = curr = pose([0, 0, 1])
        corr = corr_from_points([3, 0, 0], [3, 0, 0], prev, curr)
        d = evaluate(corr, prev, curr, ROAD)
        assert d.static_case
        assert d.xi == 0.0

    def test_feature_on_baseline_reported(self):
        prev, curr = pose([0, 0, 1]), pose([1, 0, 1])
        corr = Correspondence(
            uv_prev=np.zeros(2), uv_curr=np.zeros(2),
            p_prev=np.array([-1.0, 0.0, 0.0]), p_curr=np.array([-1.0, 0.0, 0.0]),
        )
        with pytest.raises(SkippedFeatureError):
            evaluate(corr, prev, curr, ROAD)

    def test_ray_normal_to_plane(self):
        prev, curr = pose([0, 0, 1]), pose([1, 0, 1])
        p = unit([3, 0, -1])
        frame = epipolar_frame(prev, curr, p)
        corr = Correspondence(
            uv_prev=np.zeros(2), uv_curr=np.zeros(2),
            p_prev=p, p_curr=frame.n_prime.copy(),
        )
        d = evaluate(corr, prev, curr, ROAD)
        assert d.xi_e == 1.0
        assert d.xi_d == 0.0 and d.xi_h == 0.0 and d.xi_p == 0.0
        assert abs(d.xi - 1.0 / 2.4) < 1e-12


def random_world_case(rng):
    """Random two-view geometry with a (possibly moving) below-horizon point."""
    eta = rng.uniform(0.6, 2.5)
    c_prev = np.array([rng.uniform(-3, 3), rng.uniform(-3, 3), eta])
    step = rng.uniform(0.1, 1.0, 3) * np.array([1, 1, 0])
    c_curr = c_prev + step
    direction = rng.uniform(-1, 1, 3)
    direction[2] = 0
    point_prev = c_prev + rng.uniform(1.5, 10) * unit(direction + [1e-3, 0, 0])
    point_prev[2] = rng.uniform(-0.5, eta * 0.9)
    point_curr = point_prev + rng.uniform(-0.6, 0.6, 3) * np.array([1, 1, 0.2])
    prev, curr = pose(c_prev), pose(c_curr)
    rf = RoadFrame(eta_c=eta, r_c=np.eye(3))
    return corr_from_points(point_prev, point_curr, prev, curr), prev, curr, rf


def rotate_case(corr, prev, curr, rf, q):
    corr_r = Correspondence(
        uv_prev=corr.uv_prev, uv_curr=corr.uv_curr,
        p_prev=q @ corr.p_prev, p_curr=q @ corr.p_curr,
    )
    prev_r = CameraPose(c=q @ prev.c, r=q @ prev.r)
    curr_r = CameraPose(c=q @ curr.c, r=q @ curr.r)
    rf_r = RoadFrame(eta_c=rf.eta_c, r_c=q @ rf.r_c)
    return corr_r, prev_r, curr_r, rf_r


def random_rotation(rng):
    m = rng.normal(size=(3, 3))
    q, r = np.linalg.qr(m)
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def deviations_tuple(d):
    return np.array([d.xi_e, d.xi_d, d.xi_h, d.xi_p, d.xi])


class TestInvariances:
    def test_global_rotation(self):
        rng = np.random.default_rng(11)
        for _ in range(300):
            corr, prev, curr, rf = random_world_case(rng)
            base = deviations_tuple(evaluate(corr, prev, curr, rf))
            q = random_rotation(rng)
            rot = deviations_tuple(evaluate(*rotate_case(corr, prev, curr, rf, q)))
            np.testing.assert_allclose(rot, base, atol=1e-9)

    def test_joint_scale(self):
        rng = np.random.default_rng(13)
        for _ in range(300):
            corr, prev, curr, rf = random_world_case(rng)
            base = deviations_tuple(evaluate(corr, prev, curr, rf))
            s = rng.uniform(0.2, 20.0)
            prev_s = CameraPose(c=s * prev.c, r=prev.r)
            curr_s = CameraPose(c=s * curr.c, r=curr.r)
            rf_s = RoadFrame(eta_c=s * rf.eta_c, r_c=rf.r_c)
            scaled = deviations_tuple(evaluate(corr, prev_s, curr_s, rf_s))
            np.testing.assert_allclose(scaled, base, atol=1e-9)

    def test_ranges(self):
        rng = np.random.default_rng(17)
        for _ in range(500):
            corr, prev, curr, rf = random_world_case(rng)
            d = evaluate(corr, prev, curr, rf)
            for value in deviations_tuple(d):
                assert 0.0 <= value <= 1.0

    def test_normal_orthogonality(self):
        rng = np.random.default_rng(19)
        for _ in range(200):
            corr, prev, curr, rf = random_world_case(rng)
            frame = epipolar_frame(prev, curr, corr.p_prev)
            assert abs(frame.n_prime @ corr.p_prev) < 1e-12
            assert abs(frame.n_prime @ frame.e_prime) < 1e-12


class TestBatchConsistency:
    def test_matches_scalar_path(self):
        rng = np.random.default_rng(23)
        cases = [random_world_case(rng) for _ in range(400)]
        prev, curr, rf = cases[0][1], cases[0][2], cases[0][3]
        # pin one camera pair / road frame, vary the rays
        p = np.stack([c[0].p_prev for c in cases])
        pc = np.stack([c[0].p_curr for c in cases])
        batch = evaluate_rays(p, pc, prev.c, curr.c, rf)
        for i, (corr, *_rest) in enumerate(cases):
            d = evaluate(corr, prev, curr, rf)
            got = batch.item(i)
            np.testing.assert_allclose(deviations_tuple(got), deviations_tuple(d), atol=1e-12)
            assert got.applied_h == d.applied_h
            assert got.applied_p == d.applied_p

    def test_static_branch(self):
        rng = np.random.default_rng(29)
        p = rng.normal(size=(50, 3))
        p /= np.linalg.norm(p, axis=-1, keepdims=True)
        pc = rng.normal(size=(50, 3))
        pc /= np.linalg.norm(pc, axis=-1, keepdims=True)
        c = np.array([1.0, 2.0, 1.5])
        batch = evaluate_rays(p, pc, c, c, RoadFrame(eta_c=1.5, r_c=np.eye(3)))
        assert batch.static_case
        np.testing.assert_allclose(batch.xi, np.linalg.norm(np.cross(pc, p), axis=-1), atol=1e-15)

    def test_skipped_features_flagged(self):
        prev_c = np.array([0.0, 0.0, 1.0])
        curr_c = np.array([1.0, 0.0, 1.0])
        p = np.array([[-1.0, 0.0, 0.0], [0.6, 0.0, -0.8]])
        pc = np.array([[-1.0, 0.0, 0.0], [0.5, 0.0, -0.866]])
        pc[1] /= np.linalg.norm(pc[1])
        batch = evaluate_rays(p, pc, prev_c, curr_c, ROAD)
        assert batch.skipped[0] and not batch.skipped[1]
        assert batch.xi[0] == 0.0
