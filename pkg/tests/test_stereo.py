import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hdrfringe.analysis import height_sensitivity, predicted_height_rms
from hdrfringe.errors import CameraFileNotFoundError, DimensionMismatchError, ImageFormatError
from hdrfringe.hdr import process_view
from hdrfringe.imaging import PhaseMap
from hdrfringe.phase import NoiseModel, predict_phase_variance
from hdrfringe.simulator import (
    HALF_ANGLE_DEG,
    MAGNIFICATION,
    PIXEL_PITCH_MM,
    ProjectorModel,
    Scene,
    SensorModel,
    level_modulation,
    render_stacks,
)
from hdrfringe.stereo import (
    AffineCamera,
    MatchList,
    RectifiedPair,
    load_cameras,
    load_matches,
    match_pair,
    match_row,
    monotone_segments,
    save_cameras,
    save_matches,
    triangulate,
)


def row_pair(left_row, right_row, right_valid=None):
    """One-row pair; the shorter row is padded with invalid pixels."""
    width = max(len(left_row), len(right_row))

    def padded(row, valid):
        values = np.full((1, width), np.nan)
        values[0, : len(row)] = row
        mask = np.zeros((1, width), dtype=bool)
        mask[0, : len(row)] = True if valid is None else valid
        return PhaseMap(values, mask)

    return RectifiedPair(padded(left_row, None), padded(right_row, right_valid))


def ramp_pair(width=256, height=8, slope=1.4, disparity=3.25):
    u = np.arange(width, dtype=float)
    offsets = np.linspace(-3.0, 2.0, height)[:, None]
    right = slope * u[None, :] + offsets
    left = slope * (u[None, :] - disparity) + offsets
    return RectifiedPair(PhaseMap(left), PhaseMap(right))


class TestMatchRow:
    def test_forward_branch_example(self):
        right = 4.8 + 0.4 * (np.arange(20) - 10.0)
        pair = row_pair(np.full(20, 5.0), right)
        ul, ur = match_row(pair, 0)
        assert ul.size == 20
        np.testing.assert_allclose(ur, 10.5, atol=1e-12)

    def test_exact_hit(self):
        right = np.arange(15, dtype=float)
        pair = row_pair(np.full(15, 7.0), right)
        _, ur = match_row(pair, 0)
        assert np.all(ur == 7.0)

    def test_ramp_fractional_disparity(self):
        pair = ramp_pair()
        m = match_pair(pair).matches
        interior = (m[:, 0] - 3.25 >= 1) & (m[:, 0] - 3.25 <= pair.left.width - 2)
        assert interior.sum() == 8 * (pair.left.width - 5)
        err = np.abs(m[interior, 2] - (m[interior, 0] - 3.25))
        assert err.max() <= 1e-12

    @given(st.floats(0.01, 100.0))
    def test_scale_invariance(self, c):
        pair = ramp_pair(width=64, height=3)
        scaled = RectifiedPair(PhaseMap(pair.left.values * c), PhaseMap(pair.right.values * c))
        # the gap threshold is a phase too and scales with the maps
        a = match_pair(pair, 2 * np.pi).matches
        b = match_pair(scaled, 2 * np.pi * c).matches
        assert a.shape == b.shape
        np.testing.assert_array_equal(a[:, :2], b[:, :2])
        assert np.max(np.abs(a[:, 2] - b[:, 2])) <= 1e-12

    def test_gap_rejection(self):
        pair = row_pair([1.0, 20.0], np.arange(10, dtype=float))
        ul, _ = match_row(pair, 0, max_phase_gap=2 * np.pi)
        assert ul.tolist() == [0]

    def test_invalid_neighbour_rejects(self):
        right = np.arange(10, dtype=float)
        valid = np.ones(10, dtype=bool)
        valid[6] = False
        pair = row_pair([5.4, 5.6], right, valid)
        # 5.4 -> base 5 needs 6 (invalid); 5.6 -> base 5 too by nearest valid
        ul, _ = match_row(pair, 0)
        assert ul.size == 0

    def test_backward_branch_at_segment_start(self):
        pair = row_pair([-0.5, 0.0, 0.4], np.arange(10, dtype=float))
        ul, ur = match_row(pair, 0)
        assert ul.tolist() == [2]
        assert ur[0] == pytest.approx(0.4, abs=1e-15)

    def test_tie_goes_to_smaller_column(self):
        right = np.array([0.0, 1.0, 2.0, 3.0])
        pair = row_pair([1.5], right)
        _, ur = match_row(pair, 0)
        assert ur[0] == 1.5

    def test_one_match_per_pixel_inside_image(self):
        pair = ramp_pair(width=64, height=4)
        m = match_pair(pair).matches
        assert len({(int(a), int(b)) for a, b, _ in m}) == len(m)
        assert m[:, 2].min() >= 0 and m[:, 2].max() <= 63


class TestMonotonicity:
    def test_dip_excluded(self):
        right = np.arange(40, dtype=float)
        right[20] = 18.5
        segs = monotone_segments(right, np.ones(40, dtype=bool))
        assert segs == [(0, 19), (21, 40)]
        pair = row_pair(np.linspace(0.2, 38.8, 300), right)
        _, ur = match_row(pair, 0)
        assert not np.any((ur > 18) & (ur < 21))

    def test_backward_run_dropped(self):
        right = np.concatenate([np.arange(10.0), np.arange(10.0) + 5])
        segs = monotone_segments(right, np.ones(20, dtype=bool))
        for a, b in segs:
            assert np.all(np.diff(right[a:b]) > 0)
        kept = np.concatenate([right[a:b] for a, b in segs])
        assert np.all(np.diff(kept) > 0)

    @given(st.lists(st.floats(-50, 50), min_size=2, max_size=40))
    def test_segments_strictly_increasing(self, values):
        phase = np.asarray(values)
        segs = monotone_segments(phase, np.ones(phase.size, dtype=bool))
        kept = np.concatenate([phase[a:b] for a, b in segs]) if segs else np.zeros(0)
        assert np.all(np.diff(kept) > 0)

    def test_pair_dimensions_checked(self):
        with pytest.raises(DimensionMismatchError):
            RectifiedPair(PhaseMap(np.zeros((2, 3))), PhaseMap(np.zeros((2, 4))))


class TestTriangulation:
    def test_origin_fixed_point(self, cameras):
        cam_l, cam_r = cameras
        pl, pr = cam_l.project([0, 0, 0]), cam_r.project([0, 0, 0])
        np.testing.assert_allclose(pl, pr)
        cloud, report = triangulate(MatchList([[pl[0], pl[1], pr[0]]]), cam_l, cam_r)
        assert report.accepted == 1
        np.testing.assert_allclose(cloud.points[0], 0.0, atol=1e-9)

    def test_round_trip_random_points(self, cameras):
        cam_l, cam_r = cameras
        rng = np.random.default_rng(4)
        pts = rng.uniform(-1, 1, (200, 3)) * [1.4, 1.4, 0.3]
        ul, ur = cam_l.project(pts), cam_r.project(pts)
        cloud, report = triangulate(MatchList(np.column_stack([ul[:, 0], ul[:, 1], ur[:, 0]])), cam_l, cam_r)
        assert report.accepted == 200
        np.testing.assert_allclose(cloud.points, pts, atol=1e-9)

    def test_disparity_sensitivity_closed_form(self, cameras):
        cam_l, cam_r = cameras
        k = MAGNIFICATION / PIXEL_PITCH_MM
        expected = -1 / (2 * k * np.sin(np.deg2rad(HALF_ANGLE_DEG)))
        base = MatchList([[100.0, 50.0, 97.0], [20.0, 200.0, 25.5]])
        shifted = MatchList(base.matches + [0, 0, 0.1])
        z0 = triangulate(base, cam_l, cam_r)[0].points[:, 2]
        z1 = triangulate(shifted, cam_l, cam_r)[0].points[:, 2]
        np.testing.assert_allclose((z1 - z0) / 0.1, expected, rtol=0.01)
        np.testing.assert_allclose(height_sensitivity(base, cam_l, cam_r), expected, rtol=0.01)

    def test_rank_deficient_rejected(self, cameras):
        cam_l, _ = cameras
        cloud, report = triangulate(MatchList([[1, 2, 3], [4, 5, 6]]), cam_l, cam_l)
        assert len(cloud) == 0 and report.rejected_rank == 2

    def test_residual_gate_and_reprojection(self, cameras):
        cam_l, cam_r = cameras
        skew = AffineCamera(cam_r.projection + [[0, 0, 0, 0], [0, 0, 0, 3.0]])
        ms = MatchList([[128.0, 128.0, 128.0], [60.0, 10.0, 58.0]])
        cloud, report = triangulate(ms, cam_l, skew)
        assert report.rejected_residual == 2 and len(cloud) == 0
        cloud, report = triangulate(ms, cam_l, cam_r)
        assert report.accepted == 2
        for p, (ul, vl, ur) in zip(cloud.points, ms.matches):
            assert np.hypot(*(cam_l.project(p) - [ul, vl])) <= 0.5
            assert np.hypot(*(cam_r.project(p) - [ur, vl])) <= 0.5

    def test_camera_rank_invariant(self):
        with pytest.raises(ValueError):
            AffineCamera([[1, 2, 3, 0], [2, 4, 6, 0]])

    def test_sloped_plane_within_noise_prediction(self, cameras):
        xs = np.linspace(-2, 2, 201)
        x, _ = np.meshgrid(xs, xs)
        scene = Scene(0.1 * x, np.ones_like(x))
        proj, sensor = ProjectorModel(), SensorModel(sigma=1.0)
        left, right, truth = render_stacks(scene, proj, sensor, *cameras, seed=11)
        fl, _, _ = process_view(left)
        fr, _, _ = process_view(right)
        matches = match_pair(RectifiedPair(fl, fr))
        cloud, _ = triangulate(matches, *cameras)
        err = cloud.points[:, 2] - 0.1 * cloud.points[:, 0]
        observed = float(np.sqrt(np.mean(err**2)))
        # per-sample noise is Gaussian plus uniform rounding
        noise = NoiseModel(np.sqrt(sensor.sigma**2 + 1 / 12), proj.steps[-1], 1,
                           level_modulation(proj, len(proj.periods) - 1))
        var = predict_phase_variance(noise)
        predicted = predicted_height_rms(matches, *cameras, truth.phase_right, var, var)
        assert len(cloud) > 0.9 * fl.valid.size
        assert observed <= 1.5 * predicted


class TestFiles:
    def test_camera_round_trip(self, tmp_path, cameras):
        p = tmp_path / "cams.txt"
        save_cameras(*cameras, p)
        cl, cr = load_cameras(p)
        np.testing.assert_array_equal(cl.projection, cameras[0].projection)
        np.testing.assert_array_equal(cr.projection, cameras[1].projection)

    def test_missing_camera_file(self, tmp_path):
        with pytest.raises(CameraFileNotFoundError, match="camera file not found"):
            load_cameras(tmp_path / "nope.txt")

    def test_malformed_camera_file(self, tmp_path):
        p = tmp_path / "bad.txt"
        p.write_text("1 2 3\n")
        with pytest.raises(ImageFormatError):
            load_cameras(p)

    def test_matches_round_trip(self, tmp_path):
        p = tmp_path / "m.txt"
        ms = MatchList([[3, 4, 1.0 / 3], [5, 6, 7.25]])
        save_matches(ms, p)
        np.testing.assert_array_equal(load_matches(p).matches, ms.matches)
