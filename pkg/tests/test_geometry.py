"""Oracle tests for the closed-form rig geometry.

Frozen expected values were computed independently (math.atan and exact
Fraction arithmetic) before the implementation was written.
"""

import json
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nearfield.geometry import (
    CalibrationData,
    CalibrationError,
    CameraIntrinsics,
    HeightEstimate,
    RigGeometry,
    StripeObservation,
    displacement_sensitivity,
    estimate_height,
    estimate_homography,
    forward_parallax,
    height_from_parallax,
    load_calibration,
    parallax_angle,
    save_calibration,
    warp_point,
)

RIG = RigGeometry(h_cam_mm=400.0, h_light_mm=200.0, d_light_mm=300.0)


class TestParallaxAngle:
    def test_frozen_example(self):
        # atan(100/1000) - atan(50/1000), frozen from math.atan
        assert parallax_angle(100.0, 50.0, 1000.0) == pytest.approx(
            0.04971025676921927, abs=1e-15
        )

    def test_corner_at_principal_point(self):
        assert parallax_angle(0.0, -100.0, 1000.0) == pytest.approx(
            0.09966865249116204, abs=1e-15
        )

    def test_zero_when_coincident(self):
        assert parallax_angle(42.0, 42.0, 600.0) == 0.0

    def test_antisymmetric(self):
        a = parallax_angle(80.0, -30.0, 700.0)
        b = parallax_angle(-30.0, 80.0, 700.0)
        assert a == pytest.approx(-b, abs=1e-15)

    @pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
    def test_non_finite_rejected(self, bad):
        with pytest.raises(ValueError):
            parallax_angle(bad, 0.0, 1000.0)
        with pytest.raises(ValueError):
            parallax_angle(0.0, bad, 1000.0)

    def test_bad_focal_rejected(self):
        with pytest.raises(ValueError):
            parallax_angle(10.0, 5.0, 0.0)
        with pytest.raises(ValueError):
            parallax_angle(10.0, 5.0, -2.0)


class TestHeightFromParallax:
    def test_canonical_example_exact(self):
        # Fraction oracle: tan(phi)=1/2 with (200, 400, 300) gives exactly
        # h_obj=100, d_obj=150, and d_obj/(h_cam-h_obj)=1/2.
        est = height_from_parallax(math.atan(0.5), RIG)
        assert est.h_obj_mm == pytest.approx(100.0, abs=1e-9)
        assert est.d_obj_mm == pytest.approx(150.0, abs=1e-9)
        assert est.valid

    def test_consistency_of_returned_triple(self):
        est = height_from_parallax(math.atan(0.5), RIG)
        lhs = math.tan(est.phi_1_rad)
        rhs = est.d_obj_mm / (RIG.h_cam_mm - est.h_obj_mm)
        assert lhs == pytest.approx(rhs, rel=1e-9)
        # and the similar-triangle relation for d_obj
        assert est.d_obj_mm == pytest.approx(
            RIG.d_light_mm * (1.0 - est.h_obj_mm / RIG.h_light_mm), rel=1e-9
        )

    def test_zero_angle_gives_emitter_height(self):
        est = height_from_parallax(0.0, RIG)
        assert est.h_obj_mm == pytest.approx(RIG.h_light_mm, abs=1e-12)
        # h_obj == h_light is outside [0, min(h_cam, h_light))
        assert not est.valid

    def test_resting_stripe_gives_zero_height(self):
        phi = math.atan(RIG.d_light_mm / RIG.h_cam_mm)
        est = height_from_parallax(phi, RIG)
        assert est.h_obj_mm == pytest.approx(0.0, abs=1e-9)
        assert est.d_obj_mm == pytest.approx(RIG.d_light_mm, abs=1e-9)
        assert est.valid

    def test_out_of_range_flagged_not_clamped(self):
        est = height_from_parallax(-0.05, RIG)
        assert est.h_obj_mm > RIG.h_light_mm
        assert not est.valid
        est2 = height_from_parallax(math.atan(0.8), RIG)
        assert est2.h_obj_mm < 0.0
        assert not est2.valid

    def test_degenerate_denominator_raises(self):
        # tan(phi) = d_light / h_light makes the denominator vanish
        with pytest.raises(ValueError, match="degenerate"):
            height_from_parallax(math.atan(RIG.d_light_mm / RIG.h_light_mm), RIG)

    def test_non_finite_raises(self):
        with pytest.raises(ValueError):
            height_from_parallax(math.nan, RIG)


class TestForwardParallax:
    def test_inverse_of_canonical_example(self):
        assert forward_parallax(100.0, RIG) == pytest.approx(
            math.atan(0.5), abs=1e-12
        )

    def test_zero_height_is_resting_ray(self):
        assert math.tan(forward_parallax(0.0, RIG)) == pytest.approx(
            RIG.d_light_mm / RIG.h_cam_mm, rel=1e-12
        )

    def test_emitter_height_gives_zero(self):
        assert forward_parallax(RIG.h_light_mm, RIG) == pytest.approx(0.0, abs=1e-15)

    def test_height_at_or_above_camera_rejected(self):
        with pytest.raises(ValueError):
            forward_parallax(RIG.h_cam_mm, RIG)

    @settings(max_examples=300, deadline=None)
    @given(
        h_cam=st.floats(60.0, 1500.0),
        h_light=st.floats(50.0, 1400.0),
        d_light=st.floats(50.0, 2500.0),
        frac=st.floats(0.0, 0.98),
    )
    def test_round_trip_property(self, h_cam, h_light, d_light, frac):
        if abs(h_cam - h_light) < 1.0:
            h_cam = h_light + 1.0
        rig = RigGeometry(h_cam_mm=h_cam, h_light_mm=h_light, d_light_mm=d_light)
        h_obj = frac * min(h_cam, h_light)
        est = height_from_parallax(forward_parallax(h_obj, rig), rig)
        assert est.h_obj_mm == pytest.approx(h_obj, rel=1e-9, abs=1e-9)
        assert est.d_obj_mm == pytest.approx(
            d_light * (1.0 - est.h_obj_mm / h_light), rel=1e-9, abs=1e-9
        )
        assert math.tan(est.phi_1_rad) == pytest.approx(
            est.d_obj_mm / (h_cam - est.h_obj_mm), rel=1e-9, abs=1e-12
        )


class TestEstimateHeight:
    def test_composes_observation_to_estimate(self):
        intr = CameraIntrinsics(f_x=600.0, cx=576.0, cy=324.0, width=1152, height=648)
        phi = forward_parallax(100.0, RIG)
        # synthesize pixel coordinates with the corner at +120 px
        x_corner = 120.0
        theta = math.atan(x_corner / intr.f_x)
        x_obj = intr.f_x * math.tan(theta - phi)
        est = estimate_height(StripeObservation(x_corner, x_obj), intr, RIG)
        assert est.h_obj_mm == pytest.approx(100.0, rel=1e-9)

    def test_observation_ordering_enforced(self):
        with pytest.raises(ValueError, match="x_corner"):
            StripeObservation(x_corner=10.0, x_obj=20.0)


def _solve_homography_exact(src, dst):
    """Independent oracle: exact rational solve of the 8x8 DLT system."""
    A = []
    b = []
    for (x, y), (u, v) in zip(src, dst):
        x, y, u, v = Fraction(x), Fraction(y), Fraction(u), Fraction(v)
        A.append([x, y, 1, 0, 0, 0, -u * x, -u * y])
        b.append(u)
        A.append([0, 0, 0, x, y, 1, -v * x, -v * y])
        b.append(v)
    n = 8
    M = [row[:] + [rhs] for row, rhs in zip(A, b)]
    for col in range(n):
        pivot = next(r for r in range(col, n) if M[r][col] != 0)
        M[col], M[pivot] = M[pivot], M[col]
        inv = Fraction(1, 1) / M[col][col]
        M[col] = [val * inv for val in M[col]]
        for r in range(n):
            if r != col and M[r][col] != 0:
                factor = M[r][col]
                M[r] = [a - factor * c for a, c in zip(M[r], M[col])]
    h = [M[r][n] for r in range(n)] + [Fraction(1)]
    return [h[0:3], h[3:6], h[6:9]]


def _warp_exact(H, pt):
    x, y = Fraction(pt[0]), Fraction(pt[1])
    w = H[2][0] * x + H[2][1] * y + H[2][2]
    return (
        (H[0][0] * x + H[0][1] * y + H[0][2]) / w,
        (H[1][0] * x + H[1][1] * y + H[1][2]) / w,
    )


SRC_QUAD = [(0, 0), (100, 0), (100, 100), (0, 100)]
DST_QUAD = [(10, 20), (210, 15), (180, 160), (30, 140)]


class TestHomography:
    def test_identity(self):
        pts = np.array(SRC_QUAD, dtype=float)
        H = estimate_homography(pts, pts)
        assert np.allclose(H, np.eye(3), atol=1e-9)

    def test_pure_scale(self):
        src = np.array(SRC_QUAD, dtype=float)
        H = estimate_homography(src, src * 2.0)
        assert np.allclose(H, np.diag([2.0, 2.0, 1.0]), atol=1e-9)

    def test_fifth_point_against_exact_rational_solve(self):
        H = estimate_homography(np.array(SRC_QUAD, float), np.array(DST_QUAD, float))
        H_exact = _solve_homography_exact(SRC_QUAD, DST_QUAD)
        for probe in [(50, 50), (25, 75), (90, 10)]:
            ux, uy = warp_point(probe, H)
            ex, ey = _warp_exact(H_exact, probe)
            assert ux == pytest.approx(float(ex), abs=1e-6)
            assert uy == pytest.approx(float(ey), abs=1e-6)

    def test_corners_map_exactly(self):
        H = estimate_homography(np.array(SRC_QUAD, float), np.array(DST_QUAD, float))
        for s, d in zip(SRC_QUAD, DST_QUAD):
            mx, my = warp_point(s, H)
            assert mx == pytest.approx(d[0], abs=1e-6)
            assert my == pytest.approx(d[1], abs=1e-6)

    def test_cross_ratio_preserved_on_a_line(self):
        H = estimate_homography(np.array(SRC_QUAD, float), np.array(DST_QUAD, float))
        ts = [10.0, 40.0, 70.0, 90.0]
        src_line = [(t, t) for t in ts]
        imgs = [np.array(warp_point(p, H)) for p in src_line]
        # signed parameter along the image line
        direction = imgs[-1] - imgs[0]
        direction /= np.linalg.norm(direction)
        params = [float(np.dot(img - imgs[0], direction)) for img in imgs]

        def cross_ratio(p):
            return ((p[0] - p[2]) * (p[1] - p[3])) / ((p[1] - p[2]) * (p[0] - p[3]))

        assert cross_ratio(params) == pytest.approx(cross_ratio(ts), rel=1e-9)

    def test_too_few_points(self):
        pts = np.array(SRC_QUAD[:3], float)
        with pytest.raises(ValueError, match="at least 4"):
            estimate_homography(pts, pts)

    def test_collinear_points_degenerate(self):
        src = np.array([(0, 0), (10, 10), (20, 20), (30, 30)], float)
        dst = np.array(DST_QUAD, float)
        with pytest.raises(ValueError):
            estimate_homography(src, dst)

    def test_warp_point_at_infinity(self):
        H = np.array([[1.0, 0, 0], [0, 1.0, 0], [1.0, 0, 1.0]])
        with pytest.raises(ValueError, match="infinity"):
            warp_point((-1.0, 5.0), H)

    def test_round_trip_through_inverse(self):
        H = estimate_homography(np.array(SRC_QUAD, float), np.array(DST_QUAD, float))
        Hinv = np.linalg.inv(H)
        for probe in [(12.5, 33.0), (77.0, 2.0)]:
            fwd = warp_point(probe, H)
            back = warp_point(fwd, Hinv)
            assert back[0] == pytest.approx(probe[0], abs=1e-6)
            assert back[1] == pytest.approx(probe[1], abs=1e-6)


class TestDisplacementSensitivity:
    def test_zero_height_zero_displacement(self):
        assert displacement_sensitivity(RIG, 0.0) == pytest.approx(0.0, abs=1e-12)

    def test_strictly_increasing_in_camera_offset(self):
        values = [
            displacement_sensitivity(
                RigGeometry(h_cam_mm=z, h_light_mm=200.0, d_light_mm=300.0), 80.0
            )
            for z in (250.0, 300.0, 350.0, 400.0)
        ]
        assert all(b > a for a, b in zip(values, values[1:]))

    def test_increasing_below_the_emitter_too(self):
        values = [
            displacement_sensitivity(
                RigGeometry(h_cam_mm=z, h_light_mm=200.0, d_light_mm=300.0), 60.0
            )
            for z in (180.0, 150.0, 120.0)
        ]
        assert all(b > a for a, b in zip(values, values[1:]))

    @settings(max_examples=200, deadline=None)
    @given(
        h_light=st.floats(100.0, 600.0),
        d_light=st.floats(100.0, 800.0),
        off_lo=st.floats(5.0, 200.0),
        extra=st.floats(1.0, 300.0),
        frac=st.floats(0.05, 0.9),
    )
    def test_monotonic_property_above_emitter(self, h_light, d_light, off_lo, extra, frac):
        h_obj = frac * h_light
        rig_a = RigGeometry(h_cam_mm=h_light + off_lo, h_light_mm=h_light, d_light_mm=d_light)
        rig_b = RigGeometry(
            h_cam_mm=h_light + off_lo + extra, h_light_mm=h_light, d_light_mm=d_light
        )
        if h_obj >= min(rig_a.h_cam_mm, h_light):
            return
        assert displacement_sensitivity(rig_b, h_obj) > displacement_sensitivity(
            rig_a, h_obj
        )

    def test_equal_heights_warn_and_zero(self):
        with pytest.warns(UserWarning, match="sensitivity"):
            rig = RigGeometry(h_cam_mm=200.0, h_light_mm=200.0, d_light_mm=300.0)
        assert displacement_sensitivity(rig, 50.0) == pytest.approx(0.0, abs=1e-12)

    def test_out_of_range_height_rejected(self):
        with pytest.raises(ValueError):
            displacement_sensitivity(RIG, 200.0)
        with pytest.raises(ValueError):
            displacement_sensitivity(RIG, -1.0)


class TestCalibrationIO:
    def _calib(self):
        intr = CameraIntrinsics(f_x=600.0, cx=576.0, cy=324.0, width=1152, height=648)
        H = np.array([[0.5, 0.01, -3.0], [0.0, 0.52, -1.0], [0.0, 0.001, 1.0]])
        return CalibrationData(
            intrinsics=intr,
            rig=RIG,
            homography=H,
            extras={"gap_threshold_mm": 5.0, "pixel_convention": "pre-rectification"},
        )

    def test_round_trip(self, tmp_path):
        path = tmp_path / "calib.json"
        save_calibration(self._calib(), path)
        loaded = load_calibration(path)
        assert loaded.intrinsics == self._calib().intrinsics
        assert loaded.rig == RIG
        assert np.allclose(loaded.homography, self._calib().homography)
        assert loaded.extras["gap_threshold_mm"] == 5.0

    def test_missing_file(self, tmp_path):
        with pytest.raises(CalibrationError, match="not found"):
            load_calibration(tmp_path / "nope.json")

    def test_malformed_json_reports_position(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"intrinsics": {,}')
        with pytest.raises(CalibrationError, match=r"line 1 column"):
            load_calibration(path)

    def test_missing_keys(self, tmp_path):
        path = tmp_path / "partial.json"
        path.write_text(json.dumps({"intrinsics": {"f_x": 600}}))
        with pytest.raises(CalibrationError):
            load_calibration(path)

    def test_singular_homography_rejected(self, tmp_path):
        path = tmp_path / "singular.json"
        payload = {
            "intrinsics": {"f_x": 600, "cx": 576, "cy": 324, "width": 1152, "height": 648},
            "rig": {"h_cam_mm": 400, "h_light_mm": 200, "d_light_mm": 300},
            "homography": [[1, 0, 0], [2, 0, 0], [0, 0, 1]],
        }
        path.write_text(json.dumps(payload))
        with pytest.raises(CalibrationError, match="invertible"):
            load_calibration(path)

    def test_wrong_shape_rejected(self, tmp_path):
        path = tmp_path / "shape.json"
        payload = {
            "intrinsics": {"f_x": 600, "cx": 576, "cy": 324, "width": 1152, "height": 648},
            "rig": {"h_cam_mm": 400, "h_light_mm": 200, "d_light_mm": 300},
            "homography": [[1, 0], [0, 1]],
        }
        path.write_text(json.dumps(payload))
        with pytest.raises(CalibrationError, match="3x3"):
            load_calibration(path)

    def test_homography_normalised_on_load(self, tmp_path):
        path = tmp_path / "scaled.json"
        payload = {
            "intrinsics": {"f_x": 600, "cx": 576, "cy": 324, "width": 1152, "height": 648},
            "rig": {"h_cam_mm": 400, "h_light_mm": 200, "d_light_mm": 300},
            "homography": (np.diag([2.0, 2.0, 4.0])).tolist(),
        }
        path.write_text(json.dumps(payload))
        loaded = load_calibration(path)
        assert loaded.homography[2, 2] == pytest.approx(1.0)


class TestValidation:
    def test_rig_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            RigGeometry(h_cam_mm=0.0, h_light_mm=200.0, d_light_mm=300.0)
        with pytest.raises(ValueError):
            RigGeometry(h_cam_mm=400.0, h_light_mm=-5.0, d_light_mm=300.0)

    def test_intrinsics_reject_bad_values(self):
        with pytest.raises(ValueError):
            CameraIntrinsics(f_x=-1.0, cx=0, cy=0, width=10, height=10)
        with pytest.raises(ValueError):
            CameraIntrinsics(f_x=100.0, cx=0, cy=0, width=0, height=10)

    def test_height_estimate_is_plain_record(self):
        est = HeightEstimate(h_obj_mm=10.0, d_obj_mm=20.0, phi_1_rad=0.1, valid=True)
        assert est.valid
