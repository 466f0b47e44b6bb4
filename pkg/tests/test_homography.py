import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ptlayer.homography import (CameraExtrinsics, CameraIntrinsics, DegenerateHomographyError,
                                Homography, HorizonError, apply, compose, format_homography,
                                from_camera, from_params, from_point_pairs, identity, invert,
                                parse_homography, read_homography, translation, write_homography)

UNIT = [(0, 0), (1, 0), (1, 1), (0, 1)]


def random_homography(rng, size=64.0, reach=0.2):
    corners = np.array([[0, 0], [size, 0], [size, size], [0, size]], dtype=float)
    return from_point_pairs(corners, corners + rng.uniform(-reach, reach, corners.shape) * size)


@st.composite
def homographies(draw):
    seed = draw(st.integers(0, 2**32 - 1))
    return random_homography(np.random.default_rng(seed))


def min_triangle_area(pts):
    def area(a, b, c):
        return abs((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])) / 2

    return min(area(pts[i], pts[j], pts[k])
               for i, j, k in itertools.combinations(range(4), 3))


class TestConstruction:
    def test_identity(self):
        h = identity()
        assert h.apply((5, 7)) == (5, 7)
        assert h.m[2, 2] == 1.0
        np.testing.assert_array_equal(h.m, np.eye(3))

    def test_from_params_identity(self):
        assert from_params([1, 0, 0, 0, 1, 0, 0, 0]) == identity()

    def test_from_params_translation(self):
        assert from_params([1, 0, 2, 0, 1, 0, 0, 0]).apply((1, 1)) == (3, 1)

    def test_from_params_projective(self):
        x, y = from_params([1, 0, 0, 0, 1, 0, 0.1, 0]).apply((2, 3))
        assert x == pytest.approx(2 / 1.2, abs=1e-15)
        assert y == pytest.approx(2.5, abs=1e-15)

    def test_from_params_singular(self):
        with pytest.raises(DegenerateHomographyError):
            from_params([1, 2, 0, 2, 4, 0, 0, 0])

    def test_from_params_wrong_length(self):
        with pytest.raises(ValueError):
            from_params([1, 0, 0])

    def test_normalizes(self):
        h = Homography(2.0 * np.eye(3))
        assert h == identity()

    def test_params_round_trip(self, rng):
        h = random_homography(rng)
        assert from_params(h.params()) == h

    def test_immutable(self):
        with pytest.raises(ValueError):
            identity().m[0, 0] = 2.0


class TestCamera:
    @staticmethod
    def oracle(intr, extr):
        """Explicit product of the 3x4 internal and 4x4 external matrices, plane z = 0."""
        c = np.zeros((3, 4))
        a, b = intr.matrix(), extr.matrix()
        for i in range(3):
            for j in range(4):
                c[i, j] = sum(a[i, k] * b[k, j] for k in range(4))
        h = c[:, [0, 1, 3]]
        return h / h[2, 2]

    def test_canonical_camera_with_unit_depth(self):
        h = from_camera(CameraIntrinsics(), CameraExtrinsics(tr=(0, 0, 1)))
        assert h == identity()

    def test_focal_length(self):
        h = from_camera(CameraIntrinsics(f=2.0), CameraExtrinsics(tr=(0, 0, 1)))
        np.testing.assert_array_equal(h.m, np.diag([2.0, 2.0, 1.0]))

    def test_depth_scales(self):
        h = from_camera(CameraIntrinsics(), CameraExtrinsics(tr=(0, 0, 2)))
        np.testing.assert_array_equal(h.m, np.diag([0.5, 0.5, 1.0]))

    def test_zero_translation_is_degenerate(self):
        # the plane z = 0 passes through the camera centre
        with pytest.raises(DegenerateHomographyError):
            from_camera(CameraIntrinsics(), CameraExtrinsics())

    def test_matches_product_oracle(self, rng):
        for _ in range(50):
            intr = CameraIntrinsics(*rng.uniform(0.5, 2, 3), *rng.uniform(-1, 1, 3))
            extr = CameraExtrinsics(rng.uniform(-1, 1, (3, 3)) + 2 * np.eye(3),
                                    rng.uniform(-1, 1, 3) + (0, 0, 3))
            np.testing.assert_allclose(from_camera(intr, extr).m, self.oracle(intr, extr),
                                       rtol=0, atol=1e-12)

    def test_rotation_not_validated(self):
        r = ((2.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))
        h = from_camera(CameraIntrinsics(), CameraExtrinsics(r, (0, 0, 1)))
        np.testing.assert_array_equal(h.m, np.diag([2.0, 1.0, 1.0]))

    def test_intrinsics_validated(self):
        with pytest.raises(ValueError):
            CameraIntrinsics(f=0.0)


class TestApply:
    def test_identity(self):
        assert apply(identity(), (3.5, -2)) == (3.5, -2)

    def test_horizon(self):
        with pytest.raises(HorizonError):
            apply(from_params([1, 0, 0, 0, 1, 0, -0.5, 0]), (2, 0))

    def test_two_argument_form(self):
        h = from_params([1, 0, 0, 0, 1, 0, 0.1, 0])
        assert h.apply(2, 3) == h.apply((2, 3))

    def test_apply_points(self, rng):
        h = random_homography(rng)
        pts = rng.uniform(0, 64, (5, 2))
        np.testing.assert_array_equal(h.apply_points(pts), [h.apply(p) for p in pts])

    @settings(max_examples=200)
    @given(st.lists(st.floats(-2, 2), min_size=6, max_size=6),
           st.lists(st.floats(-10, 10), min_size=4, max_size=4), st.floats(0, 1))
    def test_affine_preserves_ratios(self, p, ends, t):
        p = np.array(p)
        p[[0, 4]] += 3.0  # keeps the linear part invertible
        h = from_params(list(p) + [0, 0])
        a, b = np.array(ends[:2]), np.array(ends[2:])
        ma, mb = np.array(h.apply(a)), np.array(h.apply(b))
        mt = np.array(h.apply(a + t * (b - a)))
        np.testing.assert_allclose(mt - ma, t * (mb - ma), rtol=0, atol=1e-12 * (1 + np.abs(mb - ma).max()))


class TestCompose:
    def test_identity_neutral(self, rng):
        h = random_homography(rng)
        assert compose(identity(), h) == h
        assert compose(h, identity()) == h

    def test_translations(self):
        assert compose(translation(2, 0), translation(3, 0)) == translation(5, 0)

    def test_inverse_round_trip_points(self, rng):
        h = random_homography(rng)
        c = compose(h, invert(h))
        for p in rng.uniform(0, 64, (100, 2)):
            assert np.max(np.abs(np.subtract(c.apply(p), p))) < 1e-9

    def test_order(self):
        a, b = translation(1, 0), from_params([2, 0, 0, 0, 1, 0, 0, 0])
        assert (a @ b).apply((1, 0)) == a.apply(b.apply((1, 0)))

    @settings(max_examples=50)
    @given(homographies(), homographies(), homographies())
    def test_associative(self, a, b, c):
        left = compose(compose(a, b), c).m
        right = compose(a, compose(b, c)).m
        np.testing.assert_allclose(left, right, rtol=0, atol=1e-12 * max(1.0, np.abs(left).max()))

    @settings(max_examples=50)
    @given(homographies(), st.floats(0, 60), st.floats(0, 60))
    def test_composition_law(self, h, x, y):
        g = invert(h)
        try:
            expected = h.apply(g.apply((x, y)))
        except HorizonError:
            return
        np.testing.assert_allclose(compose(h, g).apply((x, y)), expected, rtol=0, atol=1e-9)

    def test_degenerate_product(self):
        # the translation moves the origin onto b's horizon line y = 1
        b = Homography([[1, 0, 0], [0, 1, 0], [0, -1, 1]])
        with pytest.raises(DegenerateHomographyError):
            compose(b, translation(0, 1))


class TestInvert:
    def test_identity(self):
        assert invert(identity()) == identity()

    def test_translation(self):
        assert invert(translation(2, 0)) == translation(-2, 0)

    def test_projective_two_sided(self):
        h = from_params([1, 0, 0, 0, 1, 0, 0.1, 0])
        for c in (compose(invert(h), h), compose(h, invert(h))):
            np.testing.assert_allclose(c.m, np.eye(3), rtol=0, atol=1e-12)

    @settings(max_examples=100)
    @given(homographies())
    def test_two_sided_inverse(self, h):
        for c in (compose(invert(h), h), compose(h, invert(h))):
            np.testing.assert_allclose(c.m, np.eye(3), rtol=0, atol=1e-12)


class TestPointPairs:
    def test_identity(self):
        np.testing.assert_allclose(from_point_pairs(UNIT, UNIT).m, np.eye(3), atol=1e-15)

    def test_translation(self):
        h = from_point_pairs(UNIT, np.add(UNIT, (2, 1)))
        np.testing.assert_allclose(h.m, translation(2, 1).m, atol=1e-14)

    def test_trapezoid(self):
        dst = [(0, 0), (1, 0), (0.8, 1), (0.2, 1)]
        h = from_point_pairs(UNIT, dst)
        assert h.m[2, 0] != 0 or h.m[2, 1] != 0
        for s, d in zip(UNIT, dst):
            np.testing.assert_allclose(h.apply(s), d, rtol=0, atol=1e-9)

    def test_collinear_rejected(self):
        with pytest.raises(DegenerateHomographyError):
            from_point_pairs([(0, 0), (1, 1), (2, 2), (0, 1)], UNIT)
        with pytest.raises(DegenerateHomographyError):
            from_point_pairs(UNIT, [(0, 0), (1, 0), (2, 0), (0, 1)])

    def test_thousand_random_quadrilaterals(self):
        rng = np.random.default_rng(2024)
        done = 0
        while done < 1000:
            src = rng.uniform(-100, 100, (4, 2))
            dst = rng.uniform(-100, 100, (4, 2))
            if min(min_triangle_area(src), min_triangle_area(dst)) < 50.0:
                continue
            try:
                h = from_point_pairs(src, dst)
            except DegenerateHomographyError:
                continue
            for s, d in zip(src, dst):
                try:
                    got = h.apply(s)
                except HorizonError:
                    pytest.fail("source point mapped to the horizon")
                np.testing.assert_allclose(got, d, rtol=0, atol=1e-9)
            done += 1

    @settings(max_examples=200)
    @given(st.integers(0, 2**32 - 1), st.floats(1, 1000))
    def test_reprojection_scales(self, seed, size):
        rng = np.random.default_rng(seed)
        src = np.array([[0, 0], [size, 0], [size, size], [0, size]])
        dst = src + rng.uniform(-0.25, 0.25, src.shape) * size
        h = from_point_pairs(src, dst)
        assert h.m[2, 2] == 1.0
        for s, d in zip(src, dst):
            np.testing.assert_allclose(h.apply(s), d, rtol=0, atol=1e-9 * max(1.0, size / 100))


class TestTextFormat:
    def test_round_trip_exact(self, rng, tmp_path):
        h = random_homography(rng)
        assert parse_homography(format_homography(h)) == h
        write_homography(h, tmp_path / "h.txt")
        assert read_homography(tmp_path / "h.txt") == h

    def test_layout(self):
        lines = format_homography(translation(2, 0)).splitlines()
        assert lines == ["1 0 2", "0 1 0", "0 0 1"]

    @pytest.mark.parametrize("text", ["1 0 0\n0 1 0\n", "1 0 0\n0 1 0\n0 0 x\n", "1 0\n0 1\n0 0\n"])
    def test_rejects(self, text):
        with pytest.raises(ValueError):
            parse_homography(text)
