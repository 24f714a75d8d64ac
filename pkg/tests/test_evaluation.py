import math

import numpy as np
import pytest

from gpreg.chromosome import Chromosome
from gpreg.evaluation import (
    ControlPointError,
    ControlPointSet,
    GroundTruthTransform,
    control_grid,
    degrees_to_radians,
    make_synthetic_pair,
    make_texture_scene,
    read_control_points,
    rmse,
    uses_rotation,
    write_control_points,
)
from gpreg.expr import EvalContext, evaluate, parse
from gpreg.imaging import GrayImage

from oracles import bilinear


def truth(tx, ty):
    return GroundTruthTransform(parse(tx), parse(ty))


PAIR1 = truth("(sub x (const 50))", "(sub y (const 100))")


class TestTextureScene:
    def test_deterministic_and_full_range(self):
        a = make_texture_scene(64, seed=1)
        assert a == make_texture_scene(64, seed=1)
        assert a != make_texture_scene(64, seed=2)
        assert a.dims == (64, 64)
        assert a.pixels.min() == 0 and a.pixels.max() == 255

    def test_smooth(self):
        img = make_texture_scene(128, seed=0).pixels.astype(float)
        neighbour = np.abs(np.diff(img, axis=1)).mean()
        shuffled = np.abs(np.diff(np.random.default_rng(0).permutation(img.ravel()))).mean()
        assert neighbour < shuffled / 5


class TestSyntheticPair:
    def test_pair1_recipe(self):
        scene = make_texture_scene(512, seed=3)
        ref, sensed, points = make_synthetic_pair(scene, PAIR1)
        assert ref == scene
        assert sensed.pixels[110, 60] == scene.pixels[10, 10]
        assert np.array_equal(sensed.pixels[100:, 50:], scene.pixels[: 512 - 100, : 512 - 50])
        # preimages off the scene are black
        assert (sensed.pixels[:100, :] == 0).all()

    def test_identity(self):
        scene = make_texture_scene(64, seed=4)
        ref, sensed, points = make_synthetic_pair(scene, truth("x", "y"), (40, 30))
        assert sensed == GrayImage(scene.pixels[:30, :40])
        assert np.array_equal(points.reference_points, points.sensed_points)
        assert len(points) == 16

    def test_control_grid_is_interior(self):
        g = control_grid((256, 256))
        assert g.shape == (16, 2)
        assert sorted(set(g[:, 0])) == [51.0, 102.0, 153.0, 204.0]
        assert sorted(set(g[:, 1])) == [51.0, 102.0, 153.0, 204.0]

    def test_control_points_follow_truth(self):
        scene = make_texture_scene(256, seed=5)
        _, _, points = make_synthetic_pair(scene, truth("(sub x (const 12))", "(sub y (const 23))"))
        assert np.array_equal(points.reference_points, points.sensed_points - [12, 23])
        assert points.sensed_dims == (256, 256)

    def test_off_scene_control_point(self):
        scene = make_texture_scene(64, seed=6)
        with pytest.raises(ControlPointError, match="off-scene"):
            make_synthetic_pair(scene, truth("(add x (const 40))", "y"))

    def test_bilinear_resampling_matches_oracle(self):
        scene = make_texture_scene(48, seed=7)
        t = truth("(add (mul x (const 0.7)) (const 3.3))", "(add (mul y (const 0.8)) (const 1.6))")
        _, sensed, _ = make_synthetic_pair(scene, t)
        rows = scene.pixels.tolist()
        for y in range(0, 48, 5):
            for x in range(0, 48, 5):
                v = bilinear(rows, 0.7 * x + 3.3, 0.8 * y + 1.6)
                assert sensed.pixels[y, x] == math.floor(v + 0.5)

    def test_rotation_recipe(self):
        t = truth("(add (rotx (const 0.2618)) (const 15))", "(sub (roty (const 0.2618)) (const 165))")
        scene = make_texture_scene(1400, seed=8)
        ref, sensed, points = make_synthetic_pair(scene, t, (1300, 1300))
        assert sensed.dims == (1300, 1300)
        assert rmse(t.as_chromosome(), points) < 1e-9
        x, y = 650.0, 650.0  # the centre only translates
        assert points.sensed_dims == (1300, 1300)
        cx = evaluate(t.tx_expr, EvalContext(x, y, 1300, 1300))
        cy = evaluate(t.ty_expr, EvalContext(x, y, 1300, 1300))
        assert (cx, cy) == pytest.approx((665.0, 485.0), abs=1e-9)


class TestRmse:
    def test_truth_scores_zero(self):
        t = truth("(add (rotx (const 0.2618)) (const 8))", "(sub (roty (const 0.2618)) (const 10))")
        _, _, points = make_synthetic_pair(make_texture_scene(256, seed=9), t)
        assert rmse(t.as_chromosome(), points) < 1e-9

    def test_three_four_five(self):
        points = ControlPointSet([(0.0, 0.0)], [(0.0, 0.0)])
        found = Chromosome(parse("(add x (const 3))"), parse("(add y (const 4))"))
        assert rmse(found, points) == 5.0

    def test_permutation_invariant(self):
        rng = np.random.default_rng(10)
        ref = rng.uniform(0, 100, (10, 2))
        sen = rng.uniform(0, 100, (10, 2))
        found = Chromosome(parse("(mul x (const 1.1))"), parse("(sub y (const 2))"))
        perm = rng.permutation(10)
        a = rmse(found, ControlPointSet(ref, sen))
        b = rmse(found, ControlPointSet(ref[perm], sen[perm]))
        assert a == pytest.approx(b, abs=1e-12)

    @pytest.mark.parametrize("dx, dy", [(3, 4), (0, 2.5), (-1, 1)])
    def test_uniform_displacement_gives_its_length(self, dx, dy):
        grid = control_grid((256, 256))
        points = ControlPointSet(grid - [50, 100], grid)
        found = Chromosome(parse(f"(sub x (const {50 - dx}))"), parse(f"(sub y (const {100 - dy}))"))
        assert rmse(found, points) == pytest.approx(math.hypot(dx, dy), abs=1e-12)

    def test_table2_row_d_shift(self):
        # TX = (0.47 - 5.11) + x, TY = cos(24.8 degrees) + (y - 45.05)
        tx = parse("(add (sub (const 0.47) (const 5.11)) x)")
        ty = degrees_to_radians(parse("(add (cos (const 24.8)) (sub y (const 45.05)))"))
        want = (0.47 - 5.11, math.cos(math.radians(24.8)) - 45.05)
        assert want[0] == pytest.approx(-4.64, abs=1e-12)
        rng = np.random.default_rng(12)
        for x, y in rng.uniform(0, 256, (50, 2)):
            ctx = EvalContext(x, y, 256, 256)
            assert evaluate(tx, ctx) - x == pytest.approx(want[0], abs=1e-9)
            assert evaluate(ty, ctx) - y == pytest.approx(want[1], abs=1e-9)

    def test_degrees_conversion_only_touches_angles(self):
        t = degrees_to_radians(parse("(add (rotx (const 90)) (sin x))"))
        assert uses_rotation(t)
        assert not uses_rotation(parse("(add x (cos y))"))
        ctx = EvalContext(51, 50, 100, 100)
        assert evaluate(t, ctx) == pytest.approx(50 + math.sin(math.radians(51)), abs=1e-12)


class TestControlPointCsv:
    def test_round_trip(self, tmp_path):
        pts = ControlPointSet([(1.5, 2.25), (3.0, 4.0)], [(0.1, 0.2), (7.0, 8.0)], (10, 10))
        write_control_points(pts, tmp_path / "p.csv")
        text = (tmp_path / "p.csv").read_text().splitlines()
        assert text[0] == "ref_x,ref_y,sensed_x,sensed_y"
        back = read_control_points(tmp_path / "p.csv", (10, 10))
        assert np.array_equal(back.reference_points, pts.reference_points)
        assert np.array_equal(back.sensed_points, pts.sensed_points)
        assert back.sensed_dims == (10, 10)

    @pytest.mark.parametrize(
        "body, message",
        [
            ("ref_x,ref_y,sensed_x,sensed_y\n", "no control point rows"),
            ("x,y\n1,2\n", "line 1"),
            ("ref_x,ref_y,sensed_x,sensed_y\n1,2,3,4\n1,2,3\n", "line 3"),
            ("ref_x,ref_y,sensed_x,sensed_y\n1,2,abc,4\n", "line 2"),
            ("ref_x,ref_y,sensed_x,sensed_y\n1,nan,3,4\n", "line 2"),
            ("", "line 1"),
        ],
    )
    def test_malformed(self, tmp_path, body, message):
        (tmp_path / "bad.csv").write_text(body)
        with pytest.raises(ControlPointError, match=message):
            read_control_points(tmp_path / "bad.csv")

    def test_set_validation(self):
        with pytest.raises(ValueError):
            ControlPointSet([], [])
        with pytest.raises(ValueError):
            ControlPointSet([(0, 0)], [(0, 0), (1, 1)])
