"""
Tests for surfaces, predictions, evaluation and synthetic scenes.

Verifies:
- iso-contours at the bench ends and in between
- prism and frustum shells, enclosed volume, STL export
- linear extrapolation below the floor, degenerate predictions
- zero-order hold of every observed floor contour, matched or not
- area-weighted precision/recall against set arithmetic and analytic overlaps
- report aggregation and the causal sample archive
- synthetic primitives: analytic sections, topology transitions, determinism
"""
import math

import numpy as np
import pytest
from shapely.geometry import box

from core.contours import geometry_contours, hausdorff, polygon_area_centroid
from core.errors import CausalityViolation, DepthOutOfRange, RingMismatch, UnknownPrimitive
from core.geometry import SamplePoint
from extraction.section import extract_section
from metamorphosis.trajectories import TrajectoryBundle
from reconstruction.evaluation import (
    MODEL,
    NIL,
    CausalSampleArchive,
    EvalReport,
    EvalRow,
    evaluate_depths,
    precision_recall,
)
from reconstruction.surfaces import (
    SurfaceMesh,
    bundle_mesh,
    iso_contours,
    predict_contour,
    predictions_by_depth,
    triangulate,
    write_stl,
    zero_order_hold,
)
from reconstruction.synthetic import SceneSpec, generate_synthetic_scene, hex_lattice
from tests.conftest import circle, radial_bundle, square


def radius_of(contour) -> float:
    return math.sqrt(polygon_area_centroid(contour)[0] / math.pi)


def rect(x0, y0, x1, y1):
    return geometry_contours(box(x0, y0, x1, y1))[0]


class TestIsoContours:
    def test_bench_ends_return_stored_contours(self):
        bundle = radial_bundle()
        top, bottom = iso_contours(bundle, [100.0, 90.0])
        assert top == [bundle.sources[0]]
        assert bottom == [bundle.targets[0]]

    def test_midway_radius_is_the_mean(self):
        (mid,) = iso_contours(radial_bundle(), [95.0])
        assert len(mid) == 1
        assert radius_of(mid[0]) == pytest.approx(35.0, abs=1.0)

    def test_levels_between_points_interpolate(self):
        (ring,) = iso_contours(radial_bundle(), [100.0 - 1.25 * 2.5])
        assert radius_of(ring[0]) == pytest.approx(20.0 + 2.5 / 8 * 30.0, abs=1.0)

    def test_outside_bench_is_rejected(self):
        with pytest.raises(DepthOutOfRange):
            iso_contours(radial_bundle(), [85.0])


class TestSurfaces:
    def test_prism_shell(self):
        sq = square(1.0).points
        mesh = triangulate([sq, sq], [10.0, 0.0], "g1")
        assert len(mesh.triangles) == 8
        assert mesh.volume == pytest.approx(40.0, abs=1e-9)
        assert mesh.to_trimesh().area == pytest.approx(4 * 2.0 * 10.0)

    def test_ring_order_does_not_matter(self):
        sq = square(1.0).points
        down = triangulate([sq, sq], [10.0, 0.0])
        up = triangulate([sq[::-1], sq[::-1]], [0.0, 10.0])
        assert up.volume == pytest.approx(down.volume)

    def test_frustum_matches_analytic(self):
        top, bottom = circle(20.0, n=256).points, circle(10.0, n=256).points
        mesh = triangulate([top, bottom], [10.0, 0.0])
        lateral = math.pi * (20.0 + 10.0) * math.hypot(10.0, 10.0)
        assert mesh.to_trimesh().area == pytest.approx(lateral, rel=0.02)
        assert mesh.volume == pytest.approx(math.pi * 10.0 / 3 * (400 + 200 + 100), rel=0.02)

    def test_ring_mismatch(self):
        sq = square(1.0).points
        with pytest.raises(RingMismatch):
            triangulate([sq], [0.0])
        with pytest.raises(RingMismatch):
            triangulate([sq, circle(1.0, n=5).points], [1.0, 0.0])

    def test_bundle_mesh_volume(self):
        mesh = bundle_mesh(radial_bundle())
        shrink = math.sin(2 * math.pi / 64) / (2 * math.pi / 64)
        expected = math.pi * 10.0 / 3 * (400 + 1000 + 2500) * shrink
        assert mesh.volume == pytest.approx(expected, rel=0.01)
        assert mesh.geozone == "g1"
        assert len(mesh.vertices) == 64 * 9

    def test_concatenate_offsets_indices(self):
        sq = square(1.0).points
        a = triangulate([sq, sq], [10.0, 0.0])
        both = SurfaceMesh.concatenate([a, a], "g1")
        assert len(both.vertices) == 2 * len(a.vertices)
        assert both.triangles[len(a.triangles):].min() == len(a.vertices)
        assert both.volume == pytest.approx(2 * a.volume)

    def test_stl_has_one_facet_per_triangle(self, tmp_path):
        sq = square(1.0).points
        mesh = triangulate([sq, sq], [10.0, 0.0], "g1")
        path = write_stl([mesh, SurfaceMesh(np.zeros((0, 3)), np.zeros((0, 3)), "g2")], tmp_path / "s.stl")
        text = path.read_text()
        assert text.startswith("solid g1\n")
        assert text.count("facet normal") == 8
        assert text.rstrip().endswith("endsolid g2")


class TestPrediction:
    def test_stationary_bundle_holds_last_contour(self):
        bundle = radial_bundle(r0=20.0, r1=20.0)
        for depth in (1.25, 5.0, 10.0):
            (pred,) = predict_contour(bundle, depth).contours
            assert hausdorff(pred, bundle.targets[0]) < 1e-6

    def test_translation_is_extrapolated(self):
        bundle = radial_bundle(r0=20.0, r1=20.0, shift=(2.0, 0.0))
        (pred,) = predict_contour(bundle, 10.0).contours
        _, last = polygon_area_centroid(bundle.targets[0])
        _, moved = polygon_area_centroid(pred)
        assert moved - last == pytest.approx([2.0, 0.0], abs=1e-6)

    def test_depth_range(self):
        bundle = radial_bundle()
        with pytest.raises(DepthOutOfRange):
            predict_contour(bundle, 0.0)
        with pytest.raises(DepthOutOfRange):
            predict_contour(bundle, 10.5)
        assert predict_contour(bundle, 15.0, max_depth=20.0).contours

    def test_collapsing_prediction_is_flagged(self):
        pred = predict_contour(radial_bundle(r0=20.0, r1=2.0), 1.11)
        assert [f.code for f in pred.flags] == ["DegeneratePrediction"]

    def test_empty_bundle_holds_targets(self):
        bundle = TrajectoryBundle("g1", 100.0, 90.0, 9, np.zeros((0, 9, 2)), targets={0: circle(5.0)})
        pred = predict_contour(bundle, 5.0)
        assert pred.contours == [bundle.targets[0]]
        assert [f.code for f in pred.flags] == ["EmptyBundle"]

    def test_hold_repeats_observed_floor_without_correspondence(self):
        floor = {0: circle(5.0), 3: circle(4.0, (30.0, 0.0))}
        bundle = TrajectoryBundle("g1", 100.0, 90.0, 9, np.zeros((0, 9, 2)), observed=floor)
        assert bundle.targets == {}
        assert zero_order_hold(bundle) == [floor[0], floor[3]]
        assert predict_contour(bundle, 2.5).contours == [floor[0], floor[3]]
        again = TrajectoryBundle.from_dict(bundle.as_dict())
        assert len(zero_order_hold(again)) == 2

    def test_unreached_floor_contours_are_carried_into_the_model(self):
        bundle = radial_bundle()
        stray = circle(3.0, (200.0, 0.0))
        bundle.observed = {0: bundle.targets[0], 7: stray}
        model = predict_contour(bundle, 5.0).contours
        assert model[-1] is stray
        assert radius_of(model[0]) > 50.0
        assert zero_order_hold(bundle) == [bundle.targets[0], stray]

    def test_predictions_by_depth_pairs_model_with_baseline(self):
        bundle = radial_bundle()
        out = predictions_by_depth(bundle, [2.5, 5.0])
        assert sorted(out) == [2.5, 5.0]
        model, nil, flags = out[5.0]
        assert nil == zero_order_hold(bundle)
        assert radius_of(model[0]) > radius_of(nil[0])


class TestEvaluation:
    def test_identical_regions(self):
        row = precision_recall([circle(10.0)], [circle(10.0)])
        assert row.precision == pytest.approx(1.0)
        assert row.recall == pytest.approx(1.0)

    def test_half_coverage(self):
        row = precision_recall([rect(0, 0, 5, 10)], [rect(0, 0, 10, 10)])
        assert row.precision == pytest.approx(1.0, abs=0.03)
        assert row.recall == pytest.approx(0.5, abs=0.03)

    def test_random_rectangles_match_analytic_overlap(self):
        rng = np.random.default_rng(9)
        for _ in range(5):
            (ax, ay, bx, by), (aw, ah, bw, bh) = rng.uniform(0, 30, 4), rng.uniform(15, 30, 4)
            pa, pb = rect(ax, ay, ax + aw, ay + ah), rect(bx, by, bx + bw, by + bh)
            ix = max(0.0, min(ax + aw, bx + bw) - max(ax, bx))
            iy = max(0.0, min(ay + ah, by + bh) - max(ay, by))
            row = precision_recall([pa], [pb])
            assert row.precision == pytest.approx(ix * iy / (aw * ah), abs=0.03)
            assert row.recall == pytest.approx(ix * iy / (bw * bh), abs=0.03)

    def test_regions_weighted_by_area(self):
        truth = [square(5.0)]
        row = precision_recall([square(2.1), square(2.1, (40.0, 0.0))], truth)
        assert row.precision == pytest.approx(0.5, abs=1e-9)
        assert row.recall == pytest.approx(4 * 2.1 ** 2 / 100.0, abs=0.01)

    def test_empty_sides_are_flagged(self):
        row = precision_recall([], [circle(3.0)], depth=2.5)
        assert (row.precision, row.recall) == (0.0, 0.0)
        assert [f.code for f in row.flags] == ["EmptyPrediction"]
        row = precision_recall([circle(3.0)], [])
        assert [f.code for f in row.flags] == ["EmptyTruth"]

    def test_report_aggregates_by_area(self):
        report = EvalReport()
        report.add(EvalRow(2.5, MODEL, 8.0, 10.0, 6.0, 10.0))
        report.add(EvalRow(2.5, MODEL, 10.0, 10.0, 10.0, 10.0))
        report.add(EvalRow(2.5, NIL, 5.0, 10.0, 5.0, 10.0))
        (row,) = report.aggregate()
        assert row["model_precision"] == pytest.approx(0.9)
        assert row["model_recall"] == pytest.approx(0.8)
        assert row["nil_precision"] == pytest.approx(0.5)
        assert row["precision_gain"] == pytest.approx(0.4)
        assert row["recall_gain"] == pytest.approx(0.3)
        assert len(report.detail()) == 3

    def test_evaluate_depths_tags_rows(self):
        rows = evaluate_depths([(5.0, [circle(10.0)], [circle(8.0)], [circle(10.0)])], bench=90.0, geozone="g1")
        assert [(r.condition, r.bench, r.geozone) for r in rows] == [(MODEL, 90.0, "g1"), (NIL, 90.0, "g1")]
        assert rows[0].recall > rows[1].recall


class TestCausalArchive:
    def _archive(self):
        return CausalSampleArchive({z: [SamplePoint(0.0, 0.0, z, "g1")] for z in (100.0, 90.0, 80.0)})

    def test_floor_starts_at_top(self):
        archive = self._archive()
        assert archive.visible() == [100.0]
        with pytest.raises(CausalityViolation):
            archive.samples(90.0)

    def test_lowering_the_floor_unlocks_benches(self):
        archive = self._archive()
        archive.samples(100.0)
        archive.lower_floor(90.0)
        assert archive.samples(90.0)[0].z == 90.0
        assert archive.deepest_access() == 90.0
        assert archive.access_log == [100.0, 90.0]
        with pytest.raises(KeyError):
            archive.lower_floor(85.0)


class TestSynthetic:
    def test_sphere_sections_are_analytic_discs(self):
        scene = generate_synthetic_scene(SceneSpec("sphere", params={"radius": 40.0}), seed=1)
        for z in scene.spec.elevations:
            (disc,) = scene.truth_at(z)
            expected = math.sqrt(40.0 ** 2 - (z - 80.0) ** 2)
            assert radius_of(disc) == pytest.approx(expected, rel=1e-3)

    def test_labels_follow_membership(self):
        scene = generate_synthetic_scene(SceneSpec("sphere", jitter=0.0), seed=0)
        for s in scene.benches[80.0]:
            r = math.hypot(s.x, s.y)
            if abs(r - 40.0) > 0.5:
                assert (s.geozone == "g1") == (r < 40.0)

    def test_twin_lobes_merge_with_depth(self):
        counts = generate_synthetic_scene(SceneSpec("twin_merge"), seed=0).component_counts()
        series = [counts[z] for z in sorted(counts, reverse=True)]
        assert series[0] == 2 and series[-1] == 1
        assert all(a >= b for a, b in zip(series, series[1:]))

    def test_lobe_splits_with_depth(self):
        counts = generate_synthetic_scene(SceneSpec("split-lobe"), seed=0).component_counts()
        series = [counts[z] for z in sorted(counts, reverse=True)]
        assert series[0] == 1 and series[-1] == 2

    def test_tilted_ellipsoid_shrinks_and_drifts(self):
        scene = generate_synthetic_scene(SceneSpec("tilted_ellipsoid"), seed=0)
        lower = [z for z in scene.spec.elevations if z <= 90.0]
        sections = [scene.truth_at(z)[0] for z in lower]
        areas = [polygon_area_centroid(c)[0] for c in sections]
        xs = [polygon_area_centroid(c)[1][0] for c in sections]
        assert all(a > b for a, b in zip(areas, areas[1:]))
        assert all(a < b for a, b in zip(xs, xs[1:]))

    def test_same_seed_same_samples(self):
        spec = SceneSpec("bent_slab")
        a = generate_synthetic_scene(spec, seed=4).all_samples()
        b = generate_synthetic_scene(spec, seed=4).all_samples()
        c = generate_synthetic_scene(spec, seed=5).all_samples()
        assert a == b
        assert a != c

    def test_full_dropout_gives_empty_benches(self):
        scene = generate_synthetic_scene(SceneSpec("sphere", dropout=1.0), seed=0)
        assert all(len(s) == 0 for s in scene.benches.values())
        section = extract_section(scene.benches[100.0], "g1")
        assert section.contours == [] and [f.code for f in section.flags] == ["EmptyInput"]

    def test_unknown_primitive(self):
        with pytest.raises(UnknownPrimitive):
            generate_synthetic_scene(SceneSpec("torus"))
        with pytest.raises(ValueError):
            SceneSpec(n_benches=1)

    def test_hex_lattice_spacing(self):
        pts = hex_lattice(20.0, 5.0)
        d = np.hypot(pts[:, None, 0] - pts[None, :, 0], pts[:, None, 1] - pts[None, :, 1])
        np.fill_diagonal(d, np.inf)
        assert d.min(axis=1) == pytest.approx(np.full(len(pts), 5.0))
