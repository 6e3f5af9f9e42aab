"""
Tests for contour extraction from labeled samples.

Verifies:
- hop-connected components against a union-find oracle
- label entropy and the boundary detector against an independent recomputation
- orientation-gap closure on lattice corners and interiors
- edge map synthesis, GVF direction, active contour accuracy on a circle
  and at the corners of a square
- per-section extraction of one contour per component enclosing its samples,
  with rejects and flags
"""
import math

import numpy as np
import pytest
from shapely.geometry import Point
from skimage.draw import circle_perimeter, polygon_perimeter

from core.contours import hausdorff, nearest_on_contour, polygon_area_centroid, to_polygon
from core.errors import EmptyInput, ExtractionError, TooFewBoundarySamples
from core.geometry import GRID, GridFrame, SamplePoint, ScalarGrid
from extraction.boundary import close_open_edges, detect_boundary_samples, section_entropy
from extraction.components import connect_components, default_radius, median_spacing
from extraction.edgemap import synthesize_edge_map
from extraction.section import ExtractionParams, extract_section
from extraction.snake import (
    SnakeParams,
    bounding_box_contour,
    compute_gvf,
    evolve_active_contour,
    far_field_normalized,
)
from tests.conftest import circle, disc_membership, labeled_lattice


def union_find_components(coords: np.ndarray, r: float) -> list:
    parent = list(range(len(coords)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(len(coords)):
        for j in range(i + 1, len(coords)):
            if np.hypot(*(coords[i] - coords[j])) <= r:
                parent[find(i)] = find(j)
    groups = {}
    for i in range(len(coords)):
        groups.setdefault(find(i), []).append(i)
    return sorted((sorted(g) for g in groups.values()), key=lambda g: g[0])


def oracle_flags(samples, r, t_entropy=0.5):
    coords = np.array([(s.x, s.y) for s in samples])
    labels = np.array([s.geozone for s in samples])
    d = np.hypot(coords[:, None, 0] - coords[None, :, 0], coords[:, None, 1] - coords[None, :, 1])
    nb = [np.flatnonzero(row <= r) for row in d]
    h = np.zeros(len(samples))
    for i, idx in enumerate(nb):
        _, counts = np.unique(labels[idx], return_counts=True)
        p = counts / len(idx)
        h[i] = max(0.0, -float(np.sum(p * np.log2(p + 1e-12))))
    return np.array([h[i] >= max(t_entropy, float(np.median(h[nb[i]]))) for i in range(len(samples))])


class TestComponents:
    def test_matches_union_find(self):
        rng = np.random.default_rng(11)
        pts = np.vstack([rng.uniform(0, 20, (40, 2)), rng.uniform(60, 80, (40, 2)), [[200.0, 200.0]]])
        samples = [SamplePoint(float(x), float(y), 0.0, "g1") for x, y in pts]
        comps = connect_components(samples, 6.0)
        assert [list(c.indices) for c in comps] == union_find_components(pts, 6.0)
        assert [c.id for c in comps] == list(range(len(comps)))

    def test_single_sample_is_a_component(self):
        comps = connect_components([SamplePoint(0, 0, 0, "g1")], 1.0)
        assert len(comps) == 1 and len(comps[0]) == 1

    def test_rejects_mixed_input(self):
        with pytest.raises(EmptyInput):
            connect_components([], 1.0)
        with pytest.raises(ValueError):
            connect_components([SamplePoint(0, 0, 0, "g1")], 0.0)
        with pytest.raises(ExtractionError):
            connect_components([SamplePoint(0, 0, 0, "g1"), SamplePoint(1, 0, 0, "g2")], 2.0)

    def test_default_radius_follows_spacing(self):
        coords = np.array([[0.0, 0.0], [5.0, 0.0], [10.0, 0.0]])
        assert median_spacing(coords) == pytest.approx(5.0)
        assert default_radius(coords) == pytest.approx(11.0)


class TestBoundaryDetection:
    def test_entropy_of_even_mix_is_one_bit(self):
        samples = [SamplePoint(0, 0, 0, "g1"), SamplePoint(1, 0, 0, "g2")]
        h, _ = section_entropy(samples, 2.0)
        assert h == pytest.approx([1.0, 1.0], abs=1e-9)

    def test_isolated_sample_has_zero_entropy(self):
        samples = [SamplePoint(0, 0, 0, "g1"), SamplePoint(100, 0, 0, "g2")]
        h, _ = section_entropy(samples, 2.0)
        assert h == pytest.approx([0.0, 0.0])

    @pytest.mark.parametrize("seed", range(5))
    def test_half_plane_matches_oracle_and_hugs_boundary(self, seed):
        samples = labeled_lattice(lambda p: p[:, 0] < 0, half_width=60.0, spacing=4.0, jitter=0.6, seed=seed)
        assert len(samples) >= 500
        r = default_radius(np.array([(s.x, s.y) for s in samples]))
        expected = oracle_flags(samples, r)
        inside = [s for s in samples if s.geozone == "g1"]
        index = {id(s): k for k, s in enumerate(samples)}
        flagged_any = False
        for comp in connect_components(inside, r):
            flags = detect_boundary_samples(comp, samples, r)
            assert flags.tolist() == [bool(expected[index[id(s)]]) for s in comp.samples]
            xs = comp.coordinates[flags, 0]
            assert np.all(np.abs(xs) <= 2 * r)
            flagged_any |= bool(flags.any())
        assert flagged_any

    def test_gap_closure_marks_corners_not_interior(self):
        xs, ys = np.meshgrid(np.arange(9.0), np.arange(9.0))
        samples = [SamplePoint(float(x), float(y), 0.0, "g1") for x, y in zip(xs.ravel(), ys.ravel())]
        comp = connect_components(samples, 1.5)[0]
        flags = close_open_edges(comp, k_orient=12, t_orient=2 * math.pi / 3)
        coords = comp.coordinates
        corner = int(np.flatnonzero((coords[:, 0] == 0) & (coords[:, 1] == 0))[0])
        centre = int(np.flatnonzero((coords[:, 0] == 4) & (coords[:, 1] == 4))[0])
        assert flags[corner]
        assert not flags[centre]

    def test_small_component_fully_flagged(self):
        samples = [SamplePoint(float(i), 0.0, 0.0, "g1") for i in range(5)]
        comp = connect_components(samples, 1.5)[0]
        assert close_open_edges(comp, k_orient=12).all()


class TestEdgeMapAndSnake:
    def test_edge_map_needs_three_samples(self):
        frame = GridFrame((0.0, 0.0), 1.0, (10, 10))
        with pytest.raises(TooFewBoundarySamples):
            synthesize_edge_map(np.array([[1.0, 1.0], [2.0, 2.0]]), 5, frame)

    def test_edge_map_covers_samples(self):
        ring = circle(20.0, (32.0, 32.0), n=24).points
        frame = GridFrame((0.0, 0.0), 1.0, (64, 64))
        edges = synthesize_edge_map(ring, 2, frame).values
        g = np.rint(ring).astype(int)
        assert np.all(edges[g[:, 1], g[:, 0]] == 1.0)
        assert edges[32, 32] == 0.0

    def test_gvf_points_toward_edge(self):
        frame = GridFrame((0.0, 0.0), 1.0, (41, 21))
        f = np.zeros(frame.shape)
        f[:, 20] = 1.0
        gvf = compute_gvf(ScalarGrid(frame, f), mu=0.2, iters=300)
        assert gvf.u[10, 17] > 0
        assert gvf.u[10, 23] < 0

    @pytest.mark.slow
    def test_snake_locks_onto_circle(self):
        n, radius, c = 160, 60, 80
        frame = GridFrame((0.0, 0.0), 1.0, (n, n))
        f = np.zeros(frame.shape)
        rr, cc = circle_perimeter(c, c, radius, shape=frame.shape)
        f[rr, cc] = 1.0
        edge_map = ScalarGrid(frame, f)
        params = SnakeParams()
        force = far_field_normalized(compute_gvf(edge_map, 0.2, 400), edge_map, params)
        ring = np.column_stack([cc, rr]).astype(float)
        init = bounding_box_contour(ring, 8, params.n_points)
        result = evolve_active_contour(force, init, params)
        assert result.contour.frame_tag == GRID
        err = np.abs(np.hypot(*(result.contour.points - c).T) - radius)
        assert err.mean() <= 1.0
        assert err.max() <= 2.0

    @pytest.mark.slow
    def test_snake_keeps_square_corners(self):
        n, lo, hi = 160, 40, 120
        frame = GridFrame((0.0, 0.0), 1.0, (n, n))
        f = np.zeros(frame.shape)
        rr, cc = polygon_perimeter([lo, lo, hi, hi], [lo, hi, hi, lo], shape=frame.shape)
        f[rr, cc] = 1.0
        edge_map = ScalarGrid(frame, f)
        params = SnakeParams()
        force = far_field_normalized(compute_gvf(edge_map, 0.2, 400), edge_map, params)
        init = bounding_box_contour(np.column_stack([cc, rr]).astype(float), 8, params.n_points)
        result = evolve_active_contour(force, init, params)
        corners = np.array([[lo, lo], [hi, lo], [hi, hi], [lo, hi]], dtype=float)
        _, _, dist = nearest_on_contour(result.contour, corners)
        assert dist.max() <= 3.0

    def test_snake_params_validated(self):
        with pytest.raises(ValueError):
            SnakeParams(alpha=0.0)
        with pytest.raises(ValueError):
            SnakeParams(n_points=4)


class TestSectionExtraction:
    def test_params_validated(self):
        with pytest.raises(ValueError, match="t_orient"):
            ExtractionParams(t_orient=7.0)
        with pytest.raises(ValueError):
            ExtractionParams(radius=-1.0)

    @pytest.mark.slow
    def test_disc_gives_one_contour(self, disc_samples):
        section = extract_section(disc_samples, "g1")
        assert len(section.contours) == 1
        found = section.contours[0]
        assert found.geozone == "g1" and found.z == 100.0
        area, centroid = polygon_area_centroid(found.contour)
        assert np.hypot(*centroid) < 2.0
        assert 0.6 * math.pi * 30 ** 2 < area < 1.15 * math.pi * 30 ** 2
        assert hausdorff(found.contour, circle(30.0, n=256), spacing=1.0) < 6.0

    @pytest.mark.slow
    def test_contour_encloses_component_samples(self, disc_samples):
        [found] = extract_section(disc_samples, "g1").contours
        region = to_polygon(found.contour)
        members = [Point(s.x, s.y) for s in disc_samples if s.geozone == "g1"]
        share = sum(region.covers(p) for p in members) / len(members)
        assert share >= 0.95

    @pytest.mark.slow
    def test_two_discs_give_two_contours(self):
        inside = lambda p: disc_membership(15.0, (-30.0, 0.0))(p) | disc_membership(15.0, (30.0, 0.0))(p)
        section = extract_section(labeled_lattice(inside, spacing=4.0), "g1")
        assert len(section.contours) == 2
        xs = sorted(polygon_area_centroid(c.contour)[1][0] for c in section.contours)
        assert xs[0] < 0 < xs[1]

    def test_stray_sample_rejected(self):
        samples = labeled_lattice(disc_membership(30.0))
        samples = [s for s in samples if s.geozone == "g1"] + [SamplePoint(200.0, 200.0, 100.0, "g1")]
        samples += [SamplePoint(float(x), 0.0, 100.0, "g2") for x in (-50.0, 50.0)]
        section = extract_section(samples, "g1", ExtractionParams(radius=11.0, grid_target=100))
        assert any(r["reason"] == "too few samples" for r in section.rejects)

    def test_missing_geozone_is_flagged(self, disc_samples):
        section = extract_section(disc_samples, "g7")
        assert section.contours == []
        assert [f.code for f in section.flags] == ["EmptyInput"]
