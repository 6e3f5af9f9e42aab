"""
Tests for association, alignment and graph decomposition between sections.

Verifies:
- d_min statistics, the noise factor and the association likelihood
- association matrix decisions near and far, centroid and reach distances
- FFT correlation against a direct-sum oracle and delta/autocorrelation peaks
- shift estimation: exact recovery, zero-shift tie break, penalty constraints
- port allocation, sector membership of four sources sharing a target,
  the multi-source / multi-target strategies and configurable weights
- subtree decomposition, one-to-one alignment, pruning of unrealized edges
"""
import math

import numpy as np
import pytest
from shapely.geometry import Point
from shapely.ops import unary_union

from core.contours import geometry_contours, rasterize
from core.errors import AllInadmissible, FrameMismatch, NoTargets
from core.geometry import GridFrame, ScalarGrid
from core.sdf import signed_distance
from correspondence import graph
from correspondence.alignment import (
    PENALTY,
    AlignmentWeights,
    align_multi_source_single_target,
    align_single_source_multi_target,
    allocate_ports,
    bearing_grid,
    cross_correlate_fft,
    estimate_shift,
    shift_mask,
)
from correspondence.association import (
    CENTROID,
    REACH,
    AssociationMatrix,
    Region,
    association_frame,
    association_likelihood,
    build_association_matrix,
    compute_dmin_stats,
    noise_factor,
    percentile_rank,
    region_distances,
)
from correspondence.graph import associate, decompose, decompose_and_align
from tests.conftest import circle, square


def disc_region(rid, x, y, r, n=256):
    return Region(rid, circle(r, (x, y), n=n))


def brute_correlation(u, v):
    ny, nx = u.shape
    out = np.zeros((2 * ny - 1, 2 * nx - 1))
    for my in range(-(ny - 1), ny):
        for mx in range(-(nx - 1), nx):
            uy0, uy1 = max(0, -my), min(ny, ny - my)
            ux0, ux1 = max(0, -mx), min(nx, nx - mx)
            out[my + ny - 1, mx + nx - 1] = np.sum(
                u[uy0:uy1, ux0:ux1] * v[uy0 + my:uy1 + my, ux0 + mx:ux1 + mx]
            )
    return out


def unit_frame(n=64):
    return GridFrame((0.0, 0.0), 1.0, (n, n))


class TestAssociation:
    def test_single_pair_statistics(self):
        model = compute_dmin_stats([disc_region(0, 0, 0, 2)], [disc_region(0, 10, 0, 2)], mu_lower=5.0)
        assert model.mu_dmin == pytest.approx(10.0)
        assert model.sigma_dmin == pytest.approx(0.0)
        assert model.s_dmin == pytest.approx(0.0)
        assert model.nu == pytest.approx(2.0)

    def test_three_source_statistics(self):
        sources = [Region(i, square(1.0, (100.0 * i, 0.0))) for i in range(3)]
        targets = [Region(i, square(1.0, (100.0 * i + d, 0.0))) for i, d in enumerate((4.0, 6.0, 8.0))]
        model = compute_dmin_stats(sources, targets, mu_lower=5.0)
        assert model.d_min == pytest.approx([4.0, 6.0, 8.0])
        assert model.mu_dmin == pytest.approx(6.0)
        assert model.sigma_dmin == pytest.approx(math.sqrt(8.0 / 3.0))
        assert model.s_dmin == pytest.approx(math.sqrt(8.0 / 3.0) / math.sqrt(3.0))

    def test_noise_factor_bounds(self):
        assert noise_factor(0.0, 5.0) == pytest.approx(2.0)
        assert noise_factor(1e4, 5.0) == pytest.approx(4.0)
        assert noise_factor(1.0, 5.0) < noise_factor(2.0, 5.0)

    def test_no_targets(self):
        with pytest.raises(NoTargets):
            compute_dmin_stats([disc_region(0, 0, 0, 2)], [], 5.0)

    def test_likelihood_shape(self):
        src = disc_region(0, 0, 0, 20, n=1024)
        model = compute_dmin_stats([src], [disc_region(0, 30, 0, 5)], mu_lower=5.0)
        lam = model.lambdas[0]
        assert lam == pytest.approx(20.0, rel=1e-3)
        assert association_likelihood(src.centroid, 0, model) == pytest.approx(1.0)
        d = lam * model.nu * math.sqrt(2 * math.log(2))
        assert association_likelihood(src.centroid + [d, 0.0], 0, model) == pytest.approx(0.5)

    def test_percentile_rank(self):
        assert percentile_rank(4.0, 4.0) == pytest.approx(50.0)
        assert percentile_rank(1e-9, 4.0) == pytest.approx(100.0)
        assert percentile_rank(8.0, 4.0) == pytest.approx(50.0)

    def test_matrix_near_and_far(self):
        sources = [disc_region(0, 0, 0, 10), disc_region(1, 100, 0, 10)]
        targets = [disc_region(0, 2, 1, 10), disc_region(1, 102, 1, 10)]
        model = compute_dmin_stats(sources, targets, 5.0)
        A = build_association_matrix(sources, targets, model, association_frame(sources + targets, 120))
        assert A.A.tolist() == [[1, 0], [0, 1]]
        assert A.pairs() == [(0, 0), (1, 1)]

    def test_reach_adds_target_span(self):
        sources = [disc_region(0, 0, 0, 10)]
        targets = [disc_region(0, 4, 0, 20), disc_region(1, 0, 50, 5)]
        centroid = region_distances(sources, targets, CENTROID)
        reach = region_distances(sources, targets, REACH)
        assert centroid[0] == pytest.approx([4.0, 50.0], abs=1e-6)
        assert reach[0] - centroid[0] == pytest.approx([t.span for t in targets])
        with pytest.raises(ValueError, match="distance"):
            region_distances(sources, targets, "hausdorff")

    @pytest.mark.parametrize("radius", [10.0, 20.0, 30.0])
    def test_slowly_drifting_region_keeps_its_continuation(self, radius):
        src, tgt = disc_region(0, 0, 0, radius), disc_region(0, 4, 0, radius)
        frame = association_frame([src, tgt], 120)
        for mu_lower in (5.0, 7.5):
            model = compute_dmin_stats([src], [tgt], mu_lower, REACH)
            assert build_association_matrix([src], [tgt], model, frame).A.tolist() == [[1]]

    def test_centroid_distance_loses_a_large_drifting_region(self):
        src, tgt = disc_region(0, 0, 0, 30), disc_region(0, 4, 0, 30)
        model = compute_dmin_stats([src], [tgt], 7.5, CENTROID)
        assert model.lambdas[0] == pytest.approx(7.5)
        A = build_association_matrix([src], [tgt], model, association_frame([src, tgt], 120))
        assert A.A.tolist() == [[0]]

    def test_no_association_beyond_three_widths(self):
        src = disc_region(0, 0, 0, 5)
        near, far = disc_region(0, 3, 0, 5), disc_region(1, 40, 0, 5)
        model = compute_dmin_stats([src], [near, far], 5.0)
        reach = 3.0 * model.lambdas[0] * model.nu
        assert 40.0 - 5.0 > reach
        A = build_association_matrix([src], [near, far], model, association_frame([src, near, far], 120))
        assert A.A.tolist() == [[1, 0]]
        assert association_likelihood(np.array([reach, 0.0]), 0, model) < 0.02


class TestCorrelation:
    def test_matches_direct_sum(self):
        rng = np.random.default_rng(5)
        frame = unit_frame(16)
        for _ in range(3):
            u = (rng.random((16, 16)) > 0.6).astype(float)
            v = rng.normal(size=(16, 16))
            surface = cross_correlate_fft(ScalarGrid(frame, u), ScalarGrid(frame, v))
            expected = brute_correlation(u, v)
            assert np.abs(surface.values - expected).max() <= 1e-6 * np.abs(expected).max()

    @pytest.mark.slow
    def test_matches_direct_sum_on_many_pairs(self):
        rng = np.random.default_rng(11)
        frame = unit_frame(64)
        for _ in range(50):
            u = (rng.random((64, 64)) > 0.5).astype(float)
            v = rng.normal(size=(64, 64))
            surface = cross_correlate_fft(ScalarGrid(frame, u), ScalarGrid(frame, v))
            expected = brute_correlation(u, v)
            assert np.abs(surface.values - expected).max() <= 1e-6 * np.abs(expected).max()

    def test_delta_peak(self):
        frame = unit_frame(16)
        u, v = np.zeros((16, 16)), np.zeros((16, 16))
        u[4, 3] = 1.0
        v[7, 10] = 1.0
        surface = cross_correlate_fft(ScalarGrid(frame, u), ScalarGrid(frame, v))
        my, mx = np.unravel_index(np.argmax(surface.values), surface.values.shape)
        assert (mx - 15, my - 15) == (7, 3)
        assert surface.at(7, 3) == pytest.approx(1.0)

    def test_autocorrelation_peak_counts_pixels(self):
        frame = unit_frame(16)
        u = np.zeros((16, 16))
        u[3:8, 4:10] = 1.0
        surface = cross_correlate_fft(ScalarGrid(frame, u), ScalarGrid(frame, u))
        assert surface.at(0, 0) == pytest.approx(30.0)
        assert surface.values.max() == pytest.approx(30.0)

    def test_frames_must_match(self):
        with pytest.raises(FrameMismatch):
            cross_correlate_fft(ScalarGrid(unit_frame(8), np.zeros((8, 8))), ScalarGrid(unit_frame(9), np.zeros((9, 9))))


class TestShiftEstimation:
    def _masks(self, shift=(0, 0)):
        frame = unit_frame()
        src = square(5.0, (20.5, 20.5))
        tgt = square(5.0, (20.5 + shift[0], 20.5 + shift[1]))
        mask = ScalarGrid(frame, rasterize(src, frame).astype(float))
        return frame, mask, signed_distance(tgt, frame)

    def test_recovers_translation(self):
        _, mask, sdf = self._masks((8, 5))
        est = estimate_shift(mask, sdf)
        assert est.m_px == (8, 5)
        assert est.m_world == pytest.approx((8.0, 5.0))

    def test_identity_prefers_zero(self):
        _, mask, sdf = self._masks()
        assert estimate_shift(mask, sdf).m_px == (0, 0)

    def test_penalty_stripe(self):
        frame = unit_frame()
        mask = ScalarGrid(frame, rasterize(square(5.0, (15.5, 30.5)), frame).astype(float))
        sdf = signed_distance(square(10.0, (30.5, 30.5)), frame)
        free = estimate_shift(mask, sdf)
        stripe = np.full(frame.shape, np.nan)
        stripe[:, 30:] = PENALTY
        held = estimate_shift(mask, sdf, ScalarGrid(frame, stripe))
        assert held.constrained
        assert held.m_px != free.m_px
        assert not shift_mask(mask.values > 0, held.m_px)[:, 30:].any()

    def test_empty_mask_is_inadmissible(self):
        frame = unit_frame(16)
        with pytest.raises(AllInadmissible):
            estimate_shift(ScalarGrid(frame, np.zeros((16, 16))), ScalarGrid(frame, np.ones((16, 16))))


class TestPortsAndStrategies:
    def test_single_source_port(self):
        (port,) = allocate_ports(circle(10.0), [(np.array([3.0, 0.0]), 5.0)])
        assert port.width == pytest.approx(2 * math.pi)

    def test_opposite_sources_split_the_target(self):
        ports = allocate_ports(circle(10.0), [(np.array([10.0, 0.0]), 4.0), (np.array([-10.0, 0.0]), 4.0)])
        assert [p.source for p in ports] == [0, 1]
        assert [p.width for p in ports] == pytest.approx([math.pi, math.pi])
        diff = lambda a, b: abs((a - b + math.pi) % (2 * math.pi) - math.pi)
        assert diff(ports[0].mid, 0.0) < 1e-9
        assert diff(ports[1].mid, math.pi) < 1e-9

    def test_ports_tile_the_circle(self):
        srcs = [(np.array([math.cos(a), math.sin(a)]) * 10, w) for a, w in ((0.3, 1.0), (2.0, 2.0), (4.0, 1.5), (5.5, 0.5))]
        ports = allocate_ports(circle(10.0), srcs)
        assert sum(p.width for p in ports) == pytest.approx(2 * math.pi)
        angles = np.linspace(0, 2 * math.pi, 720, endpoint=False) + 1e-6
        owners = np.sum([p.contains(angles) for p in ports], axis=0)
        assert np.all(owners == 1)

    def test_merging_sources_do_not_overlap(self):
        sources = [disc_region(0, -12, 0, 10), disc_region(1, 12, 0, 10)]
        stadium = geometry_contours(unary_union([Point(-8, 0).buffer(10, 64), Point(8, 0).buffer(10, 64)]))[0]
        target = Region(0, stadium)
        frame = association_frame([*sources, target], 120)
        ests = align_multi_source_single_target(sources, target, frame)
        masks = [shift_mask(rasterize(s.contour, frame), e.m_px) for s, e in zip(sources, ests)]
        assert not np.any(masks[0] & masks[1])
        inside = rasterize(target.contour, frame)
        assert np.count_nonzero(masks[0] & inside) > 0 and np.count_nonzero(masks[1] & inside) > 0

    def test_large_source_straddles_two_targets(self):
        source = disc_region(0, 0, 0, 20)
        targets = [disc_region(0, -12, 0, 8), disc_region(1, 12, 0, 8)]
        frame = association_frame([source, *targets], 120)
        est = align_single_source_multi_target(source, targets, frame)
        assert est.straddles
        mask = rasterize(source.contour, frame)
        union = rasterize(targets[0].contour, frame) | rasterize(targets[1].contour, frame)
        cover = lambda m: np.count_nonzero(shift_mask(mask, m) & union)
        singles = [
            estimate_shift(ScalarGrid(frame, mask.astype(float)), signed_distance(t.contour, frame)).m_px for t in targets
        ]
        assert cover(est.m_px) > max(cover(m) for m in singles)


    def test_four_sources_stay_in_their_sectors(self):
        target = disc_region(9, 0, 0, 20)
        bearings = (0.0, math.pi / 2, math.pi, 3 * math.pi / 2)
        sources = [disc_region(i, 30 * math.cos(a), 30 * math.sin(a), 6) for i, a in enumerate(bearings)]
        frame = association_frame([*sources, target], 160)
        ests = align_multi_source_single_target(sources, target, frame)
        ports = allocate_ports(target.contour, [(s.centroid, s.area) for s in sources])
        inside = signed_distance(target.contour, frame).values > 0
        angles = bearing_grid(frame, target.centroid)
        for i, (src, est) in enumerate(zip(sources, ests)):
            moved = shift_mask(rasterize(src.contour, frame), est.m_px)
            assert np.count_nonzero(moved & inside) > 0
            for j, port in enumerate(ports):
                if j != i:
                    assert not np.any(moved & inside & port.contains(angles))

    def test_weights_are_validated(self):
        with pytest.raises(ValueError, match="penalty"):
            AlignmentWeights(penalty=1.0)
        with pytest.raises(ValueError, match="reward_scale"):
            AlignmentWeights(reward_scale=-1.0)
        with pytest.raises(ValueError, match="corridor_width"):
            AlignmentWeights(corridor_width=0.0)


class TestGraph:
    def test_shared_target_graph_decomposes_into_four_subtrees(self):
        A = AssociationMatrix(
            np.array([[1, 0, 0, 0], [1, 0, 1, 0], [0, 0, 1, 0], [0, 0, 1, 1]]), [0, 1, 2, 3], [0, 1, 2, 3]
        )
        subtrees = decompose(A, order=[1, 0, 2, 3])
        assert [s.describe() for s in subtrees] == [
            "s1->{t0<-s0, t2<-(s2,s3)}",
            "s0->t0<-s1",
            "s2->t2<-(s1,s3)",
            "s3->{t2<-(s1,s2), t3}",
        ]

    def test_one_to_one_keeps_every_edge(self):
        sources = [disc_region(0, 0, 0, 10), disc_region(1, 100, 0, 10)]
        targets = [disc_region(0, 2, 1, 10), disc_region(1, 102, 1, 10)]
        result = associate(sources, targets, mu_lower=5.0, grid_target=120)
        assert result.pruned.A.tolist() == result.initial.A.tolist() == [[1, 0], [0, 1]]
        assert not [f for f in result.flags if f.code == "PrunedEdge"]
        for sid in (0, 1):
            est = result.displacements[sid]
            ps = abs(est.m_world[0] / est.m_px[0]) if est.m_px[0] else 1.0
            assert est.m_world == pytest.approx((2.0, 1.0), abs=1.5 * ps)
        doc = result.as_dict()
        assert doc["subtrees"] == ["s0->t0", "s1->t1"]

    def test_source_without_target_pinches_out(self):
        sources = [disc_region(0, 0, 0, 10), disc_region(1, 300, 0, 10)]
        targets = [disc_region(0, 2, 1, 10)]
        result = associate(sources, targets, mu_lower=5.0, grid_target=120)
        assert any(f.code == "PinchOut" and "source 1" in f.message for f in result.flags)
        assert 1 not in result.displacements

    def test_unreachable_edge_is_pruned(self):
        sources = [disc_region(0, 0, 0, 10)]
        targets = [disc_region(0, 1, 0, 10), disc_region(1, 200, 0, 3)]
        A = AssociationMatrix(np.array([[1, 1]]), [0], [0, 1])
        result = decompose_and_align(A, sources, targets, grid_target=120)
        assert result.initial.A.tolist() == [[1, 1]]
        assert result.pruned.A.tolist() == [[1, 0]]
        assert [f.message for f in result.flags if f.code == "PrunedEdge"] == ["s0-t1: no realized overlap"]
        assert result.displacements[0].overlaps[1] == 0

    def test_weights_reach_every_alignment(self, monkeypatch):
        seen = []
        real = graph.align_source

        def spy(*args, **kwargs):
            seen.append(args[5])
            return real(*args, **kwargs)

        monkeypatch.setattr(graph, "align_source", spy)
        weights = AlignmentWeights(penalty=-50.0, reward_scale=1.0, corridor_width=3.0)
        sources = [disc_region(0, 0, 0, 10), disc_region(1, 100, 0, 10)]
        targets = [disc_region(0, 2, 1, 10), disc_region(1, 102, 1, 10)]
        result = associate(sources, targets, mu_lower=5.0, grid_target=120, weights=weights)
        assert seen == [weights, weights]
        assert result.pruned.A.tolist() == [[1, 0], [0, 1]]
