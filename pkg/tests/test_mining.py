import itertools

import numpy as np
import pytest

from coherentflow.diffusion import DiffusionConfig, coarse_to_fine
from coherentflow.errors import ValidationError
from coherentflow.fields import GridDims, MotionField
from coherentflow.mining import (
    MiningConfig,
    cluster_frames,
    extract_flow_curve,
    frame_similarity,
    importance_costs,
    match_frames,
    matched_similarity,
    merge_cluster,
    unmatched_similarity,
)
from coherentflow.regions import SemanticRegionMap, SimilarityConfig
from coherentflow.segmentation import SegmentationConfig, motion_from_mask, segment
from coherentflow.spectral import ClusterResult
from coherentflow.synth import best_match_accuracy, generate
from scenes import (
    DIMS,
    annulus_pattern,
    phase_spec,
    straight_band_pattern,
    y_branch_pattern,
)

CFG = MiningConfig()


def brute_force_assignment(sim):
    """Exhaustive-permutation optimum of the assignment value."""
    n, m = sim.shape
    best = 0.0
    if n <= m:
        for perm in itertools.permutations(range(m), n):
            best = max(best, sum(sim[i, perm[i]] for i in range(n)))
    else:
        for perm in itertools.permutations(range(n), m):
            best = max(best, sum(sim[perm[j], j] for j in range(m)))
    return best


class TestMatchFrames:
    def test_identical_frames_match_perfectly(self):
        sim = np.array([[10.0, 1.0], [1.0, 10.0]])
        result = match_frames(sim, CFG)
        assert sorted((i, j) for i, j, _, _ in result.matched) == [(0, 0), (1, 1)]
        assert result.unmatched_t == [] and result.unmatched_prev == []

    def test_assignment_value_equals_brute_force(self):
        rng = np.random.default_rng(0)
        cfg = MiningConfig(match_min_sim=0.0)
        for _ in range(100):
            n = int(rng.integers(1, 8))
            m = int(rng.integers(1, 8))
            sim = rng.uniform(0.1, 10.0, size=(n, m))
            result = match_frames(sim, cfg)
            total = sum(s for _, _, _, s in result.matched)
            assert total == pytest.approx(brute_force_assignment(sim))

    def test_empty_frame_leaves_everything_unmatched(self):
        result = match_frames(np.zeros((0, 3)), CFG)
        assert result.matched == []
        assert result.unmatched_prev == [0, 1, 2]

    def test_weak_pairs_dropped_to_unmatched(self):
        sim = np.array([[100.0, 0.0], [0.0, 1.0]])
        result = match_frames(sim, CFG)  # default floor: 10% of the maximum
        assert [(i, j) for i, j, _, _ in result.matched] == [(0, 0)]
        assert result.unmatched_t == [1]
        assert result.unmatched_prev == [1]

    def test_weights_normalized_by_best_pair(self):
        sim = np.array([[8.0, 0.0], [0.0, 4.0]])
        result = match_frames(sim, CFG)
        weights = {(i, j): lam for i, j, lam, _ in result.matched}
        assert weights[(0, 0)] == 1.0
        assert weights[(1, 1)] == 0.5


class TestMatchedSimilarity:
    def test_empty_match_scores_zero(self):
        result = match_frames(np.zeros((2, 2)), CFG)
        assert matched_similarity(result, 2, 2) == 0.0

    def test_single_pair_formula_collapse(self):
        result = match_frames(np.array([[10.0]]), CFG)
        assert matched_similarity(result, 1, 1) == 10.0

    def test_two_pair_hand_sum(self):
        sim = np.array([[8.0, 0.0], [0.0, 4.0]])
        result = match_frames(sim, CFG)
        # weights 1.0 and 0.5; (1*8 + 0.5*4) / max(2, 3)
        assert matched_similarity(result, 2, 3) == pytest.approx(10.0 / 3.0)

    def test_both_empty_is_zero(self):
        result = match_frames(np.zeros((0, 0)), CFG)
        assert matched_similarity(result, 0, 0) == 0.0


def region_map_quarters():
    labels = np.full((16, 16), -1, dtype=np.int32)
    labels[:8, :8] = 0
    labels[:8, 8:] = 1
    return SemanticRegionMap(GridDims(16, 16), labels)


def blob_motion(x0, y0, w=4, h=4, direction=(1.0, 0.0), frame=0, dims=GridDims(16, 16)):
    mask = np.zeros((dims.height, dims.width), dtype=bool)
    mask[y0 : y0 + h, x0 : x0 + w] = True
    vec = np.zeros((dims.height, dims.width, 2))
    vec[mask] = direction
    return motion_from_mask(mask, vec, frame=frame)


class TestImportanceCosts:
    def test_even_counts_cost_one(self):
        rmap = region_map_quarters()
        motions = [[blob_motion(1, 1)], [blob_motion(1, 1)]]
        pre = ClusterResult(np.array([0, 1]), 2, np.zeros(2))
        costs = importance_costs(pre, motions, rmap, num_frames=2)
        assert costs.rho[0] == pytest.approx(1.0)

    def test_hand_value_for_uneven_counts(self):
        # region 0 hosts 4 motions in group 0, none in group 1, over 10 frames:
        # population variance of {4, 0} is 4, k_s = 1/100, rho = e^0.04
        rmap = region_map_quarters()
        motions = [[blob_motion(1, 1) for _ in range(4)]] + [[] for _ in range(9)]
        labels = np.array([0] + [1] * 9)
        pre = ClusterResult(labels, 2, np.zeros(2))
        costs = importance_costs(pre, motions, rmap, num_frames=10)
        assert costs.rho[0] == pytest.approx(np.exp(0.04))
        assert costs.rho[0] == pytest.approx(1.0408, abs=1e-4)

    def test_rho_monotone_in_spread(self):
        rmap = region_map_quarters()
        pre = ClusterResult(np.array([0, 1]), 2, np.zeros(2))
        mild = [[blob_motion(1, 1)], [blob_motion(1, 1), blob_motion(1, 1)]]
        harsh = [[], [blob_motion(1, 1) for _ in range(3)]]
        c1 = importance_costs(pre, mild, rmap, 2)
        c2 = importance_costs(pre, harsh, rmap, 2)
        assert c2.rho[0] > c1.rho[0] > 1.0

    def test_rho_at_least_one(self):
        rmap = region_map_quarters()
        pre = ClusterResult(np.array([0, 0, 1]), 2, np.zeros(3))
        motions = [[blob_motion(1, 1)], [blob_motion(9, 1)], []]
        costs = importance_costs(pre, motions, rmap, 3)
        assert np.all(costs.rho >= 1.0)


class TestUnmatchedSimilarity:
    def make_costs(self, rho):
        return type(
            "C", (), {"rho": np.asarray(rho, dtype=float), "counts": None, "k_s": 0.0}
        )()

    def test_no_unmatched_gives_one(self):
        result = match_frames(np.array([[5.0]]), CFG)
        costs = self.make_costs([2.0, 4.0])
        value = unmatched_similarity(
            result, costs, region_map_quarters(), [blob_motion(1, 1)], [blob_motion(1, 1)]
        )
        assert value == 1.0

    def test_single_region_overlap(self):
        result = match_frames(np.zeros((1, 0)), CFG)  # one unmatched motion in t
        costs = self.make_costs([2.0, 4.0])
        value = unmatched_similarity(
            result, costs, region_map_quarters(), [blob_motion(1, 1)], []
        )
        assert value == 0.5

    def test_two_region_overlap_hand_value(self):
        result = match_frames(np.zeros((1, 0)), CFG)
        costs = self.make_costs([1.0, 4.0])
        # blob straddles regions 0 and 1: (1/1 + 1/4) / 2 = 0.625
        value = unmatched_similarity(
            result, costs, region_map_quarters(), [blob_motion(6, 2)], []
        )
        assert value == 0.625

    def test_no_semantic_overlap_is_neutral(self):
        result = match_frames(np.zeros((1, 0)), CFG)
        costs = self.make_costs([2.0, 2.0])
        value = unmatched_similarity(
            result, costs, region_map_quarters(), [blob_motion(2, 10)], []
        )
        assert value == 1.0

    def test_range(self):
        result = match_frames(np.zeros((2, 0)), CFG)
        costs = self.make_costs([3.0, 5.0])
        value = unmatched_similarity(
            result, costs, region_map_quarters(),
            [blob_motion(1, 1), blob_motion(9, 1)], [],
        )
        assert 0.0 < value <= 1.0


class TestFrameSimilarity:
    def test_zero_matched_annihilates(self):
        assert frame_similarity(0.0, 0.9) == 0.0

    def test_unit_unmatched_is_identity(self):
        assert frame_similarity(7.25, 1.0) == 7.25

    def test_product(self):
        assert frame_similarity(10.0, 0.625) == 6.25


class TestMergeCluster:
    def test_single_member_passes_through(self):
        m = blob_motion(2, 2, direction=(1.0, 2.0))
        merged = merge_cluster([m], GridDims(16, 16), CFG)
        assert np.array_equal(merged.vectors, m.tef)

    def test_two_member_hand_values(self):
        a = blob_motion(2, 2, w=4, h=4, direction=(1.0, 0.0))
        b = blob_motion(4, 2, w=4, h=4, direction=(0.0, 1.0))
        merged = merge_cluster([a, b], GridDims(16, 16), CFG)
        # overlap pixel: both members present, mean of (1,0) and (0,1)
        assert merged.vectors[3, 5].tolist() == [0.5, 0.5]
        # pixel in a only: frequency 1/2 > 0.4, half of (1,0)
        assert merged.vectors[3, 2].tolist() == [0.5, 0.0]

    def test_strict_threshold_boundary(self):
        dims = GridDims(16, 16)
        members = [blob_motion(2, 2) for _ in range(5)]
        # one pixel where only 2 of 5 members are nonzero: 0.4 is not > 0.4
        for m in members[2:]:
            m.tef[3, 3] = 0.0
        merged = merge_cluster(members, dims, CFG)
        assert merged.vectors[3, 3].tolist() == [0.0, 0.0]
        assert merged.vectors[2, 2].tolist() == [1.0, 0.0]

    def test_support_is_exactly_frequency_filtered(self):
        rng = np.random.default_rng(1)
        dims = GridDims(16, 16)
        members = []
        for k in range(5):
            mask = rng.uniform(size=(16, 16)) < 0.5
            vec = np.zeros((16, 16, 2))
            vec[mask] = (1.0, 1.0)
            if not mask.any():
                mask[0, 0] = True
                vec[0, 0] = (1.0, 1.0)
            members.append(motion_from_mask(mask, vec))
        merged = merge_cluster(members, dims, CFG)
        freq = sum((m.tef != 0).any(axis=-1) for m in members) / 5
        want = freq > CFG.theta_mf
        got = (merged.vectors != 0).any(axis=-1)
        assert np.array_equal(got, want)

    def test_empty_cluster_rejected(self):
        with pytest.raises(ValidationError):
            merge_cluster([], GridDims(4, 4), CFG)


class TestFlowCurve:
    def test_straight_band_tracks_centerline(self):
        curve = extract_flow_curve(MotionField(DIMS, straight_band_pattern()), CFG)
        assert len(curve.children) == 0
        assert len(curve.points) >= 2
        assert np.abs(curve.points[:, 1] - 31.5).max() <= 2.0
        assert np.all(np.diff(curve.points[:, 0]) > 0)

    def test_annulus_tracks_mid_radius(self):
        curve = extract_flow_curve(MotionField(DIMS, annulus_pattern()), CFG)
        r = np.hypot(curve.points[:, 0] - 32, curve.points[:, 1] - 32)
        assert np.abs(r - 15.0).max() <= 3.0
        angles = np.unwrap(np.arctan2(curve.points[:, 1] - 32, curve.points[:, 0] - 32))
        assert abs(angles[-1] - angles[0]) >= 0.8 * 2 * np.pi  # nearly closed

    def test_y_branch_spawns_two_children(self):
        curve = extract_flow_curve(MotionField(DIMS, y_branch_pattern()), CFG)
        assert len(curve.children) == 2
        ends = sorted(ch.points[-1][1] for ch in curve.children)
        assert ends[0] < 28 and ends[1] > 36  # one arm up, one arm down

    def test_all_points_inside_support(self):
        for pattern in (straight_band_pattern(), annulus_pattern(), y_branch_pattern()):
            support = (pattern != 0).any(axis=-1)
            curve = extract_flow_curve(MotionField(DIMS, pattern), CFG)
            stack = [curve]
            while stack:
                c = stack.pop()
                for x, y in c.points:
                    assert support[int(round(y)), int(round(x))]
                stack.extend(c.children)

    def test_consecutive_points_distinct(self):
        curve = extract_flow_curve(MotionField(DIMS, straight_band_pattern()), CFG)
        deltas = np.hypot(*np.diff(curve.points, axis=0).T)
        assert np.all(deltas > 0)

    def test_empty_pattern_rejected(self):
        with pytest.raises(ValidationError):
            extract_flow_curve(MotionField.zeros(DIMS), CFG)


def detect_sequence(cycle, block, seed):
    spec = phase_spec(cycle, block=block, seed=seed, noise=0.1)
    seq, truth = generate(spec)
    starts = [i * block for i in range(len(cycle))]
    mbt = []
    for s in starts:
        tef = coarse_to_fine(seq, s, DiffusionConfig())
        mbt.append(segment(tef, SegmentationConfig(rng_seed=s), frame=s))
    from coherentflow.regions import build_semantic_regions, cluster_coherent_motions

    flat = [m for ms in mbt for m in ms]
    sim_cfg = SimilarityConfig()
    step1 = cluster_coherent_motions(flat, sim_cfg, seed=seed)
    rmap = build_semantic_regions(mbt, step1, seq.dims, seed=seed)
    return truth, starts, mbt, rmap, sim_cfg


class TestClusterFrames:
    def test_alternating_phases_recovered(self):
        truth, starts, mbt, rmap, sim_cfg = detect_sequence([0, 1] * 8, 6, seed=0)
        groups = cluster_frames(mbt, rmap, sim_cfg, CFG, seed=0)
        assert len(groups) == 2
        pred = np.zeros(len(starts), dtype=int)
        for gi, g in enumerate(groups):
            for t in g.frame_indices:
                pred[t] = gi
        tp = [truth.phase_labels[s] for s in starts]
        assert best_match_accuracy(pred, tp) >= 0.9

    def test_identical_frames_form_one_group(self):
        truth, starts, mbt, rmap, sim_cfg = detect_sequence([0] * 6, 6, seed=1)
        groups = cluster_frames(mbt, rmap, sim_cfg, CFG, seed=0)
        assert len(groups) == 1
        assert sorted(groups[0].frame_indices) == list(range(6))

    def test_single_frame_single_group(self):
        truth, starts, mbt, rmap, sim_cfg = detect_sequence([0], 6, seed=2)
        groups = cluster_frames(mbt, rmap, sim_cfg, CFG, seed=0)
        assert len(groups) == 1
        assert groups[0].patterns  # merged pattern populated

    def test_groups_partition_frames(self):
        truth, starts, mbt, rmap, sim_cfg = detect_sequence([0, 1, 2] * 3, 6, seed=3)
        groups = cluster_frames(mbt, rmap, sim_cfg, CFG, seed=0)
        seen = sorted(t for g in groups for t in g.frame_indices)
        assert seen == list(range(len(starts)))
        for g in groups:
            assert all(len(c) >= 1 for c in g.clusters)

    def test_shared_lane_phases_need_unmatch_costs(self):
        # two activities that share one lane and differ in another: the
        # matched similarity alone is ambiguous, the per-region unmatch
        # costs tip the balance
        from coherentflow.regions import build_semantic_regions, cluster_coherent_motions
        from coherentflow.synth import SceneSpec, Phase, generate
        from scenes import DIMS, INTERSECTION_LANES

        block = 6
        cycle = [(0, 2), (0, 3)] * 8
        phases = [Phase(i * block, (i + 1) * block, act) for i, act in enumerate(cycle)]
        spec = SceneSpec(
            dims=DIMS, primitives=list(INTERSECTION_LANES), phases=phases,
            num_frames=block * len(cycle), noise_sigma=0.1, rng_seed=0,
        )
        seq, truth = generate(spec)
        starts = [i * block for i in range(len(cycle))]
        mbt = []
        for s in starts:
            tef = coarse_to_fine(seq, s, DiffusionConfig())
            mbt.append(segment(tef, SegmentationConfig(rng_seed=s), frame=s))
        flat = [m for ms in mbt for m in ms]
        sim_cfg = SimilarityConfig()
        step1 = cluster_coherent_motions(flat, sim_cfg, seed=0)
        rmap = build_semantic_regions(mbt, step1, seq.dims, seed=0)
        groups = cluster_frames(mbt, rmap, sim_cfg, MiningConfig(num_groups=2), seed=0)
        pred = np.zeros(len(cycle), dtype=int)
        for gi, g in enumerate(groups):
            for t in g.frame_indices:
                pred[t] = gi
        tp = [truth.phase_labels[s] for s in starts]
        assert best_match_accuracy(pred, tp) >= 0.9

    def test_frame_similarity_matrix_symmetry(self):
        # symmetry of the full scoring path, via two hand-built frames
        a = [blob_motion(1, 1, frame=0), blob_motion(9, 1, frame=0)]
        b = [blob_motion(1, 1, frame=1)]
        sim_ab = np.array(
            [[100.0], [0.0]]
        )
        res_ab = match_frames(sim_ab, CFG)
        res_ba = match_frames(sim_ab.T, CFG)
        assert matched_similarity(res_ab, 2, 1) == matched_similarity(res_ba, 1, 2)
