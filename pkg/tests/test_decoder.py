"""Decoder stage distributions, rollout semantics, and whole-policy grads."""

import numpy as np
import pytest

from coversched import autodiff as ad
from coversched.autodiff import Tensor
from coversched.decoder import (
    DecodeState,
    DecoderParams,
    _clipped_logits,
    area_context,
    rollout,
    select_area,
    select_pattern,
    select_start,
)
from coversched.encoder import encode
from coversched.errors import AllVisited
from coversched.geometry import Area, Decision, validate_schedule
from coversched.mapgen import AreaMap, generate_map
from coversched.policy import PolicyConfig, PolicyParams


def tiny_policy(seed=0):
    return PolicyParams.init(PolicyConfig.preset("tiny"), seed=seed)


def small_policy(seed=0):
    return PolicyParams.init(PolicyConfig.preset("small"), seed=seed)


class TestContext:
    def test_single_area_graph_mean(self):
        m = generate_map(1, rng=1)
        p = tiny_policy()
        emb = encode(m, p.encoder)
        ctx = area_context(emb, DecodeState.fresh(1), p.decoder)
        # with one node the graph mean equals that node's embedding
        manual = ad.concat(
            [
                ad.reshape(ad.take(emb.nodes, 0), (1, 8)),
                ad.reshape(p.decoder.v_first, (1, 8)),
                ad.reshape(p.decoder.v_last, (1, 8)),
            ],
            axis=1,
        )
        expect = ad.linear(manual, p.decoder.W_F)
        assert np.allclose(ctx.data, expect.data)

    def test_first_step_context_deterministic(self):
        m = generate_map(4, rng=2)
        p = tiny_policy()
        emb = encode(m, p.encoder)
        a = area_context(emb, DecodeState.fresh(4), p.decoder)
        b = area_context(emb, DecodeState.fresh(4), p.decoder)
        assert np.array_equal(a.data, b.data)

    def test_after_one_decision_both_slots_equal(self):
        m = generate_map(4, rng=3)
        p = tiny_policy()
        emb = encode(m, p.encoder)
        state = DecodeState.fresh(4)
        state.tour.append(Decision(2, 0, 0))
        state.visited[2] = True
        ctx = area_context(emb, state, p.decoder)
        h2 = ad.reshape(ad.take(emb.nodes, 2), (1, 8))
        manual = ad.concat([ad.mean(emb.nodes, axis=0, keepdims=True), h2, h2], axis=1)
        expect = ad.linear(manual, p.decoder.W_F)
        assert np.allclose(ctx.data, expect.data)


class TestSelectArea:
    def test_distribution_valid(self):
        m = generate_map(8, rng=4)
        p = small_policy()
        emb = encode(m, p.encoder)
        probs = select_area(emb, DecodeState.fresh(8), p.decoder)
        assert probs.shape == (8,)
        assert np.all(probs.data >= 0)
        assert abs(probs.data.sum() - 1.0) < 1e-9

    def test_clipping_bound(self):
        m = generate_map(8, rng=4)
        p = small_policy()
        emb = encode(m, p.encoder)
        probs = select_area(emb, DecodeState.fresh(8), p.decoder)
        M, n = p.decoder.clip, 8
        bound = np.exp(2 * M) / (n - 1 + np.exp(2 * M))
        assert np.all(probs.data <= bound + 1e-12)

    def test_visited_probability_exactly_zero(self):
        m = generate_map(6, rng=5)
        p = small_policy()
        emb = encode(m, p.encoder)
        state = DecodeState.fresh(6)
        state.visited[[1, 4]] = True
        probs = select_area(emb, state, p.decoder)
        assert probs.data[1] == 0.0 and probs.data[4] == 0.0
        assert abs(probs.data.sum() - 1.0) < 1e-9

    def test_single_unvisited_gets_probability_one(self):
        m = generate_map(5, rng=6)
        p = small_policy()
        emb = encode(m, p.encoder)
        state = DecodeState.fresh(5)
        state.visited[:] = True
        state.visited[3] = False
        probs = select_area(emb, state, p.decoder)
        assert probs.data[3] == 1.0

    def test_all_visited_raises(self):
        m = generate_map(3, rng=7)
        p = tiny_policy()
        emb = encode(m, p.encoder)
        state = DecodeState.fresh(3)
        state.visited[:] = True
        with pytest.raises(AllVisited):
            select_area(emb, state, p.decoder)

    def test_logits_within_clip_range(self):
        p = small_policy()
        q = Tensor(np.random.default_rng(0).normal(size=(1, 16)) * 100)
        keys = Tensor(np.random.default_rng(1).normal(size=(7, 16)) * 100)
        logits = _clipped_logits(q, keys, 16, p.decoder.clip)
        assert np.all(np.abs(logits.data) <= p.decoder.clip)

    def test_shifting_logits_keeps_softmax(self):
        logits = np.random.default_rng(3).normal(size=9)
        a = ad.softmax(Tensor(logits)).data
        b = ad.softmax(Tensor(logits + 123.45)).data
        assert np.allclose(a, b, atol=1e-9)


class TestSelectStartAndPattern:
    def test_corner_distribution(self):
        p = small_policy()
        area = Area.from_center_radius(0.4, 0.4, 0.1)
        probs = select_start([0.1, 0.9], area.corners, p.decoder)
        assert probs.shape == (4,)
        assert abs(probs.data.sum() - 1.0) < 1e-9

    def test_zero_query_weight_gives_uniform(self):
        p = small_policy()
        p.decoder.W_Q2.data[...] = 0.0
        area = Area.from_center_radius(0.4, 0.4, 0.1)
        probs = select_start([0.2, 0.2], area.corners, p.decoder)
        assert np.allclose(probs.data, 0.25, atol=1e-12)

    def test_corner_deterministic(self):
        p = small_policy()
        area = Area.from_center_radius(0.6, 0.3, 0.05)
        a = select_start([0.5, 0.5], area.corners, p.decoder)
        b = select_start([0.5, 0.5], area.corners, p.decoder)
        assert np.array_equal(a.data, b.data)

    def test_single_pattern_probability_one(self):
        p = small_policy()
        probs = select_pattern([0.1, 0.1], [[0.3, 0.3]], p.decoder)
        assert probs.data.shape == (1,)
        assert probs.data[0] == 1.0

    def test_identical_stop_points_equal_probability(self):
        p = small_policy()
        probs = select_pattern([0.1, 0.1], [[0.3, 0.3], [0.3, 0.3]], p.decoder)
        assert np.allclose(probs.data, 0.5, atol=1e-12)

    def test_three_patterns_sum_to_one(self):
        p = small_policy()
        stops = [[0.3, 0.3], [0.1, 0.5], [0.25, 0.25]]
        probs = select_pattern([0.1, 0.1], stops, p.decoder)
        assert probs.shape == (3,)
        assert abs(probs.data.sum() - 1.0) < 1e-9


class TestRollout:
    def test_greedy_deterministic(self):
        m = generate_map(6, rng=8)
        p = small_policy()
        a = rollout(m, p.detached(), mode="greedy")
        b = rollout(m, p.detached(), mode="greedy")
        assert a.schedule.decisions == b.schedule.decisions
        assert a.log_prob.data == b.log_prob.data

    def test_schedule_always_valid(self):
        p = small_policy()
        rng = np.random.default_rng(0)
        for seed in range(20):
            m = generate_map(5, rng=seed)
            res = rollout(m, p.detached(), mode="sample", rng=rng)
            assert validate_schedule(m, res.schedule) == []

    def test_sampling_reproducible(self):
        m = generate_map(6, rng=9)
        p = small_policy()
        a = rollout(m, p.detached(), mode="sample", rng=np.random.default_rng(42))
        b = rollout(m, p.detached(), mode="sample", rng=np.random.default_rng(42))
        assert a.schedule.decisions == b.schedule.decisions

    def test_log_prob_matches_trace_product(self):
        m = generate_map(5, rng=10)
        p = small_policy()
        res = rollout(m, p.detached(), mode="sample", rng=np.random.default_rng(7),
                      record_trace=True)
        assert res.log_prob.data <= 0.0  # probability product <= 1
        total = 0.0
        for step in res.trace:
            d = step.decision
            total += (
                np.log(step.area_probs[d.area])
                + np.log(step.corner_probs[d.corner])
                + np.log(step.pattern_probs[d.pattern])
            )
        assert abs(total - float(res.log_prob.data)) < 1e-9

    def test_trace_masks_visited(self):
        m = generate_map(5, rng=11)
        p = small_policy()
        res = rollout(m, p.detached(), mode="greedy", record_trace=True)
        seen = set()
        for step in res.trace:
            for j in seen:
                assert step.area_probs[j] == 0.0
            seen.add(step.decision.area)

    def test_greedy_tie_break_prefers_lowest_index(self):
        a = Area.from_center_radius(0.5, 0.5, 0.05)
        m = AreaMap.from_areas([a, a, a])  # identical areas -> tied logits
        p = small_policy()
        res = rollout(m, p.detached(), mode="greedy")
        assert res.schedule.decisions[0].area == 0

    def test_forced_replay(self):
        m = generate_map(4, rng=12)
        p = small_policy()
        ref = rollout(m, p.detached(), mode="sample", rng=np.random.default_rng(3))
        replay = rollout(m, p.detached(), forced=ref.schedule.decisions)
        assert replay.schedule.decisions == ref.schedule.decisions
        assert abs(float(replay.log_prob.data) - float(ref.log_prob.data)) < 1e-12

    def test_first_location_is_first_area_center(self):
        m = generate_map(3, rng=13)
        p = small_policy()
        res = rollout(m, p.detached(), mode="greedy", record_trace=True)
        first = res.schedule.decisions[0]
        area = m.areas[first.area]
        # replaying the corner stage from the area center reproduces step 1
        probs = select_start(area.center, area.corners, p.decoder)
        assert np.allclose(probs.data, res.trace[0].corner_probs)

    def test_open_vs_closed_cost(self):
        m = generate_map(4, rng=14)
        p = small_policy()
        closed = rollout(m, p.detached(), closed=True)
        open_ = rollout(m, p.detached(), closed=False)
        assert closed.schedule.total_cost >= open_.schedule.total_cost


class TestWholePolicyGradient:
    def test_grad_check_forced_trajectory(self):
        m = generate_map(4, rng=15)
        p = tiny_policy(seed=1)
        ref = rollout(m, p.detached(), mode="sample", rng=np.random.default_rng(5))
        forced = ref.schedule.decisions
        params = p.parameters()

        def f():
            res = rollout(m, p, forced=forced)
            return ad.neg(res.log_prob)

        # the quantization bound of the difference quotient is subtracted:
        # coordinates below ulp(|loss|)/h sensitivity cannot be resolved
        err = ad.grad_check(f, params, noise_floor="auto")
        assert err < 1e-4, f"policy grad error {err:.2e}"
