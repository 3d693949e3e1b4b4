import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from layerif.scores import LayerScoreVector
from layerif.sparsity import (
    SparsityPlan,
    SparsityPlanConfig,
    SparsityPlanError,
    achieved_sparsity,
    base_ratios,
    plan_sparsity,
    reverse_plan,
)


def _oracle(s, d, target, e1, e2, cap):
    """Straightforward clamp-and-resolve, written independently of the planner."""
    s, d = np.asarray(s, float), np.asarray(d, float)
    base = np.full(s.size, (e1 + e2) / 2) if np.ptp(s) == 0 else (s - s.min()) / np.ptp(s) * (e2 - e1) + e1
    pinned = set()
    while True:
        free = [i for i in range(s.size) if i not in pinned]
        mass = sum(base[i] * d[i] for i in free)
        if not free or mass <= 0:
            return None
        with np.errstate(over="ignore"):
            eta = (target * d.sum() - cap * sum(d[i] for i in pinned)) / mass
        if not np.isfinite(eta):
            return None
        phi = np.array([cap if i in pinned else eta * base[i] for i in range(s.size)])
        new = {i for i in free if phi[i] > cap}
        if not new:
            return phi, sorted(pinned)
        pinned |= new


class TestExamples:
    def test_two_layers(self):
        plan = plan_sparsity([0.0, 1.0], SparsityPlanConfig(0.5, [10, 10], e1=0.8, e2=1.2))
        np.testing.assert_allclose(plan.ratios, [0.4, 0.6])
        assert plan.eta == pytest.approx(0.5) and plan.clamped_layers == []

    def test_uniform(self):
        plan = plan_sparsity(np.full(5, 0.3), SparsityPlanConfig(0.5, [7, 3, 9, 1, 4], e1=0.2, e2=0.9))
        np.testing.assert_allclose(plan.ratios, 0.5)

    def test_clamp_fixture(self):
        plan = plan_sparsity([0.0, 0.5, 1.0], SparsityPlanConfig(0.5, [100, 100, 100], e1=0.0, e2=2.0))
        # Layer 2 pins at 0.999; the remaining 50.1 units go to layer 1 alone.
        np.testing.assert_allclose(plan.ratios, [0.0, 0.501, 0.999], rtol=1e-12)
        assert plan.clamped_layers == [2]
        assert plan.eta == pytest.approx(0.501)
        assert plan.achieved == pytest.approx(0.5, rel=1e-12)

    def test_achieved(self):
        assert achieved_sparsity([0.4, 0.6], [10, 10]) == pytest.approx(0.5)
        assert achieved_sparsity([0.0, 0.0], [3, 8]) == 0.0
        assert achieved_sparsity([0.25, 0.75], [30, 10]) == pytest.approx(0.375)
        with pytest.raises(SparsityPlanError):
            achieved_sparsity([0.1], [1, 2])

    def test_reverse_two_layers(self):
        plan = reverse_plan([0.0, 1.0], SparsityPlanConfig(0.5, [10, 10], e1=0.8, e2=1.2))
        np.testing.assert_allclose(plan.ratios, [0.6, 0.4])
        assert plan.reversed

    def test_reverse_uniform_matches_forward(self):
        cfg = SparsityPlanConfig(0.4, [5, 6, 7])
        np.testing.assert_array_equal(reverse_plan(np.full(3, 0.2), cfg).ratios, plan_sparsity(np.full(3, 0.2), cfg).ratios)

    def test_double_reverse(self, rng):
        s = rng.uniform(size=9)
        cfg = SparsityPlanConfig(0.5, rng.integers(10, 100, size=9))
        np.testing.assert_allclose(reverse_plan(1.0 - s, cfg).ratios, plan_sparsity(s, cfg).ratios, rtol=1e-12)

    def test_defaults(self):
        cfg = SparsityPlanConfig(0.5, [1, 2])
        assert (cfg.e1, cfg.e2) == pytest.approx((0.4, 0.6))
        assert SparsityPlanConfig(0.05, [1]).e1 == 0.0
        eps = SparsityPlanConfig.from_epsilon(0.5, 0.2, [1, 2])
        assert (eps.e1, eps.e2) == pytest.approx((0.4, 0.6))

    def test_uses_planning_vector(self):
        v = LayerScoreVector(raw=[5.0, 1.0], strategy="all", normalized=np.array([1.0, 0.0]), smoothed=np.array([0.0, 1.0]))
        plan = plan_sparsity(v, SparsityPlanConfig(0.5, [10, 10], e1=0.8, e2=1.2))
        np.testing.assert_allclose(plan.ratios, [0.4, 0.6])


class TestErrors:
    @pytest.mark.parametrize(
        "kwargs",
        [
            {"target": 0.0},
            {"target": 1.0},
            {"e1": 0.6, "e2": 0.6},
            {"e1": -0.1},
            {"cap": 0.0},
            {"layer_dims": [1, 0]},
        ],
    )
    def test_bad_config(self, kwargs):
        args = {"target": 0.5, "layer_dims": [1, 2], **kwargs}
        with pytest.raises(SparsityPlanError):
            SparsityPlanConfig(**args)

    def test_target_above_cap(self):
        with pytest.raises(SparsityPlanError, match="infeasible"):
            plan_sparsity([0.0, 1.0], SparsityPlanConfig(0.95, [1, 1], cap=0.9))

    def test_length_mismatch(self):
        with pytest.raises(SparsityPlanError):
            plan_sparsity([0.0, 1.0, 0.5], SparsityPlanConfig(0.5, [1, 1]))

    def test_zero_base_mass(self):
        # Only layer 1 has nonzero base; it clamps and layer 0 cannot absorb the rest.
        with pytest.raises(SparsityPlanError, match="infeasible"):
            plan_sparsity([0.0, 1.0], SparsityPlanConfig(0.6, [1, 1], e1=0.0, e2=1.0))


@st.composite
def configs(draw):
    L = draw(st.integers(2, 48))
    s = draw(st.lists(st.floats(0, 1), min_size=L, max_size=L))
    d = draw(st.lists(st.integers(1, 10_000), min_size=L, max_size=L))
    target = draw(st.floats(0.05, 0.9))
    e1 = draw(st.floats(0, 1.5))
    e2 = e1 + draw(st.floats(0.01, 2.0))
    return np.array(s), d, target, e1, e2


class TestProperties:
    @settings(max_examples=300, deadline=None)
    @given(configs())
    def test_constraint_and_oracle(self, c):
        s, d, target, e1, e2 = c
        cfg = SparsityPlanConfig(target, d, e1, e2)
        for planner, scores in ((plan_sparsity, s), (reverse_plan, 1.0 - s)):
            expected = _oracle(scores, d, target, e1, e2, cfg.cap)
            if expected is None:
                with pytest.raises(SparsityPlanError, match="infeasible"):
                    planner(s, cfg)
                continue
            plan = planner(s, cfg)
            assert abs(plan.achieved - target) <= 1e-9 * target
            assert abs(achieved_sparsity(plan.ratios, d) - target) <= 1e-9 * target
            assert np.all(plan.ratios >= 0) and np.all(plan.ratios <= cfg.cap)
            np.testing.assert_allclose(plan.ratios, expected[0], rtol=1e-10, atol=1e-12)
            assert plan.clamped_layers == expected[1]

    @settings(max_examples=200, deadline=None)
    @given(configs(), st.integers(2, 50))
    def test_monotone_and_dim_scaling(self, c, k):
        s, d, target, e1, e2 = c
        cfg = SparsityPlanConfig(target, d, e1, e2)
        try:
            plan = plan_sparsity(s, cfg)
        except SparsityPlanError:
            return
        order = np.argsort(s, kind="stable")
        assert np.all(np.diff(plan.ratios[order]) >= -1e-12)
        scaled = plan_sparsity(s, SparsityPlanConfig(target, [k * x for x in d], e1, e2))
        np.testing.assert_allclose(scaled.ratios, plan.ratios, rtol=1e-12, atol=1e-15)


def test_base_ratios():
    np.testing.assert_allclose(base_ratios([0.0, 0.5, 1.0], 0.0, 2.0), [0, 1, 2])
    np.testing.assert_allclose(base_ratios([0.3, 0.3], 0.2, 0.4), [0.3, 0.3])


def test_json_round_trip():
    plan = plan_sparsity([0.0, 0.5, 1.0], SparsityPlanConfig(0.5, [100, 100, 100], e1=0.0, e2=2.0), source_scores="x")
    payload = json.loads(plan.to_json())
    assert {"ratios", "eta", "e1", "e2", "target", "achieved", "clamped_layers", "source_scores"} <= set(payload)
    back = SparsityPlan.from_dict(payload)
    assert back.ratios.tobytes() == plan.ratios.tobytes() and back.clamped_layers == [2]
