import numpy as np
import pytest

from layerif.pruning import (
    PruneMask,
    PruningError,
    activation_weighted_mask,
    apply_mask,
    build_mask,
    canonical_criterion,
    global_sparsity,
    input_feature_norms,
    lowest_scored_per_row,
    magnitude_mask,
    smallest_magnitude,
)
from layerif.toy import TaskConfig, ToyConfig, ToyTransformer, evaluate, generate_task

SMALL = ToyConfig(num_blocks=3, d_model=8, n_heads=2, d_ff=12, vocab=5, seq_len=6, num_classes=3)
SMALL_TASK = TaskConfig(vocab=5, seq_len=6, num_classes=3, sizes=(24, 8, 8))


@pytest.fixture(scope="module")
def small():
    return ToyTransformer(SMALL), generate_task(SMALL_TASK)


class TestMagnitude:
    def test_hand_example(self):
        np.testing.assert_array_equal(smallest_magnitude([0.1, -0.5, 0.2, -0.05], 0.5), [True, False, False, True])

    def test_cap_count(self, rng):
        assert smallest_magnitude(rng.normal(size=1000), 0.999).sum() == 999

    def test_ties_lower_index(self):
        np.testing.assert_array_equal(smallest_magnitude([1.0, -1.0, 1.0, 2.0], 0.5), [True, True, False, False])

    def test_zero_ratio_identity(self, small):
        model, _ = small
        mask = magnitude_mask(model, [0.0, 0.3, 0.0])
        assert not any(mask.masks[n].any() for n in model.block_matrix_names(0) + model.block_matrix_names(2))
        assert mask.achieved[0] == 0.0

    def test_per_block_rounding(self, small):
        model, _ = small
        ratios = [0.1, 0.5, 0.73]
        mask = magnitude_mask(model, ratios)
        d = SMALL.block_dim
        for r, a in zip(ratios, mask.achieved):
            assert r - 1 / d < a <= r + 1e-12

    def test_per_matrix_rounding(self, small):
        model, _ = small
        ratios = [0.1, 0.5, 0.73]
        mask = magnitude_mask(model, ratios, group="matrix")
        for b, r in enumerate(ratios):
            for n in model.block_matrix_names(b):
                a = mask.masks[n].mean()
                assert r - 1 / mask.masks[n].size < a <= r + 1e-12

    def test_block_grouping_uses_global_threshold(self, small):
        model, _ = small
        mask = magnitude_mask(model, [0.5, 0.5, 0.5])
        names = model.block_matrix_names(1)
        kept = np.concatenate([np.abs(model.params[n][~mask.masks[n]]) for n in names])
        dropped = np.concatenate([np.abs(model.params[n][mask.masks[n]]) for n in names])
        assert dropped.max() <= kept.min()

    def test_plan_mismatch(self, small):
        with pytest.raises(PruningError):
            magnitude_mask(small[0], [0.5, 0.5])
        with pytest.raises(PruningError):
            magnitude_mask(small[0], [0.5, 0.5, 1.5])


class TestActivationWeighted:
    def test_hand_example(self):
        (m,) = lowest_scored_per_row([np.array([[1.0, 2.0], [3.0, 0.1]])], [np.array([1.0, 10.0])], 0.5)
        np.testing.assert_array_equal(m, [[True, False], [False, True]])

    def test_zero_norm_column_first(self, rng):
        w = rng.uniform(1, 2, size=(4, 5))
        norms = np.array([1.0, 1.0, 0.0, 1.0, 1.0])
        (m,) = lowest_scored_per_row([w], [norms], 0.2)
        assert m[:, 2].all() and m.sum() == 4

    def test_equal_norms_is_rowwise_magnitude(self, rng):
        w = rng.normal(size=(6, 8))
        (m,) = lowest_scored_per_row([w], [np.full(8, 3.0)], 0.25)
        for j in range(6):
            np.testing.assert_array_equal(m[j], smallest_magnitude(w[j], 0.25))

    def test_block_total_exact(self, small, rng):
        model, task = small
        ratios = [0.37, 0.5, 0.91]
        mask = activation_weighted_mask(model, ratios, task.split("val")[0])
        d = SMALL.block_dim
        for b, r in enumerate(ratios):
            removed = sum(int(mask.masks[n].sum()) for n in model.block_matrix_names(b))
            assert removed == int(np.floor(r * d + 1e-9))

    def test_feature_norms_shapes(self, small):
        model, task = small
        norms = input_feature_norms(model, task.split("val")[0])
        for n in model.prunable_names():
            assert norms[n].shape == (model.params[n].shape[1],)
            assert np.all(norms[n] >= 0)

    def test_empty_calibration(self, small):
        with pytest.raises(PruningError):
            activation_weighted_mask(small[0], [0.5] * 3, np.zeros((0, 6), dtype=np.int64))

    def test_deterministic(self, small):
        model, task = small
        calib = task.split("val")[0]
        a = activation_weighted_mask(model, [0.5] * 3, calib)
        b = activation_weighted_mask(model, [0.5] * 3, calib)
        assert all(a.masks[n].tobytes() == b.masks[n].tobytes() for n in a.masks)


class TestApply:
    def test_zeroes_masked_only(self, small):
        model, _ = small
        mask = magnitude_mask(model, [0.4] * 3)
        pruned = apply_mask(model, mask)
        for n, m in mask.masks.items():
            assert np.all(pruned.params[n][m] == 0)
            assert pruned.params[n][~m].tobytes() == model.params[n][~m].tobytes()
        assert global_sparsity(mask, model) > 0
        name = model.block_matrix_names(0)[0]
        assert np.all(model.params[name][mask.masks[name]] != 0)

    def test_idempotent(self, small):
        model, _ = small
        mask = magnitude_mask(model, [0.4] * 3)
        once = apply_mask(model, mask)
        twice = apply_mask(once, mask)
        assert all(once.params[n].tobytes() == twice.params[n].tobytes() for n in once.params)

    def test_empty_and_full(self, small):
        model, _ = small
        empty = PruneMask({}, "magnitude")
        assert all(apply_mask(model, empty).params[n].tobytes() == model.params[n].tobytes() for n in model.params)
        assert global_sparsity(empty, model) == 0.0
        name = model.block_matrix_names(0)[0]
        full = PruneMask({name: np.ones(model.params[name].shape, bool)}, "magnitude")
        assert np.all(apply_mask(model, full).params[name] == 0)
        everything = PruneMask({n: np.ones(model.params[n].shape, bool) for n in model.prunable_names()}, "magnitude")
        assert global_sparsity(everything, model) == 1.0

    def test_shape_mismatch(self, small):
        model, _ = small
        name = model.block_matrix_names(0)[0]
        with pytest.raises(PruningError):
            apply_mask(model, PruneMask({name: np.ones((1, 1), bool)}, "magnitude"))

    @pytest.mark.parametrize("criterion", ["magnitude", "wanda"])
    def test_finite_loss_at_cap(self, small, criterion):
        model, task = small
        mask = build_mask(model, [0.999] * 3, criterion, task.split("val")[0])
        _, ce = evaluate(apply_mask(model, mask), *task.split("test"))
        assert np.isfinite(ce)


def test_criterion_names():
    assert canonical_criterion("wanda") == "activation-weighted"
    with pytest.raises(PruningError):
        canonical_criterion("sparsegpt")


def test_mask_round_trip(tmp_path, small):
    model, task = small
    mask = activation_weighted_mask(model, [0.2, 0.5, 0.8], task.split("val")[0])
    mask.save(tmp_path / "m")
    back = PruneMask.load(tmp_path / "m")
    assert back.criterion == mask.criterion and back.achieved == mask.achieved
    assert set(back.masks) == set(mask.masks)
    for n in mask.masks:
        np.testing.assert_array_equal(back.masks[n], mask.masks[n])
