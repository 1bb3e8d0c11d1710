"Tests for the scorer, its optimizer and its checkpoints"
import math

import numpy as np
import pytest  # type: ignore

from ouiqa import (
    PRESETS,
    TRAINABLE,
    BatchRecord,
    CheckpointError,
    MissingForwardError,
    OptimizerSettings,
    PatchFeatureGrid,
    ShapeMismatchError,
    adamw_step,
    adamw_update,
    backward,
    cosine_lr,
    extract_patch_features,
    forward,
    init_optimizer,
    init_params,
    load_checkpoint,
    predict,
    save_checkpoint,
    stored_params,
    with_input_normalization,
)
from ouiqa.scorer import TAU_ALIGN_RANGE, checkpoint_bytes, checkpoint_from_bytes
from .datapaths import textured_image

# pylint: disable=invalid-name


def random_grid(rng, patches=4, width=6):
    return PatchFeatureGrid(rng.normal(size=(patches, width)), 1, patches)


def random_params(seed=0, width=6, hidden=5, embed=4, text_width=3):
    """Parameters with a non trivial attention query and decision layer"""
    rng = np.random.default_rng(seed + 1000)
    params = init_params("small", width, text_width, seed, hidden=hidden, embed=embed)
    return params._replace(
        attn=rng.normal(size=embed), w_dec=rng.normal(size=embed), b_dec=np.array(0.3)
    )


def records(grids):
    return [BatchRecord(str(index), grid, 0.5) for index, grid in enumerate(grids)]


class TestForward:
    """Scores, embeddings and attention"""

    def test_presets(self):
        assert PRESETS == {"small": (64, 32), "base": (256, 128)}
        params = init_params("base", text_width=16)
        assert (params.hidden_width, params.embed_width, params.text_width) == (256, 128, 16)
        assert init_params("small", hidden=8).preset == "custom"

    def test_unknown_preset(self):
        with pytest.raises(ValueError):
            init_params("huge")

    def test_initial_score_is_one_half(self):
        params = init_params("small", seed=3)
        grids = [extract_patch_features(textured_image(32, seed), 4, 4) for seed in range(3)]
        scores, embeddings = predict(params, grids)
        assert np.all(scores == 0.5)
        assert np.allclose(np.linalg.norm(embeddings, axis=1), 1.0, atol=1e-6)

    def test_initial_attention_is_uniform(self):
        params = init_params("small")
        grid = extract_patch_features(textured_image(32), 4, 2)
        (record,) = forward(params, records([grid]))
        assert np.allclose(record.attention, 1 / 8)

    def test_single_patch_gets_all_the_attention(self):
        rng = np.random.default_rng(0)
        params = random_params()
        (record,) = forward(params, records([random_grid(rng, patches=1)]))
        assert record.attention.tolist() == [1.0]
        assert np.allclose(record.embedding, record.cache.e[0])

    def test_two_identical_patches_share_the_attention(self):
        rng = np.random.default_rng(1)
        row = rng.normal(size=(1, 6))
        params = random_params()
        grid = PatchFeatureGrid(np.vstack([row, row]), 1, 2)
        (record,) = forward(params, records([grid]))
        assert record.attention == pytest.approx([0.5, 0.5])

    def test_attention_sums_to_one_and_scores_in_range(self):
        rng = np.random.default_rng(2)
        params = random_params()
        batch = forward(params, records([random_grid(rng, patches=7) for _ in range(5)]))
        for record in batch:
            assert record.attention.sum() == pytest.approx(1.0)
            assert 0.0 < record.score < 1.0
            assert np.linalg.norm(record.embedding_hat) == pytest.approx(1.0, abs=1e-6)

    def test_records_do_not_depend_on_the_batch(self):
        rng = np.random.default_rng(3)
        params = random_params()
        grids = [random_grid(rng) for _ in range(4)]
        together = forward(params, records(grids))
        reversed_batch = forward(params, records(grids[::-1]))[::-1]
        alone = [forward(params, records([grid]))[0] for grid in grids]
        for one, other, single in zip(together, reversed_batch, alone):
            assert one.score == other.score == single.score
            assert np.array_equal(one.embedding, single.embedding)

    def test_width_mismatch(self):
        rng = np.random.default_rng(4)
        with pytest.raises(ShapeMismatchError):
            forward(random_params(width=6), records([random_grid(rng, width=5)]))

    def test_attention_requires_forward(self):
        rng = np.random.default_rng(5)
        with pytest.raises(MissingForwardError):
            records([random_grid(rng)])[0].attention  # pylint: disable=expression-not-assigned

    def test_input_normalization(self):
        rng = np.random.default_rng(6)
        features = rng.normal(3.0, 2.0, size=(50, 6))
        features[:, 2] = 1.5
        params = with_input_normalization(random_params(), features)
        assert params.in_mean == pytest.approx(features.mean(axis=0))
        assert params.in_scale[2] == 1.0
        with pytest.raises(ShapeMismatchError):
            with_input_normalization(params, features[:, :4])


class TestBackward:
    """Analytic gradients of the scorer"""

    def loss(self, params, grids, grad_q, grad_hat):
        batch = forward(params, records(grids))
        q = np.array([record.score for record in batch])
        hat = np.array([record.embedding_hat for record in batch])
        return float(grad_q @ q + np.sum(grad_hat * hat))

    def test_zero_upstream_gives_zero_gradients(self):
        rng = np.random.default_rng(0)
        params = random_params()
        batch = forward(params, records([random_grid(rng) for _ in range(3)]))
        grads = backward(params, batch, np.zeros(3), np.zeros((3, 4)))
        assert sorted(grads) == sorted(TRAINABLE)
        for name, grad in grads.items():
            assert np.all(grad == 0.0), name

    def test_linear_loss_matches_finite_differences(self):
        """L = c . q + sum(G * F_hat) has dL/dq = c and dL/dF_hat = G"""
        rng = np.random.default_rng(1)
        params = random_params(seed=1)
        grids = [random_grid(rng) for _ in range(3)]
        grad_q = rng.normal(size=3)
        grad_hat = rng.normal(size=(3, 4))
        batch = forward(params, records(grids))
        analytic = backward(params, batch, grad_q, grad_hat)
        epsilon = 1e-6
        for name in ("w1", "b1", "w2", "b2", "attn", "w_dec", "b_dec"):
            value = getattr(params, name)
            flat = value.reshape(-1)
            numeric = np.zeros_like(flat)
            for index in range(flat.size):
                plus, minus = flat.copy(), flat.copy()
                plus[index] += epsilon
                minus[index] -= epsilon
                up = self.loss(
                    params._replace(**{name: plus.reshape(value.shape)}), grids, grad_q, grad_hat
                )
                down = self.loss(
                    params._replace(**{name: minus.reshape(value.shape)}), grids, grad_q, grad_hat
                )
                numeric[index] = (up - down) / (2 * epsilon)
            assert analytic[name].reshape(-1) == pytest.approx(numeric, rel=1e-5, abs=1e-7), name

    def test_duplicated_record_doubles_its_contribution(self):
        rng = np.random.default_rng(2)
        params = random_params(seed=2)
        grid = random_grid(rng)
        grad_q = np.array([0.7])
        grad_hat = rng.normal(size=(1, 4))
        once = backward(params, forward(params, records([grid])), grad_q, grad_hat)
        twice = backward(
            params,
            forward(params, records([grid, grid])),
            np.repeat(grad_q, 2),
            np.repeat(grad_hat, 2, axis=0),
        )
        for name in ("w1", "b1", "w2", "b2", "attn", "w_dec", "b_dec"):
            assert twice[name] == pytest.approx(2 * once[name]), name

    def test_temperature_gradient_is_chained_through_the_logarithm(self):
        rng = np.random.default_rng(3)
        params = random_params()._replace(log_tau_emb=np.array(math.log(2.0)))
        batch = forward(params, records([random_grid(rng)]))
        grads = backward(params, batch, np.zeros(1), np.zeros((1, 4)), grad_tau_emb=0.25)
        assert float(grads["log_tau_emb"]) == pytest.approx(0.5)

    def test_missing_forward(self):
        rng = np.random.default_rng(4)
        params = random_params()
        with pytest.raises(MissingForwardError):
            backward(params, records([random_grid(rng)]), np.zeros(1), np.zeros((1, 4)))

    def test_upstream_shape_mismatch(self):
        rng = np.random.default_rng(5)
        params = random_params()
        batch = forward(params, records([random_grid(rng)]))
        with pytest.raises(ShapeMismatchError):
            backward(params, batch, np.zeros(2), np.zeros((1, 4)))


class TestOptimizer:
    """Cosine schedule and AdamW"""

    def test_cosine_endpoints(self):
        assert cosine_lr(0, 7000, 3e-6, 8e-7) == pytest.approx(3e-6)
        assert cosine_lr(7000, 7000, 3e-6, 8e-7) == pytest.approx(8e-7)
        assert cosine_lr(3500, 7000, 3e-6, 8e-7) == pytest.approx(1.9e-6)

    def test_cosine_is_constant_after_the_end(self):
        assert cosine_lr(9000, 7000, 3e-6, 8e-7) == cosine_lr(7000, 7000, 3e-6, 8e-7)

    def test_cosine_errors(self):
        with pytest.raises(ValueError):
            cosine_lr(-1, 10, 1e-3, 1e-5)
        with pytest.raises(ValueError):
            cosine_lr(0, 0, 1e-3, 1e-5)

    def test_first_step_on_a_scalar(self):
        """Bias-corrected moments of a unit gradient give a step of lr"""
        settings = OptimizerSettings(lr0=0.1, lr_min=0.0, total_steps=10, weight_decay=0.0)
        tensors = {"p": np.array(2.0)}
        state = init_optimizer(tensors, settings)
        updated, state = adamw_update(tensors, {"p": np.array(1.0)}, state)
        assert float(updated["p"]) == pytest.approx(1.9, abs=1e-7)
        assert state.step == 1
        assert float(state.m["p"]) == pytest.approx(0.1)
        assert float(state.v["p"]) == pytest.approx(0.001)

    def test_zero_gradient_without_decay_changes_nothing(self):
        params = random_params()
        settings = OptimizerSettings(weight_decay=0.0)
        state = init_optimizer(params.trainable(), settings)
        zeros = {name: np.zeros_like(value) for name, value in params.trainable().items()}
        updated, _ = adamw_step(params, zeros, state)
        for name in TRAINABLE:
            assert np.array_equal(getattr(updated, name), getattr(params, name)), name

    def test_zero_gradient_with_decay_shrinks(self):
        settings = OptimizerSettings(lr0=0.1, lr_min=0.0, total_steps=10, weight_decay=0.01)
        tensors = {"p": np.array([1.0, -2.0])}
        state = init_optimizer(tensors, settings)
        updated, _ = adamw_update(tensors, {"p": np.zeros(2)}, state)
        assert updated["p"] == pytest.approx(np.array([1.0, -2.0]) * (1 - 0.1 * 0.01))

    def test_temperatures_are_not_decayed(self):
        params = random_params()._replace(log_tau_emb=np.array(0.5))
        settings = OptimizerSettings(lr0=0.1, weight_decay=0.5)
        state = init_optimizer(params.trainable(), settings)
        zeros = {name: np.zeros_like(value) for name, value in params.trainable().items()}
        updated, _ = adamw_step(params, zeros, state)
        assert float(updated.log_tau_emb) == 0.5
        assert float(updated.tau_align) == float(params.tau_align)
        assert np.all(np.abs(updated.w_dec) < np.abs(params.w_dec))

    def test_tau_align_is_clamped(self):
        params = random_params()._replace(tau_align=np.array(TAU_ALIGN_RANGE[1]))
        settings = OptimizerSettings(lr0=1.0, weight_decay=0.0)
        state = init_optimizer(params.trainable(), settings)
        grads = {name: np.zeros_like(value) for name, value in params.trainable().items()}
        grads["tau_align"] = np.array(-1.0)
        updated, _ = adamw_step(params, grads, state)
        assert float(updated.tau_align) == TAU_ALIGN_RANGE[1]

    def test_gradient_shape_mismatch(self):
        settings = OptimizerSettings()
        tensors = {"p": np.zeros(3)}
        state = init_optimizer(tensors, settings)
        with pytest.raises(ShapeMismatchError):
            adamw_update(tensors, {"p": np.zeros(2)}, state)


class TestCheckpoints:
    """Binary checkpoints"""

    def test_save_load_save_is_byte_identical(self, tmp_path):
        params = random_params()
        state = init_optimizer(params.trainable(), OptimizerSettings(total_steps=77))
        first = str(tmp_path / "first.hrqm")
        second = str(tmp_path / "second.hrqm")
        save_checkpoint(first, params, state)
        loaded, loaded_state = load_checkpoint(first)
        save_checkpoint(second, loaded, loaded_state)
        with open(first, "rb") as one, open(second, "rb") as other:
            assert one.read() == other.read()
        assert loaded.preset == "custom"
        assert loaded_state.settings.total_steps == 77

    def test_values_are_stored_as_float32(self):
        params = random_params()
        loaded, state = checkpoint_from_bytes(checkpoint_bytes(params))
        assert state is None
        assert loaded.w1 == pytest.approx(params.w1.astype(np.float32).astype(np.float64))
        assert loaded.w1.shape == params.w1.shape
        assert loaded.b_dec.shape == ()

    def test_saved_parameters_score_as_reloaded(self, tmp_path):
        params = random_params(seed=3)
        rng = np.random.default_rng(8)
        grids = [random_grid(rng) for _ in range(5)]
        path = str(tmp_path / "model.hrqm")
        stored = save_checkpoint(path, params)
        loaded, _ = load_checkpoint(path)
        assert np.array_equal(predict(stored, grids)[0], predict(loaded, grids)[0])
        assert np.array_equal(stored.w2, loaded.w2)
        assert stored_params(stored).w1 is not stored.w1
        assert np.array_equal(stored_params(stored).w1, stored.w1)

    def test_bad_magic(self):
        content = checkpoint_bytes(random_params())
        with pytest.raises(CheckpointError):
            checkpoint_from_bytes(b"XXXX" + content[4:])

    def test_truncated(self):
        content = checkpoint_bytes(random_params())
        with pytest.raises(CheckpointError):
            checkpoint_from_bytes(content[:-5])

    def test_trailing_bytes(self):
        content = checkpoint_bytes(random_params())
        with pytest.raises(CheckpointError):
            checkpoint_from_bytes(content + b"\x00")

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_checkpoint(str(tmp_path / "nothing.hrqm"))
