import numpy as np
import pytest
import torch

from lungpipe.errors import ArchError, DataError, DivergenceError, FormatError
from lungpipe.neural import (
    ArchitectureSpec,
    AugmentationConfig,
    TrainConfig,
    apply_geometry,
    augment,
    build_model,
    load_model,
    penultimate_features,
    predict_proba,
    replicate_dataset,
    save_model,
    train,
)
from lungpipe.volume import VoxelCube

TINY = dict(conv_filters=(2, 4, 4), dense_units=8)


def tiny_model(kind="shallow", seed=0, **kwargs):
    spec = ArchitectureSpec(kind=kind, **{**TINY, **kwargs})
    return build_model(spec, ["1", "4", "5"], seed=seed)


def random_cubes(n, seed=0, side=32):
    rng = np.random.default_rng(seed)
    return [rng.random((side, side, side)).astype(np.float32) for _ in range(n)]


class TestArchitectureSpec:
    def test_unknown_kind_raises(self):
        with pytest.raises(ArchError):
            ArchitectureSpec(kind="transformer")

    def test_shallow_defaults_to_no_batchnorm(self):
        assert ArchitectureSpec(kind="shallow").use_batchnorm is False
        assert ArchitectureSpec(kind="deeper").use_batchnorm is True

    def test_deeper_requires_batchnorm(self):
        with pytest.raises(ArchError):
            ArchitectureSpec(kind="deeper", use_batchnorm=False)

    def test_conv_stack_needs_three_blocks(self):
        with pytest.raises(ArchError):
            ArchitectureSpec(kind="shallow", conv_filters=(8, 16))

    def test_sigmoid_head_needs_single_output(self):
        with pytest.raises(ArchError):
            ArchitectureSpec(output_kind="sigmoid", n_outputs=3)

    def test_dropout_range_enforced(self):
        with pytest.raises(ArchError):
            ArchitectureSpec(dropout_final=1.0)

    def test_dict_roundtrip(self):
        spec = ArchitectureSpec(kind="deeper", conv_filters=(4, 8, 16), dense_units=32)
        assert ArchitectureSpec.from_dict(spec.to_dict()) == spec


class TestBuildModel:
    def test_same_seed_identical_weights(self):
        assert tiny_model(seed=3).weights_fingerprint() == tiny_model(seed=3).weights_fingerprint()

    def test_different_seed_differs(self):
        assert tiny_model(seed=3).weights_fingerprint() != tiny_model(seed=4).weights_fingerprint()

    def test_class_order_length_must_match_outputs(self):
        with pytest.raises(ArchError):
            build_model(ArchitectureSpec(**TINY), ["a", "b"])

    def test_forward_shapes(self):
        model = tiny_model()
        x = torch.zeros((2, 1, 32, 32, 32))
        assert model.net(x).shape == (2, 3)
        assert model.net.penultimate(x).shape == (2, 8)

    def test_residual_forward_shape(self):
        spec = ArchitectureSpec(
            kind="residual", conv_filters=(4,), dense_units=8, residual_depth=2,
            n_outputs=1, output_kind="sigmoid",
        )
        model = build_model(spec, ["nodule"], seed=0)
        assert model.net(torch.zeros((2, 1, 32, 32, 32))).shape == (2, 1)

    def test_indivisible_pooling_raises(self):
        with pytest.raises(ArchError):
            build_model(ArchitectureSpec(**TINY), ["1", "4", "5"], input_side=30)

    def test_parameter_count_positive(self):
        assert tiny_model().parameter_count() > 0


class TestTrain:
    def setup_data(self):
        cubes = random_cubes(12, seed=1)
        for i in range(6):  # make two separable classes
            cubes[i] = cubes[i] * 0.2
        labels = ["1"] * 6 + ["4"] * 6
        return cubes, labels

    def test_training_is_deterministic(self):
        cubes, labels = self.setup_data()
        cfg = TrainConfig(max_epochs=3, batch_size=4, seed=7)
        logs = []
        for _ in range(2):
            model = tiny_model(seed=2)
            model = train(model, cubes, labels, cubes[:4], labels[:4], cfg)
            logs.append(model.training_log)
        assert logs[0] == logs[1]

    def test_training_reduces_loss(self):
        cubes, labels = self.setup_data()
        cfg = TrainConfig(max_epochs=10, batch_size=4, seed=0)
        model = train(tiny_model(), cubes, labels, cubes, labels, cfg)
        assert model.training_log[-1]["train_loss"] < model.training_log[0]["train_loss"]

    def test_single_class_raises(self):
        cubes = random_cubes(4)
        with pytest.raises(DataError):
            train(tiny_model(), cubes, ["1"] * 4, cubes, ["1"] * 4, TrainConfig())

    def test_unknown_label_raises(self):
        cubes, labels = self.setup_data()
        labels[0] = "7"
        with pytest.raises(DataError):
            train(tiny_model(), cubes, labels, cubes[:4], ["1"] * 4, TrainConfig())

    def test_loss_head_mismatch_raises(self):
        cubes, labels = self.setup_data()
        cfg = TrainConfig(loss="binary-cross-entropy")
        with pytest.raises(ArchError):
            train(tiny_model(), cubes, labels, cubes, labels, cfg)

    def test_nonfinite_loss_raises_divergence(self):
        cubes, labels = self.setup_data()
        cubes[0] = cubes[0].copy()
        cubes[0][0, 0, 0] = np.nan
        cfg = TrainConfig(max_epochs=2, seed=0)
        with pytest.raises(DivergenceError) as err:
            train(tiny_model(), cubes, labels, cubes[1:5], labels[1:5], cfg)
        assert err.value.epoch == 0

    def test_zero_learning_rate_stops_after_patience(self):
        cubes, labels = self.setup_data()
        cfg = TrainConfig(learning_rate=0.0, max_epochs=40, early_stop_patience=1, seed=0)
        model = train(tiny_model(), cubes, labels, cubes, labels, cfg)
        assert len(model.training_log) == 2


class TestPredict:
    def test_softmax_probabilities_sum_to_one(self):
        model = tiny_model()
        probs = predict_proba(model, random_cubes(5))
        assert probs.shape == (5, 3)
        assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-6)

    def test_single_cube_drops_batch_axis(self):
        probs = predict_proba(tiny_model(), random_cubes(1)[0])
        assert probs.shape == (3,)

    def test_sigmoid_scores_in_unit_interval(self):
        spec = ArchitectureSpec(
            kind="residual", conv_filters=(4,), dense_units=8, residual_depth=1,
            n_outputs=1, output_kind="sigmoid",
        )
        model = build_model(spec, ["nodule"], seed=0)
        scores = predict_proba(model, random_cubes(4))
        assert scores.shape == (4,)
        assert np.all((scores >= 0) & (scores <= 1))

    def test_wrong_cube_side_raises(self):
        with pytest.raises(ArchError):
            predict_proba(tiny_model(), random_cubes(2, side=16))

    def test_penultimate_width(self):
        feats = penultimate_features(tiny_model(), random_cubes(3))
        assert feats.shape == (3, 8)


class TestAugmentation:
    def make_cube(self, seed=0):
        values = np.random.default_rng(seed).random((32, 32, 32)).astype(np.float32)
        return VoxelCube(values, (0.0, 0.0, 0.0), "s")

    def test_identity_config_returns_bit_equal_copy(self):
        cube = self.make_cube()
        cfg = AugmentationConfig(rot90=False, shear=0, zoom_range=0, shift=0,
                                 flip_h=False, flip_v=False)
        out = augment(cube, cfg, np.random.default_rng(0))
        assert out is not cube
        assert np.array_equal(out.values, cube.values)

    def test_four_quarter_rotations_are_identity(self):
        values = self.make_cube().values
        out = values
        for _ in range(4):
            out = apply_geometry(out, rot90_k=1)
        assert np.array_equal(out, values)

    def test_double_flip_is_identity(self):
        values = self.make_cube().values
        out = apply_geometry(apply_geometry(values, flip_h=True), flip_h=True)
        assert np.array_equal(out, values)

    def test_geometry_keeps_unit_range(self):
        values = self.make_cube().values
        out = apply_geometry(values, shear=0.2, zoom=1.3, shift_yx=(3.0, -2.0))
        assert out.min() >= 0.0 and out.max() <= 1.0
        assert not np.array_equal(out, values)

    def test_zoom_moves_mass_outward(self):
        values = np.zeros((8, 8, 8), np.float32)
        values[:, 3:5, 3:5] = 1.0
        out = apply_geometry(values, zoom=2.0)
        assert out.sum() > values.sum()  # the bright core expands in-plane

    def test_replication_factors_per_class(self):
        cubes = [self.make_cube(i) for i in range(4)]
        labels = ["a", "a", "b", "b"]
        cfg = AugmentationConfig(factor={"a": 3, "b": 1})
        out_cubes, out_labels = replicate_dataset(cubes, labels, cfg, seed=0)
        assert out_labels.count("a") == 6
        assert out_labels.count("b") == 2

    def test_originals_are_kept_unchanged(self):
        cubes = [self.make_cube(5)]
        cfg = AugmentationConfig(factor=4)
        out_cubes, _ = replicate_dataset(cubes, ["a"], cfg, seed=1)
        assert len(out_cubes) == 4
        assert np.array_equal(out_cubes[0].values, cubes[0].values)

    def test_replication_deterministic(self):
        cubes = [self.make_cube(2), self.make_cube(3)]
        cfg = AugmentationConfig(factor=3)
        a, _ = replicate_dataset(cubes, ["x", "y"], cfg, seed=9)
        b, _ = replicate_dataset(cubes, ["x", "y"], cfg, seed=9)
        assert all(np.array_equal(u.values, v.values) for u, v in zip(a, b))

    def test_invalid_factor_raises(self):
        with pytest.raises(ValueError):
            AugmentationConfig(factor=0)
        with pytest.raises(ValueError):
            AugmentationConfig(shear=-0.1)


class TestCheckpoint:
    def test_roundtrip_preserves_predictions_and_log(self, tmp_path):
        model = tiny_model(seed=1)
        model.training_log = [{"epoch": 0, "train_loss": 1.0, "val_loss": 1.0, "val_acc": 0.5}]
        path = str(tmp_path / "m.npz")
        save_model(model, path)
        loaded = load_model(path)
        cubes = random_cubes(3)
        assert np.array_equal(predict_proba(model, cubes), predict_proba(loaded, cubes))
        assert loaded.training_log == model.training_log
        assert loaded.class_order == ["1", "4", "5"]
        assert loaded.weights_fingerprint() == model.weights_fingerprint()

    def test_missing_meta_raises(self, tmp_path):
        path = str(tmp_path / "bad.npz")
        np.savez(path, weights=np.zeros(3))
        with pytest.raises(FormatError, match="meta"):
            load_model(path)

    def test_wrong_version_raises(self, tmp_path):
        import json

        path = str(tmp_path / "v.npz")
        np.savez(path, meta=json.dumps({"format_version": 99}))
        with pytest.raises(FormatError, match="version"):
            load_model(path)
