"""
MLP contact classifier tests: forward pass, loss, gradients, training and
rotation-averaged prediction.
"""

import numpy as np
import pytest

from services.contact import NUM_BINS
from services.errors import FeatureError, TrainingDivergedError, TrainingError
from services.features import FAMILY_DIMS
from services.geom import voxelize
from services.learner import (
    LEARNING_RATES,
    AdamW,
    MlpModel,
    TrainConfig,
    accuracy,
    build_training_set,
    forward,
    grad_check,
    gradients,
    loss,
    predict,
    predict_distribution,
    predict_voxels,
    rotated_features,
    train,
    up_rotations,
    voxel_indices,
)


def toy_problem(n: int = 200, seed: int = 0):
    """Two well separated blobs labelled with the outer bins."""
    rng = np.random.default_rng(seed)
    labels = np.where(rng.uniform(size=n) < 0.5, 0, NUM_BINS - 1)
    x = rng.normal(scale=0.3, size=(n, 4))
    x[:, 0] += np.where(labels == 0, -2.0, 2.0)
    return x, labels


# =============================================================================
# FORWARD
# =============================================================================

def test_zero_model_gives_zero_logits():
    model = MlpModel.zeros(5)
    logits = forward(model, np.random.default_rng(0).normal(size=(7, 5)))
    np.testing.assert_array_equal(logits, 0.0)


def test_identical_rows_in_train_mode():
    model = MlpModel.initialize(6, seed=1)
    logits = forward(model, np.ones((8, 6)), "train")
    assert np.all(np.isfinite(logits))
    np.testing.assert_allclose(logits, 0.0, atol=1e-12)


def test_eval_mode_is_row_wise():
    model = MlpModel.initialize(6, seed=2)
    x = np.random.default_rng(3).normal(size=(30, 6))
    order = np.random.default_rng(4).permutation(30)
    np.testing.assert_allclose(forward(model, x[order]), forward(model, x)[order], atol=1e-12)
    np.testing.assert_array_equal(forward(model, x), forward(model, x))


def test_train_mode_updates_running_statistics():
    model = MlpModel.initialize(3, hidden=(4,), seed=5)
    before = model.buffers["mean0"].copy()
    forward(model, np.random.default_rng(6).normal(loc=3.0, size=(10, 3)), "train")
    assert not np.array_equal(model.buffers["mean0"], before)


def test_feature_dimension_mismatch():
    with pytest.raises(FeatureError):
        forward(MlpModel.initialize(40), np.zeros((2, 23)))


def test_unknown_mode():
    with pytest.raises(TrainingError):
        forward(MlpModel.initialize(3), np.zeros((2, 3)), "test")


def test_model_shape_validation():
    model = MlpModel.initialize(3, hidden=(4,))
    params = dict(model.params, W0=np.zeros((3, 5)))
    with pytest.raises(TrainingError):
        MlpModel(3, (4,), params, model.buffers)


# =============================================================================
# LOSS AND GRADIENTS
# =============================================================================

def test_confident_correct_logits_have_tiny_loss():
    labels = np.array([0, 4, 9])
    logits = np.full((3, NUM_BINS), -30.0)
    logits[np.arange(3), labels] = 30.0
    assert loss(logits, labels, np.ones(NUM_BINS)) < 1e-9


def test_uniform_logits_give_log_ten():
    assert loss(np.zeros((5, NUM_BINS)), [1, 2, 3, 4, 5], np.ones(NUM_BINS)) == pytest.approx(np.log(10.0))


def test_doubling_weights_doubles_loss():
    rng = np.random.default_rng(7)
    logits = rng.normal(size=(20, NUM_BINS))
    labels = rng.integers(0, NUM_BINS, size=20)
    weights = rng.uniform(0.5, 2.0, size=NUM_BINS)
    assert loss(logits, labels, 2.0 * weights) == pytest.approx(2.0 * loss(logits, labels, weights))
    assert loss(logits, labels, weights) >= 0.0


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(8)
    model = MlpModel.initialize(7, hidden=(12,), seed=9)
    x = rng.normal(size=(16, 7))
    labels = rng.integers(0, NUM_BINS, size=16)
    weights = rng.uniform(0.5, 2.0, size=NUM_BINS)
    assert grad_check(model, x, labels, weights) < 1e-4


def test_two_hidden_layers_pass_gradient_check():
    rng = np.random.default_rng(10)
    model = MlpModel.initialize(5, hidden=(8, 6), seed=11)
    assert grad_check(model, rng.normal(size=(12, 5)), rng.integers(0, NUM_BINS, size=12)) < 1e-4


def test_corrupted_gradient_is_detected():
    rng = np.random.default_rng(12)
    model = MlpModel.initialize(7, hidden=(12,), seed=13)
    x = rng.normal(size=(16, 7))
    labels = rng.integers(0, NUM_BINS, size=16)

    def corrupted(model, x, labels, weights):
        grads = gradients(model, x, labels, weights)[1]
        return {name: 1.5 * g + 0.01 for name, g in grads.items()}

    assert grad_check(model, x, labels, gradient_fn=corrupted) > 1e-2


def test_zero_input_gives_zero_first_layer_gradient():
    model = MlpModel.initialize(4, seed=14)
    _, grads = gradients(model, np.zeros((6, 4)), np.arange(6))
    np.testing.assert_array_equal(grads["W0"], 0.0)


def test_gradients_leave_running_statistics_alone():
    model = MlpModel.initialize(4, seed=15)
    before = {k: v.copy() for k, v in model.buffers.items()}
    gradients(model, np.random.default_rng(16).normal(size=(6, 4)), np.arange(6))
    for name, value in before.items():
        np.testing.assert_array_equal(model.buffers[name], value)


# =============================================================================
# TRAINING
# =============================================================================

def test_config_rejects_rate_outside_grid():
    with pytest.raises(TrainingError):
        TrainConfig(learning_rate=2e-3)


def test_config_rejects_empty_hidden_layers():
    with pytest.raises(TrainingError):
        TrainConfig(hidden=())


def test_config_digest_tracks_settings():
    assert TrainConfig().digest() == TrainConfig().digest()
    assert TrainConfig(seed=1).digest() != TrainConfig().digest()


def test_loss_decreases_over_first_adam_steps():
    x, labels = toy_problem(25)
    config = TrainConfig(learning_rate=5e-4)
    model = MlpModel.initialize(x.shape[1], seed=17)
    optimizer = AdamW(model, config)
    losses = []
    for _ in range(10):
        value, grads = gradients(model, x, labels)
        losses.append(value)
        optimizer.step(model, grads)
    assert losses[-1] < losses[0]


def test_toy_problem_is_learned():
    x, labels = toy_problem()
    result = train(x, labels, TrainConfig(learning_rate=5e-3, epochs=200, seed=3))
    assert accuracy(result.model, x, labels) == 1.0
    assert len(result.history) == 200


def test_training_is_seed_deterministic():
    x, labels = toy_problem(60)
    config = TrainConfig(epochs=5, seed=4)
    first, second = train(x, labels, config).model, train(x, labels, config).model
    for name in first.params:
        np.testing.assert_array_equal(first.params[name], second.params[name])


def test_zero_rate_only_applies_weight_decay():
    x, labels = toy_problem(60)
    config = TrainConfig(learning_rate=0.0, epochs=2, seed=5)
    rng = np.random.default_rng(config.seed)
    initial = MlpModel.initialize(x.shape[1], config.hidden, seed=int(rng.integers(2 ** 32)))
    trained = train(x, labels, config).model
    steps = config.epochs * int(np.ceil(len(x) / config.batch_size))
    shrink = (1.0 - config.weight_decay) ** steps
    for name in trained.params:
        expected = initial.params[name] * (shrink if name in initial.weight_names() else 1.0)
        np.testing.assert_allclose(trained.params[name], expected, rtol=1e-12, atol=1e-15)


@pytest.mark.parametrize("rate", LEARNING_RATES)
def test_weight_decay_is_not_scaled_by_the_rate(rate):
    config = TrainConfig(learning_rate=rate)
    model = MlpModel.initialize(12, seed=8)
    before = {name: value.copy() for name, value in model.params.items()}
    AdamW(model, config).step(model, {name: np.zeros_like(value) for name, value in model.params.items()})
    for name in model.weight_names():
        np.testing.assert_allclose(model.params[name], (1.0 - config.weight_decay) * before[name], rtol=1e-12)
    np.testing.assert_array_equal(model.params["b_out"], before["b_out"])


def test_validation_tracks_best_epoch():
    x, labels = toy_problem(80)
    held_x, held_labels = toy_problem(40, seed=1)
    result = train(x, labels, TrainConfig(epochs=30, patience=3, seed=6), validation=(held_x, held_labels))
    assert all("validation_loss" in record for record in result.history)
    best = min(r["validation_loss"] for r in result.history)
    assert result.history[result.best_epoch]["validation_loss"] == best


def test_non_finite_loss_aborts_with_last_good_model():
    x, labels = toy_problem(30)
    x[3, 0] = np.inf
    with pytest.raises(TrainingDivergedError) as info:
        train(x, labels, TrainConfig(epochs=2))
    assert isinstance(info.value.last_good_model, MlpModel)


def test_training_needs_rows():
    with pytest.raises(TrainingError):
        train(np.zeros((0, 3)), np.zeros(0, dtype=int))


# =============================================================================
# ROTATIONS AND PREDICTION
# =============================================================================

def test_up_rotations():
    rotations = up_rotations()
    assert len(rotations) == 12
    np.testing.assert_allclose(rotations[0].as_matrix(), np.eye(4), atol=1e-15)
    np.testing.assert_allclose(rotations[3].apply([1.0, 0.0, 0.0]), [0.0, 1.0, 0.0], atol=1e-12)
    for rotation in rotations:
        np.testing.assert_allclose(rotation.apply([0.0, 0.0, 1.0]), [0.0, 0.0, 1.0], atol=1e-12)


def test_training_set_has_one_copy_per_rotation(synthetic_grasp):
    config = TrainConfig(dropout=False)
    x, labels = build_training_set([synthetic_grasp], "skeleton", config)
    vertices = len(synthetic_grasp.mesh.vertices)
    assert x.shape == (12 * vertices, FAMILY_DIMS["skeleton"])
    np.testing.assert_array_equal(labels[:vertices], labels[vertices:2 * vertices])


def test_training_set_rejects_unknown_family(synthetic_grasp):
    with pytest.raises(FeatureError):
        build_training_set([synthetic_grasp], "pointnet")


def test_zero_model_predicts_half_everywhere(synthetic_grasp):
    model = MlpModel.zeros(FAMILY_DIMS["mesh"])
    distribution, contact = predict(model, synthetic_grasp, "mesh")
    np.testing.assert_allclose(distribution.probabilities, 1.0 / NUM_BINS, atol=1e-12)
    np.testing.assert_allclose(contact.values, 0.5, atol=1e-12)


def test_rotation_average_of_invariant_features(synthetic_grasp):
    model = MlpModel.initialize(FAMILY_DIMS["skeleton"], seed=18)
    rotations = up_rotations()
    base = rotated_features(synthetic_grasp, "skeleton", rotations[0]).values
    np.testing.assert_allclose(rotated_features(synthetic_grasp, "skeleton", rotations[5]).values, base, atol=1e-9)
    distribution, _ = predict(model, synthetic_grasp, "skeleton")
    np.testing.assert_allclose(distribution.probabilities, predict_distribution(model, [base]).probabilities,
                               atol=1e-8)
    np.testing.assert_allclose(distribution.probabilities.sum(axis=1), 1.0, atol=1e-6)


def test_nothing_to_predict():
    with pytest.raises(TrainingError):
        predict_distribution(MlpModel.initialize(3), [])


def test_voxel_indices_hold_their_points(unit_cube):
    grid = voxelize(unit_cube, 4)
    np.testing.assert_array_equal(voxel_indices(grid, grid.centers()), np.arange(4 ** 3))
    corners = voxel_indices(grid, unit_cube.vertices)
    assert corners[0] == 0
    assert corners[7] == 4 ** 3 - 1


def test_occupancy_model_prediction_covers_every_vertex(synthetic_grasp):
    model = MlpModel.zeros(FAMILY_DIMS["skeleton"] + 1)
    distribution, contact = predict_voxels(model, synthetic_grasp, "skeleton", resolution=8, step_deg=90.0)
    assert distribution.probabilities.shape == (len(synthetic_grasp.mesh.vertices), NUM_BINS)
    np.testing.assert_allclose(contact.values, 0.5, atol=1e-9)
