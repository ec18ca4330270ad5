"""
MLP contact classifier.

A small numpy multi-layer perceptron mapping per-point hand features to a
distribution over the ten contact bins.

Key Features:
- Affine -> batchnorm -> PReLU hidden layers (90 units by default), affine output
- Class-weighted cross entropy with hand-written backpropagation
- Adam with decoupled weight decay, mini-batches of 25, early stopping
- Twelve 30-degree rotations about the object up axis for training and prediction
- Occupancy-grid models read back at the mesh vertices
- Central-difference gradient verification

Author: GraspKit Team
Version: 1.0.0
"""

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.transform import Rotation
from scipy.special import log_softmax, softmax

from services.contact import (
    ANNEAL_TEMPERATURE,
    NUM_BINS,
    REBALANCE_LAMBDA,
    ContactDistribution,
    ContactMap,
    class_weights,
    decode_annealed_mean,
    discretize,
)
from services.errors import FeatureError, TrainingDivergedError, TrainingError
from services.features import FAMILY_DIMS, compute_features, occlusion_dropout, voxel_features
from services.geom import VOXEL_RESOLUTION, PointCloud, RigidTransform, VoxelGrid, voxelize

logger = logging.getLogger(__name__)

LEARNING_RATES = (5e-4, 1e-3, 5e-3)
BN_EPSILON = 1e-5
BN_MOMENTUM = 0.1
PRELU_INIT = 0.25
ROTATION_COUNT = 12
UP_AXIS = np.array([0.0, 0.0, 1.0])


# =============================================================================
# CONFIGURATION AND MODEL
# =============================================================================

@dataclass(frozen=True)
class TrainConfig:
    """
    Optimizer and schedule settings.

    A learning rate of 0 is accepted to freeze the Adam step (weight decay
    still applies).
    """

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 5e-4
    batch_size: int = 25
    epochs: int = 100
    patience: int = 10
    seed: int = 0
    rotation_step_deg: float = 30.0
    hidden: Tuple[int, ...] = (90,)
    rebalance_lambda: float = REBALANCE_LAMBDA
    dropout: bool = True

    def __post_init__(self):
        if self.learning_rate not in LEARNING_RATES and self.learning_rate != 0.0:
            raise TrainingError(f"learning rate must be one of {LEARNING_RATES}, got {self.learning_rate}")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise TrainingError("moment decays must lie in (0, 1)")
        if self.epsilon <= 0 or self.weight_decay < 0 or self.batch_size < 1 or self.epochs < 1:
            raise TrainingError("training settings must be positive")
        if self.rotation_step_deg <= 0:
            raise TrainingError("rotation step must be positive")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not self.hidden or min(self.hidden) < 1:
            raise TrainingError("at least one hidden layer with positive width is required")

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()


@dataclass(eq=False)
class MlpModel:
    """
    Parameters and batchnorm running statistics.

    Parameter names: W{l}, b{l}, gamma{l}, beta{l}, alpha{l} per hidden layer
    l and W_out, b_out for the output layer. Buffers: mean{l}, var{l}.
    """

    input_dim: int
    hidden: Tuple[int, ...]
    params: Dict[str, np.ndarray]
    buffers: Dict[str, np.ndarray]
    num_classes: int = NUM_BINS

    def __post_init__(self):
        widths = (self.input_dim,) + tuple(self.hidden)
        for l, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            expected = {f"W{l}": (fan_in, fan_out), f"b{l}": (fan_out,), f"gamma{l}": (fan_out,),
                        f"beta{l}": (fan_out,), f"alpha{l}": (fan_out,)}
            for name, shape in expected.items():
                if self.params[name].shape != shape:
                    raise TrainingError(f"parameter {name} has shape {self.params[name].shape}, expected {shape}")
            if np.any(self.buffers[f"var{l}"] <= 0):
                raise TrainingError("batchnorm variances must be positive")
        if self.params["W_out"].shape != (widths[-1], self.num_classes):
            raise TrainingError("output layer shape mismatch")

    @classmethod
    def initialize(cls, input_dim: int, hidden: Sequence[int] = (90,), seed: int = 0) -> "MlpModel":
        """He-initialized weights, zero biases, unit batchnorm scale, PReLU slope 0.25."""
        rng = np.random.default_rng(seed)
        widths = (input_dim,) + tuple(hidden)
        params, buffers = {}, {}
        for l, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            params[f"W{l}"] = rng.normal(scale=np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
            params[f"b{l}"] = np.zeros(fan_out)
            params[f"gamma{l}"] = np.ones(fan_out)
            params[f"beta{l}"] = np.zeros(fan_out)
            params[f"alpha{l}"] = np.full(fan_out, PRELU_INIT)
            buffers[f"mean{l}"] = np.zeros(fan_out)
            buffers[f"var{l}"] = np.ones(fan_out)
        params["W_out"] = rng.normal(scale=np.sqrt(2.0 / widths[-1]), size=(widths[-1], NUM_BINS))
        params["b_out"] = np.zeros(NUM_BINS)
        return cls(input_dim, tuple(hidden), params, buffers)

    @classmethod
    def zeros(cls, input_dim: int, hidden: Sequence[int] = (90,)) -> "MlpModel":
        model = cls.initialize(input_dim, hidden)
        for name in model.params:
            if name.startswith(("W", "b")):
                model.params[name][...] = 0.0
        return model

    def copy(self) -> "MlpModel":
        return MlpModel(self.input_dim, self.hidden, {k: v.copy() for k, v in self.params.items()},
                        {k: v.copy() for k, v in self.buffers.items()}, self.num_classes)

    @property
    def layers(self) -> int:
        return len(self.hidden)

    def weight_names(self) -> List[str]:
        """Affine weight matrices, the only tensors subject to weight decay."""
        return [f"W{l}" for l in range(self.layers)] + ["W_out"]


# =============================================================================
# FORWARD AND BACKWARD
# =============================================================================

def _forward(model: MlpModel, x: np.ndarray, train: bool):
    """Logits, a backward cache and the updated running statistics."""
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise FeatureError(f"model expects {model.input_dim} features, got shape {x.shape}")
    cache = []
    buffers = {}
    a = x
    for l in range(model.layers):
        p = model.params
        h = a @ p[f"W{l}"] + p[f"b{l}"]
        if train:
            mean = h.mean(axis=0)
            var = h.var(axis=0)
            n = len(h)
            unbiased = var * n / (n - 1) if n > 1 else var
            buffers[f"mean{l}"] = (1 - BN_MOMENTUM) * model.buffers[f"mean{l}"] + BN_MOMENTUM * mean
            buffers[f"var{l}"] = (1 - BN_MOMENTUM) * model.buffers[f"var{l}"] + BN_MOMENTUM * unbiased
        else:
            mean, var = model.buffers[f"mean{l}"], model.buffers[f"var{l}"]
        inv_std = 1.0 / np.sqrt(var + BN_EPSILON)
        xhat = (h - mean) * inv_std
        y = p[f"gamma{l}"] * xhat + p[f"beta{l}"]
        out = np.where(y > 0, y, p[f"alpha{l}"] * y)
        cache.append((a, xhat, inv_std, y))
        a = out
    logits = a @ model.params["W_out"] + model.params["b_out"]
    cache.append((a,))
    return logits, cache, buffers


def forward(model: MlpModel, x, mode: str = "eval") -> np.ndarray:
    """Logits per row; train mode normalizes with batch statistics and updates the running ones."""
    if mode not in ("train", "eval"):
        raise TrainingError(f"unknown mode {mode!r}")
    logits, _, buffers = _forward(model, np.atleast_2d(np.asarray(x, dtype=np.float64)), mode == "train")
    model.buffers.update(buffers)
    return logits


def loss(logits, labels, weights) -> float:
    """Batch mean of w[label] * -log softmax(logits)[label]."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.float64)
    picked = log_softmax(logits, axis=1)[np.arange(len(labels)), labels]
    return float(np.mean(weights[labels] * -picked))


def _backward(model: MlpModel, cache, logits: np.ndarray, labels: np.ndarray, weights: np.ndarray):
    n = len(labels)
    grad = softmax(logits, axis=1)
    grad[np.arange(n), labels] -= 1.0
    grad *= weights[labels][:, None] / n

    grads = {}
    (a,) = cache[-1]
    grads["W_out"] = a.T @ grad
    grads["b_out"] = grad.sum(axis=0)
    upstream = grad @ model.params["W_out"].T
    for l in reversed(range(model.layers)):
        x, xhat, inv_std, y = cache[l]
        positive = y > 0
        alpha = model.params[f"alpha{l}"]
        grads[f"alpha{l}"] = np.sum(np.where(positive, 0.0, y * upstream), axis=0)
        dy = np.where(positive, upstream, alpha * upstream)
        grads[f"gamma{l}"] = np.sum(dy * xhat, axis=0)
        grads[f"beta{l}"] = dy.sum(axis=0)
        dxhat = dy * model.params[f"gamma{l}"]
        dh = inv_std / n * (n * dxhat - dxhat.sum(axis=0) - xhat * np.sum(dxhat * xhat, axis=0))
        grads[f"W{l}"] = x.T @ dh
        grads[f"b{l}"] = dh.sum(axis=0)
        upstream = dh @ model.params[f"W{l}"].T
    return grads


def gradients(model: MlpModel, x, labels, weights=None) -> Tuple[float, Dict[str, np.ndarray]]:
    """Training-mode loss and analytic parameter gradients; running statistics untouched."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    weights = np.ones(NUM_BINS) if weights is None else np.asarray(weights, dtype=np.float64)
    logits, cache, _ = _forward(model, x, train=True)
    return loss(logits, labels, weights), _backward(model, cache, logits, labels, weights)


GradientFn = Callable[[MlpModel, np.ndarray, np.ndarray, np.ndarray], Dict[str, np.ndarray]]


def grad_check(model: MlpModel, x, labels, weights=None, num_params: int = 200, step: float = 1e-5,
               seed: int = 0, gradient_fn: Optional[GradientFn] = None) -> float:
    """
    Max relative error between analytic and central-difference gradients.

    Parameters whose perturbation flips a PReLU input sign are skipped,
    the loss is not differentiable there.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    weights = np.ones(NUM_BINS) if weights is None else np.asarray(weights, dtype=np.float64)
    if gradient_fn is None:
        analytic = gradients(model, x, labels, weights)[1]
    else:
        analytic = gradient_fn(model, x, labels, weights)

    perturbed = model.copy()
    names = sorted(perturbed.params)
    flat = [(name, i) for name in names for i in range(perturbed.params[name].size)]
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(flat))

    def evaluate():
        logits, cache, _ = _forward(perturbed, x, train=True)
        return loss(logits, labels, weights), [c[3] > 0 for c in cache[:-1]]

    worst, checked = 0.0, 0
    for index in order:
        if checked >= num_params:
            break
        name, i = flat[index]
        tensor = perturbed.params[name].reshape(-1)
        original = tensor[i]
        tensor[i] = original + step
        plus, signs_plus = evaluate()
        tensor[i] = original - step
        minus, signs_minus = evaluate()
        tensor[i] = original
        if any(np.any(a != b) for a, b in zip(signs_plus, signs_minus)):
            continue
        numeric = (plus - minus) / (2.0 * step)
        exact = float(analytic[name].reshape(-1)[i])
        error = abs(exact - numeric) / max(abs(exact), abs(numeric), 1e-6)
        worst = max(worst, error)
        checked += 1
    logger.debug(f"grad_check: {checked} parameters, max relative error {worst:.3e}")
    return worst


# =============================================================================
# OPTIMIZATION
# =============================================================================

class AdamW:
    """Adam on every parameter after decoupled decay p <- p - wd * p on weight matrices."""

    def __init__(self, model: MlpModel, config: TrainConfig):
        self.config = config
        self.step_count = 0
        self.first = {k: np.zeros_like(v) for k, v in model.params.items()}
        self.second = {k: np.zeros_like(v) for k, v in model.params.items()}
        self.decayed = set(model.weight_names())

    def step(self, model: MlpModel, grads: Dict[str, np.ndarray]) -> None:
        c = self.config
        self.step_count += 1
        t = self.step_count
        for name, param in model.params.items():
            if name in self.decayed:
                param -= c.weight_decay * param
            g = grads[name]
            self.first[name] = c.beta1 * self.first[name] + (1 - c.beta1) * g
            self.second[name] = c.beta2 * self.second[name] + (1 - c.beta2) * g * g
            m_hat = self.first[name] / (1 - c.beta1 ** t)
            v_hat = self.second[name] / (1 - c.beta2 ** t)
            param -= c.learning_rate * m_hat / (np.sqrt(v_hat) + c.epsilon)


@dataclass
class TrainResult:
    model: MlpModel
    history: List[Dict[str, float]] = field(default_factory=list)
    best_epoch: int = 0


def train(features, labels, config: TrainConfig = TrainConfig(), weights=None,
          validation: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> TrainResult:
    """
    Mini-batch training with early stopping on held-out loss.

    Without validation data every epoch runs and the final model is kept.

    Raises:
        TrainingDivergedError: non-finite loss; carries the last good model
    """
    x = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or len(x) == 0 or len(x) != len(labels):
        raise TrainingError("training needs a non-empty feature matrix with one label per row")
    if weights is None:
        weights = class_weights(labels, config.rebalance_lambda)
    weights = np.asarray(weights, dtype=np.float64)

    rng = np.random.default_rng(config.seed)
    model = MlpModel.initialize(x.shape[1], config.hidden, seed=int(rng.integers(2 ** 32)))
    optimizer = AdamW(model, config)
    result = TrainResult(model.copy())
    best_loss, stale = np.inf, 0

    for epoch in range(config.epochs):
        order = rng.permutation(len(x))
        last_good = model.copy()
        running = 0.0
        for start in range(0, len(x), config.batch_size):
            batch = order[start:start + config.batch_size]
            logits, cache, buffers = _forward(model, x[batch], train=True)
            value = loss(logits, labels[batch], weights)
            if not np.isfinite(value):
                raise TrainingDivergedError(f"loss became {value} in epoch {epoch}", last_good)
            grads = _backward(model, cache, logits, labels[batch], weights)
            model.buffers.update(buffers)
            optimizer.step(model, grads)
            running += value * len(batch)
        record = {"epoch": epoch, "train_loss": running / len(x)}

        if validation is not None:
            held_x, held_labels = validation
            held = loss(forward(model, held_x, "eval"), held_labels, weights)
            record["validation_loss"] = held
            if held < best_loss:
                best_loss, stale = held, 0
                result.model, result.best_epoch = model.copy(), epoch
            else:
                stale += 1
        else:
            result.model, result.best_epoch = model, epoch
        result.history.append(record)
        logger.debug(f"train: {record}")
        if validation is not None and stale >= config.patience:
            logger.info(f"train: early stop after epoch {epoch}, best epoch {result.best_epoch}")
            break

    final = result.history[-1]["train_loss"]
    logger.info(f"train: {len(result.history)} epochs on {len(x)} rows, final loss {final:.5f}")
    return result


# =============================================================================
# ROTATION AUGMENTATION AND PREDICTION
# =============================================================================

def up_rotations(step_deg: float = 30.0) -> List[RigidTransform]:
    count = int(round(360.0 / step_deg))
    return [RigidTransform(Rotation.from_rotvec(UP_AXIS * np.deg2rad(k * step_deg)).as_matrix(), np.zeros(3))
            for k in range(count)]


def rotated_features(grasp, family: str, rotation: RigidTransform) -> np.ndarray:
    """Recompute a grasp's per-vertex features after rotating object and hands together."""
    points = PointCloud(grasp.mesh.vertices, grasp.mesh.vertex_normals).transformed(rotation)
    hands = [h.transformed(rotation) for h in grasp.hands]
    return compute_features(family, points, hands)


def build_training_set(grasps: Sequence, family: str,
                       config: TrainConfig = TrainConfig()) -> Tuple[np.ndarray, np.ndarray]:
    """
    Stacked rotated feature rows and bin labels.

    Each grasp contributes one copy per up-axis rotation; each copy gets its
    own occlusion dropout when enabled.
    """
    if family not in FAMILY_DIMS:
        raise FeatureError(f"unknown feature family {family!r}")
    rows, labels = [], []
    rotations = up_rotations(config.rotation_step_deg)
    for g, grasp in enumerate(grasps):
        target = discretize(grasp.contact)
        for k, rotation in enumerate(rotations):
            matrix = rotated_features(grasp, family, rotation)
            if config.dropout:
                hands = [h.transformed(rotation) for h in grasp.hands]
                matrix = occlusion_dropout(matrix, hands, seed=config.seed * 1_000_003 + g * len(rotations) + k)
            rows.append(matrix.values)
            labels.append(target)
    if not rows:
        raise TrainingError("no grasps to build a training set from")
    logger.info(f"build_training_set: {len(grasps)} grasps x {len(rotations)} rotations, family {family}")
    return np.vstack(rows), np.concatenate(labels)


def predict_distribution(model: MlpModel, feature_sets: Sequence[np.ndarray]) -> ContactDistribution:
    """Eval-mode softmax averaged over feature matrices of the same points."""
    if not feature_sets:
        raise TrainingError("nothing to predict")
    total = sum(softmax(forward(model, f, "eval"), axis=1) for f in feature_sets)
    probabilities = total / len(feature_sets)
    return ContactDistribution(probabilities / probabilities.sum(axis=1, keepdims=True))


def predict(model: MlpModel, grasp, family: str, step_deg: float = 30.0,
            temperature: float = ANNEAL_TEMPERATURE) -> Tuple[ContactDistribution, ContactMap]:
    """Average the 12 rotated predictions, then decode with the annealed mean."""
    feature_sets = [rotated_features(grasp, family, r).values for r in up_rotations(step_deg)]
    distribution = predict_distribution(model, feature_sets)
    return distribution, decode_annealed_mean(distribution, temperature)


def voxel_indices(grid: VoxelGrid, points: np.ndarray) -> np.ndarray:
    """Flat C-order index of the voxel holding each point, clamped to the grid."""
    cells = np.floor((np.asarray(points) - grid.origin) / grid.cell_size).astype(np.int64)
    cells = np.clip(cells, 0, grid.resolution - 1)
    return np.ravel_multi_index(cells.T, grid.occupancy.shape)


def predict_voxels(model: MlpModel, grasp, family: str, resolution: int = VOXEL_RESOLUTION, step_deg: float = 30.0,
                   temperature: float = ANNEAL_TEMPERATURE) -> Tuple[ContactDistribution, ContactMap]:
    """
    Rotation-averaged prediction from a model trained on occupancy-grid features.

    Each rotated copy is voxelized on its own; a vertex takes the prediction
    of the voxel that holds it.
    """
    feature_sets = []
    for rotation in up_rotations(step_deg):
        mesh = grasp.mesh.transformed(rotation)
        grid = voxelize(mesh, resolution)
        rows = voxel_features(grid, family, [h.transformed(rotation) for h in grasp.hands], mesh).values
        feature_sets.append(rows[voxel_indices(grid, mesh.vertices)])
    distribution = predict_distribution(model, feature_sets)
    return distribution, decode_annealed_mean(distribution, temperature)


def accuracy(model: MlpModel, features, labels) -> float:
    predicted = np.argmax(forward(model, features, "eval"), axis=1)
    return float(np.mean(predicted == np.asarray(labels)))
