"""
The original classifier p_theta: a small fully-connected network whose
penultimate (representation) layer is e_theta(x) and whose head rows are the
class prototypes w_c. Also the Retraining and Fine-tuning reference baselines.
"""
import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING, List, Optional, Sequence, Tuple

import numpy as np

from repunlearn.datasets import LabeledDataset
from repunlearn.errors import NumericsError, TrainingDivergedError
from repunlearn.log import progress
from repunlearn.numerics import (
    Params,
    adam_step,
    flatten_params,
    init_adam,
    mlp_forward,
    seeded_rng,
    sgd_step,
    unflatten_params,
    value_and_grad,
)
from repunlearn.schemas import OptimizerEnum, TrainConfig

if TYPE_CHECKING:
    from repunlearn.unlearning import Transformation

logger = logging.getLogger(__name__)

SMOOTHING_WINDOW = 5


@dataclass(eq=False)
class FeedForwardNet:
    """
    Dense classifier with layer_dims = [input, *hidden, representation, classes].

    Hidden layers use `activation`; the representation layer and the head are affine.
    Weights are stored (out, in), so the head rows are the prototypes w_c.
    """
    layer_dims: List[int]
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    activation: str = "relu"

    def __post_init__(self):
        if len(self.layer_dims) < 3:
            raise NumericsError(f"Need at least input, representation and head dims, got {self.layer_dims}")
        if len(self.weights) != len(self.layer_dims) - 1 or len(self.biases) != len(self.weights):
            raise NumericsError("Weights/biases do not match layer_dims")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            expected = (self.layer_dims[i + 1], self.layer_dims[i])
            if W.shape != expected or b.shape != (expected[0],):
                raise NumericsError(f"Layer {i} has shapes {W.shape}/{b.shape}, expected {expected}")

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def representation_dim(self) -> int:
        return self.layer_dims[-2]

    @property
    def n_classes(self) -> int:
        return self.layer_dims[-1]

    @property
    def params(self) -> Params:
        return list(zip(self.weights, self.biases))

    @property
    def encoder_params(self) -> Params:
        return self.params[:-1]

    @property
    def encoder_activations(self) -> List[str]:
        return [self.activation] * (len(self.layer_dims) - 3) + ["identity"]

    @property
    def layer_activations(self) -> List[str]:
        return self.encoder_activations + ["identity"]

    def with_params(self, params: Params) -> "FeedForwardNet":
        return FeedForwardNet(
            layer_dims=list(self.layer_dims),
            weights=[W.copy() for W, _ in params],
            biases=[b.copy() for _, b in params],
            activation=self.activation,
        )

    def copy(self) -> "FeedForwardNet":
        return self.with_params(self.params)


@dataclass(eq=False)
class Pipeline:
    """e_theta, then the optional transformation f_phi, then the head"""
    net: FeedForwardNet
    transformation: Optional["Transformation"] = None


def init_net(layer_dims: Sequence[int], rng: np.random.Generator, activation: str = "relu") -> FeedForwardNet:
    """Symmetric uniform fan-in initialisation (He for ReLU, LeCun otherwise); zero biases"""
    gain = 6.0 if activation == "relu" else 3.0
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        limit = np.sqrt(gain / fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return FeedForwardNet(list(layer_dims), weights, biases, activation)


def encode(net: FeedForwardNet, x: np.ndarray) -> np.ndarray:
    """e_theta(x): activations of the representation layer"""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise NumericsError(f"Input of shape {x.shape} does not match input dim {net.input_dim}")
    z, _ = mlp_forward(net.encoder_params, x, net.encoder_activations)
    return z


def head(net: FeedForwardNet, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != net.representation_dim:
        raise NumericsError(f"Representation of shape {z.shape} does not match dim {net.representation_dim}")
    return z @ net.weights[-1].T + net.biases[-1]


def forward(net: FeedForwardNet, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Returns (z, logits) with z the penultimate representation"""
    z = encode(net, x)
    return z, head(net, z)


def classifier_prototypes(net: FeedForwardNet) -> np.ndarray:
    """Head weight rows w_c (C x d_z), the Neural-Collapse proxies for p(z | y=c)"""
    return net.weights[-1].copy()


def predict_pipeline(p: Pipeline, x: np.ndarray) -> np.ndarray:
    """head(f_phi(e_theta(x))), or head(e_theta(x)) without a transformation"""
    z = encode(p.net, x)
    if p.transformation is not None:
        if p.transformation.dim != p.net.representation_dim:
            raise NumericsError(
                f"Transformation dim {p.transformation.dim} != representation dim {p.net.representation_dim}"
            )
        z = p.transformation(z)
    return head(p.net, z)


# Training
def _smoothed_increases(losses: List[float], window: int = SMOOTHING_WINDOW) -> int:
    if len(losses) <= window:
        return 0
    smooth = np.convolve(losses, np.ones(window) / window, mode="valid")
    return int(np.sum(np.diff(smooth) > 0))


def _optimize(
    net: FeedForwardNet,
    data: LabeledDataset,
    epochs: int,
    batch_size: int,
    lr: float,
    weight_decay: float,
    optimizer: OptimizerEnum,
    rng: np.random.Generator,
    stage: str,
) -> FeedForwardNet:
    """Mini-batch softmax cross-entropy minimisation with per-epoch seeded shuffling"""
    if epochs == 0:
        return net.copy()
    if data.n_samples == 0:
        raise TrainingDivergedError(f"{stage}: no training samples")

    activations = net.layer_activations
    like = net.params
    flat = flatten_params(like)
    coupled_decay = weight_decay if optimizer != OptimizerEnum.ADAMW else 0.0
    state = init_adam(
        flat.size, lr=lr, weight_decay=weight_decay if optimizer == OptimizerEnum.ADAMW else 0.0
    )

    epoch_losses: List[float] = []
    for epoch in progress(range(epochs), desc=stage, total=epochs, logger=logger):
        order = rng.permutation(data.n_samples)
        batch_losses = []
        for start in range(0, data.n_samples, batch_size):
            idx = order[start:start + batch_size]
            params = unflatten_params(flat, like)
            loss, grads = value_and_grad(params, activations, data.features[idx], "cross_entropy", data.labels[idx])
            g = flatten_params(grads)
            if not np.isfinite(loss) or not np.all(np.isfinite(g)):
                raise TrainingDivergedError(f"{stage}: non-finite loss or gradient at epoch {epoch}")
            if coupled_decay:
                g = g + coupled_decay * flat
            if optimizer == OptimizerEnum.SGD:
                flat = sgd_step(flat, g, lr)
            else:
                flat, state = adam_step(flat, g, state)
            batch_losses.append(loss)
        epoch_losses.append(float(np.mean(batch_losses)))
        logger.debug("%s epoch %d: loss %.6f", stage, epoch, epoch_losses[-1])

    increases = _smoothed_increases(epoch_losses)
    if increases:
        logger.warning("%s: smoothed training loss increased in %d epochs", stage, increases)
    logger.info("%s: %d epochs, final loss %.4f", stage, epochs, epoch_losses[-1])
    return net.with_params(unflatten_params(flat, like))


def train_classifier(
    config: TrainConfig,
    data: LabeledDataset,
    dims: Sequence[int],
    rng: Optional[np.random.Generator] = None,
    activation: str = "relu",
    stage: str = "train",
) -> FeedForwardNet:
    """
    Fresh initialisation, then mini-batch cross-entropy training, then
    `center_and_balance` on the same data.

    Spawn order of `rng`: initialisation, shuffling.
    """
    dims = list(dims)
    if dims[0] != data.dim or dims[-1] != data.n_classes:
        raise NumericsError(f"Layer dims {dims} do not fit data (dim {data.dim}, {data.n_classes} classes)")
    if rng is None:
        rng = seeded_rng(config.seed)
    init_rng, shuffle_rng = rng.spawn(2)
    net = init_net(dims, init_rng, activation)
    net = _optimize(
        net, data, config.epochs, config.batch_size, config.lr, config.weight_decay,
        config.optimizer, shuffle_rng, stage,
    )
    return center_and_balance(net, data)


def retrain_baseline(
    config: TrainConfig,
    retain_data: LabeledDataset,
    dims: Sequence[int],
    rng: Optional[np.random.Generator] = None,
    activation: str = "relu",
) -> FeedForwardNet:
    """Exact unlearning reference: train from scratch on the retain set only"""
    return train_classifier(config, retain_data, dims, rng, activation, stage="retrain")


def fine_tune_baseline(
    net: FeedForwardNet,
    retain_data: LabeledDataset,
    epochs: int,
    lr: float,
    rng: Optional[np.random.Generator] = None,
    batch_size: int = 64,
    weight_decay: float = 0.0,
) -> FeedForwardNet:
    """Continue training the original network on the retain set; the input net is not modified"""
    if rng is None:
        rng = seeded_rng(0)
    return _optimize(
        net.copy(), retain_data, epochs, batch_size, lr, weight_decay, OptimizerEnum.ADAM, rng, "finetune",
    )


def center_and_balance(net: FeedForwardNet, data: LabeledDataset) -> FeedForwardNet:
    """
    The same classifier with its representation re-expressed so that the
    representations of `data` have zero mean and the centred class means and
    the head rows w_c have equal mean norm.

    The representation layer and the head are affine, so z -> s (z - m) with
    W -> W / s and b -> b + W m leaves every logit unchanged.
    """
    if data.n_samples == 0:
        return net.copy()
    z = encode(net, data.features)
    m = z.mean(axis=0)
    present = np.bincount(data.labels, minlength=net.n_classes) > 0
    means = class_representation_means(net, data)[present] - m
    W, b = net.weights[-1], net.biases[-1]
    mean_norm = float(np.mean(np.linalg.norm(means, axis=1)))
    prototype_norm = float(np.mean(np.linalg.norm(W[present], axis=1)))
    scale = np.sqrt(prototype_norm / mean_norm) if mean_norm > 0 and prototype_norm > 0 else 1.0

    weights = [W_l.copy() for W_l in net.weights]
    biases = [b_l.copy() for b_l in net.biases]
    weights[-2] = scale * net.weights[-2]
    biases[-2] = scale * (net.biases[-2] - m)
    weights[-1] = W / scale
    biases[-1] = b + W @ m
    logger.debug("Representation centred at %s and scaled by %.4f", np.array2string(m, precision=4), scale)
    return net.with_params(list(zip(weights, biases)))


# Neural-Collapse diagnostics
def class_representation_means(net: FeedForwardNet, data: LabeledDataset) -> np.ndarray:
    z = encode(net, data.features)
    means = np.full((net.n_classes, net.representation_dim), np.nan)
    for c in range(net.n_classes):
        mask = data.labels == c
        if mask.any():
            means[c] = z[mask].mean(axis=0)
    return means


def prototype_alignment(net: FeedForwardNet, data: LabeledDataset) -> np.ndarray:
    """
    Cosine similarity between each head row w_c and the globally centred
    class-c representation mean (NaN for classes absent from `data`).
    """
    means = class_representation_means(net, data)
    means = means - np.nanmean(means, axis=0)
    W = classifier_prototypes(net)
    norms = np.linalg.norm(W, axis=1) * np.linalg.norm(means, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.sum(W * means, axis=1) / norms


def within_class_variability(net: FeedForwardNet, data: LabeledDataset) -> float:
    """tr(Sigma_W) / tr(Sigma_B) of the representations; small values mean collapsed classes"""
    z = encode(net, data.features)
    global_mean = z.mean(axis=0)
    within, between = 0.0, 0.0
    for c in np.unique(data.labels):
        zc = z[data.labels == c]
        mc = zc.mean(axis=0)
        within += np.sum((zc - mc) ** 2)
        between += zc.shape[0] * np.sum((mc - global_mean) ** 2)
    return float(within / between) if between > 0 else float("inf")
