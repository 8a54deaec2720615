"""
Representation unlearning: a transformation f_phi applied to the frozen
penultimate representations, trained on a retain consistency loss plus a
beta-weighted forget loss.

Standard regime: the retain loss is measured on retain samples and the forget
loss pulls transformed forget representations towards representations of the
whole training set. Zero-shot regime: only forget samples are read; the
classifier head rows w_c and the class counts stand in for retain data.
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from repunlearn.datasets import AccessLog, AuditedRows, LabeledDataset, UnlearnSplit, retain_class_prior
from repunlearn.encoder import FeedForwardNet, classifier_prototypes, encode
from repunlearn.errors import NumericsError, UnlearningError
from repunlearn.log import progress
from repunlearn.numerics import (
    Params,
    adam_step,
    flatten_params,
    init_adam,
    mlp_backward,
    mlp_forward,
    seeded_rng,
    unflatten_params,
)
from repunlearn.schemas import UnlearnConfig

logger = logging.getLogger(__name__)

SUPPORTED_DEPTHS = (0, 1, 2)


@dataclass(eq=False)
class Transformation:
    """
    Map f_phi from R^dim to R^dim.

    Depth 0 is affine, f(z) = W z + b. Depth 1 and 2 are residual,
    f(z) = z + MLP(z), with `depth` hidden layers and an affine output layer.
    """
    dim: int
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    activation: str = "relu"

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise UnlearningError("Transformation needs matching, nonempty weight and bias lists")
        if self.depth not in SUPPORTED_DEPTHS:
            raise UnlearningError(f"Transformation depth must be 0, 1, or 2, got {self.depth}")
        if self.weights[0].shape[1] != self.dim or self.weights[-1].shape[0] != self.dim:
            raise UnlearningError(
                f"Transformation maps {self.weights[0].shape[1]} -> {self.weights[-1].shape[0]}, expected {self.dim}"
            )
        for W, b in zip(self.weights, self.biases):
            if b.shape != (W.shape[0],):
                raise UnlearningError(f"Bias of shape {b.shape} for weight {W.shape}")

    @property
    def depth(self) -> int:
        return len(self.weights) - 1

    @property
    def widths(self) -> List[int]:
        return [W.shape[0] for W in self.weights[:-1]]

    @property
    def residual(self) -> bool:
        return self.depth > 0

    @property
    def params(self) -> Params:
        return list(zip(self.weights, self.biases))

    @property
    def activations(self) -> List[str]:
        return [self.activation] * self.depth + ["identity"]

    @property
    def flat(self) -> np.ndarray:
        return flatten_params(self.params)

    def with_flat(self, flat: np.ndarray) -> "Transformation":
        params = unflatten_params(np.asarray(flat, dtype=np.float64), self.params)
        return Transformation(self.dim, [W for W, _ in params], [b for _, b in params], self.activation)

    def forward(self, z: np.ndarray):
        """Returns f(z) and the cache for backward"""
        z = np.asarray(z, dtype=np.float64)
        if z.ndim != 2 or z.shape[1] != self.dim:
            raise NumericsError(f"Representation of shape {z.shape} does not match dim {self.dim}")
        out, cache = mlp_forward(self.params, z, self.activations)
        if self.residual:
            out = z + out
        return out, cache

    def backward(self, cache, grad_out: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Flat gradient w.r.t. phi and gradient w.r.t. the input z"""
        grads, grad_in = mlp_backward(self.params, cache, grad_out)
        if self.residual:
            grad_in = grad_in + grad_out
        return flatten_params(grads), grad_in

    def __call__(self, z: np.ndarray) -> np.ndarray:
        return self.forward(z)[0]


def init_transformation(
    d_z: int,
    depth: int,
    widths: Optional[Sequence[int]] = None,
    rng: Optional[np.random.Generator] = None,
    activation: str = "relu",
) -> Transformation:
    """
    Start exactly at the identity map.

    Depth 0: W = I, b = 0. Depth >= 1: hidden layers He-uniform from `rng`,
    output layer zero, so the residual branch contributes nothing at step 0.
    """
    if depth not in SUPPORTED_DEPTHS:
        raise UnlearningError(f"Transformation depth must be 0, 1, or 2, got {depth}")
    if d_z < 1:
        raise UnlearningError(f"Representation dim must be positive, got {d_z}")
    if depth == 0:
        return Transformation(d_z, [np.eye(d_z)], [np.zeros(d_z)], activation)

    widths = list(widths) if widths is not None else [32] * depth
    if len(widths) != depth or any(w < 1 for w in widths):
        raise UnlearningError(f"Need {depth} positive hidden widths, got {widths}")
    if rng is None:
        rng = seeded_rng(0)
    gain = 6.0 if activation == "relu" else 3.0

    weights, biases = [], []
    fan_in = d_z
    for width in widths:
        limit = np.sqrt(gain / fan_in)
        weights.append(rng.uniform(-limit, limit, size=(width, fan_in)))
        biases.append(np.zeros(width))
        fan_in = width
    weights.append(np.zeros((d_z, fan_in)))
    biases.append(np.zeros(d_z))
    return Transformation(d_z, weights, biases, activation)


@dataclass(frozen=True, eq=False)
class ZeroShotMetadata:
    """What the zero-shot regime may know besides the forget samples"""
    prototypes: np.ndarray  # w_c, C x d_z
    class_counts: np.ndarray  # N^c
    forget_counts: np.ndarray  # N_f^c

    def __post_init__(self):
        prototypes = np.array(self.prototypes, dtype=np.float64)
        class_counts = np.array(self.class_counts, dtype=np.int64)
        forget_counts = np.array(self.forget_counts, dtype=np.int64)
        if prototypes.ndim != 2:
            raise UnlearningError(f"Prototypes must be a C x d_z matrix, got shape {prototypes.shape}")
        C = prototypes.shape[0]
        if class_counts.shape != (C,) or forget_counts.shape != (C,):
            raise UnlearningError(f"Count vectors must have length {C}")
        if np.any(forget_counts < 0) or np.any(forget_counts > class_counts):
            raise UnlearningError("Forget counts must lie between 0 and the class counts")
        if int(forget_counts.sum()) >= int(class_counts.sum()):
            raise UnlearningError("N_f = N: nothing would be retained")
        object.__setattr__(self, "prototypes", prototypes)
        object.__setattr__(self, "class_counts", class_counts)
        object.__setattr__(self, "forget_counts", forget_counts)

    @classmethod
    def from_model(cls, net: FeedForwardNet, class_counts, forget_counts) -> "ZeroShotMetadata":
        return cls(classifier_prototypes(net), class_counts, forget_counts)

    @classmethod
    def from_split(cls, net: FeedForwardNet, split: UnlearnSplit) -> "ZeroShotMetadata":
        return cls.from_model(net, split.class_counts, split.forget_counts)

    @property
    def n_total(self) -> int:
        return int(self.class_counts.sum())

    @property
    def n_forget(self) -> int:
        return int(self.forget_counts.sum())

    @property
    def n_retain(self) -> int:
        return self.n_total - self.n_forget

    @property
    def retain_counts(self) -> np.ndarray:
        return self.class_counts - self.forget_counts

    @property
    def retain_prior(self) -> np.ndarray:
        """p(y_r = c), recovered from the full and forget class counts"""
        return retain_class_prior(self.n_total, self.class_counts, self.forget_counts)

    @property
    def global_centroid(self) -> np.ndarray:
        """Count-weighted prototype mean sum_c (N^c / N) w_c"""
        return (self.class_counts @ self.prototypes) / self.n_total


# Losses. Each *_and_grad returns the value and its flat gradient w.r.t. phi.
def _require_batch(z: np.ndarray, name: str) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] == 0:
        raise UnlearningError(f"{name} batch must be a nonempty matrix, got shape {z.shape}")
    return z


def retain_loss_and_grad(z_r: np.ndarray, f: Transformation) -> Tuple[float, np.ndarray]:
    z_r = _require_batch(z_r, "Retain")
    u, cache = f.forward(z_r)
    diff = u - z_r
    value = float(np.sum(diff ** 2) / (2.0 * z_r.shape[0]))
    grad, _ = f.backward(cache, diff / z_r.shape[0])
    return value, grad


def forget_loss_and_grad(z_f: np.ndarray, z_ref: np.ndarray, f: Transformation) -> Tuple[float, np.ndarray]:
    z_f = _require_batch(z_f, "Forget")
    z_ref = _require_batch(z_ref, "Reference")
    u, cache = f.forward(z_f)
    B_f, B = z_f.shape[0], z_ref.shape[0]
    pairwise = np.sum((z_ref[None, :, :] - u[:, None, :]) ** 2)
    value = float(pairwise / (2.0 * B_f * B))
    grad, _ = f.backward(cache, (u - z_ref.mean(axis=0)) / B_f)
    return value, grad


def zs_retain_loss_and_grad(meta: ZeroShotMetadata, f: Transformation) -> Tuple[float, np.ndarray]:
    if meta.n_retain <= 0:
        raise UnlearningError("N_f = N: nothing would be retained")
    w = meta.prototypes
    u, cache = f.forward(w)
    weights = meta.retain_prior[:, None]
    diff = u - w
    value = float(np.sum(weights * diff ** 2) / 2.0)
    grad, _ = f.backward(cache, weights * diff)
    return value, grad


def zs_forget_loss_and_grad(z_f: np.ndarray, meta: ZeroShotMetadata, f: Transformation) -> Tuple[float, np.ndarray]:
    z_f = _require_batch(z_f, "Forget")
    u, cache = f.forward(z_f)
    B_f = z_f.shape[0]
    sq = np.sum((meta.prototypes[None, :, :] - u[:, None, :]) ** 2, axis=2)  # B_f x C
    value = float(np.sum(sq @ meta.class_counts) / (2.0 * B_f * meta.n_total))
    grad, _ = f.backward(cache, (u - meta.global_centroid) / B_f)
    return value, grad


def retain_loss(z_r: np.ndarray, f: Transformation) -> float:
    """(1 / 2B_r) sum_i ||z_r_i - f(z_r_i)||^2"""
    return retain_loss_and_grad(z_r, f)[0]


def forget_loss(z_f: np.ndarray, z_ref: np.ndarray, f: Transformation) -> float:
    """(1 / 2 B_f B) sum_i sum_j ||z_ref_j - f(z_f_i)||^2"""
    return forget_loss_and_grad(z_f, z_ref, f)[0]


def zs_retain_loss(meta: ZeroShotMetadata, f: Transformation) -> float:
    """(1 / 2N_r) sum_c N_r^c ||w_c - f(w_c)||^2"""
    return zs_retain_loss_and_grad(meta, f)[0]


def zs_forget_loss(z_f: np.ndarray, meta: ZeroShotMetadata, f: Transformation) -> float:
    """(1 / 2 B_f N) sum_i sum_c N^c ||w_c - f(z_f_i)||^2"""
    return zs_forget_loss_and_grad(z_f, meta, f)[0]


def total_loss(retain_part: float, forget_part: float, beta: float) -> float:
    if beta < 0:
        raise UnlearningError(f"beta must be non-negative, got {beta}")
    return retain_part + beta * forget_part


# Optimisation loops
def _steps_per_epoch(n_forget: int, batch: int) -> int:
    return -(-n_forget // batch)


def _converged(previous: Optional[float], current: float, tolerance: float) -> bool:
    if previous is None:
        return False
    return abs(current - previous) <= tolerance * max(abs(previous), 1e-12)


def _optimize_transformation(f, objective, n_forget, cfg: UnlearnConfig, rng, stage):
    """
    Adam over phi. `objective(f, forget_idx)` returns (loss, flat grad) for one step.
    An epoch is one shuffled pass over the forget set in batches of cfg.forget_batch.
    """
    flat = f.flat
    state = init_adam(flat.size, lr=cfg.lr)
    previous = None
    n_steps = _steps_per_epoch(n_forget, cfg.forget_batch)
    for epoch in progress(range(cfg.max_epochs), desc=stage, total=cfg.max_epochs, logger=logger):
        order = rng.permutation(n_forget)
        losses = []
        for step in range(n_steps):
            forget_idx = order[step * cfg.forget_batch:(step + 1) * cfg.forget_batch]
            loss, grad = objective(f, forget_idx)
            if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                raise UnlearningError(f"{stage}: non-finite loss at epoch {epoch}, step {step}")
            flat, state = adam_step(flat, grad, state)
            f = f.with_flat(flat)
            losses.append(loss)
        current = float(np.mean(losses))
        logger.debug("%s epoch %d: loss %.8f", stage, epoch, current)
        if _converged(previous, current, cfg.tolerance):
            logger.info("%s: converged after %d epochs (loss %.6f)", stage, epoch + 1, current)
            break
        previous = current
    else:
        logger.info("%s: stopped at max_epochs=%d (loss %.6f)", stage, cfg.max_epochs, previous)
    return f


def unlearn_standard(
    net: FeedForwardNet,
    data: LabeledDataset,
    split: UnlearnSplit,
    cfg: UnlearnConfig,
    rng: Optional[np.random.Generator] = None,
    access_log: Optional[AccessLog] = None,
) -> Transformation:
    """
    Fit f_phi on L_r + beta * L_f with the encoder frozen.

    Each step draws a forget batch from the shuffled epoch order, a retain batch
    without replacement, and a reference batch uniformly over all N samples.
    Spawn order of `rng`: transformation init, batch sampling.
    """
    if split.n_total != data.n_samples:
        raise UnlearningError(f"Split covers {split.n_total} samples, dataset has {data.n_samples}")
    if split.n_forget == 0 or split.n_retain == 0:
        raise UnlearningError("Standard unlearning needs nonempty retain and forget sets")
    total_loss(0.0, 0.0, cfg.beta)
    if rng is None:
        rng = seeded_rng(cfg.seed)
    init_rng, batch_rng = rng.spawn(2)
    log = access_log if access_log is not None else AccessLog()

    forget_rows = AuditedRows(data.features, split.forget_indices, log)
    retain_rows = AuditedRows(data.features, split.retain_indices, log)
    reference_rows = AuditedRows(data.features, np.arange(data.n_samples), log)
    retain_batch = min(cfg.retain_batch, split.n_retain)

    def objective(f: Transformation, forget_idx: np.ndarray):
        retain_idx = batch_rng.choice(split.n_retain, size=retain_batch, replace=False)
        reference_idx = batch_rng.integers(0, data.n_samples, size=cfg.reference_batch)
        z_f = encode(net, forget_rows[forget_idx])
        z_r = encode(net, retain_rows[retain_idx])
        z_ref = encode(net, reference_rows[reference_idx])
        l_r, g_r = retain_loss_and_grad(z_r, f)
        l_f, g_f = forget_loss_and_grad(z_f, z_ref, f)
        return total_loss(l_r, l_f, cfg.beta), g_r + cfg.beta * g_f

    logger.info(
        "Standard unlearning: depth %d, beta %g, N_f=%d, N_r=%d", cfg.depth, cfg.beta, split.n_forget, split.n_retain
    )
    f = init_transformation(net.representation_dim, cfg.depth, cfg.widths, init_rng)
    return _optimize_transformation(f, objective, split.n_forget, cfg, batch_rng, "unlearn")


def unlearn_zero_shot(
    net: FeedForwardNet,
    forget_features,
    meta: ZeroShotMetadata,
    cfg: UnlearnConfig,
    rng: Optional[np.random.Generator] = None,
) -> Transformation:
    """
    Fit f_phi on L_r^zs + beta * L_f^zs reading forget samples only.

    `forget_features` is any row-indexable (an array or an AuditedRows view).
    """
    n_forget = len(forget_features)
    if n_forget == 0:
        raise UnlearningError("Zero-shot unlearning needs a nonempty forget set")
    if meta.prototypes.shape != (net.n_classes, net.representation_dim):
        raise UnlearningError(
            f"Prototypes of shape {meta.prototypes.shape} do not match the classifier head "
            f"({net.n_classes}, {net.representation_dim})"
        )
    total_loss(0.0, 0.0, cfg.beta)
    if rng is None:
        rng = seeded_rng(cfg.seed)
    init_rng, batch_rng = rng.spawn(2)

    def objective(f: Transformation, forget_idx: np.ndarray):
        z_f = encode(net, forget_features[forget_idx])
        l_r, g_r = zs_retain_loss_and_grad(meta, f)
        l_f, g_f = zs_forget_loss_and_grad(z_f, meta, f)
        return total_loss(l_r, l_f, cfg.beta), g_r + cfg.beta * g_f

    logger.info(
        "Zero-shot unlearning: depth %d, beta %g, N_f=%d, N=%d", cfg.depth, cfg.beta, n_forget, meta.n_total
    )
    f = init_transformation(net.representation_dim, cfg.depth, cfg.widths, init_rng)
    return _optimize_transformation(f, objective, n_forget, cfg, batch_rng, "unlearn-zs")
