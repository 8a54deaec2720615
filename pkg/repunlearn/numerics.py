"""
Numerical substrate for representation unlearning.

Seeded generators, isotropic Gaussian sampling and divergences, first-order
optimizers over flat parameter vectors, and analytic backward passes for the
small dense stacks used by the encoder and the transformation.
Everything works in float64 and is a pure function of its inputs and seeds.
"""
import logging
from dataclasses import dataclass, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from repunlearn.errors import NumericsError, UnsupportedOperationError

logger = logging.getLogger(__name__)

# A dense stack is a list of (W, b) pairs with W of shape (out, in).
Params = List[Tuple[np.ndarray, np.ndarray]]

SUPPORTED_ACTIVATIONS = ("relu", "tanh", "identity")
SUPPORTED_LOSSES = ("cross_entropy", "mse")

LOG_CLAMP = 1e-12


# Random streams
def seeded_rng(seed: int) -> np.random.Generator:
    """Generator over PCG64; the draw stream is a pure function of seed"""
    if int(seed) < 0:
        raise NumericsError(f"Seed must be an unsigned integer, got {seed}")
    return np.random.Generator(np.random.PCG64(int(seed)))


def derive_seed(base_seed: int, *keys: int) -> int:
    """Seed of an independent sub-stream identified by integer keys (SeedSequence hashing)"""
    if int(base_seed) < 0 or any(int(k) < 0 for k in keys):
        raise NumericsError(f"Seeds and stream keys must be unsigned, got {base_seed}, {keys}")
    state = np.random.SeedSequence([int(base_seed), *[int(k) for k in keys]]).generate_state(1, dtype=np.uint64)
    return int(state[0])


def sample_gaussian(
    rng: np.random.Generator,
    mean: np.ndarray,
    cov_scale: float,
    size: Optional[int] = None,
) -> np.ndarray:
    """
    Draw from N(mean, cov_scale * I).

    `mean` may be a vector or a batch of means (one draw per row). With `size`,
    returns `size` draws stacked along a new leading axis.
    """
    if not cov_scale > 0:
        raise NumericsError(f"cov_scale must be positive, got {cov_scale}")
    mean = np.asarray(mean, dtype=np.float64)
    shape = mean.shape if size is None else (size, *mean.shape)
    return mean + np.sqrt(cov_scale) * rng.standard_normal(shape)


# Divergences
def gaussian_kl_identity_cov(mu1: np.ndarray, mu2: np.ndarray):
    """KL(N(mu1, I) || N(mu2, I)) = 0.5 * ||mu1 - mu2||^2, reduced over the last axis"""
    mu1 = np.asarray(mu1, dtype=np.float64)
    mu2 = np.asarray(mu2, dtype=np.float64)
    if mu1.shape != mu2.shape:
        raise NumericsError(f"Dimension mismatch: {mu1.shape} vs {mu2.shape}")
    kl = 0.5 * np.sum((mu1 - mu2) ** 2, axis=-1)
    return float(kl) if np.ndim(kl) == 0 else kl


def log_gaussian_identity_cov(x: np.ndarray, mean: np.ndarray) -> np.ndarray:
    """log N(x; mean, I) over the last axis (broadcasting)"""
    d = np.shape(x)[-1]
    return -0.5 * np.sum((x - mean) ** 2, axis=-1) - 0.5 * d * np.log(2.0 * np.pi)


# Optimizers
@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0  # decoupled (AdamW); 0 gives plain Adam


def init_adam(
    n_params: int,
    lr: float = 1e-3,
    betas: Tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> AdamState:
    return AdamState(
        m=np.zeros(n_params),
        v=np.zeros(n_params),
        step=0,
        lr=lr,
        beta1=betas[0],
        beta2=betas[1],
        eps=eps,
        weight_decay=weight_decay,
    )


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState) -> Tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update; returns new params and state, inputs untouched"""
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise NumericsError(
            f"Shape mismatch: params {params.shape}, grads {grads.shape}, state {state.m.shape}"
        )
    if not np.all(np.isfinite(grads)):
        raise NumericsError("Non-finite gradient passed to adam_step")

    step = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    v = state.beta2 * state.v + (1.0 - state.beta2) * grads ** 2
    m_hat = m / (1.0 - state.beta1 ** step)
    v_hat = v / (1.0 - state.beta2 ** step)

    updated = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    if state.weight_decay:
        updated = updated - state.lr * state.weight_decay * params
    return updated, replace(state, m=m, v=v, step=step)


def sgd_step(params: np.ndarray, grads: np.ndarray, lr: float) -> np.ndarray:
    if params.shape != grads.shape:
        raise NumericsError(f"Shape mismatch: params {params.shape}, grads {grads.shape}")
    if not np.all(np.isfinite(grads)):
        raise NumericsError("Non-finite gradient passed to sgd_step")
    return params - lr * grads


# Parameter plumbing
def flatten_params(params: Params) -> np.ndarray:
    if not params:
        return np.zeros(0)
    return np.concatenate([np.concatenate([W.ravel(), b.ravel()]) for W, b in params])


def unflatten_params(flat: np.ndarray, like: Params) -> Params:
    """Inverse of flatten_params using the shapes of `like`"""
    expected = sum(W.size + b.size for W, b in like)
    if flat.shape != (expected,):
        raise NumericsError(f"Flat vector has shape {flat.shape}, expected ({expected},)")
    out: Params = []
    offset = 0
    for W, b in like:
        W_new = flat[offset:offset + W.size].reshape(W.shape)
        offset += W.size
        b_new = flat[offset:offset + b.size].reshape(b.shape)
        offset += b.size
        out.append((W_new.copy(), b_new.copy()))
    return out


# Activations
def activate(name: str, x: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(x, 0.0)
    if name == "tanh":
        return np.tanh(x)
    if name == "identity":
        return x
    raise UnsupportedOperationError(f"Unsupported activation '{name}'")


def activation_backward(name: str, pre: np.ndarray, post: np.ndarray, grad_post: np.ndarray) -> np.ndarray:
    if name == "relu":
        return grad_post * (pre > 0.0)
    if name == "tanh":
        return grad_post * (1.0 - post ** 2)
    if name == "identity":
        return grad_post
    raise UnsupportedOperationError(f"Unsupported activation '{name}'")


# Dense stacks
def mlp_forward(params: Params, x: np.ndarray, activations: Sequence[str]):
    """
    Forward pass through affine layers, layer i followed by activations[i].

    Returns the output and the cache needed by mlp_backward.
    """
    if len(params) != len(activations):
        raise NumericsError(f"{len(params)} layers but {len(activations)} activations")
    for name in activations:
        if name not in SUPPORTED_ACTIVATIONS:
            raise UnsupportedOperationError(f"Unsupported activation '{name}'")
    h = np.asarray(x, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != params[0][0].shape[1]:
        raise NumericsError(f"Input of shape {h.shape} does not match layer input {params[0][0].shape[1]}")
    cache = []
    for (W, b), name in zip(params, activations):
        pre = h @ W.T + b
        post = activate(name, pre)
        cache.append((h, pre, post, name))
        h = post
    return h, cache


def mlp_backward(params: Params, cache, grad_out: np.ndarray) -> Tuple[Params, np.ndarray]:
    """Reverse-mode pass; returns per-layer (dW, db) and the gradient w.r.t. the input"""
    grads: Params = []
    g = grad_out
    for (W, _), (h_in, pre, post, name) in zip(reversed(params), reversed(cache)):
        g_pre = activation_backward(name, pre, post, g)
        grads.append((g_pre.T @ h_in, g_pre.sum(axis=0)))
        g = g_pre @ W
    grads.reverse()
    return grads, g


# Loss heads
def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient w.r.t. the logits"""
    n = logits.shape[0]
    if n == 0:
        raise NumericsError("Cross-entropy of an empty batch")
    logp = log_softmax(logits)
    loss = -float(np.mean(logp[np.arange(n), labels]))
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def mean_squared_error(pred: np.ndarray, target: np.ndarray) -> Tuple[float, np.ndarray]:
    """(1/B) sum_i ||pred_i - target_i||^2 and its gradient w.r.t. pred"""
    if pred.shape != target.shape:
        raise NumericsError(f"Shape mismatch: {pred.shape} vs {target.shape}")
    n = pred.shape[0]
    diff = pred - target
    return float(np.sum(diff ** 2) / n), 2.0 * diff / n


def value_and_grad(
    params: Params,
    activations: Sequence[str],
    x: np.ndarray,
    loss: str,
    target: np.ndarray,
) -> Tuple[float, Params]:
    """Loss of a dense stack under a supported loss head, with analytic layer gradients"""
    if loss not in SUPPORTED_LOSSES:
        raise UnsupportedOperationError(f"Unsupported loss '{loss}'")
    out, cache = mlp_forward(params, x, activations)
    if loss == "cross_entropy":
        value, grad_out = softmax_cross_entropy(out, target)
    else:
        value, grad_out = mean_squared_error(out, target)
    grads, _ = mlp_backward(params, cache, grad_out)
    return value, grads


def net_backward(
    params: Params,
    activations: Sequence[str],
    x: np.ndarray,
    loss: str,
    target: np.ndarray,
) -> np.ndarray:
    """Flat analytic gradient of the composition (affine -> activation)* -> loss head"""
    _, grads = value_and_grad(params, activations, x, loss, target)
    return flatten_params(grads)


# Gradient checking
def finite_difference_gradient(func: Callable[[np.ndarray], float], x0: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat vector"""
    x0 = np.asarray(x0, dtype=np.float64)
    grad = np.zeros_like(x0)
    for j in range(x0.size):
        x = x0.copy()
        x[j] = x0[j] + h
        f_plus = func(x)
        x[j] = x0[j] - h
        f_minus = func(x)
        grad[j] = (f_plus - f_minus) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """Per-coordinate |a - n| / max(|a|, |n|, floor)"""
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def check_gradient(
    func: Callable[[np.ndarray], float],
    analytic: np.ndarray,
    x0: np.ndarray,
    h: float = 1e-5,
) -> float:
    """Largest per-coordinate relative error between an analytic gradient and central differences"""
    numeric = finite_difference_gradient(func, x0, h)
    err = relative_error(np.asarray(analytic), numeric)
    worst = float(err.max()) if err.size else 0.0
    logger.debug("Gradient check over %d coordinates: max relative error %.3e", err.size, worst)
    return worst
