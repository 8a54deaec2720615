"""
Numerical certification of the variational information bounds on small,
finite-support instances.

The input X takes K values with probabilities p_k; the encoder is a lookup
table z_k; the transformed representation follows the stochastic channel
Z' | x_k ~ N(f(z_k), I). Mixture densities are then exact finite sums, so Monte
Carlo is only needed over the Gaussian draws of Z'.
"""
import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from repunlearn.errors import BoundsError
from repunlearn.log import progress
from repunlearn.numerics import derive_seed, gaussian_kl_identity_cov, log_gaussian_identity_cov, seeded_rng
from repunlearn.unlearning import init_transformation

logger = logging.getLogger(__name__)

MAX_DIM = 4
MAX_SUPPORT = 8
PASS_STDERRS = 3.0
PROB_TOL = 1e-12

REPORT_COLUMNS = ["instance_seed", "quantity", "estimate", "stderr", "bound", "margin", "verdict"]


@dataclass(frozen=True, eq=False)
class DiscreteGaussianChannel:
    """Finite-support X, lookup encoder z_k = e(x_k), Gaussian channel around f(z_k)"""
    support_z: np.ndarray  # K x d_z
    probs: np.ndarray  # p(x_k)
    labels: np.ndarray  # y(x_k)
    transformation: Callable[[np.ndarray], np.ndarray]
    forget_mask: np.ndarray
    prototypes: Optional[np.ndarray] = None  # w_c, C x d_z

    def __post_init__(self):
        z = np.array(self.support_z, dtype=np.float64)
        p = np.array(self.probs, dtype=np.float64)
        labels = np.array(self.labels, dtype=np.int64)
        mask = np.array(self.forget_mask, dtype=bool)
        if z.ndim != 2 or z.shape[0] == 0:
            raise BoundsError(f"Support must be a nonempty K x d_z matrix, got shape {z.shape}")
        K, d = z.shape
        if K > MAX_SUPPORT or d > MAX_DIM:
            raise BoundsError(f"Support of {K} points in dim {d} exceeds K <= {MAX_SUPPORT}, d_z <= {MAX_DIM}")
        if p.shape != (K,) or labels.shape != (K,) or mask.shape != (K,):
            raise BoundsError(f"probs, labels and forget_mask must all have length {K}")
        if np.any(p < 0) or abs(p.sum() - 1.0) > PROB_TOL:
            raise BoundsError(f"Support probabilities must be nonnegative and sum to 1, got sum {p.sum()!r}")
        if np.any(labels < 0):
            raise BoundsError("Labels must be nonnegative class indices")
        means = np.asarray(self.transformation(z), dtype=np.float64)
        if means.shape != z.shape:
            raise BoundsError(f"Transformation maps {z.shape} to {means.shape}")
        object.__setattr__(self, "support_z", z)
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "forget_mask", mask)
        if self.prototypes is not None:
            w = np.array(self.prototypes, dtype=np.float64)
            if w.ndim != 2 or w.shape[1] != d or w.shape[0] <= labels.max():
                raise BoundsError(f"Prototypes of shape {w.shape} do not cover labels / dim {d}")
            object.__setattr__(self, "prototypes", w)
        object.__setattr__(self, "_means", means)

    @property
    def means(self) -> np.ndarray:
        """Channel means m_k = f(z_k)"""
        return self._means

    @property
    def forget_probs(self) -> np.ndarray:
        """p(x_k | x in forget subset), zero outside it"""
        mass = self.probs[self.forget_mask].sum()
        if not self.forget_mask.any() or mass <= 0:
            raise BoundsError("Forget subset is empty or has zero probability")
        return np.where(self.forget_mask, self.probs, 0.0) / mass

    @property
    def retain_probs(self) -> np.ndarray:
        mass = self.probs[~self.forget_mask].sum()
        if self.forget_mask.all() or mass <= 0:
            raise BoundsError("Retain subset is empty or has zero probability")
        return np.where(self.forget_mask, 0.0, self.probs) / mass

    @property
    def class_probs(self) -> np.ndarray:
        """p(y = c) under p(x), over the prototype rows"""
        if self.prototypes is None:
            raise BoundsError("Channel has no prototypes")
        return np.bincount(self.labels, weights=self.probs, minlength=self.prototypes.shape[0])


@dataclass(frozen=True)
class BoundReport:
    instance_seed: int
    quantity: str
    estimate: float
    stderr: float
    bound: float
    n_samples: int

    @property
    def margin(self) -> float:
        return self.bound - self.estimate

    @property
    def verdict(self) -> str:
        return "pass" if self.estimate - PASS_STDERRS * self.stderr <= self.bound else "fail"

    def as_row(self) -> dict:
        return {
            "instance_seed": self.instance_seed,
            "quantity": self.quantity,
            "estimate": self.estimate,
            "stderr": self.stderr,
            "bound": self.bound,
            "margin": self.margin,
            "verdict": self.verdict,
        }


@dataclass(frozen=True)
class _ChannelDraws:
    """Per forget component k: n draws z' ~ N(m_k, I) and the log-densities needed by every estimator"""
    weights: np.ndarray  # q_k of the forget components
    log_own: np.ndarray  # log N(z'; m_k), shape K_f x n
    log_forget_marginal: np.ndarray  # log sum_j q_j N(z'; m_j)
    log_reference: np.ndarray  # log sum_j p_j N(z'; z_j)
    jensen_reference: np.ndarray  # sum_j p_j log N(z'; z_j)
    n_samples: int


def _stratified(weights: np.ndarray, values: np.ndarray) -> Tuple[float, float]:
    """Estimate and standard error of sum_k w_k E[values_k] from per-stratum samples"""
    n = values.shape[1]
    means = values.mean(axis=1)
    variances = values.var(axis=1, ddof=1) if n > 1 else np.zeros_like(means)
    estimate = float(np.sum(weights * means))
    stderr = float(np.sqrt(np.sum(weights ** 2 * variances) / n))
    return estimate, stderr


def _draw(ch: DiscreteGaussianChannel, n_samples: int, rng: np.random.Generator) -> _ChannelDraws:
    if n_samples < 2:
        raise BoundsError(f"Need at least 2 Monte Carlo samples, got {n_samples}")
    q = ch.forget_probs
    forget = np.flatnonzero(ch.forget_mask)
    m = ch.means
    d = m.shape[1]

    samples = m[forget][:, None, :] + rng.standard_normal((forget.size, n_samples, d))  # K_f x n x d
    log_channel = log_gaussian_identity_cov(samples[:, :, None, :], m[None, None, :, :])  # K_f x n x K
    log_encoder = log_gaussian_identity_cov(samples[:, :, None, :], ch.support_z[None, None, :, :])

    with np.errstate(divide="ignore"):
        log_q = np.log(q)
        log_p = np.log(ch.probs)
    return _ChannelDraws(
        weights=q[forget],
        log_own=log_channel[:, :, forget].diagonal(axis1=0, axis2=2).T,
        log_forget_marginal=logsumexp(log_channel + log_q, axis=2),
        log_reference=logsumexp(log_encoder + log_p, axis=2),
        jensen_reference=np.sum(ch.probs * log_encoder, axis=2),
        n_samples=n_samples,
    )


# Information quantities
def mi_z_prime_x_estimate(ch: DiscreteGaussianChannel, n_samples: int, rng: np.random.Generator) -> Tuple[float, float]:
    """
    I(Z'; X_f) by stratified Monte Carlo over the forget components.

    Returns (estimate, stderr). Each draw contributes log p(z'|x_k) - log p_f(z').
    """
    draws = _draw(ch, n_samples, rng)
    return _stratified(draws.weights, draws.log_own - draws.log_forget_marginal)


def conditional_mi_retain(ch: DiscreteGaussianChannel) -> float:
    """
    I(Z'; Z | X_r). The encoder table is deterministic, so Z is constant given
    X_r and the conditional information vanishes.
    """
    if ch.forget_mask.all():
        raise BoundsError("Retain subset is empty")
    return 0.0


def retain_bound_rhs(ch: DiscreteGaussianChannel) -> float:
    """E_{x_r} KL(N(f(z), I) || N(z, I)) over the retain support, as an exact finite sum"""
    kl = gaussian_kl_identity_cov(ch.means, ch.support_z)
    return float(np.sum(ch.retain_probs * kl))


def zs_retain_bound_rhs(ch: DiscreteGaussianChannel) -> float:
    """E_{x_r} KL(N(f(z), I) || N(w_y, I)), prototypes standing in for the encoder"""
    if ch.prototypes is None:
        raise BoundsError("Zero-shot retain bound needs prototypes")
    kl = gaussian_kl_identity_cov(ch.means, ch.prototypes[ch.labels])
    return float(np.sum(ch.retain_probs * kl))


def forget_reference_bound(ch: DiscreteGaussianChannel) -> float:
    """sum_k q_k sum_j p_j KL(N(m_k, I) || N(z_j, I)), the Jensen relaxation with data references"""
    q = ch.forget_probs
    kl = gaussian_kl_identity_cov(*np.broadcast_arrays(ch.means[:, None, :], ch.support_z[None, :, :]))  # K x K
    return float(q @ kl @ ch.probs)


def forget_prototype_bound(ch: DiscreteGaussianChannel) -> float:
    """sum_k q_k sum_c p(y=c) KL(N(m_k, I) || N(w_c, I))"""
    q = ch.forget_probs
    kl = gaussian_kl_identity_cov(*np.broadcast_arrays(ch.means[:, None, :], ch.prototypes[None, :, :]))  # K x C
    return float(q @ kl @ ch.class_probs)


def forget_bound_chain(
    ch: DiscreteGaussianChannel,
    n_samples: int,
    rng: np.random.Generator,
    instance_seed: int = 0,
) -> List[BoundReport]:
    """
    Certify I(Z'; X_f) against its variational upper bounds.

    Rows:
      forget_marginal_kl    I <= E_{x_f} KL(p(z'|x_f) || r(z')), r the data-reference mixture (paired MC)
      forget_jensen         the mixture KL above <= its per-component relaxation (paired, pointwise)
      forget_reference      I <= closed-form per-component relaxation
      forget_prototype      I <= closed-form prototype relaxation (only with prototypes)
    """
    draws = _draw(ch, n_samples, rng)
    q = draws.weights
    mi, mi_se = _stratified(q, draws.log_own - draws.log_forget_marginal)
    marginal_kl, _ = _stratified(q, draws.log_own - draws.log_reference)
    # log p_f(z') - log r(z') has mean KL(p_f || r) >= 0
    _, paired_se = _stratified(q, draws.log_forget_marginal - draws.log_reference)
    # log r(z') >= sum_j p_j log N(z'; z_j) pointwise
    jensen_gap, jensen_se = _stratified(q, draws.log_reference - draws.jensen_reference)

    reports = [
        BoundReport(instance_seed, "forget_marginal_kl", mi, paired_se, marginal_kl, n_samples),
        BoundReport(instance_seed, "forget_jensen", marginal_kl, jensen_se, marginal_kl + jensen_gap, n_samples),
        BoundReport(instance_seed, "forget_reference", mi, mi_se, forget_reference_bound(ch), n_samples),
    ]
    if ch.prototypes is not None:
        reports.append(BoundReport(instance_seed, "forget_prototype", mi, mi_se, forget_prototype_bound(ch), n_samples))
    return reports


def retain_bound_reports(ch: DiscreteGaussianChannel, instance_seed: int = 0) -> List[BoundReport]:
    cmi = conditional_mi_retain(ch)
    reports = [BoundReport(instance_seed, "retain", cmi, 0.0, retain_bound_rhs(ch), 0)]
    if ch.prototypes is not None:
        reports.append(BoundReport(instance_seed, "retain_zero_shot", cmi, 0.0, zs_retain_bound_rhs(ch), 0))
    return reports


# Randomised instances
def random_channel(rng: np.random.Generator) -> DiscreteGaussianChannel:
    """
    Small random instance: 2..8 support points in dim 1..4, 2..4 classes with
    prototypes near the class means, a nonempty proper forget subset and a
    perturbed residual or affine transformation.
    """
    K = int(rng.integers(2, MAX_SUPPORT + 1))
    d = int(rng.integers(1, MAX_DIM + 1))
    C = int(rng.integers(2, min(K, 4) + 1))
    z = rng.normal(0.0, 2.0, size=(K, d))
    probs = rng.dirichlet(np.ones(K))
    labels = np.concatenate([np.arange(C), rng.integers(0, C, size=K - C)])
    rng.shuffle(labels)

    prototypes = np.stack([z[labels == c].mean(axis=0) for c in range(C)])
    prototypes = prototypes + rng.normal(0.0, 0.5, size=prototypes.shape)

    n_forget = int(rng.integers(1, K))
    mask = np.zeros(K, dtype=bool)
    mask[rng.choice(K, size=n_forget, replace=False)] = True

    depth = int(rng.integers(0, 3))
    f = init_transformation(d, depth, [8] * depth, rng)
    f = f.with_flat(f.flat + rng.normal(0.0, 0.5, size=f.flat.size))
    return DiscreteGaussianChannel(z, probs, labels, f, mask, prototypes)


def certify_instance(instance_seed: int, n_samples: int) -> List[BoundReport]:
    rng = seeded_rng(instance_seed)
    channel_rng, mc_rng = rng.spawn(2)
    ch = random_channel(channel_rng)
    return forget_bound_chain(ch, n_samples, mc_rng, instance_seed) + retain_bound_reports(ch, instance_seed)


def certify_instances(n_instances: int, base_seed: int = 0, n_samples: int = 2000) -> List[BoundReport]:
    """Reports for `n_instances` random channels, instance i seeded by derive_seed(base_seed, i)"""
    if n_instances < 0:
        raise BoundsError(f"Instance count must be non-negative, got {n_instances}")
    reports: List[BoundReport] = []
    for i in progress(range(n_instances), desc="verify-bounds", total=n_instances, logger=logger):
        reports.extend(certify_instance(derive_seed(base_seed, i), n_samples))
    failed = {r.instance_seed for r in reports if r.verdict != "pass"}
    logger.info("Certified %d instances, %d with at least one failing bound", n_instances, len(failed))
    return reports
