"""
Unlearning metrics: retain/forget accuracy, loss-threshold membership
inference, soft cross-entropy against the retrained model, and timing.
"""
import logging
import time
from dataclasses import asdict, dataclass
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from sklearn.metrics import roc_auc_score

from repunlearn.datasets import LabeledDataset, UnlearnSplit
from repunlearn.encoder import FeedForwardNet, Pipeline, forward, predict_pipeline
from repunlearn.errors import EvaluationError
from repunlearn.numerics import LOG_CLAMP, log_softmax, seeded_rng, softmax
from repunlearn.schemas import UnlearnModeEnum

logger = logging.getLogger(__name__)

REPORT_COLUMNS = [
    "method", "seed", "retain_acc", "forget_acc", "mia_acc", "test_ce",
    "unlearn_s", "retrain_s", "speedup", "mia_auc", "unlearn_s_std", "retrain_s_std",
]
METRIC_COLUMNS = ["retain_acc", "forget_acc", "mia_acc", "mia_auc", "test_ce"]
TIMING_COLUMNS = ["unlearn_s", "retrain_s", "speedup", "unlearn_s_std", "retrain_s_std"]


@dataclass
class EvalReport:
    """
    One evaluated method for one seed; accuracies in percent, CE in nats.
    Timings are means over the timing repeats, with their sample std.
    """
    method: str
    seed: int
    retain_acc: float
    forget_acc: float
    mia_acc: float
    test_ce: float
    unlearn_s: float = float("nan")
    retrain_s: float = float("nan")
    mia_auc: float = float("nan")
    unlearn_s_std: float = float("nan")
    retrain_s_std: float = float("nan")

    def __post_init__(self):
        for name in ("retain_acc", "forget_acc", "mia_acc"):
            value = getattr(self, name)
            if not 0.0 <= value <= 100.0:
                raise EvaluationError(f"{name}={value} outside [0, 100]")
        if self.test_ce < 0:
            raise EvaluationError(f"test_ce={self.test_ce} is negative")

    @property
    def speedup(self) -> float:
        if not self.unlearn_s > 0 or np.isnan(self.retrain_s):
            return float("nan")
        return self.retrain_s / self.unlearn_s

    def as_row(self) -> dict:
        row = asdict(self)
        row["speedup"] = self.speedup
        return {column: row[column] for column in REPORT_COLUMNS}


# Predictions
def _pipeline_logits(p: Pipeline, data: LabeledDataset) -> np.ndarray:
    if data.n_samples == 0:
        raise EvaluationError("Cannot evaluate on an empty dataset")
    return predict_pipeline(p, data.features)


def per_sample_loss(p: Pipeline, data: LabeledDataset) -> np.ndarray:
    """Cross-entropy of the true label for every sample"""
    logp = log_softmax(_pipeline_logits(p, data))
    return -logp[np.arange(data.n_samples), data.labels]


def accuracy(p: Pipeline, data: LabeledDataset, class_filter: Optional[Iterable[int]] = None) -> float:
    """Percent of argmax-correct predictions, optionally restricted to labels in class_filter"""
    if class_filter is not None:
        classes = list(class_filter)
        data = data.subset(data.class_indices(classes))
        if data.n_samples == 0:
            raise EvaluationError(f"No samples with labels in {classes}")
    predictions = np.argmax(_pipeline_logits(p, data), axis=1)
    return 100.0 * float(np.mean(predictions == data.labels))


# Membership inference
def _balanced_losses(
    p: Pipeline,
    members: LabeledDataset,
    non_members: LabeledDataset,
    rng: np.random.Generator,
) -> Tuple[np.ndarray, np.ndarray]:
    if members.n_samples == 0 or non_members.n_samples == 0:
        raise EvaluationError("Membership inference needs nonempty member and non-member sets")
    member_loss = per_sample_loss(p, members)
    non_member_loss = per_sample_loss(p, non_members)
    n = min(member_loss.size, non_member_loss.size)
    if member_loss.size > n:
        member_loss = member_loss[np.sort(rng.choice(member_loss.size, size=n, replace=False))]
    if non_member_loss.size > n:
        non_member_loss = non_member_loss[np.sort(rng.choice(non_member_loss.size, size=n, replace=False))]
    return member_loss, non_member_loss


def membership_inference(
    p: Pipeline,
    forget_data: LabeledDataset,
    test_data: LabeledDataset,
    n_thresholds: int = 101,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """
    Loss-threshold attack: predict "member" when the loss is at most t.

    Forget samples are members and held-out samples non-members, balanced by
    subsampling the larger set. Thresholds are quantiles of the pooled losses;
    returns the best balanced accuracy in percent.
    """
    if n_thresholds < 2:
        raise EvaluationError(f"Need at least 2 thresholds, got {n_thresholds}")
    if rng is None:
        rng = seeded_rng(0)
    member_loss, non_member_loss = _balanced_losses(p, forget_data, test_data, rng)
    thresholds = np.unique(np.quantile(np.concatenate([member_loss, non_member_loss]), np.linspace(0, 1, n_thresholds)))

    true_positive = np.mean(member_loss[None, :] <= thresholds[:, None], axis=1)
    true_negative = np.mean(non_member_loss[None, :] > thresholds[:, None], axis=1)
    best = float(np.max((true_positive + true_negative) / 2.0))
    return 100.0 * best


def membership_inference_auc(
    p: Pipeline,
    forget_data: LabeledDataset,
    test_data: LabeledDataset,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """ROC-AUC (percent) of the negative loss as a membership score on the balanced sets"""
    if rng is None:
        rng = seeded_rng(0)
    member_loss, non_member_loss = _balanced_losses(p, forget_data, test_data, rng)
    y = np.concatenate([np.ones(member_loss.size), np.zeros(non_member_loss.size)])
    score = -np.concatenate([member_loss, non_member_loss])
    return 100.0 * float(roc_auc_score(y, score))


# Distributional fidelity
def _soft_cross_entropy(reference: np.ndarray, probs: np.ndarray) -> float:
    return float(np.mean(-np.sum(reference * np.log(np.maximum(probs, LOG_CLAMP)), axis=1)))


def predictive_entropy(net: FeedForwardNet, data: LabeledDataset) -> float:
    """Mean entropy (nats) of the model's predictive distribution, same log clamp as the CE"""
    q = softmax(forward(net, data.features)[1])
    return _soft_cross_entropy(q, q)


def test_ce_vs_retrain(p: Pipeline, retrain_net: FeedForwardNet, test_data: LabeledDataset) -> float:
    """Mean of -sum_y q_retrain(y|x) log q_pipeline(y|x) over the test set"""
    if retrain_net.n_classes != p.net.n_classes:
        raise EvaluationError(f"Class sets differ: {p.net.n_classes} vs {retrain_net.n_classes}")
    reference = softmax(forward(retrain_net, test_data.features)[1])
    probs = softmax(_pipeline_logits(p, test_data))
    return _soft_cross_entropy(reference, probs)


# Timing
def timed(fn: Callable, *args, **kwargs):
    """Returns (fn(*args, **kwargs), wall seconds) on the monotonic performance clock"""
    start = time.perf_counter()
    result = fn(*args, **kwargs)
    return result, time.perf_counter() - start


def timed_repeated(fn: Callable, repeats: int, *args, **kwargs) -> Tuple[object, List[float]]:
    """Runs fn `repeats` times; returns the last result and every wall time"""
    if repeats < 1:
        raise EvaluationError(f"repeats must be at least 1, got {repeats}")
    seconds = []
    result = None
    for _ in range(repeats):
        result, elapsed = timed(fn, *args, **kwargs)
        seconds.append(elapsed)
    if repeats > 1:
        logger.info("%s: %.4fs +- %.4fs over %d runs", getattr(fn, "__name__", "call"), np.mean(seconds), np.std(seconds, ddof=1), repeats)
    return result, seconds


def timing_stats(seconds: Sequence[float]) -> Tuple[float, float]:
    """Mean and sample std of wall times; the std is NaN for a single run"""
    if len(seconds) == 0:
        raise EvaluationError("No timings to summarize")
    seconds = np.asarray(seconds, dtype=np.float64)
    std = float(np.std(seconds, ddof=1)) if seconds.size > 1 else float("nan")
    return float(np.mean(seconds)), std


# Reports
def evaluate_pipeline(
    method: str,
    seed: int,
    pipeline: Pipeline,
    train: LabeledDataset,
    test: LabeledDataset,
    split: UnlearnSplit,
    retrain_net: FeedForwardNet,
    n_thresholds: int = 101,
    rng: Optional[np.random.Generator] = None,
    unlearn_s: float = float("nan"),
    retrain_s: float = float("nan"),
    unlearn_s_std: float = float("nan"),
    retrain_s_std: float = float("nan"),
) -> EvalReport:
    """
    Class mode: retain/forget accuracy on the test set restricted to retain/forget classes;
    MIA non-members are the test samples of the forget classes.
    Random mode: accuracy on the retain/forget parts of the training set; MIA non-members
    are the whole test set.
    """
    if rng is None:
        rng = seeded_rng(seed)
    members = train.subset(split.forget_indices)
    if split.mode == UnlearnModeEnum.CLASS:
        forget_classes = list(split.forget_classes)
        retain_classes = [c for c in range(train.n_classes) if c not in forget_classes]
        retain_acc = accuracy(pipeline, test, retain_classes)
        forget_acc = accuracy(pipeline, test, forget_classes)
        non_members = test.subset(test.class_indices(forget_classes))
    else:
        retain_acc = accuracy(pipeline, train.subset(split.retain_indices))
        forget_acc = accuracy(pipeline, members)
        non_members = test

    mia_rng, auc_rng = rng.spawn(2)
    report = EvalReport(
        method=method,
        seed=seed,
        retain_acc=retain_acc,
        forget_acc=forget_acc,
        mia_acc=membership_inference(pipeline, members, non_members, n_thresholds, mia_rng),
        test_ce=test_ce_vs_retrain(pipeline, retrain_net, test),
        unlearn_s=unlearn_s,
        retrain_s=retrain_s,
        mia_auc=membership_inference_auc(pipeline, members, non_members, auc_rng),
        unlearn_s_std=unlearn_s_std,
        retrain_s_std=retrain_s_std,
    )
    logger.info(
        "%-8s seed %d: retain %.2f, forget %.2f, MIA %.2f, CE %.4f",
        method, seed, report.retain_acc, report.forget_acc, report.mia_acc, report.test_ce,
    )
    return report


def reports_frame(reports: Sequence[EvalReport]) -> pd.DataFrame:
    return pd.DataFrame([r.as_row() for r in reports], columns=REPORT_COLUMNS)


def summarize_reports(reports: pd.DataFrame) -> pd.DataFrame:
    """Mean and sample std per method over seeds, method order preserved"""
    if reports.empty:
        raise EvaluationError("No reports to summarize")
    columns = METRIC_COLUMNS + TIMING_COLUMNS
    grouped = reports.groupby("method", sort=False)[columns]
    means = grouped.mean().add_suffix("_mean")
    stds = grouped.std(ddof=1).add_suffix("_std")
    ordered = [name for column in columns for name in (f"{column}_mean", f"{column}_std")]
    summary = pd.concat([means, stds], axis=1)[ordered]
    summary.insert(0, "n_seeds", grouped.size())
    return summary.reset_index()
