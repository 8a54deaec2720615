"""
Experiment harness: data, original model, baselines, unlearning and evaluation
for every seed of a config, plus the beta x depth sweep.

Each seed draws from independent streams derived from (seed, stage key[, cell]),
so a stage's result does not depend on which other stages or cells ran.
"""
import logging
import traceback
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from repunlearn import storage
from repunlearn.datasets import (
    AccessLog,
    AuditedRows,
    LabeledDataset,
    UnlearnSplit,
    generate_toy_mixture,
    split_class_unlearn,
    split_random_unlearn,
)
from repunlearn.encoder import (
    FeedForwardNet,
    Pipeline,
    fine_tune_baseline,
    prototype_alignment,
    retrain_baseline,
    train_classifier,
    within_class_variability,
)
from repunlearn.errors import RepUnlearnError, StageError, UnlearningError
from repunlearn.evaluation import (
    METRIC_COLUMNS,
    REPORT_COLUMNS,
    EvalReport,
    evaluate_pipeline,
    reports_frame,
    summarize_reports,
    timed_repeated,
    timing_stats,
)
from repunlearn.figures import plot_heatmap
from repunlearn.log import progress
from repunlearn.numerics import derive_seed, seeded_rng
from repunlearn.schemas import ExperimentConfig, RegimeEnum, UnlearnModeEnum, UnlearnSection
from repunlearn.unlearning import Transformation, ZeroShotMetadata, unlearn_standard, unlearn_zero_shot

logger = logging.getLogger(__name__)

# Stream keys, combined with the seed (and the sweep cell for unlearning)
STREAM_TRAIN = 1
STREAM_SPLIT = 2
STREAM_RETRAIN = 3
STREAM_FINETUNE = 4
STREAM_UNLEARN = 5
STREAM_MIA = 6

METHODS = ("original", "retrain", "finetune", "rep_unl")


def stream(seed: int, key: int, *extra: int) -> np.random.Generator:
    return seeded_rng(derive_seed(seed, key, *extra))


@contextmanager
def stage(name: str):
    """Tag any failure inside the block with the stage name"""
    try:
        yield
    except StageError:
        raise
    except RepUnlearnError as e:
        logger.error("❌ %s failed: %s", name, e)
        raise StageError(name, str(e)) from e
    except Exception as e:
        logger.error("❌ %s: unexpected error: %s\n%s", name, e, traceback.format_exc())
        raise StageError(name, f"unexpected error: {e}") from e


@dataclass
class SeedState:
    """What the later stages of one seed need from the earlier ones"""
    seed: int
    net: FeedForwardNet
    split: UnlearnSplit
    retrain_net: Optional[FeedForwardNet] = None
    retrain_s: float = float("nan")
    retrain_s_std: float = float("nan")
    finetune_net: Optional[FeedForwardNet] = None
    finetune_s: float = float("nan")
    finetune_s_std: float = float("nan")


class ExperimentRunner:
    """Runs the stages of a config under its output directory"""

    def __init__(self, config: ExperimentConfig, jobs: int = 1):
        self.config = config
        self.jobs = max(1, int(jobs))
        self.layout = storage.OutputLayout(Path(config.output_dir))
        self._data: Optional[Tuple[LabeledDataset, LabeledDataset]] = None

    # Data
    def generate_data(self, write: bool = True) -> Tuple[LabeledDataset, LabeledDataset]:
        with stage("gen-data"):
            train, test = generate_toy_mixture(self.config.dataset)
            if write:
                storage.save_dataset(self.layout.train_csv, train)
                storage.save_dataset(self.layout.test_csv, test)
                logger.info("✓ Wrote %s and %s", self.layout.train_csv, self.layout.test_csv)
        self._data = (train, test)
        return train, test

    def data(self) -> Tuple[LabeledDataset, LabeledDataset]:
        """Datasets from the output directory when present, otherwise freshly generated"""
        if self._data is None:
            if self.layout.train_csv.exists() and self.layout.test_csv.exists():
                with stage("load-data"):
                    C = self.config.dataset.n_classes
                    self._data = (
                        storage.load_dataset(self.layout.train_csv, C),
                        storage.load_dataset(self.layout.test_csv, C),
                    )
            else:
                self.generate_data()
        return self._data

    @property
    def seeds(self) -> List[int]:
        return list(self.config.eval.seeds)

    @property
    def timing_repeats(self) -> int:
        return self.config.eval.timing_repeats

    # Stages
    def train_stage(self, seed: int, train: LabeledDataset, save: bool = True) -> FeedForwardNet:
        cfg = self.config.model
        with stage("train"):
            dims = cfg.layer_dims(train.dim, train.n_classes)
            net = train_classifier(cfg.train, train, dims, stream(seed, STREAM_TRAIN), cfg.activation.value)
            alignment = prototype_alignment(net, train)
            variability = within_class_variability(net, train)
            logger.info(
                "✓ Seed %d: prototype alignment %.3f (mean cosine), within/between variability %.4f",
                seed, float(np.nanmean(alignment)), variability,
            )
            if save:
                storage.save_model(self.layout.model_path(seed, "original"), net, cfg.train, seed)
                storage.save_collapse(self.layout.collapse_path(seed), alignment, variability)
        return net

    def load_original(self, seed: int) -> FeedForwardNet:
        with stage("load-model"):
            return storage.load_model(self.layout.model_path(seed, "original"))

    def split_stage(self, seed: int, train: LabeledDataset) -> UnlearnSplit:
        u = self.config.unlearn
        with stage("split"):
            if u.mode == UnlearnModeEnum.CLASS:
                return split_class_unlearn(train, u.forget_classes)
            return split_random_unlearn(train, u.fraction, stream(seed, STREAM_SPLIT))

    def baselines_stage(self, state: SeedState, train: LabeledDataset, save: bool = True) -> SeedState:
        cfg = self.config.model
        retain = train.subset(state.split.retain_indices)
        dims = cfg.layer_dims(train.dim, train.n_classes)
        with stage("retrain"):
            state.retrain_net, seconds = timed_repeated(
                lambda: retrain_baseline(cfg.train, retain, dims, stream(state.seed, STREAM_RETRAIN), cfg.activation.value),
                self.timing_repeats,
            )
            state.retrain_s, state.retrain_s_std = timing_stats(seconds)
            logger.info("✓ Seed %d: retrained on %d samples in %.3fs", state.seed, retain.n_samples, state.retrain_s)
        with stage("finetune"):
            state.finetune_net, seconds = timed_repeated(
                lambda: fine_tune_baseline(
                    state.net, retain, cfg.finetune_epochs, cfg.finetune_lr,
                    stream(state.seed, STREAM_FINETUNE), cfg.train.batch_size,
                ),
                self.timing_repeats,
            )
            state.finetune_s, state.finetune_s_std = timing_stats(seconds)
            logger.info("✓ Seed %d: fine-tuned for %d epochs in %.3fs", state.seed, cfg.finetune_epochs, state.finetune_s)
        if save:
            with stage("save"):
                storage.save_model(self.layout.model_path(state.seed, "retrain"), state.retrain_net, cfg.train, state.seed)
                storage.save_model(self.layout.model_path(state.seed, "finetune"), state.finetune_net, cfg.train, state.seed)
        return state

    def unlearn_stage(
        self,
        state: SeedState,
        train: LabeledDataset,
        unlearn_cfg: Optional[UnlearnSection] = None,
        cell: int = 0,
        save: bool = True,
        repeats: Optional[int] = None,
    ) -> Tuple[Transformation, List[float]]:
        """
        Fits the transformation `repeats` times (default: the configured timing
        repeats) from the same stream, so every repeat returns the same map.
        Returns the map and the wall time of each repeat.
        """
        cfg = unlearn_cfg if unlearn_cfg is not None else self.config.unlearn
        split = state.split

        def run_once():
            log = AccessLog()
            rng = stream(state.seed, STREAM_UNLEARN, cell)
            if cfg.regime == RegimeEnum.ZERO_SHOT:
                meta = ZeroShotMetadata.from_split(state.net, split)
                rows = AuditedRows(train.features, split.forget_indices, log)
                return unlearn_zero_shot(state.net, rows, meta, cfg, rng), log
            return unlearn_standard(state.net, train, split, cfg, rng, log), log

        with stage("unlearn"):
            (f, log), seconds = timed_repeated(run_once, repeats if repeats is not None else self.timing_repeats)
            if cfg.regime == RegimeEnum.ZERO_SHOT:
                outside = log.count_outside(split.forget_indices)
                if outside:
                    raise UnlearningError(f"Zero-shot unlearning read {outside} rows outside the forget set")
            logger.info(
                "✓ Seed %d: %s unlearning (beta %g, depth %d) in %.3fs",
                state.seed, cfg.regime.value, cfg.beta, cfg.depth, float(np.mean(seconds)),
            )
        if save:
            with stage("save"):
                storage.save_transformation(self.layout.model_path(state.seed, "transformation"), f, cfg, state.seed)
                storage.save_access_log(self.layout.access_log_path(state.seed), log, split.forget_indices)
        return f, seconds

    def evaluate_stage(
        self,
        state: SeedState,
        f: Transformation,
        train: LabeledDataset,
        test: LabeledDataset,
        unlearn_seconds: Sequence[float] = (),
    ) -> List[EvalReport]:
        nan = float("nan")
        unlearn_timing = timing_stats(unlearn_seconds) if len(unlearn_seconds) else (nan, nan)
        pipelines = {
            "original": (Pipeline(state.net), (nan, nan)),
            "retrain": (Pipeline(state.retrain_net), (state.retrain_s, state.retrain_s_std)),
            "finetune": (Pipeline(state.finetune_net), (state.finetune_s, state.finetune_s_std)),
            "rep_unl": (Pipeline(state.net, f), unlearn_timing),
        }
        reports = []
        with stage("eval"):
            for i, method in enumerate(METHODS):
                pipeline, (seconds, seconds_std) = pipelines[method]
                reports.append(evaluate_pipeline(
                    method, state.seed, pipeline, train, test, state.split, state.retrain_net,
                    self.config.eval.mia_thresholds, stream(state.seed, STREAM_MIA, i),
                    unlearn_s=seconds, retrain_s=state.retrain_s,
                    unlearn_s_std=seconds_std, retrain_s_std=state.retrain_s_std,
                ))
        return reports

    # Composite commands
    def run_seed(self, seed: int) -> List[dict]:
        train, test = self.data()
        logger.info("── Seed %d ──", seed)
        state = SeedState(seed, self.train_stage(seed, train), self.split_stage(seed, train))
        self.baselines_stage(state, train)
        f, unlearn_seconds = self.unlearn_stage(state, train)
        return [r.as_row() for r in self.evaluate_stage(state, f, train, test, unlearn_seconds)]

    def _map_seeds(self, worker, seeds: List[int]) -> List[List[dict]]:
        if self.jobs > 1 and len(seeds) > 1:
            with ProcessPoolExecutor(max_workers=self.jobs) as executor:
                return list(executor.map(worker, [self.config] * len(seeds), seeds))
        return [worker(self.config, seed) for seed in progress(seeds, desc="seeds", logger=logger)]

    def run(self) -> Tuple[pd.DataFrame, pd.DataFrame]:
        """Every stage for every seed; writes report.csv, summary.csv and config.json"""
        logger.info("Running %d seed(s) into %s", len(self.seeds), self.layout.root)
        self.generate_data()
        storage.save_config(self.layout.config_json, self.config)
        rows = [row for seed_rows in self._map_seeds(_run_seed_worker, self.seeds) for row in seed_rows]
        return self._write_reports(pd.DataFrame(rows, columns=REPORT_COLUMNS))

    def _write_reports(self, reports: pd.DataFrame) -> Tuple[pd.DataFrame, pd.DataFrame]:
        with stage("report"):
            summary = summarize_reports(reports)
            storage.write_table(reports, self.layout.report_csv)
            storage.write_table(summary, self.layout.summary_csv)
        logger.info("✓ Wrote %s and %s", self.layout.report_csv, self.layout.summary_csv)
        return reports, summary

    def train_models(self) -> List[FeedForwardNet]:
        train, _ = self.data()
        return [self.train_stage(seed, train) for seed in self.seeds]

    def unlearn_models(self) -> List[Transformation]:
        train, _ = self.data()
        transformations = []
        for seed in self.seeds:
            state = SeedState(seed, self.load_original(seed), self.split_stage(seed, train))
            transformations.append(self.unlearn_stage(state, train)[0])
        return transformations

    def evaluate_models(self) -> Tuple[pd.DataFrame, pd.DataFrame]:
        """
        Scores saved artifacts. Baselines are loaded when present and trained
        (and saved) otherwise; timing columns are only filled for freshly run stages.
        """
        train, test = self.data()
        reports: List[EvalReport] = []
        for seed in self.seeds:
            state = SeedState(seed, self.load_original(seed), self.split_stage(seed, train))
            retrain_path = self.layout.model_path(seed, "retrain")
            finetune_path = self.layout.model_path(seed, "finetune")
            if retrain_path.exists() and finetune_path.exists():
                with stage("load-model"):
                    state.retrain_net = storage.load_model(retrain_path)
                    state.finetune_net = storage.load_model(finetune_path)
            else:
                self.baselines_stage(state, train)
            with stage("load-model"):
                f = storage.load_transformation(self.layout.model_path(seed, "transformation"))
            reports.extend(self.evaluate_stage(state, f, train, test))
        return self._write_reports(reports_frame(reports))

    # Sweep
    def sweep_cells(self) -> List[Tuple[int, float, int]]:
        grid = self.config.sweep
        return [
            (i * len(grid.depths) + j, float(beta), int(depth))
            for i, beta in enumerate(grid.betas)
            for j, depth in enumerate(grid.depths)
        ]

    def sweep_seed(self, seed: int) -> List[dict]:
        train, test = self.data()
        state = SeedState(seed, self.train_stage(seed, train, save=False), self.split_stage(seed, train))
        self.baselines_stage(state, train, save=False)
        rows = []
        for cell, beta, depth in self.sweep_cells():
            cfg = self.config.unlearn.model_copy(update={"beta": beta, "depth": depth, "hidden_widths": None})
            f, unlearn_seconds = self.unlearn_stage(state, train, cfg, cell, save=False, repeats=1)
            with stage("eval"):
                report = evaluate_pipeline(
                    "rep_unl", seed, Pipeline(state.net, f), train, test, state.split, state.retrain_net,
                    self.config.eval.mia_thresholds, stream(seed, STREAM_MIA, METHODS.index("rep_unl")),
                    unlearn_s=unlearn_seconds[0], retrain_s=state.retrain_s,
                )
            row = report.as_row()
            rows.extend({"beta": beta, "depth": depth, "seed": seed, "metric": m, "value": row[m]} for m in METRIC_COLUMNS)
        return rows

    def sweep(self) -> pd.DataFrame:
        """One row per (beta, depth, seed, metric) plus per-metric pivots, heatmaps and best beta"""
        cells = self.sweep_cells()
        seeds = list(self.config.sweep.seeds)
        logger.info("Sweeping %d cells x %d seed(s)", len(cells), len(seeds))
        self.generate_data()
        storage.save_config(self.layout.config_json, self.config)
        rows = [row for seed_rows in self._map_seeds(_sweep_seed_worker, seeds) for row in seed_rows]
        long = (
            pd.DataFrame(rows, columns=["beta", "depth", "seed", "metric", "value"])
            .sort_values(["beta", "depth", "seed", "metric"], kind="mergesort")
            .reset_index(drop=True)
        )
        out = self.layout.sweep_dir
        with stage("sweep-report"):
            storage.write_table(long, out / "sweep.csv")
            for metric in METRIC_COLUMNS:
                pivot = long[long.metric == metric].pivot_table(index="beta", columns="depth", values="value", aggfunc="mean")
                storage.write_table(pivot.reset_index(), out / f"heatmap_{metric}.csv")
                plot_heatmap(pivot, out / f"heatmap_{metric}.svg", f"{metric} (mean over seeds)")
            storage.write_table(best_beta(long), out / "best_beta.csv")
        logger.info("✓ Wrote sweep tables and heatmaps to %s", out)
        return long


def best_beta(long: pd.DataFrame, metric: str = "test_ce") -> pd.DataFrame:
    """Per (depth, seed), the beta with the smallest value of `metric`"""
    subset = long[long.metric == metric]
    idx = subset.groupby(["depth", "seed"], sort=True)["value"].idxmin()
    return subset.loc[idx, ["depth", "seed", "beta", "value"]].rename(columns={"beta": "best_beta"}).reset_index(drop=True)


def _run_seed_worker(config: ExperimentConfig, seed: int) -> List[dict]:
    return ExperimentRunner(config).run_seed(seed)


def _sweep_seed_worker(config: ExperimentConfig, seed: int) -> List[dict]:
    return ExperimentRunner(config).sweep_seed(seed)
