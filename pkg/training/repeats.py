import logging
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from augmentation.policies import UnknownPolicyError, policy_names
from config import TrainConfig
from evaluation.metrics import MetricReport
from utils.seeding import derive_seed

logger = logging.getLogger(__name__)

RunFn = Callable[[TrainConfig, int], MetricReport]


class RunResult(BaseModel):
    family: str
    seeds: List[int]
    reports: List[MetricReport]
    mean: Dict[str, float]
    sigma: Dict[str, float]
    partial: bool = False
    failures: Dict[int, str] = Field(default_factory=dict)

    @property
    def repeats(self) -> int:
        return len(self.reports)

    def values(self, metric: str) -> List[float]:
        return [r.metric(metric) for r in self.reports]


def repeat_seed(base_seed: int, index: int) -> int:
    return derive_seed(base_seed, "repeat", index)


def aggregate(reports: Sequence[MetricReport]):
    """Mean and sample standard deviation (n - 1) of every metric"""
    mean, sigma = {}, {}
    if not reports:
        return mean, sigma
    for name in reports[0].as_dict():
        values = [r.metric(name) for r in reports]
        mean[name] = float(np.mean(values))
        sigma[name] = 0.0 if len(set(values)) == 1 else float(np.std(values, ddof=1))
    return mean, sigma


def aggregate_results(family: str, seeds: Sequence[int], reports: Sequence[MetricReport], failures: Optional[Dict[int, str]] = None) -> RunResult:
    mean, sigma = aggregate(reports)
    failures = dict(failures or {})
    return RunResult(
        family=family,
        seeds=list(seeds),
        reports=list(reports),
        mean=mean,
        sigma=sigma,
        partial=bool(failures),
        failures=failures,
    )


def repeat_runs(family: str, base_cfg: TrainConfig, k: int = 5, run_fn: RunFn = None) -> RunResult:
    """Run k repeats with seeds derived from (base seed, index); a failed repeat marks the result partial"""
    if k < 2:
        raise ValueError(f"repeat_runs needs k >= 2, got {k}")
    if run_fn is None:
        raise ValueError("run_fn is required")

    seeds, reports, failures = [], [], {}
    for index in range(k):
        seed = repeat_seed(base_cfg.seed, index)
        cfg = base_cfg.model_copy(update={"seed": seed})
        logger.info(f"🔄 {family}: repeat {index + 1}/{k} (seed {seed})")
        try:
            reports.append(run_fn(cfg, index))
            seeds.append(seed)
        except Exception as e:
            logger.error(f"❌ {family} repeat {index} failed: {e}")
            failures[index] = str(e)

    result = aggregate_results(family, seeds, reports, failures)
    if result.partial:
        logger.warning(f"⚠️ {family}: {len(reports)}/{k} repeats completed; σ covers completed repeats only")
    if result.mean:
        logger.info(f"📊 {family}: accuracy {result.mean['accuracy']:.3f} ± {result.sigma['accuracy']:.3f}")
    return result


class SweepRow(BaseModel):
    policy: str
    accuracy: float
    precision: float
    recall: float
    f1: float


def augmentation_sweep(policies: Sequence[str], base_cfg: TrainConfig, run_fn: RunFn) -> List[SweepRow]:
    """One validation row per policy, sorted by accuracy (descending, stable for ties)"""
    known = policy_names(include_extra=True)
    unknown = [p for p in policies if p not in known]
    if unknown:
        raise UnknownPolicyError(f"Unknown augmentation policies {unknown}. Valid names: {known}")

    rows = []
    for index, policy in enumerate(policies):
        logger.info(f"🔄 Sweep: {policy} ({index + 1}/{len(policies)})")
        report = run_fn(base_cfg.model_copy(update={"augmentation": policy}), index)
        rows.append(SweepRow(policy=policy, accuracy=report.accuracy, precision=report.precision, recall=report.recall, f1=report.f1))
    rows.sort(key=lambda r: -r.accuracy)
    return rows


def sweep_table_to_frame(rows: Sequence[SweepRow]) -> pd.DataFrame:
    return pd.DataFrame([r.model_dump() for r in rows], columns=["policy", "accuracy", "precision", "recall", "f1"])
