"""Train and evaluate the full model and its three ablations under shared seeds."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import stats

from .ingest import Bundle, sequence_split
from .model import VARIANTS, ModelConfig
from .train import TrainConfig, build_model, evaluate_model, split_validation, train, use_params

log = logging.getLogger(__name__)


@dataclass
class AblationRun:
    variant: str
    seed: int
    metrics: dict[str, float]
    best_epoch: int
    seconds: float


@dataclass
class AblationReport:
    runs: list[AblationRun] = field(default_factory=list)

    def values(self, variant: str, metric: str = "MRR@10") -> np.ndarray:
        rows = sorted((r for r in self.runs if r.variant == variant), key=lambda r: r.seed)
        return np.array([r.metrics[metric] for r in rows])

    def mean(self, variant: str, metric: str = "MRR@10") -> float:
        return float(self.values(variant, metric).mean())

    def paired(self, other: str, metric: str = "MRR@10", base: str = "full") -> dict[str, float]:
        return paired_test(self.values(base, metric), self.values(other, metric))

    def to_dict(self) -> dict:
        variants = sorted({r.variant for r in self.runs}, key=lambda v: VARIANTS.index(v))
        out = {
            "runs": [r.__dict__ for r in self.runs],
            "mean": {v: {m: float(self.values(v, m).mean()) for m in self.runs[0].metrics}
                     for v in variants},
        }
        if "full" in variants:
            out["paired_vs_full"] = {v: self.paired(v) for v in variants if v != "full"}
        return out


def paired_test(a: Sequence[float], b: Sequence[float]) -> dict[str, float]:
    """One-sided paired t-test of mean(a - b) > 0."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    diff = a - b
    if len(diff) < 2 or np.all(diff == diff[0]):
        # t is undefined without spread; a constant positive gap is still a win
        p = 0.0 if len(diff) >= 2 and diff[0] > 0 else 1.0
        return {"mean_diff": float(diff.mean()) if len(diff) else 0.0, "t": float("nan"), "p": p}
    res = stats.ttest_rel(a, b, alternative="greater")
    return {"mean_diff": float(diff.mean()), "t": float(res.statistic), "p": float(res.pvalue)}


def run_ablations(bundle: Bundle, dominant: np.ndarray, model_cfg: ModelConfig,
                  train_cfg: TrainConfig, seeds: Sequence[int],
                  variants: Sequence[str] = VARIANTS, ks=(10, 20)) -> AblationReport:
    """Each (variant, seed) pair uses seed for both initialisation and training
    streams, so variants of one seed start from identical parameters."""
    case = bundle.meta.get("case", 1)
    fit, val = split_validation(bundle.train, train_cfg.val_fraction)
    fit_ex = [ex for s in fit for ex in sequence_split(s, case)]
    val_ex = [ex for s in val for ex in sequence_split(s, case)]
    test_ex = bundle.test_examples(case)
    if not test_ex:
        raise ValueError("bundle has no test examples")
    report = AblationReport()
    for seed in seeds:
        for variant in variants:
            t0 = time.perf_counter()
            model = build_model(bundle, dominant, replace(model_cfg, variant=variant, seed=seed))
            res = train(model, fit_ex, replace(train_cfg, seed=seed), val_examples=val_ex or None,
                        ks=ks)
            use_params(model, res.best_params)
            metrics = evaluate_model(model, test_ex, ks, train_cfg.top_n, train_cfg.eval_batch_size)
            run = AblationRun(variant, seed, metrics, res.best_epoch, time.perf_counter() - t0)
            log.info("ablation %s seed %d: %s", variant, seed, metrics)
            report.runs.append(run)
    return report
