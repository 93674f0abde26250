"""Two-stage estimator: pooled support recovery, then support-constrained
estimation of the novel task.

Stage one stacks all prior tasks and solves a single lasso at
lam = c * sqrt(log(p) / (T*l)). Stage two solves a lasso on the novel task
restricted to the recovered support, optionally followed by an OLS refit on
the coordinates the restricted lasso selects.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import (
    GroundTruth,
    MetaDataset,
    SupportSet,
    TaskData,
    extract_support,
    support_equal,
)
from .solvers import SolverOptions, lasso, ols_refit, restricted_lasso

logger = logging.getLogger(__name__)


def pool(dataset: MetaDataset) -> tuple[np.ndarray, np.ndarray]:
    """Stack the prior tasks: row i*l + j is sample j of task i."""
    X = np.vstack([t.X for t in dataset.prior_tasks])
    y = np.concatenate([t.y for t in dataset.prior_tasks])
    return X, y


def lambda_schedule(p: int, T: int, l: int, c: float) -> float:
    """c * sqrt(log(p) / (T*l)), natural log.

    The schedule implements the noise term of the theory's lower bound;
    the task-deviation terms are not needed in the regimes exercised here.
    """
    if p < 2:
        raise ValueError("need p >= 2")
    if T * l < 1:
        raise ValueError("need T*l >= 1")
    if c <= 0:
        raise ValueError("need c > 0")
    return c * math.sqrt(math.log(p) / (T * l))


def novel_lambda(support_size: int, l: int, c: float) -> float:
    """c * sqrt(log(max(|support|, 2)) / l).

    The true novel support size is unknown a priori, so the recovered
    support size stands in for it; the max(., 2) guard keeps the log
    positive.
    """
    if l < 1:
        raise ValueError("need l >= 1")
    if c <= 0:
        raise ValueError("need c > 0")
    return c * math.sqrt(math.log(max(support_size, 2)) / l)


@dataclass(frozen=True)
class MetaFitReport:
    """Outcome of the pooled support-recovery stage."""

    lambda_used: float
    pooled_n: int
    recovered_support: SupportSet
    w_hat: np.ndarray
    converged: bool
    kkt_residual: float
    exact_recovery: Optional[bool] = None
    linf_error: Optional[float] = None

    def to_json_dict(self) -> dict:
        return {
            "lambda_used": self.lambda_used,
            "pooled_n": self.pooled_n,
            "recovered_support": list(self.recovered_support),
            "w_hat": self.w_hat.tolist(),
            "converged": self.converged,
            "kkt_residual": self.kkt_residual,
            "exact_recovery": self.exact_recovery,
            "linf_error": self.linf_error,
        }


@dataclass(frozen=True)
class NovelFitReport:
    """Outcome of the support-constrained novel-task stage."""

    lambda_used: float
    w_hat_novel: np.ndarray
    support_novel: SupportSet
    refit: bool
    converged: bool
    empty_support: bool = False
    linf_error: Optional[float] = None

    def to_json_dict(self) -> dict:
        return {
            "lambda_used": self.lambda_used,
            "w_hat_novel": self.w_hat_novel.tolist(),
            "support_novel": list(self.support_novel),
            "refit": self.refit,
            "converged": self.converged,
            "empty_support": self.empty_support,
            "linf_error": self.linf_error,
        }


def recover_common_support(
    dataset: MetaDataset,
    c_lambda: float = 1.0,
    opts: Optional[SolverOptions] = None,
    truth: Optional[GroundTruth] = None,
) -> MetaFitReport:
    """Pooled lasso over all prior tasks.

    Solver non-convergence surfaces in the report, not as an error.
    When ground truth is supplied the report carries the exact-recovery
    indicator and the sup-norm error of the pooled estimate.
    """
    X, y = pool(dataset)
    T = dataset.n_tasks
    l = dataset.samples_per_task
    lam = lambda_schedule(dataset.p, T, l, c_lambda)
    res = lasso(X, y, lam, opts)
    if not res.converged:
        logger.warning(
            "pooled lasso did not converge (T=%d, l=%d, p=%d, kkt=%.3g)",
            T, l, dataset.p, res.kkt_residual,
        )
    exact = None
    linf = None
    if truth is not None:
        exact = support_equal(res.support, truth.support)
        linf = float(np.abs(res.weights - truth.w_star).max())
    return MetaFitReport(
        lambda_used=lam,
        pooled_n=T * l,
        recovered_support=res.support,
        w_hat=res.weights,
        converged=res.converged,
        kkt_residual=res.kkt_residual,
        exact_recovery=exact,
        linf_error=linf,
    )


def fit_novel_task(
    novel: TaskData,
    support: SupportSet,
    c_lambda_novel: float = 1.0,
    refit: bool = False,
    opts: Optional[SolverOptions] = None,
    truth: Optional[GroundTruth] = None,
) -> NovelFitReport:
    """Restricted lasso on the novel task, optionally refit by OLS.

    The refit re-estimates, without shrinkage, the coordinates the
    restricted lasso selected; if that design is singular (e.g. more
    selected coordinates than samples) the lasso weights are kept and the
    report's refit flag stays False.
    """
    l = novel.n_samples
    lam = novel_lambda(len(support), l, c_lambda_novel)
    if len(support) == 0:
        report_w = np.zeros(novel.n_features)
        return NovelFitReport(
            lambda_used=lam,
            w_hat_novel=report_w,
            support_novel=SupportSet(),
            refit=False,
            converged=True,
            empty_support=True,
            linf_error=_novel_error(report_w, truth),
        )
    res = restricted_lasso(novel.X, novel.y, lam, support, opts)
    selected = res.support
    w = res.weights
    refit_applied = False
    if refit and len(selected) > 0:
        if len(selected) > l:
            logger.warning(
                "selected support (%d) exceeds sample count (%d); keeping lasso weights",
                len(selected), l,
            )
        else:
            try:
                w = ols_refit(novel.X, novel.y, selected)
                refit_applied = True
            except ValueError:
                logger.warning("refit design singular; keeping lasso weights")
    return NovelFitReport(
        lambda_used=lam,
        w_hat_novel=w,
        support_novel=selected,
        refit=refit_applied,
        converged=res.converged,
        linf_error=_novel_error(w, truth),
    )


def _novel_error(w: np.ndarray, truth: Optional[GroundTruth]) -> Optional[float]:
    if truth is None:
        return None
    return float(np.abs(w - truth.novel_weights()).max())
