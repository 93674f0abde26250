"""Core value types shared by the generators, solvers, and experiment harness.

Every type here is an immutable value object: arrays are copied on
construction and marked read-only, so instances can be shared freely
between concurrent workers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

# Entries below this magnitude are treated as solver noise when extracting a
# support: one order of magnitude above the default solver tolerance (1e-8),
# so a converged solver never produces spurious support.
SUPPORT_TOL = 1e-6


def _frozen_array(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class SupportSet:
    """Sorted, deduplicated set of active coordinate indices."""

    indices: tuple[int, ...] = ()

    def __post_init__(self):
        idx = tuple(sorted({int(i) for i in self.indices}))
        if idx and idx[0] < 0:
            raise ValueError("support indices must be nonnegative")
        object.__setattr__(self, "indices", idx)

    @classmethod
    def from_iterable(cls, it: Iterable[int]) -> "SupportSet":
        return cls(tuple(it))

    def as_array(self) -> np.ndarray:
        return np.array(self.indices, dtype=int)

    def issubset(self, other: "SupportSet") -> bool:
        return set(self.indices) <= set(other.indices)

    def __len__(self) -> int:
        return len(self.indices)

    def __iter__(self) -> Iterator[int]:
        return iter(self.indices)

    def __contains__(self, j) -> bool:
        return int(j) in set(self.indices)


def extract_support(w, zeta: float = SUPPORT_TOL) -> SupportSet:
    """Indices j with |w_j| > zeta.

    zeta = 0 gives the exact nonzero set; the default treats anything within
    solver noise of zero as zero.
    """
    if zeta < 0:
        raise ValueError(f"zeta must be nonnegative, got {zeta}")
    w = np.asarray(w, dtype=float)
    return SupportSet(tuple(np.flatnonzero(np.abs(w) > zeta)))


def support_equal(a: SupportSet, b: SupportSet) -> bool:
    """True iff the two index sets are identical."""
    return a.indices == b.indices


@dataclass(frozen=True)
class TaskData:
    """One task: design matrix X (samples x covariates) and responses y."""

    task_id: int
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = _frozen_array(self.X)
        y = _frozen_array(self.y)
        if X.ndim != 2:
            raise ValueError(f"X must be 2-D, got shape {X.shape}")
        if y.ndim != 1:
            raise ValueError(f"y must be 1-D, got shape {y.shape}")
        if X.shape[0] != y.shape[0]:
            raise ValueError(
                f"X has {X.shape[0]} rows but y has {y.shape[0]} entries"
            )
        if not (np.isfinite(X).all() and np.isfinite(y).all()):
            raise ValueError("task data must be finite (no NaN/Inf)")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n_samples(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class MetaDataset:
    """T prior tasks plus one novel task, all over the same p covariates.

    Prior tasks share a common sample count; the novel task may differ.
    """

    prior_tasks: tuple[TaskData, ...]
    novel_task: TaskData
    p: int

    def __post_init__(self):
        tasks = tuple(self.prior_tasks)
        if not tasks:
            raise ValueError("need at least one prior task")
        for t in (*tasks, self.novel_task):
            if t.n_features != self.p:
                raise ValueError(
                    f"task {t.task_id} has {t.n_features} columns, expected {self.p}"
                )
        counts = {t.n_samples for t in tasks}
        if len(counts) != 1:
            raise ValueError(f"prior tasks have unequal sample counts: {sorted(counts)}")
        object.__setattr__(self, "prior_tasks", tasks)

    @property
    def n_tasks(self) -> int:
        return len(self.prior_tasks)

    @property
    def samples_per_task(self) -> int:
        return self.prior_tasks[0].n_samples


@dataclass(frozen=True)
class GroundTruth:
    """Shared weights, per-task deviations (novel last), and their supports."""

    w_star: np.ndarray
    deltas: tuple[np.ndarray, ...]
    support: SupportSet
    per_task_supports: tuple[SupportSet, ...]

    def __post_init__(self):
        w = _frozen_array(self.w_star)
        deltas = tuple(_frozen_array(d) for d in self.deltas)
        object.__setattr__(self, "w_star", w)
        object.__setattr__(self, "deltas", deltas)
        if len(deltas) != len(self.per_task_supports):
            raise ValueError("one support per delta required")
        exact = extract_support(w, 0.0)
        if not support_equal(exact, self.support):
            raise ValueError("support does not match nonzeros of w_star")
        for i, (d, s) in enumerate(zip(deltas, self.per_task_supports)):
            if d.shape != w.shape:
                raise ValueError(f"delta {i} has shape {d.shape}, expected {w.shape}")
            if not support_equal(extract_support(w + d, 0.0), s):
                raise ValueError(f"per-task support {i} inconsistent with w_star + delta")
            if not s.issubset(self.support):
                raise ValueError(f"per-task support {i} is not contained in the common support")

    @classmethod
    def from_weights(cls, w_star, deltas: Iterable[np.ndarray]) -> "GroundTruth":
        w = np.asarray(w_star, dtype=float)
        deltas = tuple(np.asarray(d, dtype=float) for d in deltas)
        return cls(
            w_star=w,
            deltas=deltas,
            support=extract_support(w, 0.0),
            per_task_supports=tuple(extract_support(w + d, 0.0) for d in deltas),
        )

    @property
    def k(self) -> int:
        return len(self.support)

    def novel_weights(self) -> np.ndarray:
        """True coefficient vector of the novel task (w_star + last delta)."""
        return self.w_star + self.deltas[-1]


@dataclass(frozen=True)
class SolverResult:
    """Weight estimate with its extracted support and convergence certificate."""

    weights: np.ndarray
    support: SupportSet
    iterations: int
    converged: bool
    kkt_residual: float

    def __post_init__(self):
        object.__setattr__(self, "weights", _frozen_array(self.weights))
