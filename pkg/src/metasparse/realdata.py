"""Real-data pipeline: expression-style CSV in, common-support estimation by
each method, novel-task mean-squared-error out.

The table geometry mirrors the gene-expression experiment: cells x factors
measured at several time-points, the first time-points acting as the prior
tasks and the last one as the novel task. One factor is the response; the
remaining columns form the design.

Hyperparameters are chosen by uniform random search with a fixed budget
over a fixed range, replacing a model-based optimizer: the optimizer is
incidental to the comparison, and random search keeps it dependency-free
and reproducible.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import pandas as pd

from .meta import fit_novel_task, novel_lambda, pool
from .model import MetaDataset, SupportSet, TaskData, extract_support
from .solvers import SolverOptions, dirty_model, group_lasso, lasso
from .synth import substream

logger = logging.getLogger(__name__)

REAL_METHODS = ("meta", "group_lasso", "dirty_model")

_LASSO_OPTS = SolverOptions()
_MULTI_OPTS = SolverOptions(max_iter=20_000, tol=1e-12, kkt_tol=1e-6)


@dataclass(frozen=True)
class ExpressionTable:
    """Expression levels grouped by time-point: values[t, c, f]."""

    values: np.ndarray
    factor_names: tuple[str, ...]

    def __post_init__(self):
        v = np.array(self.values, dtype=float, copy=True)
        if v.ndim != 3:
            raise ValueError(f"values must be (timepoints, cells, factors), got {v.shape}")
        names = tuple(str(n) for n in self.factor_names)
        if len(names) != v.shape[2]:
            raise ValueError("one name per factor column required")
        if len(set(names)) != len(names):
            raise ValueError("factor names must be unique")
        if not np.isfinite(v).all():
            raise ValueError("expression values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "factor_names", names)

    @property
    def timepoint_count(self) -> int:
        return self.values.shape[0]

    @property
    def cells_per_timepoint(self) -> int:
        return self.values.shape[1]

    @property
    def factor_count(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class RealSpec:
    """Protocol knobs for the real-data comparison."""

    response_name: str
    l: int = 5
    train_tasks: Optional[int] = None
    search_evals: int = 30
    search_range: tuple[float, float] = (0.0, 100.0)
    novel_rep: int = 6
    outer_reps: int = 100
    master_seed: int = 0

    def __post_init__(self):
        if self.l < 1:
            raise ValueError("l must be >= 1")
        if self.search_evals < 1:
            raise ValueError("search_evals must be >= 1")
        lo, hi = self.search_range
        if not lo < hi:
            raise ValueError("search_range must satisfy lo < hi")
        if self.novel_rep < 1 or self.outer_reps < 1:
            raise ValueError("repetition counts must be >= 1")


def load_expression_csv(path, response_name: Optional[str] = None) -> ExpressionTable:
    """Parse a `timepoint,cell_id,<factor names...>` CSV into a table.

    Rows are grouped by time-point and aligned across time-points by
    cell_id; every time-point must carry the same cells.
    """
    df = pd.read_csv(path)
    cols = list(df.columns)
    if cols[:2] != ["timepoint", "cell_id"]:
        raise ValueError(
            f"expected header to start with timepoint,cell_id, got {cols[:2]}"
        )
    factors = cols[2:]
    if not factors:
        raise ValueError("no factor columns found")
    if len(set(factors)) != len(factors):
        raise ValueError("factor names must be unique")
    if response_name is not None and response_name not in factors:
        raise ValueError(f"response column {response_name!r} not found in {factors}")
    body = df[factors]
    if not all(pd.api.types.is_numeric_dtype(t) for t in body.dtypes):
        bad = [c for c in factors if not pd.api.types.is_numeric_dtype(df[c].dtype)]
        raise ValueError(f"non-numeric factor columns: {bad}")
    if df[factors].isna().any().any():
        raise ValueError("factor columns contain missing values")

    groups = []
    ids_ref = None
    for tp, g in df.groupby("timepoint", sort=True):
        g = g.sort_values("cell_id")
        ids = tuple(g["cell_id"].tolist())
        if ids_ref is None:
            ids_ref = ids
        elif ids != ids_ref:
            raise ValueError(f"time-point {tp} has a different cell set (ragged groups)")
        groups.append(g[factors].to_numpy(dtype=float))
    values = np.stack(groups)
    return ExpressionTable(values=values, factor_names=tuple(factors))


def write_expression_csv(table: ExpressionTable, path) -> None:
    """Inverse of load_expression_csv, with cell ids 0..cells-1."""
    rows = []
    for t in range(table.timepoint_count):
        for c in range(table.cells_per_timepoint):
            rows.append([t, c, *table.values[t, c]])
    df = pd.DataFrame(rows, columns=["timepoint", "cell_id", *table.factor_names])
    df.to_csv(path, index=False)


def draw_permutation(n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.permutation(n)


def permute_cells(table: ExpressionTable, rng: np.random.Generator) -> ExpressionTable:
    """Apply one random cell permutation identically to every time-point."""
    perm = draw_permutation(table.cells_per_timepoint, rng)
    return apply_permutation(table, perm)


def apply_permutation(table: ExpressionTable, perm: np.ndarray) -> ExpressionTable:
    perm = np.asarray(perm, dtype=int)
    if sorted(perm.tolist()) != list(range(table.cells_per_timepoint)):
        raise ValueError("not a permutation of the cell indices")
    return ExpressionTable(values=table.values[:, perm, :], factor_names=table.factor_names)


def build_tasks(
    table: ExpressionTable, response_name: str, l: int
) -> tuple[MetaDataset, tuple[TaskData, ...]]:
    """First l cells of each time-point are training, the rest holdout.

    The last time-point becomes the novel task. Returns the dataset plus
    one holdout TaskData per time-point (novel last).
    """
    if response_name not in table.factor_names:
        raise ValueError(f"response column {response_name!r} not in table")
    if l >= table.cells_per_timepoint:
        raise ValueError(
            f"l={l} leaves no holdout cells (only {table.cells_per_timepoint} per time-point)"
        )
    ri = table.factor_names.index(response_name)
    keep = [j for j in range(table.factor_count) if j != ri]
    X_all = table.values[:, :, keep]
    y_all = table.values[:, :, ri]

    train, holdout = [], []
    for t in range(table.timepoint_count):
        train.append(TaskData(task_id=t, X=X_all[t, :l], y=y_all[t, :l]))
        holdout.append(TaskData(task_id=t, X=X_all[t, l:], y=y_all[t, l:]))
    dataset = MetaDataset(
        prior_tasks=tuple(train[:-1]), novel_task=train[-1], p=len(keep)
    )
    return dataset, tuple(holdout)


def tune_lambda(
    objective: Callable[[float], float],
    lo: float,
    hi: float,
    evals: int,
    rng: np.random.Generator,
) -> float:
    """Uniform random search; returns the sampled point with the smallest
    objective, ties broken by the smaller point."""
    if evals < 1:
        raise ValueError("evals must be >= 1")
    if not lo < hi:
        raise ValueError("need lo < hi")
    candidates = rng.uniform(lo, hi, evals)
    best_lam = None
    best_val = math.inf
    for lam in candidates:
        val = float(objective(float(lam)))
        if not math.isfinite(val):
            continue
        if val < best_val or (val == best_val and lam < best_lam):
            best_lam, best_val = float(lam), val
    if best_lam is None:
        raise ValueError("objective was non-finite at every sampled point")
    return best_lam


def _tune_pair(objective, lo, hi, evals, rng) -> tuple[float, float]:
    """Random search over a hyperparameter pair, same budget and range."""
    pairs = rng.uniform(lo, hi, (evals, 2))
    best = None
    best_val = math.inf
    for a, b in pairs:
        val = float(objective(float(a), float(b)))
        if not math.isfinite(val):
            continue
        if val < best_val or (val == best_val and (a, b) < best):
            best, best_val = (float(a), float(b)), val
    if best is None:
        raise ValueError("objective was non-finite at every sampled point")
    return best


def evaluate_novel(
    novel: TaskData,
    support: SupportSet,
    l: int,
    novel_rep: int,
    rng: np.random.Generator,
    c_lambda: float = 1.0,
    refit: bool = True,
) -> tuple[float, float]:
    """Support-constrained fit on repeated random l-subsets of the novel
    task, scored on the remaining cells; returns (mse mean, mse std)."""
    n = novel.n_samples
    if l >= n:
        raise ValueError(f"l={l} leaves no evaluation cells out of {n}")
    mses = []
    for _ in range(novel_rep):
        idx = rng.choice(n, size=l, replace=False)
        rest = np.setdiff1d(np.arange(n), idx)
        sub = TaskData(task_id=novel.task_id, X=novel.X[idx], y=novel.y[idx])
        rep = fit_novel_task(sub, support, c_lambda, refit=refit, opts=_LASSO_OPTS)
        resid = novel.y[rest] - novel.X[rest] @ rep.w_hat_novel
        mses.append(float(np.mean(resid**2)))
    arr = np.array(mses)
    return float(arr.mean()), float(arr.std())


# ---------------------------------------------------------------------------
# comparison pipeline
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RealRecord:
    method: str
    l: int
    support_size_mean: float
    support_size_std: float
    mse_mean: float
    mse_std: float


REAL_CSV_HEADER = "method,l,support_size_mean,support_size_std,mse_mean,mse_std"


def write_real_csv(records: Sequence[RealRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(REAL_CSV_HEADER + "\n")
        for r in records:
            f.write(
                f"{r.method},{r.l},{r.support_size_mean:.6g},{r.support_size_std:.6g},"
                f"{r.mse_mean:.6g},{r.mse_std:.6g}\n"
            )


def _standardized(dataset: MetaDataset, holdouts, novel_full: TaskData):
    """Z-score every covariate column using the pooled prior training rows."""
    X, _ = pool(dataset)
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std[std == 0] = 1.0

    def tx(t: TaskData) -> TaskData:
        return TaskData(task_id=t.task_id, X=(t.X - mean) / std, y=t.y)

    dataset = MetaDataset(
        prior_tasks=tuple(tx(t) for t in dataset.prior_tasks),
        novel_task=tx(dataset.novel_task),
        p=dataset.p,
    )
    return dataset, tuple(tx(t) for t in holdouts), tx(novel_full)


def _prior_validation_mse(W: np.ndarray, holdouts: Sequence[TaskData]) -> float:
    """Pooled squared error of per-task predictions on the prior holdouts."""
    sq, count = 0.0, 0
    for t, h in enumerate(holdouts):
        r = h.y - h.X @ W[:, t]
        sq += float(r @ r)
        count += h.n_samples
    return sq / count


# The search range is stated in the units of an unnormalized squared-error
# loss (sum of 1/2 ||y - Xw||^2 terms); the solvers here normalize the loss
# by the sample count, which rescales the equivalent penalty by the same
# count. Searching raw solver units over [0, 100] would leave ~98% of the
# candidates past the empty-model threshold.
def _to_solver_lambda(search_value: float, n_samples: int) -> float:
    return search_value / n_samples


def _support_for_method(
    method: str,
    dataset: MetaDataset,
    holdouts: Sequence[TaskData],
    spec: RealSpec,
    rng: np.random.Generator,
) -> SupportSet:
    """Tune the support-recovery penalty by random search, then extract the
    estimated common support (union over tasks for the multi-task methods)."""
    lo, hi = spec.search_range
    prior_holdouts = holdouts[:-1]
    tasks = dataset.prior_tasks
    T = dataset.n_tasks
    l = dataset.samples_per_task

    if method == "meta":
        Xp, yp = pool(dataset)
        n_pool = Xp.shape[0]

        def objective(lam: float) -> float:
            w = lasso(Xp, yp, _to_solver_lambda(lam, n_pool), _LASSO_OPTS).weights
            return _prior_validation_mse(np.tile(w[:, None], (1, T)), prior_holdouts)

        lam = tune_lambda(objective, lo, hi, spec.search_evals, rng)
        w = lasso(Xp, yp, _to_solver_lambda(lam, n_pool), _LASSO_OPTS).weights
        return extract_support(w)

    if method == "group_lasso":
        def objective(lam: float) -> float:
            W = group_lasso(tasks, _to_solver_lambda(lam, l), _MULTI_OPTS).W
            return _prior_validation_mse(W, prior_holdouts)

        lam = tune_lambda(objective, lo, hi, spec.search_evals, rng)
        W = group_lasso(tasks, _to_solver_lambda(lam, l), _MULTI_OPTS).W
    elif method == "dirty_model":
        def objective2(l1: float, l1inf: float) -> float:
            W = dirty_model(
                tasks, _to_solver_lambda(l1, l), _to_solver_lambda(l1inf, l), _MULTI_OPTS
            ).W
            return _prior_validation_mse(W, prior_holdouts)

        l1, l1inf = _tune_pair(objective2, lo, hi, spec.search_evals, rng)
        W = dirty_model(
            tasks, _to_solver_lambda(l1, l), _to_solver_lambda(l1inf, l), _MULTI_OPTS
        ).W
    else:
        raise ValueError(f"unknown method {method!r}")
    union = set()
    for t in range(T):
        union.update(extract_support(W[:, t]))
    return SupportSet.from_iterable(union)


def _real_rep(args) -> tuple[int, dict]:
    table, spec, methods, standardize, rep = args
    rng_perm = substream(spec.master_seed, rep, 0)
    permuted = permute_cells(table, rng_perm)
    dataset, holdouts = build_tasks(permuted, spec.response_name, spec.l)
    novel_full = TaskData(
        task_id=dataset.novel_task.task_id,
        X=np.vstack([dataset.novel_task.X, holdouts[-1].X]),
        y=np.concatenate([dataset.novel_task.y, holdouts[-1].y]),
    )
    if standardize:
        dataset, holdouts, novel_full = _standardized(dataset, holdouts, novel_full)

    out: dict[str, tuple[int, float, float]] = {}
    meta_size = 0
    for mi, method in enumerate(methods):
        try:
            if method == "random_support":
                rng_draw = substream(spec.master_seed, rep, mi + 1, 3)
                idx = rng_draw.choice(dataset.p, size=meta_size, replace=False)
                support = SupportSet.from_iterable(int(j) for j in idx)
            else:
                rng_tune = substream(spec.master_seed, rep, mi + 1, 1)
                support = _support_for_method(method, dataset, holdouts, spec, rng_tune)
                if method == "meta":
                    meta_size = len(support)

            # the search walks the raw novel-task penalty; fit_novel_task is
            # parameterized by the multiplier on sqrt(log(max(|S|,2))/l)
            scale = novel_lambda(len(support), spec.l, 1.0)

            def objective(lam: float) -> float:
                rng_eval = substream(spec.master_seed, rep, mi + 1, 2)
                c = _to_solver_lambda(lam, spec.l) / scale
                return evaluate_novel(
                    novel_full, support, spec.l, spec.novel_rep, rng_eval, c
                )[0]

            rng_c = substream(spec.master_seed, rep, mi + 1, 4)
            lo, hi = spec.search_range
            best = tune_lambda(objective, lo, hi, spec.search_evals, rng_c)
            rng_eval = substream(spec.master_seed, rep, mi + 1, 2)
            mse_mean, mse_std = evaluate_novel(
                novel_full, support, spec.l, spec.novel_rep, rng_eval,
                _to_solver_lambda(best, spec.l) / scale,
            )
            out[method] = (len(support), mse_mean, mse_std)
        except Exception:
            logger.exception("method %s failed on repetition %d", method, rep)
            out[method] = (0, math.nan, math.nan)
    return rep, out


def run_real_compare(
    table: ExpressionTable,
    spec: RealSpec,
    methods: Sequence[str] = REAL_METHODS,
    standardize: bool = False,
    workers: Optional[int] = None,
) -> list[RealRecord]:
    """outer_reps independent permuted splits; per split, tune, estimate the
    common support, and score the novel task for every method.

    The pseudo-method "random_support" draws a support of the same size as
    that repetition's meta support; it requires "meta" earlier in methods.
    """
    from .bench import resolve_workers  # late import: avoid cycle at module load

    if spec.train_tasks is not None and table.timepoint_count != spec.train_tasks + 1:
        raise ValueError(
            f"table has {table.timepoint_count} time-points, expected "
            f"{spec.train_tasks + 1} (train_tasks + novel)"
        )
    methods = tuple(methods)
    if "random_support" in methods and (
        "meta" not in methods or methods.index("meta") > methods.index("random_support")
    ):
        raise ValueError("random_support requires meta earlier in the method list")

    jobs = [(table, spec, methods, standardize, rep) for rep in range(spec.outer_reps)]
    n_workers = resolve_workers(workers)
    results: dict[int, dict] = {}
    if n_workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool_:
            for rep, out in pool_.map(_real_rep, jobs, chunksize=1):
                results[rep] = out
    else:
        for job in jobs:
            rep, out = _real_rep(job)
            results[rep] = out

    records = []
    for method in methods:
        sizes = np.array([results[r][method][0] for r in range(spec.outer_reps)], dtype=float)
        mses = np.array([results[r][method][1] for r in range(spec.outer_reps)])
        ok = np.isfinite(mses)
        records.append(RealRecord(
            method=method,
            l=spec.l,
            support_size_mean=float(sizes[ok].mean()) if ok.any() else math.nan,
            support_size_std=float(sizes[ok].std()) if ok.any() else math.nan,
            mse_mean=float(mses[ok].mean()) if ok.any() else math.nan,
            mse_std=float(mses[ok].std()) if ok.any() else math.nan,
        ))
    return records


def tune_support_penalty(table: ExpressionTable, spec: RealSpec, method: str) -> dict:
    """One permuted split; random-search the support-recovery penalty for
    one method against the prior-task validation MSE."""
    if method not in REAL_METHODS:
        raise ValueError(f"unknown method {method!r}, expected one of {REAL_METHODS}")
    permuted = permute_cells(table, substream(spec.master_seed, 0, 0))
    dataset, holdouts = build_tasks(permuted, spec.response_name, spec.l)
    prior_holdouts = holdouts[:-1]
    tasks = dataset.prior_tasks
    T = dataset.n_tasks
    l = dataset.samples_per_task
    rng = substream(spec.master_seed, 0, 1)
    lo, hi = spec.search_range
    out = {"method": method, "l": spec.l, "master_seed": spec.master_seed}

    if method == "meta":
        Xp, yp = pool(dataset)
        n_pool = Xp.shape[0]

        def objective(lam: float) -> float:
            w = lasso(Xp, yp, _to_solver_lambda(lam, n_pool), _LASSO_OPTS).weights
            return _prior_validation_mse(np.tile(w[:, None], (1, T)), prior_holdouts)

        lam = tune_lambda(objective, lo, hi, spec.search_evals, rng)
        out.update({
            "lambda": lam,
            "solver_lambda": _to_solver_lambda(lam, n_pool),
            "validation_mse": objective(lam),
        })
    elif method == "group_lasso":
        def objective(lam: float) -> float:
            W = group_lasso(tasks, _to_solver_lambda(lam, l), _MULTI_OPTS).W
            return _prior_validation_mse(W, prior_holdouts)

        lam = tune_lambda(objective, lo, hi, spec.search_evals, rng)
        out.update({
            "lambda12": lam,
            "solver_lambda12": _to_solver_lambda(lam, l),
            "validation_mse": objective(lam),
        })
    else:
        def objective2(l1: float, l1inf: float) -> float:
            W = dirty_model(
                tasks, _to_solver_lambda(l1, l), _to_solver_lambda(l1inf, l), _MULTI_OPTS
            ).W
            return _prior_validation_mse(W, prior_holdouts)

        l1, l1inf = _tune_pair(objective2, lo, hi, spec.search_evals, rng)
        out.update({
            "lambda1": l1,
            "lambda1inf": l1inf,
            "solver_lambda1": _to_solver_lambda(l1, l),
            "solver_lambda1inf": _to_solver_lambda(l1inf, l),
            "validation_mse": objective2(l1, l1inf),
        })
    return out


# ---------------------------------------------------------------------------
# planted synthetic fixture (same CSV geometry as the real dataset)
# ---------------------------------------------------------------------------

def synthetic_expression_table(
    timepoints: int = 8,
    cells: int = 120,
    factors: int = 45,
    true_support_size: int = 3,
    response_index: int = 0,
    amplitude: float = 1.0,
    deviation: float = 0.2,
    noise: float = 0.1,
    seed: int = 0,
) -> tuple[ExpressionTable, SupportSet]:
    """Planted linear model in expression-table form.

    The response column is a sparse linear function of the first
    true_support_size covariate columns, with per-time-point coefficient
    deviations, mirroring the generative model of the synthetic
    experiments. Returns the table and the true support in design-matrix
    coordinates (i.e. after the response column is removed).
    """
    if not 0 < true_support_size <= factors - 1:
        raise ValueError("true_support_size must lie in [1, factors-1]")
    if not 0 <= response_index < factors:
        raise ValueError("response_index out of range")
    names = tuple(f"TF{j + 1:02d}" for j in range(factors))
    # design-matrix coordinates: planted support occupies the first columns
    support = SupportSet.from_iterable(range(true_support_size))
    covariate_cols = [j for j in range(factors) if j != response_index]

    values = np.empty((timepoints, cells, factors))
    for t in range(timepoints):
        rng = substream(seed, t)
        beta = np.zeros(factors - 1)
        beta[:true_support_size] = amplitude
        beta[:true_support_size] += rng.normal(0.0, deviation, true_support_size)
        X = rng.standard_normal((cells, factors - 1))
        y = X @ beta + rng.normal(0.0, noise, cells)
        values[t, :, covariate_cols] = X.T
        values[t, :, response_index] = y
    return ExpressionTable(values=values, factor_names=names), support
