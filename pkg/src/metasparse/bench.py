"""Monte-Carlo harness for the phase-transition experiments.

A sweep runs `reps` independent repetitions at every grid point, derives
each repetition's RNG stream from (master_seed, grid_index, rep_index), and
reduces the outcomes to one PhaseRecord per (grid point, method). Records
are merged in deterministic grid order regardless of how repetitions are
scheduled, so the emitted CSV is byte-identical for any worker count.

The x-axis of every phase figure is the rescaled sample size
C = T*l / (k * log(p - k)).
"""

from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

import numpy as np

from .meta import lambda_schedule, recover_common_support
from .model import SupportSet, extract_support, support_equal
from .solvers import MultiTaskResult, SolverOptions, dirty_model, group_lasso
from .synth import GenConfig, derive_seed, generate, make_true_weights

logger = logging.getLogger(__name__)

METHODS = ("meta", "group_lasso", "dirty_model")
SWEEP_KEYS = {"T_values": "T", "C_values": "C", "l_values": "l", "p_values": "p"}

CSV_HEADER = (
    "method,p,k,l,T,C,lambda,reps,p_exact,p_std,"
    "err_mean,err_std,p_exact_last_task,master_seed"
)

# lambda rules: meta uses c (4.0 for the mixture deltas, else 1.0); the
# baselines use c12/c1 = 30 and lambda_1inf = (1 + slope*T)/(1 + slope) * lambda_1
LAMBDA_DEFAULTS = {"c12": 30.0, "c1": 30.0, "c1inf_slope": 1.5}

_META_OPTS = SolverOptions()
_BASELINE_OPTS = SolverOptions(max_iter=20_000, tol=1e-12, kkt_tol=1e-6)


def rescale_C(T, l: int, k: int, p: int) -> float:
    """C = T*l / (k * log(p - k)), natural log."""
    if k < 1 or p <= k:
        raise ValueError(f"need p > k >= 1, got p={p}, k={k}")
    return T * l / (k * math.log(p - k))


def T_for_C(C: float, l: int, k: int, p: int) -> int:
    """Smallest task count whose rescaled sample size reaches C."""
    if C <= 0:
        raise ValueError("need C > 0")
    if k < 1 or p <= k:
        raise ValueError(f"need p > k >= 1, got p={p}, k={k}")
    return max(1, math.ceil(C * k * math.log(p - k) / l))


def dirty_lambda_inf(lambda1: float, T: int, slope: float = 1.5) -> float:
    """Row-penalty weight (1 + slope*T) * lambda1 / (1 + slope); equals
    lambda1 at T = 1."""
    return (1.0 + slope * T) * lambda1 / (1.0 + slope)


def meta_lambda_constant(constants: Mapping[str, float], delta_kind: str) -> float:
    """The meta method's c, defaulting to 4.0 for mixture deltas else 1.0."""
    if "c" in constants:
        return float(constants["c"])
    return 4.0 if delta_kind == "dirac_mixture" else 1.0


@dataclass(frozen=True)
class Sweep:
    """One-dimensional grid over T, C, l, or p."""

    kind: str
    values: tuple

    def __post_init__(self):
        if self.kind not in ("T", "C", "l", "p"):
            raise ValueError(f"unknown sweep kind {self.kind!r}")
        if not self.values:
            raise ValueError("sweep must be nonempty")
        object.__setattr__(self, "values", tuple(self.values))


@dataclass(frozen=True)
class ExperimentSpec:
    """Everything one sweep needs: base config, grid, method, constants."""

    base: GenConfig
    sweep: Sweep
    reps: int = 100
    method: str = "meta"
    lambda_constants: dict = field(default_factory=dict)
    master_seed: int = 0

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}, expected one of {METHODS}")
        known = set(LAMBDA_DEFAULTS) | {"c"}
        extra = set(self.lambda_constants) - known
        if extra:
            raise ValueError(f"unknown lambda_constants keys: {sorted(extra)}")

    def to_json_dict(self) -> dict:
        return {
            "base": self.base.to_json_dict(),
            "sweep": {f"{self.sweep.kind}_values": list(self.sweep.values)},
            "reps": self.reps,
            "method": self.method,
            "lambda_constants": dict(self.lambda_constants),
            "master_seed": self.master_seed,
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "ExperimentSpec":
        if not isinstance(obj, dict):
            raise ValueError("experiment document must be a JSON object")
        allowed = {"base", "sweep", "reps", "method", "lambda_constants", "master_seed"}
        extra = set(obj) - allowed
        if extra:
            raise ValueError(f"unknown experiment keys: {sorted(extra)}")
        if "base" not in obj or "sweep" not in obj:
            raise ValueError("experiment document requires 'base' and 'sweep'")
        sweep_obj = obj["sweep"]
        if not isinstance(sweep_obj, dict) or len(sweep_obj) != 1:
            raise ValueError(f"sweep must hold exactly one of {sorted(SWEEP_KEYS)}")
        (key, values), = sweep_obj.items()
        if key not in SWEEP_KEYS:
            raise ValueError(f"unknown sweep key {key!r}, expected one of {sorted(SWEEP_KEYS)}")
        return cls(
            base=GenConfig.from_json_dict(obj["base"]),
            sweep=Sweep(SWEEP_KEYS[key], tuple(values)),
            reps=int(obj.get("reps", 100)),
            method=obj.get("method", "meta"),
            lambda_constants=dict(obj.get("lambda_constants", {})),
            master_seed=int(obj.get("master_seed", 0)),
        )

    @classmethod
    def from_json(cls, text: str) -> "ExperimentSpec":
        return cls.from_json_dict(json.loads(text))


@dataclass(frozen=True)
class PhaseRecord:
    """One grid point of one method: recovery rate with binomial error bar
    plus the sup-norm estimation error across repetitions."""

    method: str
    p: int
    k: int
    l: int
    T: int
    C: float
    lam: float
    reps: int
    p_exact: float
    p_std: float
    err_mean: float
    err_std: float
    p_exact_last_task: Optional[float]
    master_seed: int


def binomial_std(p_exact: float, reps: int) -> float:
    return math.sqrt(p_exact * (1.0 - p_exact) / reps)


def make_phase_record(
    method: str,
    point: "GridPoint",
    lam: float,
    reps: int,
    successes: int,
    last_successes: Optional[int],
    errors: Sequence[float],
    master_seed: int,
) -> PhaseRecord:
    p_exact = successes / reps
    errs = np.asarray(errors, dtype=float)
    finite = errs[np.isfinite(errs)]
    return PhaseRecord(
        method=method,
        p=point.p,
        k=point.k,
        l=point.l,
        T=point.T,
        C=point.C,
        lam=lam,
        reps=reps,
        p_exact=p_exact,
        p_std=binomial_std(p_exact, reps),
        err_mean=float(finite.mean()) if finite.size else math.nan,
        err_std=float(finite.std()) if finite.size else math.nan,
        p_exact_last_task=None if last_successes is None else last_successes / reps,
        master_seed=master_seed,
    )


@dataclass(frozen=True)
class GridPoint:
    index: int
    p: int
    k: int
    l: int
    T: int
    C: float


def build_grid(spec: ExperimentSpec) -> tuple[GridPoint, ...]:
    base = spec.base
    points = []
    for i, v in enumerate(spec.sweep.values):
        p, l, T = base.p, base.l, base.T
        if spec.sweep.kind == "T":
            T = int(v)
        elif spec.sweep.kind == "C":
            T = T_for_C(float(v), l, base.k, p)
        elif spec.sweep.kind == "l":
            l = int(v)
        else:
            p = int(v)
        points.append(GridPoint(
            index=i, p=p, k=base.k, l=l, T=T,
            C=rescale_C(T, l, base.k, p),
        ))
    return tuple(points)


# ---------------------------------------------------------------------------
# repetition execution
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _RepJob:
    grid_index: int
    rep_index: int
    config: GenConfig
    methods: tuple
    c_meta: float
    lam_group: float
    lam_dirty1: float
    lam_dirty_inf: float


@dataclass(frozen=True)
class _Outcome:
    exact: bool
    exact_last: Optional[bool]
    error: float


def _multitask_outcome(res: MultiTaskResult, truth, T: int) -> _Outcome:
    supports = [extract_support(res.W[:, t]) for t in range(T)]
    union = SupportSet.from_iterable(j for s in supports for j in s)
    exact = res.converged and support_equal(union, truth.support)
    exact_last = res.converged and support_equal(supports[T - 1], truth.per_task_supports[T - 1])
    error = float(np.abs(res.W[:, T - 1] - (truth.w_star + truth.deltas[T - 1])).max())
    return _Outcome(exact, exact_last, error)


def _run_rep(job: _RepJob) -> tuple[int, int, dict]:
    """One repetition: generate once, evaluate every requested method."""
    out: dict[str, _Outcome] = {}
    try:
        w_star = make_true_weights(job.config.p, job.config.k, job.config.amplitude)
        dataset, truth = generate(job.config, w_star)
    except Exception:
        logger.exception("generation failed (grid=%d rep=%d)", job.grid_index, job.rep_index)
        for m in job.methods:
            out[m] = _Outcome(False, None if m == "meta" else False, math.nan)
        return job.grid_index, job.rep_index, out

    T = dataset.n_tasks
    for m in job.methods:
        try:
            if m == "meta":
                rep = recover_common_support(dataset, job.c_meta, _META_OPTS, truth)
                out[m] = _Outcome(
                    exact=bool(rep.converged and rep.exact_recovery),
                    exact_last=None,
                    error=rep.linf_error,
                )
            elif m == "group_lasso":
                res = group_lasso(dataset.prior_tasks, job.lam_group, _BASELINE_OPTS)
                out[m] = _multitask_outcome(res, truth, T)
            else:
                res = dirty_model(
                    dataset.prior_tasks, job.lam_dirty1, job.lam_dirty_inf, _BASELINE_OPTS
                )
                out[m] = _multitask_outcome(res, truth, T)
        except Exception:
            logger.exception("%s failed (grid=%d rep=%d)", m, job.grid_index, job.rep_index)
            out[m] = _Outcome(False, None if m == "meta" else False, math.nan)
    return job.grid_index, job.rep_index, out


def resolve_workers(workers: Optional[int] = None) -> int:
    """Requested worker count, capped by METASPARSE_WORKERS when set."""
    cap = os.environ.get("METASPARSE_WORKERS")
    cap = int(cap) if cap else None
    if workers is None:
        workers = cap if cap is not None else (os.cpu_count() or 1)
    if cap is not None:
        workers = min(workers, cap)
    return max(1, workers)


def _method_lambdas(spec: ExperimentSpec, point: GridPoint) -> dict:
    consts = {**LAMBDA_DEFAULTS, **spec.lambda_constants}
    c_meta = meta_lambda_constant(spec.lambda_constants, spec.base.delta_kind)
    lam_base = lambda_schedule(point.p, point.T, point.l, 1.0)
    lam1 = consts["c1"] * lam_base
    return {
        "c_meta": c_meta,
        "meta": c_meta * lam_base,
        "group_lasso": consts["c12"] * lam_base,
        "dirty_model": lam1,
        "dirty_inf": dirty_lambda_inf(lam1, point.T, consts["c1inf_slope"]),
    }


def _execute(spec: ExperimentSpec, methods: tuple, workers: Optional[int]) -> list[PhaseRecord]:
    grid = build_grid(spec)
    lambdas = {pt.index: _method_lambdas(spec, pt) for pt in grid}
    jobs = []
    for pt in grid:
        lam = lambdas[pt.index]
        for r in range(spec.reps):
            cfg = replace(
                spec.base, p=pt.p, l=pt.l, T=pt.T,
                seed=derive_seed(spec.master_seed, pt.index, r),
            )
            jobs.append(_RepJob(
                grid_index=pt.index, rep_index=r, config=cfg, methods=methods,
                c_meta=lam["c_meta"], lam_group=lam["group_lasso"],
                lam_dirty1=lam["dirty_model"], lam_dirty_inf=lam["dirty_inf"],
            ))

    n_workers = resolve_workers(workers)
    outcomes: dict[tuple[int, int], dict] = {}
    if n_workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            chunk = max(1, len(jobs) // (n_workers * 8))
            for gi, ri, out in pool.map(_run_rep, jobs, chunksize=chunk):
                outcomes[(gi, ri)] = out
    else:
        for job in jobs:
            gi, ri, out = _run_rep(job)
            outcomes[(gi, ri)] = out

    records = []
    for pt in grid:
        for m in methods:
            reps_out = [outcomes[(pt.index, r)][m] for r in range(spec.reps)]
            successes = sum(o.exact for o in reps_out)
            if m == "meta":
                last = None
            else:
                last = sum(bool(o.exact_last) for o in reps_out)
            records.append(make_phase_record(
                method=m,
                point=pt,
                lam=lambdas[pt.index][m],
                reps=spec.reps,
                successes=successes,
                last_successes=last,
                errors=[o.error for o in reps_out],
                master_seed=spec.master_seed,
            ))
    return records


def run_phase(spec: ExperimentSpec, workers: Optional[int] = None) -> list[PhaseRecord]:
    """Sweep one method over the grid; reps repetitions per point.

    Repetition failures (solver non-convergence, generation errors) count
    as non-recovery and are logged; they never abort the sweep.
    """
    return _execute(spec, (spec.method,), workers)


def run_compare(spec: ExperimentSpec, workers: Optional[int] = None) -> list[PhaseRecord]:
    """Sweep all three methods over the grid on shared per-rep datasets."""
    return _execute(spec, METHODS, workers)


# ---------------------------------------------------------------------------
# CSV output
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return f"{x:.6g}"
    return str(x)


def write_csv(records: Sequence[PhaseRecord], path) -> None:
    """UTF-8, LF endings, fixed header, reals at 6 significant digits.

    Equal record sequences produce byte-identical files.
    """
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(CSV_HEADER + "\n")
        for r in records:
            f.write(",".join([
                r.method, str(r.p), str(r.k), str(r.l), str(r.T),
                _fmt(r.C), _fmt(r.lam), str(r.reps),
                _fmt(r.p_exact), _fmt(r.p_std), _fmt(r.err_mean), _fmt(r.err_std),
                _fmt(r.p_exact_last_task), str(r.master_seed),
            ]) + "\n")


def read_csv(path) -> list[PhaseRecord]:
    """Inverse of write_csv, up to the 6-digit formatting precision."""
    records = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        header = f.readline().strip()
        if header != CSV_HEADER:
            raise ValueError(f"unexpected header in {path}: {header!r}")
        for line in f:
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 14:
                raise ValueError(f"malformed row in {path}: {line!r}")
            records.append(PhaseRecord(
                method=parts[0],
                p=int(parts[1]), k=int(parts[2]), l=int(parts[3]), T=int(parts[4]),
                C=float(parts[5]), lam=float(parts[6]), reps=int(parts[7]),
                p_exact=float(parts[8]), p_std=float(parts[9]),
                err_mean=float(parts[10]), err_std=float(parts[11]),
                p_exact_last_task=float(parts[12]) if parts[12] else None,
                master_seed=int(parts[13]),
            ))
    return records
