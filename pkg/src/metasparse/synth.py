"""Seeded synthetic data generation and exact mutual-incoherence computation.

The generative model: for task i with individual deviation d_i drawn from a
zero-mean sub-Gaussian law, each sample j satisfies

    y[i, j] = x[i, j] . (w_star + d_i) + eps[i, j].

All randomness flows through counter-based Philox streams derived from a
single 64-bit seed, one substream per task, so datasets are bit-identical
across runs and tasks can be generated concurrently.

Covariate settings:
  * "iid"                  -- independent Gaussian entries, std sigma_x
  * "uniform"              -- independent Uniform(-sigma_x*sqrt(3), +) entries
  * "fixed_covariance"     -- rows ~ N(0, Sigma), one Sigma = (U0+U1)^T(U0+U1)
                              shared by all tasks; U0 random orthonormal, U1
                              with i.i.d. Uniform(-a, a) entries
  * "per_task_covariance"  -- same construction, fresh Sigma per task
  * "delta_dependent"      -- per-task Sigma with U1 = a * d_i d_i^T and rows
                              ~ N(d_i, Sigma)
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from .model import GroundTruth, MetaDataset, SupportSet, TaskData, extract_support

DELTA_KINDS = ("gaussian", "uniform", "dirac_mixture")
NOISE_KINDS = ("gaussian", "uniform")
X_KINDS = ("iid", "uniform", "fixed_covariance", "per_task_covariance", "delta_dependent")

_MAX_SEED = 2**64


def substream(seed: int, *key: int) -> np.random.Generator:
    """Independent Philox stream derived from (seed, key...).

    Streams with distinct keys are statistically independent and stable
    across platforms, which is what makes per-task parallel generation and
    per-repetition experiment seeding deterministic.
    """
    seq = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(seq))


def derive_seed(seed: int, *key: int) -> int:
    """Collapse (seed, key...) into a fresh 64-bit seed."""
    seq = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class XKind:
    """Covariate setting: one of X_KINDS plus the perturbation scale a."""

    kind: str
    a: float = 0.0

    def __post_init__(self):
        if self.kind not in X_KINDS:
            raise ValueError(f"unknown x_kind {self.kind!r}, expected one of {X_KINDS}")
        if self.a < 0:
            raise ValueError(f"perturbation scale a must be nonnegative, got {self.a}")

    def to_json(self):
        if self.kind in ("iid", "uniform"):
            return self.kind
        return {"kind": self.kind, "a": self.a}

    @classmethod
    def from_json(cls, obj) -> "XKind":
        if isinstance(obj, str):
            return cls(obj)
        if isinstance(obj, dict):
            extra = set(obj) - {"kind", "a"}
            if extra:
                raise ValueError(f"unknown x_kind keys: {sorted(extra)}")
            if "kind" not in obj:
                raise ValueError("x_kind object requires a 'kind' entry")
            return cls(obj["kind"], float(obj.get("a", 0.0)))
        raise ValueError(f"x_kind must be a string or object, got {type(obj).__name__}")


_GENCONFIG_KEYS = (
    "p", "k", "l", "T", "sigma_eps", "sigma_delta", "sigma_x",
    "amplitude", "delta_kind", "noise_kind", "x_kind", "seed",
)


@dataclass(frozen=True)
class GenConfig:
    """All generative knobs for one synthetic dataset."""

    p: int
    k: int
    l: int
    T: int
    sigma_eps: float = 0.1
    sigma_delta: float = 0.2
    sigma_x: float = 1.0
    amplitude: float = 1.0
    delta_kind: str = "gaussian"
    noise_kind: str = "gaussian"
    x_kind: XKind = field(default_factory=lambda: XKind("iid"))
    seed: int = 0

    def __post_init__(self):
        if not (0 < self.k <= self.p):
            raise ValueError(f"need 0 < k <= p, got k={self.k}, p={self.p}")
        if self.l < 1:
            raise ValueError(f"need l >= 1, got {self.l}")
        if self.T < 1:
            raise ValueError(f"need T >= 1, got {self.T}")
        for name in ("sigma_eps", "sigma_delta", "sigma_x"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.delta_kind not in DELTA_KINDS:
            raise ValueError(f"unknown delta_kind {self.delta_kind!r}")
        if self.noise_kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise_kind {self.noise_kind!r}")
        if isinstance(self.x_kind, str):
            object.__setattr__(self, "x_kind", XKind(self.x_kind))
        if not (0 <= self.seed < _MAX_SEED):
            raise ValueError("seed must fit in an unsigned 64-bit integer")

    def to_json_dict(self) -> dict:
        d = asdict(self)
        d["x_kind"] = self.x_kind.to_json()
        return d

    @classmethod
    def from_json_dict(cls, obj: dict) -> "GenConfig":
        if not isinstance(obj, dict):
            raise ValueError("GenConfig document must be a JSON object")
        extra = set(obj) - set(_GENCONFIG_KEYS)
        if extra:
            raise ValueError(f"unknown GenConfig keys: {sorted(extra)}")
        missing = {"p", "k", "l", "T"} - set(obj)
        if missing:
            raise ValueError(f"missing GenConfig keys: {sorted(missing)}")
        kwargs = dict(obj)
        if "x_kind" in kwargs:
            kwargs["x_kind"] = XKind.from_json(kwargs["x_kind"])
        return cls(**kwargs)

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "GenConfig":
        return cls.from_json_dict(json.loads(text))


@dataclass(frozen=True)
class CovarianceSpec:
    """Symmetric positive-definite second-moment matrix of the covariates."""

    sigma: np.ndarray

    def __post_init__(self):
        s = np.array(self.sigma, dtype=float, copy=True)
        if s.ndim != 2 or s.shape[0] != s.shape[1]:
            raise ValueError(f"covariance must be square, got shape {s.shape}")
        if np.abs(s - s.T).max(initial=0.0) > 1e-12:
            raise ValueError("covariance is not symmetric within 1e-12")
        if np.linalg.eigvalsh(s).min() <= 0:
            raise ValueError("covariance is not positive definite")
        s.setflags(write=False)
        object.__setattr__(self, "sigma", s)

    @property
    def p(self) -> int:
        return self.sigma.shape[0]


def make_true_weights(p: int, k: int, amplitude: float) -> np.ndarray:
    """Shared weight vector: first k entries equal to amplitude, rest zero.

    All generative laws are exchangeable over coordinates, so placing the
    support on the first k coordinates loses no generality.
    """
    if not (0 < k <= p):
        raise ValueError(f"need 0 < k <= p, got k={k}, p={p}")
    w = np.zeros(p)
    w[:k] = amplitude
    return w


def sample_delta(
    kind: str,
    support: SupportSet,
    sigma_delta: float,
    w_star: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """Draw one task deviation, zero off the common support.

    On-support entries are mutually independent:
      gaussian       N(0, sigma_delta^2)
      uniform        Uniform(-sigma_delta*sqrt(3), +), matching std sigma_delta
      dirac_mixture  with prob 1/2 exactly -w_star[m] (cancelling the entry),
                     otherwise N(0, sigma_delta^2)
    """
    if sigma_delta < 0:
        raise ValueError("sigma_delta must be nonnegative")
    w_star = np.asarray(w_star, dtype=float)
    delta = np.zeros_like(w_star)
    idx = support.as_array()
    if idx.size == 0:
        return delta
    if kind == "gaussian":
        delta[idx] = rng.normal(0.0, sigma_delta, idx.size)
    elif kind == "uniform":
        half = sigma_delta * math.sqrt(3.0)
        delta[idx] = rng.uniform(-half, half, idx.size)
    elif kind == "dirac_mixture":
        cancel = rng.random(idx.size) < 0.5
        gauss = rng.normal(0.0, sigma_delta, idx.size)
        delta[idx] = np.where(cancel, -w_star[idx], gauss)
    else:
        raise ValueError(f"unknown delta_kind {kind!r}")
    return delta


def random_orthonormal(p: int, rng: np.random.Generator) -> np.ndarray:
    """Random p x p orthonormal matrix with a deterministic sign convention.

    QR of a standard-Gaussian matrix; each column is flipped so its first
    nonzero element is positive, making the result reproducible across
    linear-algebra backends.
    """
    if p < 1:
        raise ValueError(f"need p >= 1, got {p}")
    q, _ = np.linalg.qr(rng.standard_normal((p, p)))
    for j in range(p):
        nz = np.flatnonzero(q[:, j])
        if nz.size and q[nz[0], j] < 0:
            q[:, j] = -q[:, j]
    return q


def build_covariance(
    setting: XKind,
    p: int,
    sigma_x: float = 1.0,
    delta: Optional[np.ndarray] = None,
    rng: Optional[np.random.Generator] = None,
) -> CovarianceSpec:
    """Covariate second-moment matrix for the given setting.

    iid/uniform settings have independent entries, so Sigma = sigma_x^2 * I.
    The perturbed settings return Sigma = A^T A with A = U0 + U1 (U0 drawn
    first, then U1).
    """
    if setting.kind in ("iid", "uniform"):
        return CovarianceSpec(sigma_x**2 * np.eye(p))
    if rng is None:
        raise ValueError(f"x_kind {setting.kind!r} requires an rng")
    u0 = random_orthonormal(p, rng)
    if setting.kind == "delta_dependent":
        if delta is None:
            raise ValueError("delta_dependent covariance requires the task delta")
        u1 = setting.a * np.outer(delta, delta)
    else:
        u1 = rng.uniform(-setting.a, setting.a, (p, p))
    a_mat = u0 + u1
    return CovarianceSpec(a_mat.T @ a_mat)


def mutual_incoherence(sigma: CovarianceSpec, support: SupportSet) -> float:
    """gamma = 1 - max row l1-norm of Sigma[S^c, S] Sigma[S, S]^{-1}.

    gamma in (0, 1] is the identifiability condition for l1 support
    recovery; the value may be <= 0 when incoherence fails.
    """
    p = sigma.p
    idx = support.as_array()
    if idx.size and idx[-1] >= p:
        raise ValueError("support index out of range for this covariance")
    comp = np.setdiff1d(np.arange(p), idx)
    if idx.size == 0 or comp.size == 0:
        return 1.0
    s_ss = sigma.sigma[np.ix_(idx, idx)]
    s_s_comp = sigma.sigma[np.ix_(idx, comp)]
    try:
        solved = np.linalg.solve(s_ss, s_s_comp)
    except np.linalg.LinAlgError as exc:
        raise ValueError("on-support covariance block is singular") from exc
    # Sigma is symmetric, so Sigma[S^c,S] Sigma[S,S]^{-1} = solved.T
    return 1.0 - float(np.abs(solved.T).sum(axis=1).max())


def _draw_x(
    config: GenConfig,
    l: int,
    delta: np.ndarray,
    chol_fixed: Optional[np.ndarray],
    rng: np.random.Generator,
) -> np.ndarray:
    kind = config.x_kind.kind
    if kind == "iid":
        return rng.normal(0.0, config.sigma_x, (l, config.p))
    if kind == "uniform":
        half = config.sigma_x * math.sqrt(3.0)
        return rng.uniform(-half, half, (l, config.p))
    if kind == "fixed_covariance":
        return rng.standard_normal((l, config.p)) @ chol_fixed.T
    cov = build_covariance(config.x_kind, config.p, config.sigma_x, delta, rng)
    chol = np.linalg.cholesky(cov.sigma)
    rows = rng.standard_normal((l, config.p)) @ chol.T
    if kind == "delta_dependent":
        rows = rows + delta
    return rows


def _draw_noise(config: GenConfig, l: int, rng: np.random.Generator) -> np.ndarray:
    if config.noise_kind == "gaussian":
        return rng.normal(0.0, config.sigma_eps, l)
    half = config.sigma_eps * math.sqrt(3.0)
    return rng.uniform(-half, half, l)


def generate(config: GenConfig, w_star: np.ndarray) -> tuple[MetaDataset, GroundTruth]:
    """Generate T prior tasks plus one novel task from the model.

    Each task draws, in order: its deviation, its covariance (perturbed
    settings only), its covariate rows, then its noise, all from the task's
    own substream(seed, task_index). The shared covariance of the
    fixed_covariance setting comes from substream(seed, T+1). Equal
    (config, w_star) therefore yield bit-identical datasets.
    """
    w_star = np.asarray(w_star, dtype=float)
    if w_star.shape != (config.p,):
        raise ValueError(f"w_star must have length p={config.p}")
    support = extract_support(w_star, 0.0)
    if len(support) != config.k:
        raise ValueError(f"w_star has {len(support)} nonzeros, config expects k={config.k}")

    chol_fixed = None
    if config.x_kind.kind == "fixed_covariance":
        cov_rng = substream(config.seed, config.T + 1)
        cov = build_covariance(config.x_kind, config.p, config.sigma_x, None, cov_rng)
        chol_fixed = np.linalg.cholesky(cov.sigma)

    tasks = []
    deltas = []
    for i in range(config.T + 1):
        rng = substream(config.seed, i)
        delta = sample_delta(config.delta_kind, support, config.sigma_delta, w_star, rng)
        x = _draw_x(config, config.l, delta, chol_fixed, rng)
        eps = _draw_noise(config, config.l, rng)
        y = x @ (w_star + delta) + eps
        tasks.append(TaskData(task_id=i, X=x, y=y))
        deltas.append(delta)

    dataset = MetaDataset(prior_tasks=tuple(tasks[:-1]), novel_task=tasks[-1], p=config.p)
    truth = GroundTruth.from_weights(w_star, deltas)
    return dataset, truth
