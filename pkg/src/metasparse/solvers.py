"""Regularized least-squares solvers with KKT verification.

  * lasso            -- (1/2n)||y - Xw||^2 + lam ||w||_1, cyclic coordinate
                        descent with exact scalar updates
  * restricted_lasso -- same objective constrained to Supp(w) within a set
  * ols_refit        -- least squares on a fixed support
  * group_lasso      -- multi-task l1,2 row penalty, monotone FISTA
  * dirty_model      -- shared + individual split with l1,inf row penalty on
                        the shared part and l1 on the individual part

A converged result always certifies its own optimality: the reported
kkt_residual is the maximum stationarity violation, and converged is set
only when it is within kkt_tol.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .model import SolverResult, SupportSet, TaskData, extract_support


@dataclass(frozen=True)
class SolverOptions:
    """max_iter caps sweeps (coordinate descent) or iterations (proximal);
    tol is the max coordinate change per sweep, or the relative objective
    change for proximal methods; kkt_tol bounds the certified residual."""

    max_iter: int = 100_000
    tol: float = 1e-8
    kkt_tol: float = 1e-6

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.kkt_tol <= 0:
            raise ValueError("kkt_tol must be positive")


DEFAULT_OPTIONS = SolverOptions()


def soft_threshold(z, tau):
    """sign(z) * max(|z| - tau, 0); works elementwise on arrays."""
    if np.any(np.asarray(tau) < 0):
        raise ValueError("tau must be nonnegative")
    return np.sign(z) * np.maximum(np.abs(z) - tau, 0.0)


def _check_finite(X: np.ndarray, y: np.ndarray) -> None:
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ValueError("inputs must be finite (no NaN/Inf)")


def _kkt_from_grad(grad: np.ndarray, w: np.ndarray, lam: float) -> float:
    """Max stationarity violation given grad = (1/n) X^T (Xw - y)."""
    if grad.size == 0:
        return 0.0
    if lam == 0:
        return float(np.abs(grad).max())
    nz = w != 0
    viol = np.maximum(np.abs(grad) - lam, 0.0)
    viol[nz] = np.abs(grad[nz] + lam * np.sign(w[nz]))
    return float(viol.max())


def kkt_residual(X, y, lam: float, w) -> float:
    """Stationarity violation of w for the lasso objective.

    For lam = 0 this is simply the least-squares gradient sup-norm.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    n = X.shape[0]
    grad = X.T @ (X @ w - y) / n
    return _kkt_from_grad(grad, w, lam)


def lasso_dual(X, y, lam: float, w) -> np.ndarray:
    """Dual vector z_hat = -(1/(n lam)) X^T (Xw - y).

    At an optimum, z_hat[j] = sign(w[j]) on the active set and
    |z_hat[j]| <= 1 elsewhere; strict inequality off the true support
    certifies the support recovery.
    """
    if lam <= 0:
        raise ValueError("dual vector requires lam > 0")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = X.shape[0]
    return -(X.T @ (X @ np.asarray(w, dtype=float) - y)) / (n * lam)


def _cd_sweep(w, grad, gram, diag, lam, index_set) -> float:
    """One pass of exact coordinate minimization; returns max |change|."""
    max_delta = 0.0
    for j in index_set:
        dj = diag[j]
        if dj <= 0.0:
            # identically-zero column: coefficient is irrelevant, pin to 0
            new = 0.0
        else:
            rho = dj * w[j] - grad[j]
            new = soft_threshold(rho, lam) / dj
        change = new - w[j]
        if change != 0.0:
            grad += gram[:, j] * change
            w[j] = new
            max_delta = max(max_delta, abs(change))
    return max_delta


def lasso(X, y, lam: float, opts: Optional[SolverOptions] = None, w0=None) -> SolverResult:
    """Solve min_w (1/2n)||y - Xw||^2 + lam ||w||_1 by coordinate descent.

    Cyclic sweeps with exact single-coordinate minimization on the Gram
    matrix, alternating full sweeps with sweeps over the active set.
    Convergence requires both a full sweep whose largest coordinate change
    is below tol and a KKT residual within kkt_tol; failure to reach that
    inside max_iter sweeps is reported via converged=False, never raised.
    """
    opts = opts or DEFAULT_OPTIONS
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError(f"shape mismatch: X {X.shape}, y {y.shape}")
    if X.shape[0] < 1:
        raise ValueError("need at least one sample")
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    _check_finite(X, y)

    n, p = X.shape
    if p == 0:
        return _result(np.zeros(0), iterations=0, converged=True, residual=0.0)

    gram = X.T @ X / n
    corr = X.T @ y / n
    diag = np.diag(gram).copy()

    if w0 is None:
        w = np.zeros(p)
    else:
        w = np.array(w0, dtype=float, copy=True)
        if w.shape != (p,):
            raise ValueError(f"w0 must have shape ({p},)")

    sweeps = 0
    converged = False
    residual = math.inf
    all_idx = range(p)
    grad = gram @ w - corr
    while sweeps < opts.max_iter:
        sweeps += 1
        max_delta = _cd_sweep(w, grad, gram, diag, lam, all_idx)
        grad = gram @ w - corr  # refresh: kills incremental drift
        residual = _kkt_from_grad(grad, w, lam)
        if residual <= opts.kkt_tol and max_delta < opts.tol:
            converged = True
            break
        if max_delta == 0.0:
            break  # fixed point of the sweep; no further progress possible
        active = np.flatnonzero(w)
        while sweeps < opts.max_iter and active.size:
            sweeps += 1
            if _cd_sweep(w, grad, gram, diag, lam, active) < opts.tol:
                break

    return _result(w, iterations=sweeps, converged=converged, residual=residual)


def _result(w: np.ndarray, iterations: int, converged: bool, residual: float) -> SolverResult:
    return SolverResult(
        weights=w,
        support=extract_support(w),
        iterations=iterations,
        converged=converged,
        kkt_residual=float(residual),
    )


def restricted_lasso(
    X, y, lam: float, support: SupportSet, opts: Optional[SolverOptions] = None
) -> SolverResult:
    """Lasso over {w : Supp(w) within support}; off-support entries are
    exactly zero. An empty support returns the zero vector, converged."""
    X = np.asarray(X, dtype=float)
    p = X.shape[1]
    idx = support.as_array()
    if idx.size and idx[-1] >= p:
        raise ValueError(f"support index {idx[-1]} out of range for p={p}")
    if idx.size == 0:
        return _result(np.zeros(p), iterations=0, converged=True, residual=0.0)
    sub = lasso(X[:, idx], y, lam, opts)
    w = np.zeros(p)
    w[idx] = sub.weights
    return _result(w, sub.iterations, sub.converged, sub.kkt_residual)


def ols_refit(X, y, support: SupportSet) -> np.ndarray:
    """Least-squares fit on the support columns, zero elsewhere.

    Raises if the restricted design is rank deficient (including the
    |support| > n case), since the refit is then not identified.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_finite(X, y)
    p = X.shape[1]
    w = np.zeros(p)
    idx = support.as_array()
    if idx.size == 0:
        return w
    if idx[-1] >= p:
        raise ValueError(f"support index {idx[-1]} out of range for p={p}")
    sol, _, rank, _ = np.linalg.lstsq(X[:, idx], y, rcond=None)
    if rank < idx.size:
        raise ValueError(
            f"restricted design is singular: rank {rank} < support size {idx.size}"
        )
    w[idx] = sol
    return w


# ---------------------------------------------------------------------------
# prox operators
# ---------------------------------------------------------------------------

def project_l1_ball(v, radius: float) -> np.ndarray:
    """Euclidean projection of v onto {x : ||x||_1 <= radius}, exact
    (sort-based)."""
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    v = np.asarray(v, dtype=float)
    out = _project_l1_rows(v[None, :], radius)
    return out[0]


def _project_l1_rows(V: np.ndarray, radius: float) -> np.ndarray:
    """Row-wise l1-ball projection of a matrix, vectorized over rows."""
    if radius == 0:
        return np.zeros_like(V)
    A = np.abs(V)
    out = V.copy()
    over = A.sum(axis=1) > radius
    if not over.any():
        return out
    U = np.sort(A[over], axis=1)[:, ::-1]
    css = np.cumsum(U, axis=1)
    counts = np.arange(1, U.shape[1] + 1)
    # largest prefix where the sorted entry still exceeds the running shift
    rho = np.count_nonzero(U * counts > css - radius, axis=1)
    theta = (css[np.arange(U.shape[0]), rho - 1] - radius) / rho
    out[over] = np.sign(V[over]) * np.maximum(A[over] - theta[:, None], 0.0)
    return out


def prox_linf_row(v, tau: float) -> np.ndarray:
    """prox of tau * ||.||_inf via Moreau: v minus its projection onto the
    l1 ball of radius tau."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    v = np.asarray(v, dtype=float)
    return v - project_l1_ball(v, tau)


# ---------------------------------------------------------------------------
# multi-task solvers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MultiTaskResult:
    """Per-task coefficient matrix W (p x T, column t = task t).

    The dirty model also carries the shared part B and individual part
    S_mat with W = B + S_mat. objective_trace is non-increasing.
    """

    W: np.ndarray
    objective_trace: tuple[float, ...]
    iterations: int
    converged: bool
    kkt_residual: float
    B: Optional[np.ndarray] = None
    S_mat: Optional[np.ndarray] = None


class _TaskStack:
    """Shared-shape view of a task list for batched gradient/loss evals."""

    def __init__(self, tasks: Sequence[TaskData]):
        if not tasks:
            raise ValueError("need at least one task")
        p = tasks[0].n_features
        if any(t.n_features != p for t in tasks):
            raise ValueError("all tasks must share the same column count")
        self.p = p
        self.T = len(tasks)
        self.same_l = len({t.n_samples for t in tasks}) == 1
        if self.same_l:
            self.X = np.stack([t.X for t in tasks])          # (T, l, p)
            self.Xt = self.X.transpose(0, 2, 1).copy()       # (T, p, l)
            self.y = np.stack([t.y for t in tasks])          # (T, l)
            self.l = tasks[0].n_samples
        else:
            self.Xs = [np.asarray(t.X) for t in tasks]
            self.ys = [np.asarray(t.y) for t in tasks]
            self.ls = [t.n_samples for t in tasks]

    def residuals(self, W: np.ndarray):
        if self.same_l:
            return (self.X @ W.T[:, :, None])[:, :, 0] - self.y
        return [x @ W[:, t] - y for t, (x, y) in enumerate(zip(self.Xs, self.ys))]

    def loss(self, W: np.ndarray) -> float:
        r = self.residuals(W)
        if self.same_l:
            return float((r**2).sum()) / (2 * self.l)
        return sum(float(rt @ rt) / (2 * lt) for rt, lt in zip(r, self.ls))

    def grad(self, W: np.ndarray) -> np.ndarray:
        r = self.residuals(W)
        if self.same_l:
            return (self.Xt @ r[:, :, None])[:, :, 0].T / self.l
        g = np.empty((self.p, self.T))
        for t, (x, lt) in enumerate(zip(self.Xs, self.ls)):
            g[:, t] = x.T @ r[t] / lt
        return g

    def lipschitz(self) -> float:
        """Spectral norm of the block-diagonal smooth Hessian, by power
        iteration per task block (20 steps, 1e-6 relative tolerance)."""
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(0)))
        V = rng.standard_normal((self.p, self.T))
        V /= np.linalg.norm(V, axis=0, keepdims=True)
        lams = np.zeros(self.T)
        for _ in range(20):
            if self.same_l:
                W = (self.Xt @ ((self.X @ V.T[:, :, None]))).squeeze(-1).T / self.l
            else:
                W = np.empty_like(V)
                for t, (x, lt) in enumerate(zip(self.Xs, self.ls)):
                    W[:, t] = x.T @ (x @ V[:, t]) / lt
            new = np.linalg.norm(W, axis=0)
            if np.allclose(new, lams, rtol=1e-6, atol=0.0):
                lams = new
                break
            lams = new
            V = W / np.where(new > 0, new, 1.0)
        return float(lams.max())


def _group_penalty(W: np.ndarray, lam: float) -> float:
    return lam * float(np.linalg.norm(W, axis=1).sum())


def _group_prox(W: np.ndarray, tau: float) -> np.ndarray:
    norms = np.linalg.norm(W, axis=1, keepdims=True)
    scale = np.where(norms > tau, 1.0 - tau / np.where(norms > 0, norms, 1.0), 0.0)
    return W * scale


def _group_kkt(grad: np.ndarray, W: np.ndarray, lam: float) -> float:
    """Block stationarity violation: active rows need grad + lam W/||W|| = 0,
    zero rows need row gradient norm <= lam."""
    active = np.any(W != 0, axis=1)
    res = 0.0
    if active.any():
        norms = np.linalg.norm(W[active], axis=1, keepdims=True)
        res = float(np.abs(grad[active] + lam * W[active] / norms).max())
    if (~active).any():
        znorm = np.linalg.norm(grad[~active], axis=1)
        res = max(res, float(np.maximum(znorm - lam, 0.0).max()))
    return res


def _mfista(state0, grad_fn, loss_fn, penalty_fn, prox_fn, kkt_fn, step, opts,
            check_every: int = 25):
    """Monotone FISTA: the reported iterate sequence never increases the
    objective. Declares convergence only when kkt_fn certifies the iterate."""
    x_prev = state0
    y = state0
    f_prev = loss_fn(state0) + penalty_fn(state0)
    t = 1.0
    trace = [f_prev]
    converged = False
    residual = math.inf
    stall = 0
    it = 0
    while it < opts.max_iter:
        it += 1
        z = prox_fn(y - step * grad_fn(y), step)
        f_z = loss_fn(z) + penalty_fn(z)
        if f_z <= f_prev:
            x, f_x = z, f_z
            stall = 0
        else:
            x, f_x = x_prev, f_prev
            stall += 1
        trace.append(f_x)
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        y = x + (t / t_new) * (z - x) + ((t - 1.0) / t_new) * (x - x_prev)
        small_change = abs(f_prev - f_x) <= opts.tol * max(1.0, abs(f_x))
        x_prev, f_prev, t = x, f_x, t_new
        if small_change or it % check_every == 0 or it == opts.max_iter:
            residual = kkt_fn(x)
            if residual <= opts.kkt_tol:
                converged = True
                break
            if stall > 200:
                break  # momentum exhausted without certifiable progress
    if math.isinf(residual):
        residual = kkt_fn(x_prev)
        converged = residual <= opts.kkt_tol
    return x_prev, tuple(trace), it, converged, residual


def group_lasso(
    tasks: Sequence[TaskData], lambda12: float, opts: Optional[SolverOptions] = None
) -> MultiTaskResult:
    """Multi-task l1,2 solver:

        min_W  sum_t (1/2 l_t) ||y_t - X_t W[:, t]||^2 + lambda12 * sum_j ||W[j, :]||_2

    Monotone accelerated proximal gradient with step 1/L, L from power
    iteration on the pooled design.
    """
    if lambda12 < 0:
        raise ValueError("lambda12 must be nonnegative")
    opts = opts or DEFAULT_OPTIONS
    stack = _TaskStack(tasks)
    L = stack.lipschitz()
    step = 1.0 / (1.05 * L) if L > 0 else 1.0  # headroom: power iteration underestimates

    W, trace, iters, converged, residual = _mfista(
        state0=np.zeros((stack.p, stack.T)),
        grad_fn=stack.grad,
        loss_fn=stack.loss,
        penalty_fn=lambda W: _group_penalty(W, lambda12),
        prox_fn=lambda V, s: _group_prox(V, s * lambda12),
        kkt_fn=lambda W: _group_kkt(stack.grad(W), W, lambda12),
        step=step,
        opts=opts,
    )
    return MultiTaskResult(
        W=W, objective_trace=trace, iterations=iters,
        converged=converged, kkt_residual=residual,
    )


def dirty_model(
    tasks: Sequence[TaskData],
    lambda1: float,
    lambda1inf: float,
    opts: Optional[SolverOptions] = None,
) -> MultiTaskResult:
    """Shared/individual decomposition W = B + S:

        min_{B,S} sum_t (1/2 l_t) ||y_t - X_t (B + S)[:, t]||^2
                  + lambda1inf * sum_j ||B[j, :]||_inf + lambda1 * ||S||_1

    Proximal gradient on the joint (B, S) variable with the separable prox
    (row l_inf prox on B, soft threshold on S). Stationarity is measured by
    the gradient-mapping residual of the joint step.
    """
    if lambda1 < 0 or lambda1inf < 0:
        raise ValueError("penalties must be nonnegative")
    opts = opts or DEFAULT_OPTIONS
    stack = _TaskStack(tasks)
    p, T = stack.p, stack.T
    L = 2.0 * stack.lipschitz()  # joint Hessian [[H,H],[H,H]] doubles the norm
    step = 1.0 / (1.05 * L) if L > 0 else 1.0

    def split(state):
        return state[:p], state[p:]

    def loss_fn(state):
        b, s = split(state)
        return stack.loss(b + s)

    def grad_fn(state):
        b, s = split(state)
        g = stack.grad(b + s)
        return np.vstack([g, g])

    def penalty_fn(state):
        b, s = split(state)
        return lambda1inf * float(np.abs(b).max(axis=1, initial=0.0).sum()) \
            + lambda1 * float(np.abs(s).sum())

    def prox_fn(state, s_step):
        b, s = split(state)
        b_new = b - _project_l1_rows(b, s_step * lambda1inf)
        s_new = soft_threshold(s, s_step * lambda1)
        return np.vstack([b_new, s_new])

    def kkt_fn(state):
        moved = prox_fn(state - step * grad_fn(state), step)
        return float(np.abs(state - moved).max(initial=0.0)) / step

    state, trace, iters, converged, residual = _mfista(
        state0=np.zeros((2 * p, T)),
        grad_fn=grad_fn,
        loss_fn=loss_fn,
        penalty_fn=penalty_fn,
        prox_fn=prox_fn,
        kkt_fn=kkt_fn,
        step=step,
        opts=opts,
    )
    B, S_mat = state[:p].copy(), state[p:].copy()
    return MultiTaskResult(
        W=B + S_mat, objective_trace=trace, iterations=iters,
        converged=converged, kkt_residual=residual, B=B, S_mat=S_mat,
    )
