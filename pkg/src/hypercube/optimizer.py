"""Penalty-method search for the minimum of ``H`` on the feasible set ``T = delta``.

Loss at penalty weight ``mu``::

    L = H(theta) + mu * sum_{a,b,c} |T_abc - delta_abc|^2

over all ``n^3`` entries, zeros included.

Gradients use the real-coordinate convention: for a complex parameter ``z``
the gradient is ``dL/dRe(z) + 1j * dL/dIm(z)`` (twice the Wirtinger
derivative with respect to ``conj(z)``). A step ``z -= lr * g`` is plain
gradient descent on the real and imaginary parts.

Update rule (fixed so runs reproduce bit-for-bit on one machine). For phase
``k`` with weight ``mu_k`` and ``S_k`` steps, moments are reset to zero and
for step ``s = 0..S_k-1``, with ``j`` the number of accepted steps so far
plus one and ``d`` the restart's step multiplier (see below)::

    lr_s = step_size * (mu_0 / mu_k) ** step_decay
           * (lr_floor + (1 - lr_floor) * (1 + cos(pi * s / S_k)) / 2)
    m = b1 * m + (1 - b1) * g                      # complex, componentwise
    v = b2 * v + (1 - b2) * (g.re^2 + 1j * g.im^2)  # re/im second moments
    m_hat = m / (1 - b1^j);  v_hat = v / (1 - b2^j)
    z -= d * lr_s * (m_hat.re / (sqrt(v_hat.re) + eps) + 1j * m_hat.im / (sqrt(v_hat.im) + eps))

Steps are accepted only if they do not raise the loss by more than
``MONOTONE_SLACK`` (relative, floor 1). A rejected step restores that
restart's parameters and moments and halves its step multiplier; each
accepted step grows the multiplier by ``DAMP_RECOVERY`` up to 1. The bias
corrections count accepted steps. The loss is therefore non-increasing
within a phase.

A phase ends early once every restart's loss changed by less than
``conv_rtol`` (relative) over the last ``window`` steps. After the schedule,
each restart is polished with L-BFGS at the final ``mu``; first-order steps
alone drift for a long time along the flat directions that non-group
tables leave behind.

A run is *converged* when ``max |T - delta| <= feas_tol`` and the loss
changed by less than ``conv_rtol`` (relative) over the trailing ``window``
iterations. With polishing on, L-BFGS is restarted from its own result
(fresh curvature memory, at most ``POLISH_ROUNDS`` times) until one round
moves the loss by less than ``conv_rtol``; the window is that last round,
starting value included. A first round that closes the remaining gap left
by Adam therefore does not count against convergence, but a point that
keeps descending does.
"""

from __future__ import annotations

import hashlib
import json
import logging
from collections import deque
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import minimize as scipy_minimize

from .algebra import CayleyTable, cayley_tensor
from .model import (
    DegenerateSlice,
    FactorSet,
    base_term_B,
    contract,
    misalignment_R,
    objective_H,
)

log = logging.getLogger(__name__)

ALGORITHM_REVISION = 2  # bump when the update rule changes results
POLISH_ROUNDS = 4
MONOTONE_SLACK = 1e-12
DAMP_RECOVERY = 1.25
DEFAULT_SCHEDULE = ((10.0, 3000), (100.0, 3000), (1000.0, 3000), (10000.0, 3000))


@dataclass(frozen=True)
class OptConfig:
    restarts: int = 8
    max_steps: int = 50_000
    step_size: float = 1e-2
    penalty_schedule: tuple[tuple[float, int], ...] = DEFAULT_SCHEDULE
    feas_tol: float = 1e-3
    seed: int = 0
    tied: bool = False
    init_scale: float | None = None  # None -> 1/sqrt(n)
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    step_decay: float = 0.25
    lr_floor: float = 0.01
    window: int = 500
    conv_rtol: float = 1e-9
    polish: bool = True
    polish_maxiter: int = 20_000
    trace_every: int = 100

    def __post_init__(self):
        sched = tuple((float(mu), int(steps)) for mu, steps in self.penalty_schedule)
        object.__setattr__(self, "penalty_schedule", sched)
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        if not sched:
            raise ValueError("penalty_schedule must not be empty")
        mus = [mu for mu, _ in sched]
        if any(mu <= 0 for mu in mus) or any(b <= a for a, b in zip(mus, mus[1:])):
            raise ValueError("penalty weights must be positive and strictly increasing")
        if any(steps < 1 for _, steps in sched):
            raise ValueError("every phase needs at least one step")
        if self.restarts < 1 or self.max_steps < 1:
            raise ValueError("restarts and max_steps must be positive")
        if min(self.step_size, self.feas_tol, self.eps, self.conv_rtol) <= 0:
            raise ValueError("step size and tolerances must be positive")
        if self.init_scale is not None and self.init_scale <= 0:
            raise ValueError("init_scale must be positive")
        if self.window < 1 or self.trace_every < 1:
            raise ValueError("window and trace_every must be positive")

    def scale_for(self, n: int) -> float:
        return 1.0 / np.sqrt(n) if self.init_scale is None else float(self.init_scale)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["penalty_schedule"] = [list(p) for p in self.penalty_schedule]
        d["betas"] = list(self.betas)
        return d

    def fingerprint(self) -> str:
        """Hash of every setting that can change results (seed excluded)."""
        d = self.to_dict()
        d["algorithm"] = ALGORITHM_REVISION
        d.pop("seed")
        d.pop("trace_every")
        blob = json.dumps(d, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class RunResult:
    theta: FactorSet
    H: float
    B: float
    R: float
    feas_residual: float
    converged: bool
    steps_used: int
    seed: int
    final_loss: float = float("nan")
    loss_change: float = float("nan")
    trace: list[tuple[float, int, float, float]] = field(default_factory=list)

    def to_json(self, include_theta: bool = True, include_trace: bool = False) -> dict:
        def num(x):
            return float(x) if np.isfinite(x) else None

        out = {
            "n": self.theta.n,
            "H": num(self.H),
            "B": num(self.B),
            "R": num(self.R),
            "H_norm": num(self.H / self.theta.n**2),
            "B_norm": num(self.B / self.theta.n**2),
            "R_norm": num(self.R / self.theta.n**2),
            "feas_residual": num(self.feas_residual),
            "converged": bool(self.converged),
            "steps_used": int(self.steps_used),
            "seed": int(self.seed),
            "final_loss": num(self.final_loss),
            "loss_change": num(self.loss_change),
        }
        if include_trace:
            out["trace"] = [[mu, step, num(loss), num(feas)] for mu, step, loss, feas in self.trace]
        if include_theta:
            out["theta"] = self.theta.to_json()
        return out


# --- loss and gradients ---------------------------------------------------------


def _dag(X: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(X, -1, -2))


def _batched_loss_grad(A, B, C, delta, mu, need_grad=True):
    """Loss, H, T and gradients for batched stacks of shape ``(R, n, n, n)``."""
    R, n = A.shape[0], A.shape[-1]
    PA, QA = (A @ _dag(A)).sum(1), (_dag(A) @ A).sum(1)
    PB, QB = (B @ _dag(B)).sum(1), (_dag(B) @ B).sum(1)
    PC, QC = (C @ _dag(C)).sum(1), (_dag(C) @ C).sum(1)

    def tr(X, Y):
        return (X * np.swapaxes(Y, -1, -2)).sum((-1, -2)).real

    H = (tr(QB, PC) + tr(QC, PA) + tr(QA, PB)) / n
    AB = A[:, :, None] @ B[:, None, :]  # (R, a, b, n, n)
    Ct = np.swapaxes(C, -1, -2).reshape(R, n, n * n)
    T = (AB.reshape(R, n * n, n * n) @ np.swapaxes(Ct, -1, -2)).reshape(R, n, n, n) / n
    r = T - delta
    pen = (r.real**2 + r.imag**2).sum((1, 2, 3))
    loss = H + mu * pen
    if not need_grad:
        return loss, H, T, None
    k = 2.0 * mu / n
    BC = B[:, :, None] @ C[:, None, :]  # (R, b, c)
    CA = C[:, :, None] @ A[:, None, :]  # (R, c, a)

    def tterm(res, prod):
        # sum over the other two indices of res * (product)^dag
        m = res.reshape(R, n, n * n) @ np.conj(prod).reshape(R, n * n, n * n)
        return np.swapaxes(m.reshape(R, n, n, n), -1, -2)

    gA = (2.0 / n) * (QC[:, None] @ A + A @ PB[:, None]) + k * tterm(r, BC)
    gB = (2.0 / n) * (QA[:, None] @ B + B @ PC[:, None]) + k * tterm(r.transpose(0, 2, 3, 1), CA)
    gC = (2.0 / n) * (QB[:, None] @ C + C @ PA[:, None]) + k * tterm(r.transpose(0, 3, 1, 2), AB)
    return loss, H, T, (gA, gB, gC)


def _params_to_factors(params, tied: bool):
    if tied:
        (rho,) = params
        return rho, rho, _dag(rho)
    return params


def _loss_grad_params(params, delta, mu, tied: bool, need_grad=True):
    A, B, C = _params_to_factors(params, tied)
    loss, H, T, g = _batched_loss_grad(A, B, C, delta, mu, need_grad)
    if g is None:
        return loss, H, T, None
    if tied:
        gA, gB, gC = g
        return loss, H, T, (gA + gB + _dag(gC),)
    return loss, H, T, g


def init_random(n: int, seed: int, scale: float | None = None) -> FactorSet:
    """I.i.d. complex Gaussian slices with per-entry standard deviation ``scale``."""
    if n < 1:
        raise ValueError("n must be positive")
    scale = 1.0 / np.sqrt(n) if scale is None else scale
    rng = np.random.default_rng(seed)
    shape = (3, n, n, n)
    Z = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * (scale / np.sqrt(2))
    return FactorSet(Z[0], Z[1], Z[2])


def _init_rho(n: int, seed: int, scale: float) -> np.ndarray:
    return init_random(n, seed, scale).A


def penalty_loss(theta: FactorSet, t: CayleyTable, mu: float) -> float:
    """``H(theta) + mu * sum |T - delta|^2`` over all ``n^3`` entries."""
    _check(theta, t)
    residual = contract(theta) - cayley_tensor(t)
    return objective_H(theta) + mu * float((np.abs(residual) ** 2).sum())


def analytic_grad(theta: FactorSet, t: CayleyTable, mu: float) -> FactorSet:
    """Gradient of :func:`penalty_loss` as ``dL/dRe + 1j dL/dIm`` per slice entry."""
    _check(theta, t)
    A, B, C = (X[None] for X in theta.stacks())
    _, _, _, g = _batched_loss_grad(A, B, C, cayley_tensor(t)[None], mu)
    return FactorSet(g[0][0], g[1][0], g[2][0])


def tied_grad(rho: np.ndarray, t: CayleyTable, mu: float) -> np.ndarray:
    """Gradient for the tied parametrization ``A = B = rho``, ``C = rho^dag``."""
    _, _, _, g = _loss_grad_params((np.asarray(rho)[None],), cayley_tensor(t)[None], mu, tied=True)
    return g[0][0]


def _check(theta: FactorSet, t: CayleyTable) -> None:
    if theta.n != t.n:
        raise ValueError(f"factor order {theta.n} does not match table order {t.n}")


# --- optimization ---------------------------------------------------------------


def _adam_schedule(params, delta, cfg: OptConfig, n: int):
    """Run the penalty schedule on batched parameters in place.

    Returns per-restart traces, trailing loss windows and the step count.
    """
    R = params[0].shape[0]
    b1, b2 = cfg.betas
    mu0 = cfg.penalty_schedule[0][0]
    traces: list[list] = [[] for _ in range(R)]
    windows = [deque(maxlen=cfg.window + 1) for _ in range(R)]
    budget = cfg.max_steps
    used = 0
    for mu, steps in cfg.penalty_schedule:
        steps = min(steps, budget - used)
        if steps <= 0:
            break
        for w in windows:
            w.clear()
        m = [np.zeros_like(p) for p in params]
        v = [np.zeros_like(p) for p in params]
        accepted = np.zeros(R)
        damp = np.ones(R)
        saved = None
        base = cfg.step_size * (mu0 / mu) ** cfg.step_decay
        for s in range(steps):
            loss, _, T, grads = _loss_grad_params(params, delta, mu, cfg.tied)
            grads = list(grads)
            if saved is not None:
                s_loss, s_T, s_state = saved
                bad = loss > s_loss + MONOTONE_SLACK * np.maximum(1.0, np.abs(s_loss))
                if bad.any():
                    for live, old in zip(params + grads + m + v, s_state):
                        live[bad] = old[bad]
                    loss[bad] = s_loss[bad]
                    T[bad] = s_T[bad]
                    accepted[bad] -= 1
                damp = np.where(bad, 0.5 * damp, np.minimum(1.0, DAMP_RECOVERY * damp))
            for i in range(R):
                windows[i].append(float(loss[i]))
            if s % cfg.trace_every == 0:
                feas = np.abs(T - delta).max(axis=(1, 2, 3))
                for i in range(R):
                    traces[i].append((mu, used + s, float(loss[i]), float(feas[i])))
            if s and s % cfg.window == 0 and all(len(w) > cfg.window for w in windows):
                if all(abs(w[-1] - w[0]) <= cfg.conv_rtol * abs(w[-1]) for w in windows):
                    steps = s
                    break
            saved = (loss.copy(), T.copy(), [x.copy() for x in params + grads + m + v])
            accepted += 1
            lr = base * (cfg.lr_floor + (1 - cfg.lr_floor) * 0.5 * (1 + np.cos(np.pi * s / steps)))
            lr_i = (lr * damp)[:, None, None, None]
            c1 = (1 - b1**accepted)[:, None, None, None]
            c2 = (1 - b2**accepted)[:, None, None, None]
            for p, g, mm, vv in zip(params, grads, m, v):
                mm *= b1
                mm += (1 - b1) * g
                vv *= b2
                vv += (1 - b2) * (g.real**2 + 1j * g.imag**2)
                mh = mm / c1
                vh = vv / c2
                p -= lr_i * (mh.real / (np.sqrt(vh.real) + cfg.eps) + 1j * mh.imag / (np.sqrt(vh.imag) + cfg.eps))
        used += steps
    return traces, windows, used


def _pack(params, i):
    return np.concatenate([np.concatenate([p[i].real.ravel(), p[i].imag.ravel()]) for p in params])


def _unpack(x, k, n):
    N = n**3
    out = []
    for s in range(k):
        seg = x[2 * N * s : 2 * N * (s + 1)]
        out.append((seg[:N] + 1j * seg[N:]).reshape(1, n, n, n))
    return tuple(out)


def _polish(params, i, delta, mu, cfg: OptConfig, n: int):
    k = len(params)
    history: list[float] = []

    def fg(x):
        loss, _, _, g = _loss_grad_params(_unpack(x, k, n), delta, mu, cfg.tied)
        return float(loss[0]), _pack(g, 0)

    def cb(intermediate_result):
        history.append(float(intermediate_result.fun))

    x0 = _pack(params, i)
    history.append(fg(x0)[0])
    res = scipy_minimize(
        fg,
        x0,
        jac=True,
        method="L-BFGS-B",
        callback=cb,
        options={"maxiter": cfg.polish_maxiter, "ftol": 1e-16, "gtol": 1e-12, "maxcor": 30},
    )
    new = _unpack(res.x, k, n)
    for p, q in zip(params, new):
        p[i] = q[0]
    return history, int(res.nit)


def _finalize(theta: FactorSet, t: CayleyTable, delta, cfg, seed, steps, window, trace, tied=False):
    T = contract(theta)
    feas = float(np.abs(T - delta).max())
    H = objective_H(theta)
    try:
        B, _ = base_term_B(theta, t)
        R, _ = misalignment_R(theta, t)
    except DegenerateSlice:
        B = R = float("nan")
    mu_last = cfg.penalty_schedule[-1][0]
    final_loss = H + mu_last * float((np.abs(T - delta) ** 2).sum())
    w = list(window)
    if not w:
        change = float("inf")
    elif w[-1] == w[0]:
        change = 0.0  # includes a polish round that took no step
    else:
        change = abs(w[-1] - w[0]) / abs(w[-1])
    converged = feas <= cfg.feas_tol and change < cfg.conv_rtol
    return RunResult(
        theta=theta,
        H=H,
        B=B,
        R=R,
        feas_residual=feas,
        converged=bool(converged),
        steps_used=steps,
        seed=seed,
        final_loss=final_loss,
        loss_change=change,
        trace=trace,
    )


def _run_batch(t: CayleyTable, cfg: OptConfig) -> list[RunResult]:
    n = t.n
    scale = cfg.scale_for(n)
    seeds = [cfg.seed + i for i in range(cfg.restarts)]
    if cfg.tied:
        params = [np.stack([_init_rho(n, s, scale) for s in seeds])]
    else:
        inits = [init_random(n, s, scale) for s in seeds]
        params = [np.stack([getattr(th, name) for th in inits]) for name in "ABC"]
    delta1 = cayley_tensor(t)
    delta = delta1[None]
    traces, windows, used = _adam_schedule(params, delta, cfg, n)
    mu_last = cfg.penalty_schedule[-1][0]
    results = []
    for i, s in enumerate(seeds):
        steps = used
        window = windows[i]
        if cfg.polish:
            for _ in range(POLISH_ROUNDS):
                history, nit = _polish(params, i, delta, mu_last, cfg, n)
                steps += nit
                window = deque(history, maxlen=cfg.window + 1)
                if abs(history[-1] - history[0]) <= cfg.conv_rtol * abs(history[-1]):
                    break
        A, B, C = _params_to_factors([p[i : i + 1] for p in params], cfg.tied)
        theta = FactorSet(A[0].copy(), B[0].copy(), C[0].copy())
        results.append(_finalize(theta, t, delta1, cfg, s, steps, window, traces[i]))
    return results


def _select_best(runs: list[RunResult]) -> RunResult:
    converged = [r for r in runs if r.converged]
    if converged:
        return min(converged, key=lambda r: (r.H, r.seed))
    return min(runs, key=lambda r: (r.feas_residual, r.seed))


def minimize(t: CayleyTable, cfg: OptConfig | None = None) -> tuple[RunResult, list[RunResult]]:
    """Multi-restart penalty optimization; returns ``(best, all runs ordered by seed)``.

    ``best`` is the converged run with the smallest ``H``; if nothing
    converged it is the run with the smallest feasibility residual.
    """
    cfg = cfg or OptConfig()
    runs = _run_batch(t, cfg)
    best = _select_best(runs)
    log.debug(
        "minimize n=%d tied=%s best H/n^2=%.6f converged=%s",
        t.n, cfg.tied, best.H / t.n**2, best.converged,
    )
    return best, runs


def minimize_tied(t: CayleyTable, cfg: OptConfig | None = None) -> tuple[RunResult, list[RunResult]]:
    """Optimize one stack ``rho`` with ``A = B = rho`` and ``C = rho^dag``."""
    cfg = cfg or OptConfig()
    if not cfg.tied:
        cfg = OptConfig(**{**cfg.__dict__, "tied": True})
    return minimize(t, cfg)
