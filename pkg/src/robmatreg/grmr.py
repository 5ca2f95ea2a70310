"""Generalized robust matrix regression: recover clean signals + outliers.

Each noisy predictor is modeled as a latent clean matrix plus sparse
outliers. Fitting alternates two blocks: the regression model is refit on
the current clean signals, then the stacked decomposition (low-rank clean
part, L1-sparse outliers) is re-solved by an accelerated proximal ADMM
with the same restart rule, using a squared-loss relaxation of the tube
loss inside the decomposition block only.
"""

import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import rmr as _rmr
from .exceptions import ContractViolation
from .linalg import as_matrix, singular_value_shrink, soft_threshold, svd

_TRACE_HEADER = ("outer_iter,inner_iter,objective_relaxed,objective_full,"
                 "constraint_residual,combined_c,restarted\n")


@dataclass(frozen=True)
class GrmrHyperParams:
    rmr: _rmr.RmrHyperParams = field(default_factory=_rmr.RmrHyperParams)
    gamma: float = 1.0
    l1_lambda: float = 1.0
    mu: float = 1.0
    inner_max_iters: int = 300
    outer_max_iters: int = 20
    outer_tol: float = 1e-4
    eta: float = 0.999

    def validate(self):
        self.rmr.validate()
        if not (self.gamma >= 0.0):
            raise ContractViolation(f"gamma must be >= 0, got {self.gamma}")
        if not (self.l1_lambda >= 0.0):
            raise ContractViolation(
                f"l1_lambda must be >= 0, got {self.l1_lambda}")
        if not (self.mu > 0.0):
            raise ContractViolation(f"mu must be > 0, got {self.mu}")
        if self.inner_max_iters < 1:
            raise ContractViolation("inner_max_iters must be >= 1")
        if self.outer_max_iters < 0:
            raise ContractViolation("outer_max_iters must be >= 0")
        if not (self.outer_tol > 0.0):
            raise ContractViolation(f"outer_tol must be > 0, got {self.outer_tol}")
        if not (0.0 < self.eta < 1.0):
            raise ContractViolation(f"eta must be in (0, 1), got {self.eta}")


@dataclass
class DecompositionState:
    """Stacked decomposition state; rows are row-major vectorized samples."""

    d: np.ndarray
    x_clean: np.ndarray
    e_outliers: np.ndarray
    gamma_dual: np.ndarray
    x_hat: np.ndarray
    gamma_hat: np.ndarray
    e_hat: np.ndarray
    momentum_t: float = 1.0
    combined_residual_c: float = np.inf


@dataclass
class DecompositionResult:
    x_clean: np.ndarray
    e_outliers: np.ndarray
    converged: bool
    iterations: int
    constraint_residual: float
    states: list = field(default_factory=list)


@dataclass
class GrmrFitResult:
    model: _rmr.RmrModel
    x_clean: np.ndarray
    e_outliers: np.ndarray
    converged: bool
    outer_iterations: int
    objective_full: list
    objective_relaxed: list


def stack_rows(matrices):
    """Stack p-by-q matrices as row-major rows of an (n, p*q) matrix."""
    mats = [as_matrix(m, f"matrix {i}") for i, m in enumerate(matrices)]
    if not mats:
        raise ContractViolation("need at least one matrix")
    shape = mats[0].shape
    for i, m in enumerate(mats):
        if m.shape != shape:
            raise ContractViolation(
                f"matrix {i} has shape {m.shape}, expected {shape}")
    return np.stack([m.ravel() for m in mats]), shape


def unstack_rows(stacked, shape):
    """Invert :func:`stack_rows`: one p-by-q matrix per row."""
    p, q = shape
    a = as_matrix(stacked, "stacked")
    if a.shape[1] != p * q:
        raise ContractViolation(
            f"row length {a.shape[1]} does not match shape {shape}")
    return [row.reshape(p, q).copy() for row in a]


def grad_e(state, mu):
    """Gradient of the smooth outlier-block term:
    ``mu * (E + X + Gamma/mu - D)``."""
    return _grad_e_at(state.e_outliers, state.x_clean, state.gamma_dual,
                      state.d, mu)


def grad_x(state, w_vec, b, labels, box_c, mu):
    """Gradient of the smooth clean-signal term:
    ``2 C (X w + b 1 - y) w' + mu * (X + E + Gamma/mu - D)``."""
    w_vec = np.asarray(w_vec, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if w_vec.shape != (state.d.shape[1],):
        raise ContractViolation(
            f"w_vec length {w_vec.shape} does not match row width "
            f"{state.d.shape[1]}")
    if labels.shape != (state.d.shape[0],):
        raise ContractViolation("labels must have one entry per row")
    return _grad_x_at(state.x_clean, state.e_outliers, state.gamma_dual,
                      state.d, w_vec, b, labels, box_c, mu)


def _grad_e_at(e, x, gamma_dual, d, mu):
    return mu * (e + x + gamma_dual / mu - d)


def _grad_x_at(x, e, gamma_dual, d, w_vec, b, labels, box_c, mu):
    residual = x @ w_vec + b - labels
    return 2.0 * box_c * np.outer(residual, w_vec) \
        + mu * (x + e + gamma_dual / mu - d)


def prox_steps(state, step_e, step_x, l1_lambda, gamma, w_vec, b, labels,
               box_c, mu):
    """One proximal sweep: soft-threshold the outlier block, then
    singular-value-shrink the clean block with the fresh outliers.

    Gradients are evaluated at the momentum (hatted) variables; steps must
    lie in ``(0, 1/L]`` for the respective smooth terms (``L = mu`` for the
    outlier block, ``L = 2 C ||w||^2 + mu`` for the clean block).
    """
    ge = _grad_e_at(state.e_hat, state.x_hat, state.gamma_hat, state.d, mu)
    e_arg = state.e_hat - step_e * ge
    # zero thresholds make either prox the identity; skip the work (the
    # SVD in particular) in that common case
    e_new = soft_threshold(e_arg, step_e * l1_lambda) if l1_lambda > 0.0 \
        else e_arg
    gx = _grad_x_at(state.x_hat, e_new, state.gamma_hat, state.d,
                    w_vec, b, labels, box_c, mu)
    x_arg = state.x_hat - step_x * gx
    x_new = singular_value_shrink(x_arg, step_x * gamma) if gamma > 0.0 \
        else x_arg
    return DecompositionState(
        d=state.d, x_clean=x_new, e_outliers=e_new,
        gamma_dual=state.gamma_dual, x_hat=state.x_hat,
        gamma_hat=state.gamma_hat, e_hat=state.e_hat,
        momentum_t=state.momentum_t,
        combined_residual_c=state.combined_residual_c)


def solve_decomposition(d, model, labels, params, trace_sink=None,
                        collect_states=False, outer_iter=0,
                        trace_header=True, init=None):
    """Recover (clean, outliers) from stacked noisy rows with the model fixed.

    Runs the accelerated proximal ADMM with restart until the split
    constraint residual ``||D - X - E||_F`` falls below
    ``outer_tol * max(1, ||D||_F)`` or ``inner_max_iters`` is reached
    (the result is then flagged non-converged). ``init`` optionally warm
    starts ``(x_clean, e_outliers)``; the default start is the feasible
    split ``X = D, E = 0``.
    """
    params.validate()
    d = as_matrix(d, "d")
    labels = np.asarray(labels, dtype=np.float64)
    if labels.shape != (d.shape[0],):
        raise ContractViolation("labels must have one entry per stacked row")
    mu, eta = params.mu, params.eta
    box_c = params.rmr.box_c
    w_vec = model.w.ravel()
    b = model.b
    step_e = 1.0 / mu
    step_x = 1.0 / (2.0 * box_c * float(w_vec @ w_vec) + mu)

    if init is None:
        x0, e0 = d.copy(), np.zeros_like(d)
    else:
        x0 = as_matrix(init[0], "init x").copy()
        e0 = as_matrix(init[1], "init e").copy()
        if x0.shape != d.shape or e0.shape != d.shape:
            raise ContractViolation("warm-start blocks must match d")
    x_cur = x0
    e_cur = e0
    g_cur = np.zeros_like(d)
    x_prev = x0.copy()
    g_prev = np.zeros_like(d)
    x_hat = x0.copy()
    g_hat = np.zeros_like(d)
    e_hat = e0.copy()
    t_mom = 1.0
    c_prev = np.inf
    d_scale = max(1.0, float(np.linalg.norm(d)))
    converged = False
    residual = float(np.linalg.norm(d - x_cur - e_cur))
    states = []
    iters = 0
    sink, close_sink = _open_trace(trace_sink, trace_header)
    try:
        for k in range(params.inner_max_iters):
            st = DecompositionState(
                d=d, x_clean=x_cur, e_outliers=e_cur, gamma_dual=g_cur,
                x_hat=x_hat, gamma_hat=g_hat, e_hat=e_hat, momentum_t=t_mom,
                combined_residual_c=c_prev)
            st = prox_steps(st, step_e, step_x, params.l1_lambda,
                            params.gamma, w_vec, b, labels, box_c, mu)
            x_cur, e_cur = st.x_clean, st.e_outliers
            g_cur = g_hat - mu * (d - x_cur - e_cur)
            c = (np.sum((g_cur - g_hat) ** 2) / mu
                 + mu * np.sum((x_cur - x_hat) ** 2))

            restarted = not (c < eta * c_prev)
            if not restarted:
                t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t_mom * t_mom))
                gain = (t_mom - 1.0) / t_next
                x_hat = x_cur + gain * (x_cur - x_prev)
                g_hat = g_cur + gain * (g_cur - g_prev)
                c_prev = c
            else:
                t_next = 1.0
                x_hat = x_prev.copy()
                g_hat = g_prev.copy()
                c_prev = c_prev / eta
            t_mom = t_next
            x_prev = x_cur
            g_prev = g_cur
            e_hat = e_cur

            residual = float(np.linalg.norm(d - x_cur - e_cur))
            iters = k + 1
            if collect_states:
                states.append(DecompositionState(
                    d=d, x_clean=x_cur.copy(), e_outliers=e_cur.copy(),
                    gamma_dual=g_cur.copy(), x_hat=x_hat.copy(),
                    gamma_hat=g_hat.copy(), e_hat=e_hat.copy(),
                    momentum_t=t_mom, combined_residual_c=float(c)))
            if sink is not None:
                rel = _relaxed_objective(x_cur, e_cur, w_vec, b, labels,
                                         box_c, params)
                full = _full_objective_arrays(model, x_cur, e_cur, labels,
                                              params)
                sink.write(f"{outer_iter},{k},{rel!r},{full!r},{residual!r},"
                           f"{float(c)!r},{int(restarted)}\n")
            if residual <= params.outer_tol * d_scale:
                converged = True
                break
    finally:
        if close_sink and sink is not None:
            sink.close()
    return DecompositionResult(x_clean=x_cur, e_outliers=e_cur,
                               converged=converged, iterations=iters,
                               constraint_residual=residual, states=states)


def fit_grmr(noisy_samples, labels=None, params=None, trace_sink=None):
    """Alternate model fits and decompositions until the full objective
    stabilizes.

    ``noisy_samples`` may be MatrixSamples (labels taken from them when
    ``labels`` is None) or plain p-by-q arrays with a separate label
    vector. With ``outer_max_iters = 0`` this reduces to a plain fit on
    the noisy inputs.
    """
    if params is None:
        params = GrmrHyperParams()
    params.validate()
    mats, labels = _coerce_inputs(noisy_samples, labels)
    d, shape = stack_rows(mats)
    x_rows = d.copy()
    e_rows = np.zeros_like(d)

    sink, close_sink = _open_trace(trace_sink)
    try:
        fit_res = _rmr.fit(_to_samples(x_rows, shape, labels), params.rmr)
        model = fit_res.model
        objective_full = [_full_objective_arrays(model, x_rows, e_rows,
                                                 labels, params)]
        objective_relaxed = [_relaxed_objective(x_rows, e_rows,
                                                model.w.ravel(), model.b,
                                                labels, params.rmr.box_c,
                                                params)]
        converged = params.outer_max_iters == 0
        outer = 0
        for outer in range(1, params.outer_max_iters + 1):
            dec = solve_decomposition(d, model, labels, params,
                                      trace_sink=sink, outer_iter=outer,
                                      trace_header=False,
                                      init=(x_rows, e_rows))
            x_rows, e_rows = dec.x_clean, dec.e_outliers
            fit_res = _rmr.fit(_to_samples(x_rows, shape, labels), params.rmr)
            model = fit_res.model
            obj = _full_objective_arrays(model, x_rows, e_rows, labels, params)
            objective_full.append(obj)
            objective_relaxed.append(_relaxed_objective(
                x_rows, e_rows, model.w.ravel(), model.b, labels,
                params.rmr.box_c, params))
            prev = objective_full[-2]
            if abs(obj - prev) <= params.outer_tol * max(1.0, abs(prev)):
                converged = True
                break
    finally:
        if close_sink and sink is not None:
            sink.close()
    return GrmrFitResult(model=model, x_clean=x_rows, e_outliers=e_rows,
                         converged=converged, outer_iterations=outer,
                         objective_full=objective_full,
                         objective_relaxed=objective_relaxed)


def full_objective(model, x_rows, e_rows, labels, params):
    """Joint objective: tube-loss fit on the clean signals plus all three
    penalties (Frobenius + nuclear on W, nuclear on stacked X, L1 on E)."""
    return _full_objective_arrays(model, as_matrix(x_rows), as_matrix(e_rows),
                                  np.asarray(labels, dtype=np.float64), params)


def _full_objective_arrays(model, x_rows, e_rows, labels, params):
    rp = params.rmr
    pred = x_rows @ model.w.ravel() + model.b
    tube = np.maximum(np.abs(pred - labels) - rp.epsilon, 0.0)
    w_nuc = float(np.sum(svd(model.w).sigma))
    x_nuc = float(np.sum(svd(x_rows).sigma)) if params.gamma > 0.0 else 0.0
    return (0.5 * float(np.sum(model.w ** 2)) + rp.box_c * float(np.sum(tube))
            + rp.tau * w_nuc + params.gamma * x_nuc
            + params.l1_lambda * float(np.sum(np.abs(e_rows))))


def _relaxed_objective(x_rows, e_rows, w_vec, b, labels, box_c, params):
    residual = x_rows @ w_vec + b - labels
    x_nuc = float(np.sum(svd(x_rows).sigma)) if params.gamma > 0.0 else 0.0
    return (box_c * float(residual @ residual) + params.gamma * x_nuc
            + params.l1_lambda * float(np.sum(np.abs(e_rows))))


def _coerce_inputs(noisy_samples, labels):
    first = noisy_samples[0] if len(noisy_samples) else None
    if hasattr(first, "x"):
        mats = [s.x for s in noisy_samples]
        if labels is None:
            labels = np.array([s.y for s in noisy_samples], dtype=np.float64)
    else:
        mats = list(noisy_samples)
        if labels is None:
            raise ContractViolation(
                "labels are required when samples are plain matrices")
    labels = np.asarray(labels, dtype=np.float64)
    if labels.shape != (len(mats),):
        raise ContractViolation("labels must have one entry per sample")
    return mats, labels


def _to_samples(x_rows, shape, labels):
    return [_rmr.MatrixSample(x=m, y=y)
            for m, y in zip(unstack_rows(x_rows, shape), labels)]


def _open_trace(trace_sink, write_header=True):
    if trace_sink is None:
        return None, False
    if isinstance(trace_sink, io.TextIOBase) or hasattr(trace_sink, "write"):
        if write_header:
            trace_sink.write(_TRACE_HEADER)
        return trace_sink, False
    fh = open(trace_sink, "w", encoding="ascii")
    fh.write(_TRACE_HEADER)
    return fh, True
