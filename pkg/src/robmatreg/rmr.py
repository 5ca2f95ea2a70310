"""Robust matrix regression: tube (hinge) loss + spectral elastic net.

The model predicts ``tr(W' X) + b`` and is fit by ADMM with the restart
rule: alternate a singular-value-shrinkage step on the auxiliary matrix, a
dual-QP step for the regression matrix and offset, and a dual update, with
momentum acceleration that resets whenever the combined residual fails to
contract.
"""

import io
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import qp_smo
from .exceptions import ContractViolation
from .linalg import as_matrix, singular_value_shrink, svd, trace_inner

_TRACE_HEADER = "iter,objective,primal_residual,combined_c,restarted\n"


@dataclass
class MatrixSample:
    """One training pair: a p-by-q predictor matrix and a scalar label."""

    x: np.ndarray
    y: float

    def __post_init__(self):
        self.x = as_matrix(self.x, "sample predictor")
        self.y = float(self.y)
        if not math.isfinite(self.y):
            raise ContractViolation("sample label must be finite")


@dataclass
class RmrModel:
    """Learned regression matrix and offset."""

    w: np.ndarray
    b: float

    def predict(self, x):
        return predict(self, x)


@dataclass(frozen=True)
class RmrHyperParams:
    box_c: float = 1e3
    epsilon: float = 1e-2
    tau: float = 1.0
    rho: float = 1.0
    eta: float = 0.999
    max_iters: int = 500
    primal_tol: float = 1e-5

    def validate(self):
        if not (self.box_c > 0.0):
            raise ContractViolation(f"box_c must be > 0, got {self.box_c}")
        if not (self.epsilon >= 0.0):
            raise ContractViolation(f"epsilon must be >= 0, got {self.epsilon}")
        if not (self.tau >= 0.0):
            raise ContractViolation(f"tau must be >= 0, got {self.tau}")
        if not (self.rho > 0.0):
            raise ContractViolation(f"rho must be > 0, got {self.rho}")
        if not (0.0 < self.eta < 1.0):
            raise ContractViolation(f"eta must be in (0, 1), got {self.eta}")
        if self.max_iters < 1:
            raise ContractViolation(f"max_iters must be >= 1, got {self.max_iters}")
        if not (self.primal_tol > 0.0):
            raise ContractViolation(f"primal_tol must be > 0, got {self.primal_tol}")


@dataclass
class AdmmState:
    """Solver state after one iteration (hatted = momentum variables)."""

    w: np.ndarray
    b: float
    s: np.ndarray
    lambda_dual: np.ndarray
    s_hat: np.ndarray
    lambda_hat: np.ndarray
    momentum_t: float
    combined_residual_c: float
    iter: int
    restarted: bool = False


@dataclass
class RmrFitResult:
    model: RmrModel
    converged: bool
    iterations: int
    primal_residual: float
    state: AdmmState
    beta: np.ndarray
    states: list = field(default_factory=list)


def hinge_residual(model, sample, epsilon):
    """Tube residual ``max(|tr(W'X) + b - y| - epsilon, 0)``."""
    r = abs(predict(model, sample.x) - sample.y) - epsilon
    return max(r, 0.0)


def objective(model, samples, params):
    """Penalized fit objective: ``0.5 ||W||_F^2 + C * sum tube residuals
    + tau * ||W||_*``."""
    w = as_matrix(model.w, "model.w")
    loss = sum(hinge_residual(model, s, params.epsilon) for s in samples)
    nuclear = float(np.sum(svd(w).sigma))
    return 0.5 * float(np.sum(w * w)) + params.box_c * loss + params.tau * nuclear


def predict(model, x):
    """``tr(W' X) + b``."""
    return trace_inner(model.w, x) + model.b


def update_s(w, lambda_dual, tau, rho):
    """Auxiliary-matrix step: singular-value shrinkage of ``W - L/rho`` by
    ``tau/rho`` (the scaled form of shrinking ``rho W - L`` by ``tau``)."""
    if not (rho > 0.0):
        raise ContractViolation(f"rho must be > 0, got {rho}")
    w = as_matrix(w, "w")
    lam = as_matrix(lambda_dual, "lambda_dual")
    if w.shape != lam.shape:
        raise ContractViolation(f"shape mismatch: {w.shape} vs {lam.shape}")
    return singular_value_shrink(w - lam / rho, tau / rho)


def update_w_b(samples, s_hat, lambda_hat, params):
    """Regression-matrix step: solve the dual QP, assemble
    ``W = (sum beta_i X_i + L + rho S) / (1 + rho)`` and recover the offset."""
    qp = qp_smo.build_rmr_qp(samples, lambda_hat, s_hat, params.rho,
                             params.epsilon, params.box_c)
    state = qp_smo.solve(qp)
    xv, y = qp_smo.stack_samples(samples)
    p, q = samples[0].x.shape
    w = ((state.beta @ xv).reshape(p, q) + lambda_hat + params.rho * s_hat) \
        / (1.0 + params.rho)
    b = qp_smo.recover_bias(state, qp, xv @ w.ravel(), y, params.epsilon)
    return RmrModel(w=w, b=b)


def fit(samples, params=None, trace_sink=None, collect_states=False):
    """Fit the model by ADMM with the restart rule.

    Stops when ``||W - S||_F <= primal_tol * max(1, ||W||_F)`` or after
    ``max_iters`` iterations (the result is then flagged non-converged).
    ``trace_sink`` (path or text file) receives one CSV row per iteration:
    iter, objective, primal_residual, combined_c, restarted.
    """
    if params is None:
        params = RmrHyperParams()
    params.validate()
    xv, y = qp_smo.stack_samples(samples)
    n = len(samples)
    p, q = samples[0].x.shape
    rho, eta, eps, tau = params.rho, params.eta, params.epsilon, params.tau
    scale = 1.0 / (rho + 1.0)
    gram = (xv @ xv.T) * scale
    qp_template = dict(box=params.box_c)

    s_cur = np.zeros((p, q))
    lam_cur = np.zeros((p, q))
    s_prev = np.zeros((p, q))
    lam_prev = np.zeros((p, q))
    s_hat = np.zeros((p, q))
    lam_hat = np.zeros((p, q))
    t_mom = 1.0
    c_prev = np.inf
    beta = np.zeros(n)
    w = np.zeros((p, q))
    b = 0.0
    converged = False
    primal_res = np.inf
    restarted = False
    state = None
    states = []
    # inexact inner solves: the dual QP tolerance starts at the label
    # scale and tightens geometrically toward the final KKT tolerance, so
    # cold-start iterations are cheap and late iterates stay accurate
    tol_anchor = max(qp_smo.KKT_TOL_DEFAULT,
                     1e-3 * float(np.sqrt(np.mean(y * y))))
    sink, close_sink = _open_trace(trace_sink)
    try:
        for k in range(params.max_iters):
            # regression-matrix step (dual QP, warm-started)
            shift = xv @ (lam_hat + rho * s_hat).ravel() * scale
            qp = qp_smo.DualQp(gram=gram, lin_pos=eps - y + shift,
                               lin_neg=eps + y - shift, **qp_template)
            kkt_tol_k = max(qp_smo.KKT_TOL_DEFAULT,
                            tol_anchor * 0.5 ** k)
            dual = qp_smo.solve(qp, kkt_tol=kkt_tol_k, beta0=beta)
            beta = dual.beta
            w = ((beta @ xv).reshape(p, q) + lam_hat + rho * s_hat) * scale
            b = qp_smo.recover_bias(dual, qp, xv @ w.ravel(), y, eps)

            # auxiliary step and dual ascent
            s_cur = update_s(w, lam_hat, tau, rho)
            lam_cur = lam_hat - rho * (w - s_cur)
            c = (np.sum((lam_cur - lam_hat) ** 2) / rho
                 + rho * np.sum((s_cur - s_hat) ** 2))

            restarted = not (c < eta * c_prev)
            if not restarted:
                t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t_mom * t_mom))
                gain = (t_mom - 1.0) / t_next
                s_hat = s_cur + gain * (s_cur - s_prev)
                lam_hat = lam_cur + gain * (lam_cur - lam_prev)
                c_prev = c
            else:
                t_next = 1.0
                s_hat = s_prev.copy()
                lam_hat = lam_prev.copy()
                c_prev = c_prev / eta
            t_mom = t_next
            s_prev = s_cur
            lam_prev = lam_cur

            primal_res = float(np.linalg.norm(w - s_cur))
            state = AdmmState(w=w, b=b, s=s_cur, lambda_dual=lam_cur,
                              s_hat=s_hat, lambda_hat=lam_hat,
                              momentum_t=t_mom, combined_residual_c=float(c),
                              iter=k, restarted=restarted)
            if collect_states:
                states.append(replace(state, w=w.copy(), s=s_cur.copy(),
                                      lambda_dual=lam_cur.copy(),
                                      s_hat=s_hat.copy(),
                                      lambda_hat=lam_hat.copy()))
            if sink is not None:
                obj = objective(RmrModel(w=w, b=b), samples, params)
                sink.write(f"{k},{obj!r},{primal_res!r},{float(c)!r},"
                           f"{int(restarted)}\n")
            if primal_res <= params.primal_tol * max(1.0, float(np.linalg.norm(w))):
                converged = True
                break
    finally:
        if close_sink and sink is not None:
            sink.close()
    return RmrFitResult(model=RmrModel(w=w, b=b), converged=converged,
                        iterations=state.iter + 1 if state else 0,
                        primal_residual=primal_res, state=state, beta=beta,
                        states=states)


def _open_trace(trace_sink):
    if trace_sink is None:
        return None, False
    if isinstance(trace_sink, io.TextIOBase) or hasattr(trace_sink, "write"):
        trace_sink.write(_TRACE_HEADER)
        return trace_sink, False
    fh = open(trace_sink, "w", encoding="ascii")
    fh.write(_TRACE_HEADER)
    return fh, True
