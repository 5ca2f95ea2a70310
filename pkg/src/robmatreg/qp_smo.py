"""Box-constrained dual QP of the tube-loss regression subproblem, via SMO.

The dual has ``2n`` variables ``alpha, alpha_star`` coupled by
``sum(alpha - alpha_star) = 0`` and a block Hessian built from one n-by-n
gram matrix; we never materialize the 2n-by-2n form. The solver keeps the
signed variables ``beta = alpha - alpha_star`` and moves the maximal
violating pair per step (working-set selection with a guaranteed
convergence certificate). It doubles as a plain linear-kernel SVR solver.
"""

from dataclasses import dataclass, field

import numpy as np

from ._kernels import dual_objective, smo_pair_loop
from .exceptions import ContractViolation, ConvergenceError

KKT_TOL_DEFAULT = 1e-6

# negative-tube slack: lin_pos + lin_neg may dip this far below zero before
# the beta-only pair updates stop being exact
_TUBE_SLACK = 1e-9


@dataclass(frozen=True)
class DualQp:
    """Dual problem data: gram kernel, per-side linear terms, box bound."""

    gram: np.ndarray
    lin_pos: np.ndarray
    lin_neg: np.ndarray
    box: float

    def __post_init__(self):
        gram = np.ascontiguousarray(self.gram, dtype=np.float64)
        lp = np.ascontiguousarray(self.lin_pos, dtype=np.float64)
        ln = np.ascontiguousarray(self.lin_neg, dtype=np.float64)
        n = gram.shape[0]
        if gram.ndim != 2 or gram.shape != (n, n):
            raise ContractViolation(f"gram must be square, got {gram.shape}")
        if lp.shape != (n,) or ln.shape != (n,):
            raise ContractViolation("linear terms must match gram size")
        if not (self.box > 0.0):
            raise ContractViolation(f"box must be > 0, got {self.box}")
        if not (np.all(np.isfinite(gram)) and np.all(np.isfinite(lp))
                and np.all(np.isfinite(ln))):
            raise ContractViolation("dual QP data must be finite")
        object.__setattr__(self, "gram", gram)
        object.__setattr__(self, "lin_pos", lp)
        object.__setattr__(self, "lin_neg", ln)

    @property
    def n(self):
        return self.gram.shape[0]

    def validate(self, sym_tol=1e-10, psd_floor=1e-8):
        """Full invariant check (symmetry, PSD); O(n^3), test/debug use."""
        scale = max(1.0, float(np.abs(self.gram).max()))
        if np.abs(self.gram - self.gram.T).max() > sym_tol * scale:
            raise ContractViolation("gram is not symmetric")
        eigs = np.linalg.eigvalsh(self.gram)
        floor = -psd_floor * max(np.trace(self.gram), 1e-300)
        if eigs.min() < floor:
            raise ContractViolation(
                f"gram is not PSD (min eigenvalue {eigs.min():.3e})")


@dataclass
class DualState:
    """Solved dual variables; ``beta = alpha - alpha_star`` with
    ``min(alpha_i, alpha_star_i) = 0`` and ``sum(beta) = 0``."""

    alpha: np.ndarray
    alpha_star: np.ndarray
    beta: np.ndarray
    support: np.ndarray = field(default=None)
    objective: float = 0.0
    steps: int = 0
    kkt_gap: float = np.inf
    objective_trace: np.ndarray | None = None


def solve(qp, kkt_tol=KKT_TOL_DEFAULT, max_passes=None, beta0=None,
          record_objectives=False):
    """Solve the dual QP to the given KKT gap tolerance.

    ``max_passes`` caps the number of pair updates (default
    ``max(10 n^2, 500000)``: pair steps are curvature-limited, so cold
    starts at large box bounds genuinely need travel proportional to
    ``n * box``). ``beta0`` warm-starts the signed variables; it must
    already satisfy the equality and box constraints. Raises
    ConvergenceError carrying the final KKT gap if the cap is exhausted.
    """
    if not (kkt_tol > 0.0):
        raise ContractViolation(f"kkt_tol must be > 0, got {kkt_tol}")
    n = qp.n
    tube = qp.lin_pos + qp.lin_neg
    if tube.min() < -_TUBE_SLACK * max(1.0, float(np.abs(tube).max())):
        raise ContractViolation(
            "lin_pos + lin_neg must be non-negative (tube width)")
    if max_passes is None:
        max_passes = max(500_000, 10 * n * n)
    if beta0 is None:
        beta = np.zeros(n)
        grad = np.zeros(n)
    else:
        beta = np.array(beta0, dtype=np.float64)
        if beta.shape != (n,):
            raise ContractViolation("beta0 has wrong length")
        if np.abs(beta).max(initial=0.0) > qp.box:
            raise ContractViolation("beta0 violates the box constraint")
        grad = qp.gram @ beta
    trace = np.zeros(max_passes + 1 if record_objectives else 1)
    steps, gap, ok = smo_pair_loop(
        qp.gram, qp.lin_pos, qp.lin_neg, float(qp.box), float(kkt_tol),
        int(max_passes), beta, grad, trace, bool(record_objectives))
    if not ok:
        raise ConvergenceError(
            f"SMO did not reach KKT tolerance {kkt_tol} in {max_passes} steps",
            violation=gap)
    alpha = np.maximum(beta, 0.0)
    alpha_star = np.maximum(-beta, 0.0)
    return DualState(
        alpha=alpha,
        alpha_star=alpha_star,
        beta=beta,
        support=np.flatnonzero(beta != 0.0),
        objective=dual_objective(qp.lin_pos, qp.lin_neg, beta, grad),
        steps=int(steps),
        kkt_gap=float(gap),
        objective_trace=trace[:steps + 1] if record_objectives else None,
    )


def recover_bias(state, qp, predictions_without_bias, labels, epsilon):
    """Recover the offset from the solved dual state.

    Free support vectors (``0 < |beta_i| < box``) pin the offset exactly:
    ``b = mean(y_i - sign(beta_i) * epsilon - pred_i)`` over that set. When
    no variable is free, fall back to the midpoint of the feasible interval
    implied by the bound/inactive variables.
    """
    pred = np.asarray(predictions_without_bias, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    beta = state.beta
    if pred.shape != beta.shape or y.shape != beta.shape:
        raise ContractViolation("predictions/labels must match dual size")
    e = y - pred
    box = qp.box
    absb = np.abs(beta)
    free = (absb > 0.0) & (absb < box)
    if np.any(free):
        return float(np.mean(e[free] - np.sign(beta[free]) * epsilon))
    lowers = []
    uppers = []
    at_zero = absb == 0.0
    if np.any(at_zero):
        lowers.append(np.max(e[at_zero] - epsilon))
        uppers.append(np.min(e[at_zero] + epsilon))
    at_neg = beta <= -box
    if np.any(at_neg):
        lowers.append(np.max(e[at_neg] + epsilon))
    at_pos = beta >= box
    if np.any(at_pos):
        uppers.append(np.min(e[at_pos] - epsilon))
    if not lowers and not uppers:
        raise ContractViolation("empty dual state, offset is undefined")
    lo = max(lowers) if lowers else min(uppers)
    hi = min(uppers) if uppers else max(lowers)
    return float(0.5 * (lo + hi))


def kkt_max_violation(state, qp, bias):
    """Largest per-index KKT violation of a solved state, in residual units.

    For each index the tube-loss optimality conditions pin the signed
    residual ``r_i = pred_i + b - y_i`` relative to the local tube width;
    returns the worst slack over all indices (0 means exact KKT).
    """
    beta = state.beta
    box = qp.box
    eps = 0.5 * (qp.lin_pos + qp.lin_neg)
    e = 0.5 * (qp.lin_neg - qp.lin_pos) - qp.gram @ beta
    r = bias - e
    viol = np.zeros_like(beta)
    zero = beta == 0.0
    viol[zero] = np.maximum(np.abs(r[zero]) - eps[zero], 0.0)
    free_pos = (beta > 0.0) & (beta < box)
    viol[free_pos] = np.abs(r[free_pos] + eps[free_pos])
    at_pos = beta >= box
    viol[at_pos] = np.maximum(r[at_pos] + eps[at_pos], 0.0)
    free_neg = (beta < 0.0) & (beta > -box)
    viol[free_neg] = np.abs(r[free_neg] - eps[free_neg])
    at_neg = beta <= -box
    viol[at_neg] = np.maximum(eps[at_neg] - r[at_neg], 0.0)
    return float(viol.max(initial=0.0))


def build_rmr_qp(samples, lambda_dual, s_aux, rho, epsilon, box_c):
    """Assemble the dual QP of the regression-matrix subproblem.

    ``K_ij = tr(X_i' X_j) / (rho + 1)`` and the linear terms shift the
    labels by the dual/auxiliary contribution ``tr((L + rho S)' X_i)``
    with the same ``1/(rho+1)`` scaling.
    """
    xv, y = stack_samples(samples)
    p, q = samples[0].x.shape
    if lambda_dual.shape != (p, q) or s_aux.shape != (p, q):
        raise ContractViolation(
            f"dual/auxiliary matrices must be {p}x{q}, got "
            f"{lambda_dual.shape} and {s_aux.shape}")
    scale = 1.0 / (rho + 1.0)
    gram = (xv @ xv.T) * scale
    shift = xv @ (lambda_dual + rho * s_aux).ravel() * scale
    lin_pos = epsilon - y + shift
    lin_neg = epsilon + y - shift
    return DualQp(gram=gram, lin_pos=lin_pos, lin_neg=lin_neg, box=box_c)


def stack_samples(samples):
    """Stack sample predictors into (n, p*q) rows plus the label vector."""
    if len(samples) == 0:
        raise ContractViolation("need at least one sample")
    p, q = samples[0].x.shape
    n = len(samples)
    xv = np.empty((n, p * q))
    y = np.empty(n)
    for i, s in enumerate(samples):
        if s.x.shape != (p, q):
            raise ContractViolation(
                f"sample {i} has shape {s.x.shape}, expected {(p, q)}")
        xv[i] = np.ascontiguousarray(s.x, dtype=np.float64).ravel()
        y[i] = s.y
    if not (np.all(np.isfinite(xv)) and np.all(np.isfinite(y))):
        raise ContractViolation("samples contain non-finite values")
    return xv, y


def solve_linear_svr(samples, box_c, epsilon, kkt_tol=KKT_TOL_DEFAULT,
                     max_passes=None):
    """Fit plain tube-loss SVR on vectorized predictors.

    Uses the unscaled linear kernel ``tr(X_i' X_j)``; the fitted matrix is
    ``sum_i beta_i X_i`` and the offset comes from :func:`recover_bias`.
    """
    from .rmr import RmrModel

    xv, y = stack_samples(samples)
    p, q = samples[0].x.shape
    qp = DualQp(gram=xv @ xv.T, lin_pos=epsilon - y, lin_neg=epsilon + y,
                box=box_c)
    state = solve(qp, kkt_tol=kkt_tol, max_passes=max_passes)
    w = (state.beta @ xv).reshape(p, q)
    b = recover_bias(state, qp, xv @ w.ravel(), y, epsilon)
    return RmrModel(w=w, b=b)
