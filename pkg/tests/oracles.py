"""Independent reference computations used to pin expected test values.

Everything here deliberately avoids the closed forms under test: the
scalar prox is solved by subgradient bisection, the dual QP by projected
gradient with exact projection, and the regression-matrix subproblem by
plain subgradient descent plus an exact one-dimensional offset polish.
"""

import numpy as np


def prox_scalar(m, t, iters=200):
    """Minimize ``t*|z| + 0.5*(z - m)^2`` by bisection on the subgradient.

    Works elementwise on arrays. Independent of the shrinkage formula.
    """
    m = np.asarray(m, dtype=np.float64)
    lo = np.full(m.shape, -1.0) * (np.abs(m) + t + 1.0)
    hi = -lo

    def subgrad(z):
        return z - m + t * np.sign(z)

    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        g = subgrad(mid)
        hi = np.where(g >= 0.0, mid, hi)
        lo = np.where(g < 0.0, mid, lo)
    return 0.5 * (lo + hi)


def project_box_hyperplane(v, box):
    """Exact projection onto ``{0 <= x <= box, sum(alpha) = sum(alpha*)}``
    for stacked ``x = [alpha; alpha*]``.

    The multiplier equation ``a' clip(v - nu a, 0, box) = 0`` is piecewise
    linear and non-increasing in nu, so solve it exactly on its kink grid.
    """
    n2 = v.shape[0]
    a = np.ones(n2)
    a[n2 // 2:] = -1.0

    def constraint(nu):
        return float(a @ np.clip(v - nu * a, 0.0, box))

    kinks = np.unique(np.concatenate([v * a, (v - box) * a]))
    vals = np.array([constraint(nu) for nu in kinks])
    if vals[-1] >= 0.0:  # unreachable for box > 0; numerical safety only
        nu = kinks[-1]
    elif vals[0] <= 0.0:
        nu = kinks[0]
    else:
        hi = int(np.argmax(vals <= 0.0))
        lo = hi - 1
        g_lo, g_hi = vals[lo], vals[hi]
        if g_lo == g_hi:
            nu = kinks[lo]
        else:
            nu = kinks[lo] + (kinks[hi] - kinks[lo]) * g_lo / (g_lo - g_hi)
    return np.clip(v - nu * a, 0.0, box)


def qp_objective(qp, x):
    n = qp.n
    alpha, alpha_star = x[:n], x[n:]
    beta = alpha - alpha_star
    return float(0.5 * beta @ (qp.gram @ beta)
                 + qp.lin_pos @ alpha + qp.lin_neg @ alpha_star)


def qp_projected_gradient(qp, iters=20000):
    """Accelerated projected gradient on the stacked dual with objective
    restart; returns the best feasible objective value seen."""
    n = qp.n
    eigs = np.linalg.eigvalsh(qp.gram)
    lip = max(2.0 * float(eigs.max(initial=0.0)), 1e-9)
    x = np.zeros(2 * n)
    y = x.copy()
    t = 1.0
    best = prev = qp_objective(qp, x)
    for _ in range(iters):
        beta = y[:n] - y[n:]
        kb = qp.gram @ beta
        grad = np.concatenate([kb + qp.lin_pos, -kb + qp.lin_neg])
        x_new = project_box_hyperplane(y - grad / lip, qp.box)
        val = qp_objective(qp, x_new)
        if val > prev:  # momentum overshoot: restart
            t = 1.0
            y = x.copy()
            prev = qp_objective(qp, x)
            continue
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = x_new + ((t - 1.0) / t_new) * (x_new - x)
        x, t, prev = x_new, t_new, val
        if val < best:
            best = val
    return best


def subproblem_objective(w, b, xv, y, lambda_hat, s_hat, params):
    """Direct evaluation of the regression-matrix subproblem objective."""
    pred = xv @ w.ravel() + b
    tube = np.maximum(np.abs(pred - y) - params.epsilon, 0.0)
    return (0.5 * float(np.sum(w * w)) + params.box_c * float(np.sum(tube))
            - float(np.sum(lambda_hat * w))
            + 0.5 * params.rho * float(np.sum((w - s_hat) ** 2)))


def polish_offset(w, xv, y, epsilon, box_c):
    """Exact 1-D minimization of the tube loss over the offset.

    The loss is convex piecewise linear in the offset, so its minimum is
    attained on the grid of tube-edge breakpoints.
    """
    a = xv @ w.ravel() - y
    candidates = np.concatenate([-a - epsilon, -a + epsilon])

    def loss(b):
        return box_c * float(np.sum(np.maximum(np.abs(a + b) - epsilon, 0.0)))

    vals = [loss(b) for b in candidates]
    return float(candidates[int(np.argmin(vals))])


def subproblem_subgradient_descent(xv, y, shape, lambda_hat, s_hat, params,
                                   iters=200000, step0=0.05):
    """Subgradient descent on (W, b) for the regression-matrix subproblem.

    Returns ``(w, b, objective)`` of the best iterate found, with the
    offset polished exactly at checkpoints.
    """
    p, q = shape
    w = np.zeros((p, q))
    b = 0.0
    best = (w.copy(), b, subproblem_objective(w, b, xv, y, lambda_hat,
                                              s_hat, params))
    n = xv.shape[0]
    for k in range(iters):
        pred = xv @ w.ravel() + b
        r = pred - y
        g = np.where(np.abs(r) > params.epsilon, np.sign(r), 0.0)
        gw = (w - lambda_hat + params.rho * (w - s_hat)
              + params.box_c * (g @ xv).reshape(p, q))
        gb = params.box_c * float(np.sum(g))
        step = step0 / np.sqrt(k + 1.0)
        w = w - step * gw
        b = b - step * gb
        if k % 500 == 0 or k == iters - 1:
            b_pol = polish_offset(w, xv, y, params.epsilon, params.box_c)
            for bb in (b, b_pol):
                val = subproblem_objective(w, bb, xv, y, lambda_hat, s_hat,
                                           params)
                if val < best[2]:
                    best = (w.copy(), bb, val)
    return best


def fd_gradient(f, x, h):
    """Dense central-difference gradient of a scalar function of an array."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        xp = x.copy()
        xm = x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2.0 * h)
        it.iternext()
    return g
