"""Hot numeric kernels, compiled with numba when available.

The working-set loop of the dual QP solver dominates fit time: it is an
inherently sequential scan-select-update iteration, so vectorizing across
steps is impossible and per-step Python overhead adds up. The loop is
therefore written twice with identical iterate semantics:

* ``_smo_pair_loop_scalar`` -- plain scalar loops, compiled with
  ``numba.njit`` when numba is importable and ``ROBMATREG_DISABLE_NUMBA``
  is unset.
* ``_smo_pair_loop_numpy`` -- vectorized numpy fallback used when numba is
  unavailable or disabled via the environment flag.

Both paths use first-occurrence tie-breaking and the same floating-point
operation order per element, so they produce the same iterates.
``benchmarks/bench_smo.py`` times the two against each other.

The loop works on the signed dual variables ``beta = alpha - alpha_star``
of the tube-loss dual

    min  1/2 beta' K beta + lin_pos' alpha + lin_neg' alpha_star
    s.t. sum(beta) = 0,  0 <= alpha, alpha_star <= box,

moving the maximal-violating pair analytically at each step. Keeping only
``beta`` is exact as long as ``lin_pos + lin_neg >= 0`` elementwise (a
non-negative tube), because then the two sides of a pair are never both
active at once; the caller enforces that precondition.
"""

import os

import numpy as np

ENV_FLAG = "ROBMATREG_DISABLE_NUMBA"

# floor for the pair curvature K_ii + K_jj - 2 K_ij on degenerate pairs
_CURV_FLOOR = 1e-12


def _numba_disabled_by_env() -> bool:
    return os.environ.get(ENV_FLAG, "").strip().lower() in ("1", "true", "yes")


def _load_njit():
    if _numba_disabled_by_env():
        return None
    try:
        from numba import njit
    except ImportError:
        return None
    return njit


def _smo_pair_loop_scalar(gram, lin_pos, lin_neg, box, tol, max_steps,
                          beta, grad, obj_trace, record):
    """Run maximal-violating-pair updates in place; return (steps, gap, ok).

    ``grad`` must hold ``gram @ beta`` on entry and is maintained
    incrementally. ``obj_trace[s]`` receives the dual objective after step
    ``s`` when ``record`` is true (``obj_trace[0]`` is the initial value).
    """
    n = gram.shape[0]
    if record:
        acc = 0.0
        for t in range(n):
            bt = beta[t]
            acc += 0.5 * bt * grad[t]
            if bt > 0.0:
                acc += lin_pos[t] * bt
            elif bt < 0.0:
                acc -= lin_neg[t] * bt
        obj_trace[0] = acc
    steps = 0
    while True:
        # Selection: each index contributes one candidate bias bound per
        # direction; the active linear piece of the tube term depends on
        # the sign of beta.
        best_up = -np.inf
        best_lo = np.inf
        i = -1
        j = -1
        for t in range(n):
            bt = beta[t]
            va = -grad[t] - lin_pos[t]
            vs = -grad[t] + lin_neg[t]
            if bt < box:
                v = vs if bt < 0.0 else va
                if v > best_up:
                    best_up = v
                    i = t
            if bt > -box:
                v = va if bt > 0.0 else vs
                if v < best_lo:
                    best_lo = v
                    j = t
        gap = best_up - best_lo
        if gap <= tol:
            return steps, gap, True
        if steps >= max_steps:
            return steps, gap, False

        kappa = gram[i, i] + gram[j, j] - 2.0 * gram[i, j]
        if kappa < _CURV_FLOOR:
            kappa = _CURV_FLOOR
        theta = gap / kappa
        bi = beta[i]
        bj = beta[j]
        # movement rooms stop at the box and at the kink where beta
        # changes sign (the tube term switches linear piece there)
        room_u = (box - bi) if bi >= 0.0 else -bi
        room_v = bj if bj > 0.0 else (box + bj)
        if room_u < theta:
            theta = room_u
        if room_v < theta:
            theta = room_v
        if theta >= room_u:
            new_i = box if bi >= 0.0 else 0.0
        else:
            new_i = bi + theta
        if theta >= room_v:
            new_j = 0.0 if bj > 0.0 else -box
        else:
            new_j = bj - theta
        du = new_i - bi
        dv = new_j - bj
        beta[i] = new_i
        beta[j] = new_j
        for t in range(n):
            grad[t] += du * gram[i, t] + dv * gram[j, t]
        steps += 1
        if record:
            acc = 0.0
            for t in range(n):
                bt = beta[t]
                acc += 0.5 * bt * grad[t]
                if bt > 0.0:
                    acc += lin_pos[t] * bt
                elif bt < 0.0:
                    acc -= lin_neg[t] * bt
            obj_trace[steps] = acc


def _smo_pair_loop_numpy(gram, lin_pos, lin_neg, box, tol, max_steps,
                         beta, grad, obj_trace, record):
    """Vectorized twin of ``_smo_pair_loop_scalar`` (same iterates)."""
    if record:
        obj_trace[0] = dual_objective(lin_pos, lin_neg, beta, grad)
    steps = 0
    while True:
        va = -grad - lin_pos
        vs = -grad + lin_neg
        up = np.where(beta < 0.0, vs, va)
        up = np.where(beta < box, up, -np.inf)
        lo = np.where(beta > 0.0, va, vs)
        lo = np.where(beta > -box, lo, np.inf)
        i = int(np.argmax(up))
        j = int(np.argmin(lo))
        gap = float(up[i] - lo[j])
        if gap <= tol:
            return steps, gap, True
        if steps >= max_steps:
            return steps, gap, False

        kappa = gram[i, i] + gram[j, j] - 2.0 * gram[i, j]
        if kappa < _CURV_FLOOR:
            kappa = _CURV_FLOOR
        theta = gap / kappa
        bi = beta[i]
        bj = beta[j]
        room_u = (box - bi) if bi >= 0.0 else -bi
        room_v = bj if bj > 0.0 else (box + bj)
        if room_u < theta:
            theta = room_u
        if room_v < theta:
            theta = room_v
        if theta >= room_u:
            new_i = box if bi >= 0.0 else 0.0
        else:
            new_i = bi + theta
        if theta >= room_v:
            new_j = 0.0 if bj > 0.0 else -box
        else:
            new_j = bj - theta
        du = new_i - bi
        dv = new_j - bj
        beta[i] = new_i
        beta[j] = new_j
        grad += du * gram[i] + dv * gram[j]
        steps += 1
        if record:
            obj_trace[steps] = dual_objective(lin_pos, lin_neg, beta, grad)


def dual_objective(lin_pos, lin_neg, beta, grad):
    """Dual objective value given ``grad = gram @ beta``."""
    alpha = np.maximum(beta, 0.0)
    alpha_star = np.maximum(-beta, 0.0)
    return float(0.5 * beta @ grad + lin_pos @ alpha + lin_neg @ alpha_star)


_njit = _load_njit()
NUMBA_ENABLED = _njit is not None

if NUMBA_ENABLED:
    smo_pair_loop = _njit(cache=True)(_smo_pair_loop_scalar)
else:
    smo_pair_loop = _smo_pair_loop_numpy
