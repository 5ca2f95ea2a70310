"""Dense matrix primitives and the two proximal operators used by the solvers.

Matrices are 2-D float64 C-ordered (row-major) numpy arrays throughout;
``vec`` of a matrix always means row-major flattening (``.ravel()``).
All functions are pure and never admit or produce NaN/Inf.
"""

from typing import NamedTuple

import numpy as np

from .exceptions import ContractViolation, NumericalError

# singular values below SIGMA_TRUNC * sigma_max are treated as exact zeros,
# which keeps rank decisions stable under thresholding
SIGMA_TRUNC = 1e-12


class SvdFactors(NamedTuple):
    """Thin SVD ``u @ diag(sigma) @ v.T`` with orthonormal u, v columns."""

    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray


def as_matrix(m, name="matrix"):
    """Validate and return ``m`` as a finite 2-D float64 array."""
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise ContractViolation(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ContractViolation(f"{name} contains non-finite entries")
    return a


def svd(m):
    """Thin SVD of a finite matrix.

    Singular values smaller than ``SIGMA_TRUNC`` times the largest one are
    truncated to exact zeros. Raises NumericalError if the underlying
    factorization does not converge.
    """
    a = as_matrix(m)
    try:
        u, s, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD failed to converge: {exc}") from exc
    if s.size and s[0] > 0.0:
        s = np.where(s < SIGMA_TRUNC * s[0], 0.0, s)
    return SvdFactors(u=u, sigma=s, v=vt.T.copy())


def singular_value_shrink(m, threshold):
    """Shrink every singular value of ``m`` toward zero by ``threshold``.

    This is the proximal operator of ``threshold * ||.||_*`` at ``m``:
    the nuclear norm of the result never exceeds the input's.
    """
    if threshold < 0.0:
        raise ContractViolation(f"threshold must be >= 0, got {threshold}")
    u, s, v = svd(m)
    shrunk = np.maximum(s - threshold, 0.0)
    return (u * shrunk) @ v.T


def soft_threshold(m, threshold):
    """Elementwise ``sign(e) * max(|e| - threshold, 0)``."""
    if threshold < 0.0:
        raise ContractViolation(f"threshold must be >= 0, got {threshold}")
    a = as_matrix(m)
    return np.sign(a) * np.maximum(np.abs(a) - threshold, 0.0)


def trace_inner(a, b):
    """``tr(a' b) = sum_ij a_ij b_ij`` for same-shaped matrices."""
    x = as_matrix(a, "a")
    y = as_matrix(b, "b")
    if x.shape != y.shape:
        raise ContractViolation(f"shape mismatch: {x.shape} vs {y.shape}")
    return float(np.sum(x * y))


def norms(m):
    """Return ``(frobenius, nuclear)`` norms of ``m``.

    Always ``nuclear >= frobenius >= 0``, with equality iff rank <= 1.
    """
    a = as_matrix(m)
    fro = float(np.linalg.norm(a))
    nuc = float(np.sum(svd(a).sigma))
    return fro, nuc


def save_matrix_csv(m, path):
    """Write a matrix as plain CSV: one row per line, no header."""
    a = as_matrix(m)
    with open(path, "w", encoding="ascii") as fh:
        for row in a:
            fh.write(",".join(repr(float(v)) for v in row))
            fh.write("\n")


def load_matrix_csv(path):
    """Read a matrix written by :func:`save_matrix_csv`."""
    rows = []
    width = None
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            if width is None:
                width = len(cells)
            elif len(cells) != width:
                raise ContractViolation(
                    f"{path}: row {lineno} has {len(cells)} cells, expected {width}")
            try:
                rows.append([float(c) for c in cells])
            except ValueError as exc:
                raise ContractViolation(f"{path}: row {lineno}: {exc}") from exc
    if not rows:
        raise ContractViolation(f"{path}: empty matrix file")
    return as_matrix(np.array(rows, dtype=np.float64), path)
