"""Quadratic-loss machinery for layer-wise weight compression.

A layer with weights ``W`` (n x m) and calibration inputs ``X`` (m x p)
induces the layer-output loss ``||W X - What X||^2``. Its Hessian over a
weight row is ``H = 2 X X^T``. Adding a Gaussian rate proxy with strength
``lam * gamma`` turns this into the regularized form

    H' = H_d + lam * gamma * I        (H_d = H damped by a relative ridge)
    W' = W H_d (H')^-1

and completing the square rewrites the loss as
``0.5 * Tr[(W' - What) H' (W' - What)^T] + const``. The Cholesky-style
factor ``C'`` (upper triangular, ``C'^T C' = (H')^-1``) drives the
per-entry weight updates in the quantization engine.

All arithmetic is 64-bit; 32-bit inputs are widened on entry.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from .errors import FactorizationError, ShapeError

# Population variance below this is treated as degenerate when deriving gamma.
VAR_FLOOR = 1e-30

# Relative ridge added to the Hessian diagonal before regularization.
DEFAULT_DAMPING = 1e-2


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate and widen an array to a 2-D float64 C-contiguous matrix."""
    m = np.ascontiguousarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name}: expected 2-D array, got ndim={m.ndim}")
    if m.size == 0:
        raise ShapeError(f"{name}: empty matrix")
    if not np.all(np.isfinite(m)):
        raise ShapeError(f"{name}: contains non-finite entries")
    return m


@dataclass(frozen=True)
class LayerContext:
    """Regularized per-layer state consumed by the quantization engine.

    Attributes:
        w_prime: regularized weights ``W' = W H_d (H')^-1`` (n x m).
        chol_upper: upper-triangular ``C'`` with ``C'^T C' = (H')^-1``;
            strictly positive diagonal.
        gamma: Gaussian rate-proxy scale (1 / (ln 2 * Var(W)); 0 disables
            regularized updates).
        lam: rate-distortion trade-off weight.
        damping_delta: relative ridge applied to the Hessian diagonal.
        hessian_reg: the regularized Hessian ``H'`` itself (kept for
            verification code; the engine only needs ``chol_upper``).
    """

    w_prime: np.ndarray
    chol_upper: np.ndarray
    gamma: float
    lam: float
    damping_delta: float
    hessian_reg: np.ndarray


def accumulate_hessian(activation_batches: Sequence[np.ndarray]) -> np.ndarray:
    """Accumulate ``H = 2 * sum_b X_b X_b^T`` over activation batches.

    Every batch must be m x p_b with a common m. The result is
    symmetrized to cancel floating-point drift, so ``H == H.T`` exactly.
    """
    batches = [as_matrix(b, f"activation batch {i}") for i, b in enumerate(activation_batches)]
    if not batches:
        raise ShapeError("accumulate_hessian: need at least one batch")
    m = batches[0].shape[0]
    h = np.zeros((m, m), dtype=np.float64)
    for i, x in enumerate(batches):
        if x.shape[0] != m:
            raise ShapeError(
                f"accumulate_hessian: batch {i} has {x.shape[0]} rows, expected {m}"
            )
        h += 2.0 * (x @ x.T)
    return (h + h.T) / 2.0


def compute_gamma(weights) -> float:
    """Rate-proxy scale ``1 / (ln 2 * Var(W))`` from a Gaussian fit.

    Uses the population variance of all entries. Variance below
    ``VAR_FLOOR`` is clamped to keep the result finite for (near-)constant
    matrices.
    """
    w = as_matrix(weights, "weights")
    var = float(np.var(w))
    if var < VAR_FLOOR:
        var = VAR_FLOOR
    return 1.0 / (np.log(2.0) * var)


def build_context(
    weights,
    hessian,
    lam: float,
    damping_delta: float = DEFAULT_DAMPING,
    gamma: Optional[float] = None,
) -> LayerContext:
    """Build the regularized layer context from weights and Hessian.

    With ``H_d = H + damping_delta * mean(diag(H)) * I`` and
    ``H' = H_d + lam * gamma * I``, computes ``W' = W H_d (H')^-1`` and the
    upper-triangular ``C'`` with ``C'^T C' = (H')^-1``.

    ``gamma`` defaults to :func:`compute_gamma` of the weights; pass ``0.0``
    to force unregularized weight updates.

    Raises:
        FactorizationError: ``H'`` is numerically singular; raise
            ``damping_delta`` and retry.
    """
    w = as_matrix(weights, "weights")
    h = as_matrix(hessian, "hessian")
    if h.shape[0] != h.shape[1]:
        raise ShapeError(f"hessian must be square, got {h.shape}")
    if w.shape[1] != h.shape[0]:
        raise ShapeError(
            f"weights cols ({w.shape[1]}) must match hessian size ({h.shape[0]})"
        )
    if lam < 0 or damping_delta < 0:
        raise ShapeError("lam and damping_delta must be nonnegative")
    if gamma is None:
        gamma = compute_gamma(w)
    m = h.shape[0]

    h_d = h.copy()
    if damping_delta > 0:
        h_d[np.diag_indices(m)] += damping_delta * float(np.mean(np.diag(h)))
    ridge = lam * gamma
    h_reg = h_d.copy()
    if ridge > 0:
        h_reg[np.diag_indices(m)] += ridge

    try:
        cf = scipy.linalg.cho_factor(h_reg, lower=True, check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        raise FactorizationError(
            "regularized Hessian is numerically singular; "
            "raise damping_delta and retry"
        ) from exc

    h_inv = scipy.linalg.cho_solve(cf, np.eye(m), check_finite=False)
    h_inv = (h_inv + h_inv.T) / 2.0
    try:
        chol_upper = np.linalg.cholesky(h_inv).T
    except np.linalg.LinAlgError as exc:
        raise FactorizationError(
            "inverse of the regularized Hessian lost positive definiteness; "
            "raise damping_delta and retry"
        ) from exc

    if ridge == 0:
        # H' == H_d, so W H_d (H')^-1 == W exactly; skip the solve to keep
        # the identity bit-exact.
        w_prime = w.copy()
    else:
        w_prime = scipy.linalg.cho_solve(cf, (w @ h_d).T, check_finite=False).T

    return LayerContext(
        w_prime=w_prime,
        chol_upper=np.ascontiguousarray(chol_upper),
        gamma=float(gamma),
        lam=float(lam),
        damping_delta=float(damping_delta),
        hessian_reg=h_reg,
    )
