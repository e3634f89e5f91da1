"""Dense linear-algebra primitives for spectral weight control.

The two routes to the spectral norm are deliberately independent:
``power_iteration`` is the fast estimator used during training, while
``spectral_norm_oracle`` goes through a dense symmetric
eigendecomposition and serves as the ground truth in tests and at
model-finalization checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SIGMA_FLOOR = 1e-12


def as_matrix(a) -> np.ndarray:
    """Coerce to a finite 2-D float64 array."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ValueError(f"expected a 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix entries must be finite")
    return m


def as_vector(a) -> np.ndarray:
    """Coerce to a finite 1-D float64 array."""
    v = np.asarray(a, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] < 1:
        raise ValueError(f"expected a 1-D vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector entries must be finite")
    return v


@dataclass
class PowerIterState:
    """Persistent left/right singular-vector estimates for one weight matrix.

    ``u`` and ``v`` are unit vectors; ``sigma_estimate`` converges toward
    the largest singular value as ``power_iteration`` refines the state.
    """

    u: np.ndarray
    v: np.ndarray
    sigma_estimate: float


@dataclass(frozen=True)
class LipschitzBounds:
    """Two-sided distance-distortion bounds for a residual stack whose
    blocks are each ``alpha``-Lipschitz: lower = (1-alpha)^(depth-1),
    upper = (1+alpha)^(depth-1)."""

    lower: float
    upper: float
    alpha: float
    depth: int


def init_power_state(W, rng: np.random.Generator) -> PowerIterState:
    """Fresh state for ``W`` with ``u`` drawn from ``rng`` (unit Gaussian,
    normalized) and ``v`` aligned to it through one half-step."""
    W = as_matrix(W)
    if not np.any(W):
        raise ValueError("degenerate weight matrix: spectral norm is zero")
    u = rng.standard_normal(W.shape[0])
    u /= np.linalg.norm(u)
    v = W.T @ u
    nv = np.linalg.norm(v)
    if nv == 0.0:
        v = _fallback_direction(W.shape[1])
    else:
        v /= nv
    sigma = float(u @ W @ v)
    return PowerIterState(u=u, v=v, sigma_estimate=max(sigma, 0.0))


def _fallback_direction(dim: int) -> np.ndarray:
    # Deterministic restart used when an iterate lands in a null space.
    d = np.arange(1.0, dim + 1.0)
    return d / np.linalg.norm(d)


def power_iteration(W, state: PowerIterState, steps: int, tol: float) -> PowerIterState:
    """Refine ``state`` toward the top singular pair of ``W``.

    Iterates on the smaller Gram matrix of W, squaring it each step
    before advancing the warm-started singular-vector estimate, so the
    subdominant components decay doubly exponentially and near-tied top
    singular values still converge within a few dozen steps. Stops early
    once successive sigma estimates differ by less than ``tol``. Dense,
    cubic per step. Mutates and returns ``state``.
    """
    W = as_matrix(W)
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    if not np.any(W):
        raise ValueError("degenerate weight matrix: spectral norm is zero")
    if state.u.shape != (W.shape[0],) or state.v.shape != (W.shape[1],):
        raise ValueError(
            f"state dimensions {state.u.shape[0]}x{state.v.shape[0]} "
            f"do not match matrix {W.shape[0]}x{W.shape[1]}"
        )

    rows, cols = W.shape
    right_side = cols <= rows  # iterate in the smaller space
    if right_side:
        B = W.T @ W
        x = state.v
    else:
        B = W @ W.T
        x = state.u

    sigma_prev = None
    for _ in range(steps):
        B = B @ B
        nB = np.linalg.norm(B)
        if nB == 0.0:
            break  # trailing modes underflowed; x is already converged
        B = B / nB
        y = B @ x
        ny = np.linalg.norm(y)
        x = _fallback_direction(x.size) if ny == 0.0 else y / ny
        sigma = float(np.linalg.norm(W @ x if right_side else W.T @ x))
        if sigma_prev is not None and abs(sigma - sigma_prev) < tol:
            sigma_prev = sigma
            break
        sigma_prev = sigma

    # Recover the complementary singular vector from the original matrix.
    if right_side:
        v = x
        u = W @ v
        nu = np.linalg.norm(u)
        u = _fallback_direction(rows) if nu == 0.0 else u / nu
    else:
        u = x
        v = W.T @ u
        nv = np.linalg.norm(v)
        v = _fallback_direction(cols) if nv == 0.0 else v / nv
    state.u, state.v = u, v
    state.sigma_estimate = max(float(u @ W @ v), 0.0)
    return state


def spectral_norm_oracle(W) -> float:
    """Largest singular value of ``W`` to machine precision.

    Computed from the dense symmetric eigendecomposition of the smaller
    of W^T W / W W^T; shares no code with ``power_iteration``.
    """
    W = as_matrix(W)
    gram = W.T @ W if W.shape[1] <= W.shape[0] else W @ W.T
    top = float(np.linalg.eigvalsh(gram)[-1])
    return float(np.sqrt(max(top, 0.0)))


def normalize_spectral(W, sigma: float) -> np.ndarray:
    """Divide every entry of ``W`` by ``sigma``.

    When ``sigma`` is the true spectral norm, the result has spectral
    norm exactly 1. Degenerate sigmas (<= SIGMA_FLOOR, or non-finite)
    are rejected so dead layers surface instead of silently passing.
    """
    W = as_matrix(W)
    if not np.isfinite(sigma) or sigma < SIGMA_FLOOR:
        raise ValueError(f"degenerate spectral norm {sigma!r}: cannot normalize")
    return W / sigma


def lipschitz_bounds(alpha: float, depth: int) -> LipschitzBounds:
    """Distance-distortion envelope of a depth-``depth`` residual stack
    whose per-block maps are ``alpha``-Lipschitz, 0 < alpha <= 1."""
    if not (0.0 < alpha <= 1.0):
        raise ValueError(f"alpha must be in (0, 1], got {alpha!r}")
    if depth < 1:
        raise ValueError("depth must be >= 1")
    return LipschitzBounds(
        lower=(1.0 - alpha) ** (depth - 1),
        upper=(1.0 + alpha) ** (depth - 1),
        alpha=alpha,
        depth=depth,
    )
