"""Closed-form VIB analysis for a linear encoder A and a fixed linear decoder B.

With z = A x, z_hat = z + eps and y_hat = B^T z_hat, the VIB loss is a convex
quadratic in A whose minimizer is

    A*(beta) = (B B^T + beta/2 I)^{-1} B y X^T (X X^T)^{-1},

and a two-layer beta-adjusted network reproduces A*(beta) exactly for
every beta.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .hyperlayers import BetaAdjustedDense

COND_LIMIT = 1e12


@dataclass(frozen=True)
class LinearInstance:
    X: np.ndarray  # (n, N), samples as columns
    y: np.ndarray  # (1, N)
    B: np.ndarray  # (d,)
    sigma2: float

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64).reshape(1, -1)
        B = np.asarray(self.B, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "B", B)
        if X.ndim != 2 or y.shape[1] != X.shape[1]:
            raise ValueError(f"X must be (n, N) and y (1, N); got {X.shape} and {y.shape}")
        if X.shape[1] < X.shape[0]:
            raise ValueError("need at least as many samples as input dimensions (N >= n)")
        if not np.any(B):
            raise ValueError("B must be non-zero")
        if self.sigma2 < 0:
            raise ValueError("sigma2 must be non-negative")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def N(self) -> int:
        return self.X.shape[1]

    @property
    def d(self) -> int:
        return self.B.size


def _check_A(A: np.ndarray, inst: LinearInstance) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if A.shape != (inst.d, inst.n):
        raise ValueError(f"A must be {(inst.d, inst.n)}, got {A.shape}")
    return A


def cvib_linear(A, inst: LinearInstance, beta: float) -> float:
    A = _check_A(A, inst)
    s2, d, N = inst.sigma2, inst.d, inst.N
    if s2 <= 0:
        raise ValueError("the closed-form loss needs sigma2 > 0 (it contains -d ln sigma2)")
    Z = A @ inst.X
    resid = inst.y - inst.B @ Z
    data_term = (resid @ resid.T).item() + 0.5 * beta * float(np.sum(Z * Z))
    return data_term / N + s2 * float(inst.B @ inst.B) + 0.5 * beta * (s2 * d - d * math.log(s2) - d)


def grad_wrt_A(A, inst: LinearInstance, beta: float) -> np.ndarray:
    A = _check_A(A, inst)
    B = inst.B[:, None]
    XXt = inst.X @ inst.X.T
    return (-2.0 * B @ inst.y @ inst.X.T + 2.0 * B @ B.T @ A @ XXt + beta * A @ XXt) / inst.N


def _gram_solve_right(M: np.ndarray, X: np.ndarray) -> np.ndarray:
    """M (X X^T)^{-1} through a Cholesky solve."""
    G = X @ X.T
    cond = np.linalg.cond(G)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise np.linalg.LinAlgError(f"X X^T is ill-conditioned (condition number {cond:.3e})")
    L = np.linalg.cholesky(G)
    # M G^{-1} = (G^{-1} M^T)^T, G = L L^T
    W = np.linalg.solve(L, M.T)
    return np.linalg.solve(L.T, W).T


def regression_map(inst: LinearInstance) -> np.ndarray:
    """y X^T (X X^T)^{-1}, a (1, n) row."""
    return _gram_solve_right(inst.y @ inst.X.T, inst.X)


def closed_form_A(inst: LinearInstance, beta: float) -> np.ndarray:
    if not beta > 0:
        raise ValueError("closed_form_A needs beta > 0")
    # rank-one Sherman-Morrison: (B B^T + c I)^{-1} B = B / (||B||^2 + c); a dense
    # solve loses ~cond digits once beta/2 is small against ||B||^2
    B = inst.B[:, None]
    return (B / (float(inst.B @ inst.B) + 0.5 * beta)) @ regression_map(inst)


def orthonormal_completion(b: np.ndarray) -> np.ndarray:
    """Orthogonal U (d, d) whose first column is b / ||b||.

    Remaining columns come from Gram-Schmidt over the standard basis, always
    taking the candidate with the largest residual next.
    """
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    norm = np.linalg.norm(b)
    if norm == 0:
        raise ValueError("cannot complete a basis from the zero vector")
    d = b.size
    basis = [b / norm]
    remaining = list(range(d))
    while len(basis) < d:
        Q = np.array(basis)
        best, best_vec, best_norm = None, None, -1.0
        for j in remaining:
            e = np.zeros(d)
            e[j] = 1.0
            r = e - Q.T @ (Q @ e)
            r = r - Q.T @ (Q @ r)
            rn = np.linalg.norm(r)
            if rn > best_norm:
                best, best_vec, best_norm = j, r, rn
        remaining.remove(best)
        basis.append(best_vec / best_norm)
    return np.array(basis).T


@dataclass
class TwoLayerConstruction:
    """Device network W2(beta) W1(beta) with u1, v1 on layer one and u2 = v2 = 0."""

    W1: np.ndarray
    W2: np.ndarray
    u1: np.ndarray
    v1: np.ndarray
    u2: np.ndarray
    v2: np.ndarray

    def layers(self) -> tuple[BetaAdjustedDense, BetaAdjustedDense]:
        d, n = self.W1.shape
        first = BetaAdjustedDense(n, d, bias=False)
        second = BetaAdjustedDense(d, d, bias=False)
        for layer, W, u, v in ((first, self.W1, self.u1, self.v1), (second, self.W2, self.u2, self.v2)):
            layer.W.data[...] = W
            layer.u.data[...] = u
            layer.v.data[...] = v
        return first, second

    def effective_A(self, beta: float) -> np.ndarray:
        first, second = self.layers()
        W1b, _ = first.effective_params(beta)
        W2b, _ = second.effective_params(beta)
        return W2b @ W1b


def build_theorem_construction(inst: LinearInstance) -> TwoLayerConstruction:
    B = inst.B
    norm = float(np.linalg.norm(B))
    d = inst.d
    U = orthonormal_completion(B)
    sigma = np.zeros((d, 1))
    sigma[0, 0] = norm
    W1 = (sigma @ regression_map(inst)) / norm**2
    return TwoLayerConstruction(
        W1=W1,
        W2=2.0 * U,
        u1=-np.ones(d),
        v1=np.full(d, math.log(2.0) + 2.0 * math.log(norm)),
        u2=np.zeros(d),
        v2=np.zeros(d),
    )


def verify_construction(constr: TwoLayerConstruction, inst: LinearInstance, beta_grid) -> float:
    """Max over the grid of ||W2(beta) W1(beta) - A*(beta)||_F / ||A*(beta)||_F."""
    grid = list(beta_grid)
    if not grid:
        raise ValueError("empty beta grid")
    worst = 0.0
    for beta in grid:
        target = closed_form_A(inst, beta)
        dev = np.linalg.norm(constr.effective_A(beta) - target) / np.linalg.norm(target)
        worst = max(worst, float(dev))
    return worst
