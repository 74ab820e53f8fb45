"""Dense kernels for the sequential-regression view of a covariance matrix.

A covariance ``Sigma`` is written as ``L @ diag(1/gamma) @ L.T`` with
``L = inv(U)`` and ``U`` unit lower triangular. Row ``j`` of ``U`` holds
``-beta_j``: the coefficients of visit ``j`` regressed on visits ``0..j-1``.
``gamma[j]`` is the precision of that regression's residual.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular


class FactorizationError(np.linalg.LinAlgError):
    """Matrix is not (numerically) symmetric positive definite."""


@dataclass(frozen=True)
class LdlFactors:
    U: np.ndarray
    gamma: np.ndarray
    L: np.ndarray

    @property
    def beta(self) -> np.ndarray:
        """Strictly lower triangular regression coefficients, ``-U`` off-diagonal."""
        return np.eye(self.U.shape[0]) - self.U

    @property
    def Lambda(self) -> np.ndarray:
        return np.diag(1.0 / self.gamma)

    def covariance(self) -> np.ndarray:
        return (self.L / self.gamma) @ self.L.T


@dataclass(frozen=True)
class PatternBlocks:
    """``U``, ``L`` and ``Lambda`` cut after the first ``s`` visits."""

    s: int
    U11: np.ndarray
    U21: np.ndarray
    U22: np.ndarray
    L22: np.ndarray
    Lambda2: np.ndarray

    @property
    def regression(self) -> np.ndarray:
        """``Sigma21 @ inv(Sigma11)``, i.e. ``-L22 @ U21``."""
        return -self.L22 @ self.U21

    @property
    def conditional_cov(self) -> np.ndarray:
        """Covariance of visits ``s..p-1`` given visits ``0..s-1``."""
        return self.L22 @ self.Lambda2 @ self.L22.T


def ldl_decompose(Sigma: np.ndarray) -> LdlFactors:
    """Unpivoted LDL' factorization in the sequential-regression layout.

    Raises :class:`FactorizationError` when a pivot falls to or below
    ``1e-12 * trace(Sigma) / p``.
    """
    S = np.asarray(Sigma, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise FactorizationError("Sigma must be square")
    p = S.shape[0]
    if not np.allclose(S, S.T, rtol=1e-10, atol=1e-12 * max(1.0, np.abs(S).max())):
        raise FactorizationError("Sigma is not symmetric")
    tol = 1e-12 * np.trace(S) / p
    L = np.eye(p)
    dvec = np.zeros(p)
    for j in range(p):
        dvec[j] = S[j, j] - (L[j, :j] ** 2) @ dvec[:j]
        if not dvec[j] > tol:
            raise FactorizationError(f"non-positive pivot at index {j}")
        for i in range(j + 1, p):
            L[i, j] = (S[i, j] - (L[i, :j] * L[j, :j]) @ dvec[:j]) / dvec[j]
    U = solve_triangular(L, np.eye(p), lower=True, unit_diagonal=True)
    return LdlFactors(U=U, gamma=1.0 / dvec, L=L)


def from_sequential(beta: np.ndarray, gamma: np.ndarray) -> LdlFactors:
    """Build factors from regression coefficients and precisions."""
    beta = np.asarray(beta, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    p = gamma.shape[0]
    U = np.eye(p) - np.tril(beta, -1)
    L = solve_triangular(U, np.eye(p), lower=True, unit_diagonal=True)
    return LdlFactors(U=U, gamma=gamma.copy(), L=L)


def pattern_blocks(f: LdlFactors, s: int) -> PatternBlocks:
    p = f.U.shape[0]
    if not 0 <= s < p:
        raise ValueError(f"pattern s={s} outside 0..{p - 1}")
    return PatternBlocks(
        s=s,
        U11=f.U[:s, :s],
        U21=f.U[s:, :s],
        U22=f.U[s:, s:],
        # inverse of a block lower-triangular matrix keeps L22 = inv(U22)
        L22=f.L[s:, s:],
        Lambda2=np.diag(1.0 / f.gamma[s:]),
    )


# ---------------------------------------------------------------------------
# Random draws
# ---------------------------------------------------------------------------

def draw_mvn(mean, chol_factor, rng: np.random.Generator) -> np.ndarray:
    mean = np.asarray(mean, dtype=float)
    return mean + np.asarray(chol_factor, dtype=float) @ rng.standard_normal(mean.shape[0])


def draw_chisq(df, rng: np.random.Generator, size=None):
    return rng.gamma(np.asarray(df) / 2.0, 2.0, size=size)


def draw_wishart_factor(scale_factor: np.ndarray, df: float, rng: np.random.Generator) -> np.ndarray:
    """Square ``T`` with ``T @ T.T ~ Wishart(df, C @ C.T)`` by the Bartlett construction.

    ``scale_factor`` is any square ``C``; it need not be triangular.
    """
    k = scale_factor.shape[0]
    A = np.tril(rng.standard_normal((k, k)), -1)
    A[np.diag_indices(k)] = np.sqrt(draw_chisq(df - np.arange(k), rng))
    return scale_factor @ A


def draw_inverse_wishart(scale: np.ndarray, df: float, rng: np.random.Generator) -> np.ndarray:
    """Draw ``Sigma ~ W^{-1}(scale, df)``, mean ``scale / (df - k - 1)``.

    ``W = inv(Sigma)`` is drawn from the Wishart with scale ``inv(scale)`` by
    the Bartlett decomposition and inverted through its factor.
    """
    scale = np.asarray(scale, dtype=float)
    k = scale.shape[0]
    if not df > k - 1:
        raise ValueError(f"inverse-Wishart needs df > {k - 1}, got {df}")
    try:
        c = np.linalg.cholesky(scale)
    except np.linalg.LinAlgError:
        raise FactorizationError("inverse-Wishart scale is not positive definite") from None
    # With inv(scale) = C C', C = inv(c).T and W = (C A)(C A)':
    # inv(W) = (c inv(A).T)(c inv(A).T)'
    A = draw_wishart_factor(np.eye(k), df, rng)
    K = c @ solve_triangular(A, np.eye(k), lower=True).T
    return K @ K.T
