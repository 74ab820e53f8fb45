"""MMRM parameters in marginal ``(alpha, Sigma)`` and sequential form."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import LdlFactors, from_sequential, ldl_decompose


@dataclass(frozen=True)
class MarginalParams:
    """``y_i ~ N(alpha @ x_i, Sigma)`` with ``x_i = (1, x_i1..x_id, g_i)``."""

    alpha: np.ndarray
    Sigma: np.ndarray

    @property
    def delta(self) -> np.ndarray:
        """Per-visit treatment effects (last column of ``alpha``)."""
        return self.alpha[:, -1]

    def to_sequential(self) -> "SequentialParams":
        return SequentialParams.from_marginal(self)


@dataclass(frozen=True)
class SequentialParams:
    """Per-visit regressions ``y_j | y_<j, x ~ N(ualpha_j'x + beta_j'y_<j, 1/gamma_j)``.

    ``ualpha`` is ``p x q``; ``beta`` is ``p x p`` strictly lower triangular
    with ``beta[j, t]`` the coefficient of visit ``t`` in visit ``j``'s
    regression; ``gamma`` holds the residual precisions.
    """

    ualpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray

    @property
    def p(self) -> int:
        return self.gamma.shape[0]

    @property
    def q(self) -> int:
        return self.ualpha.shape[1]

    def factors(self) -> LdlFactors:
        f = self.__dict__.get("_factors")
        if f is None:
            f = from_sequential(self.beta, self.gamma)
            object.__setattr__(self, "_factors", f)
        return f

    @property
    def udelta(self) -> np.ndarray:
        """Treatment coefficients of the sequential regressions."""
        return self.ualpha[:, -1]

    @property
    def delta(self) -> np.ndarray:
        """Marginal per-visit treatment effects."""
        return self.factors().L @ self.udelta

    def theta(self, j: int) -> np.ndarray:
        """Coefficients of visit ``j`` on ``z = (x, y_0..y_{j-1})``."""
        return np.r_[self.ualpha[j], self.beta[j, :j]]

    def to_marginal(self) -> MarginalParams:
        f = self.factors()
        return MarginalParams(alpha=f.L @ self.ualpha, Sigma=f.covariance())

    @classmethod
    def from_marginal(cls, mp: MarginalParams) -> "SequentialParams":
        f = ldl_decompose(mp.Sigma)
        return cls(ualpha=f.U @ mp.alpha, beta=f.beta, gamma=f.gamma)

    def flat(self) -> np.ndarray:
        """Every ``theta_j`` then ``gamma_j`` scalar, in :func:`param_names` order."""
        out = []
        for j in range(self.p):
            out.extend(self.theta(j))
            out.append(self.gamma[j])
        return np.array(out)

    @classmethod
    def from_flat(cls, values, p: int, q: int) -> "SequentialParams":
        values = np.asarray(values, dtype=float)
        ualpha = np.zeros((p, q))
        beta = np.zeros((p, p))
        gamma = np.zeros(p)
        pos = 0
        for j in range(p):
            ualpha[j] = values[pos:pos + q]
            beta[j, :j] = values[pos + q:pos + q + j]
            gamma[j] = values[pos + q + j]
            pos += q + j + 1
        return cls(ualpha, beta, gamma)


def param_names(p: int, d: int) -> list[str]:
    """Column names for a flattened :class:`SequentialParams` (visits 1-based)."""
    names = []
    for j in range(1, p + 1):
        z = ["int"] + [f"x{k}" for k in range(1, d + 1)] + ["g"] + [f"y{t}" for t in range(1, j)]
        names.extend(f"theta{j}_{c}" for c in z)
        names.append(f"gamma{j}")
    return names
