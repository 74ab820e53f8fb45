"""Normal-inverse-Wishart priors for the MMRM and their sequential form.

The prior on ``(alpha, Sigma)`` is ``Sigma ~ W^{-1}(A, nu0)`` and
``vec(alpha) | Sigma ~ N(vec(alpha0), pinv(M) kron Sigma)``. Covariates with
a zero row/column in ``M`` get a flat prior.

The same prior can be expressed on the joint vector ``w = (x~, y)`` of
covariates (without intercept) and outcomes, treated as multivariate
normal; :func:`build_augmented` constructs it so that the outcome part of
that joint posterior coincides with the MMRM posterior.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _check_psd(name: str, X: np.ndarray) -> None:
    if X.ndim != 2 or X.shape[0] != X.shape[1]:
        raise ValueError(f"{name} must be square")
    scale = max(1.0, float(np.abs(X).max(initial=0.0)))
    if not np.allclose(X, X.T, atol=1e-12 * scale):
        raise ValueError(f"{name} must be symmetric")
    if X.size and np.linalg.eigvalsh(X).min() < -1e-10 * scale:
        raise ValueError(f"{name} must be positive semidefinite")


@dataclass(frozen=True)
class PriorSpec:
    A: np.ndarray
    nu0: float
    alpha0: np.ndarray
    M: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        alpha0 = np.atleast_2d(np.asarray(self.alpha0, dtype=float))
        M = np.atleast_2d(np.asarray(self.M, dtype=float))
        p, q = alpha0.shape
        if A.shape != (p, p):
            raise ValueError(f"A must be {p} x {p}")
        if M.shape != (q, q):
            raise ValueError(f"M must be {q} x {q}")
        _check_psd("A", A)
        _check_psd("M", M)
        flat = np.all(M == 0, axis=0)
        if np.any(alpha0[:, flat] != 0):
            raise ValueError("alpha0 must be zero in columns where M is zero (flat prior)")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "alpha0", alpha0)
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "nu0", float(self.nu0))

    @property
    def p(self) -> int:
        return self.alpha0.shape[0]

    @property
    def q(self) -> int:
        return self.alpha0.shape[1]

    @property
    def r(self) -> int:
        return int(np.linalg.matrix_rank(self.M)) if np.any(self.M) else 0


def jeffreys(p: int, q: int) -> PriorSpec:
    """``p(alpha, Sigma) ∝ |Sigma|^{-(p+1)/2}``."""
    return PriorSpec(A=np.zeros((p, p)), nu0=0.0, alpha0=np.zeros((p, q)), M=np.zeros((q, q)))


def flat_mean_prior(p: int, q: int, nu0: float = 0.0, A=None) -> PriorSpec:
    """Flat prior on ``alpha`` with an inverse-Wishart part ``(A, nu0)``."""
    A = np.zeros((p, p)) if A is None else A
    return PriorSpec(A=A, nu0=nu0, alpha0=np.zeros((p, q)), M=np.zeros((q, q)))


@dataclass(frozen=True)
class AugmentedPrior:
    """NIW prior on the joint mean/covariance of ``w = (x~, y)``.

    ``Sigma_w ~ W^{-1}(A_w, nu_w)``; ``alpha_w | Sigma_w ~ N(alpha_w0, Sigma_w / m11)``
    when ``m11 > 0`` and flat otherwise.
    """

    A_w: np.ndarray
    nu_w: float
    alpha_w0: np.ndarray
    m11: float

    @property
    def dim(self) -> int:
        return self.A_w.shape[0]

    @property
    def m11_pinv(self) -> float:
        return 1.0 / self.m11 if self.m11 > 0 else 0.0

    def as_prior_spec(self) -> PriorSpec:
        """The same prior written as an intercept-only MMRM on ``w``."""
        return PriorSpec(
            A=self.A_w, nu0=self.nu_w, alpha0=self.alpha_w0[:, None], M=np.array([[self.m11]])
        )


def build_augmented(ps: PriorSpec) -> AugmentedPrior:
    M = ps.M
    q = ps.q
    m11 = float(M[0, 0])
    M12, M21, M22 = M[0, 1:], M[1:, 0], M[1:, 1:]
    if m11 > 0:
        Mstar = M22 - np.outer(M21, M12) / m11
        nu_w = ps.nu0 + ps.r - q
        alpha_w0 = np.r_[M21, ps.alpha0 @ M[:, 0]] / m11
    else:
        if np.any(M12 != 0):
            raise ValueError("M with zero (1,1) entry must have a zero first row")
        Mstar = M22
        nu_w = ps.nu0 + ps.r - (q - 1)
        alpha_w0 = np.zeros(q - 1 + ps.p)
    a0 = ps.alpha0[:, 1:]
    A_w = np.block([
        [Mstar, Mstar @ a0.T],
        [a0 @ Mstar, ps.A + a0 @ Mstar @ a0.T],
    ])
    return AugmentedPrior(A_w=(A_w + A_w.T) / 2, nu_w=float(nu_w), alpha_w0=alpha_w0, m11=m11)


@dataclass(frozen=True)
class SeqPrior:
    """Independent normal-gamma priors on each visit's regression.

    For visit ``j`` (0-based) the prior density of ``(theta_j, gamma_j)`` is
    ``gamma_j**gamma_power[j] * exp(-gamma_j/2 * t' quad[j] t)`` with
    ``t = (-theta_j, 1)``; ``quad[j]`` is ``(q+j+1) x (q+j+1)``.
    """

    gamma_power: np.ndarray
    quad: tuple[np.ndarray, ...]


def seq_prior_params(ps: PriorSpec) -> SeqPrior:
    """Per-visit normal-gamma prior implied by ``ps``.

    ``B_j`` uses the rows of the prior mean ``alpha0`` for the stacked
    coefficient block ``(I_q, alpha_1, ..., alpha_j)``.
    """
    p, q, r = ps.p, ps.q, ps.r
    Atil = np.zeros((q + p, q + p))
    Atil[q:, q:] = ps.A
    ddot = np.hstack([np.eye(q), ps.alpha0.T])
    quads = []
    for j in range(p):
        k = q + j + 1
        Bj = ddot[:, :k].T @ ps.M @ ddot[:, :k]
        quads.append(Atil[:k, :k] + Bj)
    visits = np.arange(1, p + 1)
    power = (ps.nu0 + 2 * visits + r - p - 3) / 2.0
    return SeqPrior(gamma_power=power, quad=tuple(quads))
