"""Likelihood fit of the MMRM, complete-data analysis and Rubin's rules."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from .data import TrialDataset, index_patterns
from .impute import PmmMethod, impute_draw, mcr_flags, replicate_rng
from .params import MarginalParams
from .prior import PriorSpec
from .sampler import ChainConfig, run_chain

log = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# ML via EM
# ---------------------------------------------------------------------------

@dataclass
class MleResult:
    params: MarginalParams
    loglik: float
    cov_alpha: np.ndarray
    n_iter: int
    loglik_trace: list[float]

    @property
    def delta(self) -> np.ndarray:
        return self.params.delta

    @property
    def se_delta(self) -> np.ndarray:
        """Model-based standard errors of the per-visit treatment effects."""
        p, q = self.params.alpha.shape
        idx = np.arange(p) * q + (q - 1)
        return np.sqrt(np.diag(self.cov_alpha)[idx])


def _mask_groups(mask: np.ndarray) -> dict[tuple, np.ndarray]:
    groups: dict[tuple, list[int]] = {}
    for i, row in enumerate(mask):
        groups.setdefault(tuple(row), []).append(i)
    return {k: np.array(v) for k, v in groups.items()}


def _observed_loglik(Y, X, mask_groups, alpha, Sigma) -> float:
    ll = 0.0
    for key, rows in mask_groups.items():
        o = np.flatnonzero(key)
        if o.size == 0:
            continue
        R = Y[np.ix_(rows, o)] - X[rows] @ alpha[o].T
        c = np.linalg.cholesky(Sigma[np.ix_(o, o)])
        z = np.linalg.solve(c, R.T)
        ll += -0.5 * (rows.size * (o.size * np.log(2 * np.pi) + 2 * np.log(np.diag(c)).sum())
                      + (z * z).sum())
    return float(ll)


def fit_mle_em(ds: TrialDataset, tol: float = 1e-8, max_iter: int = 5000) -> MleResult:
    """Maximum likelihood ``(alpha, Sigma)`` by EM over missing outcomes.

    Stops once the relative log-likelihood increase drops below ``tol``.
    """
    X = ds.design()
    Y = ds.outcomes
    mask = ds.observed_mask
    n, p = Y.shape
    q = X.shape[1]
    counts = mask.sum(axis=0)
    if np.any(counts <= q):
        bad = int(np.argmax(counts <= q)) + 1
        raise ValueError(f"visit {bad}: {counts[bad - 1]} observations, need more than q={q}")
    groups = _mask_groups(mask)
    XtX_inv_Xt = np.linalg.solve(X.T @ X, X.T)

    # start: per-visit OLS on available cases, diagonal covariance
    alpha = np.zeros((p, q))
    var = np.zeros(p)
    for j in range(p):
        rows = mask[:, j]
        coef, *_ = np.linalg.lstsq(X[rows], Y[rows, j], rcond=None)
        alpha[j] = coef
        var[j] = np.mean((Y[rows, j] - X[rows] @ coef) ** 2)
    Sigma = np.diag(var)
    ll = _observed_loglik(Y, X, groups, alpha, Sigma)
    trace = [ll]
    for it in range(1, max_iter + 1):
        Yhat = np.where(mask, Y, 0.0)
        C = np.zeros((p, p))
        mu = X @ alpha.T
        for key, rows in groups.items():
            o = np.flatnonzero(key)
            m = np.flatnonzero(~np.array(key))
            if m.size == 0:
                continue
            if o.size:
                Soo = Sigma[np.ix_(o, o)]
                B = np.linalg.solve(Soo, Sigma[np.ix_(o, m)]).T
                resid = Y[np.ix_(rows, o)] - mu[np.ix_(rows, o)]
                Yhat[np.ix_(rows, m)] = mu[np.ix_(rows, m)] + resid @ B.T
                Cm = Sigma[np.ix_(m, m)] - B @ Sigma[np.ix_(o, m)]
            else:
                Yhat[np.ix_(rows, m)] = mu[np.ix_(rows, m)]
                Cm = Sigma[np.ix_(m, m)]
            C[np.ix_(m, m)] += rows.size * Cm
        alpha = (XtX_inv_Xt @ Yhat).T
        R = Yhat - X @ alpha.T
        Sigma = (R.T @ R + C) / n
        Sigma = (Sigma + Sigma.T) / 2
        new = _observed_loglik(Y, X, groups, alpha, Sigma)
        trace.append(new)
        done = abs(new - ll) < tol * max(1.0, abs(ll))
        ll = new
        if done:
            break
    else:
        raise ConvergenceError(f"EM did not converge in {max_iter} iterations")
    cov_alpha = _alpha_covariance(X, groups, Sigma, p, q)
    return MleResult(MarginalParams(alpha, Sigma), ll, cov_alpha, it, trace)


def _alpha_covariance(X, groups, Sigma, p, q) -> np.ndarray:
    """Inverse Fisher information of ``vec(alpha)`` (row-major) given ``Sigma``."""
    info = np.zeros((p * q, p * q))
    for key, rows in groups.items():
        o = np.flatnonzero(key)
        if o.size == 0:
            continue
        W = np.linalg.inv(Sigma[np.ix_(o, o)])
        XtX = X[rows].T @ X[rows]
        for a, ja in enumerate(o):
            for b, jb in enumerate(o):
                info[ja * q:(ja + 1) * q, jb * q:(jb + 1) * q] += W[a, b] * XtX
    return np.linalg.inv(info)


# ---------------------------------------------------------------------------
# Complete-data analysis
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VisitEstimate:
    visit: int
    estimate: float
    variance: float


def ancova(Y: np.ndarray, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Treatment coefficient and its OLS variance for every column of ``Y``.

    ``X`` has the arm indicator as its last column.
    """
    n, q = X.shape
    G = np.linalg.inv(X.T @ X)
    coef = G @ (X.T @ Y)
    resid = Y - X @ coef
    s2 = (resid * resid).sum(axis=0) / (n - q)
    return coef[-1], s2 * G[-1, -1]


def analyze_replicate(rep, ds: TrialDataset) -> list[VisitEstimate]:
    """Per-visit regression of the completed outcomes on ``(1, x, g)``."""
    Y = rep.outcomes if hasattr(rep, "outcomes") else np.asarray(rep)
    if not np.all(np.isfinite(Y)):
        raise ValueError("replicate has missing outcomes")
    est, var = ancova(Y, ds.design())
    return [VisitEstimate(j + 1, float(e), float(v)) for j, (e, v) in enumerate(zip(est, var))]


# ---------------------------------------------------------------------------
# Rubin's rules
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PooledResult:
    visit: int
    q_bar: float
    W: float
    B: float
    T: float
    df: float
    ci_low: float
    ci_high: float
    m: int

    @property
    def se(self) -> float:
        return float(np.sqrt(self.T))


def rubin_pool(estimates, variances, visit: int = 1, level: float = 0.95) -> PooledResult:
    """Combine ``m`` complete-data estimates with Rubin's rules.

    Degrees of freedom use the large-sample formula; when the between
    variance is zero they are infinite and the interval uses the normal
    quantile.
    """
    est = np.asarray(estimates, dtype=float)
    var = np.asarray(variances, dtype=float)
    m = est.shape[0]
    if m < 2:
        raise ValueError("Rubin pooling needs m >= 2")
    q_bar = float(est.mean())
    W = float(var.mean())
    B = float(est.var(ddof=1))
    T = W + (1 + 1 / m) * B
    if B > 0:
        df = (m - 1) * (1 + W / ((1 + 1 / m) * B)) ** 2
        crit = stats.t.ppf(0.5 + level / 2, df)
    else:
        df = float("inf")
        crit = stats.norm.ppf(0.5 + level / 2)
    half = crit * np.sqrt(T)
    return PooledResult(visit, q_bar, W, B, T, float(df), q_bar - half, q_bar + half, m)


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------

@dataclass
class PipelineResult:
    pooled: dict[str, list[PooledResult]]
    mle: MleResult | None
    methods: list[PmmMethod]
    draws: list

    def rows(self) -> list[dict]:
        out = []
        for label, res in self.pooled.items():
            for r in res:
                out.append({
                    "method": label, "visit": r.visit, "estimate": r.q_bar, "se": r.se,
                    "df": r.df, "ci_low": r.ci_low, "ci_high": r.ci_high,
                    "W": r.W, "B": r.B, "m": r.m,
                })
        return out


def resolve_methods(methods: Sequence[PmmMethod], mle: MleResult | None) -> list[PmmMethod]:
    """Fill missing MCR flags from the ML fit."""
    out = []
    for m in methods:
        if m.tag == "MCR" and m.mcr_flags is None:
            if mle is None:
                raise ValueError("MCR needs an ML fit to set its flags")
            m = m.with_flags(mcr_flags(mle.params))
        out.append(m)
    labels = [m.label for m in out]
    if len(set(labels)) != len(labels):
        raise ValueError(f"duplicate method labels: {labels}")
    return out


def analyze_draws(ds: TrialDataset, draws, methods: Sequence[PmmMethod], seed: int,
                  threads: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Impute and analyze every draw; arrays are ``m x methods x p``.

    Draw ``k`` always uses stream ``replicate_rng(seed, k)``, so results do
    not depend on ``threads``.
    """
    pi = index_patterns(ds)
    X = ds.design()
    m, K, p = len(draws), len(methods), ds.p_visits
    est = np.zeros((m, K, p))
    var = np.zeros((m, K, p))

    def work(k):
        dr = draws[k]
        completed = impute_draw(ds, pi, dr.params, dr.filled, methods, replicate_rng(seed, k))
        for a, meth in enumerate(methods):
            est[k, a], var[k, a] = ancova(completed[meth.label], X)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            list(ex.map(work, range(m)))
    else:
        for k in range(m):
            work(k)
    return est, var


def run_pipeline(ds: TrialDataset, prior: PriorSpec, cfg: ChainConfig,
                 methods: Sequence[PmmMethod], level: float = 0.95, threads: int = 1,
                 fit_mle: bool = True, progress=None) -> PipelineResult:
    """Sampler, PMM replicates, per-visit analysis and pooling."""
    mle = None
    if fit_mle or any(m.tag == "MCR" and m.mcr_flags is None for m in methods):
        mle = fit_mle_em(ds)
    methods = resolve_methods(methods, mle)
    draws = run_chain(ds, prior, cfg, progress=progress)
    if len(draws) < 2:
        raise ValueError("pooling needs at least 2 draws")
    est, var = analyze_draws(ds, draws, methods, cfg.seed, threads)
    pooled = {}
    for a, meth in enumerate(methods):
        pooled[meth.label] = [
            rubin_pool(est[:, a, j], var[:, a, j], visit=j + 1, level=level)
            for j in range(ds.p_visits)
        ]
    return PipelineResult(pooled, mle, list(methods), draws)
