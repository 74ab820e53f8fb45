"""Posterior simulation for the MMRM.

Four samplers target the same posterior of the sequential parameters and
the intermittent missing outcomes:

* ``MDA``  - monotone data augmentation: the P-step draws each visit's
  ``(theta_j, gamma_j)`` from subjects still on study at ``j``; the I-step
  imputes only intermittent gaps.
* ``FDA``  - full data augmentation: the I-step also imputes post-dropout
  outcomes and the P-step uses all subjects.
* ``AUGMENTED`` - treats ``w = (x~, y)`` as multivariate normal under the
  prior from :func:`~pmmimpute.prior.build_augmented` and reads the outcome
  parameters off the joint draw. Scheme ``"fda"`` samples the joint
  normal-inverse-Wishart posterior of the full data; scheme ``"mda"``
  samples it sequentially from monotone data.
* ``SRI`` - closed-form iid draws for monotone data under a prior with
  ``A = 0`` and ``M = 0``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .data import PatternIndex, TrialDataset, index_patterns
from .impute import mar_batch
from .linalg import draw_chisq, draw_inverse_wishart, ldl_decompose, pattern_blocks
from .params import SequentialParams
from .prior import PriorSpec, SeqPrior, build_augmented, seq_prior_params

log = logging.getLogger(__name__)

ALGORITHMS = ("MDA", "FDA", "AUGMENTED", "SRI")


class SamplerError(RuntimeError):
    pass


@dataclass
class ChainConfig:
    n_draws: int
    burn_in: int = 10_000
    thin: int = 100
    seed: int = 0
    algorithm: str = "MDA"
    augmented_scheme: str = "fda"

    def __post_init__(self):
        self.algorithm = self.algorithm.upper()
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.burn_in < 0 or self.n_draws < 1:
            raise ValueError("burn_in must be >= 0 and n_draws >= 1")
        if self.augmented_scheme not in ("fda", "mda"):
            raise ValueError("augmented_scheme must be 'fda' or 'mda'")


@dataclass
class Draw:
    """One retained state: parameters plus the outcome matrix they were
    paired with (observed cells and current intermittent imputations)."""

    params: SequentialParams
    filled: np.ndarray
    iteration: int
    extras: dict = field(default_factory=dict)


def chain_rng(seed: int, k: int = 0) -> np.random.Generator:
    """Stream for chain ``k``: ``SeedSequence([seed, 0, k])``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), 0, int(k)]))


# ---------------------------------------------------------------------------
# P-step
# ---------------------------------------------------------------------------

def draw_normal_gamma(D: np.ndarray, gamma_power: float, rng: np.random.Generator,
                      what: str = "visit") -> tuple[np.ndarray, float]:
    """Draw from ``gamma**gamma_power * exp(-gamma/2 * t' D t)``, ``t = (-theta, 1)``.

    Integrating ``theta`` out leaves ``gamma ~ Gamma(gamma_power - k/2 + 1,
    rate=S/2)`` with ``S`` the Schur complement of the leading block; then
    ``theta | gamma ~ N(D11^{-1} d12, (gamma D11)^{-1})``.
    """
    k = D.shape[0] - 1
    try:
        c = np.linalg.cholesky(D[:k, :k])
    except np.linalg.LinAlgError:
        raise SamplerError(
            f"{what}: cross-product matrix is singular; too few subjects for a flat prior"
        ) from None
    v = solve_triangular(c, D[:k, k], lower=True)
    S = D[k, k] - v @ v
    shape = gamma_power - k / 2.0 + 1.0
    if not (S > 0 and shape > 0):
        raise SamplerError(f"{what}: improper posterior (shape={shape:g}, S={S:g})")
    gamma = rng.gamma(shape, 2.0 / S)
    theta = solve_triangular(c.T, v + rng.standard_normal(k) / np.sqrt(gamma), lower=False)
    return theta, float(gamma)


def p_step(X: np.ndarray, Y: np.ndarray, active: np.ndarray, sp: SeqPrior,
           rng: np.random.Generator) -> SequentialParams:
    """Independent normal-gamma draws of each outcome's regression.

    Outcome ``j`` is regressed on ``(X, Y[:, :j])`` over rows with
    ``active[:, j]``.
    """
    c = X.shape[1]
    K = Y.shape[1]
    Z = np.hstack([X, Y])
    ualpha = np.zeros((K, c))
    beta = np.zeros((K, K))
    gamma = np.zeros(K)
    for j in range(K):
        rows = active[:, j]
        Zj = Z[rows, : c + j + 1]
        D = sp.quad[j] + Zj.T @ Zj
        theta, gamma[j] = draw_normal_gamma(
            D, sp.gamma_power[j] + rows.sum() / 2.0, rng, what=f"visit {j + 1}"
        )
        ualpha[j] = theta[:c]
        beta[j, :j] = theta[c:]
    return SequentialParams(ualpha, beta, gamma)


def mda_p_step(ds: TrialDataset, filled: np.ndarray, pi: PatternIndex, sp: SeqPrior,
               rng: np.random.Generator) -> SequentialParams:
    """P-step on the monotone-completed data: visit ``j`` uses the ``n_j``
    subjects with dropout pattern beyond ``j``."""
    active = pi.dropout[:, None] > np.arange(ds.p_visits)[None, :]
    return p_step(ds.design(), filled, active, sp, rng)


# ---------------------------------------------------------------------------
# I-step
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _GapGroup:
    rows: np.ndarray
    r: int
    miss: np.ndarray
    obs: np.ndarray


def _gap_groups(mask: np.ndarray, pi: PatternIndex) -> list[_GapGroup]:
    """Subjects with intermittent gaps, grouped by identical pre-dropout mask."""
    keyed: dict[tuple, list[int]] = {}
    for i, gaps in enumerate(pi.intermittent):
        if gaps:
            r = int(pi.dropout[i])
            keyed.setdefault((r, tuple(mask[i, :r])), []).append(i)
    groups = []
    for (r, m), rows in sorted(keyed.items()):
        m = np.array(m)
        groups.append(_GapGroup(np.array(rows), r, np.flatnonzero(~m), np.flatnonzero(m)))
    return groups


def intermittent_conditional(x: np.ndarray, y_obs: np.ndarray, r: int, miss, obs,
                             phi: SequentialParams) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of intermittent gaps ``miss`` given observed visits
    ``obs`` (both within ``0..r-1``) for rows ``x``/``y_obs``.

    The joint density of ``y_0..y_{r-1}`` is a product of the visit
    regressions, so the precision of the gaps is ``Um' diag(gamma) Um``
    with ``Um`` the gap columns of ``U``.
    """
    U = phi.factors().U[:r, :r]
    g = phi.gamma[:r]
    x = np.atleast_2d(x)
    y_obs = np.atleast_2d(y_obs)
    rhs = x @ phi.ualpha[:r].T - y_obs @ U[:, obs].T
    Um = U[:, miss]
    P = Um.T @ (g[:, None] * Um)
    c = np.linalg.cholesky(P)
    mean = cho_solve((c, True), Um.T @ (g[:, None] * rhs.T)).T
    return mean, cho_solve((c, True), np.eye(len(miss)))


def i_step_intermittent(Y: np.ndarray, X: np.ndarray, groups: list[_GapGroup],
                        phi: SequentialParams, rng: np.random.Generator) -> None:
    """Redraw intermittent gaps of ``Y`` in place."""
    for gr in groups:
        mean, cov = intermittent_conditional(
            X[gr.rows], Y[np.ix_(gr.rows, gr.obs)], gr.r, gr.miss, gr.obs, phi
        )
        c = np.linalg.cholesky(cov)
        Y[np.ix_(gr.rows, gr.miss)] = mean + rng.standard_normal(mean.shape) @ c.T


def i_step_dropout(Y: np.ndarray, X: np.ndarray, pi: PatternIndex,
                   phi: SequentialParams, rng: np.random.Generator) -> None:
    """Redraw every post-dropout outcome of ``Y`` in place under MAR."""
    p = Y.shape[1]
    f = phi.factors()
    for s in range(p):
        rows = np.flatnonzero(pi.dropout == s)
        if rows.size == 0:
            continue
        E = rng.standard_normal((rows.size, p - s))
        Y[rows, s:] = mar_batch(X[rows], Y[rows, :s], phi, pattern_blocks(f, s), E)


def initial_fill(ds: TrialDataset, pi: PatternIndex, post_dropout: bool) -> np.ndarray:
    """Starting values: last observation carried forward, with the visit's
    observed mean for gaps that have nothing before them."""
    Y = np.array(ds.outcomes, dtype=float)
    n, p = Y.shape
    colmean = np.array([
        np.nanmean(ds.outcomes[:, j]) if ds.observed_mask[:, j].any() else 0.0
        for j in range(p)
    ])
    limit = np.full(n, p) if post_dropout else pi.dropout
    for i in range(n):
        for j in range(int(limit[i])):
            if np.isnan(Y[i, j]):
                Y[i, j] = Y[i, j - 1] if j > 0 and not np.isnan(Y[i, j - 1]) else colmean[j]
    return Y


# ---------------------------------------------------------------------------
# Chains
# ---------------------------------------------------------------------------

def _collect(step: Callable[[], tuple[SequentialParams, dict]], Y: np.ndarray,
             cfg: ChainConfig, progress: Callable[[int, int], None] | None) -> list[Draw]:
    total = cfg.burn_in + cfg.thin * cfg.n_draws
    draws = []
    every = max(1, total // 20)
    for it in range(1, total + 1):
        phi, extras = step()
        if it > cfg.burn_in and (it - cfg.burn_in) % cfg.thin == 0:
            draws.append(Draw(phi, Y.copy(), it, extras))
        if progress is not None and (it % every == 0 or it == total):
            progress(it, total)
    return draws


def run_mda(ds: TrialDataset, prior: PriorSpec, cfg: ChainConfig,
            progress=None) -> list[Draw]:
    pi = index_patterns(ds)
    X = ds.design()
    sp = seq_prior_params(prior)
    rng = chain_rng(cfg.seed)
    Y = initial_fill(ds, pi, post_dropout=False)
    active = pi.dropout[:, None] > np.arange(ds.p_visits)[None, :]
    groups = _gap_groups(ds.observed_mask, pi)

    def step():
        phi = p_step(X, Y, active, sp, rng)
        i_step_intermittent(Y, X, groups, phi, rng)
        return phi, {}

    return _collect(step, Y, cfg, progress)


def run_fda(ds: TrialDataset, prior: PriorSpec, cfg: ChainConfig,
            progress=None) -> list[Draw]:
    pi = index_patterns(ds)
    X = ds.design()
    sp = seq_prior_params(prior)
    rng = chain_rng(cfg.seed)
    Y = initial_fill(ds, pi, post_dropout=True)
    active = np.ones(Y.shape, dtype=bool)
    groups = _gap_groups(ds.observed_mask, pi)

    def step():
        phi = p_step(X, Y, active, sp, rng)
        i_step_intermittent(Y, X, groups, phi, rng)
        i_step_dropout(Y, X, pi, phi, rng)
        return phi, {}

    return _collect(step, Y, cfg, progress)


def _outcome_part(ualpha_w: np.ndarray, beta_w: np.ndarray, gamma_w: np.ndarray,
                  q: int) -> SequentialParams:
    """Outcome regressions from the sequential parameters of ``w = (x~, y)``.

    Component ``q-1+j`` of ``w`` is visit ``j``; its intercept and
    coefficients on ``x~`` form ``ualpha_j`` in ``(1, x, g)`` order.
    """
    K = gamma_w.shape[0]
    p = K - (q - 1)
    ualpha = np.zeros((p, q))
    beta = np.zeros((p, p))
    for j in range(p):
        k = q - 1 + j
        ualpha[j, 0] = ualpha_w[k]
        ualpha[j, 1:] = beta_w[k, : q - 1]
        beta[j, :j] = beta_w[k, q - 1 : k]
    return SequentialParams(ualpha, beta, gamma_w[q - 1 :].copy())


def run_augmented(ds: TrialDataset, prior: PriorSpec, cfg: ChainConfig,
                  progress=None) -> list[Draw]:
    """Sampler on ``w = (x~, y)`` under the augmented NIW prior.

    ``extras`` of each draw hold the covariate block ``alpha_x``/``Sigma_xx``.
    """
    pi = index_patterns(ds)
    X = ds.design()
    q = ds.q
    aug = build_augmented(prior)
    rng = chain_rng(cfg.seed)
    groups = _gap_groups(ds.observed_mask, pi)
    n = ds.n_subjects
    K = aug.dim
    xt = X[:, 1:]

    if cfg.augmented_scheme == "fda":
        Y = initial_fill(ds, pi, post_dropout=True)
        df = n + aug.nu_w - 1 if aug.m11 == 0 else n + aug.nu_w
        if not df > K - 1:
            raise SamplerError(f"posterior degrees of freedom {df:g} <= {K - 1}")
        shrink = n * aug.m11 / (n + aug.m11)

        def step():
            W = np.hstack([xt, Y])
            wbar = W.mean(axis=0)
            R = W - wbar
            scale = R.T @ R + aug.A_w + shrink * np.outer(wbar - aug.alpha_w0, wbar - aug.alpha_w0)
            Sigma_w = draw_inverse_wishart((scale + scale.T) / 2, df, rng)
            mean = (n * wbar + aug.m11 * aug.alpha_w0) / (n + aug.m11)
            alpha_w = mean + np.linalg.cholesky(Sigma_w / (n + aug.m11)) @ rng.standard_normal(K)
            f = ldl_decompose(Sigma_w)
            phi = _outcome_part(f.U @ alpha_w, f.beta, f.gamma, q)
            i_step_intermittent(Y, X, groups, phi, rng)
            i_step_dropout(Y, X, pi, phi, rng)
            extras = {"alpha_x": alpha_w[: q - 1].copy(), "Sigma_xx": Sigma_w[: q - 1, : q - 1].copy()}
            return phi, extras

    else:
        Y = initial_fill(ds, pi, post_dropout=False)
        sp = seq_prior_params(aug.as_prior_spec())
        ones = np.ones((n, 1))
        active = np.hstack([
            np.ones((n, q - 1), dtype=bool),
            pi.dropout[:, None] > np.arange(ds.p_visits)[None, :],
        ])

        def step():
            W = np.hstack([xt, Y])
            phw = p_step(ones, W, active, sp, rng)
            phi = _outcome_part(phw.ualpha[:, 0], phw.beta, phw.gamma, q)
            i_step_intermittent(Y, X, groups, phi, rng)
            fx = phw.factors()
            Lx = fx.L[: q - 1, : q - 1]
            extras = {
                "alpha_x": Lx @ phw.ualpha[: q - 1, 0],
                "Sigma_xx": (Lx / phw.gamma[: q - 1]) @ Lx.T,
            }
            return phi, extras

    return _collect(step, Y, cfg, progress)


def sri_posterior(ds: TrialDataset, prior: PriorSpec) -> list[dict]:
    """Closed-form posterior pieces per visit for monotone data:
    ``theta_hat``, ``S_hat``, chi-square ``df`` and the cross-product ``ZtZ``."""
    pi = index_patterns(ds)
    if not pi.is_monotone():
        raise SamplerError("SRI requires monotone data (no intermittent gaps)")
    if np.any(prior.A) or np.any(prior.M):
        raise SamplerError("SRI requires a prior with A = 0 and M = 0")
    X = ds.design()
    p, q = ds.p_visits, ds.q
    Y = ds.outcomes
    out = []
    for j in range(p):
        rows = pi.dropout > j
        Z = np.hstack([X[rows], Y[rows, :j]])
        y = Y[rows, j]
        theta_hat, *_ = np.linalg.lstsq(Z, y, rcond=None)
        resid = y - Z @ theta_hat
        df = rows.sum() + prior.nu0 + (j + 1) - q - p
        if df <= 0:
            raise SamplerError(f"visit {j + 1}: non-positive chi-square df {df:g}")
        out.append({"theta_hat": theta_hat, "S_hat": float(resid @ resid), "df": float(df),
                    "ZtZ": Z.T @ Z})
    return out


def run_sri(ds: TrialDataset, prior: PriorSpec, cfg: ChainConfig,
            progress=None) -> list[Draw]:
    """iid posterior draws for monotone data; ``burn_in`` and ``thin`` are
    not needed and are ignored."""
    post = sri_posterior(ds, prior)
    rng = chain_rng(cfg.seed)
    p, q = ds.p_visits, ds.q
    chols = [np.linalg.cholesky(v["ZtZ"]) for v in post]
    filled = np.array(ds.outcomes)
    draws = []
    for it in range(1, cfg.n_draws + 1):
        ualpha = np.zeros((p, q))
        beta = np.zeros((p, p))
        gamma = np.zeros(p)
        for j, v in enumerate(post):
            gamma[j] = draw_chisq(v["df"], rng) / v["S_hat"]
            e = rng.standard_normal(q + j) / np.sqrt(gamma[j])
            theta = v["theta_hat"] + solve_triangular(chols[j].T, e, lower=False)
            ualpha[j] = theta[:q]
            beta[j, :j] = theta[q:]
        draws.append(Draw(SequentialParams(ualpha, beta, gamma), filled, it))
        if progress is not None and it == cfg.n_draws:
            progress(it, cfg.n_draws)
    return draws


def run_chain(ds: TrialDataset, prior: PriorSpec, cfg: ChainConfig, progress=None) -> list[Draw]:
    runner = {"MDA": run_mda, "FDA": run_fda, "AUGMENTED": run_augmented, "SRI": run_sri}
    return runner[cfg.algorithm](ds, prior, cfg, progress)


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------

@dataclass
class ChainSummary:
    names: list[str]
    mean: np.ndarray
    sd: np.ndarray
    lag1: np.ndarray
    mcse: np.ndarray
    n: int


def lag1_autocorr(x: np.ndarray) -> np.ndarray:
    """Column-wise lag-1 autocorrelation; NaN for constant columns."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    c = x - x.mean(axis=0)
    denom = (c * c).sum(axis=0)
    num = (c[1:] * c[:-1]).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(denom > 0, num / np.where(denom > 0, denom, 1.0), np.nan)


def batch_means_se(x: np.ndarray, n_batches: int | None = None) -> np.ndarray:
    """Monte Carlo standard error of column means by non-overlapping batches."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    b = n_batches or max(2, int(np.sqrt(n)))
    size = n // b
    means = x[: b * size].reshape(b, size, -1).mean(axis=1)
    return means.std(axis=0, ddof=1) / np.sqrt(b)


def diagnostics(draws, names: list[str] | None = None) -> ChainSummary:
    """Per-parameter mean, sd, lag-1 autocorrelation and batch-means MCSE.

    ``draws`` is a list of :class:`Draw` or an ``n x k`` array.
    """
    if isinstance(draws, np.ndarray):
        arr = np.asarray(draws, dtype=float)
    else:
        arr = np.array([d.params.flat() for d in draws])
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.shape[0] < 10:
        raise ValueError("diagnostics need at least 10 draws")
    names = names or [f"param{k + 1}" for k in range(arr.shape[1])]
    return ChainSummary(
        names=list(names),
        mean=arr.mean(axis=0),
        sd=arr.std(axis=0, ddof=1),
        lag1=lag1_autocorr(arr),
        mcse=batch_means_se(arr),
        n=arr.shape[0],
    )
