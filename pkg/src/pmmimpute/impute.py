"""Post-dropout imputation under MAR and under pattern-mixture models.

Every supported PMM shares the observed-data distribution and covariance of
the MMRM, so its imputation for a subject who dropped out after ``s`` visits
is the MAR imputation minus a mean shift that depends only on the method,
``s``, the arm and the current parameter draw. Control-arm shifts are zero.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .data import PatternIndex, TrialDataset
from .linalg import PatternBlocks, pattern_blocks
from .params import MarginalParams, SequentialParams

TAGS = ("MAR", "J2R", "CIR", "CR", "ECR", "MCR", "CDELTA", "UDELTA")
CDELTA_VARIANTS = ("first", "all")


@dataclass(frozen=True)
class PmmMethod:
    """Imputation model for post-dropout outcomes in the active arm.

    ``delta`` is a per-visit vector (scalars broadcast) of adjustments in the
    direction of worse outcome, subtracted from the MAR imputation. For
    ``CDELTA`` the ``variant`` selects whether only the first visit after
    dropout is adjusted (``"first"``) or every later visit (``"all"``).
    ``mcr_flags`` are the ``d_j`` indicators of ``MCR``; when omitted they
    are filled from the ML fit by the pipeline.
    """

    tag: str
    phi: float | None = None
    delta: tuple[float, ...] | float | None = None
    variant: str | None = None
    mcr_flags: tuple[int, ...] | None = None
    name: str | None = None

    def __post_init__(self):
        tag = self.tag.upper()
        object.__setattr__(self, "tag", tag)
        if tag not in TAGS:
            raise ValueError(f"unknown method {self.tag!r}; expected one of {', '.join(TAGS)}")
        if tag == "ECR":
            if self.phi is None or not 0.0 <= float(self.phi) <= 1.0:
                raise ValueError("ECR needs phi in [0, 1]")
            object.__setattr__(self, "phi", float(self.phi))
        if tag in ("CDELTA", "UDELTA"):
            if self.delta is None:
                raise ValueError(f"{tag} needs delta")
            d = np.atleast_1d(np.asarray(self.delta, dtype=float))
            if not np.all(np.isfinite(d)):
                raise ValueError("delta must be finite")
            object.__setattr__(self, "delta", tuple(float(v) for v in d))
        if tag == "CDELTA" and self.variant not in CDELTA_VARIANTS:
            raise ValueError(f"CDELTA variant must be one of {CDELTA_VARIANTS}")
        if self.mcr_flags is not None:
            flags = tuple(int(v) for v in self.mcr_flags)
            if any(v not in (0, 1) for v in flags):
                raise ValueError("mcr_flags must be 0/1")
            object.__setattr__(self, "mcr_flags", flags)

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        if self.tag == "ECR":
            return f"ECR({self.phi:g})"
        if self.tag in ("CDELTA", "UDELTA"):
            vals = ",".join(f"{v:g}" for v in self.delta)
            return f"{self.tag}({self.variant},{vals})" if self.variant else f"{self.tag}({vals})"
        return self.tag

    def delta_vector(self, p: int) -> np.ndarray:
        d = np.asarray(self.delta, dtype=float)
        if d.size == 1:
            return np.full(p, float(d[0]))
        if d.size != p:
            raise ValueError(f"{self.label}: delta has {d.size} entries, expected 1 or p={p}")
        return d

    def with_flags(self, flags) -> "PmmMethod":
        return PmmMethod(self.tag, self.phi, self.delta, self.variant, tuple(flags), self.name)


# ---------------------------------------------------------------------------
# MAR draw
# ---------------------------------------------------------------------------

def mar_batch(X: np.ndarray, Ys: np.ndarray, phi: SequentialParams,
              blocks: PatternBlocks, E: np.ndarray) -> np.ndarray:
    """MAR post-dropout draws for subjects sharing pattern ``s = blocks.s``.

    ``X`` is ``k x q`` design rows, ``Ys`` the ``k x s`` filled pre-dropout
    outcomes and ``E`` a ``k x (p-s)`` standard-normal matrix.
    """
    s = blocks.s
    inner = X @ phi.ualpha[s:].T + E * np.sqrt(1.0 / phi.gamma[s:])
    if s > 0:
        inner -= Ys @ blocks.U21.T
    return inner @ blocks.L22.T


def impute_mar(x: np.ndarray, y_pre: np.ndarray, phi: SequentialParams,
               e: np.ndarray, blocks: PatternBlocks | None = None) -> np.ndarray:
    """MAR draw of visits ``s..p-1`` for one subject, ``s = len(y_pre)``."""
    y_pre = np.asarray(y_pre, dtype=float)
    s = y_pre.shape[0]
    if s >= phi.p:
        return np.zeros(0)
    if blocks is None:
        blocks = pattern_blocks(phi.factors(), s)
    return mar_batch(np.atleast_2d(x), y_pre[None, :], phi, blocks, np.atleast_2d(e))[0]


# ---------------------------------------------------------------------------
# Mean shifts
# ---------------------------------------------------------------------------

def pmm_shift(method: PmmMethod, s: int, g: int, phi: SequentialParams,
              blocks: PatternBlocks | None = None) -> np.ndarray:
    """Amount subtracted from the MAR draw of visits ``s..p-1``."""
    p = phi.p
    if blocks is None:
        blocks = pattern_blocks(phi.factors(), s)
    tag = method.tag
    if g == 0 or tag == "MAR":
        return np.zeros(p - s)
    L22 = blocks.L22
    ud = phi.udelta[s:]
    if tag == "J2R":
        return phi.delta[s:].copy()
    if tag == "CIR":
        # no treatment difference at baseline
        delta_s = phi.delta[s - 1] if s > 0 else 0.0
        return phi.delta[s:] - delta_s
    if tag == "CR":
        return L22 @ ud
    if tag == "ECR":
        return method.phi * (L22 @ ud)
    if tag == "MCR":
        if method.mcr_flags is None:
            raise ValueError("MCR shift requires mcr_flags")
        d = np.asarray(method.mcr_flags[s:], dtype=float)
        return L22 @ ((1.0 - d) * ud)
    if tag == "CDELTA":
        dv = method.delta_vector(p)
        if method.variant == "first":
            adj = np.zeros(p - s)
            adj[0] = dv[s]
        else:
            adj = dv[s:].copy()
        return L22 @ adj
    if tag == "UDELTA":
        return method.delta_vector(p)[s:].copy()
    raise AssertionError(tag)


def mcr_flags(mle: MarginalParams) -> np.ndarray:
    """``d_j = 0`` when the ML sequential treatment coefficient at visit ``j``
    has the same sign as the final-visit marginal effect (or either is 0)."""
    seq = SequentialParams.from_marginal(mle)
    return np.where(seq.udelta * mle.delta[-1] >= 0, 0, 1).astype(np.int64)


# ---------------------------------------------------------------------------
# Replicates
# ---------------------------------------------------------------------------

@dataclass
class ImputationReplicate:
    outcomes: np.ndarray
    method: str
    replicate: int
    draw: int = field(default=0)


def impute_draw(ds: TrialDataset, pi: PatternIndex, phi: SequentialParams,
                filled: np.ndarray, methods: Sequence[PmmMethod],
                rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Complete datasets for every method from one posterior draw.

    ``filled`` carries the draw's intermittent imputations. One standard
    normal vector per subject is shared by all methods, so the methods'
    datasets differ only by their mean shifts.
    """
    n, p = ds.n_subjects, ds.p_visits
    X = ds.design()
    base = np.where(ds.observed_mask, ds.outcomes, np.nan)
    pre = np.arange(p)[None, :] < pi.dropout[:, None]
    base[pre] = np.where(ds.observed_mask[pre], ds.outcomes[pre], filled[pre])
    E = rng.standard_normal((n, p))
    out = {m.label: base.copy() for m in methods}
    f = phi.factors()
    for s in np.unique(pi.dropout):
        s = int(s)
        if s >= p:
            continue
        rows = np.flatnonzero(pi.dropout == s)
        blocks = pattern_blocks(f, s)
        mar = mar_batch(X[rows], base[rows, :s], phi, blocks, E[rows, : p - s])
        g = ds.arm[rows]
        active = rows[g == 1]
        for m in methods:
            Y = out[m.label]
            Y[rows, s:] = mar
            if m.tag != "MAR" and active.size:
                Y[active, s:] -= pmm_shift(m, s, 1, phi, blocks)
    return out


def build_replicates(ds: TrialDataset, pi: PatternIndex, draws: Iterable,
                     methods: Sequence[PmmMethod], seed: int) -> list[ImputationReplicate]:
    """Replicates for every draw and method; draw ``k`` uses its own stream."""
    reps = []
    for k, dr in enumerate(draws):
        completed = impute_draw(ds, pi, dr.params, dr.filled, methods, replicate_rng(seed, k))
        for m in methods:
            reps.append(ImputationReplicate(completed[m.label], m.label, k, dr.iteration))
    return reps


def replicate_rng(seed: int, k: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), 1, int(k)]))
