"""Trial datasets: wide-format CSV I/O, dropout-pattern bookkeeping and a
seeded generator for synthetic two-arm longitudinal trials.

Visits are 0-based in code. A subject's dropout pattern ``r`` counts the
visits up to and including the last observed one, so ``r == 0`` means no
post-baseline outcome and ``r == p`` means the final visit was observed.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MISSING_TOKENS = ("", "NA")


class DataFormatError(ValueError):
    """Raised when a trial CSV cannot be parsed."""


def _frozen(a, dtype) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class TrialDataset:
    """Outcomes, baseline covariates and arm labels for ``n`` subjects.

    ``outcomes`` holds NaN wherever ``observed_mask`` is False.
    """

    subject_ids: tuple[str, ...]
    arm: np.ndarray
    covariates: np.ndarray
    outcomes: np.ndarray
    observed_mask: np.ndarray

    def __post_init__(self):
        arm = _frozen(self.arm, np.int64)
        cov = np.array(self.covariates, dtype=float)
        if cov.ndim == 1:
            cov = cov.reshape(-1, 0) if cov.size == 0 else cov.reshape(-1, 1)
        y = np.array(self.outcomes, dtype=float)
        mask = np.array(self.observed_mask, dtype=bool)
        n = arm.shape[0]
        if y.ndim != 2 or y.shape[0] != n:
            raise ValueError("outcomes must be an n x p matrix")
        if mask.shape != y.shape:
            raise ValueError("observed_mask shape must equal outcomes shape")
        if cov.shape[0] != n:
            raise ValueError("covariates must have one row per subject")
        if not np.all(np.isfinite(cov)):
            raise ValueError("covariates must be fully observed")
        if not np.isin(arm, (0, 1)).all():
            raise ValueError("arm must be 0 (control) or 1 (active)")
        if np.any(np.isfinite(y) & ~mask):
            raise ValueError("finite outcome cell flagged as missing")
        if np.any(~np.isfinite(y) & mask):
            raise ValueError("observed outcome cell is not finite")
        if len(self.subject_ids) != n:
            raise ValueError("one subject id per row required")
        y[~mask] = np.nan
        object.__setattr__(self, "subject_ids", tuple(str(s) for s in self.subject_ids))
        object.__setattr__(self, "arm", arm)
        object.__setattr__(self, "covariates", _frozen(cov, float))
        object.__setattr__(self, "outcomes", _frozen(y, float))
        object.__setattr__(self, "observed_mask", _frozen(mask, bool))

    @property
    def n_subjects(self) -> int:
        return self.outcomes.shape[0]

    @property
    def p_visits(self) -> int:
        return self.outcomes.shape[1]

    @property
    def d_covariates(self) -> int:
        return self.covariates.shape[1]

    @property
    def q(self) -> int:
        """Columns of the per-visit design: intercept, covariates, arm."""
        return self.d_covariates + 2

    def design(self) -> np.ndarray:
        """The ``n x q`` matrix with rows ``(1, x_1..x_d, g)``."""
        n = self.n_subjects
        return np.column_stack([np.ones(n), self.covariates, self.arm.astype(float)])

    def is_complete(self) -> bool:
        return bool(self.observed_mask.all())

    def with_outcomes(self, outcomes: np.ndarray) -> "TrialDataset":
        """Same subjects with a new outcome matrix; NaN cells become missing."""
        outcomes = np.asarray(outcomes, dtype=float)
        return TrialDataset(
            self.subject_ids, self.arm, self.covariates, outcomes, np.isfinite(outcomes)
        )


@dataclass(frozen=True)
class PatternIndex:
    dropout: np.ndarray
    sort_order: np.ndarray
    n_j: np.ndarray
    intermittent: tuple[tuple[int, ...], ...]
    post_dropout: tuple[tuple[int, ...], ...]

    def is_monotone(self) -> bool:
        return not any(self.intermittent)

    def active_rows(self, j: int) -> np.ndarray:
        """Subjects whose visit ``j`` (0-based) lies before or at dropout."""
        return self.dropout > j


def index_patterns(ds: TrialDataset) -> PatternIndex:
    mask = ds.observed_mask
    n, p = mask.shape
    # last observed visit + 1; 0 when nothing observed
    last = np.where(mask.any(axis=1), p - np.argmax(mask[:, ::-1], axis=1), 0)
    intermittent = tuple(
        tuple(int(j) for j in np.flatnonzero(~mask[i, : last[i]])) for i in range(n)
    )
    post = tuple(tuple(range(int(last[i]), p)) for i in range(n))
    n_j = np.array([(last > j).sum() for j in range(p)], dtype=np.int64)
    order = np.argsort(-last, kind="stable")
    return PatternIndex(
        dropout=_frozen(last, np.int64),
        sort_order=_frozen(order, np.int64),
        n_j=_frozen(n_j, np.int64),
        intermittent=intermittent,
        post_dropout=post,
    )


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def _parse_header(header: list[str], p: int | None, d: int | None) -> tuple[int, int]:
    if len(header) < 3 or header[0] != "subject_id" or header[1] != "arm":
        raise DataFormatError("row 1: header must start with 'subject_id,arm'")
    rest = header[2:]
    nx = sum(1 for h in rest if h.startswith("x"))
    ny = len(rest) - nx
    expect = [f"x{k + 1}" for k in range(nx)] + [f"y{j + 1}" for j in range(ny)]
    if rest != expect:
        raise DataFormatError(
            f"row 1: expected columns {','.join(expect)}, got {','.join(rest)}"
        )
    if ny == 0:
        raise DataFormatError("row 1: no outcome columns y1..yp")
    if p is not None and ny != p:
        raise DataFormatError(f"row 1: header has {ny} outcome columns, expected p={p}")
    if d is not None and nx != d:
        raise DataFormatError(f"row 1: header has {nx} covariate columns, expected d={d}")
    return ny, nx


def _number(cell: str, row: int, col: str) -> float:
    try:
        v = float(cell)
    except ValueError:
        raise DataFormatError(f"row {row}: column {col}: non-numeric value {cell!r}") from None
    if not np.isfinite(v):
        raise DataFormatError(f"row {row}: column {col}: non-finite value {cell!r}")
    return v


def load_csv(path, p: int | None = None, d: int | None = None) -> TrialDataset:
    """Read a wide trial file ``subject_id,arm,x1..xd,y1..yp``.

    Empty cells and the literal ``NA`` mark missing outcomes. Covariates and
    arm must be present on every row. ``p`` and ``d`` are inferred from the
    header when not given, and checked against it otherwise.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        p, d = _parse_header(header, p, d)
        ids, arms, xs, ys = [], [], [], []
        for rownum, row in enumerate(reader, start=2):
            if not row or all(c.strip() == "" for c in row):
                continue
            if len(row) != len(header):
                raise DataFormatError(
                    f"row {rownum}: expected {len(header)} cells, found {len(row)}"
                )
            row = [c.strip() for c in row]
            if row[0] == "":
                raise DataFormatError(f"row {rownum}: missing subject_id")
            if row[1] in MISSING_TOKENS:
                raise DataFormatError(f"row {rownum}: missing arm")
            g = _number(row[1], rownum, "arm")
            if g not in (0.0, 1.0):
                raise DataFormatError(f"row {rownum}: arm must be 0 or 1, got {row[1]!r}")
            x = []
            for k in range(d):
                cell = row[2 + k]
                if cell in MISSING_TOKENS:
                    raise DataFormatError(f"row {rownum}: missing covariate x{k + 1}")
                x.append(_number(cell, rownum, f"x{k + 1}"))
            y = []
            for j in range(p):
                cell = row[2 + d + j]
                y.append(np.nan if cell in MISSING_TOKENS else _number(cell, rownum, f"y{j + 1}"))
            ids.append(row[0])
            arms.append(int(g))
            xs.append(x)
            ys.append(y)
    if not ids:
        raise DataFormatError(f"{path}: no data rows")
    y = np.array(ys, dtype=float)
    return TrialDataset(
        tuple(ids), np.array(arms), np.array(xs, dtype=float).reshape(len(ids), d),
        y, np.isfinite(y),
    )


def _fmt(v: float) -> str:
    return "NA" if not np.isfinite(v) else repr(float(v))


def write_csv(ds: TrialDataset, path) -> None:
    """Write ``ds`` in the same schema ``load_csv`` reads; exact round trip."""
    header = (
        ["subject_id", "arm"]
        + [f"x{k + 1}" for k in range(ds.d_covariates)]
        + [f"y{j + 1}" for j in range(ds.p_visits)]
    )
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(ds.n_subjects):
            w.writerow(
                [ds.subject_ids[i], str(int(ds.arm[i]))]
                + [_fmt(v) for v in ds.covariates[i]]
                + [_fmt(v) for v in ds.outcomes[i]]
            )


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------

@dataclass
class SimSpec:
    """Generating model for a synthetic two-arm trial.

    ``alpha`` is ``p x q`` with columns (intercept, covariates..., arm), so
    ``alpha[:, -1]`` are the per-visit treatment effects. ``dropout[g, j]``
    is the probability that a subject in arm ``g`` still on study misses
    visit ``j`` and every later one. Each visit before the last observed one
    is additionally missing with probability ``intermittent``.
    """

    alpha: np.ndarray
    Sigma: np.ndarray
    n_control: int
    n_active: int
    covariate_mean: np.ndarray = field(default_factory=lambda: np.zeros(0))
    covariate_sd: np.ndarray = field(default_factory=lambda: np.zeros(0))
    dropout: np.ndarray | None = None
    intermittent: float = 0.0

    def __post_init__(self):
        self.alpha = np.atleast_2d(np.asarray(self.alpha, dtype=float))
        self.Sigma = np.atleast_2d(np.asarray(self.Sigma, dtype=float))
        p, q = self.alpha.shape
        d = q - 2
        if d < 0:
            raise ValueError("alpha needs at least intercept and arm columns")
        self.covariate_mean = np.broadcast_to(
            np.asarray(self.covariate_mean, dtype=float), (d,)
        ).copy()
        self.covariate_sd = np.broadcast_to(
            np.asarray(self.covariate_sd if d else np.zeros(0), dtype=float), (d,)
        ).copy()
        if self.Sigma.shape != (p, p):
            raise ValueError("Sigma must be p x p")
        if self.dropout is None:
            self.dropout = np.zeros((2, p))
        self.dropout = np.broadcast_to(np.asarray(self.dropout, dtype=float), (2, p)).copy()
        if np.any((self.dropout < 0) | (self.dropout > 1)):
            raise ValueError("dropout probabilities must lie in [0, 1]")
        if not 0.0 <= self.intermittent <= 1.0:
            raise ValueError("intermittent probability must lie in [0, 1]")


def simulate_trial(spec: SimSpec, seed: int) -> TrialDataset:
    """Draw a dataset from the MMRM of ``spec`` and apply its missingness."""
    try:
        chol = np.linalg.cholesky(spec.Sigma)
    except np.linalg.LinAlgError:
        raise ValueError("Sigma is not positive definite") from None
    rng = np.random.default_rng(seed)
    p, q = spec.alpha.shape
    d = q - 2
    n = spec.n_control + spec.n_active
    arm = np.r_[np.zeros(spec.n_control, dtype=np.int64), np.ones(spec.n_active, dtype=np.int64)]
    arm = rng.permutation(arm)
    x = spec.covariate_mean + spec.covariate_sd * rng.standard_normal((n, d))
    X = np.column_stack([np.ones(n), x, arm])
    y = X @ spec.alpha.T + rng.standard_normal((n, p)) @ chol.T

    # monotone dropout: stay[i] = number of visits before leaving
    u = rng.random((n, p))
    leave = u < spec.dropout[arm]
    stay = np.where(leave.any(axis=1), np.argmax(leave, axis=1), p)
    mask = np.arange(p)[None, :] < stay[:, None]
    if spec.intermittent > 0:
        gaps = rng.random((n, p)) < spec.intermittent
        # the last on-study visit stays observed so the pattern is unchanged
        before_last = np.arange(p)[None, :] < (stay[:, None] - 1)
        mask &= ~(gaps & before_last)
    y[~mask] = np.nan
    ids = tuple(f"S{i + 1:05d}" for i in range(n))
    return TrialDataset(ids, arm, x, y, mask)
