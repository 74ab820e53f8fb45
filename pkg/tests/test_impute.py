from __future__ import annotations

import numpy as np
import pytest

from pmmimpute.data import TrialDataset, index_patterns
from pmmimpute.impute import (PmmMethod, build_replicates, impute_draw, impute_mar, mar_batch,
                              mcr_flags, pmm_shift, replicate_rng)
from pmmimpute.linalg import pattern_blocks
from pmmimpute.params import MarginalParams, SequentialParams
from pmmimpute.prior import jeffreys
from pmmimpute.sampler import ChainConfig, run_chain

from conftest import all_methods, oracle_conditional, random_phi


def test_method_validation():
    with pytest.raises(ValueError, match="unknown"):
        PmmMethod("LOCF")
    with pytest.raises(ValueError, match="phi"):
        PmmMethod("ECR")
    with pytest.raises(ValueError, match="phi"):
        PmmMethod("ECR", phi=1.5)
    with pytest.raises(ValueError, match="delta"):
        PmmMethod("UDELTA")
    with pytest.raises(ValueError, match="variant"):
        PmmMethod("CDELTA", delta=1.0)
    with pytest.raises(ValueError, match="0/1"):
        PmmMethod("MCR", mcr_flags=(0, 2))
    with pytest.raises(ValueError, match="expected 1 or p"):
        PmmMethod("UDELTA", delta=[1.0, 2.0]).delta_vector(3)


def test_labels():
    assert PmmMethod("ecr", phi=0.5).label == "ECR(0.5)"
    assert PmmMethod("CDELTA", delta=-4, variant="first").label == "CDELTA(first,-4)"
    assert PmmMethod("UDELTA", delta=-3).label == "UDELTA(-3)"
    assert PmmMethod("J2R", name="jump").label == "jump"


def test_matrix_equals_sequential_mar(rng):
    p, q = 5, 3
    phi = random_phi(p, q, rng)
    x = np.array([1.0, 0.7, 1.0])
    for s in range(p):
        y_pre = rng.normal(size=s)
        e = rng.standard_normal(p - s)
        got = impute_mar(x, y_pre, phi, e)
        y = np.r_[y_pre, np.zeros(p - s)]
        for j in range(s, p):
            y[j] = phi.ualpha[j] @ x + phi.beta[j, :j] @ y[:j] + e[j - s] / np.sqrt(phi.gamma[j])
        np.testing.assert_allclose(got, y[s:], rtol=0, atol=1e-12)


def test_shifts_zero_in_control(rng):
    phi = random_phi(4, 3, rng)
    for m in all_methods(4):
        for s in range(4):
            assert not pmm_shift(m, s, 0, phi).any()


@pytest.mark.parametrize("idx", range(9))
def test_shift_matches_oracle_mean(rng, idx):
    # the engine's mean (MAR mean minus shift) against a marginal-model oracle
    p, q = 4, 3
    phi = random_phi(p, q, rng)
    m = all_methods(p)[idx]
    x = np.array([1.0, -0.4, 1.0])
    for s in range(p):
        y_pre = rng.normal(size=s)
        b = pattern_blocks(phi.factors(), s)
        mar_mean = b.L22 @ (phi.ualpha[s:] @ x - b.U21 @ y_pre)
        got = mar_mean - pmm_shift(m, s, 1, phi)
        want, cov = oracle_conditional(phi, m, s, x, y_pre)
        np.testing.assert_allclose(got, want, atol=1e-10)
        np.testing.assert_allclose(b.conditional_cov, cov, atol=1e-10)


def test_cir_at_baseline_equals_j2r(rng):
    phi = random_phi(3, 2, rng)
    np.testing.assert_array_equal(pmm_shift(PmmMethod("CIR"), 0, 1, phi),
                                  pmm_shift(PmmMethod("J2R"), 0, 1, phi))


def test_mcr_flags_signs():
    # udelta = U delta; choose Sigma diagonal so udelta = delta
    alpha = np.array([[0.0, 1.0], [0.0, -0.5], [0.0, 2.0]])
    flags = mcr_flags(MarginalParams(alpha, np.eye(3)))
    assert flags.tolist() == [0, 1, 0]
    alpha[:, 1] = [-1.0, 0.0, -2.0]
    assert mcr_flags(MarginalParams(alpha, np.eye(3))).tolist() == [0, 0, 0]


def _toy_dataset():
    y = np.array([[1.0, 2.0, 3.0],
                  [1.0, np.nan, 2.5],
                  [0.5, np.nan, np.nan],
                  [np.nan] * 3,
                  [0.2, 1.1, np.nan],
                  [0.1, 0.3, 0.7]])
    arm = [0, 1, 1, 1, 0, 1]
    return TrialDataset(tuple("abcdef"), arm, np.arange(6.0)[:, None], y, np.isfinite(y))


def test_impute_draw_coupling_identities(rng):
    ds = _toy_dataset()
    pi = index_patterns(ds)
    phi = random_phi(3, 3, rng)
    filled = np.array(ds.outcomes)
    filled[1, 1] = 1.7
    methods = [PmmMethod("MAR"), PmmMethod("ECR", phi=0.0), PmmMethod("ECR", phi=1.0),
               PmmMethod("CR"), PmmMethod("MCR", mcr_flags=(0, 0, 0)), PmmMethod("CIR"),
               PmmMethod("J2R")]
    out = impute_draw(ds, pi, phi, filled, methods, np.random.default_rng(1))
    np.testing.assert_array_equal(out["ECR(0)"], out["MAR"])
    np.testing.assert_array_equal(out["ECR(1)"], out["CR"])
    np.testing.assert_array_equal(out["MCR"], out["CR"])
    # CIR - J2R = delta_s on every post-dropout visit of an active subject
    diff = out["CIR"] - out["J2R"]
    delta = phi.delta
    for i in range(6):
        s = int(pi.dropout[i])
        expect = np.zeros(3)
        if ds.arm[i] == 1 and s > 0:
            expect[s:] = delta[s - 1]
        np.testing.assert_allclose(np.nan_to_num(diff[i]), expect, rtol=0, atol=1e-12)
    # control subjects and observed cells are identical across methods
    for lab in out:
        np.testing.assert_array_equal(out[lab][ds.arm == 0], out["MAR"][ds.arm == 0])
        np.testing.assert_array_equal(out[lab][ds.observed_mask], ds.outcomes[ds.observed_mask])
        assert np.all(np.isfinite(out[lab]))
    np.testing.assert_array_equal(out["MAR"][1, 1], 1.7)


def test_impute_draw_matches_impute_mar(rng):
    ds = _toy_dataset()
    pi = index_patterns(ds)
    phi = random_phi(3, 3, rng)
    filled = np.array(ds.outcomes)
    filled[1, 1] = -0.3
    out = impute_draw(ds, pi, phi, filled, [PmmMethod("MAR")], np.random.default_rng(4))
    E = np.random.default_rng(4).standard_normal((6, 3))
    X = ds.design()
    for i in [2, 3, 4]:
        s = int(pi.dropout[i])
        want = impute_mar(X[i], out["MAR"][i, :s], phi, E[i, : 3 - s])
        np.testing.assert_allclose(out["MAR"][i, s:], want, atol=1e-12)


def test_mar_batch_pattern_zero(rng):
    phi = random_phi(3, 2, rng)
    b = pattern_blocks(phi.factors(), 0)
    X = np.array([[1.0, 0.0], [1.0, 1.0]])
    E = np.zeros((2, 3))
    got = mar_batch(X, np.zeros((2, 0)), phi, b, E)
    np.testing.assert_allclose(got, X @ phi.to_marginal().alpha.T, atol=1e-12)


def test_build_replicates_thread_free_streams(monotone_ds):
    draws = run_chain(monotone_ds, jeffreys(3, 3), ChainConfig(3, burn_in=2, thin=1, seed=5))
    pi = index_patterns(monotone_ds)
    reps = build_replicates(monotone_ds, pi, draws, [PmmMethod("MAR"), PmmMethod("J2R")], 9)
    assert len(reps) == 6
    again = impute_draw(monotone_ds, pi, draws[2].params, draws[2].filled,
                        [PmmMethod("MAR")], replicate_rng(9, 2))
    np.testing.assert_array_equal(reps[4].outcomes, again["MAR"])
    assert reps[4].method == "MAR" and reps[5].method == "J2R"
