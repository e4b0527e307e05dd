import numpy as np
import pytest

from biplink import netdata, posterior, synth
from biplink.gibbs import ChainConfig, ChainOutput, run_chain
from biplink.model import Hyperparams


def _fake_output(prob, n_S=2, loglik=None, variant="COIL_PLUS"):
    R, n_F, n_P = prob.shape
    T = 20 if loglik is None else len(loglik)
    return ChainOutput(prob_samples=prob.astype(np.float32),
                       loglik_trace=np.zeros(T) if loglik is None else loglik,
                       occ_F_samples=np.ones((R, n_F, n_S)), occ_P_samples=np.ones((R, n_P, n_S)),
                       rho_U_trace=np.zeros(T), rho_V_trace=np.zeros(T), lambda0_trace=np.zeros(T),
                       accept={"accepted_F": 1, "proposed_F": 2, "accepted_P": 0, "proposed_P": 0},
                       variant=variant, retained_iters=np.arange(T - R, T))


def test_identical_samples_give_that_sample(tiny_data):
    sample = np.array([[0.2, 0.4], [0.6, 0.1]])
    out = _fake_output(np.repeat(sample[None], 5, axis=0))
    s = posterior.summarize([out], tiny_data.A)
    seen = tiny_data.A.pair_counts() > 0
    assert np.allclose(s.mean_prob[~seen], sample[~seen], atol=1e-6)
    assert np.all(s.mean_prob[seen] == 1.0)
    assert s.n_samples == 5


def test_new_link_counts_exclude_observed(tiny_data):
    prob = np.full((3, 2, 2), 0.8)
    s = posterior.summarize([_fake_output(prob)], tiny_data.A)
    assert s.new_link_counts[0.5] == 2 and s.new_link_counts[0.75] == 2
    assert s.prevalence[0.5] == 1.0
    assert s.observed_prevalence == 0.5


def test_shape_mismatch(tiny_data):
    with pytest.raises(ValueError):
        posterior.summarize([_fake_output(np.zeros((2, 3, 2)))], tiny_data.A)
    with pytest.raises(ValueError):
        posterior.summarize([_fake_output(np.zeros((2, 2, 2))), _fake_output(np.zeros((3, 2, 2)))],
                            tiny_data.A)


def test_gelman_rubin_identical_chains():
    x = np.random.default_rng(0).standard_normal(500)
    assert posterior.gelman_rubin([x, x, x]) == pytest.approx(1.0, abs=1e-9)


def test_gelman_rubin_split_sees_drift():
    x = np.linspace(0, 10, 400) + np.random.default_rng(4).standard_normal(400)
    assert posterior.gelman_rubin([x, x], split=True) > 1.5


def test_gelman_rubin_disjoint_means():
    rng = np.random.default_rng(1)
    assert posterior.gelman_rubin([rng.standard_normal(500), 10 + rng.standard_normal(500)]) > 2


def test_gelman_rubin_iid():
    rng = np.random.default_rng(2)
    assert posterior.gelman_rubin(rng.standard_normal((4, 1000))) < 1.05


def test_gelman_rubin_needs_chains():
    with pytest.raises(ValueError):
        posterior.gelman_rubin([np.zeros(100)])


@pytest.fixture(scope="module")
def small_fits():
    data, _ = synth.generate(n_F=10, n_P=12, n_S=8, seed=4)
    data = netdata.with_prior(data, "expert")
    cfg = dict(n_iter=40, n_burn=20, thin_keep_fraction=0.5, hyperparams=Hyperparams(H=3))
    coil = [run_chain(data, ChainConfig(sampler_variant="COIL", **cfg), c) for c in range(2)]
    plus = [run_chain(data, ChainConfig(sampler_variant="COIL_PLUS", **cfg), c) for c in range(2)]
    return data, coil, plus


def test_tier_table_directions(small_fits):
    data, coil, plus = small_fits
    tc = posterior.occurrence_tier_summary(coil, data)
    tp = posterior.occurrence_tier_summary(plus, data)
    for side in ("animal", "plant"):
        assert tc[side]["same_study"] == 1.0 and tp[side]["same_study"] == 1.0
        if not np.isnan(tc[side]["different_zone"]):
            assert tc[side]["different_zone"] == 0.0
            assert tp[side]["different_zone"] > 0.0


def test_naive_coil_tiers_all_zero(small_fits):
    data, _, _ = small_fits
    naive = netdata.with_prior(data, "naive")
    outs = [run_chain(naive, ChainConfig(n_iter=20, n_burn=10, thin_keep_fraction=0.5,
                                         sampler_variant="COIL", hyperparams=Hyperparams(H=2)))]
    table = posterior.summarize(outs, naive.A, data=naive).occ_tier_table
    for side in ("animal", "plant"):
        for name in netdata.TIER_NAMES[1:]:
            v = table[side][name]
            assert np.isnan(v) or v == 0.0


def test_summary_rhat_and_acceptance(small_fits):
    data, _, plus = small_fits
    s = posterior.summarize(plus, data.A, data=data)
    assert np.isfinite(s.rhat)
    assert s.acceptance["proposed_F"] == sum(o.accept["proposed_F"] for o in plus)
    F, P = posterior.occurrence_means(plus)
    assert F.shape == (10, 8) and P.shape == (12, 8)
