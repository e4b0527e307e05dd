import itertools

import numpy as np
import pytest

from biplink import synth
from biplink.model import LatentState, log_likelihood_bruteforce


def test_generate_deterministic():
    d1, t1 = synth.generate(seed=5)
    d2, t2 = synth.generate(seed=5)
    assert np.array_equal(d1.A.triples, d2.A.triples)
    assert np.array_equal(t1.L, t2.L) and np.array_equal(t1.O_F, t2.O_F)
    d3, _ = synth.generate(seed=6)
    assert not np.array_equal(d1.A.triples, d3.A.triples) or d1.A.dims != d3.A.dims


def test_reference_shape(reference):
    data, truth = reference
    assert data.dims == (40, 60, 50)
    assert truth.L.shape == (40, 60)
    kinds = [m.kind for m in data.meta]
    assert kinds.count("zoocentric") / len(kinds) == pytest.approx(0.76, abs=0.03)
    A = data.A
    assert truth.L[A.i, A.j].all()
    assert truth.O_F[A.i, A.s].all() and truth.O_P[A.j, A.s].all()


def test_perfect_detection_records_every_exposed_link():
    data, truth = synth.generate(n_F=8, n_P=9, n_S=4, kind_mix=(0, 0, 1, 0), perfect_detection=True,
                                 force_all_present=True, seed=2)
    A = data.A.to_dense()
    assert np.array_equal(A, np.repeat(truth.L[:, :, None], 4, axis=2))


def test_very_negative_intercept_gives_no_records():
    data, truth = synth.generate(n_F=8, n_P=9, n_S=4, lambda0_true=-60.0, lambda_true=(0.0,),
                                 H_true=1, kind_mix=(0, 0, 1, 0), seed=2)
    assert len(data.A) == 0


def test_record_density_matches_expectation():
    # conditional on the truth, each exposed link is recorded with probability p_i q_j
    obs, expect, var = 0.0, 0.0, 0.0
    for seed in range(400):
        data, t = synth.generate(n_F=10, n_P=12, n_S=6, kind_mix=(0, 0, 1, 0), seed=seed)
        exposed = t.L[:, :, None] & t.O_F[:, None, :] & t.O_P[None, :, :]
        pq = np.outer(t.p, t.q)[:, :, None]
        obs += len(data.A)
        expect += float((exposed * pq).sum())
        var += float((exposed * pq * (1 - pq)).sum())
    assert abs(obs - expect) < 3 * np.sqrt(var)


def test_write_dataset(reference, tmp_path):
    data, truth = reference
    synth.write_dataset(data, truth, tmp_path)
    for name in ("interactions.csv", "studies.csv", "config.yaml"):
        assert (tmp_path / name).exists()


# --------------------------------------------------------- exact oracle

def _independent_marginals(data, theta, p, q, pi_F, pi_P):
    """Plain enumeration over all (L, O_F, O_P) using the triple-by-triple likelihood."""
    n_F, n_P, n_S = data.dims
    dummy = LatentState(U=np.zeros((n_F, 1)), V=np.zeros((n_P, 1)), lambda0=0.0,
                        mgp_deltas=np.ones(1), rho_U=0.5, rho_V=0.5, beta0=np.zeros(0),
                        beta=np.zeros((0, 1)), gamma0=np.zeros(0), gamma=np.zeros((0, 1)),
                        trait_var_X=np.zeros(0), trait_var_W=np.zeros(0),
                        delta0=0.0, delta=np.zeros(1), zeta0=0.0, zeta=np.zeros(1),
                        L=None, O_F=None, O_P=None, pi_F=pi_F, pi_P=pi_P)
    # detection enters only through p and q; override the logistic maps
    dummy.delta0, dummy.zeta0 = 0.0, 0.0
    weights, Ls, OFs, OPs = [], [], [], []
    for bits in itertools.product([0, 1], repeat=n_F * n_P + n_F * n_S + n_P * n_S):
        b = np.array(bits, dtype=bool)
        L = b[:n_F * n_P].reshape(n_F, n_P)
        OF = b[n_F * n_P:n_F * n_P + n_F * n_S].reshape(n_F, n_S)
        OP = b[n_F * n_P + n_F * n_S:].reshape(n_P, n_S)
        prior = (np.prod(np.where(L, theta, 1 - theta)) * np.prod(np.where(OF, pi_F, 1 - pi_F))
                 * np.prod(np.where(OP, pi_P, 1 - pi_P)))
        if prior == 0:
            continue
        dummy.L, dummy.O_F, dummy.O_P = L, OF, OP
        ll = _ll_fixed_pq(dummy, data, p, q)
        if ll == -np.inf:
            continue
        weights.append(prior * np.exp(ll))
        Ls.append(L), OFs.append(OF), OPs.append(OP)
    w = np.array(weights) / np.sum(weights)
    return (np.tensordot(w, np.array(Ls, float), 1), np.tensordot(w, np.array(OFs, float), 1),
            np.tensordot(w, np.array(OPs, float), 1))


def _ll_fixed_pq(state, data, p, q):
    A = data.A.to_dense()
    F = data.focus.to_dense()
    total = 0.0
    for i, j, s in itertools.product(*map(range, A.shape)):
        on = state.L[i, j] and F[i, j, s] and state.O_F[i, s] and state.O_P[j, s]
        prob = p[i] * q[j] if on else 0.0
        pa = prob if A[i, j, s] else 1 - prob
        if pa == 0:
            return -np.inf
        total += np.log(pa)
    return total


@pytest.mark.parametrize("seed", range(6))
def test_exact_posterior_matches_independent_enumeration(seed):
    data, theta, p, q = synth.random_tiny_instance(seed)
    pi_F, pi_P = data.prior.P_OF, data.prior.P_OP
    ex = synth.exact_posterior_tiny(data, theta, p, q, pi_F, pi_P)
    L, OF, OP = _independent_marginals(data, theta, p, q, pi_F, pi_P)
    assert np.allclose(ex["L"], L, atol=1e-12)
    assert np.allclose(ex["O_F"], OF, atol=1e-12)
    assert np.allclose(ex["O_P"], OP, atol=1e-12)
    for m in (ex["L"], ex["O_F"], ex["O_P"]):
        assert np.all((m >= 0) & (m <= 1 + 1e-12))
    assert np.isfinite(ex["log_Z"])


def test_exact_posterior_prior_when_nothing_observed():
    from conftest import make_data
    data = make_data([(0, 0, 0)], (2, 2, 1))
    data.focus.animal_mask[:] = False
    data.focus.plant_mask[:] = False
    theta = np.full((2, 2), 0.5)
    pi = np.full((2, 1), 0.5)
    # drop the record too: nothing observed, nothing exposed
    data = data.with_(A=type(data.A).from_triples([], (2, 2, 1)))
    ex = synth.exact_posterior_tiny(data, theta, np.full(2, 0.6), np.full(2, 0.6), pi, pi)
    assert np.allclose(ex["L"], 0.5) and np.allclose(ex["O_F"], 0.5) and np.allclose(ex["O_P"], 0.5)


def test_exact_posterior_observed_triple_forced():
    data, theta, p, q = synth.random_tiny_instance(0)
    ex = synth.exact_posterior_tiny(data, theta, p, q, data.prior.P_OF, data.prior.P_OP)
    A = data.A
    assert len(A) > 0
    assert np.allclose(ex["L"][A.i, A.j], 1.0)
    assert np.allclose(ex["O_F"][A.i, A.s], 1.0) and np.allclose(ex["O_P"][A.j, A.s], 1.0)


def test_exact_posterior_size_limit():
    data, theta, p, q = synth.random_tiny_instance(0, n_F=3, n_P=3, n_S=2)
    with pytest.raises(ValueError):
        synth.exact_posterior_tiny(data, theta, p, q, data.prior.P_OF, data.prior.P_OP)


def test_stack_instances_block_structure():
    insts = [synth.random_tiny_instance(s) for s in range(3)]
    data, theta, p, q, blocks = synth.stack_instances(insts)
    assert data.dims == (6, 6, 6)
    f = data.focus.to_dense()
    for a, (sa, sp, ss) in enumerate(blocks):
        for b, (ta, tp, ts) in enumerate(blocks):
            if a != b:
                assert not f[sa, tp, :].any()
                assert np.all(data.prior.P_OF[sa, ts] == 0)


def test_truncnorm_mean_symmetric():
    assert synth.truncnorm_mean(0.5) == pytest.approx(0.5)
    assert synth.truncnorm_mean(0.75) > 0.5
