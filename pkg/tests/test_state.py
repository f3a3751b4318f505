import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from grtm.corpus import Corpus, Document, TrainPairSet, build_train_pairs
from grtm.state import (
    Hyperparams,
    PairCache,
    PosteriorEstimate,
    discriminant,
    eta_to_matrix,
    init_state,
    posterior_from_state,
    zbar,
)

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


def _simplex(k):
    return hnp.arrays(np.float64, k, elements=st.floats(0.0, 1.0)).map(
        lambda v: v / v.sum() if v.sum() > 0 else np.full(k, 1.0 / k))


def test_hyperparam_validation():
    Hyperparams()
    with pytest.raises(ValueError):
        Hyperparams(K=0)
    with pytest.raises(ValueError):
        Hyperparams(alpha=-1)
    with pytest.raises(ValueError):
        Hyperparams(nu2=0)
    with pytest.raises(ValueError):
        Hyperparams(loss="squared")
    with pytest.raises(ValueError):
        Hyperparams(loss="hinge", ell=0.5)
    Hyperparams(loss="logistic", ell=0.5)
    with pytest.raises(ValueError):
        Hyperparams(K=3, alpha=[1.0, 2.0])


def test_hyperparam_defaults_and_round_trip():
    hp = Hyperparams()
    assert (hp.K, hp.alpha, hp.c_neg, hp.c_pos, hp.burn_in) == (10, 5.0, 1.0, 4.0, 400)
    hp2 = Hyperparams(K=2, alpha=[1.0, 2.0], beta=0.1)
    assert Hyperparams.from_dict(hp2.to_dict()) == hp2
    assert hp2.alpha_vector().tolist() == [1.0, 2.0]
    assert hp2.beta_vector(3).tolist() == [0.1] * 3


def test_discriminant_examples():
    e1 = np.array([1.0, 0.0])
    assert discriminant(np.eye(2).ravel(), e1, e1, True) == 1.0
    assert discriminant(np.zeros(4), e1, e1, True) == 0.0
    U = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert discriminant(U.ravel(), [0.5, 0.5], [1.0, 0.0], True) == pytest.approx(2.0)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 5).flatmap(lambda k: st.tuples(
    hnp.arrays(np.float64, k, elements=finite), _simplex(k), _simplex(k))))
def test_diagonal_equals_full_with_zero_off_diagonal(args):
    diag, zi, zj = args
    full = np.diag(diag).ravel()
    assert discriminant(diag, zi, zj, False) == pytest.approx(discriminant(full, zi, zj, True), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 5).flatmap(lambda k: st.tuples(
    hnp.arrays(np.float64, k, elements=finite), _simplex(k), _simplex(k))))
def test_diagonal_mode_is_symmetric(args):
    diag, zi, zj = args
    assert discriminant(diag, zi, zj, False) == pytest.approx(discriminant(diag, zj, zi, False), abs=1e-12)


def test_full_mode_can_be_asymmetric():
    U = np.array([[0.0, 1.0], [0.0, 0.0]])
    zi, zj = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    assert discriminant(U.ravel(), zi, zj, True) != discriminant(U.ravel(), zj, zi, True)


def test_eta_to_matrix_rows():
    eta = np.arange(4.0)
    assert eta_to_matrix(eta, 2, True).tolist() == [[0.0, 1.0], [2.0, 3.0]]
    assert eta_to_matrix(np.array([1.0, 2.0]), 2, False).tolist() == [[1.0, 0.0], [0.0, 2.0]]


def test_pair_cache_derived_quantities():
    pc = PairCache.build([0, 1, 2], [1, 2, 0], [1, 0, 1], [4.0, 1.0, 4.0], 3)
    assert pc.kappa.tolist() == [2.0, -0.5, 2.0]
    assert pc.ytilde.tolist() == [1.0, -1.0, 1.0]
    pc.omega[:] = [0.5, -0.2, 3.0]
    assert np.allclose(pc.zeta(1.0), [0.5, 0.8, -2.0])
    assert pc.out_neighbors(0).tolist() == [1]
    assert pc.in_neighbors(0).tolist() == [2]


def _corpus_100_tokens():
    rng = np.random.default_rng(0)
    lengths = [30, 25, 20, 15, 10]
    docs = [Document(str(i), rng.integers(0, 7, n)) for i, n in enumerate(lengths)]
    return Corpus(docs, 7, {(0, 1), (1, 2), (3, 4), (4, 0)})


def test_init_state_counts_and_lambda():
    corpus = _corpus_100_tokens()
    pairs = build_train_pairs(corpus, range(5), 1.0, 4.0, 1.0, seed=0)
    hp = Hyperparams(K=3)
    state = init_state(corpus, pairs, hp, np.random.default_rng(1))
    assert state.Ck.sum() == 100
    assert np.array_equal(state.Ckt.sum(axis=1), state.Ck)
    assert state.Cik.sum(axis=1).tolist() == [30, 25, 20, 15, 10]
    assert (state.lam == 1.0).all() and state.lam.shape == (len(pairs),)
    assert state.eta.shape == (9,)
    state.check_consistency()
    again = init_state(corpus, pairs, hp, np.random.default_rng(1))
    assert np.array_equal(again.z, state.z)
    assert np.array_equal(again.eta, state.eta)


def test_init_state_eta_prior_scale():
    corpus = Corpus([Document("a", [0])], 1)
    hp = Hyperparams(K=20, nu2=4.0)
    etas = np.array([init_state(corpus, TrainPairSet.empty(), hp, np.random.default_rng(s)).eta for s in range(500)])
    assert etas.std() == pytest.approx(2.0, rel=0.05)


def test_init_state_rejects_pairs_outside_subset():
    corpus = _corpus_100_tokens()
    pairs = TrainPairSet([0], [4], [1], [1.0])
    with pytest.raises(ValueError):
        init_state(corpus, pairs, Hyperparams(K=2), np.random.default_rng(0), doc_ids=[0, 1, 2])


def test_zbar_examples():
    docs = [Document("a", [0, 1, 0, 1]), Document("b", [])]
    state = init_state(Corpus(docs, 2), TrainPairSet.empty(), Hyperparams(K=2), np.random.default_rng(0))
    state.z[:] = 0
    state.Ckt, state.Cik, state.Ck = state.recount()
    assert zbar(state, 0).tolist() == [1.0, 0.0]
    state.z[:] = [0, 1, 0, 1]
    state.Ckt, state.Cik, state.Ck = state.recount()
    assert zbar(state, 0).tolist() == [0.5, 0.5]
    assert zbar(state, 1).tolist() == [0.0, 0.0]


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 12), min_size=1, max_size=6), st.integers(1, 6), st.integers(0, 1000))
def test_zbar_sums_to_one(lengths, K, seed):
    docs = [Document(str(i), np.zeros(n, dtype=int)) for i, n in enumerate(lengths)]
    state = init_state(Corpus(docs, 1), TrainPairSet.empty(), Hyperparams(K=K), np.random.default_rng(seed))
    for i in range(len(docs)):
        assert zbar(state, i).sum() == pytest.approx(1.0)


def test_consistency_check_detects_drift():
    corpus = _corpus_100_tokens()
    state = init_state(corpus, TrainPairSet.empty(), Hyperparams(K=3), np.random.default_rng(0))
    state.Ckt[0, 0] += 1
    with pytest.raises(AssertionError):
        state.check_consistency()


def test_posterior_estimate_round_trip(tmp_path):
    corpus = _corpus_100_tokens()
    pairs = build_train_pairs(corpus, range(5), 1.0, 4.0, 1.0, seed=0)
    for full in (True, False):
        hp = Hyperparams(K=3, full_matrix=full, alpha=[1.0, 2.0, 3.0])
        state = init_state(corpus, pairs, hp, np.random.default_rng(2))
        est = posterior_from_state(state, hp, corpus)
        assert np.allclose(est.phi_hat.sum(axis=1), 1.0, atol=1e-9)
        assert (est.phi_hat > 0).all()
        path = tmp_path / f"m{full}.json"
        est.save(str(path))
        back = PosteriorEstimate.load(str(path))
        assert np.array_equal(back.topic_word_counts, est.topic_word_counts)
        assert np.array_equal(back.phi_hat, est.phi_hat)
        assert np.array_equal(back.U_hat, est.U_hat)
        assert back.hyperparams == hp
        assert back.doc_external_ids == est.doc_external_ids
        assert back.U_matrix().shape == (3, 3)


def test_model_file_version_checked(tmp_path):
    corpus = _corpus_100_tokens()
    hp = Hyperparams(K=2)
    est = posterior_from_state(init_state(corpus, TrainPairSet.empty(), hp, np.random.default_rng(0)), hp)
    d = est.to_dict()
    d["version"] = 99
    with pytest.raises(ValueError):
        PosteriorEstimate.from_dict(d)
