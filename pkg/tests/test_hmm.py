from __future__ import annotations

import numpy as np
import pytest

from leakhmm import gmm, hmm
from leakhmm.errors import DimensionMismatchError, InvalidInputError, NoAdmissiblePathError
from leakhmm.features import ObservationSequence
from leakhmm.gmm import GaussianMixture
from leakhmm.hmm import HmmModel, Topology, TrainConfig
from leakhmm.synth import ScenarioSpec, brute_force_evaluate, rng_for


def random_model(rng, n, k=1, d=2, topology=Topology.ERGODIC):
    mask = hmm.allowed_transitions(topology, n)
    A = rng.dirichlet(np.ones(n), size=n) * mask
    A /= A.sum(axis=1, keepdims=True)
    emissions = []
    for _ in range(n):
        covs = [np.eye(d) * rng.uniform(0.5, 2.0) for _ in range(k)]
        emissions.append(GaussianMixture.from_arrays(rng.dirichlet(np.ones(k)), rng.normal(size=(k, d)) * 2, covs))
    return HmmModel(rng.dirichlet(np.ones(n)), A, emissions, topology)


def unit(mean):
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    return GaussianMixture.single(mean, np.eye(mean.size))


# -- model validation --------------------------------------------------------


def test_model_validation():
    with pytest.raises(InvalidInputError):
        HmmModel([0.5, 0.6], np.eye(2))
    with pytest.raises(InvalidInputError):
        HmmModel([1.0, 0.0], [[0.5, 0.4], [0, 1]])
    with pytest.raises(InvalidInputError, match="forbids"):
        HmmModel([1.0, 0.0], [[0.5, 0.5], [0.1, 0.9]], topology=Topology.LEFT_TO_RIGHT)
    with pytest.raises(InvalidInputError):
        HmmModel([1.0, 0.0], np.eye(2), state_names=["a", "a"])
    with pytest.raises(DimensionMismatchError):
        HmmModel([1.0, 0.0], np.eye(2), [unit([0]), unit([0, 0])])


def test_left_to_right_mask():
    m = hmm.allowed_transitions(Topology.LEFT_TO_RIGHT, 3)
    assert m.tolist() == [[True, True, False], [False, True, True], [False, False, True]]


# -- single-state cases ------------------------------------------------------


def test_single_state_model():
    mix = GaussianMixture.from_arrays([0.4, 0.6], [[0, 0], [1, 2]], [np.eye(2), 2 * np.eye(2)])
    model = HmmModel([1.0], [[1.0]], [mix])
    X = np.random.default_rng(0).normal(size=(9, 2))
    assert hmm.sequence_log_likelihood(model, X) == pytest.approx(gmm.log_density(mix, X).sum(), rel=1e-12)
    gamma, xi, _ = hmm.forward_backward(model, X)
    assert np.all(gamma == 1.0) and np.all(xi == 1.0)
    assert hmm.viterbi(model, X)[0].tolist() == [0] * 9
    assert hmm.posterior_decode(model, X).tolist() == [0] * 9


# -- brute-force agreement ---------------------------------------------------


def test_matches_brute_force_larger_instances():
    rng = rng_for(99)
    for trial in range(40):
        n = int(rng.integers(1, 5))
        T = int(rng.integers(1, 9))
        model = random_model(rng, n, k=int(rng.integers(1, 3)))
        X = rng.normal(size=(T, 2)) * 2
        bf = brute_force_evaluate(model, X)
        gamma, _, ll = hmm.forward_backward(model, X)
        assert ll == pytest.approx(bf.log_likelihood, abs=1e-9)
        np.testing.assert_allclose(gamma, bf.gamma, atol=1e-9)
        path, lp = hmm.viterbi(model, X)
        assert lp == pytest.approx(bf.best_log_prob, abs=1e-9)
        assert path.tolist() == bf.best_path.tolist()


def test_far_tail_observation_is_finite():
    model = HmmModel([1.0, 0.0], [[0.5, 0.5], [0.5, 0.5]], [unit([0.0]), unit([5.0])])
    X = np.array([[20.0], [0.0], [5.0]])
    ll = hmm.sequence_log_likelihood(model, X)
    assert np.isfinite(ll) and ll <= -50
    assert ll == pytest.approx(brute_force_evaluate(model, X).log_likelihood, abs=1e-9)
    # 60 sigma out: densities underflow in probability space, log form stays finite
    X = np.array([[60.0], [61.0]])
    assert np.isfinite(hmm.sequence_log_likelihood(model, X))
    gamma, _, _ = hmm.forward_backward(model, X)
    assert np.all(np.isfinite(gamma))


def test_identity_transitions_pin_state():
    model = HmmModel([1.0, 0.0], np.eye(2), [unit([0.0]), unit([3.0])])
    X = np.array([[3.0], [3.0], [-1.0], [3.0]])
    gamma, _, _ = hmm.forward_backward(model, X)
    assert np.array_equal(gamma, np.tile([1.0, 0.0], (4, 1)))


def test_left_to_right_viterbi_is_nondecreasing():
    rng = np.random.default_rng(1)
    A = [[0.9, 0.1, 0.0], [0.0, 0.9, 0.1], [0.0, 0.0, 1.0]]
    model = HmmModel([1, 0, 0], A, [unit([0, 0]), unit([4, 0]), unit([8, 0])], Topology.LEFT_TO_RIGHT)
    X = np.vstack([rng.normal(size=(10, 2)) + [4 * s, 0] for s in range(3)])
    path, _ = hmm.viterbi(model, X)
    assert np.all(np.diff(path) >= 0)
    assert path[0] == 0
    # observations presented in reverse order still cannot produce a decrease
    path, _ = hmm.viterbi(model, X[::-1])
    assert np.all(np.diff(path) >= 0)


def test_viterbi_bounded_by_likelihood():
    rng = rng_for(3)
    for _ in range(30):
        model = random_model(rng, 3, k=2)
        X = rng.normal(size=(int(rng.integers(1, 20)), 2))
        assert hmm.viterbi(model, X)[1] <= hmm.sequence_log_likelihood(model, X) + 1e-12


def test_viterbi_invariant_to_constant_density_scale():
    rng = rng_for(4)
    model = random_model(rng, 3, k=2)
    X = rng.normal(size=(25, 2)) * 2
    log_pi, log_A = np.log(model.pi), np.log(model.A)
    log_B = model.emission_log_densities(X)
    base, _ = hmm.viterbi_log(log_pi, log_A, log_B)
    for c in (-300.0, -1.0, 7.5, 250.0):
        assert hmm.viterbi_log(log_pi, log_A, log_B + c)[0].tolist() == base.tolist()


def test_viterbi_ties_go_to_lower_state():
    model = HmmModel([0.5, 0.5], np.full((2, 2), 0.5), [unit([0.0]), unit([0.0])])
    path, _ = hmm.viterbi(model, np.zeros((4, 1)))
    assert path.tolist() == [0, 0, 0, 0]
    assert hmm.posterior_decode(model, np.zeros((4, 1))).tolist() == [0, 0, 0, 0]


def test_no_admissible_path():
    with np.errstate(divide="ignore"):
        log_pi, log_A = np.log([1.0, 0.0]), np.log(np.eye(2))
    log_B = np.array([[-np.inf, 0.0], [0.0, 0.0]])
    with pytest.raises(NoAdmissiblePathError):
        hmm.viterbi_log(log_pi, log_A, log_B)
    with pytest.raises(NoAdmissiblePathError):
        hmm._forward(log_pi, log_A, log_B[None])


def test_empty_and_mismatched_sequences():
    model = HmmModel([1.0], [[1.0]], [unit([0, 0])])
    with pytest.raises(InvalidInputError):
        hmm.sequence_log_likelihood(model, np.zeros((0, 2)))
    with pytest.raises(DimensionMismatchError):
        hmm.sequence_log_likelihood(model, np.zeros((3, 3)))


def test_single_observation_sequence():
    rng = rng_for(5)
    model = random_model(rng, 3)
    x = rng.normal(size=(1, 2))
    gamma, xi, ll = hmm.forward_backward(model, x)
    assert xi.shape == (0, 3, 3)
    w = model.pi * np.exp(model.emission_log_densities(x)[0])
    np.testing.assert_allclose(gamma[0], w / w.sum(), atol=1e-12)
    assert ll == pytest.approx(np.log(w.sum()), abs=1e-12)
    assert hmm.viterbi(model, x)[0].tolist() == [int(np.argmax(w))]


def test_step_log_likelihoods_sum():
    rng = rng_for(6)
    model = random_model(rng, 3, k=2)
    X = rng.normal(size=(12, 2))
    steps = hmm.step_log_likelihoods(model, X)
    assert steps.shape == (12,)
    assert steps.sum() == pytest.approx(hmm.sequence_log_likelihood(model, X), abs=1e-12)


# -- Baum-Welch --------------------------------------------------------------


def test_baum_welch_one_iteration_does_not_decrease():
    rng = rng_for(7)
    model = random_model(rng, 3, k=2)
    seqs = ScenarioSpec(model, 10, 30, 7).generate()
    _, rep = hmm.baum_welch(model, seqs, TrainConfig(max_iterations=1))
    a, b = rep.log_likelihood_trace
    assert b >= a - 1e-6 * abs(a)


def test_baum_welch_preserves_structure():
    rng = rng_for(8)
    truth = random_model(rng, 3, topology=Topology.LEFT_TO_RIGHT)
    seqs = ScenarioSpec(truth, 15, 40, 8).generate()
    init = hmm.make_preset("depth3_lr").with_emissions(truth.emissions[::-1])
    model, rep = hmm.baum_welch(init, seqs)
    zeros = ~hmm.allowed_transitions(Topology.LEFT_TO_RIGHT, 3)
    assert np.all(model.A[zeros] == 0.0)
    np.testing.assert_allclose(model.A.sum(axis=1), 1.0, atol=1e-9)
    assert model.pi.sum() == pytest.approx(1.0, abs=1e-9)
    tr = np.array(rep.log_likelihood_trace)
    assert np.all(np.diff(tr) >= -1e-6 * np.abs(tr[:-1]))


def test_baum_welch_single_repeated_observation():
    model = HmmModel([1.0], [[1.0]], [GaussianMixture.single([1.0, 2.0], 3 * np.eye(2))])
    seq = np.tile([0.5, -0.5], (20, 1))
    trained, rep = hmm.baum_welch(model, [seq])
    assert rep.converged and rep.iterations <= 2
    np.testing.assert_allclose(trained.emissions[0].means[0], [0.5, -0.5])


def test_baum_welch_accepts_length_one_sequences():
    rng = rng_for(9)
    model = random_model(rng, 2)
    seqs = [rng.normal(size=(1, 2)) for _ in range(10)]
    trained, rep = hmm.baum_welch(model, seqs, TrainConfig(max_iterations=5))
    assert np.array_equal(trained.A, model.A)
    assert not np.array_equal(trained.pi, model.pi)


def test_baum_welch_reports_starved_state():
    model = HmmModel([1.0, 0.0], [[1.0, 0.0], [0.0, 1.0]], [unit([0.0]), unit([1.0])])
    seqs = [np.random.default_rng(0).normal(size=(20, 1))]
    trained, rep = hmm.baum_welch(model, seqs, TrainConfig(max_iterations=3))
    assert {j for _, j in rep.starved} == {1}
    assert np.array_equal(trained.emissions[1].means, model.emissions[1].means)


def test_baum_welch_mixed_lengths_match_separate_evaluation():
    rng = rng_for(10)
    model = random_model(rng, 3, k=2)
    seqs = [rng.normal(size=(T, 2)) for T in (5, 9, 5, 1, 12)]
    _, rep = hmm.baum_welch(model, seqs, TrainConfig(max_iterations=1))
    expected = sum(hmm.sequence_log_likelihood(model, s) for s in seqs)
    assert rep.log_likelihood_trace[0] == pytest.approx(expected, abs=1e-9)


def test_baum_welch_needs_emissions():
    with pytest.raises(InvalidInputError):
        hmm.baum_welch(hmm.make_preset("leak2_lr"), [np.zeros((3, 2))])


def test_fit_state_emissions():
    rng = np.random.default_rng(11)
    X = np.vstack([rng.normal(size=(40, 2)), rng.normal(size=(40, 2)) + 5])
    seq = ObservationSequence(X, labels=[0] * 40 + [1] * 40)
    mixes, reports = hmm.fit_state_emissions([seq], 2, n_components=1)
    np.testing.assert_allclose(mixes[1].means[0], X[40:].mean(axis=0), atol=1e-12)
    with pytest.raises(InvalidInputError, match="fewer than K"):
        hmm.fit_state_emissions([seq], 2, n_components=41)


# -- presets and files -------------------------------------------------------


def test_presets():
    loc = hmm.make_preset("location3_ergodic")
    assert loc.pi.tolist() == [1, 0, 0]
    np.testing.assert_allclose(loc.A, 1 / 3)
    dep = hmm.make_preset("depth3_lr")
    assert dep.A.tolist() == [[0.9, 0.1, 0], [0, 0.9, 0.1], [0, 0, 1]]
    assert dep.topology is Topology.LEFT_TO_RIGHT
    leak = hmm.make_preset("leak2_lr")
    assert leak.pi.tolist() == [1, 0] and leak.A.tolist() == [[0.5, 0.5], [0, 1]]
    with pytest.raises(InvalidInputError):
        hmm.make_preset("nope")


def test_model_round_trip(tmp_path):
    rng = rng_for(12)
    model = random_model(rng, 3, k=2)
    model.state_names = ["a", "b", "c"]
    hmm.save_model(tmp_path / "m.ini", model)
    back = hmm.load_model(tmp_path / "m.ini")
    assert np.array_equal(back.pi, model.pi) and np.array_equal(back.A, model.A)
    assert back.state_names == ["a", "b", "c"] and back.topology is model.topology
    for a, b in zip(back.emissions, model.emissions):
        assert np.array_equal(a.weights, b.weights)
        assert np.array_equal(a.means, b.means)
        assert np.array_equal(a.covariances, b.covariances)
    assert hmm.dumps_model(back) == hmm.dumps_model(model)


def test_skeleton_round_trip():
    sk = hmm.make_preset("depth3_lr")
    back = hmm.loads_model(hmm.dumps_model(sk))
    assert back.emissions == [] and np.array_equal(back.A, sk.A)
