import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from pytest import approx

from artifact.bounds import kl_bernoulli
from artifact.detect import (
    RunStructure,
    adjacent_distances,
    choose_sigma,
    collapse,
    column_histograms,
    combine_estimates,
    detect_deletions_aligned,
    detect_deletions_seeded,
    detect_repetitions_histogram,
    detect_replicas,
    full_column_histograms,
    replica_error_bound,
    replica_probs,
    replica_threshold,
    seeded_error_bound,
    sigma_gap,
    true_runs,
)
from artifact.errors import Degenerate, DuplicateHistograms, IndependentDatabases, NoSeeds
from artifact.source import (
    NoiseChannel,
    RaggedDatabase,
    RepetitionSpec,
    SeedPair,
    SourceSpec,
    child_rng,
    generate_instance,
    transition_matrix,
)


def _replica_probs_loops(spec, noise):
    u, w, p = spec.pi, noise.matrix, transition_matrix(spec)
    q = len(u)
    p1 = sum(u[i] * w[i, k] * w[i, l] for i in range(q) for k in range(q) for l in range(q) if k != l)
    p0 = sum(u[i] * p[i, j] * w[i, k] * w[j, l]
             for i in range(q) for j in range(q) for k in range(q) for l in range(q) if k != l)
    return p0, p1


@pytest.mark.parametrize("spec,noise", [
    (SourceSpec.uniform(2), NoiseChannel.bsc(0.05)),
    (SourceSpec(3, 0.4, (0.2, 0.3, 0.5)), NoiseChannel.symmetric(3, 0.1)),
    (SourceSpec(2, 0.8, (0.3, 0.7)), NoiseChannel.bsc(0.2)),
])
def test_replica_probs_match_direct_sum(spec, noise):
    assert replica_probs(spec, noise) == approx(_replica_probs_loops(spec, noise), abs=1e-12)


def test_replica_probs_reference_values():
    p0, p1 = replica_probs(SourceSpec.uniform(2), NoiseChannel.bsc(0.05))
    assert p0 == approx(0.5)
    assert p1 == approx(2 * 0.05 * 0.95)


def test_threshold_rules():
    assert replica_threshold(0.5, 0.1) == approx(0.3)
    t = replica_threshold(0.5, 0.1, "balanced")
    assert kl_bernoulli(t, 0.1) == approx(kl_bernoulli(t, 0.5), abs=1e-12)
    assert replica_threshold(0.5, 0.0, "balanced") == approx(0.25)
    with pytest.raises(Degenerate):
        replica_threshold(0.3, 0.3)
    with pytest.raises(ValueError):
        replica_threshold(0.5, 0.1, "median")


def test_detect_replicas_hand_example():
    d = np.array([[1, 1, 2, 2, 2, 1],
                  [2, 2, 1, 1, 1, 1],
                  [1, 1, 1, 1, 1, 2],
                  [2, 2, 2, 2, 1, 1]])
    assert adjacent_distances(d).tolist() == [0, 2, 0, 1, 2]
    assert detect_replicas(d, 0.3).run_lengths == (2, 3, 1)
    assert detect_replicas(np.zeros((4, 0), dtype=np.int16), 0.3).run_lengths == ()


def test_run_structure():
    runs = RunStructure((2, 1, 3))
    assert runs.total == 6
    assert runs.starts.tolist() == [0, 2, 3]
    assert true_runs(np.array([0, 2, 1, 0, 3])).run_lengths == (2, 1, 3)


def test_detect_replicas_recovers_true_runs():
    spec = SourceSpec.uniform(2)
    noise = NoiseChannel.bsc(0.05)
    constants = choose_sigma(spec, noise)
    rng = child_rng(21)
    for _ in range(5):
        inst = generate_instance(spec, RepetitionSpec((1 / 3, 1 / 3, 1 / 3)), noise, 4096, 100, rng)
        assert detect_replicas(inst.d2, constants.tau) == true_runs(inst.truth.s_matrix[0])


def test_replica_error_bound_decreases_with_m():
    constants = choose_sigma(SourceSpec.uniform(2), NoiseChannel.bsc(0.05))
    bounds = [replica_error_bound(constants, m, 100) for m in (16, 64, 256)]
    assert bounds[0] > bounds[1] > bounds[2]
    assert replica_error_bound(constants, 64, 1) == 0.0


def _sigma_gap_loops(spec, noise, sigma):
    u, w = spec.pi, noise.matrix
    q = len(u)
    q1 = sum(u[x] * w[x, y] for x in range(q) for y in range(q) if sigma[y] != x)
    q0 = sum(u[x] * u[v] * w[x, y] for x in range(q) for v in range(q) for y in range(q) if sigma[y] != v)
    return q0, q1


def _random_case(data, q):
    probs = np.array(data.draw(st.lists(st.floats(0.05, 1.0), min_size=q, max_size=q)))
    rows = np.array(data.draw(st.lists(st.lists(st.floats(0.01, 1.0), min_size=q, max_size=q), min_size=q, max_size=q)))
    spec = SourceSpec(q, data.draw(st.floats(0.0, 0.9)), tuple(probs / probs.sum()))
    return spec, NoiseChannel(rows / rows.sum(axis=1, keepdims=True))


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 4), st.data())
def test_sigma_gap_matches_direct_sum(q, data):
    spec, noise = _random_case(data, q)
    sigma = data.draw(st.permutations(list(range(q))))
    assert sigma_gap(spec, noise, sigma) == approx(_sigma_gap_loops(spec, noise, sigma), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 5), st.data())
def test_permutation_sum_identity(q, data):
    spec, noise = _random_case(data, q)
    total = sum(a - b for a, b in (sigma_gap(spec, noise, s) for s in itertools.permutations(range(q))))
    assert abs(total) < 1e-12


def test_choose_sigma_prefers_swap_for_flipping_channel():
    constants = choose_sigma(SourceSpec.uniform(2), NoiseChannel.bsc(0.9))
    assert constants.sigma == (1, 0)
    assert constants.to_dict()["sigma"] == [2, 1]
    assert constants.q0_prime > constants.q1_prime
    assert constants.q1_prime < constants.tau_bar < constants.q0_min


def test_choose_sigma_rejects_independent_databases():
    with pytest.raises(IndependentDatabases):
        choose_sigma(SourceSpec.uniform(3), NoiseChannel(np.full((3, 3), 1 / 3)))


def _seeded_instance(rng, lam, n=64, m=8):
    spec = SourceSpec.uniform(2)
    noise = NoiseChannel.bsc(0.05)
    return generate_instance(spec, RepetitionSpec.deletion(0.3), noise, m, n, rng, n_seeds=lam)


@pytest.mark.parametrize("detector", [detect_deletions_seeded, detect_deletions_aligned])
def test_seeded_detection_recovers_pattern_with_many_seeds(detector):
    constants = choose_sigma(SourceSpec.uniform(2), NoiseChannel.bsc(0.05), "balanced")
    rng = child_rng(22)
    for _ in range(5):
        inst = _seeded_instance(rng, 256)
        s = inst.truth.s_matrix[0]
        deleted = detector(inst.seeds, true_runs(s), constants)
        assert deleted.tolist() == (s == 0).astype(int).tolist()
        assert combine_estimates(true_runs(s), deleted).s_hat.tolist() == s.tolist()


def test_aligned_detection_keeps_run_count():
    constants = choose_sigma(SourceSpec.uniform(2), NoiseChannel.bsc(0.05), "balanced")
    inst = _seeded_instance(child_rng(23), 8)
    runs = true_runs(inst.truth.s_matrix[0])
    deleted = detect_deletions_aligned(inst.seeds, runs, constants)
    assert (deleted == 0).sum() == len(runs.run_lengths)


def test_seeded_detection_edge_cases():
    constants = choose_sigma(SourceSpec.uniform(2), NoiseChannel.bsc(0.05))
    seeds = SeedPair(np.ones((2, 3), dtype=np.int16), RaggedDatabase.from_rows([[], []]))
    assert detect_deletions_seeded(seeds, RunStructure(()), constants).tolist() == [1, 1, 1]
    assert detect_deletions_aligned(seeds, RunStructure(()), constants).tolist() == [1, 1, 1]
    with pytest.raises(NoSeeds):
        detect_deletions_seeded(None, RunStructure((1,)), constants)
    with pytest.raises(NoSeeds):
        detect_deletions_aligned(None, RunStructure((1,)), constants)


def test_seeded_error_bound_decreases_with_lambda():
    constants = choose_sigma(SourceSpec.uniform(2), NoiseChannel.bsc(0.05))
    values = [seeded_error_bound(constants, lam, 64) for lam in (8, 64, 512)]
    assert values[0] > values[1] > values[2]


def test_combine_estimates_count_mismatch():
    assert combine_estimates(RunStructure((1, 2)), np.array([0, 1, 1])) is None
    est = combine_estimates(RunStructure((1, 2)), np.array([0, 1, 0]))
    assert est.s_hat.tolist() == [1, 0, 2]


def test_collapse_and_histograms():
    d = np.array([[1, 2, 3], [1, 1, 3], [2, 3, 1]])
    assert collapse(d).tolist() == [[1, 2, 2], [1, 1, 2], [2, 2, 1]]
    assert column_histograms(d).tolist() == [1, 2, 2]
    assert full_column_histograms(d, 3).tolist() == [[2, 1, 0], [1, 1, 1], [1, 0, 2]]


@pytest.mark.parametrize("collapsed", [True, False])
def test_histogram_detection_recovers_pattern(collapsed):
    rng = child_rng(24)
    inst = generate_instance(SourceSpec.uniform(2), RepetitionSpec((0.2, 0.4, 0.4)), NoiseChannel.identity(2),
                             100_000, 20, rng)
    est = detect_repetitions_histogram(inst.d1, inst.d2, collapsed=collapsed)
    assert est.s_hat.tolist() == inst.truth.s_matrix[0].tolist()


def test_histogram_detection_duplicate_columns():
    d1 = np.array([[1, 1], [2, 2]])
    with pytest.raises(DuplicateHistograms):
        detect_repetitions_histogram(d1, d1)


def test_full_histograms_separate_what_collapse_merges():
    d1 = np.array([[2, 3], [1, 1]])
    with pytest.raises(DuplicateHistograms):
        detect_repetitions_histogram(d1, d1)
    assert detect_repetitions_histogram(d1, d1[:, [1, 1]], collapsed=False).s_hat.tolist() == [0, 2]
