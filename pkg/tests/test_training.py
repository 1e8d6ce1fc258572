from dataclasses import replace

import numpy as np
import pytest

from midrank.core import Permutation, Sequence
from midrank.features import FeatureMapKind, map_dim
from midrank.training import (
    DegenerateData,
    EmptyLambdaRange,
    LambdaTooSmall,
    MissingGroundTruth,
    SequenceTooShort,
    TrainConfig,
    TrainingSample,
    cross_validate_mu,
    fit_sdca,
    generate_negatives,
    make_samples,
    sample_positives,
    train_ensemble,
    train_length_ranker,
    zero_one_error,
)
from oracles import hinge_primal, subgradient_svm, toy_problem


def _seq(n, d=3, seed=0, sid="s"):
    rng = np.random.default_rng(seed)
    return Sequence(items=rng.standard_normal((n, d)), ground_truth=Permutation(tuple(rng.permutation(n))), id=sid)


def test_single_window_when_lambda_equals_length():
    s = _seq(8)
    (pos,) = sample_positives([s], 8, 1, seed=0)
    assert pos.label == 1 and pos.start == 0
    np.testing.assert_array_equal(pos.vectors, s.ordered_items())


def test_positives_follow_ground_truth():
    s = _seq(20)
    pos = sample_positives([s], 3, 5, seed=1)
    assert len(pos) == 5
    ordered = s.ordered_items()
    for p in pos:
        np.testing.assert_array_equal(p.vectors, ordered[p.start : p.start + 3])
    assert len({p.start for p in pos}) == 5


def test_positive_sampling_with_replacement_when_short():
    pos = sample_positives([_seq(4)], 3, 5, seed=1)
    assert len(pos) == 5 and {p.start for p in pos} <= {0, 1}


def test_positive_sampling_errors():
    with pytest.raises(SequenceTooShort):
        sample_positives([_seq(8)], 9, 1, seed=0)
    no_truth = Sequence(items=np.eye(3), id="x")
    with pytest.raises(MissingGroundTruth):
        sample_positives([no_truth], 2, 1, seed=0)


def test_negatives_pair_is_reversed():
    pos = sample_positives([_seq(2)], 2, 1, seed=0)
    (neg,) = generate_negatives(pos, seed=0)
    assert neg.label == -1
    np.testing.assert_array_equal(neg.vectors, pos[0].vectors[::-1])


def test_negatives_are_non_identity_scrambles():
    s = Sequence(items=np.arange(10.0)[:, None] * [1.0, 0.0], ground_truth=Permutation.identity(10), id="s")
    pos = sample_positives([s], 3, 100, seed=2)
    neg = generate_negatives(pos, seed=2)
    assert len(neg) == len(pos) == 100
    scrambles = set()
    for p, n in zip(pos, neg):
        order = tuple(int(np.where(p.vectors[:, 0] == v)[0][0]) for v in n.vectors[:, 0])
        assert order != (0, 1, 2) and sorted(order) == [0, 1, 2]
        scrambles.add(order)
    assert len(scrambles) <= 5 and len(scrambles) >= 4


def test_negative_scrambles_are_roughly_uniform():
    s = Sequence(items=np.arange(3.0)[:, None], ground_truth=Permutation.identity(3), id="s")
    pos = sample_positives([s], 3, 3000, seed=5)
    counts = {}
    for n in generate_negatives(pos, seed=5):
        key = tuple(n.vectors[:, 0].astype(int))
        counts[key] = counts.get(key, 0) + 1
    assert len(counts) == 5
    assert max(counts.values()) / min(counts.values()) < 1.3


def test_negatives_reject_lambda_below_two():
    from midrank.core import Subsequence

    bad = Subsequence("p", 0, 1, np.zeros((1, 2)), 1)
    with pytest.raises(LambdaTooSmall):
        generate_negatives([bad], seed=0)


def test_one_dimensional_svm_closed_form():
    # 0.5 t^2 + 2 max(0, 1 - t) is minimised at the kink t = 1
    samples = [TrainingSample(np.array([1.0]), 1), TrainingSample(np.array([-1.0]), -1)]
    cfg = TrainConfig(lambdas=(2,), mu=1.0, tolerance=1e-10, sdca_epochs=1000)
    r = train_length_ranker(samples, cfg, lam=2, d=1)
    grid = np.linspace(-3, 3, 60001)
    X = np.array([[1.0], [-1.0]])
    y = np.array([1.0, -1.0])
    oracle = grid[np.argmin([hinge_primal(np.array([t]), X, y, 1.0) for t in grid])]
    assert oracle == pytest.approx(1.0, abs=1e-4)
    assert r.theta[0] == pytest.approx(oracle, abs=1e-4)
    assert all(max(0.0, 1 - s.y * r.theta @ s.x) < 1 for s in samples)


def test_separable_toy_set_reaches_zero_error():
    rng = np.random.default_rng(4)
    X = rng.standard_normal((80, 2))
    X = X[np.abs(X @ [1.0, -2.0]) > 0.3]
    y = np.sign(X @ [1.0, -2.0])
    res = fit_sdca(X, y, mu=1e-3, epochs=2000, tol=1e-9)
    assert zero_one_error(res.theta, X, y) == 0.0
    ref, _ = subgradient_svm(X, y, 1e-3, iters=5000)
    assert zero_one_error(ref, X, y) == 0.0


def test_single_class_is_degenerate():
    samples = [TrainingSample(np.array([1.0, 0.0]), 1), TrainingSample(np.array([0.0, 1.0]), 1)]
    with pytest.raises(DegenerateData):
        train_length_ranker(samples, TrainConfig(), lam=2)


@pytest.mark.parametrize("mu", [0.1, 1.0, 10.0])
def test_sdca_matches_subgradient_oracle(mu):
    X, y = toy_problem()
    res = fit_sdca(X, y, mu, epochs=2000, tol=1e-8, seed=1)
    _, f_ref = subgradient_svm(X, y, mu)
    assert res.primal == pytest.approx(f_ref, rel=1e-3)
    assert res.primal >= res.dual
    assert res.converged


@pytest.mark.parametrize("seed", range(4))
def test_dual_objective_never_decreases(seed):
    X, y = toy_problem(seed=seed)
    res = fit_sdca(X, y, 0.5, epochs=300, tol=0.0, seed=seed)
    dual = np.asarray(res.dual_history)
    assert np.all(np.diff(dual) >= -1e-12 * np.abs(dual[1:]))
    assert np.all(np.asarray(res.gap_history) >= -1e-9)


def test_weighted_hinge_matches_duplicated_samples():
    X, y = toy_problem(n=60, seed=9)
    weights = np.where(np.arange(60) % 3 == 0, 2.0, 1.0)
    weighted = fit_sdca(X, y, 1.0, weights, epochs=3000, tol=1e-10)
    dup = np.where(weights == 2.0)[0]
    plain = fit_sdca(np.vstack([X, X[dup]]), np.concatenate([y, y[dup]]), 1.0, epochs=3000, tol=1e-10)
    np.testing.assert_allclose(weighted.theta, plain.theta, atol=1e-4)


def test_label_symmetry():
    X, y = toy_problem(n=100, seed=2)
    a = fit_sdca(X, y, 1.0, seed=4)
    b = fit_sdca(-X, -y, 1.0, seed=4)
    np.testing.assert_allclose(np.abs((-X) @ b.theta), np.abs(X @ a.theta), atol=1e-12)


def test_train_ensemble_one_ranker_per_lambda(small_data):
    train, _ = small_data
    cfg = TrainConfig(lambdas=(3, 4, 5, 6, 7, 8), positives_per_sequence=2, cv_folds=0, sdca_epochs=30)
    ens = train_ensemble(train.sequences, cfg)
    assert ens.lambdas == [3, 4, 5, 6, 7, 8]
    for r in ens.rankers:
        assert r.theta.shape == (map_dim(FeatureMapKind.STACKED_DIFF, r.lam, 6),)


def test_pairwise_only_ensemble(small_data):
    train, _ = small_data
    ens = train_ensemble(train.sequences, TrainConfig(lambdas=(2,), cv_folds=0))
    assert ens.lambdas == [2] and ens.pair_ranker() is ens.rankers[0]


def test_empty_lambda_range():
    with pytest.raises(EmptyLambdaRange):
        TrainConfig(lambdas=())


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(mu=0)
    with pytest.raises(LambdaTooSmall):
        TrainConfig(lambdas=(1, 2))


def test_short_sequences_skipped(small_data, caplog):
    train, _ = small_data
    seqs = list(train.sequences[:10]) + [_seq(3, d=6, sid="tiny")]
    ens = train_ensemble(seqs, TrainConfig(lambdas=(4,), cv_folds=0, positives_per_sequence=2))
    assert ens.lambdas == [4]
    assert "skipping 1" in caplog.text


def test_cross_validation_picks_grid_value(small_data):
    train, _ = small_data
    cfg = TrainConfig(lambdas=(3,), positives_per_sequence=3, mu_grid=(1e-3, 1e-1, 10.0), cv_folds=3)
    mu, table = cross_validate_mu(train.sequences, 3, cfg)
    assert mu in cfg.mu_grid and len(table) == 3
    assert all(0.0 <= row["val_error"] <= 1.0 for row in table)


def test_training_is_deterministic(small_data):
    train, _ = small_data
    cfg = TrainConfig(lambdas=(2, 4), positives_per_sequence=3, mu_grid=(0.01, 1.0))
    a = train_ensemble(train.sequences, cfg)
    b = train_ensemble(train.sequences, cfg)
    c = train_ensemble(train.sequences, replace(cfg, threads=2))
    for ra, rb, rc in zip(a.rankers, b.rankers, c.rankers):
        np.testing.assert_array_equal(ra.theta, rb.theta)
        np.testing.assert_array_equal(ra.theta, rc.theta)


def test_make_samples_labels(small_data):
    train, _ = small_data
    pos = sample_positives(train.sequences[:3], 3, 2, seed=0)
    samples = make_samples(pos + generate_negatives(pos, 0), FeatureMapKind.STACKED)
    assert [s.y for s in samples] == [1] * 6 + [-1] * 6
    assert all(s.weight == 1.0 for s in samples)


def test_pair_samples_cover_every_pair():
    from midrank.core import Permutation, Sequence
    from midrank.training import pair_subsequences

    x = np.arange(8.0).reshape(4, 2)
    seq = Sequence(items=x, ground_truth=Permutation((3, 1, 0, 2)), id="s")
    pos, neg = pair_subsequences([seq])
    assert len(pos) == len(neg) == 6
    ranks = {3: 0, 1: 1, 0: 2, 2: 3}
    for p, q in zip(pos, neg):
        hi, lo = (int(v[0] // 2) for v in p.vectors)
        assert ranks[hi] < ranks[lo]
        np.testing.assert_array_equal(q.vectors, p.vectors[::-1])
        assert (p.label, q.label) == (1, -1)


def test_pair_sample_training_orders_a_noiseless_split(small_data):
    train, test = small_data
    cfg = TrainConfig(lambdas=(2,), cv_folds=0, mu=0.1, pair_samples=True)
    ens = train_ensemble(train.sequences, cfg)
    assert ens.diagnostics["training"][0]["n_samples"] == 2 * 28 * len(train.sequences)
    from midrank.inference import ranksvm_init
    from midrank.metrics import kendall_tau

    kts = [kendall_tau(ranksvm_init(s.items, ens.rankers[0]), s.ground_truth) for s in test.sequences]
    assert np.mean(kts) > 0.8
