import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from defer_lab.errors import InvalidInputError
from defer_lab.estimators import ProbEstimate
from defer_lab.metrics import (DEFAULT_BUDGETS, accuracy_histograms, bin_index, budgeted_error,
                               build_report, coverage, ece, system_error)
from defer_lab.oracle import DecisionArray, Defer, Predict


class TestSystemError:
    def test_all_correct(self):
        assert system_error([Predict(0), Defer(0)], [0, 1], [[1], [1]]) == 0.0

    def test_all_wrong(self):
        assert system_error([Predict(1), Defer(0)], [0, 1], [[1], [0]]) == 1.0

    def test_one_of_four(self):
        ds = [Predict(0), Predict(1), Defer(0), Defer(0)]
        assert system_error(ds, [0, 1, 1, 0], [[0], [0], [1], [1]]) == 0.25

    def test_empty(self):
        with pytest.raises(InvalidInputError):
            system_error([], [], np.zeros((0, 1), dtype=int))


class TestCoverage:
    @pytest.mark.parametrize("ds,want", [([Predict(0)] * 3, 1.0), ([Defer(0)] * 2, 0.0),
                                         ([Predict(0)] * 3 + [Defer(0)], 0.75)])
    def test_examples(self, ds, want):
        assert coverage(ds) == want

    def test_empty(self):
        with pytest.raises(InvalidInputError):
            coverage([])


class TestEce:
    def test_single_bin_hand_value(self):
        value = ece([0.9] * 4, [1, 1, 1, 0])
        assert value == abs(0.9 - 0.75)
        assert value == pytest.approx(0.15, abs=1e-15)

    def test_calibrated(self):
        assert ece([0.8] * 10, [1] * 8 + [0] * 2) == pytest.approx(0.0, abs=1e-15)

    def test_maximal(self):
        assert ece([1.0] * 5, [0] * 5) == 1.0

    def test_two_bins_by_hand(self):
        # bin of 0.1s: |0.1 - 0.5| weighted 1/2; bin of 0.9s: |0.9 - 1| weighted 1/2
        assert ece([0.1, 0.1, 0.9, 0.9], [1, 0, 1, 1]) == pytest.approx(0.25, abs=1e-15)

    def test_out_of_range(self):
        with pytest.raises(InvalidInputError):
            ece([1.2], [1])
        with pytest.raises(InvalidInputError):
            ece([-0.1], [1])

    def test_length_mismatch(self):
        with pytest.raises(InvalidInputError):
            ece([0.5, 0.5], [1])

    def test_bin_edges_right_inclusive(self):
        idx = bin_index(np.array([0.0, 0.1, 0.10000001, 1.0]), 10)
        np.testing.assert_array_equal(idx, [0, 0, 1, 9])

    @settings(max_examples=50)
    @given(st.integers(0, 2**32 - 1))
    def test_permutation_invariant(self, seed):
        rng = np.random.default_rng(seed)
        conf = rng.random(40)
        hit = rng.random(40) < 0.5
        perm = rng.permutation(40)
        assert ece(conf, hit) == pytest.approx(ece(conf[perm], hit[perm]), abs=1e-12)


def _estimates(class_probs, acc):
    return ProbEstimate(np.asarray(class_probs, dtype=float), np.asarray(acc, dtype=float)[:, None],
                        bounded=True)


class TestBudgetedError:
    def test_hand_example(self):
        # A predict-correct, B predict-wrong, C defer (0.9, expert right),
        # D defer (0.6, expert wrong, class argmax right)
        ds = [Predict(0), Predict(0), Defer(0), Defer(0)]
        labels = [0, 1, 1, 0]
        experts = [[0], [0], [1], [1]]
        est = _estimates([[0.9, 0.1], [0.8, 0.2], [0.3, 0.7], [0.7, 0.3]], [0.2, 0.2, 0.9, 0.6])
        assert system_error(ds, labels, experts) == 0.5
        assert budgeted_error(ds, est, labels, experts, 0.25) == 0.25

    def test_slack_budget_unchanged(self):
        ds = [Predict(0), Defer(0), Predict(1), Predict(1)]
        labels, experts = [0, 0, 1, 0], [[1], [1], [1], [1]]
        est = _estimates([[0.5, 0.5]] * 4, [0.5] * 4)
        assert budgeted_error(ds, est, labels, experts, 0.3) == system_error(ds, labels, experts)

    def test_zero_budget_is_classifier_only(self):
        rng = np.random.default_rng(0)
        probs = rng.dirichlet(np.ones(3), size=30)
        labels = rng.integers(3, size=30)
        experts = rng.integers(3, size=(30, 1))
        defer = rng.random(30) < 0.5
        ds = DecisionArray(defer, np.where(defer, 0, probs.argmax(axis=1)))
        est = ProbEstimate(probs, rng.random((30, 1)), bounded=True)
        classifier_only = float(np.mean(probs.argmax(axis=1) != labels))
        assert budgeted_error(ds, est, labels, experts, 0.0) == pytest.approx(classifier_only)

    def test_tie_goes_to_smallest_index(self):
        ds = [Defer(0), Defer(0)]
        labels, experts = [0, 1], [[0], [0]]
        # class argmax is 1 for both; expert is right on 0, wrong on 1.
        # Undeferring 0 gives two errors, undeferring 1 would give none.
        est = _estimates([[0.1, 0.9], [0.1, 0.9]], [0.5, 0.5])
        assert budgeted_error(ds, est, labels, experts, 0.5) == 1.0

    def test_budget_range(self):
        est = _estimates([[0.5, 0.5]], [0.5])
        with pytest.raises(InvalidInputError):
            budgeted_error([Defer(0)], est, [0], [[0]], 1.5)


def brute_force_budgeted(defer, index, acc, class_pred, labels, experts, budget):
    """Try every subset of deferred samples of the required size; keep the one
    whose members all precede the rest in (estimate, index) order."""
    n = len(defer)
    allowed = max(a for a in range(n + 1) if a / n <= budget)
    deferred = [i for i in range(n) if defer[i]]
    r = max(0, len(deferred) - allowed)
    key = {i: (acc[i], i) for i in deferred}
    chosen = None
    for subset in itertools.combinations(deferred, r):
        rest = [i for i in deferred if i not in subset]
        if not subset or not rest or max(key[i] for i in subset) < min(key[i] for i in rest):
            assert chosen is None
            chosen = set(subset)
    wrong = 0
    for i in range(n):
        if defer[i] and i not in chosen:
            wrong += experts[i][index[i]] != labels[i]
        else:
            pred = class_pred[i] if defer[i] else index[i]
            wrong += pred != labels[i]
    return wrong / n


def test_budgeted_error_matches_brute_force():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        n = int(rng.integers(4, 20))
        K = 3
        defer = np.zeros(n, dtype=bool)
        n_def = int(rng.integers(1, min(12, n) + 1))
        defer[rng.choice(n, size=n_def, replace=False)] = True
        probs = rng.dirichlet(np.ones(K), size=n)
        # coarse grid of estimates so ties happen
        acc = rng.integers(0, 5, size=n) / 4.0
        index = np.where(defer, 0, rng.integers(K, size=n))
        labels = rng.integers(K, size=n)
        experts = rng.integers(K, size=(n, 1))
        budget = float(rng.choice([0.0, 0.1, 0.2, 0.25, 0.3, 0.5, rng.random()]))
        est = ProbEstimate(probs, acc[:, None], bounded=True)
        got = budgeted_error(DecisionArray(defer, index), est, labels, experts, budget)
        want = brute_force_budgeted(defer, index, acc, probs.argmax(axis=1), labels, experts, budget)
        assert got == pytest.approx(want, abs=1e-15)


def test_accounting_identity():
    rng = np.random.default_rng(5)
    for _ in range(50):
        n = 40
        defer = rng.random(n) < 0.4
        index = np.where(defer, 0, rng.integers(3, size=n))
        labels = rng.integers(3, size=n)
        experts = rng.integers(3, size=(n, 1))
        ds = DecisionArray(defer, index)
        cov = coverage(ds)
        kept_acc = np.mean(index[~defer] == labels[~defer]) if cov > 0 else 0.0
        def_acc = np.mean(experts[defer, 0] == labels[defer]) if cov < 1 else 0.0
        want = 1 - (cov * kept_acc + (1 - cov) * def_acc)
        assert system_error(ds, labels, experts) == pytest.approx(want, abs=1e-12)


class TestHistograms:
    def test_single_bin(self):
        h = accuracy_histograms([0.5] * 7, bins=10)
        assert h.count_estimated.tolist() == [0, 0, 0, 0, 7, 0, 0, 0, 0, 0]
        assert h.count_true is None

    def test_identical_inputs(self):
        v = np.random.default_rng(0).random(30)
        h = accuracy_histograms(v, v, bins=10)
        assert np.array_equal(h.count_estimated, h.count_true)

    def test_uniform_grid(self):
        grid = (np.arange(100) + 0.5) / 100
        assert accuracy_histograms(grid, bins=10).count_estimated.tolist() == [10] * 10

    def test_rows_and_edges(self):
        rows = list(accuracy_histograms([0.05, 0.95], [0.05, 0.05], bins=2).rows())
        assert rows == [(0.0, 0.5, 1, 2), (0.5, 1.0, 1, 0)]


def test_build_report_fields():
    rng = np.random.default_rng(1)
    n = 60
    probs = rng.dirichlet(np.ones(2), size=n)
    acc = rng.random((n, 1))
    ds = DecisionArray(acc[:, 0] > probs.max(axis=1), np.where(acc[:, 0] > probs.max(axis=1), 0,
                                                                probs.argmax(axis=1)))
    labels = rng.integers(2, size=n)
    experts = rng.integers(2, size=(n, 1))
    rep = build_report(ds, ProbEstimate(probs, acc, bounded=True), labels, experts)
    doc = rep.to_dict()
    assert set(doc["budgeted_errors"]) == {"0.1", "0.2", "0.3"}
    assert len(rep.budgeted_errors) == len(DEFAULT_BUDGETS)
    assert 0 <= rep.error <= 1 and 0 <= rep.coverage <= 1 and 0 <= rep.ece <= 1
    assert sum(doc["histogram"]["count_estimated"]) == n
