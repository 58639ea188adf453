"""Ensemble metrics: worked examples, collapse identities, oracles."""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from enseep.eep import EEPMatrix, eep_matrix, empirical_joint, leep
from enseep.errors import ValidationError
from enseep.metrics import (
    Ensemble,
    EnsembleDistribution,
    argmax_predictions,
    base_score,
    e_leep,
    ensemble_distribution,
    iou_eep,
    mean_iou,
    ms_leep,
    soft_iou_eep,
    soft_weights,
)

from conftest import make_sample_set, random_predictions, simple_meta


def matrix(rows, source_id="s0"):
    return EEPMatrix(source_id=source_id, probs=np.asarray(rows, dtype=np.float32))


def random_eeps(rng, n, y_dim, ids):
    ss = make_sample_set(rng.integers(0, y_dim, n), y_dim)
    eeps = {}
    for sid in ids:
        preds = random_predictions(sid, n, y_dim + 1, rng)
        eeps[sid] = eep_matrix(preds, empirical_joint(preds, ss))
    return ss, eeps


def mean_iou_brute(pred, gt, num_classes):
    """Per-class confusion by explicit counting."""
    ious = []
    for c in range(num_classes):
        tp = sum(1 for p, g in zip(pred, gt) if p == c and g == c)
        fp = sum(1 for p, g in zip(pred, gt) if p == c and g != c)
        fn = sum(1 for p, g in zip(pred, gt) if p != c and g == c)
        if tp + fp + fn > 0:
            ious.append(tp / (tp + fp + fn))
    return sum(ious) / len(ious)


class TestEnsembleType:
    def test_canonical_sorted(self):
        e = Ensemble.of(["b", "a", "c"])
        assert e.member_ids == ("a", "b", "c")
        assert e.key == "a+b+c"
        assert Ensemble.from_key("a+b+c") == e

    def test_rejects_duplicates(self):
        with pytest.raises(ValidationError, match="duplicate"):
            Ensemble.of(["a", "a"])

    def test_rejects_unsorted_direct_construction(self):
        with pytest.raises(ValidationError, match="sorted"):
            Ensemble(member_ids=("b", "a"))

    def test_rejects_empty(self):
        with pytest.raises(ValidationError):
            Ensemble.of([])


class TestMsLeep:
    def test_sum_identity(self):
        scores = {"a": -0.5, "b": -0.3, "c": -0.9}
        assert ms_leep(scores, Ensemble.of(["a", "b", "c"])) == pytest.approx(-1.7)

    def test_single_member(self):
        assert ms_leep({"a": -0.42}, ["a"]) == pytest.approx(-0.42)

    def test_unknown_member(self):
        with pytest.raises(ValidationError, match="zz"):
            ms_leep({"a": -0.1}, ["a", "zz"])

    def test_long_form_oracle(self, rng):
        # mean over samples of the log product of member gt-probabilities
        ss, eeps = random_eeps(rng, 40, 3, ["a", "b", "c"])
        leeps = {sid: leep(m, ss) for sid, m in eeps.items()}
        ensemble = Ensemble.of(["a", "b", "c"])
        long_form = 0.0
        for i in range(ss.n):
            logprod = 0.0
            for sid in ensemble.member_ids:
                p = float(eeps[sid].probs[i, ss.ground_truth[i]])
                logprod += math.log(min(max(p, 1e-12), 1.0))
            long_form += logprod
        long_form /= ss.n
        assert ms_leep(leeps, ensemble) == pytest.approx(long_form, rel=1e-9)


class TestEnsembleDistribution:
    def test_mean_of_identical_members_is_member(self, rng):
        ss, eeps = random_eeps(rng, 10, 3, ["a"])
        dist = ensemble_distribution(eeps, ["a", "a", "a"])
        np.testing.assert_allclose(dist.probs, eeps["a"].probs, rtol=1e-7)

    def test_two_one_hot_members(self):
        eeps = {"a": matrix([[1, 0]], "a"), "b": matrix([[0, 1]], "b")}
        dist = ensemble_distribution(eeps, Ensemble.of(["a", "b"]))
        np.testing.assert_allclose(dist.probs, [[0.5, 0.5]])

    def test_matches_elementwise_oracle(self, rng):
        ss, eeps = random_eeps(rng, 25, 4, ["a", "b", "c"])
        dist = ensemble_distribution(eeps, Ensemble.of(["a", "b", "c"]))
        expected = (
            eeps["a"].probs.astype(np.float64)
            + eeps["b"].probs.astype(np.float64)
            + eeps["c"].probs.astype(np.float64)
        ) / 3
        np.testing.assert_allclose(dist.probs, expected, atol=1e-7)

    def test_shape_mismatch(self):
        eeps = {"a": matrix([[1, 0]], "a"), "b": matrix([[0, 0.5, 0.5]], "b")}
        with pytest.raises(ValidationError, match="shape"):
            ensemble_distribution(eeps, Ensemble.of(["a", "b"]))


class TestELeep:
    def test_duplicate_members_collapse_to_leep(self, rng):
        ss, eeps = random_eeps(rng, 30, 3, ["a"])
        member = leep(eeps["a"], ss)
        dist = ensemble_distribution(eeps, ["a", "a", "a"])
        assert e_leep(dist, ss) == pytest.approx(member, abs=1e-12)

    def test_hand_example(self):
        # one sample, gt 0; members [0.8, 0.2] and [0.4, 0.6] -> mean 0.6
        ss = make_sample_set([0])
        eeps = {"a": matrix([[0.8, 0.2]], "a"), "b": matrix([[0.4, 0.6]], "b")}
        dist = ensemble_distribution(eeps, Ensemble.of(["a", "b"]))
        assert e_leep(dist, ss) == pytest.approx(math.log(0.6), abs=1e-7)

    def test_jensen_bound_over_random_ensembles(self, rng):
        ids = [f"s{i}" for i in range(6)]
        ss, eeps = random_eeps(rng, 50, 4, ids)
        leeps = {sid: leep(m, ss) for sid, m in eeps.items()}
        from itertools import combinations

        for members in combinations(ids, 3):
            ensemble = Ensemble.of(members)
            el = e_leep(ensemble_distribution(eeps, ensemble), ss)
            ms = ms_leep(leeps, ensemble)
            assert el >= ms / 3 - 1e-9

    def test_leq_zero(self, rng):
        ss, eeps = random_eeps(rng, 30, 3, ["a", "b"])
        assert e_leep(ensemble_distribution(eeps, Ensemble.of(["a", "b"])), ss) <= 0


class TestArgmax:
    def test_unique_max(self):
        dist = EnsembleDistribution(probs=np.array([[0.1, 0.7, 0.2]]))
        assert argmax_predictions(dist).tolist() == [1]

    def test_tie_goes_to_lowest_index(self):
        dist = EnsembleDistribution(probs=np.array([[0.5, 0.5]]))
        assert argmax_predictions(dist).tolist() == [0]

    def test_matches_linear_scan(self, rng):
        probs = rng.random((40, 6))
        probs /= probs.sum(axis=1, keepdims=True)
        got = argmax_predictions(EnsembleDistribution(probs=probs))
        for i in range(40):
            best, best_v = 0, probs[i, 0]
            for y in range(1, 6):
                if probs[i, y] > best_v:
                    best, best_v = y, probs[i, y]
            assert got[i] == best


class TestMeanIoU:
    def test_perfect(self):
        assert mean_iou([0, 1, 2], [0, 1, 2], 3) == 1.0

    def test_worked_example(self):
        assert mean_iou([0, 1, 1, 1], [0, 0, 1, 1], 2) == pytest.approx(7 / 12)

    def test_disjoint_single_classes(self):
        assert mean_iou([0, 0], [1, 1], 2) == 0.0

    def test_absent_classes_excluded(self):
        # class 2 never appears; mean over classes 0 and 1 only
        assert mean_iou([0, 1], [0, 1], 3) == 1.0

    def test_empty_is_error(self):
        with pytest.raises(ValidationError):
            mean_iou([], [], 2)

    def test_matches_brute_force(self, rng):
        for _ in range(10):
            gt = rng.integers(0, 5, 30)
            pred = rng.integers(0, 5, 30)
            assert mean_iou(pred, gt, 5) == pytest.approx(
                mean_iou_brute(pred, gt, 5), rel=1e-12
            )

    def test_range_check(self):
        with pytest.raises(ValidationError, match="outside"):
            mean_iou([0, 5], [0, 1], 3)


class TestIoUEep:
    def test_one_hot_correct_everywhere(self):
        ss = make_sample_set([0, 1, 0])
        eeps = {"a": matrix([[1, 0], [0, 1], [1, 0]], "a")}
        assert iou_eep(eeps, ["a"], ss) == 1.0

    def test_composition_matches_hand_computation(self):
        ss = make_sample_set([0, 0, 1, 1])
        eeps = {
            "a": matrix([[0.9, 0.1], [0.2, 0.8], [0.3, 0.7], [0.4, 0.6]], "a"),
            "b": matrix([[0.7, 0.3], [0.6, 0.4], [0.1, 0.9], [0.2, 0.8]], "b"),
        }
        # mean rows: [0.8,0.2],[0.4,0.6],[0.2,0.8],[0.3,0.7] -> argmax [0,1,1,1]
        expected = mean_iou_brute([0, 1, 1, 1], [0, 0, 1, 1], 2)
        assert iou_eep(eeps, Ensemble.of(["a", "b"]), ss) == pytest.approx(expected)

    def test_member_order_invariance(self, rng):
        ss, eeps = random_eeps(rng, 35, 3, ["a", "b", "c"])
        assert iou_eep(eeps, ["a", "b", "c"], ss) == iou_eep(eeps, ["c", "a", "b"], ss)


class TestSoftWeights:
    def test_correct_with_full_confidence(self):
        ss = make_sample_set([0])
        dist = EnsembleDistribution(probs=np.array([[1.0, 0.0]]))
        w = soft_weights(dist, ss, np.array([0]))
        assert w.tolist() == [1.0]

    def test_correct_with_partial_confidence(self):
        ss = make_sample_set([0])
        dist = EnsembleDistribution(probs=np.array([[0.7, 0.3]]))
        assert soft_weights(dist, ss, np.array([0])).tolist() == [0.7]

    def test_incorrect_branch(self):
        ss = make_sample_set([0])
        dist = EnsembleDistribution(probs=np.array([[0.2, 0.8]]))
        w = soft_weights(dist, ss, np.array([1]))
        assert w[0] == pytest.approx(0.8)

    def test_bounds(self, rng):
        ss, eeps = random_eeps(rng, 40, 3, ["a", "b"])
        dist = ensemble_distribution(eeps, Ensemble.of(["a", "b"]))
        w = soft_weights(dist, ss, argmax_predictions(dist))
        assert (w >= 0).all() and (w <= 1).all()


class TestSoftIoUEep:
    def test_one_hot_equals_hard_iou(self):
        ss = make_sample_set([0, 1, 1, 0])
        eeps = {"a": matrix([[1, 0], [1, 0], [0, 1], [1, 0]], "a")}
        assert soft_iou_eep(eeps, ["a"], ss) == iou_eep(eeps, ["a"], ss)

    def test_weighted_confusion_hand_case(self):
        # gt [0,0,1,1]; rows give argmax [0,0,0,1]
        # weights: 0.9 (correct), 0.6 (correct), 0.8 (wrong: 1-0.2), 0.7 (correct)
        ss = make_sample_set([0, 0, 1, 1])
        eeps = {
            "a": matrix([[0.9, 0.1], [0.6, 0.4], [0.8, 0.2], [0.3, 0.7]], "a")
        }
        # class 0: stp=0.9+0.6=1.5, sfp=0.8, sfn=0      -> 1.5/2.3
        # class 1: stp=0.7,        sfp=0,   sfn=0.8     -> 0.7/1.5
        expected = (1.5 / 2.3 + 0.7 / 1.5) / 2
        assert soft_iou_eep(eeps, ["a"], ss) == pytest.approx(expected, rel=1e-6)

    def test_invariant_to_mass_moves_off_gt_and_argmax(self):
        # same argmax and same p(gt); other entries shuffled
        ss = make_sample_set([0, 2], num_classes=3)
        a = {"a": matrix([[0.6, 0.3, 0.1], [0.2, 0.3, 0.5]], "a")}
        b = {"a": matrix([[0.6, 0.1, 0.3], [0.3, 0.2, 0.5]], "a")}
        assert soft_iou_eep(a, ["a"], ss) == pytest.approx(
            soft_iou_eep(b, ["a"], ss), rel=1e-7
        )

    def test_member_order_invariance(self, rng):
        ss, eeps = random_eeps(rng, 35, 3, ["a", "b", "c"])
        assert soft_iou_eep(eeps, ["a", "b", "c"], ss) == soft_iou_eep(
            eeps, ["b", "c", "a"], ss
        )

    def test_in_unit_interval(self, rng):
        ss, eeps = random_eeps(rng, 35, 4, ["a", "b"])
        v = soft_iou_eep(eeps, Ensemble.of(["a", "b"]), ss)
        assert 0.0 <= v <= 1.0


class TestBaseScore:
    def test_single_member(self):
        metas = [simple_meta("a", performance=0.5, size=1000, classes=10)]
        assert base_score(metas, ["a"]) == pytest.approx(5000.0)

    def test_additivity(self):
        metas = [
            simple_meta("a", performance=0.5, size=1000, classes=10),
            simple_meta("b", performance=0.5, size=1000, classes=10),
        ]
        assert base_score(metas, Ensemble.of(["a", "b"])) == pytest.approx(10000.0)

    def test_member_order_invariance(self):
        metas = [
            simple_meta("a", 0.3, 100, 5),
            simple_meta("b", 0.7, 2000, 20),
            simple_meta("c", 0.9, 50, 8),
        ]
        assert base_score(metas, ["a", "b", "c"]) == base_score(metas, ["c", "b", "a"])

    def test_unknown_member(self):
        with pytest.raises(ValidationError, match="zz"):
            base_score([simple_meta("a")], ["zz"])


class TestCollapseIdentities:
    def test_single_source_collapse(self, rng):
        ss, eeps = random_eeps(rng, 45, 3, ["a"])
        member = leep(eeps["a"], ss)
        assert ms_leep({"a": member}, ["a"]) == pytest.approx(member, abs=1e-12)
        assert e_leep(ensemble_distribution(eeps, ["a"]), ss) == pytest.approx(
            member, abs=1e-12
        )

    def test_duplicate_collapse(self, rng):
        ss, eeps = random_eeps(rng, 45, 3, ["a"])
        member = leep(eeps["a"], ss)
        members = ["a", "a", "a"]
        assert ms_leep({"a": member}, members) == pytest.approx(3 * member, abs=1e-12)
        assert e_leep(ensemble_distribution(eeps, members), ss) == pytest.approx(
            member, abs=1e-12
        )

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 2**31), copies=st.integers(1, 5))
    def test_duplicate_collapse_property(self, seed, copies):
        rng = np.random.default_rng(seed)
        ss, eeps = random_eeps(rng, 20, 3, ["a"])
        member = leep(eeps["a"], ss)
        members = ["a"] * copies
        assert ms_leep({"a": member}, members) == pytest.approx(
            copies * member, abs=1e-12
        )
        assert e_leep(ensemble_distribution(eeps, members), ss) == pytest.approx(
            member, abs=1e-12
        )
