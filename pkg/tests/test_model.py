import numpy as np
import pytest

from metasparse.model import (
    GroundTruth,
    MetaDataset,
    SupportSet,
    TaskData,
    extract_support,
    support_equal,
)


class TestExtractSupport:
    def test_all_zero_vector(self):
        assert list(extract_support(np.zeros(3), 0.0)) == []

    def test_threshold_definition(self):
        assert list(extract_support(np.array([1.0, 1e-9, 0.0]), 1e-6)) == [0]

    def test_sign_independent(self):
        assert list(extract_support(np.array([0.5, -0.5]), 0.0)) == [0, 1]

    def test_zero_threshold_exact_nonzeros(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            w = rng.normal(size=12)
            w[rng.random(12) < 0.5] = 0.0
            assert list(extract_support(w, 0.0)) == list(np.flatnonzero(w != 0))

    def test_monotone_in_zeta(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            w = rng.normal(size=10) * rng.random(10)
            z1, z2 = sorted(rng.random(2))
            s1 = set(extract_support(w, z1))
            s2 = set(extract_support(w, z2))
            assert s2 <= s1

    def test_negative_zeta_rejected(self):
        with pytest.raises(ValueError):
            extract_support(np.ones(3), -1e-9)


class TestSupportSet:
    def test_sorted_and_deduplicated(self):
        s = SupportSet((3, 1, 3, 2))
        assert s.indices == (1, 2, 3)

    def test_set_semantics(self):
        assert support_equal(SupportSet((1, 2)), SupportSet((2, 1)))

    def test_strict_equality(self):
        assert not support_equal(SupportSet((1,)), SupportSet((1, 2)))

    def test_empty_sets_equal(self):
        assert support_equal(SupportSet(), SupportSet())

    def test_negative_index_rejected(self):
        with pytest.raises(ValueError):
            SupportSet((-1, 2))

    def test_subset_and_membership(self):
        s = SupportSet((0, 4))
        assert 4 in s and 1 not in s
        assert s.issubset(SupportSet((0, 2, 4)))
        assert not SupportSet((0, 2, 4)).issubset(s)


class TestTaskData:
    def test_row_mismatch_rejected(self):
        with pytest.raises(ValueError):
            TaskData(0, np.zeros((3, 2)), np.zeros(4))

    def test_nan_rejected(self):
        X = np.zeros((2, 2))
        X[0, 0] = np.nan
        with pytest.raises(ValueError):
            TaskData(0, X, np.zeros(2))

    def test_inf_rejected(self):
        with pytest.raises(ValueError):
            TaskData(0, np.zeros((2, 2)), np.array([1.0, np.inf]))

    def test_arrays_are_read_only_copies(self):
        X = np.ones((2, 3))
        t = TaskData(0, X, np.ones(2))
        X[0, 0] = 5.0
        assert t.X[0, 0] == 1.0
        with pytest.raises(ValueError):
            t.X[0, 0] = 2.0


class TestMetaDataset:
    def _task(self, tid, l=4, p=3):
        return TaskData(tid, np.ones((l, p)), np.ones(l))

    def test_column_mismatch_rejected(self):
        with pytest.raises(ValueError):
            MetaDataset((self._task(0, p=3),), self._task(1, p=4), p=3)

    def test_unequal_prior_sample_counts_rejected(self):
        with pytest.raises(ValueError):
            MetaDataset((self._task(0, l=4), self._task(1, l=5)), self._task(2), p=3)

    def test_novel_may_have_more_samples(self):
        ds = MetaDataset((self._task(0), self._task(1)), self._task(2, l=9), p=3)
        assert ds.n_tasks == 2
        assert ds.samples_per_task == 4
        assert ds.novel_task.n_samples == 9


class TestGroundTruth:
    def test_from_weights_computes_supports(self):
        w = np.array([1.0, 0.0, 2.0, 0.0])
        deltas = [np.array([0.0, 0.0, -2.0, 0.0]), np.zeros(4)]
        gt = GroundTruth.from_weights(w, deltas)
        assert list(gt.support) == [0, 2]
        assert list(gt.per_task_supports[0]) == [0]
        assert list(gt.per_task_supports[1]) == [0, 2]
        assert gt.k == 2
        np.testing.assert_allclose(gt.novel_weights(), w)

    def test_inconsistent_support_rejected(self):
        w = np.array([1.0, 0.0])
        with pytest.raises(ValueError):
            GroundTruth(
                w_star=w,
                deltas=(np.zeros(2),),
                support=SupportSet((0, 1)),
                per_task_supports=(SupportSet((0,)),),
            )

    def test_delta_off_support_rejected(self):
        # delta adding mass outside Supp(w_star) violates the containment
        w = np.array([1.0, 0.0])
        with pytest.raises(ValueError):
            GroundTruth.from_weights(w, [np.array([0.0, 0.5])])
