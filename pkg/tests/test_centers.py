import numpy as np
import pytest

from embedlab.centers import (CenterBank, CenterStrategy, bank_from_doc,
                              bank_to_doc, cold_start_bank, exact_centers,
                              load_bank, save_bank, update_from_batch,
                              weight_center_gap)
from embedlab.numerics import RandomStream


def brute_force_centers(X, y, K):
    """Independent oracle: per-class mean of normalized rows, then normalize."""
    centers = np.zeros((K, X.shape[1]))
    flags = np.ones(K, dtype=bool)
    for k in range(K):
        rows = [x / np.linalg.norm(x) for x, lab in zip(X, y) if lab == k
                and np.linalg.norm(x) > 1e-12]
        if not rows:
            continue
        mean = np.mean(rows, axis=0)
        if np.linalg.norm(mean) > 1e-12:
            centers[k] = mean / np.linalg.norm(mean)
            flags[k] = False
    return centers, flags


class TestExactCenters:
    def test_single_sample(self):
        bank = exact_centers(np.array([[3.0, 4.0]]), [0], 1)
        np.testing.assert_allclose(bank.centers[0], [0.6, 0.8], atol=1e-15)
        assert not bank.degenerate[0]

    def test_antipodal_pair_degenerate(self):
        X = np.array([[1.0, 0.0], [-1.0, 0.0]])
        bank = exact_centers(X, [0, 0], 1)
        assert bank.degenerate[0]

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((50, 4)) * rng.uniform(0.5, 2, (50, 1))
        y = rng.integers(0, 3, 50)
        bank = exact_centers(X, y, 3)
        expected, flags = brute_force_centers(X, y, 3)
        np.testing.assert_allclose(bank.centers, expected, atol=1e-12)
        np.testing.assert_array_equal(bank.degenerate, flags)

    def test_missing_class_flagged_not_raised(self):
        bank = exact_centers(np.ones((2, 3)), [0, 0], 4)
        assert list(bank.degenerate) == [False, True, True, True]

    def test_permutation_invariant(self):
        rng = np.random.default_rng(1)
        X = rng.standard_normal((30, 3))
        y = rng.integers(0, 4, 30)
        perm = rng.permutation(30)
        a = exact_centers(X, y, 4)
        b = exact_centers(X[perm], y[perm], 4)
        np.testing.assert_allclose(a.centers, b.centers, atol=1e-12)


class TestUpdateFromBatch:
    def test_aux_loss_hand_example(self):
        # lr 0.25, c=[1,0], one sample along [0,1]: pre-norm [0.5, 0.5]
        bank = CenterBank(1, 2, CenterStrategy.aux_loss(0.25))
        bank.set_center(0, np.array([1.0, 0.0]))
        update_from_batch(bank, np.array([[0.0, 7.0]]), [0])
        s = np.sqrt(2) / 2
        np.testing.assert_allclose(bank.centers[0], [s, s], atol=1e-12)

    def test_absent_class_bit_identical(self):
        rng = np.random.default_rng(2)
        bank = cold_start_bank(3, 4, CenterStrategy.aux_loss(0.5), RandomStream(0))
        before = bank.centers[2].copy()
        update_from_batch(bank, rng.standard_normal((6, 4)), [0, 1, 0, 1, 0, 1])
        np.testing.assert_array_equal(bank.centers[2], before)

    def test_memory_window_covers_both_samples(self):
        bank = CenterBank(2, 2, CenterStrategy.memory_bank(2))
        xa = np.array([[1.0, 0.0]])
        xb = np.array([[0.0, 1.0]])
        update_from_batch(bank, xa, [1])
        update_from_batch(bank, xb, [1])
        expected = (xa[0] + xb[0]) / 2
        expected /= np.linalg.norm(expected)
        np.testing.assert_allclose(bank.centers[1], expected, atol=1e-12)

    def test_memory_window_evicts_oldest(self):
        bank = CenterBank(1, 2, CenterStrategy.memory_bank(2))
        for vec in ([1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]):
            update_from_batch(bank, np.array([vec]), [0])
        expected = np.array([-1.0, 1.0]) / np.sqrt(2)   # last two samples
        np.testing.assert_allclose(bank.centers[0], expected, atol=1e-12)

    def test_instance_replace_last_occurrence_wins(self):
        bank = CenterBank(1, 2, CenterStrategy.instance_replace())
        X = np.array([[1.0, 0.0], [0.0, 5.0]])
        update_from_batch(bank, X, [0, 0])
        np.testing.assert_allclose(bank.centers[0], [0.0, 1.0], atol=1e-15)

    def test_unit_norm_preserved_all_strategies(self):
        rng = np.random.default_rng(3)
        for strat in (CenterStrategy.instance_replace(),
                      CenterStrategy.memory_bank(3),
                      CenterStrategy.aux_loss(0.5)):
            bank = cold_start_bank(4, 5, strat, RandomStream(1))
            for _ in range(10):
                X = rng.standard_normal((8, 5)) * rng.uniform(0.1, 4)
                y = rng.integers(0, 4, 8)
                update_from_batch(bank, X, y)
                norms = np.linalg.norm(bank.centers[~bank.degenerate], axis=1)
                np.testing.assert_allclose(norms, 1.0, atol=1e-8)

    def test_degenerate_sample_skipped_and_counted(self):
        bank = cold_start_bank(2, 3, CenterStrategy.instance_replace(), RandomStream(2))
        before = bank.centers[0].copy()
        X = np.array([[0.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        update_from_batch(bank, X, [0, 1])
        assert bank.skipped == 1
        np.testing.assert_array_equal(bank.centers[0], before)

    def test_aux_small_lr_bounded_step(self):
        rng = np.random.default_rng(4)
        for lr in (1e-1, 1e-2, 1e-3):
            bank = cold_start_bank(2, 4, CenterStrategy.aux_loss(lr), RandomStream(3))
            before = bank.centers.copy()
            X = rng.standard_normal((10, 4))
            y = rng.integers(0, 2, 10)
            xhat = X / np.linalg.norm(X, axis=1)[:, None]
            bound = lr * 2 * max(np.linalg.norm(before[y[i]] - xhat[i])
                                 for i in range(10))
            update_from_batch(bank, X, y)
            delta = np.linalg.norm(bank.centers - before, axis=1).max()
            assert delta <= bound + 1e-9

    def test_exact_strategy_not_batch_updatable(self):
        bank = exact_centers(np.eye(3), [0, 1, 2], 3)
        with pytest.raises(ValueError, match="exact"):
            update_from_batch(bank, np.eye(3), [0, 1, 2])


class TestWeightCenterGap:
    def test_equal_rows_zero_gap(self):
        rng = np.random.default_rng(5)
        X = rng.standard_normal((40, 3))
        y = rng.integers(0, 4, 40)
        exact = exact_centers(X, y, 4)
        gaps = weight_center_gap(exact.centers, exact)
        assert set(gaps) == {0, 1, 2, 3}
        assert max(gaps.values()) < 1e-12

    def test_orthogonal_rows(self):
        exact = exact_centers(np.array([[1.0, 0.0], [0.0, 1.0]]), [0, 1], 2)
        W = np.array([[0.0, 1.0], [1.0, 0.0]])
        gaps = weight_center_gap(W, exact)
        assert gaps[0] == pytest.approx(np.pi / 2, abs=1e-12)

    def test_degenerate_class_absent_not_zero(self):
        exact = exact_centers(np.array([[1.0, 0.0]]), [0], 2)   # class 1 missing
        gaps = weight_center_gap(np.eye(2), exact)
        assert 1 not in gaps and 0 in gaps


class TestBankSerialization:
    def test_roundtrip_all_strategies(self, tmp_path):
        rng = np.random.default_rng(6)
        for strat in (CenterStrategy.instance_replace(),
                      CenterStrategy.memory_bank(3),
                      CenterStrategy.aux_loss(0.7)):
            bank = cold_start_bank(3, 4, strat, RandomStream(4))
            update_from_batch(bank, rng.standard_normal((6, 4)),
                              rng.integers(0, 3, 6))
            path = tmp_path / f"bank_{strat.kind}.json"
            save_bank(bank, path)
            loaded = load_bank(path)
            np.testing.assert_array_equal(loaded.centers, bank.centers)
            np.testing.assert_array_equal(loaded.degenerate, bank.degenerate)
            np.testing.assert_array_equal(loaded.counts, bank.counts)
            assert loaded.strategy == bank.strategy
            assert loaded.skipped == bank.skipped
            # further updates behave identically
            X = rng.standard_normal((5, 4))
            y = rng.integers(0, 3, 5)
            update_from_batch(bank, X, y)
            update_from_batch(loaded, X, y)
            np.testing.assert_array_equal(loaded.centers, bank.centers)

    def test_doc_roundtrip(self):
        bank = cold_start_bank(2, 3, CenterStrategy.aux_loss(0.5), RandomStream(5))
        doc = bank_to_doc(bank)
        again = bank_from_doc(doc)
        np.testing.assert_array_equal(again.centers, bank.centers)

    def test_bad_format_rejected(self, tmp_path):
        path = tmp_path / "x.json"
        path.write_text('{"format": "something-else"}')
        with pytest.raises(ValueError):
            load_bank(path)
