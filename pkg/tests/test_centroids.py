import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from discluster import autodiff as ad
from discluster import centroids as cb
from discluster.centroids import CentroidBank
from discluster.errors import ContractError, DimensionError, ParameterError, StateError

import oracles


def replay(batches, K, alpha=0.7):
    bank = CentroidBank.empty(K, len(batches[0][0][0]), alpha)
    for feats, labels in batches:
        bank, _ = cb.update(bank, ad.constant(feats), labels)
    return bank


def test_first_update_takes_batch_mean():
    bank = CentroidBank.empty(2, 2)
    new, m_hat = cb.update(bank, ad.constant([[1.0, 1.0], [3.0, 3.0]]), [0, 0])
    np.testing.assert_array_equal(new.centroids[0], [2.0, 2.0])
    np.testing.assert_array_equal(m_hat.value[0], [2.0, 2.0])
    assert new.initialized.tolist() == [True, False]
    assert not bank.initialized.any()


def test_moving_average_step():
    bank = CentroidBank(np.array([[0.0, 0.0], [1.0, 1.0]]), np.array([True, True]), 0.7)
    new, _ = cb.update(bank, ad.constant([[10.0, 0.0]]), [0])
    np.testing.assert_allclose(new.centroids[0], [3.0, 0.0], atol=1e-15)
    np.testing.assert_array_equal(new.centroids[1], [1.0, 1.0])


def test_stored_part_is_detached():
    bank = CentroidBank(np.ones((2, 2)), np.array([True, True]), 0.7)
    f = ad.parameter([[2.0, 0.0], [0.0, 4.0]])
    _, m_hat = cb.update(bank, f, [0, 0])
    ad.backward(ad.sum_all(m_hat))
    # only the (1 - alpha) / n share of each row flows back
    np.testing.assert_allclose(f.grad, np.full((2, 2), 0.3 / 2), atol=1e-15)


@pytest.mark.parametrize("alpha", [0.0, 1.0])
def test_alpha_edges(alpha):
    bank = CentroidBank(np.zeros((1, 1)), np.array([True]), alpha)
    new, _ = cb.update(bank, ad.constant([[5.0]]), [0])
    assert new.centroids[0, 0] == (5.0 if alpha == 0.0 else 0.0)


def test_bad_alpha():
    with pytest.raises(ParameterError):
        CentroidBank.empty(2, 2, 1.5)


def test_label_out_of_range():
    with pytest.raises(ContractError):
        cb.update(CentroidBank.empty(2, 1), ad.constant([[1.0]]), [2])


def test_width_mismatch():
    with pytest.raises(DimensionError):
        cb.update(CentroidBank.empty(2, 3), ad.constant([[1.0]]), [0])


def test_uninitialized_query_names_class():
    bank, _ = cb.update(CentroidBank.empty(3, 1), ad.constant([[1.0]]), [0])
    with pytest.raises(StateError, match="centroid 1"):
        cb.between_vector_bank(0, bank)


def test_between_vector_diagonal():
    bank = CentroidBank(np.array([[0.0, 0.0], [3.0, 4.0], [1.0, 0.0]]), np.ones(3, bool))
    for k in range(3):
        row = cb.between_vector_bank(k, bank)
        assert row[k] == 0.0 and row.max() == 0.0
    np.testing.assert_allclose(cb.between_vector_bank(0, bank), [0.0, -25.0, -1.0])


def test_within_vector_values():
    bank = CentroidBank(np.array([[0.0], [2.0]]), np.ones(2, bool))
    np.testing.assert_allclose(cb.within_vector_bank([[1.0]], bank), [[-1.0, -1.0]])


def test_pseudo_labels_tie_break_low_index():
    assert cb.assign_pseudo_labels([[1.0, 1.0, 0.0]]).tolist() == [0]


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), steps=st.integers(1, 6), K=st.integers(1, 4))
def test_matches_unrolled_recurrence(seed, steps, K):
    rng = np.random.default_rng(seed)
    batches = []
    for _ in range(steps):
        n = int(rng.integers(1, 6))
        batches.append((rng.normal(size=(n, 2)).tolist(), rng.integers(0, K, size=n).tolist()))
    bank = replay(batches, K)
    ref = oracles.moving_average(batches, K, 0.7)
    for k in range(K):
        if ref[k] is None:
            assert not bank.initialized[k]
        else:
            assert bank.initialized[k]
            np.testing.assert_allclose(bank.centroids[k], ref[k], atol=1e-10, rtol=0)
