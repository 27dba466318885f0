import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from errors import ConfigError
from popularity import PopularityModel, build_popularity, default_class_probs, zipf_weights


def test_zipf_hand_values():
    model = PopularityModel(beta=2.0, ranks=np.array([[1], [2], [3]]), class_probs=np.array([[1.0]]))
    assert [model.zipf_prob(f, 0) for f in range(3)] == pytest.approx([36 / 49, 9 / 49, 4 / 49])


def test_zipf_uniform_at_beta_zero():
    q = zipf_weights(np.arange(1, 11)[:, None], 0.0)
    assert np.allclose(q, 0.1)


def test_zipf_sums_to_one_at_default_size():
    model = build_popularity(22, 100, beta=2.0, seed=1)
    assert np.all(np.abs(model.q.sum(axis=0) - 1.0) < 1e-12)
    assert np.all(model.q > 0) and np.all(model.q <= 1)


def test_default_class_vectors():
    assert default_class_probs(3).tolist() == [0.3, 0.5, 0.2]
    assert default_class_probs(4).tolist() == [0.2, 0.3, 0.5]
    assert default_class_probs(5).tolist() == [0.5, 0.2, 0.3]
    for u in range(1, 10):
        assert default_class_probs(u).sum() == pytest.approx(1.0)


def test_default_class_vectors_need_matrix_for_other_k():
    with pytest.raises(ConfigError):
        default_class_probs(1, K=4)
    assert default_class_probs(2, K=2, matrix=[[1.0, 0.0], [0.4, 0.6]]).tolist() == [0.4, 0.6]


def test_single_class_q_equals_zipf():
    model = build_popularity(3, 8, K=1, beta=1.5, seed=2, class_probs=[[1.0]])
    assert np.allclose(model.Q, model.q[:, 0][None, :])


def test_identical_ranks_collapse_classes():
    model = build_popularity(3, 10, beta=2.0, distinct_ranks=False)
    expected = zipf_weights(np.arange(1, 11), 2.0)
    assert np.allclose(model.Q, expected[None, :])


def test_q_rows_stochastic():
    model = build_popularity(7, 10, beta=2.0, seed=4)
    assert np.allclose(model.Q.sum(axis=1), 1.0, atol=1e-9)
    assert model.averaged_popularity(2, 3) == pytest.approx(
        sum(model.class_probs[2, k] * model.q[3, k] for k in range(3)))


def test_file_metric_single_user():
    model = build_popularity(1, 6, seed=0)
    assert np.allclose(model.file_metrics(), model.Q[0])
    assert model.file_metric(2) == pytest.approx(model.Q[0, 2])


def test_out_of_range_indices():
    model = build_popularity(2, 4, seed=0)
    with pytest.raises(IndexError):
        model.zipf_prob(4, 0)
    with pytest.raises(IndexError):
        model.averaged_popularity(2, 0)
    with pytest.raises(IndexError):
        model.file_metric(-1)


def test_bad_inputs_rejected():
    with pytest.raises(ConfigError):
        PopularityModel(beta=1.0, ranks=np.array([[1], [1]]), class_probs=np.array([[1.0]]))
    with pytest.raises(ConfigError):
        PopularityModel(beta=1.0, ranks=np.array([[1], [2]]), class_probs=np.array([[0.7]]))
    with pytest.raises(ConfigError):
        PopularityModel(beta=-1.0, ranks=np.array([[1], [2]]), class_probs=np.array([[1.0]]))


def test_short_class_matrix_reused_cyclically():
    model = build_popularity(4, 5, K=2, seed=0, class_probs=[[1.0, 0.0], [0.0, 1.0]])
    assert model.class_probs.tolist() == [[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]]


def test_round_trip_dict():
    model = build_popularity(5, 12, seed=9)
    back = PopularityModel.from_dict(model.to_dict())
    assert np.array_equal(back.Q, model.Q)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 12), st.integers(1, 40), st.floats(0.0, 4.0), st.integers(0, 2**31))
def test_file_metrics_sum_to_users(U, F, beta, seed):
    model = build_popularity(U, F, beta=beta, seed=seed)
    assert model.file_metrics().sum() == pytest.approx(U, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.0, 3.0), st.floats(0.0, 3.0), st.integers(2, 50))
def test_top_file_gains_with_beta(b1, b2, F):
    lo, hi = sorted((b1, b2))
    ranks = np.arange(1, F + 1)
    assert zipf_weights(ranks, hi)[0] >= zipf_weights(ranks, lo)[0] - 1e-15
