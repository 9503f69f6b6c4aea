import numpy as np
import pytest

from discluster import autodiff as ad
from discluster.errors import DimensionError, ParameterError, UnsupportedConfigurationError
from discluster.model import AdaptationModel, argmax_rows, predict, region_index, softmax_T


def test_default_shapes():
    m = AdaptationModel.build(2, 3)
    out = m.forward(np.zeros((5, 2)))
    assert out.features.shape == (5, 32)
    assert out.lifted.shape == (5, 16)
    assert out.logits.shape == (5, 3)
    assert m.two_layer and m.spaces == ("F", "F_up")


def test_single_layer_lifted_is_features():
    m = AdaptationModel.build(2, 3, (4,), None)
    out = m.forward(np.ones((2, 2)))
    assert out.lifted is out.features
    assert m.spaces == ("F",)


def test_features_are_non_negative():
    m = AdaptationModel.build(3, 2, (8, 8), 4, seed=1)
    f = m.extract(ad.constant(np.random.default_rng(0).normal(size=(20, 3)))).value
    assert f.min() >= 0.0


def test_parameter_groups():
    m = AdaptationModel.build(2, 3, (4, 4), 5)
    groups = {name: g for name, _, g in m.named_parameters()}
    assert sum(g == "extractor" for g in groups.values()) == 4
    assert sum(g == "classifier" for g in groups.values()) == 4


def test_state_dict_round_trip():
    a = AdaptationModel.build(2, 3, seed=1)
    b = AdaptationModel.build(2, 3, seed=2)
    b.load_state_dict(a.state_dict())
    x = np.random.default_rng(0).normal(size=(4, 2))
    np.testing.assert_array_equal(a.logits(x), b.logits(x))


def test_same_seed_same_weights():
    a, b = AdaptationModel.build(2, 3, seed=5), AdaptationModel.build(2, 3, seed=5)
    for (_, ta, _), (_, tb, _) in zip(a.named_parameters(), b.named_parameters()):
        assert ta.value.tobytes() == tb.value.tobytes()


def test_input_width_checked():
    m = AdaptationModel.build(2, 3)
    with pytest.raises(DimensionError):
        m.forward(np.zeros((1, 3)))


def test_softmax_temperature_validation():
    with pytest.raises(ParameterError):
        softmax_T([[1.0]], 0.0)


def test_softmax_large_logits_stable():
    p = softmax_T([[1000.0, 0.0]])
    assert np.all(np.isfinite(p)) and p[0, 0] == 1.0


def test_predict_is_argmax():
    m = AdaptationModel.build(2, 4, seed=3)
    x = np.random.default_rng(1).normal(size=(10, 2))
    np.testing.assert_array_equal(predict(m, x), np.argmax(m.logits(x), axis=1))
    assert argmax_rows([[0.0, 2.0, 2.0]]).tolist() == [1]


def test_region_index_bits():
    m = AdaptationModel.build(2, 3, (2,), None)
    m.classifier[0].weight.value = np.array([[1.0, -1.0, 0.0], [0.0, 0.0, 1.0]])
    m.classifier[0].bias.value = np.zeros((1, 3))
    np.testing.assert_array_equal(region_index(m, [[1.0, 2.0]]), [[1, 0, 1]])


def test_region_index_rejects_two_layer():
    with pytest.raises(UnsupportedConfigurationError):
        region_index(AdaptationModel.build(2, 3), [[0.0] * 32])
