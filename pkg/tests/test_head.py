import math

import numpy as np
import pytest
from _oracles import gradcheck, random_small_head
from hypothesis import given
from hypothesis import strategies as st

from tomofuse.errors import LengthMismatch, ShapeMismatch, ShapeUnsupported
from tomofuse.learner.head import PARAM_ORDER, ClassifierHead, bce_loss, sigmoid


def zero_head(shape=(2, 4, 4)):
    h = ClassifierHead(shape, conv_filters=3, conv_kernel=3, hidden=5, dropout=0.5)
    for k in h.params:
        h.params[k][...] = 0.0
    return h


def test_zero_head_gives_half():
    assert zero_head().forward(np.ones((2, 4, 4))) == 0.5


def test_logit_two():
    # a head whose only nonzero parameter is the output bias
    h = zero_head()
    h.params["fc2.bias"][0] = 2.0
    assert h.logits(np.zeros((2, 4, 4))) == 2.0
    assert round(h.forward(np.zeros((2, 4, 4))), 6) == 0.880797


def test_sigmoid_extremes_and_symmetry():
    assert sigmoid(np.array([0.0]))[0] == 0.5
    assert np.all(np.isfinite(sigmoid(np.array([-1000.0, 1000.0]))))
    x = np.linspace(-30, 30, 61)
    np.testing.assert_allclose(sigmoid(x) + sigmoid(-x), 1.0, atol=1e-15)


def test_inference_is_pure(rng):
    h = ClassifierHead((2, 5, 5), conv_filters=4, hidden=8)
    fm = rng.random((2, 5, 5))
    assert h.forward(fm) == h.forward(fm)
    batch = rng.random((3, 2, 5, 5))
    assert h.forward(batch).shape == (3,)
    np.testing.assert_allclose(h.forward(batch)[1], h.forward(batch[1]), rtol=1e-12)


def test_forward_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        ClassifierHead((2, 5, 5)).forward(np.zeros((3, 5, 5)))


def test_map_smaller_than_kernel():
    with pytest.raises(ShapeUnsupported):
        ClassifierHead((2, 2, 2), conv_kernel=3)


def test_in_dim_matches_conv_output():
    h = ClassifierHead((16, 5, 5), conv_filters=64, conv_kernel=3, conv_stride=1, hidden=32)
    assert h.params["fc1.weight"].shape == (64 * 3 * 3, 32)
    h2 = ClassifierHead((4, 9, 7), conv_filters=2, conv_kernel=3, conv_stride=2, hidden=3)
    assert h2.params["fc1.weight"].shape == (2 * 4 * 3, 3)


def test_train_mode_requires_rng():
    h = ClassifierHead((1, 3, 3), conv_filters=1, hidden=2, dropout=0.5)
    with pytest.raises(ValueError):
        h.forward(np.zeros((1, 3, 3)), train_mode=True)


def test_same_seed_same_init():
    a = ClassifierHead((2, 4, 4), hidden=6, seed=3)
    b = ClassifierHead((2, 4, 4), hidden=6, seed=3)
    assert all(np.array_equal(a.params[k], b.params[k]) for k in PARAM_ORDER)


def test_bce_examples():
    assert round(bce_loss([0.5], [1]), 6) == 0.693147
    assert round(bce_loss([0.9, 0.2], [1, 0]), 6) == 0.164252
    assert bce_loss([1.0, 0.0], [1, 0]) < 1e-6


def test_bce_length_mismatch():
    with pytest.raises(LengthMismatch):
        bce_loss([0.5, 0.5], [1])
    with pytest.raises(LengthMismatch):
        bce_loss([], [])


@given(st.lists(st.tuples(st.floats(0, 1), st.integers(0, 1)), min_size=1, max_size=30))
def test_bce_nonnegative(pairs):
    p, t = zip(*pairs)
    assert bce_loss(p, t) >= 0.0


def test_zero_input_grad():
    h = ClassifierHead((2, 4, 4), conv_filters=3, hidden=5, seed=1)
    h.params["conv.bias"][...] = 0.1
    h.params["fc1.bias"][...] = 0.1
    _, g = h.backward(np.zeros((1, 2, 4, 4)), [1])
    assert not g["conv.weight"].any()
    assert g["conv.bias"].any() and g["fc1.bias"].any() and g["fc2.bias"].any()


def test_duplicate_sample_grad_equals_single(rng):
    h = ClassifierHead((2, 4, 4), conv_filters=3, hidden=5, seed=2)
    x = rng.random((1, 2, 4, 4))
    loss1, g1 = h.backward(x, [1])
    loss2, g2 = h.backward(np.concatenate([x, x]), [1, 1])
    assert math.isclose(loss1, loss2, rel_tol=1e-12)
    for k in PARAM_ORDER:
        np.testing.assert_allclose(g1[k], g2[k], rtol=1e-12, atol=1e-15)


def test_backward_length_mismatch():
    h = ClassifierHead((1, 3, 3), conv_filters=1, hidden=2)
    with pytest.raises(LengthMismatch):
        h.backward(np.zeros((2, 1, 3, 3)), [1])


@pytest.mark.parametrize("i", range(10))
def test_gradcheck_inference(i):
    head, x, t = random_small_head(np.random.default_rng([99, i]))
    assert gradcheck(head, x, t) < 1e-4


@pytest.mark.parametrize("i", range(10))
def test_gradcheck_with_dropout_mask(i):
    head, x, t = random_small_head(np.random.default_rng([98, i]), dropout=0.4)
    assert gradcheck(head, x, t, mask_seed=i) < 1e-4


def test_dropout_expectation_matches_inference(rng):
    h = ClassifierHead((2, 5, 5), conv_filters=4, hidden=16, dropout=0.5, seed=5)
    for k in ("conv.bias", "fc1.bias"):
        h.params[k][...] = 0.05
    fm = rng.random((2, 5, 5))
    draws = np.array([h.logits(fm, train_mode=True, rng=rng) for _ in range(10_000)])
    se = draws.std(ddof=1) / math.sqrt(draws.size)
    assert se > 0
    assert abs(draws.mean() - h.logits(fm)) <= 3 * se


def test_dropout_zero_train_equals_inference(rng):
    h = ClassifierHead((2, 4, 4), conv_filters=2, hidden=4, dropout=0.0)
    fm = rng.random((2, 4, 4))
    assert h.forward(fm, train_mode=True, rng=rng) == h.forward(fm)
