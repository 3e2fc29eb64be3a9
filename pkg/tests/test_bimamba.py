"""Bidirectional model and fusion checks: direction symmetry is bitwise,
pooling is convex, every fusion mode has the documented embedding width
and clean gradients."""

import math

import numpy as np
import pytest

from sincscan import autodiff as ad
from sincscan.autodiff import Tensor
from sincscan.bimamba import (BiMambaModel, FusionBlock, attention_pool,
                              bidirectional_forward, fuse, fused_dim,
                              model_forward, reverse_sequence)
from sincscan.errors import ConfigError, DimensionError
from sincscan.mamba import stack_forward
from sincscan.rng import Rng


def _tie_weights(model):
    fwd = model.forward_stack.named_tensors("s")
    bwd = model.backward_stack.named_tensors("s")
    for name, tensor in fwd.items():
        bwd[name].data[...] = tensor.data


def _small_model(mode="concat", seed=42):
    return BiMambaModel.create(Rng(seed), n_layers=1, channels=4, inner_dim=8,
                               state_dim=4, fusion_mode=mode)


def test_reverse_sequence_is_an_involution():
    x = Rng(1).normal((2, 7, 3))
    once = reverse_sequence(Tensor(x)).data
    twice = reverse_sequence(Tensor(once)).data
    assert np.array_equal(once, x[:, ::-1, :])
    assert np.array_equal(twice, x)


def test_reverse_sequence_needs_rank_three():
    with pytest.raises(DimensionError):
        reverse_sequence(Tensor(np.zeros((4, 5))))


def test_tied_weights_make_directions_mirror_images_bitwise():
    model = _small_model()
    _tie_weights(model)
    x = Tensor(Rng(2).normal((2, 10, 4)))
    _, f_bwd = bidirectional_forward(model, x)
    mirrored = stack_forward(model.forward_stack, reverse_sequence(x))
    assert np.array_equal(f_bwd.data, mirrored.data)


def test_palindromic_input_with_tied_weights_collapses_directions():
    model = _small_model()
    _tie_weights(model)
    half = Rng(3).normal((2, 5, 4))
    x = Tensor(np.concatenate([half, half[:, ::-1, :]], axis=1))
    f_fwd, f_bwd = bidirectional_forward(model, x)
    assert np.array_equal(f_fwd.data, f_bwd.data)


def test_attention_pool_zero_scores_is_the_mean():
    x = Tensor(Rng(4).normal((3, 9, 5)))
    pooled = attention_pool(x, Tensor(np.zeros((5, 1))), Tensor(np.zeros(1)))
    assert np.max(np.abs(pooled.data - x.data.mean(axis=1))) < 1e-12


def test_attention_pool_softmax_hand_weights():
    # scores (ln 3, 0) must mix with weights (0.75, 0.25)
    x = Tensor(np.array([[[math.log(3.0)], [0.0]]]))
    pooled = attention_pool(x, Tensor(np.ones((1, 1))), Tensor(np.zeros(1)))
    assert abs(pooled.data[0, 0] - 0.75 * math.log(3.0)) < 1e-12


def test_attention_pool_stays_in_the_convex_hull():
    x = Rng(5).normal((4, 11, 6))
    pooled = attention_pool(Tensor(x), Tensor(Rng(6).normal((6, 1))),
                            Tensor(np.zeros(1))).data
    assert np.all(pooled <= x.max(axis=1) + 1e-12)
    assert np.all(pooled >= x.min(axis=1) - 1e-12)


@pytest.mark.parametrize("mode,width_factor", [("sum", 1), ("concat", 2),
                                               ("attention", 1)])
def test_fusion_embedding_widths(mode, width_factor):
    assert fused_dim(4, mode) == 4 * width_factor
    model = _small_model(mode)
    out = model_forward(model, Tensor(Rng(7).normal((3, 8, 4))))
    assert out.embedding.shape == (3, 4 * width_factor)
    assert out.hidden.shape == (3, 4 * width_factor)
    assert out.logits.shape == (3, 2)


def test_invalid_fusion_mode_is_a_configuration_error():
    with pytest.raises(ConfigError):
        FusionBlock.create(Rng(1), channels=4, mode="average")
    with pytest.raises(ConfigError):
        fused_dim(4, "average")
    model = _small_model("sum")
    model.fusion.mode = "average"
    with pytest.raises(ConfigError):
        fuse(model.fusion, Tensor(np.zeros((1, 4, 4))), Tensor(np.zeros((1, 4, 4))))


def test_mismatched_head_width_is_a_configuration_error():
    model = _small_model("concat")
    model.fusion.mode = "sum"  # embedding narrows to C but the head expects 2C
    with pytest.raises(ConfigError):
        model_forward(model, Tensor(np.zeros((1, 6, 4))))


def test_forward_is_deterministic_bitwise():
    model = _small_model("attention")
    x = Rng(8).normal((2, 9, 4))
    a = model_forward(model, Tensor(x))
    b = model_forward(model, Tensor(x))
    assert np.array_equal(a.logits.data, b.logits.data)


@pytest.mark.parametrize("mode", ["sum", "concat", "attention"])
def test_full_model_gradients_match_finite_differences(mode):
    model = BiMambaModel.create(Rng(100), n_layers=1, channels=4, inner_dim=8,
                                state_dim=4, fusion_mode=mode)
    x = Tensor(Rng(101).normal((1, 12, 4)), requires_grad=True)
    readout = Tensor(Rng(102).normal((2,)))

    def f():
        out = model_forward(model, x)
        return ad.tsum(ad.mul(ad.silu(out.logits), readout))

    probes = dict(model.named_tensors(), x=x)
    errs = ad.finite_difference_check(f, probes)
    assert max(errs.values()) < 1e-4
