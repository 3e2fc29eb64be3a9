"""Detector assembly, checkpointing, and training-loop checks at micro
scale (short waveforms, few parameters) so the whole file runs in
seconds."""

import json

import numpy as np
import pytest

from sincscan.config import TrainConfig
from sincscan.errors import CheckpointError, InputError, NumericError
from sincscan.model import (CHECKPOINT_FORMAT, Detector, load_checkpoint,
                            save_checkpoint)
from sincscan.rng import Rng
from sincscan.training import score_arrays, train_on_arrays


def micro_config(**overrides):
    base = dict(
        seed=77, learning_rate=1e-3, batch_size=4, epochs=2,
        sample_rate=16000, n_samples=2048,
        n_filters=2, sinc_kernel=65, sinc_pool=8,
        block_channels=(4,), block_pools_f=(1,), block_pools_t=(4,),
        n_layers=1, inner_dim=8, state_dim=4, fusion_mode="sum",
    )
    base.update(overrides)
    return TrainConfig(**base).validate()


def toy_waves(n_per_class=4, n_samples=2048):
    """Separable two-class toy: plain tones vs the same tones under a
    fast amplitude modulation."""
    t = np.arange(n_samples) / 16000.0
    rng = Rng(5)
    waves, labels = [], []
    for i in range(n_per_class):
        base = np.sin(2.0 * np.pi * (200.0 + 20.0 * i) * t
                      + rng.uniform(0.0, 2.0 * np.pi))
        waves.append(0.5 * base)
        labels.append(0)
        am = 0.6 + 0.4 * np.cos(2.0 * np.pi * 50.0 * t)
        waves.append(0.5 * base * am)
        labels.append(1)
    return np.asarray(waves), np.asarray(labels)


def test_detector_shapes_and_score_definition():
    detector = Detector.create(micro_config())
    waves = Rng(1).normal((3, 2048), std=0.2)
    out = detector.forward(waves)
    assert out.logits.shape == (3, 2)
    assert out.embedding.shape == (3, 4)
    assert out.hidden.shape == (3, 4)
    scores = detector.scores(waves)
    assert np.array_equal(scores, out.logits.data[:, 0] - out.logits.data[:, 1])


def test_scores_do_not_depend_on_list_order():
    detector = Detector.create(micro_config())
    waves = Rng(2).normal((8, 2048), std=0.2)
    straight = score_arrays(detector, waves)
    perm = Rng(3).permutation(8)
    shuffled = score_arrays(detector, waves[perm])
    assert np.array_equal(straight[perm], shuffled)
    one_by_one = np.array([detector.scores(waves[i:i + 1])[0]
                           for i in range(8)])
    assert np.array_equal(straight, one_by_one)


def test_checkpoint_round_trip_is_bitwise(tmp_path):
    detector = Detector.create(micro_config())
    waves = Rng(3).normal((2, 2048), std=0.2)
    before = detector.scores(waves)
    path = tmp_path / "model.npz"
    save_checkpoint(path, detector)
    loaded = load_checkpoint(path)
    for name, tensor in detector.named_parameters().items():
        assert np.array_equal(tensor.data,
                              loaded.named_parameters()[name].data), name
    assert np.array_equal(before, loaded.scores(waves))
    assert loaded.config == detector.config


def _rewrite_checkpoint(src, dst, mutate):
    bundle = np.load(src)
    arrays = {name: bundle[name] for name in bundle.files}
    mutate(arrays)
    np.savez(dst, **arrays)


def test_checkpoint_rejects_foreign_and_mismatched_files(tmp_path):
    detector = Detector.create(micro_config())
    path = tmp_path / "model.npz"
    save_checkpoint(path, detector)

    no_meta = tmp_path / "no_meta.npz"
    _rewrite_checkpoint(path, no_meta, lambda a: a.pop("meta"))
    with pytest.raises(CheckpointError, match="metadata"):
        load_checkpoint(no_meta)

    def set_meta(arrays, **fields):
        meta = json.loads(bytes(arrays["meta"].tobytes()).decode())
        meta.update(fields)
        arrays["meta"] = np.frombuffer(json.dumps(meta).encode(),
                                       dtype=np.uint8)

    wrong_format = tmp_path / "wrong_format.npz"
    _rewrite_checkpoint(path, wrong_format,
                        lambda a: set_meta(a, format="other-thing"))
    with pytest.raises(CheckpointError, match=CHECKPOINT_FORMAT):
        load_checkpoint(wrong_format)

    wrong_version = tmp_path / "wrong_version.npz"
    _rewrite_checkpoint(path, wrong_version, lambda a: set_meta(a, version=99))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(wrong_version)

    dropped = tmp_path / "dropped.npz"
    _rewrite_checkpoint(
        path, dropped,
        lambda a: a.pop("param:frontend.bank.low_hz"))
    with pytest.raises(CheckpointError, match="missing"):
        load_checkpoint(dropped)

    not_npz = tmp_path / "junk.npz"
    not_npz.write_bytes(b"not an archive")
    with pytest.raises(CheckpointError):
        load_checkpoint(not_npz)


def test_zero_learning_rate_leaves_parameters_bitwise_unchanged():
    cfg = micro_config(learning_rate=0.0)
    waves, labels = toy_waves()
    detector = Detector.create(cfg)
    snapshot = {name: tensor.data.copy()
                for name, tensor in detector.named_parameters().items()}
    result = train_on_arrays(cfg, waves, labels, detector=detector)
    assert len(result.history) == 2
    for name, tensor in result.detector.named_parameters().items():
        assert np.array_equal(tensor.data, snapshot[name]), name


def test_fixed_seed_rerun_reproduces_history_and_parameters():
    waves, labels = toy_waves()
    first = train_on_arrays(micro_config(), waves, labels)
    second = train_on_arrays(micro_config(), waves, labels)
    assert first.history == second.history
    for name, tensor in first.detector.named_parameters().items():
        assert np.array_equal(tensor.data,
                              second.detector.named_parameters()[name].data)


def test_one_batch_overfit_loss_trends_down():
    waves, labels = toy_waves()
    cfg = micro_config(batch_size=8, epochs=60)
    result = train_on_arrays(cfg, waves, labels)
    losses = [h["loss"] for h in result.history]
    for i in range(len(losses) - 20):
        assert losses[i + 20] < losses[i], (i, losses[i], losses[i + 20])


def test_non_finite_loss_aborts_with_batch_diagnostics():
    waves, labels = toy_waves()
    waves[0, 0] = np.nan  # poisons whichever batch draws the first row
    with pytest.raises(NumericError) as err:
        train_on_arrays(micro_config(), waves, labels,
                        utt_ids=[f"toy_{i}" for i in range(len(labels))])
    message = str(err.value)
    assert "step" in message and "toy_" in message


def test_training_input_validation():
    waves, labels = toy_waves()
    with pytest.raises(InputError):
        train_on_arrays(micro_config(), waves[:0], labels[:0])
    with pytest.raises(InputError):
        train_on_arrays(micro_config(), waves, np.zeros_like(labels))
    with pytest.raises(InputError):
        train_on_arrays(micro_config(), waves, labels[:-1])


def spectral_toy(n_per_class=4, n_samples=2048):
    """Coarser cue than the AM toy: the second class adds a high tone
    that lands in a different mel filter, separable by channel energy."""
    t = np.arange(n_samples) / 16000.0
    rng = Rng(6)
    waves, labels = [], []
    for i in range(n_per_class):
        base = 0.5 * np.sin(2.0 * np.pi * (200.0 + 20.0 * i) * t
                            + rng.uniform(0.0, 2.0 * np.pi))
        waves.append(base)
        labels.append(0)
        high = 0.4 * np.sin(2.0 * np.pi * 4000.0 * t
                            + rng.uniform(0.0, 2.0 * np.pi))
        waves.append(base + high)
        labels.append(1)
    return np.asarray(waves), np.asarray(labels)


def test_early_stop_cuts_the_run_short():
    waves, labels = spectral_toy()
    cfg = micro_config(epochs=60, batch_size=8)
    result = train_on_arrays(cfg, waves, labels, stop_at_train_eer=0.0)
    assert result.history[-1]["train_eer"] == 0.0
    assert len(result.history) < 60
