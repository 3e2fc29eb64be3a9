"""Adam training loop with per-epoch loss and train-EER records.

All randomness (shuffling, crop offsets, init) descends from the config
seed, so a rerun on one platform reproduces the loss curve bitwise.
"""

import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .audio import load_corpus, parse_protocol
from .config import TrainConfig
from .errors import InputError, NumericError
from .metrics import LABEL_TO_INDEX, ScoreRecord, asoftmax_loss, compute_eer
from .model import Detector
from .rng import Rng, splitmix64

SHUFFLE_STREAM = 0x5B5E1


@dataclass
class Adam:
    """Bias-corrected Adam over a named parameter dict."""

    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    state: dict = field(default_factory=dict)

    def step(self, params) -> None:
        self.t += 1
        scale1 = 1.0 / (1.0 - self.beta1 ** self.t)
        scale2 = 1.0 / (1.0 - self.beta2 ** self.t)
        for name, p in params.items():
            if p.grad is None:
                continue
            if name not in self.state:
                self.state[name] = (np.zeros_like(p.data),
                                    np.zeros_like(p.data))
            m, v = self.state[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad ** 2
            p.data -= (self.learning_rate * (m * scale1)
                       / (np.sqrt(v * scale2) + self.eps))


@dataclass
class TrainResult:
    detector: Detector
    history: list  # one {"epoch", "loss", "train_eer"} record per epoch


def score_arrays(detector: Detector, waves: np.ndarray) -> np.ndarray:
    """Bonafide-minus-spoof score per row of a (N, S) waveform matrix.

    Rows are scored one at a time: batched FFTs can flip last bits as the
    batch layout changes, and the scoring contract promises results that
    do not depend on how a list is ordered or chunked.
    """
    scores = np.empty(waves.shape[0])
    for row in range(waves.shape[0]):
        scores[row] = detector.scores(waves[row:row + 1])[0]
    return scores


def embed_arrays(detector: Detector, waves: np.ndarray) -> np.ndarray:
    """Fused embedding per row, for export and projection.  Per-row for
    the same layout-independence reason as score_arrays."""
    rows = [detector.forward(waves[row:row + 1]).embedding.data
            for row in range(waves.shape[0])]
    return np.concatenate(rows, axis=0)


def _train_eer(detector: Detector, waves, labels, utt_ids) -> float:
    scores = score_arrays(detector, waves)
    records = [ScoreRecord(utt_id=utt_ids[i],
                           label="bonafide" if labels[i] == 0 else "spoof",
                           score=float(scores[i]))
               for i in range(len(utt_ids))]
    return compute_eer(records)[0]


def train_on_arrays(config: TrainConfig, waves: np.ndarray, labels,
                    utt_ids=None, stop_at_train_eer: float | None = None,
                    detector: Detector | None = None) -> TrainResult:
    """Run the full loop over in-memory waveforms.

    labels are 0 (bonafide) / 1 (spoof).  When stop_at_train_eer is given,
    training ends after the first epoch whose train EER is at or below it.
    """
    config.validate()
    waves = np.asarray(waves, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if waves.ndim != 2 or waves.shape[0] != labels.shape[0]:
        raise InputError(f"waveform matrix {waves.shape} does not pair with "
                         f"{labels.shape[0]} labels")
    if waves.shape[0] == 0:
        raise InputError("cannot train on an empty corpus")
    if not (np.any(labels == 0) and np.any(labels == 1)):
        raise InputError("training corpus must contain both classes")
    if utt_ids is None:
        utt_ids = [f"utt_{i:05d}" for i in range(waves.shape[0])]

    if detector is None:
        detector = Detector.create(config)
    params = detector.named_parameters()
    head = detector.model.fusion.head
    adam = Adam(learning_rate=config.learning_rate, beta1=config.adam_beta1,
                beta2=config.adam_beta2, eps=config.adam_eps)
    shuffle = Rng(splitmix64(config.seed ^ SHUFFLE_STREAM))

    history = []
    n = waves.shape[0]
    for epoch in range(config.epochs):
        order = shuffle.permutation(n)
        losses = []
        for start in range(0, n, config.batch_size):
            batch = order[start:start + config.batch_size]
            ids = ", ".join(utt_ids[i] for i in batch)
            try:
                out = detector.forward(waves[batch])
                loss = asoftmax_loss(head, out.hidden, labels[batch])
            except NumericError as exc:
                raise NumericError(f"{exc} at step {adam.t + 1} "
                                   f"on batch [{ids}]") from exc
            value = float(loss.data)
            if not np.isfinite(value):
                raise NumericError(f"loss became non-finite at step "
                                   f"{adam.t + 1} on batch [{ids}]")
            ad.backward(loss)
            adam.step(params)
            ad.zero_grad(params.values())
            head.renormalize()
            head.advance()
            detector.frontend.bank.assert_bands_valid()
            losses.append(value)
        record = {"epoch": epoch,
                  "loss": float(np.mean(losses)),
                  "train_eer": _train_eer(detector, waves, labels, utt_ids)}
        history.append(record)
        if (stop_at_train_eer is not None
                and record["train_eer"] <= stop_at_train_eer):
            break
    return TrainResult(detector=detector, history=history)


def train_on_corpus(config: TrainConfig, corpus_dir, protocol_path=None,
                    **kwargs) -> TrainResult:
    """File-based wrapper: read a protocol, load the WAVs, train."""
    if protocol_path is None:
        protocol_path = os.path.join(corpus_dir, "protocol.txt")
    records = parse_protocol(protocol_path)
    if not records:
        raise InputError(f"{protocol_path}: empty protocol")
    labels = np.array([LABEL_TO_INDEX[label] for _, label in records])
    waves = load_corpus(corpus_dir, records, config.n_samples,
                        config.sample_rate, seed=config.seed)
    utt_ids = [utt for utt, _ in records]
    return train_on_arrays(config, waves, labels, utt_ids=utt_ids, **kwargs)
