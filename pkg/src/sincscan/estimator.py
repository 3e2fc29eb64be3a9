"""scikit-learn facade over the detector.

The estimator trains on in-memory waveform matrices and follows sklearn
conventions: ``decision_function`` is positive for the second class in
``classes_`` (spoof), while the package-native bonafide-minus-spoof score
stays available as ``score_utterances``.
"""

import dataclasses

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .config import TrainConfig, preset_config
from .metrics import ScoreRecord, compute_eer
from .training import embed_arrays, score_arrays, train_on_arrays

_OVERRIDABLE = ("learning_rate", "batch_size", "epochs", "seed",
                "fusion_mode", "margin")


class SpoofDetector(BaseEstimator, ClassifierMixin):
    """Binary anti-spoofing classifier over fixed-length waveforms.

    Parameters
    ----------
    preset : which architecture plan to start from: "tiny", "full", or a
        TrainConfig instance (kept as-is, copied before any overrides).
    learning_rate, batch_size, epochs, seed, fusion_mode, margin :
        optional overrides of the preset's fields; None keeps the preset
        value.
    stop_at_train_eer : end training early once the train EER reaches
        this value (None trains for the full epoch budget).
    """

    def __init__(self, preset="tiny", learning_rate=None, batch_size=None,
                 epochs=None, seed=None, fusion_mode=None, margin=None,
                 stop_at_train_eer=None):
        self.preset = preset
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.seed = seed
        self.fusion_mode = fusion_mode
        self.margin = margin
        self.stop_at_train_eer = stop_at_train_eer

    def _build_config(self):
        if isinstance(self.preset, TrainConfig):
            config = dataclasses.replace(self.preset)
        else:
            config = preset_config(self.preset)
        for name in _OVERRIDABLE:
            value = getattr(self, name)
            if value is not None:
                setattr(config, name, value)
        return config.validate()

    def _check_waves(self, X, config):
        X = check_array(X, dtype=np.float64, ensure_2d=True)
        if X.shape[1] != config.n_samples:
            raise ValueError(f"expected waveforms of {config.n_samples} "
                             f"samples, got {X.shape[1]}")
        return X

    def fit(self, X, y):
        config = self._build_config()
        X = self._check_waves(X, config)
        y = np.asarray(y)
        if y.shape != (X.shape[0],):
            raise ValueError(f"y has shape {y.shape}, expected "
                             f"({X.shape[0]},)")
        classes = np.unique(y)
        if classes.shape[0] != 2:
            raise ValueError(f"need exactly two classes, got {classes!r}")
        labels = np.searchsorted(classes, y)  # 0 = first class = bonafide
        result = train_on_arrays(config, X, labels,
                                 stop_at_train_eer=self.stop_at_train_eer)
        self.classes_ = classes
        self.config_ = config
        self.detector_ = result.detector
        self.history_ = result.history
        self.n_features_in_ = X.shape[1]
        # raw scores are a ranking, not a calibrated sign; predict operates
        # at the train-set EER threshold
        scores = score_arrays(result.detector, X)
        records = [ScoreRecord(f"fit_{i}", "bonafide" if l == 0 else "spoof",
                               float(s))
                   for i, (l, s) in enumerate(zip(labels, scores))]
        self.train_eer_, self.threshold_ = compute_eer(records)
        return self

    def score_utterances(self, X) -> np.ndarray:
        """Bonafide-minus-spoof score (higher means more genuine)."""
        check_is_fitted(self, "detector_")
        return score_arrays(self.detector_, self._check_waves(X, self.config_))

    def decision_function(self, X) -> np.ndarray:
        """Spoofness relative to the fitted threshold: positive values
        mean classes_[1] (spoof), matching sklearn's sign convention."""
        check_is_fitted(self, "threshold_")
        return self.threshold_ - self.score_utterances(X)

    def predict(self, X):
        spoofness = self.decision_function(X)
        # a score exactly at the threshold is accepted as bonafide, in
        # line with the at-or-above acceptance rule of the DET curve
        return self.classes_[(spoofness > 0.0).astype(int)]

    def transform(self, X) -> np.ndarray:
        """Fused embeddings, one row per utterance."""
        check_is_fitted(self, "detector_")
        return embed_arrays(self.detector_, self._check_waves(X, self.config_))
