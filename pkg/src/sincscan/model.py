"""Full detector: frontend plus bidirectional sequence model, with a
self-describing npz checkpoint format."""

import io
import json
import os
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .bimamba import BiMambaModel, FusionOutput, model_forward
from .config import TrainConfig
from .errors import CheckpointError
from .frontend import Frontend, frontend_forward
from .rng import Rng

CHECKPOINT_FORMAT = "sincscan-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class Detector:
    config: TrainConfig
    frontend: Frontend
    model: BiMambaModel

    @staticmethod
    def create(config: TrainConfig) -> "Detector":
        config.validate()
        rng = Rng(config.seed)
        pools = tuple(zip(config.block_pools_f, config.block_pools_t))
        frontend = Frontend.create(
            rng, n_filters=config.n_filters, kernel_size=config.sinc_kernel,
            sample_rate=float(config.sample_rate), sinc_pool=config.sinc_pool,
            channels=config.block_channels, pools=pools,
            trainable_bank=config.trainable_bank)
        model = BiMambaModel.create(
            rng, n_layers=config.n_layers, channels=config.channels,
            inner_dim=config.inner_dim, state_dim=config.state_dim,
            conv_kernel=config.conv_kernel, bias=config.bias,
            residual=config.residual, fusion_mode=config.fusion_mode,
            margin=config.margin, lambda_start=config.lambda_start,
            lambda_decay=config.lambda_decay,
            lambda_floor=config.lambda_floor)
        return Detector(config=config, frontend=frontend, model=model)

    def named_parameters(self) -> "OrderedDict[str, Tensor]":
        out = OrderedDict()
        out.update(sorted(self.frontend.named_tensors("frontend").items()))
        out.update(sorted(self.model.named_tensors("model").items()))
        return out

    def forward(self, waveforms) -> FusionOutput:
        if not isinstance(waveforms, Tensor):
            waveforms = Tensor(np.asarray(waveforms, dtype=np.float64))
        sequence = frontend_forward(self.frontend, waveforms)
        return model_forward(self.model, sequence)

    def scores(self, waveforms) -> np.ndarray:
        """Per-utterance score: bonafide logit minus spoof logit."""
        logits = self.forward(waveforms).logits.data
        return logits[:, 0] - logits[:, 1]


def save_checkpoint(path, detector: Detector, extra: dict | None = None):
    """Write parameters, config text, and format tags into one npz."""
    arrays = {f"param:{name}": tensor.data
              for name, tensor in detector.named_parameters().items()}
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": detector.config.to_text(),
        "head_steps": detector.model.fusion.head.steps,
    }
    if extra:
        meta.update(extra)
    arrays["meta"] = np.frombuffer(
        json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    buffer = io.BytesIO()
    np.savez(buffer, **arrays)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as handle:
        handle.write(buffer.getvalue())
    os.replace(tmp, path)


def load_checkpoint(path) -> Detector:
    try:
        bundle = np.load(path)
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint: {exc}") from exc
    with bundle:
        if "meta" not in bundle:
            raise CheckpointError(f"{path}: missing metadata block")
        meta = json.loads(bytes(bundle["meta"].tobytes()).decode("utf-8"))
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise CheckpointError(f"{path}: format tag {meta.get('format')!r} "
                                  f"is not {CHECKPOINT_FORMAT!r}")
        if meta.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: version {meta.get('version')!r} "
                                  f"unsupported, expected "
                                  f"{CHECKPOINT_VERSION}")
        config = TrainConfig.from_text(meta["config"])
        detector = Detector.create(config)
        detector.model.fusion.head.steps = int(meta.get("head_steps", 0))
        params = detector.named_parameters()
        stored = {key[len("param:"):]: bundle[key]
                  for key in bundle.files if key.startswith("param:")}
        missing = sorted(set(params) - set(stored))
        surplus = sorted(set(stored) - set(params))
        if missing or surplus:
            raise CheckpointError(f"{path}: parameter set mismatch, "
                                  f"missing {missing}, surplus {surplus}")
        for name, tensor in params.items():
            if stored[name].shape != tensor.data.shape:
                raise CheckpointError(
                    f"{path}: shape mismatch for {name}: stored "
                    f"{stored[name].shape}, expected {tensor.data.shape}")
            tensor.data[...] = stored[name]
    return detector
