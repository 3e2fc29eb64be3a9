"""Training objective and evaluation metrics.

The angular-margin head replaces a plain linear classifier: class weight
columns are kept at unit norm, logits are ||x|| * cos(theta), and during
training the target-class angle passes through the SphereFace margin
function psi(theta) = (-1)^k cos(m*theta) - 2k on [k*pi/m, (k+1)*pi/m],
annealed against the plain cosine by a decaying lambda.

Evaluation is threshold-free: equal error rate from the detection-error
tradeoff of bonafide-vs-spoof scores (higher score means more bonafide),
and the normalized minimum tandem detection cost with the ASV operating
point supplied as configuration, never computed here.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractError, InputError, NumericError, ParseError
from .rng import Rng

LABELS = ("bonafide", "spoof")
LABEL_TO_INDEX = {"bonafide": 0, "spoof": 1}

_COS_CLIP = 1e-7
_NORM_FLOOR = 1e-12


# ---- score records and files -------------------------------------------------

@dataclass(frozen=True)
class ScoreRecord:
    """One scored utterance; label is None until keys are joined in."""

    utt_id: str
    label: str | None
    score: float


def write_score_file(path, records, metadata=None) -> None:
    """Write '<utt_id> <score>' lines; metadata becomes '# key: value'
    comment headers.  repr() formatting makes the round trip exact."""
    lines = []
    for key, value in (metadata or {}).items():
        lines.append(f"# {key}: {value}")
    for rec in records:
        lines.append(f"{rec.utt_id} {rec.score!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_score_file(path):
    """Returns (records with label None, metadata dict)."""
    records, metadata = [], {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if ":" in body:
                    key, _, value = body.partition(":")
                    metadata[key.strip()] = value.strip()
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ParseError(
                    f"{path}:{lineno}: expected '<utt_id> <score>', got {line!r}")
            try:
                score = float(parts[1])
            except ValueError:
                raise ParseError(
                    f"{path}:{lineno}: score {parts[1]!r} is not a number") from None
            records.append(ScoreRecord(utt_id=parts[0], label=None, score=score))
    return records, metadata


def read_key_file(path):
    """Returns {utt_id: label} from '<utt_id> <bonafide|spoof>' lines."""
    keys = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2 or parts[1] not in LABELS:
                raise ParseError(
                    f"{path}:{lineno}: expected '<utt_id> <bonafide|spoof>', "
                    f"got {line!r}")
            keys[parts[0]] = parts[1]
    return keys


def join_scores_with_keys(records, keys):
    out = []
    for rec in records:
        label = keys.get(rec.utt_id)
        if label is None:
            raise InputError(f"utterance {rec.utt_id!r} has no key entry")
        out.append(ScoreRecord(utt_id=rec.utt_id, label=label, score=rec.score))
    return out


# ---- detection error tradeoff --------------------------------------------------

def _split_scores(records):
    bona, spoof = [], []
    for rec in records:
        if rec.label == "bonafide":
            bona.append(rec.score)
        elif rec.label == "spoof":
            spoof.append(rec.score)
        else:
            raise InputError(f"record {rec.utt_id!r} has label {rec.label!r}")
    if not bona or not spoof:
        raise InputError(
            f"need both classes, got {len(bona)} bonafide / {len(spoof)} spoof")
    bona = np.asarray(bona, dtype=np.float64)
    spoof = np.asarray(spoof, dtype=np.float64)
    if not (np.all(np.isfinite(bona)) and np.all(np.isfinite(spoof))):
        raise InputError("scores contain non-finite values")
    return bona, spoof


def _det_curve(bona, spoof):
    """Operating points over all distinct thresholds plus virtual endpoints.

    FRR(t) = fraction of bonafide with score <  t   (non-decreasing)
    FAR(t) = fraction of spoof    with score >= t   (non-increasing)
    """
    uniq = np.unique(np.concatenate([bona, spoof]))
    thresholds = np.concatenate([[uniq[0] - 1.0], uniq, [uniq[-1] + 1.0]])
    bs, ss = np.sort(bona), np.sort(spoof)
    frr = np.searchsorted(bs, thresholds, side="left") / bs.size
    far = (ss.size - np.searchsorted(ss, thresholds, side="left")) / ss.size
    return thresholds, frr, far


def compute_eer(records):
    """Equal error rate and its threshold.

    FRR - FAR is non-decreasing in the threshold, so there is exactly one
    crossing; when it falls between adjacent operating points both curves
    are interpolated linearly along the segment.  Depends only on score
    ranks, hence invariant under monotone transforms.
    """
    bona, spoof = _split_scores(records)
    thresholds, frr, far = _det_curve(bona, spoof)
    diffs = frr - far
    idx = int(np.argmax(diffs >= 0.0))
    if diffs[idx] == 0.0:
        return float(frr[idx]), float(thresholds[idx])
    f0, f1 = frr[idx - 1], frr[idx]
    a0, a1 = far[idx - 1], far[idx]
    s = (a0 - f0) / ((f1 - f0) - (a1 - a0))
    eer = f0 + s * (f1 - f0)
    threshold = thresholds[idx - 1] + s * (thresholds[idx] - thresholds[idx - 1])
    return float(eer), float(threshold)


# ---- tandem detection cost -------------------------------------------------------

@dataclass(frozen=True)
class TandemCosts:
    """Priors and unit costs of the tandem ASV+CM system (2019 LA values)."""

    p_target: float = 0.9405
    p_nontarget: float = 0.0095
    p_spoof: float = 0.05
    c_miss_asv: float = 1.0
    c_fa_asv: float = 10.0
    c_miss_cm: float = 1.0
    c_fa_cm: float = 10.0

    def validate(self) -> None:
        for name in ("p_target", "p_nontarget", "p_spoof",
                     "c_miss_asv", "c_fa_asv", "c_miss_cm", "c_fa_cm"):
            if getattr(self, name) < 0.0:
                raise ConfigError(f"{name} must be non-negative")
        total = self.p_target + self.p_nontarget + self.p_spoof
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(f"priors must sum to 1, got {total}")


@dataclass(frozen=True)
class AsvRates:
    """Fixed ASV operating point; these are inputs, never computed here."""

    p_fa: float = 0.05
    p_miss: float = 0.05
    p_miss_spoof: float = 0.05

    def validate(self) -> None:
        for name in ("p_fa", "p_miss", "p_miss_spoof"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must be a rate in [0, 1], got {value}")


def tdcf_coefficients(costs: TandemCosts, asv: AsvRates):
    """The two closed-form weights of the CM miss / false-alarm rates."""
    costs.validate()
    asv.validate()
    c1 = (costs.p_target * (costs.c_miss_cm - costs.c_miss_asv * asv.p_miss)
          - costs.p_nontarget * costs.c_fa_asv * asv.p_fa)
    c2 = costs.c_fa_cm * costs.p_spoof * (1.0 - asv.p_miss_spoof)
    if c1 <= 0.0 or c2 <= 0.0:
        raise ConfigError(
            f"cost model is degenerate: C1={c1}, C2={c2} must both be positive")
    return c1, c2


def compute_min_tdcf(records, costs: TandemCosts | None = None,
                     asv: AsvRates | None = None) -> float:
    """Minimum normalized tandem cost over all CM thresholds; in [0, 1]
    because the all-accept and all-reject endpoints bound it by 1."""
    costs = costs or TandemCosts()
    asv = asv or AsvRates()
    c1, c2 = tdcf_coefficients(costs, asv)
    bona, spoof = _split_scores(records)
    _, p_miss_cm, p_fa_cm = _det_curve(bona, spoof)
    curve = (c1 * p_miss_cm + c2 * p_fa_cm) / min(c1, c2)
    return float(curve.min())


# ---- angular-margin head ----------------------------------------------------------

@dataclass
class ASoftmaxHead:
    """Final classification layer with unit-norm class weight columns.

    weight maps (B, d) features to 2 logits; margin and the annealing
    schedule only affect the training loss, scoring uses the plain
    projection.
    """

    weight: Tensor                 # (d, 2)
    margin: int = 4
    lambda_start: float = 1000.0
    lambda_decay: float = 0.99
    lambda_floor: float = 5.0
    steps: int = field(default=0)

    @classmethod
    def create(cls, rng: Rng, dim: int, margin: int = 4,
               lambda_start: float = 1000.0, lambda_decay: float = 0.99,
               lambda_floor: float = 5.0) -> "ASoftmaxHead":
        if margin < 1:
            raise ConfigError(f"margin must be a positive integer, got {margin}")
        w = rng.normal((dim, 2))
        w /= np.sqrt((w * w).sum(axis=0, keepdims=True))
        return cls(weight=Tensor(w, requires_grad=True), margin=margin,
                   lambda_start=lambda_start, lambda_decay=lambda_decay,
                   lambda_floor=lambda_floor)

    def lambda_value(self) -> float:
        return max(self.lambda_floor, self.lambda_start * self.lambda_decay ** self.steps)

    def advance(self) -> None:
        self.steps += 1

    def renormalize(self) -> None:
        """Rescale class columns back to unit norm after an optimizer step.

        Columns already at unit norm (to the last bit) are left untouched,
        so a zero-size update leaves the parameter bitwise identical.
        """
        w = self.weight.data
        norms = np.sqrt((w * w).sum(axis=0))
        stale = np.abs(norms - 1.0) > 1e-14
        if np.any(stale):
            w[:, stale] /= norms[stale]

    def column_norms(self) -> np.ndarray:
        w = self.weight.data
        return np.sqrt((w * w).sum(axis=0))


def asoftmax_loss(head: ASoftmaxHead, embedding: Tensor, labels) -> Tensor:
    """Mean cross-entropy over angular-margin logits.

    labels are integers in {0, 1} indexing (bonafide, spoof).  The target
    logit is ||x|| * (lambda*cos(theta) + psi(theta)) / (1 + lambda); with
    margin 1 this reduces exactly to cosine-logit cross-entropy.
    """
    labels = np.asarray(labels)
    if embedding.ndim != 2 or embedding.shape[1] != head.weight.shape[0]:
        raise ContractError(
            f"embedding {embedding.shape} does not match head "
            f"dim {head.weight.shape[0]}")
    if labels.shape != (embedding.shape[0],) or not np.all(np.isin(labels, (0, 1))):
        raise ContractError("labels must be a (B,) array over {0, 1}")

    norms = ad.sqrt(ad.tsum(ad.mul(embedding, embedding), axis=1, keepdims=True))
    if np.any(norms.data < _NORM_FLOOR):
        raise NumericError("zero-norm embedding cannot be angle-classified")
    w_norms = ad.sqrt(ad.tsum(ad.mul(head.weight, head.weight), axis=0,
                              keepdims=True))
    cosine = ad.clip(ad.div(ad.div(ad.matmul(embedding, head.weight), norms),
                            w_norms),
                     -1.0 + _COS_CLIP, 1.0 - _COS_CLIP)

    theta = ad.arccos(cosine)
    m = float(head.margin)
    # integer sector of m*theta; constant w.r.t. the graph, psi is
    # continuous across sector boundaries
    k = np.floor(head.margin * theta.data / np.pi)
    sign = np.where(k % 2 == 0, 1.0, -1.0)
    psi = ad.sub(ad.mul(ad.cos(ad.mul(theta, Tensor(m))), Tensor(sign)),
                 Tensor(2.0 * k))
    lam = head.lambda_value()
    blended = ad.mul(ad.add(ad.mul(cosine, Tensor(lam)), psi),
                     Tensor(1.0 / (1.0 + lam)))

    one_hot = np.eye(2)[labels].astype(bool)
    logits = ad.mul(norms, ad.where(one_hot, blended, cosine))

    shift = Tensor(logits.data.max(axis=1, keepdims=True))
    lse = ad.add(ad.log(ad.tsum(ad.exp(ad.sub(logits, shift)), axis=1,
                                keepdims=True)), shift)
    target = ad.tsum(ad.mul(logits, Tensor(one_hot.astype(np.float64))),
                     axis=1, keepdims=True)
    return ad.tmean(ad.sub(lse, target))
