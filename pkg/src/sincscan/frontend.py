"""Raw-waveform frontend.

A trainable bank of sinc band-pass filters reads the waveform directly,
the log-magnitude filter maps pass through squeeze-and-excitation
residual blocks, and the final maps are flattened frequency-major into
the token sequence consumed by the sequence model.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DimensionError, InputError
from .rng import Rng

MIN_LOW_HZ = 30.0
MIN_BAND_HZ = 50.0
BAND_CEILING = 0.99  # effective high edge stays below this fraction of Nyquist
LOG_EPS = 1e-6
NORM_EPS = 1e-6
SE_REDUCTION = 8


def mel_from_hz(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def hz_from_mel(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


@dataclass
class SincFilterbank:
    """Band-pass FIR bank whose band edges are learnable.

    The stored parameters are unconstrained reals; effective edges come
    from a clamping reparameterization that keeps 0 < f_lo < f_hi below
    Nyquist with at least MIN_BAND_HZ of width for any parameter values,
    so no optimizer step can invert or collapse a band.
    """

    low_hz: Tensor        # (F,) raw offsets of the low edge above MIN_LOW_HZ
    band_hz: Tensor       # (F,) raw widths above MIN_BAND_HZ
    kernel_size: int
    sample_rate: float
    window: np.ndarray    # (K,) Hamming taper, fixed

    @staticmethod
    def create(n_filters: int, kernel_size: int = 129,
               sample_rate: float = 16000.0,
               trainable: bool = True) -> "SincFilterbank":
        if n_filters < 1:
            raise ConfigError(f"need at least one filter, got {n_filters}")
        if kernel_size < 3 or kernel_size % 2 == 0:
            raise ConfigError(
                f"kernel size must be odd and >= 3, got {kernel_size}")
        nyquist = sample_rate / 2.0
        if nyquist <= MIN_LOW_HZ + MIN_BAND_HZ:
            raise ConfigError(f"sample rate {sample_rate} leaves no room "
                              "for a valid pass band")
        # mel-spaced edges from the lowest admissible frequency to Nyquist
        edges = hz_from_mel(np.linspace(mel_from_hz(MIN_LOW_HZ),
                                        mel_from_hz(nyquist), n_filters + 1))
        low = edges[:-1] - MIN_LOW_HZ
        band = np.maximum(edges[1:] - edges[:-1] - MIN_BAND_HZ, 0.0)
        return SincFilterbank(
            low_hz=Tensor(low, requires_grad=trainable),
            band_hz=Tensor(band, requires_grad=trainable),
            kernel_size=kernel_size,
            sample_rate=float(sample_rate),
            window=np.hamming(kernel_size),
        )

    @property
    def n_filters(self) -> int:
        return self.low_hz.shape[0]

    @property
    def nyquist(self) -> float:
        return self.sample_rate / 2.0

    def named_tensors(self, prefix: str = "bank"):
        return {f"{prefix}.low_hz": self.low_hz,
                f"{prefix}.band_hz": self.band_hz}

    def band_edges(self) -> tuple[Tensor, Tensor]:
        """Effective (f_lo, f_hi) in Hz after clamping, each shaped (F,)."""
        e_lo = ad.add(Tensor(MIN_LOW_HZ), ad.absolute(self.low_hz))
        e_hi = ad.add(e_lo, ad.add(Tensor(MIN_BAND_HZ),
                                   ad.absolute(self.band_hz)))
        f_hi = ad.minimum(e_hi, Tensor(BAND_CEILING * self.nyquist))
        f_lo = ad.minimum(e_lo, ad.sub(f_hi, Tensor(MIN_BAND_HZ)))
        return f_lo, f_hi

    def impulse_responses(self) -> Tensor:
        """Materialize the (F, K) kernels from the current band edges.

        Each row is the difference of two windowed sinc low-passes; the
        row mean is removed afterwards so the DC gain is exactly zero.
        """
        half = (self.kernel_size - 1) // 2
        n = np.arange(1, half + 1, dtype=np.float64)
        f_lo, f_hi = self.band_edges()
        lo = ad.reshape(ad.mul(f_lo, Tensor(1.0 / self.sample_rate)), (-1, 1))
        hi = ad.reshape(ad.mul(f_hi, Tensor(1.0 / self.sample_rate)), (-1, 1))
        arg = Tensor(2.0 * np.pi * n)
        right = ad.div(ad.sub(ad.sin(ad.mul(hi, arg)),
                              ad.sin(ad.mul(lo, arg))),
                       Tensor(np.pi * n))
        center = ad.mul(ad.sub(hi, lo), Tensor(2.0))
        kernels = ad.concat([ad.flip(right, axis=1), center, right], axis=1)
        kernels = ad.mul(kernels, Tensor(self.window))
        return ad.sub(kernels, ad.tmean(kernels, axis=1, keepdims=True))

    def assert_bands_valid(self) -> None:
        """Raise if any effective band escapes (0, Nyquist); cheap enough
        to call after every optimizer step."""
        f_lo, f_hi = self.band_edges()
        lo, hi = f_lo.data, f_hi.data
        if not (np.all(lo > 0.0) and np.all(lo < hi)
                and np.all(hi < self.nyquist)):
            raise ConfigError("filterbank band edges left (0, Nyquist): "
                              f"lo={lo}, hi={hi}")


def sinc_forward(bank: SincFilterbank, wave: Tensor, pool: int = 3) -> Tensor:
    """Filter a (B, S) waveform into (B, F, T) maps, T = S // pool."""
    if not isinstance(wave, Tensor):
        wave = Tensor(np.asarray(wave, dtype=np.float64))
    if wave.data.ndim != 2:
        raise DimensionError(f"expected (batch, samples), got {wave.shape}")
    if wave.shape[1] < bank.kernel_size:
        raise InputError(f"waveform of {wave.shape[1]} samples is shorter "
                         f"than the {bank.kernel_size}-tap filters")
    if pool < 1:
        raise ConfigError(f"pool stride must be >= 1, got {pool}")
    filtered = ad.conv1d_bank(wave, bank.impulse_responses())
    return ad.maxpool1d(filtered, pool) if pool > 1 else filtered


@dataclass
class SeGate:
    """Squeeze-and-excitation channel gate: pool, bottleneck, sigmoid."""

    w1: Tensor  # (C, hidden)
    b1: Tensor
    w2: Tensor  # (hidden, C)
    b2: Tensor

    @staticmethod
    def create(rng: Rng, channels: int,
               reduction: int = SE_REDUCTION) -> "SeGate":
        hidden = max(1, channels // reduction)
        return SeGate(
            w1=Tensor(rng.normal((channels, hidden), std=channels ** -0.5),
                      requires_grad=True),
            b1=Tensor(np.zeros(hidden), requires_grad=True),
            w2=Tensor(rng.normal((hidden, channels), std=hidden ** -0.5),
                      requires_grad=True),
            b2=Tensor(np.zeros(channels), requires_grad=True),
        )

    def named_tensors(self, prefix: str):
        return {f"{prefix}.w1": self.w1, f"{prefix}.b1": self.b1,
                f"{prefix}.w2": self.w2, f"{prefix}.b2": self.b2}


def se_gate(gate: SeGate, x: Tensor) -> Tensor:
    """Scale each channel of (B, C, f, t) by a gate in (0, 1)."""
    if x.data.ndim != 4:
        raise DimensionError(f"expected (B, C, f, t), got {x.shape}")
    pooled = ad.tmean(x, axis=(2, 3))
    hidden = ad.silu(ad.add(ad.matmul(pooled, gate.w1), gate.b1))
    weight = ad.sigmoid(ad.add(ad.matmul(hidden, gate.w2), gate.b2))
    b, c = weight.shape
    return ad.mul(x, ad.reshape(weight, (b, c, 1, 1)))


@dataclass
class SeResBlock:
    """Pre-activation residual block with an SE gate and 2-D max-pooling."""

    conv1_w: Tensor   # (C_out, C_in, 3, 3)
    conv1_b: Tensor
    conv2_w: Tensor   # (C_out, C_out, 3, 3)
    conv2_b: Tensor
    gate: SeGate
    shortcut_w: Tensor | None  # (C_out, C_in, 1, 1) when widths differ
    pool: tuple[int, int]

    @staticmethod
    def create(rng: Rng, in_channels: int, out_channels: int,
               pool: tuple[int, int], kernel: int = 3) -> "SeResBlock":
        pf, pt = pool
        if pf < 1 or pt < 1:
            raise ConfigError(f"pool extents must be >= 1, got {pool}")

        def conv_init(c_out, c_in, k):
            scale = (c_in * k * k) ** -0.5
            return Tensor(rng.normal((c_out, c_in, k, k), std=scale),
                          requires_grad=True)

        shortcut = None
        if in_channels != out_channels:
            shortcut = conv_init(out_channels, in_channels, 1)
        return SeResBlock(
            conv1_w=conv_init(out_channels, in_channels, kernel),
            conv1_b=Tensor(np.zeros(out_channels), requires_grad=True),
            conv2_w=conv_init(out_channels, out_channels, kernel),
            conv2_b=Tensor(np.zeros(out_channels), requires_grad=True),
            gate=SeGate.create(rng, out_channels),
            shortcut_w=shortcut,
            pool=(pf, pt),
        )

    def named_tensors(self, prefix: str):
        out = {f"{prefix}.conv1_w": self.conv1_w,
               f"{prefix}.conv1_b": self.conv1_b,
               f"{prefix}.conv2_w": self.conv2_w,
               f"{prefix}.conv2_b": self.conv2_b}
        if self.shortcut_w is not None:
            out[f"{prefix}.shortcut_w"] = self.shortcut_w
        out.update(self.gate.named_tensors(f"{prefix}.gate"))
        return out


def block_forward(block: SeResBlock, x: Tensor) -> Tensor:
    h = ad.conv2d(ad.silu(x), block.conv1_w, block.conv1_b)
    h = ad.conv2d(ad.silu(h), block.conv2_w, block.conv2_b)
    h = se_gate(block.gate, h)
    shortcut = x if block.shortcut_w is None else ad.conv2d(x, block.shortcut_w)
    return ad.maxpool2d(ad.add(h, shortcut), block.pool)


@dataclass
class FeatureMaps:
    """Intermediate views of one forward pass through the frontend."""

    lfm: Tensor       # (B, F, T) filterbank maps
    hfm: Tensor       # (B, C, f, t) residual-stack maps
    sequence: Tensor  # (B, f*t, C) frequency-major tokens


def flatten_maps(hfm: Tensor) -> Tensor:
    """(B, C, f, t) -> (B, f*t, C) with sequence[b, i*t + j, c] = hfm[b, c, i, j]."""
    if hfm.data.ndim != 4:
        raise DimensionError(f"expected (B, C, f, t), got {hfm.shape}")
    b, c, f, t = hfm.shape
    return ad.reshape(ad.transpose(hfm, (0, 2, 3, 1)), (b, f * t, c))


def unflatten_sequence(sequence: Tensor, f: int, t: int) -> Tensor:
    """Inverse of flatten_maps; (B, f*t, C) -> (B, C, f, t)."""
    if sequence.data.ndim != 3:
        raise DimensionError(f"expected (B, L, C), got {sequence.shape}")
    b, length, c = sequence.shape
    if length != f * t:
        raise DimensionError(f"sequence length {length} is not {f}*{t}")
    return ad.transpose(ad.reshape(sequence, (b, f, t, c)), (0, 3, 1, 2))


@dataclass
class Frontend:
    bank: SincFilterbank
    blocks: list
    sinc_pool: int

    @staticmethod
    def create(rng: Rng, n_filters: int = 70, kernel_size: int = 129,
               sample_rate: float = 16000.0, sinc_pool: int = 3,
               channels: tuple = (32, 32, 64, 64),
               pools: tuple = ((2, 4), (2, 4), (2, 4), (2, 2)),
               trainable_bank: bool = True) -> "Frontend":
        if not channels or len(channels) != len(pools):
            raise ConfigError("channels and pools must be non-empty and "
                              f"aligned, got {channels} vs {pools}")
        bank = SincFilterbank.create(n_filters, kernel_size, sample_rate,
                                     trainable=trainable_bank)
        blocks, prev = [], 1
        for c_out, pool in zip(channels, pools):
            blocks.append(SeResBlock.create(rng, prev, c_out, pool))
            prev = c_out
        return Frontend(bank=bank, blocks=blocks, sinc_pool=sinc_pool)

    @property
    def out_channels(self) -> int:
        return self.blocks[-1].conv2_w.shape[0]

    def named_tensors(self, prefix: str = "frontend"):
        out = dict(self.bank.named_tensors(f"{prefix}.bank"))
        for i, block in enumerate(self.blocks):
            out.update(block.named_tensors(f"{prefix}.block{i}"))
        return out

    def map_shape(self, n_samples: int) -> tuple[int, int, int]:
        """Arithmetic (C, f, t) for an S-sample input, no forward pass."""
        f, t = self.bank.n_filters, n_samples // self.sinc_pool
        for block in self.blocks:
            pf, pt = block.pool
            f, t = f // pf, t // pt
        if f < 1 or t < 1:
            raise ConfigError(f"pooling collapses {n_samples} samples to "
                              f"an empty ({f}, {t}) map")
        return self.out_channels, f, t


def forward_maps(front: Frontend, wave: Tensor) -> FeatureMaps:
    """Full frontend pass keeping every intermediate view."""
    lfm = sinc_forward(front.bank, wave, front.sinc_pool)
    x = ad.log(ad.add(ad.absolute(lfm), Tensor(LOG_EPS)))
    mean = ad.tmean(x, axis=(1, 2), keepdims=True)
    centered = ad.sub(x, mean)
    var = ad.tmean(ad.mul(centered, centered), axis=(1, 2), keepdims=True)
    x = ad.div(centered, ad.sqrt(ad.add(var, Tensor(NORM_EPS))))
    b, n_f, n_t = lfm.shape
    maps = ad.reshape(x, (b, 1, n_f, n_t))
    for block in front.blocks:
        maps = block_forward(block, maps)
    return FeatureMaps(lfm=lfm, hfm=maps, sequence=flatten_maps(maps))


def frontend_forward(front: Frontend, wave: Tensor) -> Tensor:
    return forward_maps(front, wave).sequence
