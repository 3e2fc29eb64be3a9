"""Selective state-space core.

A diagonal continuous-time system per (channel, state) pair is discretized
with a zero-order hold at an input-dependent step size and run as a
sequential recurrence:

    h[l] = a_bar[l] * h[l-1] + b_bar_x[l]
    y[l, e] = sum_n c_sel[l, n] * h[l, e, n]

with a_bar = exp(delta * A) and the input coefficient computed through
expm1 so the delta -> 0 limit is exact.  For constant selection the system
is linear time-invariant and equals a causal convolution with the kernel
(C b_bar, C a_bar b_bar, C a_bar^2 b_bar, ...); lti_kernel() provides that
second, independent route for equivalence checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, custom_op
from .errors import ConfigError, ContractError, DimensionError, NumericError
from .rng import Rng

# below this magnitude of delta*A the second-order series for
# expm1(z)/z is exact to double precision
PHI_SERIES_CUTOFF = 1e-8


def phi1(z: np.ndarray) -> np.ndarray:
    """expm1(z) / z with the removable singularity at 0 filled by series."""
    small = np.abs(z) < PHI_SERIES_CUTOFF
    safe = np.where(small, 1.0, z)
    return np.where(small, 1.0 + 0.5 * z, np.expm1(safe) / safe)


def phi1_derivative(z: np.ndarray) -> np.ndarray:
    small = np.abs(z) < PHI_SERIES_CUTOFF
    safe = np.where(small, 1.0, z)
    exact = (np.exp(safe) * (safe - 1.0) + 1.0) / (safe * safe)
    return np.where(small, 0.5 + z / 3.0, exact)


@dataclass
class SsmParams:
    """Per-layer selective-scan parameters.

    a_log parameterizes the diagonal state matrix as A = -exp(a_log), which
    keeps every mode strictly stable regardless of optimizer updates.
    """

    a_log: Tensor      # (E, N)
    w_delta: Tensor    # (E, E) input-dependent step-size projection
    b_delta: Tensor    # (E,)  step-size bias, through softplus
    w_b: Tensor        # (E, N) input projection selector
    w_c: Tensor        # (E, N) readout selector
    inner_dim: int
    state_dim: int

    @classmethod
    def create(cls, rng: Rng, inner_dim: int, state_dim: int) -> "SsmParams":
        E, N = inner_dim, state_dim
        # ladder initialization: mode n decays at rate n+1
        a_log = np.tile(np.log(np.arange(1, N + 1, dtype=np.float64)), (E, 1))
        scale = 1.0 / np.sqrt(E)
        # bias chosen so softplus(bias) lands log-uniformly in [1e-3, 1e-1]
        dt = np.exp(rng.uniform(np.log(1e-3), np.log(1e-1), size=(E,)))
        b_delta = dt + np.log(-np.expm1(-dt))
        return cls(
            a_log=Tensor(a_log, requires_grad=True),
            w_delta=Tensor(rng.normal((E, E), std=scale), requires_grad=True),
            b_delta=Tensor(b_delta, requires_grad=True),
            w_b=Tensor(rng.normal((E, N), std=scale), requires_grad=True),
            w_c=Tensor(rng.normal((E, N), std=scale), requires_grad=True),
            inner_dim=E,
            state_dim=N,
        )

    def state_matrix(self) -> Tensor:
        """A = -exp(a_log), elementwise; strictly negative."""
        return ad.neg(ad.exp(self.a_log))

    def named_tensors(self, prefix: str = "ssm"):
        return {
            f"{prefix}.a_log": self.a_log,
            f"{prefix}.w_delta": self.w_delta,
            f"{prefix}.b_delta": self.b_delta,
            f"{prefix}.w_b": self.w_b,
            f"{prefix}.w_c": self.w_c,
        }


@dataclass
class DiscretizedPair:
    """ZOH-discretized system: decay factors and input contributions."""

    a_bar: Tensor     # (B, L, E, N), in (0, 1) for stable A and positive delta
    b_bar_x: Tensor   # (B, L, E, N)


def select_projections(params: SsmParams, x: Tensor):
    """Input-dependent selection from (B, L, E) activations.

    Returns (b_sel (B, L, N), c_sel (B, L, N), delta (B, L, E)); delta is
    strictly positive by softplus.
    """
    if x.ndim != 3 or x.shape[2] != params.inner_dim:
        raise DimensionError(
            f"expected (B, L, {params.inner_dim}) activations, got {x.shape}")
    b_sel = ad.matmul(x, params.w_b)
    c_sel = ad.matmul(x, params.w_c)
    delta = ad.softplus(ad.add(ad.matmul(x, params.w_delta), params.b_delta))
    return b_sel, c_sel, delta


def discretize_zoh(a: Tensor, delta: Tensor, b_sel: Tensor, x: Tensor) -> DiscretizedPair:
    """Zero-order-hold discretization at per-position step sizes.

    a is the diagonal state matrix (E, N); delta (B, L, E) must be strictly
    positive; b_sel (B, L, N); x (B, L, E).  The input term is
    expm1(delta*A)/A * B * x, which tends to delta*B*x as delta*A -> 0.
    """
    if a.ndim != 2:
        raise DimensionError(f"state matrix must be (E, N), got {a.shape}")
    E, N = a.shape
    if delta.ndim != 3 or delta.shape[2] != E:
        raise DimensionError(f"delta must be (B, L, {E}), got {delta.shape}")
    if b_sel.ndim != 3 or b_sel.shape[2] != N:
        raise DimensionError(f"b_sel must be (B, L, {N}), got {b_sel.shape}")
    if x.shape != delta.shape:
        raise DimensionError(
            f"input {x.shape} and delta {delta.shape} shapes differ")
    if not np.all(np.isfinite(delta.data)):
        raise NumericError("delta contains non-finite values")
    if np.any(delta.data <= 0.0):
        raise ContractError("delta must be strictly positive")

    B, L, _ = delta.shape
    delta4 = ad.reshape(delta, (B, L, E, 1))
    da = ad.mul(delta4, a)                       # (B, L, E, N)

    # expm1(z)/z as a single node; the forward resolves phi1 through the
    # module so fault-injection tests can corrupt it in one place
    dad = da.data
    phi = custom_op(phi1(dad), (da,), lambda g: (g * phi1_derivative(dad),))

    a_bar = ad.exp(da)
    b4 = ad.reshape(b_sel, (B, L, 1, N))
    x4 = ad.reshape(x, (B, L, E, 1))
    b_bar_x = ad.mul(ad.mul(ad.mul(delta4, phi), b4), x4)
    return DiscretizedPair(a_bar=a_bar, b_bar_x=b_bar_x)


def selective_scan(pair: DiscretizedPair, c_sel: Tensor) -> Tensor:
    """Run the recurrence over the length axis; returns (B, L, E).

    Sequential by construction: each step depends on the previous hidden
    state, so the loop is the semantics, not an implementation detail.
    """
    a_bar, b_bar_x = pair.a_bar, pair.b_bar_x
    if a_bar.shape != b_bar_x.shape:
        raise DimensionError(
            f"a_bar {a_bar.shape} and b_bar_x {b_bar_x.shape} shapes differ")
    B, L, E, N = a_bar.shape
    if c_sel.shape != (B, L, N):
        raise DimensionError(
            f"c_sel must be ({B}, {L}, {N}), got {c_sel.shape}")

    av, bv, cv = a_bar.data, b_bar_x.data, c_sel.data
    states = np.empty((B, L, E, N), dtype=np.float64)
    h = np.zeros((B, E, N), dtype=np.float64)
    out = np.empty((B, L, E), dtype=np.float64)
    for l in range(L):
        h = av[:, l] * h + bv[:, l]
        states[:, l] = h
        out[:, l] = np.einsum("ben,bn->be", h, cv[:, l])
    if not np.all(np.isfinite(out)):
        raise NumericError("selective scan produced non-finite outputs")

    def vjp(g):
        gc = np.einsum("ble,blen->bln", g, states)
        ga = np.empty_like(av)
        gb = np.empty_like(bv)
        dh = np.zeros((B, E, N), dtype=np.float64)
        for l in range(L - 1, -1, -1):
            dh = dh + g[:, l, :, None] * cv[:, l, None, :]
            gb[:, l] = dh
            if l > 0:
                ga[:, l] = dh * states[:, l - 1]
            else:
                ga[:, 0] = 0.0  # h[-1] is zero
            dh = dh * av[:, l]
        return ga, gb, gc

    return custom_op(out, (a_bar, b_bar_x, c_sel), vjp)


def lti_kernel(a: np.ndarray, delta: float, b: np.ndarray, c: np.ndarray,
               length: int) -> np.ndarray:
    """Impulse-response kernel of the constant-selection (LTI) system.

    a (E, N) diagonal state matrix, scalar delta, b (N,), c (N,); returns
    (E, length) with K[e, m] = sum_n c[n] * a_bar[e, n]^m * b_bar[e, n].
    Plain numpy on purpose: this is the independent route used to check the
    recurrent scan, so it must not share its machinery.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"state matrix must be (E, N), got {a.shape}")
    if length < 1:
        raise ConfigError(f"kernel length must be positive, got {length}")
    if delta <= 0.0:
        raise ContractError("delta must be strictly positive")
    da = delta * a
    a_bar = np.exp(da)
    b_bar = delta * phi1(da) * np.asarray(b, dtype=np.float64)
    term = b_bar * np.asarray(c, dtype=np.float64)   # (E, N)
    E = a.shape[0]
    kernel = np.empty((E, length), dtype=np.float64)
    for m in range(length):
        kernel[:, m] = term.sum(axis=1)
        term = term * a_bar
    return kernel


def causal_convolve(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """y[l, e] = sum_{m <= l} kernel[e, m] * x[l - m, e]; numpy only."""
    L, E = x.shape
    out = np.zeros((L, E), dtype=np.float64)
    for e in range(E):
        out[:, e] = np.convolve(x[:, e], kernel[e], mode="full")[:L]
    return out
