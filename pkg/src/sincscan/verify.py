"""Runtime self-checks behind the ``verify`` CLI command.

Every check re-derives its expected value through an independent route
(closed forms, exhaustive sweeps, finite differences, fault injection) and
reports an observed value next to the bound it was held to, so an install
can prove its numerics without the development test suite.  The quick
level covers the analytic and gradient checks; the full level adds
training, determinism and checkpoint round trips.
"""

import json
import math
import os
import tempfile
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from . import ssm
from .audio import plan_corpus, synthesize_utterance
from .autodiff import Tensor
from .bimamba import BiMambaModel, model_forward, reverse_sequence
from .config import tiny_config
from .frontend import Frontend, SincFilterbank, frontend_forward
from .mamba import MambaLayer, MambaStack, layer_forward, stack_forward
from .metrics import (AsvRates, ScoreRecord, TandemCosts, compute_eer,
                      compute_min_tdcf, tdcf_coefficients)
from .model import load_checkpoint, save_checkpoint
from .rng import Rng
from .training import score_arrays, train_on_arrays

LEVELS = ("quick", "full")


@dataclass
class CheckResult:
    name: str
    passed: bool
    observed: str
    tolerance: str
    seconds: float


# ---- small shared builders ---------------------------------------------------

def _constant_pair(a, delta, b, c, x):
    """Constant-selection system as a (pair, c_sel) tensor pair, batch 1."""
    E, N = a.shape
    L = x.shape[0]
    delta_t = Tensor(np.full((1, L, E), delta))
    b_t = Tensor(np.tile(b, (1, L, 1)))
    c_t = Tensor(np.tile(c, (1, L, 1)))
    pair = ssm.discretize_zoh(Tensor(a), delta_t, b_t, Tensor(x[None]))
    return pair, c_t


def _scalar_input_coefficient(delta):
    """b_bar_x of the unit scalar system A=-1, B=1, x=1 at step delta."""
    pair, _ = _constant_pair(np.array([[-1.0]]), delta,
                             np.ones(1), np.ones(1), np.ones((1, 1)))
    return pair.b_bar_x.item()


def _records(bona, spoof):
    recs = [ScoreRecord(f"b{i}", "bonafide", s) for i, s in enumerate(bona)]
    recs += [ScoreRecord(f"s{i}", "spoof", s) for i, s in enumerate(spoof)]
    return recs


def _tiny_frontend(rng):
    return Frontend.create(rng, n_filters=4, kernel_size=129,
                           sinc_pool=3, channels=(4,), pools=((2, 4),))


def _toy_training_setup(epochs):
    config = tiny_config()
    config.seed = 424242
    config.n_samples = 16000
    config.epochs = epochs
    specs = plan_corpus(515151, 8)
    waves = np.stack([synthesize_utterance(s, 515151, n_samples=16000)
                      for s in specs])
    labels = np.array([0 if s.label == "bonafide" else 1 for s in specs])
    return config, waves, labels


# ---- analytic checks ---------------------------------------------------------

def check_zoh_closed_form():
    pair, _ = _constant_pair(np.array([[-1.0]]), math.log(2.0),
                             np.ones(1), np.ones(1), np.ones((1, 1)))
    err = max(abs(pair.a_bar.item() - 0.5), abs(pair.b_bar_x.item() - 0.5))
    return f"max deviation {err:.3e}", "< 1e-12", err < 1e-12


def check_zoh_series_limit():
    delta = 1e-12
    series = delta * (1.0 + delta * (-1.0) / 2.0)
    err = abs(_scalar_input_coefficient(delta) - series) / series
    return f"relative deviation {err:.3e}", "< 1e-15", err < 1e-15


def check_phi1_guard_is_load_bearing():
    """Swap in the cancellation-prone (exp(z)-1)/z and confirm the
    discretization visibly degrades; proves the series guard is wired in."""
    clean = _scalar_input_coefficient(1e-12)
    original = ssm.phi1
    try:
        ssm.phi1 = lambda z: (np.exp(z) - 1.0) / z
        corrupted = _scalar_input_coefficient(1e-12)
    finally:
        ssm.phi1 = original
    drift = abs(corrupted - clean) / abs(clean)
    return f"injected drift {drift:.3e}", "> 1e-9", drift > 1e-9


def check_scan_matches_lti_kernel():
    rng = Rng(828282)
    worst = 0.0
    for _ in range(100):
        E = 1 + rng.integer(4)
        N = 1 + rng.integer(8)
        L = 2 + rng.integer(31)
        a = -np.exp(rng.normal((E, N), std=0.7))
        delta = rng.uniform(0.01, 1.5)
        b = rng.normal((N,))
        c = rng.normal((N,))
        x = rng.normal((L, E))
        pair, c_t = _constant_pair(a, delta, b, c, x)
        y_scan = ssm.selective_scan(pair, c_t).data[0]
        y_conv = ssm.causal_convolve(x, ssm.lti_kernel(a, delta, b, c, L))
        worst = max(worst, float(np.max(np.abs(y_scan - y_conv))))
    return f"max deviation {worst:.3e} over 100 systems", "< 1e-10", worst < 1e-10


# ---- gradients ----------------------------------------------------------------

def check_gradients_selective_scan():
    rng = Rng(131313)
    params = ssm.SsmParams.create(rng, inner_dim=3, state_dim=2)
    x = Tensor(rng.normal((1, 8, 3)), requires_grad=True)
    weights = Tensor(rng.normal((3,)))

    def f():
        b_sel, c_sel, delta = ssm.select_projections(params, x)
        pair = ssm.discretize_zoh(params.state_matrix(), delta, b_sel, x)
        return ad.tsum(ad.mul(ssm.selective_scan(pair, c_sel), weights))

    errs = ad.finite_difference_check(f, dict(params.named_tensors(), x=x))
    worst = max(errs.values())
    return f"max relative error {worst:.3e}", "< 1e-4", worst < 1e-4


def check_gradients_mamba_stack():
    stack = MambaStack.create(Rng(141414), n_layers=2, channels=4,
                              inner_dim=8, state_dim=4)
    x = Tensor(Rng(151515).normal((1, 6, 4)), requires_grad=True)
    weights = Tensor(Rng(161616).normal((4,)))

    def f():
        return ad.tsum(ad.mul(stack_forward(stack, x), weights))

    errs = ad.finite_difference_check(f, dict(stack.named_tensors("stack"), x=x))
    worst = max(errs.values())
    return f"max relative error {worst:.3e}", "< 1e-4", worst < 1e-4


def check_gradients_bidirectional_model():
    worst = 0.0
    for mode in ("sum", "concat", "attention"):
        model = BiMambaModel.create(Rng(171717), n_layers=1, channels=4,
                                    inner_dim=8, state_dim=4, fusion_mode=mode)
        x = Tensor(Rng(181818).normal((1, 12, 4)), requires_grad=True)
        readout = Tensor(Rng(191919).normal((2,)))

        def f():
            out = model_forward(model, x)
            return ad.tsum(ad.mul(ad.silu(out.logits), readout))

        errs = ad.finite_difference_check(f, dict(model.named_tensors(), x=x))
        worst = max(worst, max(errs.values()))
    return f"max relative error {worst:.3e} over 3 modes", "< 1e-4", worst < 1e-4


def check_gradients_frontend():
    front = _tiny_frontend(Rng(212121))
    # generic band positions; mel-spaced defaults start exactly on the
    # |low_hz| kink where one-sided slopes differ from central differences
    front.bank.low_hz.data[...] = Rng(222222).uniform(10.0, 800.0, size=4)
    front.bank.band_hz.data[...] = Rng(232323).uniform(10.0, 600.0, size=4)
    wave = Tensor(Rng(242424).normal((1, 512)), requires_grad=True)
    readout = Tensor(Rng(252525).normal((4,)))

    def f():
        return ad.tsum(ad.mul(frontend_forward(front, wave), readout))

    errs = ad.finite_difference_check(f, dict(front.named_tensors(), wave=wave))
    worst = max(errs.values())
    return f"max relative error {worst:.3e}", "< 1e-3", worst < 1e-3


# ---- structural properties ----------------------------------------------------

def check_bidirectional_symmetry():
    model = BiMambaModel.create(Rng(262626), n_layers=1, channels=4,
                                inner_dim=8, state_dim=4)
    for src, dst in zip(model.forward_stack.named_tensors("f").values(),
                        model.backward_stack.named_tensors("b").values()):
        dst.data[...] = src.data
    rng = Rng(272727)
    mismatches = 0
    for _ in range(20):
        x = Tensor(rng.normal((1, 9, 4)))
        f_bwd = stack_forward(model.backward_stack, reverse_sequence(x))
        mirror = stack_forward(model.forward_stack, reverse_sequence(x))
        if not np.array_equal(f_bwd.data, mirror.data):
            mismatches += 1
    return f"{mismatches} mismatches over 20 inputs", "bitwise equal", mismatches == 0


def check_causality():
    layer = MambaLayer.create(Rng(282828), channels=3, inner_dim=6, state_dim=4)
    rng = Rng(292929)
    x = rng.normal((1, 16, 3))
    base = layer_forward(layer, Tensor(x)).data
    leaked = 0
    for pos in range(16):
        bumped = x.copy()
        bumped[0, pos] += 1.0
        out = layer_forward(layer, Tensor(bumped)).data
        if not np.array_equal(out[:, :pos], base[:, :pos]):
            leaked += 1
    return f"{leaked} positions leaked backwards", "exactly 0", leaked == 0


def check_filterbank_response():
    rng = Rng(303030)
    bank = SincFilterbank.create(n_filters=10, kernel_size=129)
    low = rng.uniform(1000.0, 2200.0, size=10)
    width = rng.uniform(600.0, 1500.0, size=10)
    bank.low_hz.data[...] = low - 30.0
    bank.band_hz.data[...] = np.maximum(width - 50.0, 0.0)
    kernels = bank.impulse_responses().data
    lo, hi = (edge.data for edge in bank.band_edges())
    n = np.arange(129)
    worst_rejection = np.inf
    worst_dc = 0.0
    for i in range(10):
        def gain(f_hz):
            basis = np.exp(-2j * np.pi * f_hz * n / bank.sample_rate)
            return abs(np.sum(kernels[i] * basis))
        center = gain((lo[i] + hi[i]) / 2.0)
        stop = max(gain(lo[i] / 2.0), gain(2.0 * hi[i]))
        worst_rejection = min(worst_rejection,
                              20.0 * np.log10(center / max(stop, 1e-300)))
        worst_dc = max(worst_dc, gain(0.0))
    observed = f"rejection {worst_rejection:.1f} dB, DC gain {worst_dc:.2e}"
    return observed, ">= 20 dB and DC < 1e-6", (worst_rejection >= 20.0
                                                and worst_dc < 1e-6)


# ---- metric oracles -----------------------------------------------------------

def _eer_sweep_oracle(bona, spoof):
    uniq = sorted(set(bona) | set(spoof))
    cands = [uniq[0] - 1.0] + uniq + [uniq[-1] + 1.0]
    pts = [(t,
            sum(1 for s in bona if s < t) / len(bona),
            sum(1 for s in spoof if s >= t) / len(spoof)) for t in cands]
    for i, (t, frr, far) in enumerate(pts):
        if frr - far == 0.0:
            return frr
        if frr - far > 0.0:
            t0, f0, a0 = pts[i - 1]
            s = (a0 - f0) / ((frr - f0) - (far - a0))
            return f0 + s * (frr - f0)
    raise AssertionError("no crossing found")


def check_eer_against_exhaustive_sweep():
    rng = Rng(313131)
    exact = 0
    for _ in range(50):
        nb = 1 + rng.integer(20)
        ns = 1 + rng.integer(20)
        bona = list(np.round(rng.normal((nb,)) * 2.0 + 0.5, 1))
        spoof = list(np.round(rng.normal((ns,)) * 2.0 - 0.5, 1))
        eer, _ = compute_eer(_records(bona, spoof))
        if eer == _eer_sweep_oracle(bona, spoof):
            exact += 1
    return f"{exact}/50 score sets agree exactly", "50/50", exact == 50


def check_min_tdcf_against_brute_force():
    rng = Rng(323232)
    c1, c2 = tdcf_coefficients(TandemCosts(), AsvRates())
    worst = 0.0
    for _ in range(20):
        bona = list(rng.normal((10,)) + 0.8)
        spoof = list(rng.normal((14,)) - 0.3)
        uniq = sorted(set(bona) | set(spoof))
        cands = [uniq[0] - 1.0] + uniq + [uniq[-1] + 1.0]
        best = min((c1 * sum(1 for s in bona if s < t) / len(bona)
                    + c2 * sum(1 for s in spoof if s >= t) / len(spoof))
                   / min(c1, c2) for t in cands)
        value = compute_min_tdcf(_records(bona, spoof))
        worst = max(worst, abs(value - best))
    return f"max deviation {worst:.3e}", "< 1e-12", worst < 1e-12


def check_eer_monotone_invariance():
    rng = Rng(333333)
    bona = list(rng.normal((15,)) + 0.7)
    spoof = list(rng.normal((11,)) - 0.4)
    base, _ = compute_eer(_records(bona, spoof))
    drift = 0.0
    for fn in (lambda s: 3.0 * s + 11.0, math.tanh, lambda s: s ** 3):
        eer, _ = compute_eer(_records([fn(s) for s in bona],
                                      [fn(s) for s in spoof]))
        drift = max(drift, abs(eer - base))
    return f"max drift {drift:.3e} over 3 transforms", "exactly 0", drift == 0.0


# ---- full-level checks ---------------------------------------------------------

def check_training_smoke():
    config, waves, labels = _toy_training_setup(epochs=8)
    config.batch_size = waves.shape[0]  # one full batch per epoch
    result = train_on_arrays(config, waves, labels)
    losses = [rec["loss"] for rec in result.history]
    drop = losses[0] - losses[-1]
    observed = f"loss {losses[0]:.4f} -> {losses[-1]:.4f} over {len(losses)} epochs"
    return observed, "strictly decreasing overall", drop > 0.0


def check_training_determinism():
    config, waves, labels = _toy_training_setup(epochs=2)
    first = train_on_arrays(config, waves, labels)
    second = train_on_arrays(config, waves, labels)
    same_history = first.history == second.history
    same_params = all(
        np.array_equal(a.data, b.data)
        for a, b in zip(first.detector.named_parameters().values(),
                        second.detector.named_parameters().values()))
    passed = same_history and same_params
    return (f"history equal: {same_history}, parameters equal: {same_params}",
            "bitwise equal", passed)


def check_checkpoint_round_trip():
    config, waves, labels = _toy_training_setup(epochs=1)
    result = train_on_arrays(config, waves, labels)
    before = score_arrays(result.detector, waves)
    fd, path = tempfile.mkstemp(suffix=".npz")
    os.close(fd)
    try:
        save_checkpoint(path, result.detector)
        after = score_arrays(load_checkpoint(path), waves)
    finally:
        os.unlink(path)
    passed = np.array_equal(before, after)
    return (f"scores equal after reload: {passed}", "bitwise equal", passed)


QUICK_CHECKS = (
    ("zoh_closed_form", check_zoh_closed_form),
    ("zoh_series_limit", check_zoh_series_limit),
    ("phi1_guard_fault_injection", check_phi1_guard_is_load_bearing),
    ("scan_matches_lti_kernel", check_scan_matches_lti_kernel),
    ("gradients_selective_scan", check_gradients_selective_scan),
    ("gradients_mamba_stack", check_gradients_mamba_stack),
    ("gradients_bidirectional_model", check_gradients_bidirectional_model),
    ("gradients_frontend", check_gradients_frontend),
    ("bidirectional_symmetry", check_bidirectional_symmetry),
    ("causality", check_causality),
    ("filterbank_response", check_filterbank_response),
    ("eer_exhaustive_sweep", check_eer_against_exhaustive_sweep),
    ("min_tdcf_brute_force", check_min_tdcf_against_brute_force),
    ("eer_monotone_invariance", check_eer_monotone_invariance),
)

FULL_CHECKS = QUICK_CHECKS + (
    ("training_smoke", check_training_smoke),
    ("training_determinism", check_training_determinism),
    ("checkpoint_round_trip", check_checkpoint_round_trip),
)


def run_checks(level: str = "quick"):
    if level not in LEVELS:
        from .errors import ConfigError
        raise ConfigError(f"verification level must be one of {LEVELS}, "
                          f"got {level!r}")
    checks = QUICK_CHECKS if level == "quick" else FULL_CHECKS
    results = []
    for name, fn in checks:
        start = time.perf_counter()
        try:
            observed, tolerance, passed = fn()
        except Exception as exc:  # a crash is a failing check, not an abort
            observed = f"raised {type(exc).__name__}: {exc}"
            tolerance, passed = "no exception", False
        results.append(CheckResult(name=name, passed=bool(passed),
                                   observed=str(observed),
                                   tolerance=tolerance,
                                   seconds=time.perf_counter() - start))
    return results


def report_dict(level: str, results) -> dict:
    return {
        "level": level,
        "passed": all(r.passed for r in results),
        "checks": [asdict(r) for r in results],
    }


def format_report(level: str, results) -> str:
    lines = []
    for r in results:
        verdict = "PASS" if r.passed else "FAIL"
        lines.append(f"[{verdict}] {r.name}: {r.observed} "
                     f"(required {r.tolerance}; {r.seconds:.2f}s)")
    tally = sum(r.passed for r in results)
    lines.append(f"{tally}/{len(results)} checks passed at level {level!r}")
    return "\n".join(lines)


def write_report(path, level: str, results) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report_dict(level, results), fh, indent=2)
        fh.write("\n")
