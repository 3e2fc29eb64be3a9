"""Acceptance gate: ten self-contained criteria, one printed verdict line
each.  Tolerances are pinned here and must not be loosened; every expected
value comes from an independent route (closed forms, exhaustive sweeps,
finite differences, held-out evaluation).

Run with `pytest tests/test_acceptance.py -s` to see the verdict lines.
"""

import math
import time

import numpy as np

from sincscan import autodiff as ad
from sincscan import ssm
from sincscan.audio import (generate_synthetic_corpus, load_corpus,
                            plan_corpus, synthesize_utterance)
from sincscan.autodiff import Tensor
from sincscan.bimamba import BiMambaModel, model_forward, reverse_sequence
from sincscan.config import TrainConfig, tiny_config
from sincscan.frontend import Frontend, SincFilterbank, frontend_forward
from sincscan.mamba import MambaLayer, MambaStack, layer_forward, stack_forward
from sincscan.metrics import (AsvRates, ScoreRecord, TandemCosts, compute_eer,
                              compute_min_tdcf, tdcf_coefficients)
from sincscan.model import load_checkpoint, save_checkpoint
from sincscan.rng import Rng
from sincscan.training import score_arrays, train_on_arrays, train_on_corpus


def _verdict(name, passed, detail):
    print(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")
    assert passed, f"{name}: {detail}"


def _constant_pair(a, delta, b, c, x):
    E, N = a.shape
    L = x.shape[0]
    pair = ssm.discretize_zoh(Tensor(a), Tensor(np.full((1, L, E), delta)),
                              Tensor(np.tile(b, (1, L, 1))), Tensor(x[None]))
    return pair, Tensor(np.tile(c, (1, L, 1)))


def test_criterion_01_scan_matches_lti_kernel():
    rng = Rng(910910)
    start = time.perf_counter()
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
    seconds = time.perf_counter() - start
    _verdict("criterion 1 (scan vs LTI kernel)",
             worst < 1e-10 and seconds < 5.0,
             f"max deviation {worst:.3e} over 100 systems "
             f"in {seconds:.2f}s (need < 1e-10 and < 5s)")


def test_criterion_02_zoh_closed_form_and_series_limit():
    pair, _ = _constant_pair(np.array([[-1.0]]), math.log(2.0),
                             np.ones(1), np.ones(1), np.ones((1, 1)))
    closed = max(abs(pair.a_bar.item() - 0.5), abs(pair.b_bar_x.item() - 0.5))

    delta = 1e-12
    tiny, _ = _constant_pair(np.array([[-1.0]]), delta,
                             np.ones(1), np.ones(1), np.ones((1, 1)))
    series = delta * (1.0 + delta * (-1.0) / 2.0)
    rel = abs(tiny.b_bar_x.item() - series) / series
    _verdict("criterion 2 (ZOH closed form)",
             closed < 1e-12 and rel < 1e-15,
             f"closed-form deviation {closed:.3e} (need < 1e-12), "
             f"series deviation {rel:.3e} relative (need < 1e-15)")


def test_criterion_03_gradient_checks():
    start = time.perf_counter()
    worst_core = 0.0

    rng = Rng(920920)
    params = ssm.SsmParams.create(rng, inner_dim=3, state_dim=2)
    x = Tensor(rng.normal((1, 8, 3)), requires_grad=True)
    w = Tensor(rng.normal((3,)))

    def through_scan():
        b_sel, c_sel, delta = ssm.select_projections(params, x)
        pair = ssm.discretize_zoh(params.state_matrix(), delta, b_sel, x)
        return ad.tsum(ad.mul(ssm.selective_scan(pair, c_sel), w))

    errs = ad.finite_difference_check(through_scan,
                                      dict(params.named_tensors(), x=x))
    worst_core = max(worst_core, max(errs.values()))

    stack = MambaStack.create(Rng(930930), n_layers=2, channels=4,
                              inner_dim=8, state_dim=4)
    sx = Tensor(Rng(940940).normal((1, 6, 4)), requires_grad=True)
    sw = Tensor(Rng(950950).normal((4,)))
    errs = ad.finite_difference_check(
        lambda: ad.tsum(ad.mul(stack_forward(stack, sx), sw)),
        dict(stack.named_tensors("stack"), x=sx))
    worst_core = max(worst_core, max(errs.values()))

    for mode in ("sum", "concat", "attention"):
        model = BiMambaModel.create(Rng(960960), n_layers=1, channels=4,
                                    inner_dim=8, state_dim=4, fusion_mode=mode)
        mx = Tensor(Rng(970970).normal((1, 12, 4)), requires_grad=True)
        mw = Tensor(Rng(980980).normal((2,)))

        def through_model():
            return ad.tsum(ad.mul(ad.silu(model_forward(model, mx).logits), mw))

        errs = ad.finite_difference_check(through_model,
                                          dict(model.named_tensors(), x=mx))
        worst_core = max(worst_core, max(errs.values()))

    front = Frontend.create(Rng(990990), n_filters=4, kernel_size=129,
                            sinc_pool=3, channels=(4,), pools=((2, 4),))
    # probe at generic band positions; the mel defaults start on the
    # |low_hz| clamp kink where central differences disagree by design
    front.bank.low_hz.data[...] = Rng(111).uniform(10.0, 800.0, size=4)
    front.bank.band_hz.data[...] = Rng(222).uniform(10.0, 600.0, size=4)
    fx = Tensor(Rng(333).normal((1, 512)), requires_grad=True)
    fw = Tensor(Rng(444).normal((4,)))
    errs = ad.finite_difference_check(
        lambda: ad.tsum(ad.mul(frontend_forward(front, fx), fw)),
        dict(front.named_tensors(), wave=fx))
    worst_front = max(errs.values())
    seconds = time.perf_counter() - start
    _verdict("criterion 3 (gradient checks)",
             worst_core < 1e-4 and worst_front < 1e-3 and seconds < 120.0,
             f"core paths {worst_core:.3e} (need < 1e-4), "
             f"frontend {worst_front:.3e} (need < 1e-3), "
             f"{seconds:.1f}s (need < 120s)")


def test_criterion_04_bidirectional_symmetry():
    model = BiMambaModel.create(Rng(101101), n_layers=2, channels=4,
                                inner_dim=8, state_dim=4)
    for src, dst in zip(model.forward_stack.named_tensors("f").values(),
                        model.backward_stack.named_tensors("b").values()):
        dst.data[...] = src.data
    rng = Rng(202202)
    mismatches = 0
    for _ in range(20):
        x = Tensor(rng.normal((1, 9, 4)))
        f_bwd = stack_forward(model.backward_stack, reverse_sequence(x))
        mirror = stack_forward(model.forward_stack, reverse_sequence(x))
        if not np.array_equal(f_bwd.data, mirror.data):
            mismatches += 1
    _verdict("criterion 4 (tied-weight symmetry)", mismatches == 0,
             f"{mismatches} bitwise mismatches over 20 random inputs (need 0)")


def test_criterion_05_causality():
    layer = MambaLayer.create(Rng(303303), channels=3, inner_dim=6,
                              state_dim=4)
    rng = Rng(404404)
    x = rng.normal((1, 16, 3))
    base = layer_forward(layer, Tensor(x)).data
    leaked = 0
    for pos in range(16):
        bumped = x.copy()
        bumped[0, pos] += 1.0
        out = layer_forward(layer, Tensor(bumped)).data
        if not np.array_equal(out[:, :pos], base[:, :pos]):
            leaked += 1
    _verdict("criterion 5 (causality)", leaked == 0,
             f"{leaked} of 16 positions influenced earlier outputs (need 0)")


def test_criterion_06_filterbank_response():
    rng = Rng(505505)
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
    _verdict("criterion 6 (filterbank response)",
             worst_rejection >= 20.0 and worst_dc < 1e-6,
             f"octave rejection {worst_rejection:.1f} dB (need >= 20), "
             f"DC gain {worst_dc:.2e} (need < 1e-6)")


def _records(bona, spoof):
    recs = [ScoreRecord(f"b{i}", "bonafide", s) for i, s in enumerate(bona)]
    recs += [ScoreRecord(f"s{i}", "spoof", s) for i, s in enumerate(spoof)]
    return recs


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
            share = (a0 - f0) / ((frr - f0) - (far - a0))
            return f0 + share * (frr - f0)
    raise AssertionError("no crossing found")


def test_criterion_07_metric_oracles():
    rng = Rng(606606)
    eer_exact = 0
    for _ in range(50):
        nb = 1 + rng.integer(20)
        ns = 1 + rng.integer(20)
        bona = list(np.round(rng.normal((nb,)) * 2.0 + 0.5, 1))
        spoof = list(np.round(rng.normal((ns,)) * 2.0 - 0.5, 1))
        eer, _ = compute_eer(_records(bona, spoof))
        if eer == _eer_sweep_oracle(bona, spoof):
            eer_exact += 1

    c1, c2 = tdcf_coefficients(TandemCosts(), AsvRates())
    tdcf_worst = 0.0
    for _ in range(20):
        bona = list(rng.normal((10,)) + 0.8)
        spoof = list(rng.normal((14,)) - 0.3)
        uniq = sorted(set(bona) | set(spoof))
        cands = [uniq[0] - 1.0] + uniq + [uniq[-1] + 1.0]
        best = min((c1 * sum(1 for s in bona if s < t) / len(bona)
                    + c2 * sum(1 for s in spoof if s >= t) / len(spoof))
                   / min(c1, c2) for t in cands)
        tdcf_worst = max(tdcf_worst,
                         abs(compute_min_tdcf(_records(bona, spoof)) - best))

    bona = list(rng.normal((15,)) + 0.7)
    spoof = list(rng.normal((11,)) - 0.4)
    base, _ = compute_eer(_records(bona, spoof))
    mono_drift = 0.0
    for fn in (lambda s: 3.0 * s + 11.0, math.tanh, lambda s: s ** 3):
        eer, _ = compute_eer(_records([fn(s) for s in bona],
                                      [fn(s) for s in spoof]))
        mono_drift = max(mono_drift, abs(eer - base))
    _verdict("criterion 7 (metric oracles)",
             eer_exact == 50 and tdcf_worst < 1e-12 and mono_drift == 0.0,
             f"EER exact on {eer_exact}/50 sets (need 50), "
             f"min t-DCF deviation {tdcf_worst:.3e} (need < 1e-12), "
             f"monotone drift {mono_drift:.3e} (need 0)")


def _corpus_eer(detector, waves, labels):
    scores = score_arrays(detector, waves)
    records = [ScoreRecord(f"u{i}", "bonafide" if l == 0 else "spoof",
                           float(s))
               for i, (l, s) in enumerate(zip(labels, scores))]
    return compute_eer(records)[0]


def test_criterion_08_end_to_end_overfit(tmp_path):
    config = tiny_config()
    train_dir = tmp_path / "train_corpus"
    eval_dir = tmp_path / "eval_corpus"
    generate_synthetic_corpus(2024, 32, train_dir,
                              n_samples=config.n_samples,
                              sample_rate=config.sample_rate)
    eval_records = generate_synthetic_corpus(777, 16, eval_dir,
                                             n_samples=config.n_samples,
                                             sample_rate=config.sample_rate)
    start = time.perf_counter()
    result = train_on_corpus(config, train_dir, stop_at_train_eer=0.0)
    wall = time.perf_counter() - start

    eval_waves = load_corpus(eval_dir, eval_records, config.n_samples,
                             config.sample_rate, seed=config.seed)
    eval_labels = np.array([0 if label == "bonafide" else 1
                            for _, label in eval_records])
    eval_eer = _corpus_eer(result.detector, eval_waves, eval_labels)
    train_eer = result.history[-1]["train_eer"]
    epochs = len(result.history)
    _verdict("criterion 8 (end-to-end overfit)",
             (train_eer == 0.0 and epochs <= 30 and wall < 900.0
              and eval_eer <= 0.10),
             f"train EER {train_eer} after {epochs} epochs (need 0.0 within "
             f"30), wall {wall:.0f}s (need < 900), held-out EER {eval_eer:.4f} "
             f"(need <= 0.10)")


def test_criterion_09_fusion_variants():
    specs = plan_corpus(909, 16, n_samples=16000)
    waves = np.stack([synthesize_utterance(s, 909, n_samples=16000)
                      for s in specs])
    labels = np.array([0 if s.label == "bonafide" else 1 for s in specs])
    expected_width = {"sum": 32, "concat": 64, "attention": 32}
    reached = {}
    widths = {}
    for mode in ("sum", "concat", "attention"):
        config = tiny_config()
        config.fusion_mode = mode
        config.n_samples = 16000
        config.epochs = 40
        result = train_on_arrays(config, waves, labels, stop_at_train_eer=0.0)
        reached[mode] = result.history[-1]["train_eer"]
        widths[mode] = result.detector.forward(waves[:2]).embedding.shape[1]
    passed = (all(v == 0.0 for v in reached.values())
              and widths == expected_width)
    _verdict("criterion 9 (fusion variants)", passed,
             f"train EER per mode {reached} (need all 0.0), embedding "
             f"widths {widths} (need {expected_width})")


def test_criterion_10_determinism_and_round_trip(tmp_path):
    config = TrainConfig(
        seed=77, learning_rate=1e-3, batch_size=4, epochs=2,
        sample_rate=16000, n_samples=2048,
        n_filters=2, sinc_kernel=65, sinc_pool=8,
        block_channels=(4,), block_pools_f=(1,), block_pools_t=(4,),
        n_layers=1, inner_dim=8, state_dim=4, fusion_mode="sum",
    ).validate()
    specs = plan_corpus(515, 4, n_samples=2048)
    waves = np.stack([synthesize_utterance(s, 515, n_samples=2048)
                      for s in specs])
    labels = np.array([0 if s.label == "bonafide" else 1 for s in specs])

    first = train_on_arrays(config, waves, labels)
    second = train_on_arrays(config, waves, labels)
    curves_match = first.history == second.history

    before = score_arrays(first.detector, waves)
    path = tmp_path / "model.npz"
    save_checkpoint(path, first.detector)
    after = score_arrays(load_checkpoint(path), waves)
    round_trip = np.array_equal(before, after)
    _verdict("criterion 10 (determinism and round trip)",
             curves_match and round_trip,
             f"loss curves bitwise equal: {curves_match}, checkpoint "
             f"save/load/score bitwise stable: {round_trip}")
