#!/usr/bin/env python3
"""Independent oracle for the golden fixtures.

Pure standard library. Every expected value below is computed here by
direct formula evaluation, brute-force sweeps or finite differences, with no
code shared with the Rust library. Regenerate with:

    python3 crates/core/fixtures/oracle.py > crates/core/fixtures/golden.json
"""

import cmath
import json
import math
import random


def sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def softmax(row):
    m = max(row)
    e = [math.exp(v - m) for v in row]
    s = sum(e)
    return [v / s for v in e]


def cosine(a, b):
    dot = sum(x * y for x, y in zip(a, b))
    return dot / (math.sqrt(sum(x * x for x in a)) * math.sqrt(sum(y * y for y in b)))


def case(name, expected, tolerance, check="close", **inputs):
    return {
        "name": name,
        "check": check,
        "tolerance": tolerance,
        "inputs": inputs,
        "expected": [float(v) for v in expected],
    }


# ---- kernels -------------------------------------------------------------

def softmax_fd_case():
    rng = random.Random(11)
    x = [[rng.uniform(-2, 2) for _ in range(5)] for _ in range(2)]
    g = [[rng.uniform(-1, 1) for _ in range(5)] for _ in range(2)]

    def objective(m):
        return sum(gi * si for gr, row in zip(g, m) for gi, si in zip(gr, softmax(row)))

    h = 1e-6
    grad = []
    for r in range(2):
        for c in range(5):
            up = [row[:] for row in x]
            dn = [row[:] for row in x]
            up[r][c] += h
            dn[r][c] -= h
            grad.append((objective(up) - objective(dn)) / (2 * h))
    return case("softmax_rows_finite_difference", grad, 1e-7, x=x, upstream=g)


def mask_case():
    spans, delta, frames = [(0.25, 0.55)], 0.1, 10
    bits = []
    for t in range(frames):
        lo, hi = t * delta, (t + 1) * delta
        cover = sum(max(0.0, min(e, hi) - max(s, lo)) for s, e in spans)
        bits.append(1 if cover >= 0.5 * delta - 1e-12 else 0)
    return case("mask_half_coverage_bits", bits, 0.0, spans=spans, frame_duration=delta, frames=frames)


def lcg(seed):
    state = seed & 0xFFFFFFFF
    while True:
        state = (1664525 * state + 1013904223) & 0xFFFFFFFF
        yield state / 2**32


def planted_breath_case():
    """Harmonic phrases around a 300 ms noise burst at 1.0 s, quantized to 16 bit."""
    sr, n = 16000, 32000
    u = lcg(2024)
    gauss = lambda: math.sqrt(-2 * math.log(max(next(u), 1e-12))) * math.cos(2 * math.pi * next(u))
    out = []
    for i in range(n):
        t = i / sr
        v = 0.0005 * gauss()
        if t < 0.9 or t >= 1.4:
            ramp = min(1.0, abs(t - 0.9) / 0.02, abs(t - 1.4) / 0.02, t / 0.02, (n / sr - t) / 0.02)
            v += ramp * 0.12 * sum(math.sin(2 * math.pi * 150 * k * t) / k for k in range(1, 20))
        if 1.0 <= t < 1.3:
            env = 0.5 - 0.5 * math.cos(2 * math.pi * (t - 1.0) / 0.3)
            v += 0.08 * env * gauss()
        out.append(max(-32767, min(32767, round(v * 32767))))
    return case("planted_breath_detection_iou", [0.5], 0.0, check="at_least",
                pcm16=out, sample_rate=sr, planted=[1.0, 1.3])


def sinc_kernel(f1, f2, taps, sr):
    half = taps // 2
    lo, hi = f1 / sr, f2 / sr
    k = []
    for j in range(taps):
        n = j - half
        w = 0.54 - 0.46 * math.cos(2 * math.pi * j / (taps - 1))
        if n == 0:
            g = 2 * hi - 2 * lo
        else:
            g = (math.sin(2 * math.pi * hi * n) - math.sin(2 * math.pi * lo * n)) / (math.pi * n)
        k.append(w * g)
    return k


def dtft_mag(h, f, sr):
    return abs(sum(v * cmath.exp(-2j * math.pi * f / sr * i) for i, v in enumerate(h)))


def sinc_cases():
    k = sinc_kernel(1000.0, 2000.0, 129, 16000.0)
    gap = 20 * math.log10(dtft_mag(k, 1500.0, 16000.0) / dtft_mag(k, 4000.0, 16000.0))
    assert gap >= 20.0

    def rms_out(freq, n=4000):
        x = [math.sin(2 * math.pi * freq * i / 16000.0) for i in range(n)]
        y = [sum(k[j] * x[s + j] for j in range(129)) for s in range(n - 129 + 1)]
        return math.sqrt(sum(v * v for v in y) / len(y))

    ratio = rms_out(1500.0) / rms_out(4000.0)
    assert ratio >= 10.0
    common = dict(low=1000.0, high=2000.0, taps=129, sample_rate=16000.0)
    return [
        case("sinc_passband_over_stopband_db", [gap], 1e-6, probe=[1500.0, 4000.0], **common),
        case("sinc_tone_rms_ratio", [ratio], 1e-6 * ratio, tones=[1500.0, 4000.0], samples=4000, **common),
    ]


# ---- metrics -------------------------------------------------------------

def sweep_eer(bona, spoof):
    """Exhaustive sweep: every distinct score and +inf as a threshold,
    accept when score >= threshold, linear interpolation at the crossing."""
    ts = sorted(set(bona + spoof)) + [math.inf]
    pts = []
    for t in ts:
        miss = sum(1 for s in bona if s < t) / len(bona)
        fa = sum(1 for s in spoof if s >= t) / len(spoof)
        pts.append((miss, fa))
    for k, (miss, fa) in enumerate(pts):
        if miss == fa:
            return miss
        if miss > fa:
            m0, f0 = pts[k - 1]
            a = (f0 - m0) / ((f0 - m0) - (fa - miss))
            return m0 + a * (miss - m0)
    raise AssertionError("unreachable")


def eer_sets_case():
    rng = random.Random(5)
    sets, expected = [], []
    for _ in range(200):
        nb, ns = rng.randint(1, 30), rng.randint(1, 30)
        shift = rng.uniform(-1, 3)
        grid = rng.choice([None, 0.5, 0.1])
        draw = lambda mu: rng.gauss(mu, 1.0) if grid is None else round(rng.gauss(mu, 1.0) / grid) * grid
        bona = [draw(shift) for _ in range(nb)]
        spoof = [draw(0.0) for _ in range(ns)]
        sets.append({"bonafide": bona, "spoof": spoof})
        expected.append(sweep_eer(bona, spoof))
    return case("eer_random_sets_sweep", expected, 1e-12, sets=sets)


def min_dcf(bona, spoof, c_miss=1.0, c_fa=10.0, prior=0.05):
    ts = sorted(set(bona + spoof)) + [math.inf]
    best = math.inf
    for t in ts:
        miss = sum(1 for s in bona if s < t) / len(bona)
        fa = sum(1 for s in spoof if s >= t) / len(spoof)
        best = min(best, c_miss * prior * miss + c_fa * (1 - prior) * fa)
    return best / min(c_miss * prior, c_fa * (1 - prior))


def cllr(bona, spoof):
    tb = sum(math.log2(1 + math.exp(-s)) for s in bona) / len(bona)
    ts = sum(math.log2(1 + math.exp(s)) for s in spoof) / len(spoof)
    return 0.5 * (tb + ts)


def metric_cases():
    small = ([0.8, 0.6, 0.4], [0.5, 0.3, 0.1])
    cond = {
        "separated": ([0.9, 0.8, 0.7], [0.1, 0.2, 0.3]),
        "overlapping": ([0.5, 0.5, 0.5], [0.5, 0.5, 0.5]),
    }
    pooled_b = cond["separated"][0] + cond["overlapping"][0]
    pooled_s = cond["separated"][1] + cond["overlapping"][1]
    return [
        case("eer_small_sweep", [sweep_eer(*small)], 1e-12, bonafide=small[0], spoof=small[1]),
        eer_sets_case(),
        case("min_dcf_all_equal", [min_dcf([0.3] * 4, [0.3] * 4)], 1e-12, bonafide=[0.3] * 4, spoof=[0.3] * 4),
        case("cllr_log3", [cllr([math.log(3)], [-math.log(3)])], 1e-12, bonafide=[math.log(3)], spoof=[-math.log(3)]),
        case(
            "breakdown_two_conditions",
            [sweep_eer(*cond["overlapping"]), sweep_eer(*cond["separated"]), sweep_eer(pooled_b, pooled_s)],
            1e-12,
            conditions={k: {"bonafide": b, "spoof": s} for k, (b, s) in cond.items()},
        ),
    ]


# ---- blocks and losses ---------------------------------------------------

def block_cases():
    h1, h2, u = 2.0, 4.0, 1.0
    w1, w2 = sigmoid(u * h1), sigmoid(u * h2)
    att = softmax([0.0, 1.0])
    return [
        case("affine_scalar", [2 * 3 + 1], 1e-15, x=2.0, w=3.0, b=1.0),
        case("softmax_row_pair", softmax([0.0, 1.0]), 1e-12, row=[0.0, 1.0]),
        softmax_fd_case(),
        case("pre_emphasis_recurrence", [1.0, 2 - 0.97 * 1, 3 - 0.97 * 2], 1e-12, x=[1.0, 2.0, 3.0], coeff=0.97),
        case("max_pool_two_bins", [2, 4, 4, 2], 0.0, rows=[[1, 2, 3, 4], [4, 3, 2, 1]], bins=2),
        case("layer_weighting_hand", [w1, w2, w1 * h1 + w2 * h2], 1e-12, layers=[h1, h2], u=u, b=0.0),
        case("breath_gate_mask_one", [1 + sigmoid(1.0), 2 * (1 + sigmoid(1.0))], 1e-12, mask=1, x=2.0),
        case("breath_gate_mask_zero", [1.5, 3.0], 1e-12, mask=0, x=2.0),
        case("attention_single_query", [att[0], att[1], att[0] * 1 + att[1] * 2], 1e-12,
             query=1.0, keys=[0.0, 1.0], values=[1.0, 2.0]),
        case("bilstm_reversal_symmetry", [0.0], 1e-12, check="at_most", steps=6, input=3, hidden=4),
        case("mean_pool_rows", [2.0, 2.0], 1e-15, rows=[[1.0, 3.0], [3.0, 1.0]]),
    ]


def pscl(zs, tau):
    n = len(zs)
    total = 0.0
    for i in range(n):
        others = [j for j in range(n) if j != i]
        logits = [cosine(zs[i], zs[j]) / tau for j in others]
        m = max(logits)
        lse = m + math.log(sum(math.exp(v - m) for v in logits))
        total += sum(lse - v for v in logits) / len(others)
    return total / n


def loss_cases():
    z = [0.3, -1.2, 2.0]
    e1, e2, e3 = [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]
    mid = [0.5, 0.5, 0.0]
    contrast = sum((1 + cosine(f, e3)) / 2 for f in (e1, e2)) / 2 + (1 + cosine(mid, e3)) / 2
    rng = random.Random(3)
    base = [rng.uniform(-1, 1) for _ in range(4)]
    return [
        case("augmentation_monte_carlo_mean", base, 0.01, z=base, delta=0.1, draws=10000),
        case("pscl_identical_triplet", [pscl([z, z, z], 0.1)], 1e-12, z=[z, z, z], tau=0.1),
        case("pscl_orthogonal_triplet", [pscl([e1, e1, e2], 1.0)], 1e-12, z=[e1, e1, e2], tau=1.0),
        case("contrast_orthonormal_fakes", [contrast], 1e-12, fakes=[e1, e2], center=e3),
        case("weighted_ce_bonafide", [-0.9 * math.log(0.5)], 1e-12, probs=[0.5, 0.5], label="bonafide"),
        case("weighted_ce_spoof", [-0.1 * math.log(0.5)], 1e-12, probs=[0.5, 0.5], label="spoof"),
    ]


# ---- corpus and training (thresholds measured by the library side) -------

def corpus_cases():
    seeds = [0, 1, 2, 3]
    return [
        case("tone_440_no_breath", [0], 0.0, freq=440.0, seconds=1.0, amplitude=0.5),
        case("breaths_sit_in_pauses_db", [6.0], 0.0, check="at_least", seeds=seeds),
        case("no_breath_style_detects_nothing", [0], 0.0, seeds=seeds),
        case("lowpass_high_band_drop_db", [30.0], 0.0, check="at_least", seeds=seeds),
        case("comb_autocorr_excess", [1e-9], 0.0, check="at_least", seeds=seeds),
        case("stationary_noise_snr_db", [20.0], 1.0, snr=20.0, seed=9),
        case("training_loss_decreases_three_epochs", [], 0.0, check="deferred", target="acceptance"),
        case("ablation_breath_gate_direction", [], 0.0, check="deferred", target="acceptance"),
    ]


def main():
    cases = block_cases() + [mask_case(), planted_breath_case()] + sinc_cases()
    cases += loss_cases() + metric_cases() + corpus_cases()
    cases.sort(key=lambda c: c["name"])
    print(json.dumps({"format": 1, "cases": cases}, indent=1))


if __name__ == "__main__":
    main()
