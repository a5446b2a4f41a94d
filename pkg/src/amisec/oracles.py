"""Independent cross-checks.

Each oracle recomputes a result by a second route (hand arithmetic, brute
force, a naive loop, or a different algorithm) and compares it with the
library. ``run_all`` returns (name, passed, detail) triples.
"""
from __future__ import annotations

import itertools
import math
from fractions import Fraction

import numpy as np

from . import core, crypto, localization, ocsvm, sequencer
from .core import MsgType, PacketHeader, RngStream


def ext_gcd(a: int, b: int) -> tuple[int, int, int]:
    """Iterative extended Euclid: returns (g, x, y) with a x + b y = g."""
    x0, y0, x1, y1 = 1, 0, 0, 1
    while b:
        q, a, b = a // b, b, a % b
        x0, x1 = x1, x0 - q * x1
        y0, y1 = y1, y0 - q * y1
    return a, x0, y0


def modinv(e: int, m: int) -> int:
    g, x, _ = ext_gcd(e, m)
    if g != 1:
        raise ValueError("not invertible")
    return x % m


def square_and_multiply(base: int, exp: int, mod: int) -> int:
    result, base = 1, base % mod
    for bit in bin(exp)[2:]:
        result = result * result % mod
        if bit == "1":
            result = result * base % mod
    return result


def header_bytes_by_hand(h: PacketHeader) -> bytes:
    """Field-by-field big-endian assembly, independent of the struct layout."""
    return (h.version.to_bytes(1, "big") + int(h.msg_type).to_bytes(1, "big")
            + h.sender.to_bytes(4, "big") + h.session.to_bytes(4, "big")
            + h.seq_index.to_bytes(2, "big") + h.total_blocks.to_bytes(2, "big")
            + h.payload_len.to_bytes(2, "big") + h.send_time.to_bytes(8, "big"))


def random_header(gen: np.random.Generator) -> PacketHeader:
    mtype = MsgType(int(gen.integers(0, len(MsgType))))
    total = int(gen.integers(1, 1 << 16))
    seq = int(gen.integers(0, total)) if mtype == MsgType.DATA_BLOCK else int(gen.integers(0, 1 << 16))
    return PacketHeader(mtype, int(gen.integers(0, 1 << 32)), int(gen.integers(0, 1 << 32)), seq,
                        total, int(gen.integers(0, 1 << 16)),
                        int(gen.integers(0, 1 << 63)) * 2 + int(gen.integers(0, 2)))


def oracle_header_fuzz(count: int = 1000, seed: int = 0):
    gen = np.random.default_rng(seed)
    bad = 0
    for _ in range(count):
        h = random_header(gen)
        b = core.encode_header(h)
        if b != header_bytes_by_hand(h) or core.decode_header(b) != h:
            bad += 1
    return bad == 0, f"{count - bad}/{count} headers round-trip byte-exactly"


def oracle_rsa_toy():
    p, q, e = 61, 53, 17
    d = modinv(e, math.lcm(p - 1, q - 1))
    kp = crypto.keypair_from_primes(p, q, e)
    c_hand = square_and_multiply(2, 17, 3233)
    c_lib = crypto.encrypt(kp.public, b"\x02").chunks[0]
    ok = kp.secret.d == d == 413 and kp.public.n == 3233 and c_lib == c_hand == 1752
    return ok, f"d={kp.secret.d} (hand {d}), 2^17 mod 3233 = {c_lib} (hand {c_hand})"


def oracle_rsa_roundtrip(count: int = 100, seed: int = 7):
    kp = crypto.keygen(64, RngStream(seed, core.Stream.CRYPTO))
    gen = np.random.default_rng(seed)
    good = 0
    for _ in range(count):
        m = gen.bytes(int(gen.integers(1, 64)))
        good += crypto.decrypt(kp.secret, crypto.encrypt(kp.public, m)) == m
    return good == count, f"{good}/{count} random messages round-trip"


def oracle_fisher_yates(draws: int = 10_000, seed: int = 3):
    gen = np.random.default_rng(seed)
    counts = {p: 0 for p in itertools.permutations(range(1, 5))}
    for _ in range(draws):
        counts[sequencer.gen_sequence(gen, 4).values] += 1
    mu = draws / 24
    sd = math.sqrt(draws * (1 / 24) * (23 / 24))
    worst = max(abs(c - mu) / sd for c in counts.values())
    return worst < 5.0, f"max deviation {worst:.2f} sigma over 24 permutations"


def oracle_block_weights():
    cases = {(1, 2): (Fraction(2, 3), Fraction(1, 3)), (2, 1): (Fraction(1, 3), Fraction(2, 3))}
    worst = 0.0
    for s, want in cases.items():
        got = sequencer.block_weights(sequencer.RandomSequence(s))
        worst = max(worst, max(abs(float(w) - g) for w, g in zip(want, got)))
    return worst < 1e-15, f"max error {worst:.1e} against exact fractions"


def oracle_first_pick(samples: int = 20_000, seed: int = 11):
    """The weighted draw picks block i first with probability p_i (brute force over n = 3)."""
    gen = np.random.default_rng(seed)
    worst = 0.0
    for s in itertools.permutations((1, 2, 3)):
        S = sequencer.RandomSequence(s)
        p = sequencer.block_weights(S)
        first = np.zeros(3)
        for u in gen.random((samples, 2)):
            first[sequencer.weighted_order(p, u)[0] - 1] += 1
        worst = max(worst, float(np.abs(first / samples - p).max()))
    return worst < 0.015, f"max |freq - p| = {worst:.4f} over the 6 sequences"


def oracle_segment_roundtrip(count: int = 200, seed: int = 5):
    gen = np.random.default_rng(seed)
    bad = 0
    for _ in range(count):
        c = gen.bytes(int(gen.integers(1, 200)))
        n = int(gen.integers(2, min(64, 8 * len(c)) + 1))
        S = sequencer.gen_sequence(gen, n)
        o = sequencer.derive_order(S)
        bs = sequencer.segment(c, n)
        back = sequencer.invert_order(sequencer.apply_order(bs, o), o, bs.pad_len)
        bad += back.join() != c
    return bad == 0, f"{count - bad}/{count} segment/order round trips"


def oracle_permutation_entropy():
    exact = math.log2(math.factorial(32))
    lib = sequencer.permutation_entropy(32)
    return abs(lib - exact) < 1e-9 and abs(exact - 117.66) < 0.01, f"log2(32!) = {lib:.4f}"


def oracle_path_loss():
    cfg = localization.RssConfig(gamma=2.93, sigma=0.0, c_true=0.0)
    a = [localization.Anchor(1, 10.0, 0.0)]
    psi = localization.simulate_rss((0.0, 0.0), cfg, a, np.random.default_rng(0))[0].psi
    return abs(psi - (-29.3)) < 1e-12, f"psi at 10 m = {psi!r}"


def nll_naive(theta, meas, anchors, gamma, sigmas):
    pos = {a.id: (a.x, a.y) for a in anchors}
    total = 0.0
    for m, s in zip(meas, sigmas):
        ax, ay = pos[m.anchor]
        d = max(math.sqrt((theta[0] - ax) ** 2 + (theta[1] - ay) ** 2), localization.D_MIN)
        r = m.psi - theta[2] + 10.0 * gamma * math.log10(d)
        total += r * r / (2.0 * s * s)
    return total


def oracle_nll(count: int = 100, seed: int = 9):
    gen = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(count):
        k = int(gen.integers(3, 9))
        anchors = [localization.Anchor(i, *gen.uniform(0, 100, 2)) for i in range(k)]
        meas = [localization.RssMeasurement(i, float(gen.normal(-50, 10))) for i in range(k)]
        sig = gen.uniform(1, 15, k)
        theta = (*gen.uniform(-20, 120, 2), float(gen.uniform(-40, 40)))
        cfg = localization.RssConfig()
        lib = localization.neg_log_likelihood(theta, meas, anchors, cfg, sigmas=sig)
        ref = nll_naive(theta, meas, anchors, cfg.gamma, sig)
        worst = max(worst, abs(lib - ref) / max(1.0, abs(ref)))
    return worst < 1e-10, f"max relative gap {worst:.1e}"


def oracle_pso_benchmarks():
    cfg = localization.PsoConfig(max_iters=200, patience=200)
    b3 = ((-5.0, 5.0),) * 3
    x, _ = localization.pso_minimize(lambda p: float(np.sum(p * p)), b3, cfg, RngStream(1, 4))
    cfg_r = localization.PsoConfig(max_iters=500, patience=500)
    _, fr = localization.pso_minimize(
        lambda p: float((1 - p[0]) ** 2 + 100 * (p[1] - p[0] ** 2) ** 2),
        ((-2.0, 2.0), (-2.0, 2.0)), cfg_r, RngStream(1, 4))
    ok = float(np.linalg.norm(x)) < 1e-3 and fr < 1e-2
    return ok, f"sphere |x| = {np.linalg.norm(x):.1e}, rosenbrock f = {fr:.1e}"


def oracle_grid_vs_pso(count: int = 20, seed: int = 2):
    cfg = localization.RssConfig()
    anchors = localization.hexagon_anchors()
    bounds = localization.aoi_bounds(anchors)
    wins = 0
    for t in range(count):
        gen = np.random.default_rng([seed, t])
        emitter = gen.uniform(40, 60, 2)
        meas = localization.simulate_rss(emitter, cfg, anchors, gen)
        grid = localization.grid_search(meas, anchors, cfg, bounds, step=1.0)
        est = localization.localize(meas, anchors, cfg, rng=RngStream(seed, 4, (t,)))
        wins += est.value <= grid.value + 1e-6
    return wins >= 18, f"PSO at or below the 1 m grid optimum in {wins}/{count}"


def oracle_rbf_hand():
    v = ocsvm.kernel_eval(ocsvm.Kernel.rbf(2.0), (0.0, 0.0), (1.0, 1.0))
    return abs(v - math.exp(-1.0)) < 1e-15, f"k = {v!r} vs e^-1"


def oracle_qp(count: int = 50, seed: int = 4):
    gen = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(count):
        n = int(gen.integers(2, 13))
        X = gen.standard_normal((n, 2))
        nu = float(gen.choice([0.2, 0.3, 0.5, 0.8, 1.0]))
        k = ocsvm.Kernel.rbf(float(gen.uniform(0.5, 4.0)))
        _, alpha = ocsvm.train_full(X, nu, k)
        _, ref = ocsvm.qp_oracle(X, nu, k)
        worst = max(worst, abs(ocsvm.dual_objective(alpha, k.gram(X, X)) - ref))
    return worst < 1e-6, f"max dual objective gap {worst:.1e} over {count} instances"


FROZEN_MODEL = dict(
    sv=((0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0), (0.5, 0.5)),
    alpha=(0.1, 0.2, 0.2, 0.25, 0.25), rho=0.5, sigma=1.5, probe=(0.3, 0.8))


def hand_score(sv, alpha, rho, sigma, probe) -> float:
    total = 0.0
    for a, s in zip(alpha, sv):
        d2 = (s[0] - probe[0]) ** 2 + (s[1] - probe[1]) ** 2
        total += a * math.exp(-d2 / sigma)
    return total - rho


def oracle_frozen_model():
    f = FROZEN_MODEL
    m = ocsvm.OcsvmModel(np.array(f["sv"]), np.array(f["alpha"]), f["rho"],
                         ocsvm.Kernel.rbf(f["sigma"]), 0.5, 5)
    _, s = ocsvm.decide(m, np.array(f["probe"]))
    ref = hand_score(f["sv"], f["alpha"], f["rho"], f["sigma"], f["probe"])
    return abs(s - ref) < 1e-9, f"score {s!r} vs hand {ref!r}"


def oracle_confidentiality(n: int = 5, seed: int = 1):
    """Every reordering of captured blocks is still ciphertext, never the plaintext."""
    kp = crypto.keygen(64, RngStream(seed, core.Stream.CRYPTO))
    m = b"meter-01"
    c = crypto.encrypt(kp.public, m).to_bytes(kp.public.n)
    S = sequencer.gen_sequence(np.random.default_rng(seed), n)
    bs = sequencer.segment(c, n)
    captured = sequencer.apply_order(bs, sequencer.derive_order(S))
    leaks = 0
    for perm in itertools.permutations(range(n)):
        joined = b"".join(captured[i] for i in perm)[:len(c) - bs.pad_len]
        leaks += m in joined
    return leaks == 0, f"0 of {math.factorial(n)} reorderings expose the plaintext" if not leaks \
        else f"{leaks} reorderings expose the plaintext"


def oracle_standardization(seed: int = 6):
    from .auth import Standardizer
    X = np.random.default_rng(seed).normal([10, 20, 900, 32], [3, 3, 20, 4], size=(100, 4))
    Z = Standardizer.fit(X).apply(X)
    ok = np.abs(Z.mean(0)).max() < 1e-9 and np.abs(Z.var(0) - 1).max() < 1e-6
    return bool(ok), f"means {np.abs(Z.mean(0)).max():.1e}, variance gap {np.abs(Z.var(0) - 1).max():.1e}"


def oracle_end_to_end(sessions: int = 100, seed: int = 0):
    from .sim import ScenarioConfig, run_scenario
    res = run_scenario(ScenarioConfig(seed=seed, sessions=sessions))
    good = sum(1 for k, v in res.retrieved.items() if res.originals.get(k) == v)
    return good == sessions, f"{good}/{sessions} sessions retrieved intact"


ORACLES = [
    ("header_fuzz", oracle_header_fuzz),
    ("rsa_toy_key", oracle_rsa_toy),
    ("rsa_roundtrip", oracle_rsa_roundtrip),
    ("fisher_yates_uniform", oracle_fisher_yates),
    ("block_weights", oracle_block_weights),
    ("weighted_first_pick", oracle_first_pick),
    ("segment_roundtrip", oracle_segment_roundtrip),
    ("permutation_entropy", oracle_permutation_entropy),
    ("path_loss", oracle_path_loss),
    ("nll_second_route", oracle_nll),
    ("pso_benchmarks", oracle_pso_benchmarks),
    ("grid_vs_pso", oracle_grid_vs_pso),
    ("rbf_hand", oracle_rbf_hand),
    ("qp_oracle", oracle_qp),
    ("frozen_model_score", oracle_frozen_model),
    ("confidentiality", oracle_confidentiality),
    ("standardization", oracle_standardization),
    ("end_to_end", oracle_end_to_end),
]


def run_all():
    out = []
    for name, fn in ORACLES:
        try:
            ok, detail = fn()
        except Exception as exc:  # report, do not abort the sweep
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        out.append((name, bool(ok), detail))
    return out
