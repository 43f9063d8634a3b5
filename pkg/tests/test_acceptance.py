"""Acceptance criteria, one PASS/FAIL line each.

Run under pytest (lines appear in the terminal summary) or directly with
``python tests/test_acceptance.py``.
"""

import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from helpers import KINDS, random_layer  # noqa: E402
from mixfacenet import reference as ref  # noqa: E402
from mixfacenet.complexity import count_flops, count_macs, count_params  # noqa: E402
from mixfacenet.config import preset  # noqa: E402
from mixfacenet.gradcheck import run as gradcheck_run  # noqa: E402
from mixfacenet.metrics import (ScoreSet, rank1_identification, sequential_folds, tar_at_far,  # noqa: E402
                                verification_accuracy_kfold)
from mixfacenet.network import Network, forward, load_checkpoint, save_checkpoint  # noqa: E402
from mixfacenet.ops import channel_shuffle, shuffle_permutation  # noqa: E402
from mixfacenet.tensor import Tensor  # noqa: E402
from mixfacenet.training import TrainConfig, train_toy  # noqa: E402

README = Path(__file__).resolve().parent.parent / "README.md"
PARAMS_M = {"mixfacenet-s": 3.07, "mixfacenet-xs": 1.04, "mixfacenet-m": 3.95}
FLOPS_M = {"mixfacenet-s": 451.7, "mixfacenet-xs": 161.9, "mixfacenet-m": 626.1}

LINES = []


def report(num, title, ok, detail, seconds, limit):
    in_time = seconds < limit
    passed = bool(ok and in_time)
    LINES.append(f"{'PASS' if passed else 'FAIL'}  criterion {num:>2}: {title} | {detail} | "
                 f"{seconds:.2f}s (limit {limit:g}s)")
    return passed


def timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


# 1 + 2 ------------------------------------------------------------------------

def criterion_1():
    details, ok, worst = [], True, 0.0
    for name, target in PARAMS_M.items():
        def measure():
            return count_params(Network(preset(name))), count_params(Network(preset("shuffle" + name)))
        (p, twin), t = timed(measure)
        worst = max(worst, t / 2)
        err = abs(p / 1e6 - target) / target
        ok &= err <= 0.01 and p == twin
        details.append(f"{name} {p / 1e6:.4f}M vs {target}M ({err:+.2%}), twin {'=' if p == twin else '!='}")
    return ok, "; ".join(details), worst, 1.0


def criterion_2():
    details, ok, worst = [], True, 0.0
    for name, target in FLOPS_M.items():
        f, t = timed(lambda: count_flops(Network(preset(name))))
        worst = max(worst, t)
        err = abs(f / 1e6 - target) / target
        ok &= err <= 0.02
        details.append(f"{name} {f / 1e6:.2f}M vs {target}M ({err:+.2%})")
    return ok, "; ".join(details), worst, 1.0


# 3 + 4 ------------------------------------------------------------------------

def criterion_3():
    rng = np.random.default_rng(3)
    n_layers, mismatches = 0, 0
    for _ in range(3):
        for kind in KINDS:
            m, shape = random_layer(rng, kind)
            counter = ref.OpCounter()
            ref.run_layer(m, rng.standard_normal(shape), counter)
            n = shape[0]
            n_layers += 1
            mismatches += (counter.flops != n * count_flops(m, shape)) + (counter.macs != n * count_macs(m, shape))
    return mismatches == 0, f"{n_layers} layers, {mismatches} mismatches (flops and macs, exact)", None, 10.0


def criterion_4():
    rng = np.random.default_rng(4)
    cases, worst = 0, 0.0
    for i in range(110):
        m, shape = random_layer(rng, KINDS[i % len(KINDS)])
        x = rng.standard_normal(shape)
        worst = max(worst, float(np.max(np.abs(m(Tensor(x)).data - ref.run_layer(m, x, ref.OpCounter())))))
        cases += 1
    for _ in range(20):
        g = int(rng.integers(1, 5))
        x = rng.standard_normal((2, g * int(rng.integers(1, 6)), 3, 3))
        worst = max(worst, float(np.max(np.abs(channel_shuffle(Tensor(x), g).data - ref.shuffle_ref(x, g)))))
        cases += 1
    return worst <= 1e-5, f"{cases} random shapes over {len(KINDS) + 1} op kinds, max abs err {worst:.2e}", None, 30.0


# 5 + 6 ------------------------------------------------------------------------

def criterion_5():
    results = gradcheck_run(seed=0)
    bad = [r for r in results if not r.passed]
    worst = {d: max(r.rel_error for r in results if r.dtype == d) for d in ("float64", "float32")}
    detail = (f"{len(results) - len(bad)}/{len(results)} checks; worst 64-bit {worst['float64']:.1e} (tol 1e-6), "
              f"worst 32-bit {worst['float32']:.1e} (tol 1e-3)")
    if bad:
        detail += "; failing: " + ", ".join(f"{r.name}/{r.dtype}" for r in bad)
    return not bad, detail, None, 60.0


def criterion_6():
    checked, ok = 0, True
    for c in range(2, 65):
        for g in (g for g in range(1, c + 1) if c % g == 0):
            p, q = shuffle_permutation(c, g), shuffle_permutation(c, c // g)
            ok &= sorted(p.tolist()) == list(range(c))
            ok &= np.array_equal(p[q], np.arange(c))
            checked += 1
    x = np.arange(2 * 12 * 4, dtype=np.float64).reshape(2, 12, 2, 2)
    roundtrip = channel_shuffle(channel_shuffle(Tensor(x), 3), 4).data
    ok &= np.array_equal(roundtrip, x)
    return ok, f"{checked} (c, g) pairs, bijection and inverse exact", None, 5.0


# 7 ------------------------------------------------------------------------------

def criterion_7():
    tc = TrainConfig(steps=2000, seed=0, lr=0.1, momentum=0.9, weight_decay=5e-4,
                     margin=0.5, scale=64.0, eval_every=10, stop_at=0.95)
    a, b = train_toy(tc), train_toy(tc)
    same = [r[:2] for r in a.curve] == [r[:2] for r in b.curve] and all(
        np.array_equal(x.data, y.data) for x, y in zip(a.net.parameters(), b.net.parameters()))
    ok = a.final_accuracy >= 0.95 and a.steps_run <= 2000 and same
    return ok, (f"train accuracy {a.final_accuracy:.3f} at step {a.steps_run} (8 classes x 4), "
                f"repeat run bitwise {'identical' if same else 'DIFFERENT'}"), None, 300.0


# 8 ------------------------------------------------------------------------------

def _tar_oracle(g, i, far):
    for t in sorted(set(g) | set(i)):
        if sum(s >= t for s in i) / len(i) <= far:
            return sum(s >= t for s in g) / len(g)
    return 0.0


def _kfold_oracle(scores, labels, folds):
    accs = []
    for f in sorted(set(folds)):
        tr = [(s, l) for s, l, h in zip(scores, labels, folds) if h != f]
        te = [(s, l) for s, l, h in zip(scores, labels, folds) if h == f]
        u = sorted({s for s, _ in tr})
        best_t, best = None, -1
        for t in [-np.inf] + [(a + b) / 2 for a, b in zip(u, u[1:])] + [np.inf]:
            c = sum((s >= t) == (l == 1) for s, l in tr)
            if c > best:
                best_t, best = t, c
        accs.append(sum((s >= best_t) == (l == 1) for s, l in te) / len(te))
    return float(np.mean(accs))


def _rank1_oracle(P, pid, G, gid):
    hits = 0
    for p, want in zip(P, pid):
        d = [np.sqrt(((p - g) ** 2).sum()) for g in G]
        hits += gid[int(np.argmin(d))] == want
    return hits / len(P)


def criterion_8():
    rng = np.random.default_rng(8)
    sets, bad = 0, 0
    for _ in range(60):
        grid = int(rng.integers(2, 30))
        g = np.round(rng.normal(1, 1, int(rng.integers(1, 40))) * grid) / grid
        i = np.round(rng.normal(0, 1, int(rng.integers(1, 40))) * grid) / grid
        for far in (1e-3, 0.01, 0.1, 0.5):
            bad += tar_at_far(ScoreSet(g, i), far)[0] != _tar_oracle(g.tolist(), i.tolist(), far)
        labels = np.r_[np.ones(len(g), int), np.zeros(len(i), int)]
        scores = np.r_[g, i]
        perm = rng.permutation(len(scores))
        k = int(min(10, len(scores) // 2))
        if k >= 2:
            res = verification_accuracy_kfold(scores[perm], labels[perm], k=k)
            bad += res.mean != _kfold_oracle(scores[perm].tolist(), labels[perm].tolist(),
                                            sequential_folds(len(scores), k).tolist())
        G = np.round(rng.standard_normal((30, 5)) * 2) / 2
        gid = rng.integers(0, 8, 30)
        P, pid = rng.standard_normal((10, 5)), gid[rng.integers(0, 30, 10)]
        bad += rank1_identification(P, pid, G, gid, "euclidean") != _rank1_oracle(P, pid, G, gid)
        sets += 1
    return bad == 0, f"{sets} random score sets (tar at 4 FARs, kfold, rank-1), {bad} mismatches", None, 10.0


# 9 ------------------------------------------------------------------------------

def criterion_9():
    cfg = preset("mixfacenet-nano")
    net = Network(cfg, seed=9).eval()
    x = np.random.default_rng(9).uniform(-1, 1, (4, 3, *cfg.input_size)).astype(np.float32)
    with tempfile.TemporaryDirectory() as d:
        save_checkpoint(net, os.path.join(d, "n.mfnw"))
        back = load_checkpoint(os.path.join(d, "n.mfnw"))
    ref_out = forward(net, x, threads=1)
    round_trip = np.array_equal(ref_out, forward(back, x, threads=1))
    threaded = np.array_equal(ref_out, forward(net, x, threads=4))
    return round_trip and threaded, (f"save/load/forward {'bitwise equal' if round_trip else 'DIFFERS'}; "
                                     f"threads 1 vs 4 {'bitwise equal' if threaded else 'DIFFER'}"), None, 10.0


# 10 -----------------------------------------------------------------------------

def criterion_10():
    text = README.read_text(encoding="utf-8") if README.exists() else ""
    documented = "## Not reproduced" in text and "MS1MV2" in text
    return documented, ("benchmark accuracies (LFW, MegaFace, IJB) are not reproduced; replaced by criteria 1-9, "
                        f"statement {'present' if documented else 'MISSING'} in README"), None, 1.0


CRITERIA = [
    (1, "parameter budgets within 1%", criterion_1),
    (2, "FLOPs budgets at 112x112 within 2%", criterion_2),
    (3, "FLOPs counter equals instrumented loops", criterion_3),
    (4, "primitive ops match naive loops (1e-5 abs)", criterion_4),
    (5, "finite-difference gradient suite", criterion_5),
    (6, "channel shuffle algebra", criterion_6),
    (7, "toy ArcFace training reaches 95%", criterion_7),
    (8, "metric oracles", criterion_8),
    (9, "round trip and thread determinism", criterion_9),
    (10, "explicit non-reproduction of benchmarks", criterion_10),
]


def evaluate(num, title, fn):
    (ok, detail, seconds, limit), elapsed = timed(fn)
    return report(num, title, ok, detail, elapsed if seconds is None else seconds, limit)


@pytest.mark.parametrize("num,title,fn", CRITERIA, ids=[f"criterion_{c[0]}" for c in CRITERIA])
def test_criterion(num, title, fn):
    assert evaluate(num, title, fn), LINES[-1]


if __name__ == "__main__":
    results = [evaluate(*c) for c in CRITERIA]
    print("\n".join(LINES))
    sys.exit(0 if all(results) else 1)
