"""Acceptance criteria C1 to C10.

Each test prints exactly one ``[PASS]``/``[FAIL]`` line with the measured
value, the tolerance and the runtime. The lines are repeated in pytest's
terminal summary under "acceptance criteria".
"""

import statistics
import time
from dataclasses import replace

import numpy as np
import pytest
from _oracles import gradcheck, naive_pool, pairwise_auroc, random_small_head

from tomofuse.featpool import PoolMethod, ToyExtractor, pool_depth
from tomofuse.fusion import RankVariant, dynamic_image_raw, rank_pool_coefficients
from tomofuse.learner.checkpoint import checkpoint_bytes
from tomofuse.learner.sampling import ALL_AUGMENTATIONS, augment, balanced_batches
from tomofuse.learner.training import Featurizer, Fusion, FusionConfig, TrainConfig, score_entries, train
from tomofuse.metrics import EvalReport, auroc
from tomofuse.synth import LesionSpec, SynthSpec, synth_generate
from tomofuse.volcore import Label, Split, View, Volume, tensor_from_bytes, tensor_to_bytes

# The criterion-5 dataset: 400 volumes, 128 x 128, depth 8..16, contrast 0.5, noise 0.05, 80/20 split.
C5_SPEC = SynthSpec(n_negative=300, n_positive=100, depth_range=(8, 16), slice_size=(128, 128),
                    lesion=LesionSpec(contrast=0.5, span=3), noise_sigma=0.05, test_fraction=0.2, seed=0)
C6_SPEC = replace(C5_SPEC, lesion=replace(C5_SPEC.lesion, span=2))
C5_SEEDS = (0, 1, 2)
C67_SEEDS = (0, 1, 2, 3, 4)
C67_EPOCHS = 60


def _trained_test_auroc(entries, root, fusion, seeds, epochs, extractor, cache):
    test = [e for e in entries if e.split is Split.TEST]
    y = [e.label.target for e in test]
    out = []
    for seed in seeds:
        cfg = TrainConfig(seed=seed, epochs=epochs, fusion=fusion)
        result = train(cfg, entries, extractor, root, cache)
        out.append(auroc(score_entries(result.head, Featurizer(extractor, fusion, root, cache), test), y))
    return out


def test_c1_coefficient_zero_sum(criterion):
    t0 = time.perf_counter()
    worst_sum = max(abs(rank_pool_coefficients(T, v).sum()) for T in range(1, 65) for v in RankVariant)
    rng = np.random.default_rng(1)
    worst_energy = 0.0
    for T in range(1, 65):
        level = rng.uniform(-2, 2, size=(1, 8, 8))
        v = Volume(np.repeat(level, T, axis=0).astype(np.float32), View.CC, Label.NEGATIVE, "c")
        for variant in RankVariant:
            worst_energy = max(worst_energy, float(np.abs(dynamic_image_raw(v, variant)).max()))
    dt = time.perf_counter() - t0
    ok = worst_sum < 1e-9 and worst_energy < 1e-6 and dt < 1.0
    criterion("C1 coefficient zero-sum", ok,
              f"max|sum alpha| {worst_sum:.1e} (<1e-9), constant-volume max|pixel| {worst_energy:.1e} (<1e-6), "
              f"{dt:.2f}s (<1s)")
    assert ok


def test_c2_pooling_oracle(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    exact = perm_ok = True
    worst_avg = 0.0
    for _ in range(100):
        shape = tuple(int(s) for s in rng.integers(1, [7, 9, 17, 17]))
        maps = rng.normal(0, 10, size=shape).astype(np.float32)
        shuffled = maps[rng.permutation(shape[0])]
        for m in ("min", "max"):
            exact &= np.array_equal(pool_depth(maps, m), naive_pool(maps, m))
            perm_ok &= np.array_equal(pool_depth(shuffled, m), pool_depth(maps, m))
        worst_avg = max(worst_avg, float(np.abs(pool_depth(maps, "avg") - naive_pool(maps, "avg")).max()))
        perm_ok &= bool(np.allclose(pool_depth(shuffled, "avg"), pool_depth(maps, "avg"), rtol=0, atol=1e-6))
    dt = time.perf_counter() - t0
    ok = exact and perm_ok and worst_avg <= 1e-7 and dt < 5.0
    criterion("C2 pooling oracle", ok,
              f"min/max exact={exact}, avg max err {worst_avg:.1e} (<=1e-7), permutation invariant={perm_ok}, "
              f"{dt:.2f}s (<5s)")
    assert ok


def test_c3_auroc_oracle(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    mismatches = 0
    for _ in range(200):
        n = int(rng.integers(2, 201))
        y = rng.integers(0, 2, size=n)
        y[0], y[1] = 0, 1
        # coarse grid of score values forces many ties
        s = rng.integers(0, int(rng.integers(2, 20)), size=n) / 7.0
        mismatches += auroc(s, y) != pairwise_auroc(s.tolist(), y.tolist())
    hand = auroc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
    dt = time.perf_counter() - t0
    ok = mismatches == 0 and hand == 0.75 and dt < 5.0
    criterion("C3 auROC oracle", ok,
              f"{200 - mismatches}/200 exact matches with the all-pairs count, hand case {hand} (=0.75), "
              f"{dt:.2f}s (<5s)")
    assert ok


def test_c4_gradient_check(criterion):
    t0 = time.perf_counter()
    errors = []
    for i in range(20):
        head, x, t = random_small_head(np.random.default_rng([4, i]), dropout=0.5 if i % 2 else 0.0)
        errors.append(gradcheck(head, x, t, delta=1e-4, mask_seed=i if i % 2 else None))
    dt = time.perf_counter() - t0
    ok = max(errors) < 1e-4 and dt < 30.0
    criterion("C4 gradient check", ok, f"max relative error {max(errors):.1e} over 20 heads (<1e-4), {dt:.2f}s (<30s)")
    assert ok


@pytest.mark.slow
def test_c5_end_to_end_learnability(criterion, tmp_path):
    t0 = time.perf_counter()
    entries = synth_generate(C5_SPEC, tmp_path)
    extractor = ToyExtractor.from_preset("desk", seed=0)
    aucs = _trained_test_auroc(entries, tmp_path, FusionConfig(Fusion.LATE, PoolMethod.MAX), C5_SEEDS, 20,
                               extractor, {})
    med = statistics.median(aucs)
    dt = time.perf_counter() - t0
    ok = med >= 0.90 and dt < 300.0
    criterion("C5 end-to-end learnability", ok,
              f"late+max median test auROC {med:.3f} (>=0.90; seeds {', '.join(f'{a:.3f}' for a in aucs)}), "
              f"20 epochs, {dt:.0f}s (<300s)")
    assert ok


@pytest.fixture(scope="module")
def span2_results(tmp_path_factory):
    root = tmp_path_factory.mktemp("span2")
    t0 = time.perf_counter()
    entries = synth_generate(C6_SPEC, root)
    extractor = ToyExtractor.from_preset("desk", seed=0)
    cache = {}
    fusions = {
        "max": FusionConfig(Fusion.LATE, PoolMethod.MAX),
        "avg": FusionConfig(Fusion.LATE, PoolMethod.AVG),
        "min": FusionConfig(Fusion.LATE, PoolMethod.MIN),
        "early-average": FusionConfig(Fusion.EARLY_AVERAGE),
        "early-dynamic": FusionConfig(Fusion.EARLY_DYNAMIC),
    }
    results, timings = {}, {}
    for name, fusion in fusions.items():
        t1 = time.perf_counter()
        results[name] = _trained_test_auroc(entries, root, fusion, C67_SEEDS, C67_EPOCHS, extractor, cache)
        timings[name] = time.perf_counter() - t1
    timings["synth"] = time.perf_counter() - t0 - sum(timings.values())
    return results, timings


@pytest.mark.slow
def test_c6_pooling_ordering(criterion, span2_results):
    results, timings = span2_results
    med = {k: statistics.median(v) for k, v in results.items()}
    dt = timings["synth"] + timings["max"] + timings["avg"] + timings["min"]
    ok = med["max"] - med["avg"] >= -0.02 and med["avg"] - med["min"] >= -0.02 and dt < 900.0
    criterion("C6 pooling ordering", ok,
              f"median auROC max {med['max']:.3f} >= avg {med['avg']:.3f} >= min {med['min']:.3f} "
              f"(gaps >= -0.02), span 2, {len(C67_SEEDS)} seeds, {C67_EPOCHS} epochs, {dt:.0f}s (<900s)")
    assert ok


@pytest.mark.slow
def test_c7_fusion_ordering(criterion, span2_results):
    results, timings = span2_results
    med = {k: statistics.median(v) for k, v in results.items()}
    dt = timings["synth"] + timings["max"] + timings["early-average"] + timings["early-dynamic"]
    margin = min(med["max"] - med["early-average"], med["max"] - med["early-dynamic"])
    ok = margin >= 0.02 and dt < 900.0
    criterion("C7 fusion ordering", ok,
              f"late+max {med['max']:.3f} vs early-average {med['early-average']:.3f}, "
              f"early-dynamic {med['early-dynamic']:.3f}: margin {margin:.3f} (>=0.02), {dt:.0f}s (<900s)")
    assert ok


def test_c8_shape_contracts(criterion):
    t0 = time.perf_counter()
    img = np.random.default_rng(8).random((1024, 1024)).astype(np.float32)
    want = {"alexnet-like": (256, 31, 31), "resnet-like": (2048, 4, 4), "xception-like": (2048, 32, 32)}
    got = {}
    for preset in want:
        e = ToyExtractor.from_preset(preset)
        got[preset] = (e.output_shape(1024, 1024), e.extract(img).shape)
    presets_ok = all(got[p] == (want[p], want[p]) for p in want)
    rng = np.random.default_rng(9)
    desk = ToyExtractor.from_preset("desk")
    fz = Featurizer(desk, FusionConfig(Fusion.LATE, PoolMethod.MAX))
    late = {}
    for T in (8, 16):
        v = Volume(rng.random((T, 128, 128)).astype(np.float32), View.CC, Label.NEGATIVE, f"t{T}")
        late[T] = fz.compute(v)[PoolMethod.MAX].shape
    dt = time.perf_counter() - t0
    ok = presets_ok and late[8] == late[16] and dt < 10.0
    shapes = ", ".join(f"{p} {'x'.join(map(str, got[p][1]))}" for p in want)
    criterion("C8 shape contracts", ok,
              f"{shapes} at 1024x1024 (expected {'/'.join('x'.join(map(str, s)) for s in want.values())}); "
              f"late fusion T=8 {late[8]} == T=16 {late[16]}, {dt:.2f}s (<10s)")
    assert ok


def test_c9_sampler_and_augmentation(criterion):
    t0 = time.perf_counter()
    targets = np.array([0] * 3018 + [1] * 272)
    batches = balanced_batches(targets, 256, 0)
    counts_ok = len(batches) == 24 and all(len(b) == 256 and targets[b].sum() == 128 for b in batches)
    rng = np.random.default_rng(10)
    balanced_ok = True
    for _ in range(50):
        n_neg, n_pos, half = (int(v) for v in rng.integers(1, [300, 300, 40]))
        t = np.array([0] * n_neg + [1] * n_pos)
        balanced_ok &= all((t[b] == 1).sum() == half == (t[b] == 0).sum()
                           for b in balanced_batches(t, 2 * half, int(rng.integers(1 << 30))))
    idx = np.arange(64).reshape(8, 8)
    images = [augment(idx, a) for a in ALL_AUGMENTATIONS]
    bijective = all(sorted(im.ravel().tolist()) == list(range(64)) for im in images)
    distinct = len({im.tobytes() for im in images}) == 8
    inverse_ok = all(np.array_equal(augment(augment(img, a), a.inverse()), img)
                     for img in rng.random((10, 3, 16, 16)) for a in ALL_AUGMENTATIONS)
    dt = time.perf_counter() - t0
    ok = counts_ok and balanced_ok and bijective and distinct and inverse_ok and dt < 5.0
    criterion("C9 sampler and augmentation", ok,
              f"3018/272 at 256 -> {len(batches)} batches of 128/128 ({counts_ok}), all random batches balanced "
              f"({balanced_ok}), 8 distinct bijections ({bijective and distinct}), inverse restores ({inverse_ok}), "
              f"{dt:.2f}s (<5s)")
    assert ok


def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_c10_determinism_and_io(criterion, tmp_path):
    t0 = time.perf_counter()
    spec = SynthSpec(n_negative=12, n_positive=6, depth_range=(3, 5), slice_size=(32, 32),
                     lesion=LesionSpec((3.0, 5.0), 0.5, 2), clutter_count=(5, 10), seed=10)
    extractor = ToyExtractor(8, 5, 2, 2, seed=0)
    cfg = TrainConfig(batch_size=8, epochs=3, hidden=16, conv_filters=4, learning_rate=1e-3)
    trees, ckpts, reports = [], [], []
    for run in ("a", "b"):
        root = tmp_path / run
        entries = synth_generate(spec, root / "data")
        trees.append(_tree(root / "data"))
        result = train(cfg, entries, extractor, root / "data")
        ckpts.append(checkpoint_bytes(result.head, {"train.seed": cfg.seed}))
        test = [e for e in entries if e.split is Split.TEST]
        scores = score_entries(result.head, Featurizer(extractor, cfg.fusion, root / "data"), test)
        EvalReport(scores, [e.label.target for e in test], [e.volume_id for e in test],
                   {"fusion": cfg.fusion.describe()}).write(root / "report")
        reports.append(_tree(root / "report"))
    rng = np.random.default_rng(11)
    roundtrip = 0
    for _ in range(50):
        shape = tuple(int(s) for s in rng.integers(1, 6, size=int(rng.integers(1, 5))))
        t = (rng.standard_normal(shape) * 10.0 ** rng.integers(-30, 30)).astype(np.float32)
        roundtrip += tensor_from_bytes(tensor_to_bytes(t)).tobytes() == t.tobytes()
    dt = time.perf_counter() - t0
    same = (trees[0] == trees[1], ckpts[0] == ckpts[1], reports[0] == reports[1])
    ok = all(same) and roundtrip == 50 and dt < 10.0
    criterion("C10 determinism and I/O", ok,
              f"dataset identical={same[0]}, checkpoint identical={same[1]}, report identical={same[2]}, "
              f".ten roundtrip {roundtrip}/50 bit-exact, {dt:.2f}s (<10s)")
    assert ok
