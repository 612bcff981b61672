"""End-to-end acceptance checks, each reported as one PASS/FAIL line in the summary.

The ablation and training checks train 15 models at 64×64 and take several
minutes; everything else finishes in seconds apart from the gradient suite.
"""
import time

import numpy as np
import pytest

from msodnet import checkpoint, config
from msodnet.ablation import PRESETS, format_report, run_ablation
from msodnet.cli import EXIT_OK, main
from msodnet.datakit import generate_dataset, read_histogram, read_index
from msodnet.datakit.netpbm import decode, encode
from msodnet.gradcheck import format_results, run_suite
from msodnet.layers import Conv, map_tensors
from msodnet.metrics import f_measure, mae, max_f, pr_curve, s_measure
from msodnet.model import N_STAGES, ModelConfig, as_image_tensor, backbone_forward, forward, init_params
from msodnet.nlgm import channel_affinity, channel_nonlocal, spatial_affinity, spatial_nonlocal
from msodnet.tensor import Tensor
from msodnet.training import TrainConfig, load_samples

from test_metrics import brute_curve, brute_mae, brute_max_f, random_pair
from test_nlgm import channel_loop, random_block, random_case, spatial_loop


def tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


# ---------------------------------------------------------------- gradients


def test_gradient_suite(criterion, capsys):
    t0 = time.perf_counter()
    results = []
    for seed in range(5):
        results += run_suite(seed)
    seconds = time.perf_counter() - t0
    failed = [r.name for r in results if not r.passed]
    worst = max(r.max_rel_err for r in results)
    with capsys.disabled():
        print("\n" + format_results(results))
    ok = not failed and seconds < 300
    assert criterion("gradient suite: 33 ops + end-to-end loss, 5 seeds, rel err < 1e-3, < 5 min", ok,
                     f"{len(results)} checks, worst {worst:.2e}, {seconds:.0f}s, failed {failed}")


# ---------------------------------------------------------------- non-local blocks


def test_nonlocal_oracles(criterion):
    worst_sn = worst_cn = worst_rows = 0.0
    for seed in range(50):
        a, p = random_case(seed)
        expected_sn, S_loop = spatial_loop(a, p)
        expected_cn, X_loop = channel_loop(a)
        worst_sn = max(worst_sn, np.abs(spatial_nonlocal(Tensor(a), p).data - expected_sn).max())
        worst_cn = max(worst_cn, np.abs(channel_nonlocal(Tensor(a)).data - expected_cn).max())
        S = spatial_affinity(Tensor(a), p).data
        X = channel_affinity(Tensor(a)).data
        worst_sn = max(worst_sn, np.abs(S - S_loop).max())
        worst_cn = max(worst_cn, np.abs(X - X_loop).max())
        worst_rows = max(worst_rows, np.abs(S.sum(axis=1) - 1).max(), np.abs(X.sum(axis=1) - 1).max())

    rng = np.random.default_rng(0)
    a = rng.uniform(-1, 1, (3, 3, 4))
    p = random_block(rng, 3)
    p.value = Conv(Tensor(np.zeros((3, 3, 1, 1))), Tensor(np.zeros(3)))
    zero_value = np.array_equal(spatial_nonlocal(Tensor(a), p).data, a)
    one = rng.uniform(-1, 1, (1, 3, 4))
    single_channel = np.array_equal(channel_nonlocal(Tensor(one)).data, 2 * one)
    zero_input = not channel_nonlocal(Tensor(np.zeros((3, 2, 2)))).data.any()

    ok = max(worst_sn, worst_cn, worst_rows) <= 1e-12 and zero_value and single_channel and zero_input
    assert criterion("non-local oracles: 50 loop transcriptions within 1e-12, stochastic rows, exact identities", ok,
                     f"spatial {worst_sn:.1e}, channel {worst_cn:.1e}, rows {worst_rows:.1e}, "
                     f"identities {zero_value}/{single_channel}/{zero_input}")


# ---------------------------------------------------------------- metrics


def test_metric_oracles(criterion):
    exact = 0
    for seed in range(100):
        pred, gt = random_pair(seed)
        c = pr_curve(pred, gt)
        P, R = brute_curve(pred, gt)
        exact += (c.precision.tolist() == P and c.recall.tolist() == R and max_f(c) == brute_max_f(P, R)
                  and mae(pred, gt) == brute_mae(pred, gt.astype(float)))
    gt = np.zeros((8, 8))
    gt[2:5, 1:6] = 1
    mae_cases = mae(gt, gt) == 0.0 and mae(1 - gt, gt) == 1.0
    symmetric = all(f_measure(x, x) == pytest.approx(x, abs=1e-15) for x in np.linspace(0.01, 1, 100))
    self_s = all(abs(s_measure(g.astype(float), g) - 1) <= 1e-6 for g in (random_pair(k)[1] for k in range(20)))
    empty, full = np.zeros((8, 8)), np.ones((8, 8))
    empty_curve = pr_curve(np.full((8, 8), 0.2), empty)
    degenerate = (s_measure(np.zeros((8, 8)), empty) == 1.0 and s_measure(np.ones((8, 8)), empty) == 0.0
                  and s_measure(np.full((8, 8), 0.2), empty) == pytest.approx(0.8)
                  and s_measure(np.full((8, 8), 0.2), full) == pytest.approx(0.2)
                  and empty_curve.empty_gt and bool(np.all(empty_curve.recall == 1)))
    ok = exact == 100 and mae_cases and symmetric and self_s and degenerate
    assert criterion("metric oracles: brute-force PR/maxF/MAE on 100 pairs, analytic and degenerate cases", ok,
                     f"{exact}/100 exact, mae {mae_cases}, F symmetry {symmetric}, S(gt,gt) {self_s}, "
                     f"degenerate {degenerate}")


# ---------------------------------------------------------------- ablation and training


@pytest.fixture(scope="module")
def ablation(tmp_path_factory):
    root = tmp_path_factory.mktemp("ablation")
    train_index = generate_dataset(root / "train", 200, seed=101, size=(64, 64), min_objects=3, max_objects=6)
    test_index = generate_dataset(root / "test", 100, seed=202, size=(64, 64), min_objects=3, max_objects=6)
    train_data = load_samples(train_index)
    test_data = [(r.image, x, m) for r, (x, m, _) in zip(test_index, load_samples(test_index))]
    t0 = time.perf_counter()
    report = run_ablation("modules", train_data, test_data, ModelConfig(), TrainConfig(steps=300), seeds=(0, 1, 2))
    return report, time.perf_counter() - t0


def test_ablation_direction(criterion, ablation, capsys):
    report, seconds = ablation
    with capsys.disabled():
        print("\n" + format_report(report))
    med = report.medians()
    rows = [v for v, _ in PRESETS["modules"]]
    all_rows = all(v in med for v in rows) and len(report.runs) == 15
    violations = report.violations()
    ok = all_rows and not violations and seconds < 45 * 60
    detail = ", ".join(f"{v} {med[v][0]:.4f}" for v in rows if v in med)
    assert criterion("ablation: median test maxF with NLGM >= without, full model >= baseline, < 45 min", ok,
                     f"{detail}; violations {[(a, b) for a, b, *_ in violations]}; {seconds / 60:.1f} min")


def test_training_sanity(criterion, ablation, tmp_path):
    report, _ = ablation
    ratios = [r.loss_ratio for r in report.runs if r.variant == "nlgm+ffg+erm"]
    reduces = len(ratios) == 3 and all(r < 0.5 for r in ratios)

    data = tmp_path / "data"
    tiny = ["--set", "widths=2,2,3,3,4,4", "--set", "image_size=32", "--set", "max_objects=4", "-q"]
    assert main(["gen", str(data), "--set", "n_scenes=4", *tiny]) == EXIT_OK
    assert main(["train", str(data / "index.tsv"), str(tmp_path / "z.ckpt"), "--set", "lr=0", "--set", "steps=5",
                 "--set", "seed=11", *tiny]) == EXIT_OK
    cfg = config.load(tmp_path / "z.ckpt.cfg")
    frozen = (tmp_path / "z.ckpt").read_bytes() == checkpoint.encode_params(init_params(cfg.model_config(), 11))
    ok = reduces and frozen
    assert criterion("training: full-model smoothed loss < 50% of initial on every seed; lr=0 keeps init bytes", ok,
                     f"ratios {[round(r, 3) for r in ratios]}, lr=0 identical {frozen}")


# ---------------------------------------------------------------- curation


def test_curation(criterion, tmp_path):
    index = generate_dataset(tmp_path, 100, seed=17, size=(64, 64), min_objects=1, max_objects=19)
    counts = [r.count for r in index]
    spans = min(counts) == 1 and max(counts) == 19
    assert main(["curate", str(tmp_path / "index.tsv"), "--min-objects", "3", "-q"]) == EXIT_OK
    kept = read_index(tmp_path / "curated.tsv")
    expected = [r.image for r in index if r.count >= 3]
    exact = [r.image for r in kept] == expected and [r.count for r in kept] == [c for c in counts if c >= 3]
    hist = read_histogram(tmp_path / "curated_histogram.tsv")
    support = bool(hist) and min(hist) >= 3 and max(hist) <= 19 and sum(hist.values()) == len(expected)
    ok = spans and exact and support
    assert criterion("curation: --min-objects 3 keeps exactly the count >= 3 subset, histogram within [3,19]", ok,
                     f"counts {min(counts)}..{max(counts)}, kept {len(kept)}/{len(expected)} expected, "
                     f"histogram support {min(hist) if hist else None}..{max(hist) if hist else None}")


# ---------------------------------------------------------------- determinism and I/O


def test_determinism_and_io(criterion, tmp_path):
    tiny = ["--set", "widths=2,2,3,3,4,4", "--set", "image_size=32", "--set", "max_objects=4", "-q"]
    for run in ("a", "b"):
        d = tmp_path / run
        assert main(["gen", str(d / "data"), "--set", "n_scenes=5", "--set", "seed=8", *tiny]) == EXIT_OK
        assert main(["train", str(d / "data" / "index.tsv"), str(d / "m.ckpt"), "--set", "steps=4", *tiny]) == EXIT_OK
        assert main(["predict", str(d / "m.ckpt"), str(d / "data" / "images"), str(d / "pred"), "-q"]) == EXIT_OK
    same_data = tree_bytes(tmp_path / "a" / "data") == tree_bytes(tmp_path / "b" / "data")
    same_ckpt = (tmp_path / "a" / "m.ckpt").read_bytes() == (tmp_path / "b" / "m.ckpt").read_bytes()
    same_pred = tree_bytes(tmp_path / "a" / "pred") == tree_bytes(tmp_path / "b" / "pred")

    cfg = config.load(tmp_path / "a" / "m.ckpt.cfg")
    params = checkpoint.load_into(tmp_path / "a" / "m.ckpt", init_params(cfg.model_config(), 0))
    checkpoint.save(tmp_path / "again.ckpt", params)
    ckpt_trip = (tmp_path / "again.ckpt").read_bytes() == (tmp_path / "a" / "m.ckpt").read_bytes()
    image_trip = all(encode(decode(p.read_bytes())) == p.read_bytes()
                     for p in sorted((tmp_path / "a").rglob("*.p[gp]m")))
    ok = same_data and same_ckpt and same_pred and ckpt_trip and image_trip
    assert criterion("determinism and I/O: identical datasets, checkpoints, predictions; byte-exact round trips", ok,
                     f"data {same_data}, checkpoint {same_ckpt}, predictions {same_pred}, "
                     f"checkpoint trip {ckpt_trip}, image trip {image_trip}")


# ---------------------------------------------------------------- structure


def test_structure(criterion):
    cfg = ModelConfig(widths=(2, 2, 3, 3, 4, 4))
    params = init_params(cfg, 0)
    image = np.random.default_rng(0).random((64, 96, 3))
    side = backbone_forward(as_image_tensor(image), params)
    strides = [(64 // s.shape[1], 96 // s.shape[2]) for s in side]
    backbone_ok = len(side) == 6 and strides == [(2**i, 2**i) for i in range(6)]
    out = forward(as_image_tensor(image), params, cfg)
    decoder_ok = (len(out.features) == N_STAGES == len(out.side_logits)
                  and all(lg.shape[0] == 1 for lg in out.side_logits)
                  and all(f.shape[1:] == s.shape[1:] for f, s in zip(out.features, side)))

    off = ModelConfig(widths=(2, 2, 3, 3, 4, 4), nlgm=False)
    probes_off = forward(as_image_tensor(image), init_params(off, 0), off).probes
    off_zero = len(probes_off) == 5 and all(not p["nonlocal_edge"].any() for p in probes_off.values())
    # the same holds with the module present but its output convolutions zeroed
    silenced = map_tensors(params, lambda n, t: Tensor(np.zeros(t.shape)) if ".out." in n else t)
    probes_zeroed = forward(as_image_tensor(image), silenced, cfg).probes
    zeroed = all(not p["nonlocal_edge"].any() for p in probes_zeroed.values())
    active = any(p["nonlocal_edge"].any() for p in out.probes.values())
    ok = backbone_ok and decoder_ok and off_zero and zeroed and active
    assert criterion("structure: 6 side outputs at strides 1..32, 6 features and logits, non-local branch probe", ok,
                     f"strides {[s[0] for s in strides]}, decoder {decoder_ok}, off-probe zero {off_zero}, "
                     f"zeroed-output probe zero {zeroed}, on-probe active {active}")
