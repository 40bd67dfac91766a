"""Acceptance suite: one PASS/FAIL line per criterion.

Run alone with ``pytest tests/test_acceptance.py -v`` (lines are repeated in
the terminal summary) or ``python tests/test_acceptance.py``.
"""

import sys
import time

import numpy as np
import pytest

from arnsal import ops
from arnsal.attention import SelfAttention
from arnsal.autograd import Tensor, no_grad
from arnsal.cli import main
from arnsal.metrics import evaluate_set, f_measure, mae, pr_at_threshold, pr_counts
from arnsal.network import NetConfig, SaliencyModel
from arnsal.rcl import RclUnit
from arnsal.selftest import gradient_suite
from arnsal.trainer import TrainConfig, load_checkpoint, train
from arnsal.datapipe import DatasetManifest, load_manifest_samples, preprocess, synth_generate

import oracles


def test_1_gradient_suite(verdict):
    t0 = time.perf_counter()
    reports = gradient_suite(seed=0)
    elapsed = time.perf_counter() - t0
    names = {r.name.split("[")[0] for r in reports}
    required = {"conv2d", "conv_transpose2d", "maxpool2x2", "relu", "lrn", "softmax_cols", "sigmoid", "matmul",
                "attention", "rcl(t_steps=2)", "model 32x32 (sum of output)"}
    worst = max(reports, key=lambda r: r.max_rel_error)
    ok = required <= names and all(r.max_rel_error < 1e-4 for r in reports) and elapsed < 120
    verdict("1 gradient suite", ok,
            f"{len(reports)} checks, worst {worst.name} {worst.max_rel_error:.2e}, {elapsed:.1f}s")


def test_2_attention_identity(verdict):
    rng = np.random.default_rng(2)
    identical = 0
    for i in range(50):
        c = int(rng.integers(1, 17))
        att = SelfAttention("att", c)
        att.init_parameters(rng)
        x = rng.standard_normal((c, int(rng.integers(1, 9)), int(rng.integers(1, 9)))) * 10 ** rng.uniform(-3, 3)
        with no_grad():
            identical += att(Tensor(x)).data.tobytes() == x.tobytes()
    model = SaliencyModel()
    image = rng.standard_normal((3, 64, 64)) * 60
    with no_grad():
        taps = model.backbone_forward(image)
        same = model.arn_forward(*taps).data.tobytes() == model.arn_forward(*taps, attention=False).data.tobytes()
    verdict("2 attention identity at gamma=0", identical == 50 and same,
            f"{identical}/50 inputs bitwise, model vs ablation bitwise={same}")


def test_3_attention_stochastic(verdict):
    rng = np.random.default_rng(3)
    worst, in_range = 0.0, True
    for _ in range(100):
        c = int(rng.integers(1, 17))
        att = SelfAttention("att", c)
        att.init_parameters(rng)
        x = Tensor(rng.standard_normal((c, int(rng.integers(1, 9)), int(rng.integers(1, 9)))) * rng.uniform(0.1, 50))
        with no_grad():
            beta = att.attention_map(x).data
        worst = max(worst, float(np.abs(beta.sum(axis=0) - 1).max()))
        in_range &= bool(beta.min() >= 0 and beta.max() <= 1)
    verdict("3 attention columns stochastic", worst <= 1e-9 and in_range, f"max |colsum-1| {worst:.1e} over 100 inputs")


def test_4_rcl_oracle(verdict):
    rng = np.random.default_rng(4)
    u = Tensor(rng.standard_normal((2, 4, 4)))
    worst = 0.0
    collapse = True
    for t in (0, 1, 2):
        unit = RclUnit("rcl", 2, 2, t_steps=t)
        unit.init_parameters(np.random.default_rng(40))
        unit.b.data[...] = [0.2, -0.1]

        def g(z):
            return ops.lrn(ops.relu(z), 1e-4, 0.75, 5)

        x = g(ops.conv2d(u, unit.w_f, unit.b, pad=1))
        for _ in range(t):
            x = g(ops.add(ops.conv2d(u, unit.w_f, unit.b, pad=1), ops.conv2d(x, unit.w_r, pad=1)))
        worst = max(worst, float(np.abs(unit(u).data - x.data).max()))
        unit.w_r.data[...] = 0.0
        base = RclUnit("rcl", 2, 2, t_steps=0)
        base.w_f.data[...], base.b.data[...] = unit.w_f.data, unit.b.data
        collapse &= unit(u).data.tobytes() == base(u).data.tobytes()
    verdict("4 rcl unrolled oracle", worst <= 1e-12 and collapse, f"max diff {worst:.1e}, w_r=0 collapse={collapse}")


def test_5_metrics_oracle(verdict):
    rng = np.random.default_rng(5)
    counts_ok, worst = True, 0.0
    for _ in range(20):
        pred = rng.random((1, 8, 8))
        mask = (rng.random((1, 8, 8)) > 0.5).astype(float)
        tp, npred, npos = pr_counts(pred, mask)
        for thr in range(256):
            otp, ofp, ofn = oracles.pr_counts_loops(pred, mask, thr)
            counts_ok &= (tp[thr], npred[thr] - tp[thr], npos - tp[thr]) == (otp, ofp, ofn)
            p, r = pr_at_threshold(pred, mask, thr)
            wp = otp / (otp + ofp) if otp + ofp else 1.0
            wr = otp / (otp + ofn) if otp + ofn else 1.0
            wf = 1.3 * wp * wr / (0.3 * wp + wr) if 0.3 * wp + wr else 0.0
            worst = max(worst, abs(p - wp), abs(r - wr), abs(f_measure(p, r) - wf))
        want_mae = sum(abs(a - b) for a, b in zip(pred.ravel(), mask.ravel())) / 64
        worst = max(worst, abs(mae(pred, mask) - want_mae))
    equal_rates = all(f_measure(p, p) == p for p in (0.0, 0.25, 0.5, 1.0))
    verdict("5 metrics oracle", counts_ok and worst <= 1e-12 and equal_rates,
            f"counts exact={counts_ok}, max ratio diff {worst:.1e}, f(p,p)==p {equal_rates}")


def test_6_shape_ladder(verdict):
    shapes = SaliencyModel(NetConfig(input_size=224, width_mult=1.0, rcl_channels=64, decoder_channels=64),
                           init=False).trace_shapes()
    sizes = [shapes[k][1] for k in ("L2", "L3", "L4", "S5")]
    verdict("6 shape ladder at 224", sizes == [112, 56, 28, 14] and shapes["output"] == (1, 224, 224),
            f"sides {sizes}, output {shapes['output']}")


def test_8_persistence(verdict, tmp_path):
    m = synth_generate(4, 64, 8, tmp_path / "data")
    samples = load_manifest_samples(m, 64)
    cfg = TrainConfig(steps=6)
    full = train(SaliencyModel(), samples, cfg, m.channel_means)
    ckpt = tmp_path / "r.ckpt"
    model = SaliencyModel()
    first = train(model, samples, TrainConfig(steps=3), m.channel_means, checkpoint_path=ckpt)
    state = load_checkpoint(ckpt)
    bitwise = all(
        a.tobytes() == b.tobytes()
        for p, q in zip(model.parameters(), state.model.parameters())
        for a, b in ((p.data, q.data), (p.adam_m, q.adam_m), (p.adam_v, q.adam_v))
    ) and state.step == 3
    rest = train(state.model, samples, cfg, state.channel_means, start_step=state.step)
    verdict("8 persistence and resume", bitwise and first + rest == full,
            f"round-trip bitwise={bitwise}, resumed losses identical={first + rest == full}")


# -- end-to-end runs (criteria 7 and 9) -----------------------------------------


def _pipeline(root):
    data, ckpt, pred, csv = root / "data", root / "model.ckpt", root / "pred", root / "metrics.csv"
    assert main(["synth", "--count", "16", "--size", "64", "--seed", "7", "--out", str(data)]) == 0
    t0 = time.perf_counter()
    assert main(["train", "--data", str(data), "--ckpt", str(ckpt), "--steps", "500", "--print-every", "100"]) == 0
    seconds = time.perf_counter() - t0
    assert main(["infer", "--ckpt", str(ckpt), "--image", str(data / "images"), "--out", str(pred)]) == 0
    assert main(["eval", "--pred-dir", str(pred), "--mask-dir", str(data / "masks"), "--csv", str(csv)]) == 0
    return dict(root=root, data=data, ckpt=ckpt, pred=pred, csv=csv, seconds=seconds)


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    return [_pipeline(tmp_path_factory.mktemp(f"run{i}")) for i in range(2)]


def _summary(csv_path):
    out = {}
    for line in csv_path.read_text().splitlines():
        key, *vals = line.split(",")
        if key in ("max_f", "mae"):
            out[key] = float(vals[0])
    return out


def test_7_desk_scale_overfit(verdict, runs):
    run = runs[0]
    losses = [float(line.split("\t")[1]) for line in (run["root"] / "model.ckpt.loss.tsv").read_text().splitlines()]
    head, tail = float(np.mean(losses[:10])), float(np.mean(losses[-100:]))
    csv = _summary(run["csv"])
    # the same numbers straight from the float model, without 8-bit quantization
    state = load_checkpoint(run["ckpt"])
    samples = load_manifest_samples(DatasetManifest.read(run["data"]), 64)
    rep = evaluate_set([(state.model.predict(preprocess(s, state.channel_means)), s.mask) for s in samples])
    ok = (len(losses) == 500 and csv["mae"] < 0.10 and csv["max_f"] > 0.85 and rep.mae < 0.10 and rep.max_f > 0.85
          and tail < head and run["seconds"] < 900)
    verdict("7 desk-scale overfit", ok,
            f"mae {csv['mae']:.4f} (float {rep.mae:.4f}), max-F {csv['max_f']:.4f} (float {rep.max_f:.4f}), "
            f"loss first10 {head:.4f} -> last100 {tail:.4f}, train {run['seconds']:.0f}s")


def test_9_end_to_end_determinism(verdict, runs):
    a, b = runs
    maps_a = {p.name: p.read_bytes() for p in sorted(a["pred"].glob("*.png"))}
    maps_b = {p.name: p.read_bytes() for p in sorted(b["pred"].glob("*.png"))}
    same_maps = len(maps_a) == 16 and maps_a == maps_b
    same_csv = a["csv"].read_bytes() == b["csv"].read_bytes()
    same_ckpt = a["ckpt"].read_bytes() == b["ckpt"].read_bytes()
    verdict("9 end-to-end determinism", same_maps and same_csv,
            f"16 maps identical={same_maps}, csv identical={same_csv}, checkpoints identical={same_ckpt}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
