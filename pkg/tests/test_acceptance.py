"""Exit criteria for the build, one test per criterion.

Each test records a PASS/FAIL line that is printed in the pytest terminal
summary under "acceptance criteria".
"""

import csv
import math
import time

import numpy as np
import pytest

from conftest import max_rel_error, numeric_grad
from mmhash.cli import main
from mmhash.codes import PackedCode, hamming_distance, pack_bits, CodeIndex
from mmhash.config import TrainConfig
from mmhash.evaluation import mean_average_precision, relaxed_codes
from mmhash.loss import batch_similarity, metric_loss, quantization_loss, total_loss
from mmhash.model import forward_batch, init_params
from mmhash.trainer import backward_batch, train
from oracles import brute_force_map

GRAD_RTOL = 1e-4
GRAD_FLOOR = 1e-8
FD_STEP = 1e-5


def test_c1_loss_gradients(acceptance_report):
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        h = rng.uniform(-0.95, 0.95, (8, 8))
        labels = rng.random((8, 5)) < 0.3
        labels[np.arange(8), rng.integers(0, 5, 8)] = True
        cfg = TrainConfig(batch_size=8, lam=0.5, delta=float(rng.uniform(0.5, 2.0)), mu=float(rng.uniform(0.01, 1.0)))
        phi = batch_similarity(labels, cfg.lam)
        checks = [
            (metric_loss(h, phi, cfg.delta, cfg.lam)[1], lambda: metric_loss(h, phi, cfg.delta, cfg.lam)[0]),
            (quantization_loss(h, cfg.lam)[1], lambda: quantization_loss(h, cfg.lam)[0]),
            (total_loss(h, phi, cfg).grad_h, lambda: total_loss(h, phi, cfg).total),
        ]
        for analytic, f in checks:
            worst = max(worst, max_rel_error(analytic, numeric_grad(f, h, FD_STEP), GRAD_FLOOR))
    elapsed = time.perf_counter() - t0
    ok = worst < GRAD_RTOL and elapsed < 10
    acceptance_report("C1 loss gradients vs finite differences", ok, f"max rel err {worst:.2e}, {elapsed:.2f}s")
    assert worst < GRAD_RTOL
    assert elapsed < 10


def test_c2_end_to_end_gradients(acceptance_report):
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(10):
        for variant in ("full", "concat_only", "vision_only", "text_only"):
            rng = np.random.default_rng(seed)
            params = init_params(8, 4, seed)
            params.b_f[:] = 0.3 * rng.standard_normal(8)
            params.b_h[:] = 0.3 * rng.standard_normal(4)
            vision, text = rng.standard_normal((4, 4)), rng.standard_normal((4, 4))
            labels = rng.random((4, 3)) < 0.5
            labels[np.arange(4), rng.integers(0, 3, 4)] = True
            cfg = TrainConfig(batch_size=4, lam=0.5, mu=0.1)
            phi = batch_similarity(labels, cfg.lam)
            acts = forward_batch(vision, text, params, variant)
            grads = backward_batch(acts, total_loss(acts.h, phi, cfg).grad_h, params)

            def loss():
                return total_loss(forward_batch(vision, text, params, variant).h, phi, cfg).total

            for name in ("w_f", "b_f", "w_h", "b_h"):
                numeric = numeric_grad(loss, getattr(params, name), FD_STEP)
                worst = max(worst, max_rel_error(getattr(grads, name), numeric, GRAD_FLOOR))
    elapsed = time.perf_counter() - t0
    ok = worst < GRAD_RTOL and elapsed < 30
    acceptance_report("C2 end-to-end parameter gradients", ok, f"max rel err {worst:.2e}, {elapsed:.2f}s")
    assert worst < GRAD_RTOL
    assert elapsed < 30


def test_c3_loss_value_oracles(acceptance_report):
    got = {
        "ln2": metric_loss(np.array([[1.0, 0.0], [0.0, 1.0]]), np.ones((1, 1)), 1.0, 0.5)[0],
        "ln(1+e^2)": metric_loss(np.ones((2, 2)), np.zeros((1, 1)), 1.0, 0.5)[0],
        "Lq=1": quantization_loss(np.array([[0.5, -0.5, 0.5, 0.5]]), 1.0)[0],
        "Lq=4": quantization_loss(np.zeros((1, 16)), 1.0)[0],
    }
    want = {"ln2": math.log(2), "ln(1+e^2)": math.log(1 + math.e**2), "Lq=1": 1.0, "Lq=4": 4.0}
    errs = {k: abs(got[k] - want[k]) for k in want}
    ok = max(errs.values()) < 1e-9
    acceptance_report("C3 loss value oracles", ok, ", ".join(f"{k}={got[k]:.9f}" for k in want))
    assert ok, errs


def test_c4_hamming_oracle(acceptance_report):
    t0 = time.perf_counter()
    mismatches = 0
    for k in (16, 32, 64, 128):
        rng = np.random.default_rng(k)
        a = rng.random((10_000, k)) < 0.5
        b = rng.random((10_000, k)) < 0.5
        naive = np.zeros(10_000, dtype=np.int64)
        for j in range(k):
            naive += a[:, j] != b[:, j]
        pa, pb = pack_bits(a), pack_bits(b)
        engine = np.array([hamming_distance(PackedCode(k, pa[i]), PackedCode(k, pb[i])) for i in range(10_000)])
        mismatches += int(np.sum(engine != naive))
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and elapsed < 5
    acceptance_report("C4 popcount vs per-bit loop", ok, f"{mismatches} mismatches over 4x10^4 pairs, {elapsed:.2f}s")
    assert mismatches == 0
    assert elapsed < 5


def test_c5_map_oracle(acceptance_report):
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(1000 + seed)
        k = 16
        db_labels = rng.random((200, 8)) < 0.15
        db_labels[np.arange(200), rng.integers(0, 8, 200)] = True
        q_labels = rng.random((50, 8)) < 0.15
        q_labels[np.arange(50), rng.integers(0, 8, 50)] = True
        db_bits, q_bits = rng.random((200, k)) < 0.5, rng.random((50, k)) < 0.5
        db_ids = rng.permutation(2000)[:200]
        expected, _ = brute_force_map(q_bits, q_labels, db_ids, db_bits, db_labels)
        got = mean_average_precision(
            CodeIndex(np.arange(50), pack_bits(q_bits), k), q_labels, CodeIndex(db_ids, pack_bits(db_bits), k), db_labels
        ).map
        worst = max(worst, abs(got - expected))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-9 and elapsed < 10
    acceptance_report("C5 mAP vs brute force", ok, f"max |diff| {worst:.1e} over 20 instances, {elapsed:.2f}s")
    assert worst < 1e-9
    assert elapsed < 10


def run_pipeline(root, monkeypatch):
    """gen-synth -> train -> encode -> eval, single-threaded. Returns elapsed seconds."""
    monkeypatch.setenv("MMHASH_THREADS", "1")
    t0 = time.perf_counter()
    data = root / "data"
    assert main(["gen-synth", "--clusters", "4", "--per-cluster", "100", "--dim", "32", "--noise", "0.1",
                 "--seed", "42", "--out-dir", str(data)]) == 0
    assert main(["train", "--data", str(data), "--bits", "16", "--eval-every", "1",
                 "--out", str(root / "model.ckpt"), "--log", str(root / "train_log.csv")]) == 0
    for split in ("query", "retrieval"):
        assert main(["encode", "--checkpoint", str(root / "model.ckpt"), "--data", str(data), "--split", split,
                     "--out", str(root / f"{split}.codes")]) == 0
    assert main(["eval", "--query-codes", str(root / "query.codes"), "--db-codes", str(root / "retrieval.codes"),
                 "--labels", str(data / "labels.lbl"), "--out", str(root / "eval.csv")]) == 0
    return time.perf_counter() - t0


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    mp = pytest.MonkeyPatch()
    try:
        first = tmp_path_factory.mktemp("run1")
        elapsed = run_pipeline(first, mp)
        second = tmp_path_factory.mktemp("run2")
        run_pipeline(second, mp)
    finally:
        mp.undo()
    return first, second, elapsed


def _read_log(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _eval_map(root):
    rows = _read_log(root / "eval.csv")
    aps = [float(r["ap"]) for r in rows if r["ap"]]
    return sum(aps) / len(aps)


def test_c6_end_to_end_retrieval(pipeline, acceptance_report):
    root, _, elapsed = pipeline
    epochs = len(_read_log(root / "train_log.csv"))
    value = _eval_map(root)
    ok = value >= 0.95 and elapsed < 120 and epochs <= 50
    acceptance_report("C6 synthetic end-to-end mAP", ok, f"mAP {value:.4f} after {epochs} epochs, {elapsed:.1f}s")
    assert value >= 0.95
    assert epochs <= 50
    assert elapsed < 120


def test_c7_convergence(pipeline, acceptance_report):
    log = _read_log(pipeline[0] / "train_log.csv")
    loss = np.array([float(r["loss_total"]) for r in log])
    test_map = np.array([float(r["map"]) for r in log])
    moving = np.convolve(loss, np.ones(5) / 5, mode="valid")  # moving[i] ends at epoch i + 5
    rises = moving[1:] / moving[:-1] - 1.0
    violations = rises[rises > 0]
    loss_ok = len(violations) <= 1 and np.all(violations <= 0.02)
    running_max = np.maximum.accumulate(test_map)
    drops = (running_max - test_map)[10:]  # epochs 11 onward
    map_ok = bool(np.all(drops <= 0.02))
    acceptance_report(
        "C7 convergence", loss_ok and map_ok,
        f"{len(violations)} moving-average rises (max {max(violations, default=0):.2%}), "
        f"max mAP drop after epoch 10 {drops.max():.4f}",
    )
    assert loss_ok
    assert map_ok


def test_c8_quantization_effect(synth, acceptance_report):
    cfg = TrainConfig(code_bits=16, vision_dim=32, text_dim=32)
    ids = synth.manifest.train_ids

    def gap(mu):
        params, _ = train(synth, cfg.replace(mu=mu))
        h = relaxed_codes(params, synth.vision[ids], synth.text[ids])
        return float(np.mean(np.linalg.norm(np.abs(h) - 1.0, axis=1)) / math.sqrt(cfg.code_bits))

    with_q, without_q = gap(0.01), gap(0.0)
    ok = with_q < without_q and with_q < 0.2
    acceptance_report("C8 quantization effect", ok, f"gap mu=0.01: {with_q:.4f}, mu=0: {without_q:.4f}")
    assert with_q < without_q
    assert with_q < 0.2


def test_c9_ablation_grid(pipeline, tmp_path, acceptance_report):
    data = pipeline[0] / "data"
    out = tmp_path / "ablation.csv"
    assert main(["ablate", "--data", str(data), "--bits-list", "16,32,64,128", "--out", str(out)]) == 0
    rows = list(csv.reader(out.open()))
    header, body = rows[0], rows[1:]
    grid = {r[0]: [float(x) for x in r[1:]] for r in body}
    shape_ok = header == ["variant", "16 bits", "32 bits", "64 bits", "128 bits"] and len(body) == 4
    shape_ok = shape_ok and set(grid) == {"text_only", "vision_only", "concat_only", "full"}
    cells = np.array(list(grid.values()))
    range_ok = bool(np.all((cells >= 0) & (cells <= 1)))
    gaps = cells.max(axis=0) - np.array(grid["full"])
    full_ok = bool(np.all(gaps <= 0.05))
    acceptance_report("C9 ablation grid", shape_ok and range_ok and full_ok,
                      f"4x{cells.shape[1]} grid, full-vs-best gaps {np.round(gaps, 4).tolist()}")
    assert shape_ok and range_ok and full_ok


def test_c10_determinism(pipeline, acceptance_report):
    first, second, _ = pipeline
    names = ["model.ckpt", "query.codes", "retrieval.codes", "eval.csv"]
    same = {n: (first / n).read_bytes() == (second / n).read_bytes() for n in names}
    ok = all(same.values())
    acceptance_report("C10 byte-identical rerun", ok, ", ".join(f"{n}={'same' if s else 'DIFF'}" for n, s in same.items()))
    assert ok
