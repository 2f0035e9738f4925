"""Release acceptance gate.

Each test covers one acceptance criterion and prints a single
``[criterion N] PASS/FAIL`` line (run with ``-s`` to see them live; pytest
shows captured output for failures). Criteria:

1. Published benchmark metric rows from their confusion matrices, +/-5e-4.
2. Trapezoidal ROC AUC == tie-aware pair-counting oracle to 1e-9.
3. Finite-difference gradient checks: every operator and a full small
   network, relative error <= 1e-4 over >= 20 random shapes each.
4. LIME recovers a linear black box: coefficients within 1e-3, local
   R^2 >= 0.999, exact top-k ordering.
5. Full run on the synthetic planted-blob dataset: >= 95% validation
   accuracy within 10 epochs, then Grad-CAM argmax inside the ground-truth
   quadrant for >= 90% of positive test images.
6. Training protocol: early stop / best epoch / learning-rate schedule on
   an injected validation-loss sequence.
7. Byte-identical trainlog.jsonl and lime.json across same-seed reruns.
8. End-to-end run on a real dataset when one is supplied via
   PNEUMOXAI_REAL_DATA (no metric threshold); otherwise documented as
   out of desk-scale reach and skipped.
"""

import json
import os
import time
import zlib
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner
from conftest import check_grads, rel_err, fd_gradients

import pneumoxai.data as D
import pneumoxai.gradcam as G
import pneumoxai.lime as L
import pneumoxai.metrics as MET
import pneumoxai.models as M
import pneumoxai.tensor as T
import pneumoxai.training as TR
from pneumoxai.cli import main
from pneumoxai.metrics import ConfusionMatrix, ScoredPrediction
from pneumoxai.tensor import Tensor


@contextmanager
def criterion(n, description, budget_s):
    t0 = time.perf_counter()
    try:
        yield
    except BaseException:
        print(f"\n[criterion {n}] FAIL — {description}")
        raise
    dt = time.perf_counter() - t0
    if dt >= budget_s:
        print(f"\n[criterion {n}] FAIL — {description} "
              f"(over budget: {dt:.1f}s >= {budget_s}s)")
        pytest.fail(f"criterion {n} exceeded the {budget_s}s runtime budget")
    print(f"\n[criterion {n}] PASS — {description} ({dt:.1f}s)")


# ---------------------------------------------------------------------------
# 1. benchmark metric rows


BENCH_ROWS = [
    (ConfusionMatrix(tp=388, fp=94, fn=2, tn=140),
     (0.8462, 0.8050, 0.9949, 0.8899, 0.6849, 0.6438)),
    (ConfusionMatrix(tp=389, fp=126, fn=1, tn=108),
     (0.7965, 0.7553, 0.9974, 0.8597, 0.5852, 0.5139)),
]


def test_criterion_1_benchmark_rows():
    with criterion(1, "published metric rows reproduced within 5e-4", 1.0):
        for cm, row in BENCH_ROWS:
            accuracy, precision, recall, f1, degenerate = MET.basic_metrics(cm)
            assert not degenerate
            got = (accuracy, precision, recall, f1, MET.mcc(cm),
                   MET.cohens_kappa(cm))
            np.testing.assert_allclose(got, row, atol=5e-4, rtol=0)


# ---------------------------------------------------------------------------
# 2. AUC oracle equivalence


def _pair_count_auc(preds):
    pos = [p.score for p in preds if p.label == 1]
    neg = [p.score for p in preds if p.label == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0
               for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def test_criterion_2_auc_oracle():
    with criterion(2, "trapezoid AUC == pair-count oracle on 1000 tied sets",
                   10.0):
        rng = np.random.default_rng(202)
        for _ in range(1000):
            n = int(rng.integers(2, 51))
            # quantized scores force duplicates; both classes guaranteed
            scores = rng.integers(0, 6, n) / 5.0
            labels = rng.integers(0, 2, n)
            labels[0], labels[1] = 0, 1
            preds = [ScoredPrediction(float(s), int(l))
                     for s, l in zip(scores, labels)]
            _, auc = MET.roc_curve_auc(preds)
            assert abs(auc - _pair_count_auc(preds)) <= 1e-9


# ---------------------------------------------------------------------------
# 3. gradient correctness


def _conv_case(rng):
    groups = int(rng.choice([1, 2]))
    ci = groups * int(rng.integers(1, 3))
    co = groups * int(rng.integers(1, 3))
    k = int(rng.integers(1, 4))
    pad = int(rng.integers(0, 2))
    h = k + int(rng.integers(0, 3))
    x = rng.standard_normal((2, ci, h, h))
    w = rng.standard_normal((co, ci // groups, k, k))
    b = rng.standard_normal(co)
    f = lambda x, w, b: T.tensor_sum(T.relu(
        T.conv2d(x, w, b, stride=1, padding=pad, groups=groups)))
    return f, [x, w, b]


def _pool_case(rng, mode):
    wdw = int(rng.integers(2, 4))
    h = wdw * int(rng.integers(1, 3))
    x = rng.standard_normal((2, int(rng.integers(1, 3)), h, h))
    if mode == "global_avg":
        return (lambda x: T.tensor_sum(T.sigmoid(T.pool2d(x, "global_avg"))),
                [x])
    return (lambda x: T.tensor_sum(T.pool2d(x, mode, window=wdw)), [x])


def _dense_case(rng):
    n, ci, co = (int(rng.integers(1, 5)) for _ in range(3))
    arrs = [rng.standard_normal(s) for s in ((n, ci), (ci, co), (co,))]
    return lambda x, w, b: T.tensor_sum(T.sigmoid(T.dense(x, w, b))), arrs


def _bn_case(rng, training):
    c = int(rng.integers(1, 4))
    h = int(rng.integers(2, 4))
    x = rng.standard_normal((2, c, h, h))
    gamma = rng.uniform(0.5, 1.5, c)
    beta = rng.standard_normal(c)
    rm = rng.standard_normal(c)
    rv = rng.uniform(0.5, 2.0, c)

    def f(x, gamma, beta):
        return T.tensor_sum(T.sigmoid(T.batchnorm2d(
            x, gamma, beta, rm.copy(), rv.copy(), training)))

    return f, [x, gamma, beta]


def _elementwise_case(rng, kind):
    x = rng.standard_normal((2, 2, 3, 3))
    if kind == "relu":
        x = np.sign(x) * (np.abs(x) + 0.05)  # keep clear of the kink
    return lambda x: T.tensor_sum(T.activation(x, kind)), [x]


def _concat_case(rng):
    h = int(rng.integers(2, 4))
    arrs = [rng.standard_normal((2, int(rng.integers(1, 3)), h, h))
            for _ in range(int(rng.integers(2, 4)))]
    return (lambda *xs: T.tensor_sum(T.sigmoid(T.concat_channels(xs))), arrs)


def _scale_channels_case(rng):
    c = int(rng.integers(1, 4))
    x = rng.standard_normal((2, c, 3, 3))
    g = rng.uniform(0.1, 0.9, (2, c))
    return lambda x, g: T.tensor_sum(T.scale_channels(x, g)), [x, g]


def _add_scale_reshape_case(rng):
    shape = (2, int(rng.integers(1, 4)), 2, 2)
    a, b = rng.standard_normal(shape), rng.standard_normal(shape)
    s = float(rng.uniform(0.5, 2.0))
    f = lambda a, b: T.tensor_sum(T.sigmoid(
        T.reshape(T.scale(T.add(a, b), s), (shape[0], -1))))
    return f, [a, b]


def _bce_case(rng):
    n = int(rng.integers(2, 9))
    probs = rng.uniform(0.1, 0.9, n)
    labels = rng.integers(0, 2, n).astype(np.float64)
    return lambda p: T.bce_loss(p, Tensor(labels)), [probs]


OPERATOR_CASES = {
    "conv2d": _conv_case,
    "pool2d/max": lambda rng: _pool_case(rng, "max"),
    "pool2d/avg": lambda rng: _pool_case(rng, "avg"),
    "pool2d/global_avg": lambda rng: _pool_case(rng, "global_avg"),
    "dense": _dense_case,
    "batchnorm2d/train": lambda rng: _bn_case(rng, True),
    "batchnorm2d/eval": lambda rng: _bn_case(rng, False),
    "relu": lambda rng: _elementwise_case(rng, "relu"),
    "sigmoid": lambda rng: _elementwise_case(rng, "sigmoid"),
    "concat_channels": _concat_case,
    "scale_channels": _scale_channels_case,
    "add/scale/reshape": _add_scale_reshape_case,
    "bce_loss": _bce_case,
}


def _network_gradcheck():
    net = M.build_network("micro-dense", seed=11)
    rng = np.random.default_rng(12)
    for name, p in net.params.items():
        p.data = p.data.astype(np.float64)
    for name, buf in net.buffers.items():
        # offset running stats so eval-mode batchnorm is not the identity;
        # otherwise exact relu zeros sit on the next relu kink and finite
        # differences measure a subgradient there
        buf += rng.uniform(0.05, 0.2, buf.shape)
    x = rng.standard_normal((2, 3, 16, 16))
    labels = Tensor(np.array([0.0, 1.0]))

    def loss_value():
        return float(T.bce_loss(net.forward(Tensor(x), training=False),
                                labels).data)

    net.zero_grad()
    out = T.bce_loss(net.forward(Tensor(x), training=False), labels)
    out.backward()
    for name, p in net.params.items():
        numeric = fd_gradients(loss_value, [p.data], h=1e-5)[0]
        err = rel_err(p.grad, numeric)
        assert err <= 1e-4, f"network parameter {name}: rel err {err:.3g}"


def test_criterion_3_gradient_checks():
    with criterion(3, "FD gradchecks: all operators + full small network",
                   60.0):
        for name, make in OPERATOR_CASES.items():
            rng = np.random.default_rng(zlib.crc32(name.encode()))
            for trial in range(20):
                f, arrays = make(rng)
                check_grads(f, arrays, tol=1e-4)
        _network_gradcheck()


# ---------------------------------------------------------------------------
# 4. LIME linear recovery


def test_criterion_4_lime_linear_recovery():
    with criterion(4, "LIME recovers a linear black box exactly", 30.0):
        rng = np.random.default_rng(44)
        truth = np.array([3.0, -2.4, 1.8, -1.2, 0.9, -0.6, 0.45, -0.3,
                          0.2, -0.1])
        Z = L.sample_perturbations(10, 4096, rng)
        y = Z @ truth + 0.7
        sw = L.proximity_weights(Z, kernel_width=0.25)
        weights, intercept, r2 = L.fit_surrogate(Z, y, sw, 1e-6)
        np.testing.assert_allclose(weights, truth, atol=1e-3)
        assert r2 >= 0.999
        order = np.argsort(-np.abs(weights), kind="stable")
        np.testing.assert_array_equal(order, np.argsort(-np.abs(truth)))


# ---------------------------------------------------------------------------
# 5 + 7. full synthetic run, localization, determinism


def _cli(args):
    result = CliRunner().invoke(main, args, catch_exceptions=False)
    assert result.exit_code == 0, result.output
    return result


def _train_run(data_dir, out_dir, preset, seed, extra=()):
    return _cli(["train", "--data", str(data_dir), "--out", str(out_dir),
                 "--preset", preset, "--seed", str(seed), *extra])


def test_criterion_5_training_and_gradcam_localization(tmp_path):
    with criterion(5, "synthetic training >=95% val acc; Grad-CAM argmax "
                      "in ground-truth quadrant for >=90% of positives",
                   300.0):
        data = tmp_path / "data"
        _cli(["synthesize", "--out", str(data)])
        run = tmp_path / "run"
        _train_run(data, run, "mini-dense", 0)

        lines = (run / "trainlog.jsonl").read_text().strip().split("\n")
        epochs = [json.loads(s) for s in lines[:-1]]
        assert len(epochs) <= 10
        assert max(e["val_accuracy"] for e in epochs) >= 0.95

        net = M.load_checkpoint(run / "checkpoint.bin")
        size = net.spec.input_shape[1]
        pcfg = D.PreprocessConfig(target_size=size, seed=0)
        images = sorted((data / "test" / "PNEUMONIA").glob("*.png"))
        assert len(images) == 40
        hits = 0
        for path in images:
            img = D.resize_bilinear(D.decode_image(path.read_bytes()),
                                    size, size)
            hm = G.gradcam(net, D.normalize(img, pcfg))
            y, x = np.unravel_index(np.argmax(hm.normalized),
                                    hm.normalized.shape)
            hits += (y < size // 2) and (x < size // 2)  # top-left quadrant
        assert hits >= 0.9 * len(images), f"only {hits}/{len(images)} localized"


def test_criterion_7_rerun_determinism(tmp_path, small_dataset):
    with criterion(7, "same-seed reruns byte-identical "
                      "(trainlog.jsonl, lime.json)", 300.0):
        logs, limes = [], []
        for d in ("a", "b"):
            run = tmp_path / d
            _train_run(small_dataset, run, "micro-dense", 9,
                       ("--set", "train.max_epochs=2",
                        "--set", "train.batch_size=8"))
            logs.append((run / "trainlog.jsonl").read_bytes())
            image = sorted(
                (small_dataset / "test" / "PNEUMONIA").glob("*.png"))[0]
            _cli(["explain", "--checkpoint", str(run / "checkpoint.bin"),
                  "--image", str(image), "--out", str(run / "xai"),
                  "--method", "lime", "--seed", "9",
                  "--set", "lime.n_samples=64", "--set", "lime.n_segments=8"])
            limes.append((run / "xai" / "lime.json").read_bytes())
        assert logs[0] == logs[1]
        assert limes[0] == limes[1]


# ---------------------------------------------------------------------------
# 6. protocol conformance


def test_criterion_6_protocol_conformance():
    with criterion(6, "early stop at epoch 5, best_epoch 2, LR nonincreasing",
                   1.0):
        losses = iter([1.0, 0.9, 0.91, 0.92, 0.93, 0.94])
        lrs = []

        def train_fn(epoch, lr):
            lrs.append(lr)
            return 0.5

        log = TR.run_protocol(train_fn, lambda: (next(losses), 0.5),
                              TR.TrainConfig(early_stop_patience=3))
        assert len(log.epochs) == 5
        assert log.best_epoch == 2
        assert log.stop_reason == "early_stop"
        assert all(a >= b for a, b in zip(lrs, lrs[1:]))
        assert len(log.epochs) <= 10


# ---------------------------------------------------------------------------
# 8. explicit non-reproducibility / optional real-data run


def test_criterion_8_real_dataset_end_to_end(tmp_path):
    root = os.environ.get("PNEUMOXAI_REAL_DATA")
    if not root:
        print("\n[criterion 8] PASS — published end-to-end results are not "
              "desk-scale reproducible (full radiograph dataset and "
              "pretrained backbones required); set PNEUMOXAI_REAL_DATA to "
              "run the pipeline on a real dataset")
        pytest.skip("no real dataset supplied via PNEUMOXAI_REAL_DATA")
    with criterion(8, "real dataset end-to-end run completes (no metric "
                      "threshold)", 6 * 3600):
        run = tmp_path / "run"
        _train_run(Path(root), run, "mini-dense", 0,
                   ("--set", "train.max_epochs=1"))
        _cli(["evaluate", "--checkpoint", str(run / "checkpoint.bin"),
              "--data", root, "--split", "test",
              "--out", str(tmp_path / "eval")])
