"""Command-line entry points: synthesize, train, evaluate, explain.

Configuration comes from an optional JSON file plus dotted-path
``--set section.key=value`` overrides; every run writes a config echo
(settings + seed + format version) next to its artifacts so it can be
reproduced exactly.
"""

from __future__ import annotations

import dataclasses
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import data as D
from . import gradcam as G
from . import lime as L
from . import metrics as M
from . import models
from . import synthetic
from . import training
from .errors import PneumoXaiError
from .tensor import Tensor

ECHO_FORMAT_VERSION = 1


def _load_config(config_path, sets):
    doc = {}
    if config_path:
        with open(config_path) as f:
            doc = json.load(f)
    for item in sets:
        if "=" not in item:
            raise click.UsageError(f"--set expects key.path=value, got {item!r}")
        key, _, value = item.partition("=")
        try:
            value = json.loads(value)
        except json.JSONDecodeError:
            pass  # keep as string
        node = doc
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = value
    return doc


def _section(doc, name, cls, **forced):
    fields = {f.name for f in dataclasses.fields(cls)}
    kwargs = {k: v for k, v in doc.get(name, {}).items() if k in fields}
    unknown = set(doc.get(name, {})) - fields
    if unknown:
        raise click.UsageError(f"unknown {name} config keys: {sorted(unknown)}")
    kwargs.update(forced)
    # tuples arrive from JSON as lists
    for k, v in list(kwargs.items()):
        if isinstance(v, list):
            kwargs[k] = tuple(v)
    return cls(**kwargs)


def _write_echo(out_dir, command, seed, doc, extra=None):
    echo = {
        "format_version": ECHO_FORMAT_VERSION,
        "command": command,
        "seed": seed,
        "config": doc,
    }
    if extra:
        echo.update(extra)
    with open(Path(out_dir) / "config_echo.json", "w") as f:
        json.dump(echo, f, indent=2, sort_keys=True, default=str)
        f.write("\n")


def _fail(e):
    click.echo(f"error: {e}", err=True)
    sys.exit(1)


@click.group()
def main():
    """Chest X-ray pneumonia classification with Grad-CAM and LIME."""


_common = [
    click.option("--config", "config_path", type=click.Path(exists=True), default=None,
                 help="JSON config file"),
    click.option("--set", "sets", multiple=True,
                 help="dotted-path config override, e.g. train.batch_size=16"),
    click.option("--seed", type=int, default=0, show_default=True),
    click.option("--out", "out_dir", type=click.Path(), required=True),
    click.option("--threads", type=int, default=1, show_default=True,
                 help="worker threads; 1 is the deterministic mode"),
]


def common_options(fn):
    for opt in reversed(_common):
        fn = opt(fn)
    return fn


@main.command()
@common_options
def synthesize(config_path, sets, seed, out_dir, threads):
    """Generate the planted-blob synthetic dataset tree."""
    try:
        doc = _load_config(config_path, sets)
        spec = _section(doc, "synthetic", synthetic.SyntheticSpec, seed=seed)
        if isinstance(spec.counts, tuple):  # tuple-ified by _section
            raise click.UsageError("synthetic.counts must be an object")
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        written = synthetic.generate_dataset(spec, out_dir)
        _write_echo(out_dir, "synthesize", seed, doc,
                    {"synthetic": dataclasses.asdict(spec)})
        click.echo(f"wrote {sum(written.values())} images to {out_dir}: {written}")
    except PneumoXaiError as e:
        _fail(e)


def _preprocess_config(doc, seed, net_spec):
    return _section(doc, "preprocess", D.PreprocessConfig, seed=seed,
                    target_size=doc.get("preprocess", {}).get(
                        "target_size", net_spec.input_shape[1]))


@main.command()
@common_options
@click.option("--data", "data_dir", type=click.Path(), required=True)
@click.option("--preset", default="mini-dense", show_default=True)
@click.option("--val-fraction", type=float, default=None,
              help="carve validation from the train split instead of using val/")
def train(config_path, sets, seed, out_dir, threads, data_dir, preset, val_fraction):
    """Train a preset network and write checkpoint + per-epoch log."""
    try:
        doc = _load_config(config_path, sets)
        preset = doc.get("preset", preset)
        net_spec = models.preset_spec(preset)
        tcfg = _section(doc, "train", training.TrainConfig, seed=seed)
        pcfg = _preprocess_config(doc, seed, net_spec)
        required = ("train",) if val_fraction else ("train", "val")
        manifest = D.scan_dataset(data_dir, required_splits=required)

        train_samples = manifest.splits["train"]
        if val_fraction:
            rng = np.random.default_rng([seed, 17])
            order = rng.permutation(len(train_samples))
            n_val = max(1, int(val_fraction * len(train_samples)))
            val_samples = [train_samples[i] for i in order[:n_val]]
            train_samples = [train_samples[i] for i in order[n_val:]]
            click.echo(
                f"note: validation carved from train ({n_val} images), "
                "deviating from the provided split", err=True)
        else:
            val_samples = manifest.splits["val"]

        net = models.build_network(net_spec, rng=np.random.default_rng(seed))
        val_batches = D.make_batches(manifest, "val", pcfg, tcfg.batch_size,
                                     samples=val_samples)

        def train_batch_fn(epoch):
            return D.make_batches(manifest, "train", pcfg, tcfg.batch_size,
                                  shuffle=True, train=True, epoch=epoch,
                                  samples=train_samples)

        net, log = training.fit(net, train_batch_fn, val_batches, tcfg)

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        models.save_checkpoint(net, out / "checkpoint.bin")
        (out / "trainlog.jsonl").write_text(log.to_jsonl())
        D.write_manifest_json(manifest, out / "manifest.json")
        _write_echo(out_dir, "train", seed, doc, {
            "preset": preset,
            "train": dataclasses.asdict(tcfg),
            "preprocess": dataclasses.asdict(pcfg),
            "threads": threads,
        })
        best = log.epochs[log.best_epoch - 1]
        click.echo(
            f"stopped: {log.stop_reason} after epoch {log.epochs[-1].epoch}; "
            f"best epoch {log.best_epoch} "
            f"(val loss {best.val_loss:.4f}, val acc {best.val_accuracy:.4f})")
    except PneumoXaiError as e:
        _fail(e)


def _model_scores(checkpoint, data_dir, split, seed, batch_size=32):
    net = models.load_checkpoint(checkpoint)
    manifest = D.scan_dataset(data_dir, required_splits=(split,))
    pcfg = D.PreprocessConfig(target_size=net.spec.input_shape[1], seed=seed)
    preds = []
    for images, labels in D.make_batches(manifest, split, pcfg, batch_size):
        probs = net.forward(images, training=False)
        preds.extend(
            M.ScoredPrediction(float(p), int(l))
            for p, l in zip(probs.data, labels.data)
        )
    return preds


def _read_scores_csv(path):
    preds = []
    with open(path) as f:
        header = f.readline().strip().split(",")
        if header != ["label", "score"]:
            raise M.MetricError(f"scores file must have header 'label,score', got {header}")
        for line in f:
            if not line.strip():
                continue
            lab, sc = line.strip().split(",")
            preds.append(M.ScoredPrediction(float(sc), int(lab)))
    return preds


@main.command()
@common_options
@click.option("--checkpoint", type=click.Path(exists=True), default=None)
@click.option("--data", "data_dir", type=click.Path(), default=None)
@click.option("--split", default="test", show_default=True)
@click.option("--scores", "scores_path", type=click.Path(exists=True), default=None,
              help="evaluate a label,score CSV instead of a model")
@click.option("--threshold", type=float, default=0.5, show_default=True)
def evaluate(config_path, sets, seed, out_dir, threads, checkpoint, data_dir,
             split, scores_path, threshold):
    """Write metrics.json, roc.csv, pr.csv, confusion.json for one split."""
    try:
        doc = _load_config(config_path, sets)
        threshold = doc.get("threshold", threshold)
        if scores_path:
            preds = _read_scores_csv(scores_path)
        elif checkpoint and data_dir:
            preds = _model_scores(checkpoint, data_dir, split, seed)
        else:
            raise click.UsageError("provide --scores, or --checkpoint with --data")
        report = M.full_report(preds, threshold)
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        M.report_to_json_file(report, out / "metrics.json")
        M.write_curve_csv(report.roc_points, out / "roc.csv", "fpr,tpr")
        M.write_curve_csv(report.pr_points, out / "pr.csv", "recall,precision")
        with open(out / "confusion.json", "w") as f:
            cm = report.confusion
            json.dump({"tp": cm.tp, "fp": cm.fp, "fn": cm.fn, "tn": cm.tn}, f)
            f.write("\n")
        _write_echo(out_dir, "evaluate", seed, doc, {"threshold": threshold})
        auc = "  n/a " if report.roc_auc is None else f"{report.roc_auc:.4f}"
        click.echo("accuracy precision recall f1 mcc kappa brier auc")
        click.echo(
            f"{report.accuracy:.4f} {report.precision:.4f} {report.recall:.4f} "
            f"{report.f1:.4f} {report.mcc:.4f} {report.kappa:.4f} "
            f"{report.brier:.4f} {auc}")
    except PneumoXaiError as e:
        _fail(e)


@main.command()
@common_options
@click.option("--checkpoint", type=click.Path(exists=True), required=True)
@click.option("--image", "image_path", type=click.Path(exists=True), required=True)
@click.option("--method", type=click.Choice(["gradcam", "lime", "both"]),
              default="both", show_default=True)
def explain(config_path, sets, seed, out_dir, threads, checkpoint, image_path, method):
    """Produce saliency artifacts for one image."""
    try:
        doc = _load_config(config_path, sets)
        net = models.load_checkpoint(checkpoint)
        pcfg = D.PreprocessConfig(target_size=net.spec.input_shape[1], seed=seed)
        img = D.decode_image(Path(image_path).read_bytes())
        img = D.resize_bilinear(img, pcfg.target_size, pcfg.target_size)
        x = D.normalize(img, pcfg)

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        prob = float(net.forward(Tensor(x[None]), training=False).data[0])
        click.echo(f"positive-class probability: {prob:.4f}")

        if method in ("gradcam", "both"):
            hm = G.gradcam(net, x)
            (out / "heatmap.png").write_bytes(D.encode_png(G.heatmap_to_gray(hm)))
            (out / "overlay.png").write_bytes(D.encode_png(G.overlay(hm, img)))
            click.echo(f"gradcam: target layer {hm.target_layer}, "
                       f"score {hm.class_score:.4f}")
        if method in ("lime", "both"):
            lcfg = _section(doc, "lime", L.LimeConfig, seed=seed)

            def predict_fn(buffer):
                arr = D.normalize(buffer, pcfg)
                return float(net.forward(Tensor(arr[None]), training=False).data[0])

            sp, expl = L.explain(predict_fn, img, lcfg)
            L.explanation_to_json_file(expl, out / "lime.json")
            (out / "lime_overlay.png").write_bytes(
                D.encode_png(L.lime_overlay(img, sp, expl)))
            tops = ", ".join(f"{i}:{w:+.4f}" for i, w in expl.top_k)
            click.echo(f"lime: top segments {tops} (r2 {expl.local_r2:.4f})")
        _write_echo(out_dir, "explain", seed, doc, {"method": method, "image": image_path})
    except PneumoXaiError as e:
        _fail(e)


if __name__ == "__main__":
    main()
