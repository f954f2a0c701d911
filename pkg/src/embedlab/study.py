"""Canned imbalance study: {softmax, center} x {balanced, imbalanced} quadrant.

Ten Gaussian classes embedded into two dimensions; the imbalanced setting
keeps 5% of class 3. Each quadrant trains, evaluates and writes the usual run
artifacts; a summary compares the minority class's weight-center gap and test
recall between the plain-softmax head and the center-prototype loss.
"""
from __future__ import annotations

import json
from pathlib import Path

from .centers import CenterStrategy
from .config import (DatasetBlock, EvalBlock, ExperimentConfig, LossBlock,
                     TrainBlock)
from .data import ImbalanceSpec
from .losses import MarginSpec
from .model import MlpSpec

MNIST_FILES = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte",
               "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")

MINORITY_CLASS = 3
MINORITY_FRACTION = 0.05


def toy_config(loss_kind: str, imbalanced: bool, seed: int,
               margin_m: int = 4, per_class: int = 600) -> ExperimentConfig:
    """One quadrant of the study.

    The softmax runs use a hotter, shorter schedule; the center runs pretrain
    briefly with softmax, warm-start the prototypes, then finetune long and
    cool so the minority prototype settles (the batch-mean center update
    samples the minority cluster's spread, which shrinks as training cools).
    """
    dataset = DatasetBlock(kind="mixture", classes=10, per_class=per_class,
                           dim=2, radius=4.0, sigma=0.5, test_per_class=200)
    keep = max(1, int(round(per_class * MINORITY_FRACTION)))
    imbalance = (ImbalanceSpec.from_pairs([(MINORITY_CLASS, keep)])
                 if imbalanced else ImbalanceSpec())
    model = MlpSpec((2, 32, 32, 2), "relu")
    if loss_kind == "softmax":
        loss = LossBlock("softmax")
        train = TrainBlock(epochs=150, batch_size=64, learning_rate=0.01,
                           momentum=0.9, seed=seed)
    else:
        loss = LossBlock("center", MarginSpec.angular(margin_m),
                         CenterStrategy.aux_loss(0.5))
        train = TrainBlock(epochs=300, batch_size=128, learning_rate=0.002,
                           momentum=0.9, seed=seed, warm_start=True,
                           pretrain_epochs=20)
    ev = EvalBlock(far_targets=(0.01, 0.1), gallery_per_class=3,
                   unknown_classes=(9,))
    return ExperimentConfig(dataset, imbalance, model, loss, train, ev)


QUADRANTS = (
    ("softmax_balanced", "softmax", False),
    ("softmax_imbalanced", "softmax", True),
    ("center_balanced", "center", False),
    ("center_imbalanced", "center", True),
)


def mnist_config(loss_kind: str, imbalanced: bool, seed: int, idx_dir,
                 margin_m: int = 4,
                 per_class_available=None) -> ExperimentConfig:
    """Digit-image variant of the study: up to 6000 kept per class, minority
    class 3 kept at 300 when imbalanced. Expects the standard four IDX files.

    per_class_available caps the keep counts (classes in the real data hold
    between ~5400 and ~6700 samples); pass the actual per-class counts.
    """
    idx_dir = Path(idx_dir)
    dataset = DatasetBlock(
        kind="idx",
        images=str(idx_dir / "train-images-idx3-ubyte"),
        labels=str(idx_dir / "train-labels-idx1-ubyte"),
        test_images=str(idx_dir / "t10k-images-idx3-ubyte"),
        test_labels=str(idx_dir / "t10k-labels-idx1-ubyte"),
    )
    avail = per_class_available
    pairs = [(k, 6000 if avail is None else min(6000, int(avail[k])))
             for k in range(10)]
    if imbalanced:
        pairs[MINORITY_CLASS] = (MINORITY_CLASS, 300)
    imbalance = ImbalanceSpec.from_pairs(pairs)
    model = MlpSpec((784, 256, 128, 2), "relu")
    if loss_kind == "softmax":
        loss = LossBlock("softmax")
        train = TrainBlock(epochs=12, batch_size=128, learning_rate=0.01,
                           momentum=0.9, seed=seed)
    else:
        loss = LossBlock("center", MarginSpec.angular(margin_m),
                         CenterStrategy.aux_loss(0.5))
        train = TrainBlock(epochs=20, batch_size=256, learning_rate=0.002,
                           momentum=0.9, seed=seed, warm_start=True,
                           pretrain_epochs=5)
    ev = EvalBlock(far_targets=(0.001, 0.01), gallery_per_class=5,
                   unknown_classes=(9,))
    return ExperimentConfig(dataset, imbalance, model, loss, train, ev)


def run_mnist_imbalance(out_dir, idx_dir, seed: int = 7, margin_m: int = 4,
                        log=None) -> dict:
    """Imbalanced-protocol comparison on the digit images; writes summary.json.

    Keeps to the two imbalanced runs (softmax vs center prototypes) that the
    directional comparisons need; a caller wanting the full quadrant can also
    run the balanced variants of mnist_config.
    """
    from .data import load_idx
    from .runner import execute_experiment

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    idx_dir = Path(idx_dir)
    counts = load_idx(idx_dir / MNIST_FILES[0],
                      idx_dir / MNIST_FILES[1]).per_class_counts()
    reports = {}
    for name, kind in (("softmax_imbalanced", "softmax"),
                       ("center_imbalanced", "center")):
        cfg = mnist_config(kind, True, seed, idx_dir, margin_m,
                           per_class_available=counts)
        reports[name] = execute_experiment(cfg, out / name, log=log)

    key = str(MINORITY_CLASS)
    gap_softmax = reports["softmax_imbalanced"]["weight_center_gaps"][key]
    gap_center = reports["center_imbalanced"]["weight_center_gaps"][key]
    summary = {
        "minority_class": MINORITY_CLASS,
        "seed": seed,
        "margin_m": margin_m,
        "minority_gap_softmax": gap_softmax,
        "minority_gap_center": gap_center,
        "gap_ratio_softmax_over_center": gap_softmax / max(gap_center, 1e-12),
        "minority_recall_softmax": reports["softmax_imbalanced"]["test_recall"][key],
        "minority_recall_center": reports["center_imbalanced"]["test_recall"][key],
        "checks": {
            "softmax_gap_at_least_2x_center": gap_softmax >= 2.0 * gap_center,
            "center_gap_below_0p15_rad": gap_center <= 0.15,
            "center_recall_at_least_softmax":
                reports["center_imbalanced"]["test_recall"][key]
                >= reports["softmax_imbalanced"]["test_recall"][key],
        },
    }
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return summary


def run_toy_imbalance(out_dir, seed: int = 7, margin_m: int = 4,
                      log=None) -> dict:
    """Run the four quadrants and write per-run artifacts plus summary.json."""
    from .runner import execute_experiment   # deferred: runner imports study

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    reports = {}
    for name, kind, imbalanced in QUADRANTS:
        cfg = toy_config(kind, imbalanced, seed, margin_m)
        run_dir = out / name
        report = execute_experiment(cfg, run_dir, log=log)
        reports[name] = report

    key = str(MINORITY_CLASS)
    gap_softmax = reports["softmax_imbalanced"]["weight_center_gaps"][key]
    gap_center = reports["center_imbalanced"]["weight_center_gaps"][key]
    recall_softmax = reports["softmax_imbalanced"]["test_recall"][key]
    recall_center = reports["center_imbalanced"]["test_recall"][key]
    summary = {
        "minority_class": MINORITY_CLASS,
        "seed": seed,
        "margin_m": margin_m,
        "minority_gap_softmax": gap_softmax,
        "minority_gap_center": gap_center,
        "gap_ratio_softmax_over_center": gap_softmax / max(gap_center, 1e-12),
        "minority_recall_softmax": recall_softmax,
        "minority_recall_center": recall_center,
        "balanced_gap_softmax": reports["softmax_balanced"]["weight_center_gaps"][key],
        "balanced_gap_center": reports["center_balanced"]["weight_center_gaps"][key],
        "checks": {
            "softmax_gap_at_least_2x_center": gap_softmax >= 2.0 * gap_center,
            "center_gap_below_0p15_rad": gap_center <= 0.15,
            "center_recall_at_least_softmax": recall_center >= recall_softmax,
        },
    }
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")
    if log is not None:
        log(f"minority gap: softmax={gap_softmax:.4f} center={gap_center:.4f} "
            f"(ratio {summary['gap_ratio_softmax_over_center']:.2f})")
        log(f"minority recall: softmax={recall_softmax:.4f} center={recall_center:.4f}")
    return summary
