"""Config-driven training loop and experiment evaluation.

Per batch the order is: forward, loss and gradients against a frozen center
snapshot, SGD step on the network, then the center-bank update using the
batch embeddings from before the step. Head weights for the margin loss are
renormalized to unit rows after every step.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .centers import (CenterBank, cold_start_bank, exact_centers,
                      update_from_batch, weight_center_gap)
from .config import ExperimentConfig
from .data import (ImbalanceSpec, LabeledDataset, apply_imbalance,
                   gen_gaussian_mixture, load_idx, sample_batches)
from .evaluation import (EvalReport, cmc, dir_at_far, embedding_stats,
                         mean_average_precision, score_pairs, vr_at_far)
from .losses import MarginSpec, center_softmax, margin_softmax, softmax_ce
from .losses import npairs_loss
from .model import (MlpParams, MlpSpec, MomentumState, init_params,
                    mlp_backward, mlp_forward, sgd_step)
from .numerics import RandomStream


class NumericFailure(RuntimeError):
    """Loss went non-finite; carries the epoch and batch where it happened."""

    def __init__(self, epoch: int, batch: int, message: str):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"epoch {epoch}, batch {batch}: {message}")


def derive_streams(seed: int) -> dict[str, RandomStream]:
    """Named child streams in a fixed order, so runs are reproducible."""
    root = RandomStream(seed)
    names = ("data", "test_data", "imbalance", "init", "shuffle", "head")
    return {name: root.split() for name in names}


def prepare_data(cfg: ExperimentConfig,
                 streams: dict[str, RandomStream]) -> tuple[LabeledDataset, LabeledDataset]:
    """Build (train, test) datasets; imbalance applies to the training set only."""
    d = cfg.dataset
    if d.kind == "mixture":
        train = gen_gaussian_mixture(d.classes, d.per_class, d.dim,
                                     d.radius, d.sigma, streams["data"])
        test = gen_gaussian_mixture(d.classes, d.test_per_class, d.dim,
                                    d.radius, d.sigma, streams["test_data"])
    else:
        train = load_idx(d.images, d.labels)
        if d.test_images and d.test_labels:
            test = load_idx(d.test_images, d.test_labels)
        else:
            test = train
    if cfg.imbalance.overrides:
        train = apply_imbalance(train, cfg.imbalance, streams["imbalance"])
    return train, test


# ---------------------------------------------------------------------------
# Heads: classification rules and prediction
# ---------------------------------------------------------------------------

def classify(E: np.ndarray, head) -> np.ndarray:
    """Predicted labels: argmax head score per row.

    head is a weight matrix (rows score by dot product) or a CenterBank
    (rows score by center dot product; classes without an estimate never win).
    """
    if isinstance(head, CenterBank):
        scores = E @ head.centers.T
        scores[:, head.degenerate] = -np.inf
    else:
        scores = E @ np.asarray(head).T
    return np.argmax(scores, axis=1)


def per_class_recall(pred: np.ndarray, y: np.ndarray, num_classes: int) -> dict[int, float]:
    out: dict[int, float] = {}
    for k in range(num_classes):
        members = y == k
        if members.any():
            out[k] = float((pred[members] == k).mean())
    return out


def _unit_rows(W: np.ndarray) -> np.ndarray:
    return W / np.linalg.norm(W, axis=1)[:, None]


def _init_head(num_classes: int, dim: int, stream: RandomStream,
               unit: bool) -> np.ndarray:
    a = np.sqrt(6.0 / (num_classes + dim))
    W = stream.uniform(-a, a, (num_classes, dim))
    return _unit_rows(W) if unit else W


def _batch_pairs(labels: np.ndarray) -> list[tuple[int, int]]:
    """All ordered same-class pairs (i, j), i != j, in index order."""
    pairs = []
    for i in range(labels.size):
        for j in range(labels.size):
            if i != j and labels[i] == labels[j]:
                pairs.append((i, j))
    return pairs


@dataclass
class TrainResult:
    params: MlpParams
    head: np.ndarray | None            # softmax / margin weight rows
    bank: CenterBank | None            # center loss prototypes
    epoch_losses: list[float] = field(default_factory=list)
    gap_trace: list[dict[int, float]] = field(default_factory=list)
    train_accuracy: float = 0.0
    skipped_batches: int = 0

    def head_rows(self):
        return self.bank if self.bank is not None else self.head


def _epoch_gaps(params, head_rows, ds: LabeledDataset) -> dict[int, float]:
    E, _ = mlp_forward(params, ds.features)
    return weight_center_gap(head_rows, exact_centers(E, ds.labels, ds.num_classes))


def _train_phase(params, head, bank, loss_kind, margin: MarginSpec,
                 ds: LabeledDataset, epochs: int, lr: float, momentum: float,
                 shuffle: RandomStream, batch_size: int,
                 result: TrainResult, log, epoch_offset: int, tag: str) -> None:
    state = MomentumState.for_params(params)
    head_state = np.zeros_like(head) if head is not None else None
    for epoch in range(epochs):
        losses = []
        for b, batch in enumerate(sample_batches(ds, batch_size, shuffle)):
            with np.errstate(over="ignore", invalid="ignore"):
                E, cache = mlp_forward(params, batch.features)
            if not np.all(np.isfinite(E)):
                raise NumericFailure(epoch_offset + epoch, b,
                                     "embeddings are non-finite")
            head_grad = None
            if loss_kind == "softmax":
                lg = softmax_ce(E, batch.labels, head)
                dE, head_grad, loss = lg.d_features, lg.d_weights, lg.loss
            elif loss_kind == "margin":
                lg = margin_softmax(E, batch.labels, head, margin)
                dE, head_grad, loss = lg.d_features, lg.d_weights, lg.loss
            elif loss_kind == "center":
                lg = center_softmax(E, batch.labels, bank, margin)
                dE, loss = lg.d_features, lg.loss
            else:  # npairs
                pairs = _batch_pairs(batch.labels)
                if not pairs:
                    result.skipped_batches += 1
                    continue
                loss, dE = npairs_loss(E, batch.labels, pairs)
            if not np.isfinite(loss):
                raise NumericFailure(epoch_offset + epoch, b, f"loss is {loss}")
            losses.append(loss)
            grads = mlp_backward(params, cache, dE)
            sgd_step(params, grads, lr, state, momentum)
            if head_grad is not None:
                head_state = momentum * head_state - lr * head_grad
                head += head_state
                if loss_kind == "margin":
                    head[:] = _unit_rows(head)
            if loss_kind == "center":
                update_from_batch(bank, E, batch.labels)
        mean_loss = float(np.mean(losses)) if losses else float("nan")
        result.epoch_losses.append(mean_loss)
        rows = bank if loss_kind == "center" else head
        # the per-epoch trace re-embeds the training set; on large sets only
        # the final epoch is traced (the report recomputes final gaps anyway)
        trace_now = rows is not None and (ds.n <= 20_000 or epoch == epochs - 1)
        gaps = _epoch_gaps(params, rows, ds) if trace_now else {}
        result.gap_trace.append(gaps)
        if log is not None:
            gap_str = ""
            if gaps:
                worst = max(gaps, key=gaps.get)
                gap_str = (f"  mean_gap={np.mean(list(gaps.values())):.4f}"
                           f"  worst_gap[{worst}]={gaps[worst]:.4f}")
            log(f"[{tag}] epoch {epoch_offset + epoch:3d}  loss={mean_loss:.6f}{gap_str}")


def run_training(cfg: ExperimentConfig, train_ds: LabeledDataset,
                 streams: dict[str, RandomStream], log=None) -> TrainResult:
    """Train per the config on the given dataset; deterministic per seed."""
    spec = MlpSpec(cfg.model.layer_sizes, cfg.model.activation)
    params = init_params(spec, streams["init"])
    K, d = train_ds.num_classes, spec.embedding_dim
    t = cfg.train
    kind = cfg.loss.kind
    result = TrainResult(params=params, head=None, bank=None)

    if kind == "center":
        bank = None
        offset = 0
        if t.warm_start:
            # softmax pretraining, then prototypes from the pretrained embeddings
            pre_head = _init_head(K, d, streams["head"], unit=False)
            _train_phase(params, pre_head, None, "softmax", MarginSpec.plain(),
                         train_ds, t.pretrain_epochs, t.learning_rate, t.momentum,
                         streams["shuffle"], t.batch_size, result, log, 0, "pretrain")
            offset = t.pretrain_epochs
            E, _ = mlp_forward(params, train_ds.features)
            warm = exact_centers(E, train_ds.labels, K)
            bank = CenterBank(K, d, cfg.loss.strategy)
            bank.centers = warm.centers
            bank.degenerate = warm.degenerate
            bank.counts = warm.counts
        else:
            bank = cold_start_bank(K, d, cfg.loss.strategy, streams["head"])
        result.bank = bank
        _train_phase(params, None, bank, "center", cfg.loss.margin, train_ds,
                     t.epochs, t.learning_rate, t.momentum, streams["shuffle"],
                     t.batch_size, result, log, offset, "center")
    elif kind in ("softmax", "margin"):
        head = _init_head(K, d, streams["head"], unit=(kind == "margin"))
        result.head = head
        _train_phase(params, head, None, kind, cfg.loss.margin, train_ds,
                     t.epochs, t.learning_rate, t.momentum, streams["shuffle"],
                     t.batch_size, result, log, 0, kind)
    else:  # npairs
        _train_phase(params, None, None, "npairs", cfg.loss.margin, train_ds,
                     t.epochs, t.learning_rate, t.momentum, streams["shuffle"],
                     t.batch_size, result, log, 0, "npairs")

    E_train, _ = mlp_forward(params, train_ds.features)
    head_rows = result.head_rows()
    if head_rows is None:
        # no classifier head: score by cosine against exact train centers
        head_rows_for_acc = exact_centers(E_train, train_ds.labels, K)
    else:
        head_rows_for_acc = head_rows
    pred = classify(E_train, head_rows_for_acc)
    result.train_accuracy = float((pred == train_ds.labels).mean())
    return result


# ---------------------------------------------------------------------------
# Evaluation over a held-out set
# ---------------------------------------------------------------------------

def _gallery_probe_split(test_ds: LabeledDataset, gallery_per_class: int,
                         unknown_classes: tuple[int, ...]):
    """Deterministic split: the first gallery_per_class samples per known class
    go to the gallery, everything else probes. Unknown classes send all their
    samples to the probe side (non-mated)."""
    gallery_idx, probe_idx = [], []
    for k in range(test_ds.num_classes):
        members = np.flatnonzero(test_ds.labels == k)
        if members.size == 0:
            continue
        if k in unknown_classes:
            probe_idx.extend(members.tolist())
            continue
        gallery_idx.extend(members[:gallery_per_class].tolist())
        probe_idx.extend(members[gallery_per_class:].tolist())
    return np.asarray(gallery_idx, dtype=np.int64), np.asarray(probe_idx, dtype=np.int64)


def evaluate_experiment(cfg: ExperimentConfig, result: TrainResult,
                        train_ds: LabeledDataset, test_ds: LabeledDataset,
                        meta: dict | None = None) -> tuple[EvalReport, np.ndarray]:
    """Embed the test set and assemble the full evaluation report.

    Weight-center gaps compare the trained head (or bank) to exact centers
    recomputed on the training set with the final network.
    """
    params = result.params
    E_test, _ = mlp_forward(params, test_ds.features)
    E_train, _ = mlp_forward(params, train_ds.features)

    stats = embedding_stats(E_test, test_ds.labels)
    head_rows = result.head_rows()
    gaps: dict[int, float] = {}
    if head_rows is not None:
        train_centers = exact_centers(E_train, train_ds.labels, train_ds.num_classes)
        gaps = weight_center_gap(head_rows, train_centers)

    scores = score_pairs(E_test, test_ds.labels)
    vr = vr_at_far(scores, cfg.eval.far_targets)

    g_idx, p_idx = _gallery_probe_split(test_ds, cfg.eval.gallery_per_class,
                                        cfg.eval.unknown_classes)
    gal_E, gal_ids = E_test[g_idx], test_ds.labels[g_idx]
    pr_E, pr_ids = E_test[p_idx], test_ds.labels[p_idx]
    mated = np.isin(pr_ids, gal_ids)
    dir_map: dict[float, float] = {}
    if mated.size and (~mated).any():
        dir_map = dir_at_far(gal_E, gal_ids, pr_E, pr_ids, cfg.eval.far_targets)
    cmc_curve = cmc(gal_E, gal_ids, pr_E[mated], pr_ids[mated]) if mated.any() else []
    map_score = (mean_average_precision(gal_E, gal_ids, pr_E[mated], pr_ids[mated])
                 if mated.any() else 0.0)

    if head_rows is None:
        head_for_recall = exact_centers(E_train, train_ds.labels, train_ds.num_classes)
    else:
        head_for_recall = head_rows
    recall = per_class_recall(classify(E_test, head_for_recall),
                              test_ds.labels, test_ds.num_classes)

    report = EvalReport(
        vr_at_far=vr,
        dir_at_far=dir_map,
        cmc=[float(v) for v in np.asarray(cmc_curve)],
        map=float(map_score),
        intra_mean_angle=stats.intra_mean_angle,
        inter_min_angle=stats.inter_min_angle,
        max_intra_angle=stats.max_intra_angle,
        weight_center_gaps=gaps,
        train_accuracy=result.train_accuracy,
        test_recall=recall,
        meta=meta or {},
    )
    return report, E_test


def write_embeddings_csv(path, E: np.ndarray, labels: np.ndarray) -> None:
    """CSV with columns id,label,e0..e{d-1}; floats in shortest round-trip form."""
    with open(path, "w") as fh:
        dims = [f"e{j}" for j in range(E.shape[1])]
        fh.write(",".join(["id", "label"] + dims) + "\n")
        for i, (row, lab) in enumerate(zip(E, labels)):
            fh.write(f"{i},{int(lab)}," + ",".join(repr(float(v)) for v in row) + "\n")
