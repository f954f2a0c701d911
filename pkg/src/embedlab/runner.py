"""Execute one experiment config: train, evaluate, write run artifacts.

A run directory receives config.resolved.yaml, checkpoint.json,
embeddings.csv, report.json and run.log. Nothing in the artifacts depends on
wall-clock time, so identical config + seed reproduces identical bytes.
"""
from __future__ import annotations

from pathlib import Path

from .centers import bank_to_doc
from .config import ExperimentConfig, config_to_dict, dump_config
from .evaluation import write_report
from .model import config_hash, save_checkpoint
from .training import (derive_streams, evaluate_experiment, prepare_data,
                       run_training, write_embeddings_csv)


def _margin_desc(cfg: ExperimentConfig) -> dict:
    m = cfg.loss.margin
    return {"kind": m.kind, "m": m.m, "alpha": m.alpha,
            "m1": m.m1, "m2": m.m2, "m3": m.m3}


def execute_experiment(cfg: ExperimentConfig, out_dir, log=None) -> dict:
    """Run the full pipeline; returns the report document that was written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log_lines: list[str] = []

    def logline(msg: str) -> None:
        log_lines.append(msg)
        if log is not None:
            log(msg)

    streams = derive_streams(cfg.train.seed)
    train_ds, test_ds = prepare_data(cfg, streams)
    logline(f"train: {train_ds.n} samples, {train_ds.num_classes} classes, "
            f"counts={train_ds.per_class_counts().tolist()}")
    logline(f"test:  {test_ds.n} samples")

    result = run_training(cfg, train_ds, streams, log=logline)
    logline(f"train_accuracy={result.train_accuracy:.4f}")

    meta = {
        "loss": cfg.loss.kind,
        "margin": _margin_desc(cfg),
        "strategy": None if cfg.loss.strategy is None else cfg.loss.strategy.kind,
        "seed": cfg.train.seed,
        "epochs": cfg.train.epochs,
        "pretrain_epochs": cfg.train.pretrain_epochs if cfg.train.warm_start else 0,
        "final_epoch_loss": result.epoch_losses[-1] if result.epoch_losses else None,
        "epoch_losses": result.epoch_losses,
        "skipped_batches": result.skipped_batches,
        "center_samples_skipped": 0 if result.bank is None else result.bank.skipped,
    }
    report, E_test = evaluate_experiment(cfg, result, train_ds, test_ds, meta=meta)

    dump_config(cfg, out / "config.resolved.yaml")
    cfg_hash = config_hash(config_to_dict(cfg))
    bank_doc = None if result.bank is None else bank_to_doc(result.bank)
    save_checkpoint(out / "checkpoint.json", result.params,
                    head=result.head, bank_doc=bank_doc, cfg_hash=cfg_hash)
    write_embeddings_csv(out / "embeddings.csv", E_test, test_ds.labels)
    write_report(report, out / "report.json")

    for k, v in report.weight_center_gaps.items():
        logline(f"gap[{k}]={v:.4f}")
    logline(f"map={report.map:.4f}")
    (out / "run.log").write_text("\n".join(log_lines) + "\n")
    return report.to_doc()
