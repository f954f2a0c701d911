"""Open-set verification and retrieval metrics over cosine similarity.

All scores are cosine similarities, so every metric is invariant to positive
rescaling of the embeddings. Threshold selection is a strict step function on
the sorted impostor (or non-mated) scores with an accept-if->=-threshold rule:
no interpolation, so small instances can be checked against brute-force
enumeration exactly.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .centers import CenterBank, exact_centers, weight_center_gap
from .numerics import NORM_EPS, DegenerateNormError, as_matrix

REPORT_SCHEMA_VERSION = 1


@dataclass
class PairScores:
    genuine: np.ndarray
    impostor: np.ndarray


def cosine_matrix(A, B) -> np.ndarray:
    """Pairwise cosine similarity between rows of A and rows of B."""
    Am = as_matrix(A, "embeddings A")
    Bm = as_matrix(B, "embeddings B")
    na = np.linalg.norm(Am, axis=1)
    nb = np.linalg.norm(Bm, axis=1)
    if np.any(na <= NORM_EPS) or np.any(nb <= NORM_EPS):
        raise DegenerateNormError("degenerate embedding row")
    return (Am / na[:, None]) @ (Bm / nb[:, None]).T


def score_pairs(E, labels) -> PairScores:
    """Cosine scores for every unordered pair, split genuine/impostor by label."""
    Em = as_matrix(E, "embeddings")
    y = np.asarray(labels)
    if y.shape != (Em.shape[0],):
        raise ValueError("labels must match embedding rows")
    C = cosine_matrix(Em, Em)
    iu, ju = np.triu_indices(Em.shape[0], k=1)
    same = y[iu] == y[ju]
    scores = C[iu, ju]
    return PairScores(genuine=scores[same], impostor=scores[~same])


def score_aligned_pairs(E_a, E_b, genuine_mask) -> PairScores:
    """Cosine score per aligned row pair, split by the given genuine mask."""
    Am = as_matrix(E_a, "embeddings A")
    Bm = as_matrix(E_b, "embeddings B")
    if Am.shape != Bm.shape:
        raise ValueError("aligned pair arrays must share a shape")
    mask = np.asarray(genuine_mask, dtype=bool)
    if mask.shape != (Am.shape[0],):
        raise ValueError("genuine mask must match pair count")
    na = np.linalg.norm(Am, axis=1)
    nb = np.linalg.norm(Bm, axis=1)
    if np.any(na <= NORM_EPS) or np.any(nb <= NORM_EPS):
        raise DegenerateNormError("degenerate embedding row")
    scores = np.einsum("ij,ij->i", Am / na[:, None], Bm / nb[:, None])
    return PairScores(genuine=scores[mask], impostor=scores[~mask])


def _threshold_at_far(negatives: np.ndarray, far: float) -> float:
    """Smallest score t among `negatives` with (#negatives >= t)/N <= far.

    Returns +inf when even the largest negative is accepted too often, so the
    caller's accept-if->=-t rule accepts nothing.
    """
    n = negatives.size
    srt = np.sort(negatives)
    uniq = np.unique(srt)
    for t in uniq:
        accepted = n - int(np.searchsorted(srt, t, side="left"))
        if accepted / n <= far:
            return float(t)
    return float("inf")


def vr_at_far(scores: PairScores, far_targets) -> dict[float, float]:
    """Verification rate (genuine accept fraction) at each false-accept target."""
    imp = np.asarray(scores.impostor, dtype=np.float64)
    gen = np.asarray(scores.genuine, dtype=np.float64)
    if imp.size == 0:
        raise ValueError("need at least one impostor score")
    out: dict[float, float] = {}
    for far in far_targets:
        t = _threshold_at_far(imp, float(far))
        out[float(far)] = float(np.mean(gen >= t)) if gen.size else 0.0
    return out


def dir_at_far(gallery_E, gallery_ids, probe_E, probe_ids,
               far_targets) -> dict[float, float]:
    """Open-set identification rate at each false-accept target.

    A probe is mated when its identity appears in the gallery. Each probe is
    scored by its best gallery match; the threshold comes from the non-mated
    best scores. A mated probe counts only if accepted AND rank-1 correct.
    """
    g_ids = np.asarray(gallery_ids)
    p_ids = np.asarray(probe_ids)
    if g_ids.size == 0:
        raise ValueError("empty gallery")
    C = cosine_matrix(probe_E, gallery_E)
    best_idx = np.argmax(C, axis=1)            # first index wins ties
    best = C[np.arange(C.shape[0]), best_idx]
    pred = g_ids[best_idx]
    mated = np.isin(p_ids, g_ids)
    if not np.any(~mated):
        raise ValueError("need at least one non-mated probe")
    nonmated_best = best[~mated]
    correct = pred == p_ids
    out: dict[float, float] = {}
    for far in far_targets:
        t = _threshold_at_far(nonmated_best, float(far))
        hits = (best >= t) & correct & mated
        out[float(far)] = float(hits.sum() / max(int(mated.sum()), 1))
    return out


def _gallery_ranking(gallery_E, gallery_ids, probe_E, probe_ids):
    g_ids = np.asarray(gallery_ids)
    p_ids = np.asarray(probe_ids)
    C = cosine_matrix(probe_E, gallery_E)
    mates = g_ids[None, :] == p_ids[:, None]
    if not mates.any(axis=1).all():
        bad = int(np.argmin(mates.any(axis=1)))
        raise ValueError(f"probe {bad} has no gallery mate")
    # score descending, gallery index ascending on ties
    order = np.lexsort((np.broadcast_to(np.arange(g_ids.size), C.shape), -C), axis=1)
    return order, mates


def cmc(gallery_E, gallery_ids, probe_E, probe_ids) -> np.ndarray:
    """Cumulative match rates: entry r-1 is the fraction of probes whose first
    mate appears within the top r gallery entries."""
    order, mates = _gallery_ranking(gallery_E, gallery_ids, probe_E, probe_ids)
    P, G = order.shape
    first_hit = np.empty(P, dtype=np.int64)
    for i in range(P):
        ranked = mates[i, order[i]]
        first_hit[i] = int(np.argmax(ranked))
    counts = np.bincount(first_hit, minlength=G)
    return np.cumsum(counts) / P


def mean_average_precision(gallery_E, gallery_ids, probe_E, probe_ids) -> float:
    """Mean over probes of average precision across all gallery mates.

    Averages use exactly-rounded summation, so the result is independent of
    reduction order and reproducible bit for bit.
    """
    import math

    order, mates = _gallery_ranking(gallery_E, gallery_ids, probe_E, probe_ids)
    P = order.shape[0]
    aps = []
    for i in range(P):
        ranked = mates[i, order[i]]
        positions = np.flatnonzero(ranked) + 1          # 1-based ranks of mates
        precisions = np.arange(1, positions.size + 1) / positions
        aps.append(math.fsum(precisions) / positions.size)
    return math.fsum(aps) / P


@dataclass
class EmbeddingStats:
    max_intra_angle: dict[int, float]     # per class; 0.0 for singleton classes
    intra_mean_angle: float               # mean over all same-class pairs
    inter_min_angle: float                # min angle between exact class centers
    weight_center_gaps: dict[int, float]  # vs exact centers; empty if no head


def embedding_stats(E, labels, head_rows=None) -> EmbeddingStats:
    """Intra/inter-class angle statistics plus head-vs-center gaps.

    head_rows may be a weight matrix or a CenterBank; gaps compare its rows to
    the exact centers of (E, labels).
    """
    Em = as_matrix(E, "embeddings")
    y = np.asarray(labels)
    classes = np.unique(y)
    if classes.size < 2:
        raise ValueError("need at least 2 classes")
    C = np.clip(cosine_matrix(Em, Em), -1.0, 1.0)
    angles = np.arccos(C)
    iu, ju = np.triu_indices(Em.shape[0], k=1)
    same = y[iu] == y[ju]
    intra_mean = float(angles[iu, ju][same].mean()) if same.any() else 0.0

    max_intra: dict[int, float] = {}
    for k in classes:
        members = np.flatnonzero(y == k)
        if members.size < 2:
            max_intra[int(k)] = 0.0
        else:
            sub = angles[np.ix_(members, members)]
            max_intra[int(k)] = float(sub.max())

    if head_rows is None:
        num_classes = int(classes.max()) + 1
    elif isinstance(head_rows, CenterBank):
        num_classes = head_rows.num_classes
    else:
        num_classes = np.asarray(head_rows).shape[0]
    bank = exact_centers(Em, y, num_classes)
    valid = np.flatnonzero(~bank.degenerate)
    inter_min = float("inf")
    cc = np.clip(cosine_matrix(bank.centers[valid], bank.centers[valid]), -1.0, 1.0)
    for a in range(valid.size):
        for b in range(a + 1, valid.size):
            inter_min = min(inter_min, float(np.arccos(cc[a, b])))

    gaps: dict[int, float] = {}
    if head_rows is not None:
        gaps = weight_center_gap(head_rows, bank)
    return EmbeddingStats(max_intra, intra_mean, inter_min, gaps)


# ---------------------------------------------------------------------------
# Evaluation report with a published JSON schema
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    vr_at_far: dict[float, float]
    dir_at_far: dict[float, float]
    cmc: list[float]
    map: float
    intra_mean_angle: float
    inter_min_angle: float
    max_intra_angle: dict[int, float]
    weight_center_gaps: dict[int, float]
    train_accuracy: float | None = None
    test_recall: dict[int, float] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def to_doc(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "vr_at_far": {repr(float(k)): float(v) for k, v in self.vr_at_far.items()},
            "dir_at_far": {repr(float(k)): float(v) for k, v in self.dir_at_far.items()},
            "cmc": [float(v) for v in self.cmc],
            "map": float(self.map),
            "intra_mean_angle": float(self.intra_mean_angle),
            "inter_min_angle": float(self.inter_min_angle),
            "max_intra_angle": {str(int(k)): float(v)
                                for k, v in self.max_intra_angle.items()},
            "weight_center_gaps": {str(int(k)): float(v)
                                   for k, v in self.weight_center_gaps.items()},
            "train_accuracy": None if self.train_accuracy is None
                              else float(self.train_accuracy),
            "test_recall": {str(int(k)): float(v) for k, v in self.test_recall.items()},
            "meta": self.meta,
        }


REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "embedlab evaluation report",
    "type": "object",
    "required": ["schema_version", "vr_at_far", "dir_at_far", "cmc", "map",
                 "intra_mean_angle", "inter_min_angle", "max_intra_angle",
                 "weight_center_gaps", "train_accuracy", "test_recall", "meta"],
    "properties": {
        "schema_version": {"const": REPORT_SCHEMA_VERSION},
        "vr_at_far": {"type": "object",
                      "additionalProperties": {"type": "number",
                                               "minimum": 0, "maximum": 1}},
        "dir_at_far": {"type": "object",
                       "additionalProperties": {"type": "number",
                                                "minimum": 0, "maximum": 1}},
        "cmc": {"type": "array",
                "items": {"type": "number", "minimum": 0, "maximum": 1}},
        "map": {"type": "number", "minimum": 0, "maximum": 1},
        "intra_mean_angle": {"type": "number"},
        "inter_min_angle": {"type": "number"},
        "max_intra_angle": {"type": "object",
                            "additionalProperties": {"type": "number"}},
        "weight_center_gaps": {"type": "object",
                               "additionalProperties": {"type": "number"}},
        "train_accuracy": {"type": ["number", "null"]},
        "test_recall": {"type": "object",
                        "additionalProperties": {"type": "number"}},
        "meta": {"type": "object"},
    },
    "additionalProperties": False,
}


def write_report(report: EvalReport, path) -> None:
    """Serialize the report, validating against REPORT_SCHEMA first."""
    import jsonschema

    doc = report.to_doc()
    jsonschema.validate(doc, REPORT_SCHEMA)
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")
