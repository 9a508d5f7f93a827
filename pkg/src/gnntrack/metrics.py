"""Tracking scores against ground truth: association accuracy, target effectiveness, edge P/R."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np


@dataclass
class GtAssociation:
    links: set     # ((t, label), (t + 1, label)) pairs, mitosis links included
    tracks: dict   # cell index -> ordered (t, label) keys

    @classmethod
    def from_forest(cls, forest):
        for a, b in forest.links():
            if b[0] != a[0] + 1:
                raise ValueError(f"link {a}->{b} does not join consecutive frames")
        return cls(forest.links(), {tr.n: list(tr.instances) for tr in forest.tracks})


def association_accuracy(predicted_links, gt_links):
    gt = set(gt_links)
    if not gt:
        raise ValueError("association accuracy is undefined without ground-truth links")
    return len(gt & set(predicted_links)) / len(gt)


def target_effectiveness(predicted_tracks, gt_tracks):
    """Instance coverage of each GT track by its best-overlapping predicted track.

    Both arguments map track id -> iterable of (t, label). Returns the
    instance-weighted TE, the mean of per-track ratios, and the per-track table.
    """
    owner = {}
    length = {}
    for n, keys in predicted_tracks.items():
        keys = list(keys)
        length[n] = len(keys)
        for k in keys:
            owner[k] = n
    rows = []
    covered_total = 0
    gt_total = 0
    for n, keys in sorted(gt_tracks.items()):
        keys = list(keys)
        votes = Counter(owner[k] for k in keys if k in owner)
        if votes:
            best = max(votes, key=lambda p: (votes[p], length[p], -p))
            covered = votes[best]
        else:
            best, covered = None, 0
        rows.append({"gt_track": n, "length": len(keys), "matched": best, "covered": covered,
                     "ratio": covered / len(keys) if keys else 0.0})
        covered_total += covered
        gt_total += len(keys)
    te = covered_total / gt_total if gt_total else 0.0
    te_mean = float(np.mean([r["ratio"] for r in rows])) if rows else 0.0
    return {"te": te, "te_mean": te_mean, "per_track": rows}


def edge_prf(probs, y, threshold=0.5):
    """Precision/recall/F1 of thresholded edge predictions. Undefined ratios are
    reported as 0 and flagged."""
    probs = np.asarray(probs, dtype=np.float64).ravel()
    y = np.asarray(y).ravel().astype(bool)
    if probs.shape != y.shape:
        raise ValueError(f"{probs.size} predictions vs {y.size} labels")
    pred = probs > threshold
    tp = int(np.sum(pred & y))
    fp = int(np.sum(pred & ~y))
    fn = int(np.sum(~pred & y))
    p_def = tp + fp > 0
    r_def = tp + fn > 0
    precision = tp / (tp + fp) if p_def else 0.0
    recall = tp / (tp + fn) if r_def else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return {"precision": precision, "recall": recall, "f1": f1, "tp": tp, "fp": fp, "fn": fn,
            "precision_defined": p_def, "recall_defined": r_def}


def evaluate(pred_forest, gt_forest, edge_scores=None):
    """Metrics report for a predicted lineage forest."""
    gt = GtAssociation.from_forest(gt_forest)
    pred_tracks = {tr.n: tr.instances for tr in pred_forest.tracks}
    te = target_effectiveness(pred_tracks, gt.tracks)
    report = {
        "aa": association_accuracy(pred_forest.links(), gt.links),
        "te": te["te"],
        "te_mean": te["te_mean"],
    }
    if edge_scores is not None:
        probs, keys = edge_scores
        y = [k in gt.links for k in keys]
        prf = edge_prf(probs, y)
        report.update(edge_precision=prf["precision"], edge_recall=prf["recall"], edge_f1=prf["f1"])
    report["per_track"] = te["per_track"]
    return report
