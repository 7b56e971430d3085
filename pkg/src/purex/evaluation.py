"""Held-out evaluation: PR curves, P@N, selector accuracy, ablation runs.

Scoring unit is the entity-relation tuple: a tuple's score is the
maximum predicted score over its bags. NA is excluded from predictions
and from the gold set; NA-labeled bags stay in the corpus as negatives.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .corpus import Bag, Vocabulary
from .errors import ConfigError, DataError
from .trainer import Model, TrainConfig, predict_bag, train_model, _eval_embeddings, _greedy_split


class PredictionEntry(NamedTuple):
    head: str
    tail: str
    relation: str
    score: float


def sort_predictions(entries) -> list[PredictionEntry]:
    # descending score, ties broken by tuple key for determinism
    return sorted(entries, key=lambda e: (-e.score, e.head, e.tail, e.relation))


def pr_curve(preds, gold):
    """Prefix-sweep precision/recall points plus trapezoidal AUC.

    At cutoff k: precision = hits/k, recall = hits/|gold|. The curve is
    integrated over recall with a leading anchor at (0, precision@1).
    """
    if not gold:
        raise DataError("pr_curve: empty gold set (recall undefined)")
    preds = sort_predictions(preds)
    points = []
    hits = 0
    for k, e in enumerate(preds, start=1):
        if (e.head, e.tail, e.relation) in gold:
            hits += 1
        points.append((hits / len(gold), hits / k))
    if not points:
        return [], 0.0
    auc = 0.0
    prev_r, prev_p = 0.0, points[0][1]
    for r, p in points:
        auc += (r - prev_r) * (p + prev_p) / 2.0
        prev_r, prev_p = r, p
    return points, auc


def precision_at_n(preds, gold, n: int) -> float:
    if n < 1:
        raise ConfigError(f"precision_at_n: N must be >= 1, got {n}")
    top = sort_predictions(preds)[:n]
    if not top:
        return 0.0
    hits = sum(1 for e in top if (e.head, e.tail, e.relation) in gold)
    return hits / len(top)


@dataclass
class SelectorAccuracy:
    precision: float
    recall: float
    f1: float
    true_positive_rate: float  # always-positive baseline precision
    n_sentences: int


def selector_accuracy(splits, sidecar_flags) -> SelectorAccuracy:
    """Grade positive selections against the synthetic sidecar.

    `splits` is an iterable of (bag, positive_indices) where the split
    was produced under the bag's own distant label. NA bags are skipped:
    no sentence counts as a true positive for the no-relation query.
    """
    tp = fp = fn = 0
    total = true_total = 0
    for bag, positive in splits:
        if bag.distant_label == 0:
            continue
        pos_set = set(positive)
        for i, inst in enumerate(bag.instances):
            if inst.line_no < 0 or inst.line_no >= len(sidecar_flags):
                raise DataError(f"sidecar has no entry for corpus line {inst.line_no}")
            truth = sidecar_flags[inst.line_no]
            total += 1
            true_total += int(truth)
            if i in pos_set:
                if truth:
                    tp += 1
                else:
                    fp += 1
            elif truth:
                fn += 1
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return SelectorAccuracy(precision=precision, recall=recall, f1=f1,
                            true_positive_rate=true_total / total if total else 0.0,
                            n_sentences=total)


def greedy_splits(model: Model, bags):
    """(bag, positive indices) under each bag's distant label, greedy agent."""
    out = []
    for bag in bags:
        embs = _eval_embeddings(model, bag)
        res = _greedy_split(model, embs, bag.distant_label)
        out.append((bag, res.positive))
    return out


# ---------------------------------------------------------------------------
# Corpus-level prediction and the ablation suite


def gold_tuples(bags, relations) -> set:
    return {(b.key[0], b.key[1], relations[b.distant_label])
            for b in bags if b.distant_label != 0}


def bag_prediction_entries(model: Model, bags):
    """One entry per bag per non-NA relation (the `predict` dump contents)."""
    entries = []
    for bag in bags:
        scores, _ = predict_bag(model, bag)
        for r in range(1, len(model.relations)):
            entries.append(PredictionEntry(bag.key[0], bag.key[1],
                                           model.relations[r], float(scores[r])))
    return entries


def aggregate_tuple_scores(entries) -> list[PredictionEntry]:
    best: dict[tuple, float] = {}
    for e in entries:
        key = (e.head, e.tail, e.relation)
        if key not in best or e.score > best[key]:
            best[key] = e.score
    return sort_predictions(PredictionEntry(h, t, r, s) for (h, t, r), s in best.items())


def evaluate_predictions(model: Model, bags, relations):
    """Tuple-level PR curve and P@N against the bags' distant labels."""
    gold = gold_tuples(bags, relations)
    preds = aggregate_tuple_scores(bag_prediction_entries(model, bags))
    points, auc = pr_curve(preds, gold)
    return {
        "auc": auc,
        "points": points,
        "p_at_100": precision_at_n(preds, gold, 100),
        "p_at_200": precision_at_n(preds, gold, 200),
        "p_at_300": precision_at_n(preds, gold, 300),
        "n_predictions": len(preds),
        "n_gold": len(gold),
    }


def write_pr_csv(path, points) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["recall", "precision"])
        for r, p in points:
            writer.writerow([f"{r:.6f}", f"{p:.6f}"])


@dataclass
class EvalDataset:
    train_bags: list[Bag]
    test_bags: list[Bag]
    vocab: Vocabulary
    relations: list[str]
    test_sidecar: list[bool] | None = None


@dataclass
class AblationRun:
    name: str
    model: Model
    metrics: dict
    train_seconds: float
    log: list


def run_ablation_suite(dataset: EvalDataset, configs, out_dir=None):
    """Train each config (shared seed conventions are the caller's choice)
    and compare held-out AUC / P@N; returns (table rows, runs by name)."""
    rows, runs = [], {}
    for config in configs:
        name = config.ablation
        log: list = []
        t0 = time.perf_counter()
        model, _ = train_model(dataset.train_bags, dataset.vocab, dataset.relations,
                               config, log=log)
        elapsed = time.perf_counter() - t0
        metrics = evaluate_predictions(model, dataset.test_bags, dataset.relations)
        if out_dir is not None:
            write_pr_csv(f"{out_dir}/pr_{name}.csv", metrics["points"])
        rows.append({
            "config": name,
            "auc": metrics["auc"],
            "p_at_100": metrics["p_at_100"],
            "p_at_200": metrics["p_at_200"],
            "p_at_300": metrics["p_at_300"],
            "train_seconds": elapsed,
        })
        runs[name] = AblationRun(name=name, model=model, metrics=metrics,
                                 train_seconds=elapsed, log=log)
    return rows, runs
