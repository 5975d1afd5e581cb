"""Retrieval metrics with bootstrap statistics and a logistic linear probe.

Every query has exactly one relevant candidate (its paired item), so mAP
uses the single-relevant reduction (1/rank) and NDCG@10 reduces to
1/log2(1+rank) for ranks within the cutoff. Ranking ties break toward the
lower candidate index, which makes every metric deterministic. Bootstrap
iterations draw without replacement with per-iteration rng streams derived
from (seed, iteration), so results never depend on execution order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import rankdata

from .tensor import ContractError, ShapeError

RETRIEVAL_METRICS = ("R@1", "R@5", "R@10", "R@50", "R@100", "MeanRank", "mAP", "NDCG@10")
RECALL_KS = (1, 5, 10, 50, 100)


def cosine_matrix(img: np.ndarray, txt: np.ndarray) -> np.ndarray:
    """scores[i, j] = <img_i, txt_j> for unit rows."""
    img = np.asarray(img)
    txt = np.asarray(txt)
    if img.ndim != 2 or txt.ndim != 2 or img.shape[1] != txt.shape[1]:
        raise ShapeError(f"embedding dims disagree: {img.shape} vs {txt.shape}")
    return img @ txt.T


def ranks_of_truth(sim: np.ndarray) -> np.ndarray:
    """1-based rank of the paired candidate j=i per query row; ties favor lower index."""
    sim = np.asarray(sim)
    if sim.ndim != 2 or sim.shape[0] != sim.shape[1]:
        raise ShapeError(f"paired retrieval needs a square matrix, got {sim.shape}")
    n = sim.shape[0]
    idx = np.arange(n)
    true_scores = sim[idx, idx][:, None]
    higher = (sim > true_scores).sum(axis=1)
    tied_before = ((sim == true_scores) & (idx[None, :] < idx[:, None])).sum(axis=1)
    return 1 + higher + tied_before


def recall_at_k(sim: np.ndarray, k: int) -> float:
    if k < 1:
        raise ContractError(f"recall cutoff must be >= 1, got {k}")
    return float(np.mean(ranks_of_truth(sim) <= k))


def mean_rank(sim: np.ndarray) -> float:
    return float(np.mean(ranks_of_truth(sim)))


def map_score(sim: np.ndarray) -> float:
    """Single-relevant reduction of average precision: mean of 1/rank."""
    return float(np.mean(1.0 / ranks_of_truth(sim)))


def ndcg_at_10(sim: np.ndarray) -> float:
    ranks = ranks_of_truth(sim)
    gains = np.where(ranks <= 10, 1.0 / np.log2(1.0 + ranks), 0.0)
    return float(np.mean(gains))


def retrieval_metrics(sim: np.ndarray) -> dict[str, float]:
    ranks = ranks_of_truth(sim)
    out = {f"R@{k}": float(np.mean(ranks <= k)) for k in RECALL_KS}
    out["MeanRank"] = float(np.mean(ranks))
    out["mAP"] = float(np.mean(1.0 / ranks))
    out["NDCG@10"] = float(np.mean(np.where(ranks <= 10, 1.0 / np.log2(1.0 + ranks), 0.0)))
    return out


@dataclass(frozen=True)
class MetricStat:
    mean: float
    std: float


@dataclass
class RetrievalReport:
    """Bootstrap mean/std per metric plus the protocol metadata."""

    stats: dict[str, MetricStat]
    meta: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "metrics": {k: {"mean": v.mean, "std": v.std} for k, v in self.stats.items()},
            "meta": self.meta,
        }

    def to_csv_rows(self) -> list[tuple[str, float, float]]:
        return [(k, v.mean, v.std) for k, v in self.stats.items()]


def bootstrap_eval(img: np.ndarray, txt: np.ndarray, subset_size: int, iters: int,
                   seed: int) -> RetrievalReport:
    """iters subsets drawn without replacement; report mean/std per metric."""
    img = np.asarray(img)
    txt = np.asarray(txt)
    n = img.shape[0]
    if txt.shape[0] != n:
        raise ShapeError(f"paired sets must be equal length, got {n} vs {txt.shape[0]}")
    if subset_size > n:
        raise ContractError(f"subset_size {subset_size} exceeds population {n}")
    if subset_size < 1 or iters < 1:
        raise ContractError("subset_size and iters must be >= 1")
    per_metric: dict[str, list[float]] = {m: [] for m in RETRIEVAL_METRICS}
    for it in range(iters):
        rng = np.random.default_rng(np.random.SeedSequence([seed, it]))
        idx = np.sort(rng.permutation(n)[:subset_size])  # subsets are sets
        sim = cosine_matrix(img[idx], txt[idx])
        for m, v in retrieval_metrics(sim).items():
            per_metric[m].append(v)
    stats = {m: MetricStat(float(np.mean(vs)), float(np.std(vs)))
             for m, vs in per_metric.items()}
    meta = {"subset_size": subset_size, "iters": iters, "seed": seed,
            "population": n, "map_reduction": "single_relevant"}
    return RetrievalReport(stats=stats, meta=meta)


# ---------------------------------------------------------------------------
# per-class binary metrics
# ---------------------------------------------------------------------------

def auc_rank_sum(scores: np.ndarray, labels: np.ndarray) -> Optional[float]:
    """Mann-Whitney AUC with average tie ranks; None when a class is absent."""
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = int((~labels).sum())
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def average_precision(scores: np.ndarray, labels: np.ndarray) -> Optional[float]:
    """Binary AP over the score ranking (ties toward lower index); None without positives."""
    labels = np.asarray(labels).astype(bool)
    if not labels.any():
        return None
    order = np.lexsort((np.arange(len(scores)), -np.asarray(scores)))
    hits = labels[order]
    cum = np.cumsum(hits)
    precision_at_hit = cum[hits] / (np.flatnonzero(hits) + 1)
    return float(np.mean(precision_at_hit))


def _binary_counts(pred: np.ndarray, labels: np.ndarray) -> tuple[float, float, float]:
    tp = int(np.sum(pred & labels))
    fp = int(np.sum(pred & ~labels))
    fn = int(np.sum(~pred & labels))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


# ---------------------------------------------------------------------------
# linear probe
# ---------------------------------------------------------------------------

@dataclass
class ProbeReport:
    per_class: list[dict]
    macro: dict[str, MetricStat]

    def to_json_dict(self) -> dict:
        return {
            "per_class": self.per_class,
            "macro": {k: {"mean": v.mean, "std": v.std} for k, v in self.macro.items()},
        }


def _fit_logistic(x: np.ndarray, y: np.ndarray, l2: float, max_iters: int,
                  tol: float) -> np.ndarray:
    """Full-batch GD on BCE-with-logits; step size from the Hessian bound."""
    n = x.shape[0]
    design = np.hstack([x, np.ones((n, 1))])
    w = np.zeros(design.shape[1])
    lipschitz = (design ** 2).sum() / (4.0 * n) + l2
    lr = 1.0 / lipschitz
    prev_loss = np.inf
    for _ in range(max_iters):
        z = design @ w
        # stable BCE-with-logits: softplus(z) - y z, softplus via logaddexp
        loss = float(np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * (w @ w))
        sigma = 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))
        grad = design.T @ (sigma - y) / n + l2 * w
        w = w - lr * grad
        if abs(prev_loss - loss) < tol:
            break
        prev_loss = loss
    return w


def linear_probe(train_x: np.ndarray, train_y: np.ndarray, test_x: np.ndarray,
                 test_y: np.ndarray, l2: float = 0.0, max_iters: int = 10_000,
                 tol: float = 1e-8) -> ProbeReport:
    """Per-class logistic regression on frozen embeddings.

    train_y/test_y are binary [N, classes]. Degenerate classes report AUC/AP
    as absent (None) rather than 0.
    """
    train_x = np.asarray(train_x, dtype=np.float64)
    test_x = np.asarray(test_x, dtype=np.float64)
    train_y = np.asarray(train_y)
    test_y = np.asarray(test_y)
    if train_y.ndim != 2 or test_y.ndim != 2 or train_y.shape[1] != test_y.shape[1]:
        raise ShapeError(f"label shapes disagree: {train_y.shape} vs {test_y.shape}")
    per_class: list[dict] = []
    for c in range(train_y.shape[1]):
        w = _fit_logistic(train_x, train_y[:, c].astype(np.float64), l2, max_iters, tol)
        z = np.hstack([test_x, np.ones((test_x.shape[0], 1))]) @ w
        labels = test_y[:, c].astype(bool)
        precision, recall, f1 = _binary_counts(z > 0.0, labels)
        per_class.append({
            "class": c,
            "precision": precision,
            "recall": recall,
            "f1": f1,
            "auc": auc_rank_sum(z, labels),
            "ap": average_precision(z, labels),
        })
    macro: dict[str, MetricStat] = {}
    for key in ("precision", "recall", "f1", "auc", "ap"):
        vals = [row[key] for row in per_class if row[key] is not None]
        if vals:
            macro[key] = MetricStat(float(np.mean(vals)), float(np.std(vals)))
    return ProbeReport(per_class=per_class, macro=macro)
