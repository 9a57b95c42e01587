"""Evaluation metrics: classification, ranking, and cluster separability."""

from __future__ import annotations

import numpy as np


class MetricError(ValueError):
    pass


def confusion_matrix(y_true, y_pred, n_classes):
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        cm[t, p] += 1
    return cm


def classification_metrics(y_true, y_pred, n_classes):
    """Accuracy, macro F1, weighted F1, and the multiclass (Gorodkin) MCC.

    Per-class F1 with no true or predicted instances counts as 0; MCC with a
    zero marginal returns 0.
    """
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if len(y_true) == 0:
        raise MetricError("empty input")
    if np.any((y_true < 0) | (y_true >= n_classes)) or \
       np.any((y_pred < 0) | (y_pred >= n_classes)):
        raise MetricError("label out of range")
    cm = confusion_matrix(y_true, y_pred, n_classes)
    n = cm.sum()
    accuracy = float(np.trace(cm)) / n

    f1 = np.zeros(n_classes)
    support = cm.sum(axis=1)
    for c in range(n_classes):
        tp = cm[c, c]
        denom = 2 * tp + (cm[c].sum() - tp) + (cm[:, c].sum() - tp)
        f1[c] = 2.0 * tp / denom if denom > 0 else 0.0
    macro_f1 = float(f1.mean())
    weighted_f1 = float((f1 * support).sum() / n) if n else 0.0

    # integer arithmetic until the final sqrt so the perfect case is exactly 1
    t = [int(v) for v in cm.sum(axis=1)]  # true-class counts
    p = [int(v) for v in cm.sum(axis=0)]  # predicted-class counts
    n_i = int(n)
    num = int(np.trace(cm)) * n_i - sum(a * b for a, b in zip(t, p))
    den_sq = (n_i * n_i - sum(v * v for v in p)) * \
             (n_i * n_i - sum(v * v for v in t))
    mcc = num / np.sqrt(den_sq) if den_sq > 0 else 0.0
    return {"accuracy": accuracy, "macro_f1": macro_f1,
            "weighted_f1": weighted_f1, "mcc": float(mcc)}


def ranking_metrics(y_true, scores):
    """AUROC via the Mann-Whitney statistic with midrank ties; AUPRC as the
    area under the precision-recall step curve."""
    y_true = np.asarray(y_true, dtype=np.int64)
    scores = np.asarray(scores, dtype=float)
    n_pos = int((y_true == 1).sum())
    n_neg = int((y_true == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricError("both classes required for ranking metrics")

    ranks = _midranks(scores)
    auroc = (ranks[y_true == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)

    order = np.lexsort((np.arange(len(scores)), -scores))
    ys = y_true[order]
    ss = scores[order]
    tp = np.cumsum(ys == 1)
    fp = np.cumsum(ys == 0)
    # evaluate only at distinct-threshold boundaries
    boundary = np.append(ss[1:] != ss[:-1], True)
    tp, fp = tp[boundary], fp[boundary]
    precision = tp / (tp + fp)
    recall = tp / n_pos
    auprc = 0.0
    prev_recall = 0.0
    for r, p in zip(recall, precision):
        auprc += (r - prev_recall) * p
        prev_recall = r
    return {"auroc": float(auroc), "auprc": float(auprc)}


def _midranks(x):
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x), dtype=float)
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def cluster_metrics(z, labels):
    """Silhouette score (singleton terms count 0) and the Davies-Bouldin
    index, both with Euclidean distances."""
    z = np.asarray(z, dtype=float)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if len(classes) < 2:
        raise MetricError("need at least 2 classes")
    diff = z[:, None, :] - z[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=-1))

    sil = np.zeros(len(z))
    for idx in range(len(z)):
        own = labels == labels[idx]
        n_own = own.sum()
        if n_own <= 1:
            sil[idx] = 0.0
            continue
        a = dist[idx, own].sum() / (n_own - 1)
        b = np.inf
        for c in classes:
            if c == labels[idx]:
                continue
            other = labels == c
            b = min(b, dist[idx, other].mean())
        denom = max(a, b)
        sil[idx] = (b - a) / denom if denom > 0 else 0.0
    silhouette = float(sil.mean())

    centroids = np.stack([z[labels == c].mean(axis=0) for c in classes])
    scatter = np.array([
        np.sqrt(((z[labels == c] - centroids[k]) ** 2).sum(axis=1)).mean()
        for k, c in enumerate(classes)])
    k = len(classes)
    db_terms = np.zeros(k)
    for i in range(k):
        worst = 0.0
        for j in range(k):
            if i == j:
                continue
            sep = np.linalg.norm(centroids[i] - centroids[j])
            ratio = (scatter[i] + scatter[j]) / sep if sep > 0 else np.inf
            worst = max(worst, ratio)
        db_terms[i] = worst
    return {"silhouette": silhouette, "davies_bouldin": float(db_terms.mean())}


def full_bundle(y_true, y_pred, probs, z, n_classes):
    """Assemble the standard metrics JSON; binary ranking metrics use class 1
    as positive with its softmax probability as the score."""
    out = classification_metrics(y_true, y_pred, n_classes)
    if n_classes == 2 and len(np.unique(y_true)) == 2:
        out.update(ranking_metrics(y_true, probs[:, 1]))
    else:
        out.update({"auroc": None, "auprc": None})
    if len(np.unique(y_true)) >= 2:
        out.update(cluster_metrics(z, y_true))
    else:
        out.update({"silhouette": None, "davies_bouldin": None})
    return out
