"""Brute-force metric oracles, independent of the rank-based implementations."""


def auc_pairs(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    total = 0.0
    for p in pos:
        for n in neg:
            total += 1.0 if p > n else 0.5 if p == n else 0.0
    return total / (len(pos) * len(neg))


def ap_threshold_walk(scores, labels):
    """Sum over distinct thresholds t (descending) of (recall gain) * precision at score >= t."""
    n_pos = sum(bool(y) for y in labels)
    prev_recall = 0.0
    total = 0.0
    for t in sorted(set(scores), reverse=True):
        picked = [y for s, y in zip(scores, labels) if s >= t]
        tp = sum(bool(y) for y in picked)
        recall = tp / n_pos
        total += (recall - prev_recall) * (tp / len(picked))
        prev_recall = recall
    return total


def ap_rank_walk(scores, labels):
    """Tie-free case: mean of precision@k over the ranks k of the positives."""
    order = sorted(range(len(scores)), key=lambda i: -scores[i])
    hits, acc = 0, 0.0
    for k, i in enumerate(order, start=1):
        if labels[i]:
            hits += 1
            acc += hits / k
    return acc / hits
