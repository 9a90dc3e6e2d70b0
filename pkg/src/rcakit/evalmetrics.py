"""Evaluation harness: PR@K / PR@Avg / RankScore over alarm cases, AUC and
SHD over recovered graphs."""

from dataclasses import dataclass

import numpy as np


@dataclass
class AlarmCase:
    true_roots: "set[int]"       # V_a
    ranking: "list[int]"         # R_a, duplicate-free

    def __post_init__(self):
        self.true_roots = set(self.true_roots)
        if not self.true_roots:
            raise ValueError("case needs at least one true root cause")
        if len(set(self.ranking)) != len(self.ranking):
            raise ValueError("ranking contains duplicates")


def precision_at_k(cases, K: int) -> float:
    """Mean over cases of (hits in top K) / min(K, |V_a|)."""
    if K < 1:
        raise ValueError("K must be >= 1")
    if not cases:
        raise ValueError("no alarm cases")
    vals = []
    for case in cases:
        hits = sum(1 for node in case.ranking[:K] if node in case.true_roots)
        vals.append(hits / min(K, len(case.true_roots)))
    return float(np.mean(vals))


def precision_at_avg(cases) -> float:
    """Mean of PR@1 .. PR@5."""
    return float(np.mean([precision_at_k(cases, k) for k in range(1, 6)]))


def rank_score(cases) -> float:
    """Position-discounted score, the printed formula taken literally:
    per case (1/|R_a|) * sum over hits of 1 - max(0, i - |V_a|) / |R_a|,
    with i the 1-based position."""
    if not cases:
        raise ValueError("no alarm cases")
    vals = []
    for case in cases:
        n = len(case.ranking)
        if n == 0:
            raise ValueError("empty ranking")
        total = 0.0
        for i, node in enumerate(case.ranking, start=1):
            if node in case.true_roots:
                total += 1.0 - max(0, i - len(case.true_roots)) / n
        vals.append(total / n)
    return float(np.mean(vals))


def graph_auc(scores: np.ndarray, truth: np.ndarray) -> float:
    """ROC-AUC over all off-diagonal ordered pairs, midrank tie handling."""
    d = scores.shape[0]
    off = ~np.eye(d, dtype=bool)
    y = (truth[off] != 0).astype(float)
    x = scores[off].astype(float)
    pos, neg = y.sum(), (1 - y).sum()
    if pos == 0 or neg == 0:
        raise ValueError("AUC needs both present and absent edges")
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x))
    sx = x[order]
    i = 0
    while i < len(sx):
        j = i
        while j + 1 < len(sx) and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i: j + 1]] = 0.5 * (i + j) + 1.0   # midrank, 1-based
        i = j + 1
    return float((ranks[y == 1].sum() - pos * (pos + 1) / 2) / (pos * neg))


def graph_shd(pred_D: np.ndarray, true_D: np.ndarray) -> int:
    """Structural Hamming distance over directed graphs (bidirected edges
    are dropped by the caller before evaluation); a reversed edge counts as
    one move."""
    P = (np.asarray(pred_D) != 0).astype(int)
    T = (np.asarray(true_D) != 0).astype(int)
    d = P.shape[0]
    shd = 0
    for i in range(d):
        for j in range(i + 1, d):
            pf, pb = P[i, j], P[j, i]
            tf, tb = T[i, j], T[j, i]
            if pf == tf and pb == tb:
                continue
            if (pf, pb) in ((1, 0), (0, 1)) and (tf, tb) in ((1, 0), (0, 1)):
                shd += 1          # reversal
            else:
                shd += abs(pf - tf) + abs(pb - tb)
    return int(shd)
