"""Cross-validated identification of critical ground-motion features."""

from __future__ import annotations

import csv
import itertools
import json
import logging
import threading
from dataclasses import dataclass, field

import numpy as np

from . import gp_surrogate
from .errors import DomainError
from .gmf_extract import FEATURE_NAMES

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SubsetScore:
    features: tuple
    r2: float

    @property
    def size(self):
        return len(self.features)


@dataclass
class SelectionDataset:
    """Features, structural parameters and EDPs split into train/test parts.

    Inputs are z-scored on the training rows, positive columns in log space.
    The regression target is log IDR.
    """

    features: np.ndarray
    structural: np.ndarray
    edp: np.ndarray
    n_train: int
    seed: int = 0
    train_idx: np.ndarray = field(init=False)
    test_idx: np.ndarray = field(init=False)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.structural = np.asarray(self.structural, dtype=float)
        self.edp = np.asarray(self.edp, dtype=float)
        n = self.features.shape[0]
        if not 2 <= self.n_train <= n - 2:
            raise DomainError(f"training size {self.n_train} incompatible with {n} rows")
        perm = np.random.default_rng(self.seed).permutation(n)
        self.train_idx = np.sort(perm[: self.n_train])
        self.test_idx = np.sort(perm[self.n_train:])
        raw = np.hstack((self.features, self.structural))
        positive = np.all(raw > 0, axis=0)
        z = np.where(positive, np.log(np.where(positive, raw, 1.0)), raw)
        mu = z[self.train_idx].mean(axis=0)
        sd = z[self.train_idx].std(axis=0)
        sd[sd == 0] = 1.0
        self._inputs = (z - mu) / sd
        self._n_feat = self.features.shape[1]

    def inputs(self, subset):
        cols = list(subset) + list(range(self._n_feat, self._inputs.shape[1]))
        return self._inputs[:, cols]

    def target(self, edp_index):
        return np.log(np.maximum(self.edp[:, edp_index], 1e-12))


class SubsetEvaluator:
    """GP fits on feature subsets with a score cache keyed by subset bitmask."""

    def __init__(self, dataset: SelectionDataset, edp_index, n_starts=2, max_iter=200, seed=0):
        self.dataset = dataset
        self.edp_index = edp_index
        self.n_starts = n_starts
        self.max_iter = max_iter
        self.seed = seed
        self._cache = {}
        self._lock = threading.Lock()
        self.n_fits = 0

    def __call__(self, subset) -> SubsetScore:
        subset = tuple(sorted(subset))
        key = sum(1 << i for i in subset)
        with self._lock:
            if key in self._cache:
                return self._cache[key]
        ds = self.dataset
        X = ds.inputs(subset)
        y = ds.target(self.edp_index)
        model = gp_surrogate.fit(X[ds.train_idx], y[ds.train_idx], n_starts=self.n_starts,
                                 max_iter=self.max_iter, seed=self.seed)
        mu, _ = model.predict(X[ds.test_idx])
        score = SubsetScore(subset, gp_surrogate.r_squared(mu, y[ds.test_idx]))
        with self._lock:
            self._cache.setdefault(key, score)
            self.n_fits += 1
            return self._cache[key]


def evaluate_feature_subsets(evaluator: SubsetEvaluator, sizes, budget, pool=None, seed=0):
    """Score subsets per size: exhaustive up to size 2, sampled beyond.

    For sizes above 2, ``budget`` random subsets are drawn (seeded) and every
    one-feature extension of the previous size's best subset is added.
    """
    if budget < 1:
        raise DomainError("subset budget must be positive")
    pool = list(range(len(FEATURE_NAMES))) if pool is None else sorted(pool)
    rng = np.random.default_rng(seed)
    scores = []
    best_prev = None
    for k in sorted(sizes):
        if k < 1 or k > len(pool):
            raise DomainError(f"subset size {k} outside 1..{len(pool)}")
        if k <= 2:
            cands = list(itertools.combinations(pool, k))
        else:
            cands = []
            seen = set()
            if best_prev is not None:
                for f in pool:
                    if f not in best_prev:
                        c = tuple(sorted(best_prev + (f,)))
                        if c not in seen:
                            seen.add(c)
                            cands.append(c)
            for _ in range(budget):
                c = tuple(sorted(rng.choice(pool, size=k, replace=False).tolist()))
                if c not in seen:
                    seen.add(c)
                    cands.append(c)
        size_scores = [evaluator(c) for c in cands]
        scores.extend(size_scores)
        best_prev = max(size_scores, key=_rank_key).features
    return scores


def _rank_key(score):
    # higher R^2 first; ties go to the lexicographically smaller subset
    return (score.r2, tuple(-i for i in score.features))


def best_by_size(scores):
    out = {}
    for s in scores:
        cur = out.get(s.size)
        if cur is None or _rank_key(s) > _rank_key(cur):
            out[s.size] = s
    return dict(sorted(out.items()))


def select_critical(scores, delta_threshold=0.001):
    """Smallest size whose best-R^2 increment falls below the threshold.

    Increments are taken against the previous size, with a zero-R^2 baseline
    (the mean predictor) before size 1. Returns ``(subset, chosen_size, best,
    deltas)``; the subset is the best-scoring one at the chosen size.
    """
    best = best_by_size(scores)
    if len(best) < 2:
        raise DomainError("need scores for at least two subset sizes")
    deltas = {}
    prev = 0.0
    chosen = None
    for k, s in best.items():
        deltas[k] = s.r2 - prev
        prev = s.r2
        if chosen is None and deltas[k] < delta_threshold:
            chosen = k
    if chosen is None:
        chosen = max(best)
        log.warning("R^2 kept improving through size %d; using the largest size", chosen)
    return best[chosen].features, chosen, best, deltas


def aggregate_frequency(subsets, top_k=8, n_features=len(FEATURE_NAMES)):
    """Selection counts per feature and the ``top_k`` most frequent (ties by catalog order)."""
    if not subsets:
        raise DomainError("need at least one selected subset")
    counts = np.zeros(n_features, dtype=int)
    for sub in subsets:
        for i in set(sub):
            counts[i] += 1
    order = sorted(range(n_features), key=lambda i: (-counts[i], i))
    final = sorted(i for i in order[:top_k] if counts[i] > 0)
    return counts, final


@dataclass
class SelectionReport:
    chosen: dict                 # (edp_index, n_train) -> (subset, size, deltas)
    counts: np.ndarray
    final: list
    scores: dict = field(default_factory=dict, repr=False)   # (edp, n_train) -> [SubsetScore]

    def to_dict(self):
        return {
            "runs": [
                {"edp": f"idr_{e + 1}", "n_train": n, "size": size,
                 "features": [FEATURE_NAMES[i] for i in sub],
                 "delta_r2": {str(k): v for k, v in deltas.items()}}
                for (e, n), (sub, size, deltas) in sorted(self.chosen.items())
            ],
            "frequency": {FEATURE_NAMES[i]: int(c) for i, c in enumerate(self.counts)},
            "critical_features": [FEATURE_NAMES[i] for i in self.final],
        }

    def save(self, json_path, csv_path):
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["edp", "n_train", "size", "subset", "r2"])
            for (e, n), scores in sorted(self.scores.items()):
                for s in scores:
                    w.writerow([f"idr_{e + 1}", n, s.size, "|".join(FEATURE_NAMES[i] for i in s.features), repr(s.r2)])


def run_selection(features, structural, edp, train_sizes, sizes, budget, top_k=8,
                  delta_threshold=0.001, pool=None, seed=0, n_starts=2, max_iter=200):
    chosen = {}
    all_scores = {}
    for n_train in train_sizes:
        ds = SelectionDataset(features, structural, edp, n_train, seed=seed)
        for e in range(edp.shape[1]):
            ev = SubsetEvaluator(ds, e, n_starts=n_starts, max_iter=max_iter, seed=seed)
            scores = evaluate_feature_subsets(ev, sizes, budget, pool=pool, seed=seed + 7919 * e + n_train)
            sub, size, _, deltas = select_critical(scores, delta_threshold)
            chosen[(e, n_train)] = (sub, size, deltas)
            all_scores[(e, n_train)] = scores
            log.info("idr_%d n_train=%d: size %d %s", e + 1, n_train, size, [FEATURE_NAMES[i] for i in sub])
    counts, final = aggregate_frequency([c[0] for c in chosen.values()], top_k)
    return SelectionReport(chosen, counts, final, all_scores)
