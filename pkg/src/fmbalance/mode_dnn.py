"""Multilayer perceptron for multi-label component-failure prediction."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit

from .errors import DataError, DomainError, TrainingError

P_CLIP = 1e-16


@dataclass
class MLPSpec:
    input_width: int
    hidden: tuple = (16, 8, 4)
    output_width: int = 3
    epochs: int = 2000
    batch_size: int = 64
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.input_width < 1 or self.output_width < 1 or any(h < 1 for h in self.hidden):
            raise DomainError("layer widths must be positive")
        if self.epochs < 0 or self.batch_size < 1 or not self.learning_rate > 0:
            raise DomainError("invalid training settings")

    @property
    def widths(self):
        return (self.input_width, *self.hidden, self.output_width)


def init_params(spec: MLPSpec, rng):
    """He-normal weights on ReLU layers, Glorot on the logistic output; zero biases."""
    ws, bs = [], []
    widths = spec.widths
    for i in range(len(widths) - 1):
        fan_in, fan_out = widths[i], widths[i + 1]
        last = i == len(widths) - 2
        sd = np.sqrt(2.0 / (fan_in + fan_out)) if last else np.sqrt(2.0 / fan_in)
        ws.append(rng.standard_normal((fan_in, fan_out)) * sd)
        bs.append(np.zeros(fan_out))
    return ws, bs


def forward(ws, bs, X):
    """Hidden activations and output logits."""
    acts = [X]
    h = X
    for w, b in zip(ws[:-1], bs[:-1]):
        h = np.maximum(h @ w + b, 0.0)
        acts.append(h)
    return acts, h @ ws[-1] + bs[-1]


def bce_from_logits(z, Y):
    # mean over samples and outputs of softplus(z) - y z
    return float(np.mean(np.logaddexp(0.0, z) - Y * z))


def loss_and_grads(ws, bs, X, Y):
    acts, z = forward(ws, bs, X)
    loss = bce_from_logits(z, Y)
    delta = (expit(z) - Y) / z.size
    gw = [None] * len(ws)
    gb = [None] * len(bs)
    for i in range(len(ws) - 1, -1, -1):
        gw[i] = acts[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ ws[i].T) * (acts[i] > 0)
    return loss, gw, gb


@dataclass
class TrainedClassifier:
    spec: MLPSpec
    weights: list
    biases: list
    x_mean: np.ndarray
    x_std: np.ndarray
    loss_history: list = field(default_factory=list)

    def predict_proba(self, X):
        Xs = (np.atleast_2d(np.asarray(X, dtype=float)) - self.x_mean) / self.x_std
        _, z = forward(self.weights, self.biases, Xs)
        return np.clip(expit(z), P_CLIP, 1.0 - P_CLIP)

    def predict(self, X):
        return (self.predict_proba(X) >= 0.5).astype(np.int8)

    def to_dict(self):
        return {
            "spec": asdict(self.spec),
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "x_mean": self.x_mean.tolist(),
            "x_std": self.x_std.tolist(),
            "loss_history": list(self.loss_history),
        }

    @classmethod
    def from_dict(cls, d):
        spec = MLPSpec(**{**d["spec"], "hidden": tuple(d["spec"]["hidden"])})
        return cls(spec, [np.array(w) for w in d["weights"]], [np.array(b) for b in d["biases"]],
                   np.array(d["x_mean"]), np.array(d["x_std"]), list(d["loss_history"]))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def split_indices(n, seed, train_fraction=0.8):
    perm = np.random.default_rng(seed).permutation(n)
    k = int(round(train_fraction * n))
    return np.sort(perm[:k]), np.sort(perm[k:])


def fit(spec: MLPSpec, X, Y) -> TrainedClassifier:
    """Mini-batch Adam on binary cross-entropy; inputs z-scored on ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=float).reshape(X.shape[0], -1)
    if X.shape[1] != spec.input_width or Y.shape[1] != spec.output_width:
        raise DomainError("data widths do not match the network spec")
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd[sd == 0] = 1.0
    Xs = (X - mu) / sd
    rng = np.random.default_rng(spec.seed)
    ws, bs = init_params(spec, rng)
    params = ws + bs
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    b1, b2 = spec.beta1, spec.beta2
    step = 0
    history = []
    n = X.shape[0]
    nl = len(ws)
    for epoch in range(1, spec.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, spec.batch_size):
            idx = order[s:s + spec.batch_size]
            loss, gw, gb = loss_and_grads(params[:nl], params[nl:], Xs[idx], Y[idx])
            if not np.isfinite(loss):
                raise TrainingError(f"loss became non-finite at epoch {epoch}")
            total += loss * idx.size
            step += 1
            c1 = 1 - b1 ** step
            c2 = 1 - b2 ** step
            for p, g, mi, vi in zip(params, gw + gb, m, v):
                mi *= b1
                mi += (1 - b1) * g
                vi *= b2
                vi += (1 - b2) * g * g
                p -= spec.learning_rate * (mi / c1) / (np.sqrt(vi / c2) + spec.eps)
        history.append(total / n)
    return TrainedClassifier(spec, params[:nl], params[nl:], mu, sd, history)


def train(spec: MLPSpec, X, Y, split_seed):
    """80/20 split then ``fit`` on the training part. Returns ``(model, train_idx, test_idx)``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] < 20:
        raise DomainError("training needs at least 20 rows")
    tr, te = split_indices(X.shape[0], split_seed)
    Y = np.asarray(Y, dtype=float)
    return fit(spec, X[tr], Y[tr]), tr, te


def exact_match_accuracy(model, X, Y):
    Y = np.asarray(Y).astype(np.int8)
    if Y.shape[0] == 0:
        raise DomainError("no rows to score")
    return float(np.mean(np.all(model.predict(X) == Y, axis=1)))


def hamming_accuracy(model, X, Y):
    Y = np.asarray(Y).astype(np.int8)
    if Y.shape[0] == 0:
        raise DomainError("no rows to score")
    return float(np.mean(model.predict(X) == Y))


def mode_bits_matrix(labels):
    return np.array([[int(c) for c in lab] for lab in labels], dtype=np.int8)


def build_features(columns, gmf_names, n_stories):
    """Input matrix ``[critical GMFs, peak floor acceleration per story]`` from a column dict."""
    names = list(gmf_names) + [f"pfa_{i + 1}" for i in range(n_stories)]
    missing = [c for c in names if c not in columns]
    if missing:
        raise DataError(f"dataset lacks columns {missing}")
    return np.column_stack([np.asarray(columns[c], dtype=float) for c in names]).reshape(-1, len(names))


@dataclass
class Evaluation:
    model: str
    dataset: str
    split: str
    n: int
    exact: float
    hamming: float


def cross_evaluate(models, datasets):
    """Accuracy of every model on every dataset's split.

    ``models`` maps a name to a classifier; ``datasets`` maps a name to
    ``(X, Y, train_idx, test_idx)``. The training split is reported only for
    a model's own dataset.
    """
    rows = []
    for mname, model in models.items():
        for dname, (X, Y, tr, te) in datasets.items():
            splits = [("train", tr), ("test", te)] if dname == mname else [("test", te)]
            for split, idx in splits:
                rows.append(Evaluation(mname, dname, split, len(idx),
                                       exact_match_accuracy(model, X[idx], Y[idx]),
                                       hamming_accuracy(model, X[idx], Y[idx])))
    return rows


def write_report(rows, csv_path, txt_path):
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trained_on", "evaluated_on", "split", "n", "exact_match", "hamming"])
        for r in rows:
            w.writerow([r.model, r.dataset, r.split, r.n, f"{r.exact:.6f}", f"{r.hamming:.6f}"])
    lines = [f"{'trained on':<12} {'evaluated on':<14} {'split':<6} {'n':>5} {'exact':>8} {'hamming':>8}"]
    for r in rows:
        lines.append(f"{r.model:<12} {r.dataset:<14} {r.split:<6} {r.n:>5} {100 * r.exact:7.1f}% {100 * r.hamming:7.1f}%")
    with open(txt_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
