"""Fix-probability models and candidate ranking.

Two models: L2-regularised logistic regression trained by full-batch
gradient descent (the main ranker), and a k-nearest-neighbours classifier
used as a sanity baseline. Features are expected to be scaled already.
"""

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .features import COL, FEATURE_NAMES, N_FEATURES, ScalingScheme

logger = logging.getLogger(__name__)

MODEL_FORMAT = "fixfinder-model"
MODEL_VERSION = 1


class DegenerateLabels(ValueError):
    pass


class UnfittedModel(RuntimeError):
    pass


class NoFixInCandidates(ValueError):
    pass


@dataclass
class TrainingSet:
    X: np.ndarray
    y: np.ndarray
    advisory_ids: list[str]
    commit_ids: list[str]
    skipped: list[str] = field(default_factory=list)

    def __len__(self):
        return len(self.y)


def build_training_set(items, seed=0) -> TrainingSet:
    """One positive and one sampled negative row per advisory.

    ``items`` yield objects with ``advisory_id``, ``commit_ids``, ``features``
    (scaled, one row per candidate) and ``fixes`` (set of known fix ids).
    The positive is the known fix with the smallest id; the negative is drawn
    uniformly from the remaining candidates.
    """
    rng = np.random.default_rng(seed)
    rows, labels, adv_ids, commit_ids, skipped = [], [], [], [], []
    for item in items:
        fix_idx = sorted((cid, i) for i, cid in enumerate(item.commit_ids) if cid in item.fixes)
        non_fix = [i for i, cid in enumerate(item.commit_ids) if cid not in item.fixes]
        if not fix_idx or not non_fix:
            logger.warning("%s: %s, skipped", item.advisory_id,
                           "no known fix among candidates" if not fix_idx else "no negative candidate")
            skipped.append(item.advisory_id)
            continue
        pos = fix_idx[0][1]
        neg = non_fix[int(rng.integers(len(non_fix)))]
        for idx, label in ((pos, 1), (neg, 0)):
            rows.append(item.features[idx])
            labels.append(label)
            adv_ids.append(item.advisory_id)
            commit_ids.append(item.commit_ids[idx])
    X = np.array(rows, dtype=float).reshape(-1, N_FEATURES)
    return TrainingSet(X, np.array(labels, dtype=float), adv_ids, commit_ids, skipped)


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def logistic_loss(w, b, X, y, l2=1.0) -> float:
    """Mean log-loss plus ``l2 / (2n) * ||w||^2``."""
    z = X @ w + b
    n = len(y)
    return float(np.mean(np.logaddexp(0.0, z) - y * z) + l2 / (2 * n) * (w @ w))


def logistic_gradient(w, b, X, y, l2=1.0):
    n = len(y)
    r = sigmoid(X @ w + b) - y
    return X.T @ r / n + (l2 / n) * w, float(np.mean(r))


@dataclass
class LogisticModel:
    weights: np.ndarray
    bias: float
    hyper: dict = field(default_factory=dict)
    kind: str = "logistic"

    def decision(self, X) -> np.ndarray:
        # row-wise sum so a row scores the same alone or inside a batch
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return (X * self.weights).sum(axis=1) + self.bias

    def predict_proba(self, X) -> np.ndarray:
        return sigmoid(self.decision(X))

    def contributions(self, x) -> np.ndarray:
        return self.weights * np.asarray(x, dtype=float)

    def params(self) -> dict:
        return {"weights": self.weights.tolist(), "bias": self.bias}

    @classmethod
    def from_params(cls, params, hyper):
        return cls(np.array(params["weights"], dtype=float), float(params["bias"]), hyper)


@dataclass
class KNNModel:
    X: np.ndarray
    y: np.ndarray
    k: int = 25
    p: int = 2
    kind: str = "knn"

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")

    @property
    def hyper(self):
        return {"k": self.k, "p": self.p}

    def predict_proba(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        k = min(self.k, len(self.y))
        out = np.empty(len(X))
        for i, row in enumerate(X):
            dist = np.sum(np.abs(self.X - row) ** self.p, axis=1) ** (1.0 / self.p)
            nearest = np.argsort(dist, kind="stable")[:k]
            out[i] = self.y[nearest].mean()
        return out

    def params(self) -> dict:
        return {"X": self.X.tolist(), "y": self.y.tolist()}

    @classmethod
    def from_params(cls, params, hyper):
        return cls(np.array(params["X"], dtype=float).reshape(-1, N_FEATURES),
                   np.array(params["y"], dtype=float), int(hyper["k"]), int(hyper["p"]))


def _check_labels(y):
    if len(y) < 2 or len(np.unique(y)) < 2:
        raise DegenerateLabels("training data needs both positive and negative rows")


def train_logistic(ts: TrainingSet, l2=1.0, learning_rate=0.1, epochs=10_000, tol=1e-6) -> LogisticModel:
    X, y = ts.X, ts.y
    _check_labels(y)
    w = np.zeros(X.shape[1])
    b = 0.0
    for epoch in range(epochs):
        gw, gb = logistic_gradient(w, b, X, y, l2)
        if max(np.max(np.abs(gw)), abs(gb)) < tol:
            break
        w -= learning_rate * gw
        b -= learning_rate * gb
    if not np.all(np.isfinite(w)):
        raise FloatingPointError("logistic weights diverged")
    hyper = {"l2": l2, "learning_rate": learning_rate, "epochs": epochs, "tol": tol}
    logger.debug("logistic regression stopped after %d epochs", epoch + 1)
    return LogisticModel(w, float(b), hyper)


def train_knn(ts: TrainingSet, k=25, p=2) -> KNNModel:
    _check_labels(ts.y)
    return KNNModel(ts.X.copy(), ts.y.copy(), k, p)


def train(ts: TrainingSet, kind="logistic", **hyper):
    if kind == "logistic":
        return train_logistic(ts, **hyper)
    if kind == "knn":
        return train_knn(ts, **hyper)
    raise ValueError(f"unknown model kind {kind!r}")


def predict_proba(model, rows) -> np.ndarray:
    if model is None:
        raise UnfittedModel("no model")
    return model.predict_proba(np.atleast_2d(np.asarray(rows, dtype=float)))


@dataclass
class RankedEntry:
    commit_id: str
    probability: float
    features: np.ndarray

    def breakdown(self) -> dict[str, float]:
        return dict(zip(FEATURE_NAMES, map(float, self.features)))


@dataclass
class RankedList:
    advisory_id: str
    entries: list[RankedEntry]

    @property
    def commit_ids(self) -> list[str]:
        return [e.commit_id for e in self.entries]

    def position(self, commit_ids) -> int | None:
        """1-based rank of the best-ranked commit in ``commit_ids``."""
        for i, e in enumerate(self.entries, 1):
            if e.commit_id in commit_ids:
                return i
        return None


def rank(model, advisory_id, commit_ids, matrix) -> RankedList:
    """Sort candidates by fix probability.

    Ties go to the candidate closer to publication (larger time-distance
    feature), then to the smaller commit id.
    """
    X = np.atleast_2d(np.asarray(matrix, dtype=float))
    probs = predict_proba(model, X)
    closeness = X[:, COL["time_distance_before"]] + X[:, COL["time_distance_after"]]
    order = sorted(range(len(commit_ids)), key=lambda i: (-probs[i], -closeness[i], commit_ids[i]))
    entries = [RankedEntry(commit_ids[i], float(probs[i]), X[i]) for i in order]
    return RankedList(advisory_id, entries)


# -- persistence -----------------------------------------------------------


def model_to_dict(model, scaler: ScalingScheme | None = None) -> dict:
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "kind": model.kind,
        "feature_names": list(FEATURE_NAMES),
        "hyper": model.hyper,
        "params": model.params(),
    }
    if scaler is not None:
        doc["scaler"] = scaler.to_dict()
    return doc


def dump_model(model, path, scaler: ScalingScheme | None = None):
    text = json.dumps(model_to_dict(model, scaler), indent=2, sort_keys=True) + "\n"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def model_from_dict(doc: dict):
    if doc.get("format") != MODEL_FORMAT or doc.get("version") != MODEL_VERSION:
        raise ValueError("not a supported model document")
    if list(doc["feature_names"]) != list(FEATURE_NAMES):
        raise ValueError("model was trained on a different feature layout")
    cls = {"logistic": LogisticModel, "knn": KNNModel}[doc["kind"]]
    model = cls.from_params(doc["params"], doc["hyper"])
    scaler = ScalingScheme.from_dict(doc["scaler"]) if "scaler" in doc else None
    return model, scaler


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))


def coefficient_table(model) -> list[tuple[str, float]]:
    pairs = list(zip(FEATURE_NAMES, map(float, model.weights)))
    return sorted(pairs, key=lambda kv: (-abs(kv[1]), kv[0]))
