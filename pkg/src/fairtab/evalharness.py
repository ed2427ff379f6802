"""Train-on-synthetic / test-on-real evaluation.

Classifiers take the label from a :class:`FairnessSpec` and use every other
column as a feature, the protected attribute included.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import pandas as pd

from . import autodiff as ad
from .fairness import FairnessSpec, UndefinedMetricError, data_ds, predictions_ds


def split(table: pd.DataFrame, fraction: float = 0.9, seed: int = 0) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Shuffle and send ``floor(n * fraction)`` rows to train, the rest to test."""
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"split fraction must lie in (0, 1), got {fraction}")
    n = len(table)
    n_train = int(math.floor(n * fraction))
    if n_train == 0 or n_train == n:
        raise ValueError(f"split of {n} rows at {fraction} leaves an empty side")
    order = np.random.default_rng(seed).permutation(n)
    return (
        table.iloc[order[:n_train]].reset_index(drop=True),
        table.iloc[order[n_train:]].reset_index(drop=True),
    )


def _binary_target(table: pd.DataFrame, spec: FairnessSpec) -> np.ndarray:
    values = pd.unique(table[spec.label])
    if len(values) > 2:
        raise ValueError(f"label {spec.label!r} is not binary: {list(values)}")
    return (table[spec.label] == spec.favorable).to_numpy()


def _labels_from(mask: np.ndarray, negative, spec: FairnessSpec) -> np.ndarray:
    out = np.empty(len(mask), dtype=object)
    out[:] = negative
    out[mask] = spec.favorable
    return out


def _negative_label(table: pd.DataFrame, spec: FairnessSpec):
    others = [v for v in pd.unique(table[spec.label]) if v != spec.favorable]
    return others[0] if others else f"not {spec.favorable}"


# ---------------------------------------------------------------------------
# CART
# ---------------------------------------------------------------------------


def gini(counts: Sequence[int]) -> float:
    counts = np.asarray(counts, dtype=np.float64)
    n = counts.sum()
    return 0.0 if n == 0 else float(1.0 - np.sum((counts / n) ** 2))


def _weighted_child_gini(n_left, pos_left, n, pos):
    """Size-weighted Gini of the two children, vectorised over candidate splits."""
    n_right = n - n_left
    pos_right = pos - pos_left
    with np.errstate(divide="ignore", invalid="ignore"):
        left = np.where(n_left > 0, 2.0 * pos_left * (n_left - pos_left) / n_left, 0.0)
        right = np.where(n_right > 0, 2.0 * pos_right * (n_right - pos_right) / n_right, 0.0)
    return (left + right) / n


class DecisionTree:
    """Binary CART with Gini impurity, unlimited depth and min split size 2.

    Numeric features split on midpoints between consecutive distinct values
    (``x <= t`` goes left); categorical features split one category against
    the rest (the category goes left). Ties keep the first feature scanned
    (schema order) and, within it, the lowest threshold or category.
    """

    def __init__(self, min_samples_split: int = 2):
        self.min_samples_split = min_samples_split

    def fit(self, table: pd.DataFrame, spec: FairnessSpec) -> DecisionTree:
        self.spec = spec
        self.negative = _negative_label(table, spec)
        y = _binary_target(table, spec).astype(np.int64)
        self.features = [c for c in table.columns if c != spec.label]
        self.kinds = []
        self.vocab = {}
        cols = []
        for c in self.features:
            col = table[c]
            if pd.api.types.is_numeric_dtype(col.dtype) and not pd.api.types.is_bool_dtype(col.dtype):
                self.kinds.append("num")
                cols.append(col.to_numpy(dtype=np.float64))
            else:
                self.kinds.append("cat")
                cats = list(pd.unique(col))
                self.vocab[c] = {v: i for i, v in enumerate(cats)}
                cols.append(col.map(self.vocab[c]).to_numpy(dtype=np.float64))
        X = np.column_stack(cols) if cols else np.zeros((len(table), 0))
        self.is_numeric_ = np.array([k == "num" for k in self.kinds], dtype=bool)

        # Flat arrays: feature (-1 = leaf), threshold/category, children, prediction.
        self.feature_, self.threshold_, self.left_, self.right_, self.value_ = [], [], [], [], []
        self._depth = 0
        stack = [(np.arange(len(y)), -1, False, 0)]
        while stack:
            idx, parent, is_left, depth = stack.pop()
            node = len(self.feature_)
            if parent >= 0:
                (self.left_ if is_left else self.right_)[parent] = node
            self._depth = max(self._depth, depth)
            pos = int(y[idx].sum())
            self.feature_.append(-1)
            self.threshold_.append(0.0)
            self.left_.append(-1)
            self.right_.append(-1)
            self.value_.append(1 if 2 * pos > len(idx) else 0)
            if pos == 0 or pos == len(idx) or len(idx) < self.min_samples_split:
                continue
            best = self._best_split(X[idx], y[idx], pos)
            if best is None:
                continue
            j, t = best
            go_left = X[idx, j] <= t if self.kinds[j] == "num" else X[idx, j] == t
            self.feature_[node] = j
            self.threshold_[node] = t
            stack.append((idx[~go_left], node, False, depth + 1))
            stack.append((idx[go_left], node, True, depth + 1))
        for name in ("feature_", "left_", "right_", "value_"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.int64))
        self.threshold_ = np.asarray(self.threshold_, dtype=np.float64)
        return self

    def _best_split(self, X: np.ndarray, y: np.ndarray, pos: int):
        n = len(y)
        best_score, best = np.inf, None
        for j, kind in enumerate(self.kinds):
            x = X[:, j]
            if kind == "num":
                order = np.argsort(x, kind="stable")
                xs, ys = x[order], y[order]
                valid = np.flatnonzero(xs[:-1] < xs[1:])
                if len(valid) == 0:
                    continue
                cum = np.cumsum(ys)
                scores = _weighted_child_gini(valid + 1.0, cum[valid].astype(np.float64), n, pos)
                k = int(np.argmin(scores))
                if scores[k] < best_score:
                    best_score = scores[k]
                    i = valid[k]
                    best = (j, (xs[i] + xs[i + 1]) / 2.0)
            else:
                codes = x.astype(np.int64)
                counts = np.bincount(codes)
                positives = np.bincount(codes, weights=y)
                cats = np.flatnonzero((counts > 0) & (counts < n))
                if len(cats) == 0:
                    continue
                scores = _weighted_child_gini(counts[cats].astype(np.float64), positives[cats], n, pos)
                k = int(np.argmin(scores))
                if scores[k] < best_score:
                    best_score = scores[k]
                    best = (j, float(cats[k]))
        return best

    @property
    def depth(self) -> int:
        return self._depth

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature_ < 0))

    def _matrix(self, table: pd.DataFrame) -> np.ndarray:
        cols = []
        for c, kind in zip(self.features, self.kinds):
            if kind == "num":
                cols.append(table[c].to_numpy(dtype=np.float64))
            else:
                cols.append(table[c].map(self.vocab[c]).fillna(-1).to_numpy(dtype=np.float64))
        return np.column_stack(cols) if cols else np.zeros((len(table), 0))

    def predict_favorable(self, table: pd.DataFrame) -> np.ndarray:
        X = self._matrix(table)
        node = np.zeros(len(X), dtype=np.int64)
        active = np.flatnonzero(self.feature_[node] >= 0)
        while len(active):
            nd = node[active]
            j = self.feature_[nd]
            t = self.threshold_[nd]
            x = X[active, j]
            go_left = np.where(self.is_numeric_[j], x <= t, x == t)
            node[active] = np.where(go_left, self.left_[nd], self.right_[nd])
            active = active[self.feature_[node[active]] >= 0]
        return self.value_[node].astype(bool)

    def predict(self, table: pd.DataFrame) -> np.ndarray:
        return _labels_from(self.predict_favorable(table), self.negative, self.spec)


def fit_decision_tree(train_table: pd.DataFrame, spec: FairnessSpec) -> DecisionTree:
    return DecisionTree().fit(train_table, spec)


# ---------------------------------------------------------------------------
# Gradient-trained classifiers
# ---------------------------------------------------------------------------


class FeatureEncoder:
    """Standardised numerics followed by one-hot categoricals (training vocabulary)."""

    def __init__(self, table: pd.DataFrame, spec: FairnessSpec):
        self.numeric, self.categorical = [], {}
        self.mean, self.std = {}, {}
        for c in table.columns:
            if c == spec.label:
                continue
            col = table[c]
            if pd.api.types.is_numeric_dtype(col.dtype) and not pd.api.types.is_bool_dtype(col.dtype):
                values = col.to_numpy(dtype=np.float64)
                self.numeric.append(c)
                self.mean[c] = values.mean()
                sd = values.std()
                self.std[c] = sd if sd > 0 else 1.0
            else:
                self.categorical[c] = list(pd.unique(col))

    @property
    def width(self) -> int:
        return len(self.numeric) + sum(len(v) for v in self.categorical.values())

    def __call__(self, table: pd.DataFrame) -> np.ndarray:
        parts = [((table[c].to_numpy(dtype=np.float64) - self.mean[c]) / self.std[c])[:, None] for c in self.numeric]
        for c, cats in self.categorical.items():
            col = table[c].to_numpy()
            parts.append(np.stack([col == v for v in cats], axis=1).astype(np.float64))
        return np.concatenate(parts, axis=1) if parts else np.zeros((len(table), 0))


def bce_with_logits(logits: ad.Node, target: np.ndarray) -> ad.Node:
    """Mean binary cross-entropy, ``softplus(z) - y z``."""
    y = ad.constant(np.asarray(target, dtype=np.float64).reshape(-1, 1))
    return ad.mean(ad.sub(ad.softplus(logits), ad.mul(y, logits)))


def _prior_logit(y: np.ndarray) -> float:
    p = float(np.clip(y.mean(), 1e-6, 1 - 1e-6))
    return math.log(p / (1 - p))


class LogisticRegression:
    """Full-batch Adam on L2-regularised cross-entropy.

    The bias starts at the training log-odds, so a model with all-zero
    weights predicts the majority class.
    """

    def __init__(self, iterations: int = 500, l2: float = 1e-4, lr: float = 0.05):
        self.iterations, self.l2, self.lr = iterations, l2, lr

    def loss(self, X: np.ndarray, y: np.ndarray) -> ad.Node:
        logits = ad.add(ad.matmul(ad.constant(X), self.weight), self.bias)
        return ad.add(bce_with_logits(logits, y), ad.scale(ad.sum(ad.square(self.weight)), self.l2))

    def fit(self, table: pd.DataFrame, spec: FairnessSpec) -> LogisticRegression:
        self.spec = spec
        self.negative = _negative_label(table, spec)
        self.encoder = FeatureEncoder(table, spec)
        X = self.encoder(table)
        y = _binary_target(table, spec).astype(np.float64)
        self.weight = ad.parameter(np.zeros((X.shape[1], 1)), "lr.weight")
        self.bias = ad.parameter(np.array([_prior_logit(y)]), "lr.bias")
        opt = ad.Adam([self.weight, self.bias], alpha=self.lr, beta1=0.9, beta2=0.999)
        for _ in range(self.iterations):
            opt.step(ad.grad(self.loss(X, y), opt.params))
        return self

    def decision_function(self, table: pd.DataFrame) -> np.ndarray:
        return (self.encoder(table) @ self.weight.value + self.bias.value).ravel()

    def predict_favorable(self, table: pd.DataFrame) -> np.ndarray:
        return self.decision_function(table) > 0.0

    def predict(self, table: pd.DataFrame) -> np.ndarray:
        return _labels_from(self.predict_favorable(table), self.negative, self.spec)


class MLPClassifier:
    """One ReLU hidden layer, minibatch Adam on cross-entropy."""

    def __init__(self, hidden: int = 64, epochs: int = 50, batch_size: int = 256, lr: float = 1e-3, seed: int = 0):
        self.hidden, self.epochs, self.batch_size, self.lr, self.seed = hidden, epochs, batch_size, lr, seed

    def _logits(self, X: np.ndarray) -> ad.Node:
        h = ad.relu(ad.add(ad.matmul(ad.constant(X), self.w1), self.b1))
        return ad.add(ad.matmul(h, self.w2), self.b2)

    def fit(self, table: pd.DataFrame, spec: FairnessSpec) -> MLPClassifier:
        self.spec = spec
        self.negative = _negative_label(table, spec)
        self.encoder = FeatureEncoder(table, spec)
        X = self.encoder(table)
        y = _binary_target(table, spec).astype(np.float64)
        rng = np.random.default_rng(self.seed)
        d = X.shape[1]
        b1, b2 = 1.0 / math.sqrt(max(d, 1)), 1.0 / math.sqrt(self.hidden)
        self.w1 = ad.parameter(rng.uniform(-b1, b1, (d, self.hidden)))
        self.b1 = ad.parameter(np.zeros(self.hidden))
        self.w2 = ad.parameter(rng.uniform(-b2, b2, (self.hidden, 1)))
        self.b2 = ad.parameter(np.array([_prior_logit(y)]))
        opt = ad.Adam([self.w1, self.b1, self.w2, self.b2], alpha=self.lr, beta1=0.9, beta2=0.999)
        for _ in range(self.epochs):
            order = rng.permutation(len(X))
            for start in range(0, len(X), self.batch_size):
                sl = order[start : start + self.batch_size]
                opt.step(ad.grad(bce_with_logits(self._logits(X[sl]), y[sl]), opt.params))
        return self

    def predict_favorable(self, table: pd.DataFrame) -> np.ndarray:
        with ad.no_grad():
            return self._logits(self.encoder(table)).value.ravel() > 0.0

    def predict(self, table: pd.DataFrame) -> np.ndarray:
        return _labels_from(self.predict_favorable(table), self.negative, self.spec)


def fit_logistic(train_table: pd.DataFrame, spec: FairnessSpec, **kw) -> LogisticRegression:
    return LogisticRegression(**kw).fit(train_table, spec)


def fit_mlp(train_table: pd.DataFrame, spec: FairnessSpec, seed: int = 0, **kw) -> MLPClassifier:
    return MLPClassifier(seed=seed, **kw).fit(train_table, spec)


CLASSIFIERS: dict[str, Callable[[pd.DataFrame, FairnessSpec, int], object]] = {
    "dtc": lambda table, spec, seed: fit_decision_tree(table, spec),
    "lr": lambda table, spec, seed: fit_logistic(table, spec),
    "mlp": lambda table, spec, seed: fit_mlp(table, spec, seed=seed),
}


# ---------------------------------------------------------------------------
# Metrics and reports
# ---------------------------------------------------------------------------


def accuracy(truth: np.ndarray, predicted: np.ndarray) -> float:
    return float(np.mean(np.asarray(truth, dtype=bool) == np.asarray(predicted, dtype=bool)))


def f1_score(truth: np.ndarray, predicted: np.ndarray) -> tuple[float, bool]:
    """F1 of the favorable class and whether it is degenerate (no positive predictions)."""
    truth = np.asarray(truth, dtype=bool)
    predicted = np.asarray(predicted, dtype=bool)
    tp = int(np.sum(truth & predicted))
    fp = int(np.sum(~truth & predicted))
    fn = int(np.sum(truth & ~predicted))
    degenerate = not predicted.any()
    denom = 2 * tp + fp + fn
    if denom == 0:
        return 0.0, True
    return 2 * tp / denom, degenerate


@dataclass
class ReplicateResult:
    seed: int
    accuracy: float
    f1: float
    classifier_ds: float
    f1_degenerate: bool = False
    error: str | None = None


@dataclass
class MetricsReport:
    """One classifier kind trained on one table, possibly over several seeds."""

    variant: str
    classifier_kind: str
    data_ds: float
    replicates: list[ReplicateResult] = field(default_factory=list)
    data_ds_error: str | None = None

    def _stat(self, attr: str, fn) -> float:
        values = np.array([getattr(r, attr) for r in self.replicates], dtype=np.float64)
        values = values[np.isfinite(values)]
        return float(fn(values)) if len(values) else float("nan")

    @property
    def seeds(self) -> list[int]:
        return [r.seed for r in self.replicates]

    def mean(self, attr: str) -> float:
        return self._stat(attr, np.mean)

    def std(self, attr: str) -> float:
        return self._stat(attr, np.std)

    def as_row(self) -> dict:
        return {
            "variant": self.variant,
            "classifier": self.classifier_kind,
            "replicates": len(self.replicates),
            "data_ds": self.data_ds,
            "accuracy_mean": self.mean("accuracy"),
            "accuracy_std": self.std("accuracy"),
            "f1_mean": self.mean("f1"),
            "f1_std": self.std("f1"),
            "classifier_ds_mean": self.mean("classifier_ds"),
            "classifier_ds_std": self.std("classifier_ds"),
            "f1_degenerate": any(r.f1_degenerate for r in self.replicates),
            "errors": "; ".join(r.error for r in self.replicates if r.error) or (self.data_ds_error or ""),
        }


def evaluate(
    train_table: pd.DataFrame,
    test_table: pd.DataFrame,
    spec: FairnessSpec,
    classifier_kinds: Sequence[str] = ("dtc",),
    replicates: Sequence[int] | int = 1,
    variant: str = "original",
) -> list[MetricsReport]:
    """Fit each classifier kind on ``train_table`` and score it on ``test_table``."""
    seeds = list(range(replicates)) if isinstance(replicates, int) else list(replicates)
    if not seeds:
        raise ValueError("need at least one replicate")
    if list(train_table.columns) != list(test_table.columns):
        raise ValueError("train and test tables have different columns")
    try:
        ds, ds_error = data_ds(train_table, spec), None
    except UndefinedMetricError as exc:
        ds, ds_error = float("nan"), str(exc)
    truth = (test_table[spec.label] == spec.favorable).to_numpy()
    reports = []
    for kind in classifier_kinds:
        if kind not in CLASSIFIERS:
            raise ValueError(f"unknown classifier kind {kind!r}; choose from {sorted(CLASSIFIERS)}")
        report = MetricsReport(variant, kind, ds, data_ds_error=ds_error)
        for seed in seeds:
            model = CLASSIFIERS[kind](train_table, spec, seed)
            predicted = model.predict_favorable(test_table)
            f1, degenerate = f1_score(truth, predicted)
            try:
                cds, err = predictions_ds(_labels_from(predicted, None, spec), test_table, spec), None
            except UndefinedMetricError as exc:
                cds, err = float("nan"), str(exc)
            report.replicates.append(ReplicateResult(seed, accuracy(truth, predicted), f1, cds, degenerate, err))
        reports.append(report)
    return reports


def reports_frame(reports: Sequence[MetricsReport]) -> pd.DataFrame:
    return pd.DataFrame([r.as_row() for r in reports])


def format_table(reports: Sequence[MetricsReport]) -> str:
    """Plain-text summary in the order: accuracy, F1, DS in data, DS in classifier."""
    header = f"{'variant':<12} {'clf':<4} {'Acc.':>15} {'F1':>15} {'DS data':>8} {'DS clf':>15}"
    lines = [header, "-" * len(header)]
    for r in reports:
        lines.append(
            f"{r.variant:<12} {r.classifier_kind:<4} "
            f"{r.mean('accuracy'):>7.3f}±{r.std('accuracy'):<7.3f} "
            f"{r.mean('f1'):>7.3f}±{r.std('f1'):<7.3f} "
            f"{r.data_ds:>8.3f} "
            f"{r.mean('classifier_ds'):>7.3f}±{r.std('classifier_ds'):<7.3f}"
        )
    return "\n".join(lines)
