"""Binary alcohol-involvement classifier over TF-IDF vectors.

A regularized linear model trained by damped Newton iterations on the
L2-penalized log-likelihood (bias unpenalized).  The logistic link is
the default; a probit link is available.  Externally produced scores can
be loaded as a drop-in replacement for native predictions, and the audit
downstream treats both sources identically.
"""

from __future__ import annotations

import csv
import math
import random
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.special import expit, log_ndtr, ndtr
from sklearn.base import BaseEstimator, ClassifierMixin

from ._validation import as_binary_labels, as_feature_matrix, check_fitted, check_fraction
from .records import AlcoholFlag
from .sampling import largest_remainder

ALCOHOLIC = "Alcoholic"
NON_ALCOHOLIC = "NonAlcoholic"


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, gradient_norm: float):
        super().__init__(f"{message} (gradient inf-norm {gradient_norm:.3e})")
        self.gradient_norm = gradient_norm


def round_half_up(x: float) -> int:
    return int(x + 0.5) if x >= 0 else -int(-x + 0.5)


def stratified_split(labels, ratio: float, seed: int):
    """Label-stratified train/test index split.

    |train| = round(ratio * n); per-class counts follow largest-remainder
    quotas; membership within a class is a seeded shuffle + stable take.
    Returns (train_idx, test_idx) as sorted integer arrays.
    """
    check_fraction(ratio, "ratio", inclusive=False)
    labels = list(labels)
    n = len(labels)
    groups = {}
    for idx, label in enumerate(labels):
        groups.setdefault(label, []).append(idx)
    for label, members in groups.items():
        if len(members) < 2:
            raise ValueError(f"cannot stratify: class {label!r} has {len(members)} member(s)")
    keys = sorted(groups, key=str)
    n_train = round_half_up(ratio * n)
    take = largest_remainder([len(groups[k]) for k in keys], n_train)
    rng = random.Random(seed)
    train_idx = []
    for key, count in zip(keys, take):
        members = list(groups[key])
        rng.shuffle(members)
        train_idx.extend(members[:count])
    train_set = set(train_idx)
    test_idx = [i for i in range(n) if i not in train_set]
    return np.array(sorted(train_idx), dtype=np.int64), np.array(test_idx, dtype=np.int64)


def _link_pieces(z: np.ndarray, y: np.ndarray, link: str):
    """Per-row loglik, score d/dz, and Newton weight -d2/dz2."""
    q = 2.0 * y - 1.0
    m = q * z
    if link == "logistic":
        loglik = -np.logaddexp(0.0, -m)
        score = q * expit(-m)
        weight = expit(z) * expit(-z)
    elif link == "probit":
        loglik = log_ndtr(m)
        # r = phi(m)/Phi(m), computed in log space for stability
        log_phi = -0.5 * m * m - 0.5 * math.log(2.0 * math.pi)
        r = np.exp(log_phi - log_ndtr(m))
        score = q * r
        weight = r * (m + r)
    else:
        raise ValueError(f"unknown link {link!r}")
    return loglik, score, weight


class NarrativeClassifier(BaseEstimator, ClassifierMixin):
    """L2-penalized linear classifier with logistic or probit link.

    The fit maximizes sum(log p(y_i | x_i)) - reg/2 * ||w||^2 by Newton
    steps with halving, so the penalized objective never decreases
    across accepted iterations.  Convergence means the gradient inf-norm
    dropped below `tol`; running out of iterations raises
    ConvergenceError carrying the final gradient norm.
    """

    def __init__(
        self,
        regularization: float = 1e-2,
        link: str = "logistic",
        tol: float = 1e-8,
        max_iter: int = 200,
        threshold: float = 0.5,
    ):
        self.regularization = regularization
        self.link = link
        self.tol = tol
        self.max_iter = max_iter
        self.threshold = threshold

    # -- objective machinery -------------------------------------------------

    def _objective(self, X, y, w, b):
        z = X @ w + b
        loglik, score, weight = _link_pieces(z, y, self.link)
        penalty = 0.5 * self.regularization * float(w @ w)
        obj = float(np.sum(loglik)) - penalty
        grad_w = X.T @ score - self.regularization * w
        grad_b = float(np.sum(score))
        return obj, np.asarray(grad_w).ravel(), grad_b, score, weight

    def fit(self, X, y):
        X = as_feature_matrix(X)
        y = as_binary_labels(y)
        if X.shape[0] != y.shape[0]:
            raise ValueError("X and y have different lengths")
        if y.min() == y.max():
            raise ValueError("training labels are all identical")
        if self.regularization < 0:
            raise ValueError("regularization must be non-negative")

        n, p = X.shape
        w = np.zeros(p)
        b = 0.0
        obj, grad_w, grad_b, _, weight = self._objective(X, y, w, b)
        self.objective_path_ = [obj]
        grad_norm = max(np.max(np.abs(grad_w), initial=0.0), abs(grad_b))

        for iteration in range(self.max_iter):
            if grad_norm < self.tol:
                break
            # Newton system on (w, b); penalty adds reg to the w block only.
            if sparse.issparse(X):
                Xw = X.multiply(weight[:, None]).tocsr()
                H_ww = (X.T @ Xw).toarray()
                H_wb = np.asarray(X.T @ weight).ravel()
            else:
                Xw = X * weight[:, None]
                H_ww = X.T @ Xw
                H_wb = X.T @ weight
            H_ww = H_ww + self.regularization * np.eye(p)
            H = np.zeros((p + 1, p + 1))
            H[:p, :p] = H_ww
            H[:p, p] = H_wb
            H[p, :p] = H_wb
            H[p, p] = float(np.sum(weight))
            grad = np.concatenate([grad_w, [grad_b]])
            try:
                step = np.linalg.solve(H, grad)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(H, grad, rcond=None)[0]

            alpha = 1.0
            for _ in range(50):
                w_new = w + alpha * step[:p]
                b_new = b + alpha * step[p]
                obj_new, grad_w_new, grad_b_new, _, weight_new = self._objective(
                    X, y, w_new, b_new
                )
                if obj_new >= obj:
                    break
                alpha *= 0.5
            else:
                break  # no ascent step found; gradient check below decides
            w, b, obj = w_new, b_new, obj_new
            grad_w, grad_b, weight = grad_w_new, grad_b_new, weight_new
            self.objective_path_.append(obj)
            grad_norm = max(np.max(np.abs(grad_w), initial=0.0), abs(grad_b))

        if grad_norm >= self.tol:
            raise ConvergenceError(
                f"no convergence in {self.max_iter} iterations", grad_norm
            )
        self.weights_ = w
        self.bias_ = b
        self.gradient_norm_ = grad_norm
        self.n_iter_ = len(self.objective_path_) - 1
        return self

    # -- prediction -----------------------------------------------------------

    def decision_function(self, X) -> np.ndarray:
        check_fitted(self, "weights_")
        X = as_feature_matrix(X)
        if X.shape[1] != self.weights_.shape[0]:
            raise ValueError(
                f"dimension mismatch: model has {self.weights_.shape[0]} features, "
                f"input has {X.shape[1]}"
            )
        return np.asarray(X @ self.weights_).ravel() + self.bias_

    def score_samples(self, X) -> np.ndarray:
        """P(alcohol involvement) per document, in (0, 1)."""
        z = self.decision_function(X)
        if self.link == "probit":
            return ndtr(z)
        return expit(z)

    def predict_proba(self, X) -> np.ndarray:
        scores = self.score_samples(X)
        return np.column_stack([1.0 - scores, scores])

    def predict(self, X) -> np.ndarray:
        return (self.score_samples(X) >= self.threshold).astype(np.int64)

    # -- serialization ---------------------------------------------------------

    def save(self, path) -> None:
        check_fitted(self, "weights_")
        lines = [
            "aimaudit-classifier v1",
            f"link={self.link}",
            f"regularization={float(self.regularization)!r}",
            f"threshold={float(self.threshold)!r}",
            f"dimension={self.weights_.shape[0]}",
            f"bias={float(self.bias_)!r}",
        ]
        lines.extend(repr(float(value)) for value in self.weights_)
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "NarrativeClassifier":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines or lines[0] != "aimaudit-classifier v1":
            raise ValueError(f"{path}: not a classifier model file")
        header = dict(line.split("=", 1) for line in lines[1:6])
        model = cls(
            regularization=float(header["regularization"]),
            link=header["link"],
            threshold=float(header["threshold"]),
        )
        dim = int(header["dimension"])
        model.bias_ = float(header["bias"])
        model.weights_ = np.array([float(v) for v in lines[6 : 6 + dim]])
        if model.weights_.shape[0] != dim:
            raise ValueError(f"{path}: expected {dim} weights")
        model.gradient_norm_ = 0.0
        model.n_iter_ = 0
        model.objective_path_ = []
        return model


# -- prediction sets -----------------------------------------------------------


@dataclass(frozen=True)
class Prediction:
    label: str  # Alcoholic / NonAlcoholic
    score: float
    source: str  # native / external


class PredictionSet:
    """One labeled score per crash key."""

    def __init__(self, entries: dict, threshold: float = 0.5):
        self.threshold = threshold
        self.entries = dict(entries)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries.items())

    def keys(self):
        return self.entries.keys()

    def get(self, crash_key: int) -> Prediction:
        return self.entries[crash_key]

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["CRASH_KEY", "LABEL", "SCORE", "SOURCE"])
            for key, pred in self.entries.items():
                writer.writerow([key, pred.label, repr(pred.score), pred.source])

    @classmethod
    def read(cls, path, threshold: float = 0.5) -> "PredictionSet":
        entries = {}
        with open(path, "r", encoding="utf-8", newline="") as handle:
            reader = csv.DictReader(handle)
            for row in reader:
                key = int(row["CRASH_KEY"])
                if key in entries:
                    raise ValueError(f"{path}: duplicate crash_key {key}")
                entries[key] = Prediction(row["LABEL"], float(row["SCORE"]), row["SOURCE"])
        return cls(entries, threshold)


def predict_set(model: NarrativeClassifier, X, crash_keys, threshold=None) -> PredictionSet:
    """Native predictions for a block of documents keyed by crash."""
    threshold = model.threshold if threshold is None else threshold
    scores = model.score_samples(X)
    if len(crash_keys) != scores.shape[0]:
        raise ValueError("crash_keys and X have different lengths")
    entries = {}
    for key, score in zip(crash_keys, scores):
        if key in entries:
            raise ValueError(f"duplicate crash_key {key}")
        label = ALCOHOLIC if score >= threshold else NON_ALCOHOLIC
        entries[key] = Prediction(label, float(score), "native")
    return PredictionSet(entries, threshold)


def load_external_predictions(path, ds, threshold: float = 0.5):
    """Adapter for scores produced outside the pipeline.

    The file is delimited (crash_key, score).  Scores outside [0, 1] are
    rejected per row; duplicate keys are fatal; keys missing from the
    dataset are reported as unmatched.  Returns
    (PredictionSet, unmatched_keys, rejected_rows).
    """
    entries = {}
    unmatched = []
    rejected = []
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty scores file")
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            key = int(row[0])
            if key in entries:
                raise ValueError(f"{path}:{lineno}: duplicate crash_key {key}")
            try:
                score = float(row[1])
            except (IndexError, ValueError):
                rejected.append((key, "unparseable score"))
                continue
            if not 0.0 <= score <= 1.0:
                rejected.append((key, f"score {score} outside [0, 1]"))
                continue
            if key not in ds:
                unmatched.append(key)
                continue
            label = ALCOHOLIC if score >= threshold else NON_ALCOHOLIC
            entries[key] = Prediction(label, score, "external")
    return PredictionSet(entries, threshold), unmatched, rejected


# -- evaluation -----------------------------------------------------------------


@dataclass(frozen=True)
class EvalReport:
    """Confusion counts with positive class = alcohol involvement."""

    tp: int
    fp: int
    fn: int
    tn: int

    @staticmethod
    def _safe_div(num: float, den: float) -> float:
        return num / den if den > 0 else 0.0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def precision_alcohol(self) -> float:
        return self._safe_div(self.tp, self.tp + self.fp)

    @property
    def recall_alcohol(self) -> float:
        return self._safe_div(self.tp, self.tp + self.fn)

    @property
    def f1_alcohol(self) -> float:
        p, r = self.precision_alcohol, self.recall_alcohol
        return self._safe_div(2 * p * r, p + r)

    @property
    def support_alcohol(self) -> int:
        return self.tp + self.fn

    @property
    def precision_non_alcohol(self) -> float:
        return self._safe_div(self.tn, self.tn + self.fn)

    @property
    def recall_non_alcohol(self) -> float:
        return self._safe_div(self.tn, self.tn + self.fp)

    @property
    def f1_non_alcohol(self) -> float:
        p, r = self.precision_non_alcohol, self.recall_non_alcohol
        return self._safe_div(2 * p * r, p + r)

    @property
    def support_non_alcohol(self) -> int:
        return self.tn + self.fp

    @property
    def accuracy(self) -> float:
        return self._safe_div(self.tp + self.tn, self.total)

    def to_dict(self) -> dict:
        return {
            "confusion": {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn},
            "alcohol": {
                "precision": self.precision_alcohol,
                "recall": self.recall_alcohol,
                "f1": self.f1_alcohol,
                "support": self.support_alcohol,
            },
            "non_alcohol": {
                "precision": self.precision_non_alcohol,
                "recall": self.recall_non_alcohol,
                "f1": self.f1_non_alcohol,
                "support": self.support_non_alcohol,
            },
            "accuracy": self.accuracy,
        }


def _is_positive(label) -> bool:
    if isinstance(label, AlcoholFlag):
        return label is AlcoholFlag.ALCOHOL
    text = str(label).strip().lower()
    if text in ("alcohol", "alcoholic", "1", "true"):
        return True
    if text in ("nonalcohol", "non-alcohol", "nonalcoholic", "non-alcoholic", "0", "false"):
        return False
    raise ValueError(f"unrecognized label {label!r}")


def evaluate(preds: PredictionSet, truth: dict) -> EvalReport:
    """Score predictions against recorded labels; key sets must match."""
    if set(preds.keys()) != set(truth.keys()):
        missing = set(truth.keys()) - set(preds.keys())
        extra = set(preds.keys()) - set(truth.keys())
        raise ValueError(
            f"prediction/truth key mismatch ({len(missing)} missing, {len(extra)} extra)"
        )
    tp = fp = fn = tn = 0
    for key, pred in preds:
        predicted_pos = _is_positive(pred.label)
        actual_pos = _is_positive(truth[key])
        if predicted_pos and actual_pos:
            tp += 1
        elif predicted_pos:
            fp += 1
        elif actual_pos:
            fn += 1
        else:
            tn += 1
    return EvalReport(tp=tp, fp=fp, fn=fn, tn=tn)
