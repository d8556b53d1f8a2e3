"""Edge datasets, classical classifiers, and ranked new-branch prediction on an attack DAG.

All three learners are implemented here with exact integer/rational arithmetic
so training and prediction are reproducible bit-for-bit:

* ``decision_tree``: greedy binary splits minimizing weighted Gini impurity.
* ``knn``: Hamming-distance k nearest neighbours with an odd ``k``.
* ``linear``: perceptron-trained linear separator (stands in for a linear SVM).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from functools import lru_cache
from typing import Sequence

from .attack_graph import AttackDAG, NodeKey, StepNode, topological_order
from .errors import (
    EmptyDataset,
    EmptyGraph,
    InvalidHyperparams,
    SchemaMismatch,
    TooFewEdges,
    TooFewSamples,
)
from .feature_model import BitVector, FeatureSchema, edge_features
from .rng import SplitMix64

MODEL_FORMAT_VERSION = "1"


class ModelKind(str, Enum):
    DECISION_TREE = "decision_tree"
    KNN = "knn"
    LINEAR = "linear"

    @classmethod
    def parse(cls, text: str) -> "ModelKind":
        aliases = {"tree": cls.DECISION_TREE, "dt": cls.DECISION_TREE, "svm": cls.LINEAR,
                   "perceptron": cls.LINEAR}
        text = text.strip().lower()
        return aliases.get(text) or cls(text)


def _frac(x) -> Fraction:
    return Fraction(str(x)) if isinstance(x, float) else Fraction(x)


# -- datasets ------------------------------------------------------------------


@dataclass(frozen=True)
class EdgeSample:
    src: NodeKey
    dst: NodeKey
    x: BitVector
    y: int  # 1 = edge present, 0 = sampled non-edge


@dataclass(frozen=True)
class Dataset:
    samples: tuple[EdgeSample, ...]
    schema_version: str
    neg_ratio: Fraction
    seed: int
    warning: bool = False  # fewer non-edges available than requested

    @property
    def positives(self) -> int:
        return sum(s.y for s in self.samples)

    @property
    def negatives(self) -> int:
        return len(self.samples) - self.positives

    def to_dict(self) -> dict:
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "schema_version": self.schema_version,
            "neg_ratio": str(self.neg_ratio),
            "seed": self.seed,
            "warning": self.warning,
            "samples": [{"src": str(s.src), "dst": str(s.dst), "x": str(s.x), "y": s.y}
                        for s in self.samples],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


@lru_cache(maxsize=1 << 16)
def _pair_features(u: StepNode, v: StepNode, schema: FeatureSchema) -> BitVector:
    return edge_features(u, v, schema)


def candidate_pool(dag: AttackDAG, order: Sequence[NodeKey] | None = None) -> list[tuple[NodeKey, NodeKey]]:
    """Non-edges (u, v) with u before v in a topological order, sorted by key pair.

    Adding any of them keeps the DAG acyclic, since the order stays valid.
    """
    order = list(order) if order is not None else topological_order(dag)
    pool = []
    for i, u in enumerate(order):
        for v in order[i + 1:]:
            if (u, v) not in dag.edges:
                pool.append((u, v))
    pool.sort()
    return pool


def build_dataset(
    dag: AttackDAG,
    schema: FeatureSchema,
    neg_ratio=1,
    seed: int = 0,
    order: Sequence[NodeKey] | None = None,
) -> Dataset:
    if len(dag.nodes) < 2 or not dag.edges:
        raise EmptyGraph("dataset needs at least 2 nodes and 1 edge")
    ratio = _frac(neg_ratio)
    if ratio <= 0:
        raise InvalidHyperparams("neg_ratio must be positive")
    positives = sorted(dag.edges)
    pool = candidate_pool(dag, order)
    wanted = int(ratio * len(positives) + Fraction(1, 2))
    warning = wanted > len(pool)
    chosen = pool if warning else SplitMix64(seed).sample(pool, wanted)
    pairs = [(e, 1) for e in positives] + [(e, 0) for e in chosen]
    pairs.sort()
    samples = tuple(
        EdgeSample(u, v, _pair_features(dag.nodes[u], dag.nodes[v], schema), y) for (u, v), y in pairs
    )
    return Dataset(samples, schema.version, ratio, seed, warning)


# -- models --------------------------------------------------------------------


@dataclass(frozen=True)
class Hyperparams:
    max_depth: int = 6
    min_leaf: int = 1
    k: int = 3
    epochs: int = 100
    seed: int = 0

    def check(self, kind: ModelKind) -> None:
        if kind is ModelKind.DECISION_TREE and (self.max_depth < 1 or self.min_leaf < 1):
            raise InvalidHyperparams("decision_tree needs max_depth >= 1 and min_leaf >= 1")
        if kind is ModelKind.KNN and (self.k < 1 or self.k % 2 == 0):
            raise InvalidHyperparams(f"knn needs an odd k >= 1, got {self.k}")
        if kind is ModelKind.LINEAR and self.epochs < 1:
            raise InvalidHyperparams("linear needs epochs >= 1")


@dataclass(frozen=True)
class TreeNode:
    label: int
    feature: int | None = None
    left: "TreeNode | None" = None  # feature bit == 0
    right: "TreeNode | None" = None  # feature bit == 1

    @property
    def is_leaf(self) -> bool:
        return self.feature is None

    def depth(self) -> int:
        if self.is_leaf:
            return 0
        return 1 + max(self.left.depth(), self.right.depth())

    def to_dict(self) -> dict:
        if self.is_leaf:
            return {"label": self.label}
        return {"label": self.label, "feature": self.feature,
                "left": self.left.to_dict(), "right": self.right.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "TreeNode":
        if "feature" not in d:
            return cls(d["label"])
        return cls(d["label"], d["feature"], cls.from_dict(d["left"]), cls.from_dict(d["right"]))


@dataclass(frozen=True)
class KnnParams:
    k: int
    masks: tuple[int, ...]
    labels: tuple[int, ...]
    width: int


@dataclass(frozen=True)
class LinearParams:
    weights: tuple[int, ...]
    bias: int
    epochs: int
    epochs_used: int
    seed: int


@dataclass(frozen=True)
class TrainedModel:
    kind: ModelKind
    schema_version: str
    params: TreeNode | KnnParams | LinearParams

    def predict(self, x: BitVector) -> int:
        p = self.params
        if self.kind is ModelKind.DECISION_TREE:
            node = p
            while not node.is_leaf:
                node = node.right if x[node.feature] else node.left
            return node.label
        if self.kind is ModelKind.KNN:
            return _knn_vote(p, x.mask)
        return int(_dot(p.weights, x) + p.bias > 0)

    def to_dict(self) -> dict:
        p = self.params
        if self.kind is ModelKind.DECISION_TREE:
            params = {"tree": p.to_dict(), "depth": p.depth()}
        elif self.kind is ModelKind.KNN:
            params = {"k": p.k, "samples": [
                {"x": format(m, f"0{p.width}b"), "y": y} for m, y in zip(p.masks, p.labels)
            ]}
        else:
            params = {"weights": list(p.weights), "bias": p.bias, "epochs": p.epochs,
                      "epochs_used": p.epochs_used, "seed": p.seed}
        return {"format_version": MODEL_FORMAT_VERSION, "kind": self.kind.value,
                "schema_version": self.schema_version, "parameters": params}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainedModel":
        kind = ModelKind(d["kind"])
        p = d["parameters"]
        if kind is ModelKind.DECISION_TREE:
            params = TreeNode.from_dict(p["tree"])
        elif kind is ModelKind.KNN:
            xs = [BitVector.from_string(s["x"]) for s in p["samples"]]
            params = KnnParams(p["k"], tuple(x.mask for x in xs), tuple(s["y"] for s in p["samples"]),
                               len(xs[0]) if xs else 0)
        else:
            params = LinearParams(tuple(p["weights"]), p["bias"], p["epochs"], p["epochs_used"], p["seed"])
        return cls(kind, d["schema_version"], params)


def _dot(w: Sequence[int], x: BitVector) -> int:
    return sum(wi for wi, xi in zip(w, x.bits) if xi)


def _knn_vote(p: KnnParams, q: int) -> int:
    ranked = sorted(range(len(p.masks)), key=lambda i: ((p.masks[i] ^ q).bit_count(), i))
    top = ranked[: p.k]
    pos = sum(p.labels[i] for i in top)
    return int(2 * pos > len(top))


def _weighted_gini(groups) -> Fraction:
    """Sum over groups of n_g * gini_g, i.e. n times the weighted Gini impurity."""
    total = Fraction(0)
    for pos, n in groups:
        total += n - Fraction(pos * pos + (n - pos) * (n - pos), n)
    return total


def _grow(xs, ys, idx, depth, hp: Hyperparams, width: int) -> TreeNode:
    n = len(idx)
    pos = sum(ys[i] for i in idx)
    label = int(2 * pos > n)
    if pos == 0 or pos == n or depth >= hp.max_depth:
        return TreeNode(label)
    best = None
    for f in range(width):
        right = [i for i in idx if xs[i][f]]
        n_r = len(right)
        n_l = n - n_r
        if n_l < hp.min_leaf or n_r < hp.min_leaf:
            continue
        pos_r = sum(ys[i] for i in right)
        score = _weighted_gini(((pos - pos_r, n_l), (pos_r, n_r)))
        if best is None or score < best[0]:
            best = (score, f, right)
    if best is None:
        return TreeNode(label)
    _, f, right = best
    right_set = set(right)
    left = [i for i in idx if i not in right_set]
    return TreeNode(label, f, _grow(xs, ys, left, depth + 1, hp, width),
                    _grow(xs, ys, right, depth + 1, hp, width))


def _train_perceptron(ds: Dataset, hp: Hyperparams) -> LinearParams:
    width = len(ds.samples[0].x)
    w = [0] * width
    b = 0
    rng = SplitMix64(hp.seed)
    order = list(range(len(ds.samples)))
    used = 0
    for _ in range(hp.epochs):
        used += 1
        rng.shuffle(order)
        mistakes = 0
        for i in order:
            s = ds.samples[i]
            sign = 1 if s.y else -1
            if sign * (_dot(w, s.x) + b) <= 0:
                mistakes += 1
                for j, xj in enumerate(s.x.bits):
                    if xj:
                        w[j] += sign
                b += sign
        if mistakes == 0:
            break
    return LinearParams(tuple(w), b, hp.epochs, used, hp.seed)


def train(ds: Dataset, kind: ModelKind | str, hp: Hyperparams | None = None) -> TrainedModel:
    kind = ModelKind.parse(kind) if isinstance(kind, str) else kind
    hp = hp or Hyperparams()
    hp.check(kind)
    if not ds.samples:
        raise EmptyDataset("cannot train on an empty dataset")
    width = len(ds.samples[0].x)
    if kind is ModelKind.DECISION_TREE:
        xs = [s.x.bits for s in ds.samples]
        ys = [s.y for s in ds.samples]
        params = _grow(xs, ys, list(range(len(xs))), 0, hp, width)
    elif kind is ModelKind.KNN:
        params = KnnParams(hp.k, tuple(s.x.mask for s in ds.samples), tuple(s.y for s in ds.samples), width)
    else:
        params = _train_perceptron(ds, hp)
    return TrainedModel(kind, ds.schema_version, params)


# -- prediction ------------------------------------------------------------------


@dataclass(frozen=True)
class Candidate:
    src: NodeKey
    dst: NodeKey
    score: Fraction
    votes: tuple[int, ...]
    src_attacks: tuple[str, ...] = ()
    dst_attacks: tuple[str, ...] = ()


@dataclass(frozen=True)
class PredictionReport:
    candidates: tuple[Candidate, ...]
    model_kinds: tuple[ModelKind, ...]
    threshold: Fraction

    def pairs(self) -> list[tuple[NodeKey, NodeKey]]:
        return [(c.src, c.dst) for c in self.candidates]

    def to_dict(self) -> dict:
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "model_kinds": [k.value for k in self.model_kinds],
            "threshold": str(self.threshold),
            "candidates": [
                {"src": str(c.src), "dst": str(c.dst), "score": str(c.score),
                 "votes": dict(zip((f"{i}:{k.value}" for i, k in enumerate(self.model_kinds)), c.votes)),
                 "src_attacks": list(c.src_attacks), "dst_attacks": list(c.dst_attacks)}
                for c in self.candidates
            ],
        }


def predict_edges(
    models: Sequence[TrainedModel],
    dag: AttackDAG,
    schema: FeatureSchema,
    threshold=Fraction(1, 2),
    order: Sequence[NodeKey] | None = None,
) -> PredictionReport:
    """Score every cycle-safe non-edge by the fraction of models voting positive."""
    if not models:
        raise ValueError("at least one model is required")
    for m in models:
        if m.schema_version != schema.version:
            raise SchemaMismatch(f"model trained on schema {m.schema_version}, got {schema.version}")
    thr = _frac(threshold)
    if not 0 <= thr <= 1:
        raise ValueError("threshold must lie in [0, 1]")
    members = dag.node_attacks()
    out = []
    for u, v in candidate_pool(dag, order):
        x = _pair_features(dag.nodes[u], dag.nodes[v], schema)
        votes = tuple(m.predict(x) for m in models)
        score = Fraction(sum(votes), len(votes))
        if score < thr:
            continue
        if dag.reaches(v, u):  # unreachable by pool construction; kept as a guard
            continue
        out.append(Candidate(u, v, score, votes, tuple(sorted(members[u])), tuple(sorted(members[v]))))
    out.sort(key=lambda c: (-c.score, c.src, c.dst))
    return PredictionReport(tuple(out), tuple(m.kind for m in models), thr)


# -- evaluation --------------------------------------------------------------------


@dataclass(frozen=True)
class Metrics:
    kind: ModelKind
    folds: int
    seed: int
    accuracy: tuple[float, ...]
    precision: tuple[float, ...]
    recall: tuple[float, ...]

    @staticmethod
    def _mean(xs) -> float:
        return sum(xs) / len(xs)

    @property
    def mean_accuracy(self) -> float:
        return self._mean(self.accuracy)

    @property
    def mean_precision(self) -> float:
        return self._mean(self.precision)

    @property
    def mean_recall(self) -> float:
        return self._mean(self.recall)

    def to_dict(self) -> dict:
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "kind": self.kind.value,
            "folds": self.folds,
            "seed": self.seed,
            "accuracy": list(self.accuracy),
            "precision": list(self.precision),
            "recall": list(self.recall),
            "mean": {"accuracy": self.mean_accuracy, "precision": self.mean_precision,
                     "recall": self.mean_recall},
        }


def stratified_folds(labels: Sequence[int], folds: int, seed: int) -> list[int]:
    """Fold id per sample: each class shuffled, then dealt round-robin across folds."""
    rng = SplitMix64(seed)
    pos = [i for i, y in enumerate(labels) if y]
    neg = [i for i, y in enumerate(labels) if not y]
    rng.shuffle(pos)
    rng.shuffle(neg)
    assign = [0] * len(labels)
    for c, i in enumerate(pos + neg):
        assign[i] = c % folds
    return assign


def cross_validate(ds: Dataset, kind: ModelKind | str, hp: Hyperparams | None = None,
                   folds: int = 5, seed: int = 0) -> Metrics:
    kind = ModelKind.parse(kind) if isinstance(kind, str) else kind
    if folds < 2:
        raise InvalidHyperparams("folds must be >= 2")
    n = len(ds.samples)
    if n < folds:
        raise TooFewSamples(f"{n} samples cannot fill {folds} folds")
    assign = stratified_folds([s.y for s in ds.samples], folds, seed)
    acc, prec, rec = [], [], []
    for f in range(folds):
        train_set = tuple(s for s, a in zip(ds.samples, assign) if a != f)
        test_set = [s for s, a in zip(ds.samples, assign) if a == f]
        model = train(Dataset(train_set, ds.schema_version, ds.neg_ratio, ds.seed), kind, hp)
        tp = fp = fn = correct = 0
        for s in test_set:
            p = model.predict(s.x)
            correct += p == s.y
            tp += p and s.y
            fp += p and not s.y
            fn += (not p) and s.y
        acc.append(correct / len(test_set))
        prec.append(tp / (tp + fp) if tp + fp else 0.0)
        rec.append(tp / (tp + fn) if tp + fn else 0.0)
    return Metrics(kind, folds, seed, tuple(acc), tuple(prec), tuple(rec))


@dataclass(frozen=True)
class LooResult:
    recovered: tuple[tuple[NodeKey, NodeKey], ...]
    missed: tuple[tuple[NodeKey, NodeKey], ...]
    kind: ModelKind
    seed: int

    @property
    def total(self) -> int:
        return len(self.recovered) + len(self.missed)

    @property
    def rate(self) -> Fraction:
        return Fraction(len(self.recovered), self.total)

    def to_dict(self) -> dict:
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "kind": self.kind.value,
            "seed": self.seed,
            "recovered": len(self.recovered),
            "total": self.total,
            "recovery_rate": str(self.rate),
            "recovery_rate_float": float(self.rate),
            "missed_edges": [[str(a), str(b)] for a, b in self.missed],
        }


def leave_one_edge_out(
    dag: AttackDAG,
    schema: FeatureSchema,
    kind: ModelKind | str,
    hp: Hyperparams | None = None,
    seed: int = 0,
    neg_ratio=1,
    threshold=Fraction(1, 2),
) -> LooResult:
    """Hide each edge in turn, retrain, and check the model proposes it again.

    The topological order of the full DAG is reused for every fold, so the
    held-out edge is always a member of the candidate pool.
    """
    kind = ModelKind.parse(kind) if isinstance(kind, str) else kind
    if len(dag.edges) < 3:
        raise TooFewEdges("leave-one-edge-out needs at least 3 edges")
    order = topological_order(dag)
    recovered, missed = [], []
    for e in sorted(dag.edges):
        reduced = dag.without_edge(*e)
        ds = build_dataset(reduced, schema, neg_ratio, seed, order=order)
        model = train(ds, kind, hp)
        hits = set(predict_edges([model], reduced, schema, threshold, order=order).pairs())
        (recovered if e in hits else missed).append(e)
    return LooResult(tuple(recovered), tuple(missed), kind, seed)


def models_to_json(models: Sequence[TrainedModel]) -> str:
    return json.dumps({"format_version": MODEL_FORMAT_VERSION, "models": [m.to_dict() for m in models]},
                      indent=2, sort_keys=True) + "\n"


def models_from_json(text: str) -> list[TrainedModel]:
    return [TrainedModel.from_dict(d) for d in json.loads(text)["models"]]
