import dataclasses
import itertools
import random
from fractions import Fraction

import pytest

from threatdag.attack_graph import (
    AttackCFG,
    NodeKey,
    StepNode,
    apply_predicted_edge,
    merge_cfgs,
    validate_acyclic,
)
from threatdag.corpus import load_bundled
from threatdag.errors import (
    EmptyDataset,
    EmptyGraph,
    InvalidHyperparams,
    SchemaMismatch,
    TooFewEdges,
    TooFewSamples,
)
from threatdag.feature_model import BitVector, default_schema
from threatdag.link_prediction import (
    Dataset,
    EdgeSample,
    Hyperparams,
    ModelKind,
    build_dataset,
    candidate_pool,
    cross_validate,
    leave_one_edge_out,
    models_from_json,
    models_to_json,
    predict_edges,
    stratified_folds,
    train,
)

SCHEMA = default_schema()
LOO_TREE_SEED42 = Fraction(50, 71)  # regression lock, first recorded run
KEY = NodeKey("x", "system")


def make_ds(rows):
    samples = tuple(EdgeSample(KEY, KEY, BitVector(tuple(x)), y) for x, y in rows)
    return Dataset(samples, "v1", Fraction(1), 0)


def cfg(aid, labels_feats, edges):
    nodes = tuple(StepNode(f"n{i}", lab, "system", BitVector.from_string(b))
                  for i, (lab, b) in enumerate(labels_feats))
    return AttackCFG(aid, aid, "DoS", nodes, tuple((f"n{a}", f"n{b}") for a, b in edges))


def bits16(*on):
    return "".join("1" if i in on else "0" for i in range(16))


@pytest.fixture(scope="module")
def sdn():
    return merge_cfgs(load_bundled("sdn").attacks)


# -- datasets -------------------------------------------------------------------


def test_two_node_graph_has_no_negatives():
    d = merge_cfgs([cfg("a", [("p", bits16()), ("q", bits16(13))], [(0, 1)])])
    ds = build_dataset(d, SCHEMA)
    assert (ds.positives, ds.negatives, ds.warning) == (1, 0, True)
    assert predict_edges([train(ds, "tree")], d, SCHEMA).candidates == ()


def test_chain_negatives():
    d = merge_cfgs([cfg("a", [("p", bits16()), ("q", bits16(1)), ("r", bits16(13))], [(0, 1), (1, 2)])])
    assert candidate_pool(d) == [(NodeKey("p", "system"), NodeKey("r", "system"))]
    full = build_dataset(d, SCHEMA, neg_ratio=1)
    assert (full.negatives, full.warning) == (1, True)
    half = build_dataset(d, SCHEMA, neg_ratio="1/2")
    assert (half.negatives, half.warning) == (1, False)
    with pytest.raises(InvalidHyperparams):
        build_dataset(d, SCHEMA, neg_ratio=0)
    with pytest.raises(EmptyGraph):
        build_dataset(merge_cfgs([]), SCHEMA)


def test_sdn_dataset_shape_and_determinism(sdn):
    ds = build_dataset(sdn, SCHEMA, 1, 0)
    assert (len(ds.samples), ds.positives) == (142, 71)
    assert all(len(s.x) == 34 for s in ds.samples)
    assert ds == build_dataset(sdn, SCHEMA, 1, 0)
    assert ds != build_dataset(sdn, SCHEMA, 1, 1)
    edges = set(sdn.edges)
    assert all((s.y == 1) == ((s.src, s.dst) in edges) for s in ds.samples)


# -- decision tree against an independent Gini recursion ----------------------------


def _gini(ys):
    n = len(ys)
    p = Fraction(sum(ys), n)
    return 1 - p * p - (1 - p) * (1 - p)


def oracle_tree(rows, depth, max_depth, min_leaf, width):
    """Returns a predict function built by a separate textbook greedy recursion."""
    ys = [y for _, y in rows]
    majority = 1 if 2 * sum(ys) > len(ys) else 0
    if len(set(ys)) == 1 or depth == max_depth:
        return lambda x: majority
    best = None
    for f in range(width):
        left = [r for r in rows if r[0][f] == 0]
        right = [r for r in rows if r[0][f] == 1]
        if len(left) < min_leaf or len(right) < min_leaf:
            continue
        impurity = (Fraction(len(left), len(rows)) * _gini([y for _, y in left])
                    + Fraction(len(right), len(rows)) * _gini([y for _, y in right]))
        if best is None or impurity < best[0]:
            best = (impurity, f, left, right)
    if best is None:
        return lambda x: majority
    _, f, left, right = best
    lo = oracle_tree(left, depth + 1, max_depth, min_leaf, width)
    hi = oracle_tree(right, depth + 1, max_depth, min_leaf, width)
    return lambda x: hi(x) if x[f] else lo(x)


def check_tree_oracle(n_sets=100, seed=31):
    rng = random.Random(seed)
    for _ in range(n_sets):
        width = rng.randint(1, 8)
        n = rng.randint(1, 64)
        rows = [(tuple(rng.randint(0, 1) for _ in range(width)), rng.randint(0, 1)) for _ in range(n)]
        # sometimes plant a rule so trees get deep and non-trivial
        if rng.random() < 0.5:
            rows = [(x, x[0] ^ x[-1] if rng.random() < 0.9 else 1 - (x[0] ^ x[-1])) for x, _ in rows]
        hp = Hyperparams(max_depth=rng.randint(1, 8), min_leaf=rng.randint(1, 4))
        model = train(make_ds(rows), ModelKind.DECISION_TREE, hp)
        want = oracle_tree(rows, 0, hp.max_depth, hp.min_leaf, width)
        assert model.params.depth() <= hp.max_depth
        for x in itertools.product((0, 1), repeat=width):
            assert model.predict(BitVector(x)) == want(x)


def check_knn_k1(n_sets=50, seed=5):
    rng = random.Random(seed)
    for _ in range(n_sets):
        width = rng.randint(3, 10)
        n = rng.randint(1, min(64, 2**width))
        xs = rng.sample(list(itertools.product((0, 1), repeat=width)), n)
        rows = [(x, rng.randint(0, 1)) for x in xs]
        model = train(make_ds(rows), "knn", Hyperparams(k=1))
        assert [model.predict(BitVector(x)) for x, _ in rows] == [y for _, y in rows]


def _margin_set(rng, width):
    w = [rng.randint(-2, 2) for _ in range(width)]
    b = rng.randint(-2, 2)
    rows = []
    for _ in range(rng.randint(5, 60)):
        x = tuple(rng.randint(0, 1) for _ in range(width))
        s = sum(wi * xi for wi, xi in zip(w, x)) + b
        if s != 0:  # integer weights, so |s| >= 1 is the margin
            rows.append((x, int(s > 0)))
    return rows, w, b


def check_perceptron_margin(n_sets=50, seed=8):
    rng = random.Random(seed)
    done = 0
    while done < n_sets:
        width = rng.randint(2, 8)
        rows, w, b = _margin_set(rng, width)
        if not rows:
            continue
        done += 1
        # Novikoff: mistakes <= R^2 |(w, b)|^2 with augmented inputs, and every
        # epoch before the last makes at least one mistake
        bound = (width + 1) * (sum(v * v for v in w) + b * b) + 1
        model = train(make_ds(rows), "linear", Hyperparams(epochs=bound, seed=done))
        assert model.params.epochs_used <= bound
        assert all(model.predict(BitVector(x)) == y for x, y in rows)


def test_tree_matches_gini_oracle():
    check_tree_oracle(40)


def test_knn_k1_reproduces_labels():
    check_knn_k1(20)


def test_perceptron_separates_margin_sets():
    check_perceptron_margin(20)


def test_knn_duplicates_prefer_earliest():
    rows = [((1, 0, 1), 0), ((1, 0, 1), 1), ((0, 0, 0), 1)]
    model = train(make_ds(rows), "knn", Hyperparams(k=1))
    assert model.predict(BitVector((1, 0, 1))) == 0


def test_tree_majority_leaf():
    same = [((0, 1), 1), ((0, 1), 1), ((0, 1), 0)]
    assert train(make_ds(same), "tree").params.is_leaf
    assert train(make_ds(same), "tree").predict(BitVector((1, 1))) == 1
    tie = [((0, 1), 1), ((0, 1), 0)]
    assert train(make_ds(tie), "tree").predict(BitVector((0, 1))) == 0


def test_tree_depth_respects_limit():
    rng = random.Random(1)
    rows = [(tuple(rng.randint(0, 1) for _ in range(8)), rng.randint(0, 1)) for _ in range(64)]
    for d in range(1, 6):
        assert train(make_ds(rows), "tree", Hyperparams(max_depth=d)).params.depth() <= d


def test_hyperparam_and_kind_validation():
    ds = make_ds([((0, 1), 1)])
    for kind, hp in [("knn", Hyperparams(k=2)), ("knn", Hyperparams(k=0)),
                     ("tree", Hyperparams(max_depth=0)), ("tree", Hyperparams(min_leaf=0)),
                     ("linear", Hyperparams(epochs=0))]:
        with pytest.raises(InvalidHyperparams):
            train(ds, kind, hp)
    with pytest.raises(EmptyDataset):
        train(Dataset((), "v1", Fraction(1), 0), "tree")
    assert ModelKind.parse("svm") is ModelKind.LINEAR
    assert ModelKind.parse("dt") is ModelKind.DECISION_TREE
    with pytest.raises(ValueError):
        ModelKind.parse("forest")


def test_models_json_round_trip(sdn):
    ds = build_dataset(sdn, SCHEMA, 1, 3)
    models = [train(ds, k, Hyperparams(seed=3)) for k in ModelKind]
    back = models_from_json(models_to_json(models))
    assert back == models
    assert models_to_json(back) == models_to_json(models)


# -- cross-validation -------------------------------------------------------------


def test_stratified_folds_balance():
    labels = [1] * 23 + [0] * 31
    assign = stratified_folds(labels, 5, 9)
    for cls in (0, 1):
        sizes = [sum(1 for a, y in zip(assign, labels) if a == f and y == cls) for f in range(5)]
        assert max(sizes) - min(sizes) <= 1
    assert assign == stratified_folds(labels, 5, 9)


def test_crossval_learnable_rule_is_perfect():
    rng = random.Random(2)
    rows = []
    for _ in range(40):
        y = rng.randint(0, 1)
        rows.append(((y, 0, 0, 0), y))
    m = cross_validate(make_ds(rows), "tree", folds=5, seed=4)
    assert m.accuracy == (1.0,) * 5
    assert m.mean_precision == 1.0 and m.mean_recall == 1.0


def test_crossval_on_noise_matches_majority_oracle():
    rng = random.Random(6)
    labels = [rng.randint(0, 1) for _ in range(37)]
    ds = make_ds([((0, 0, 0), y) for y in labels])
    m = cross_validate(ds, "tree", folds=4, seed=11)
    assign = stratified_folds(labels, 4, 11)
    for f in range(4):
        tr = [y for y, a in zip(labels, assign) if a != f]
        te = [y for y, a in zip(labels, assign) if a == f]
        guess = 1 if 2 * sum(tr) > len(tr) else 0
        tp = sum(1 for y in te if guess and y)
        assert m.accuracy[f] == sum(y == guess for y in te) / len(te)
        assert m.precision[f] == (tp / len(te) if guess else 0.0)
        assert m.recall[f] == (tp / sum(te) if guess and sum(te) else 0.0)
    assert cross_validate(ds, "tree", folds=4, seed=11) == m


def test_crossval_guards():
    ds = make_ds([((0,), 1), ((1,), 0)])
    with pytest.raises(InvalidHyperparams):
        cross_validate(ds, "tree", folds=1)
    with pytest.raises(TooFewSamples):
        cross_validate(ds, "tree", folds=3)


# -- prediction ---------------------------------------------------------------------


def test_threshold_one_is_unanimous(sdn):
    ds = build_dataset(sdn, SCHEMA, 1, 42)
    models = [train(ds, k, Hyperparams(seed=42)) for k in ModelKind]
    rep = predict_edges(models, sdn, SCHEMA, threshold=1)
    assert len(rep.candidates) == 174
    assert all(c.votes == (1, 1, 1) and c.score == 1 for c in rep.candidates)
    loose = predict_edges(models, sdn, SCHEMA, threshold="1/2")
    assert set(rep.pairs()) <= set(loose.pairs())
    keys = [(-c.score, c.src, c.dst) for c in loose.candidates]
    assert keys == sorted(keys)


def test_prediction_guards(sdn):
    ds = build_dataset(sdn, SCHEMA)
    m = train(ds, "tree")
    with pytest.raises(SchemaMismatch):
        predict_edges([dataclasses.replace(m, schema_version="v0")], sdn, SCHEMA)
    with pytest.raises(ValueError):
        predict_edges([], sdn, SCHEMA)
    with pytest.raises(ValueError):
        predict_edges([m], sdn, SCHEMA, threshold=2)


def check_sdn_candidates_apply(dag):
    ds = build_dataset(dag, SCHEMA, 1, 42)
    models = [train(ds, k, Hyperparams(seed=42)) for k in ModelKind]
    rep = predict_edges(models, dag, SCHEMA, threshold=Fraction(1, 2))
    assert rep.candidates
    grown = dag
    for c in rep.candidates:
        assert (c.src, c.dst) not in dag.edges
        grown = apply_predicted_edge(grown, c.src, c.dst)
    assert validate_acyclic(grown) == []
    assert len(grown.edges) == len(dag.edges) + len(rep.candidates)


def test_sdn_candidates_all_apply(sdn):
    check_sdn_candidates_apply(sdn)


# -- leave-one-edge-out ------------------------------------------------------------


def _bipartite(n):
    a = [(f"a{i}", bits16(0)) for i in range(n)]
    b = [(f"b{i}", bits16(1, 13)) for i in range(n)]
    edges = [(i, n + j) for i in range(n) for j in range(n)]
    return merge_cfgs([cfg("bip", a + b, edges)])


@pytest.mark.parametrize("kind", ["decision_tree", "knn"])
def test_loo_recovers_everything_on_separable_graph(kind):
    r = leave_one_edge_out(_bipartite(4), SCHEMA, kind)
    assert r.rate == 1 and r.total == 16


def test_loo_guards():
    d = merge_cfgs([cfg("a", [("p", bits16()), ("q", bits16()), ("r", bits16(13))], [(0, 1), (1, 2)])])
    with pytest.raises(TooFewEdges):
        leave_one_edge_out(d, SCHEMA, "tree")


def test_loo_sdn_regression_lock(sdn):
    r = leave_one_edge_out(sdn, SCHEMA, ModelKind.DECISION_TREE, seed=42)
    assert r.total == 71
    assert r.rate == LOO_TREE_SEED42
    assert r.to_dict()["recovery_rate"] == "50/71"
