"""Random corpus / DAG generators shared by the test modules."""

from __future__ import annotations

import random

from threatdag.attack_graph import AttackCFG, AttackDAG, Layer, NodeKey, StepNode
from threatdag.feature_model import BitVector

LAYERS = list(Layer)


def bits(rng: random.Random, n: int = 16) -> BitVector:
    return BitVector(tuple(rng.randint(0, 1) for _ in range(n)))


def key_pool(rng: random.Random, size: int):
    """``size`` distinct (label, layer, features) triples in a fixed global order."""
    pool = []
    for i in range(size):
        pool.append((f"step {i}", rng.choice(LAYERS), bits(rng)))
    return pool


def random_cfgs(rng: random.Random, max_nodes: int = 30, max_attacks: int = 6) -> list[AttackCFG]:
    """CFGs drawn from one shared key pool.

    Edges only run forward in pool order, so every union is acyclic; shared
    keys always carry identical features, so merges never conflict.
    """
    pool = key_pool(rng, rng.randint(2, max_nodes))
    cfgs = []
    for a in range(rng.randint(1, max_attacks)):
        idx = sorted(rng.sample(range(len(pool)), rng.randint(1, min(6, len(pool)))))
        nodes = [StepNode(f"n{j}", pool[i][0].upper() if rng.random() < 0.3 else pool[i][0],
                          pool[i][1], pool[i][2]) for j, i in enumerate(idx)]
        edges = [(f"n{x}", f"n{y}") for x in range(len(idx)) for y in range(x + 1, len(idx))
                 if rng.random() < 0.5]
        cfgs.append(AttackCFG(f"atk{a}", f"attack {a}", "DoS", tuple(nodes), tuple(edges)))
    return cfgs


def random_dag(rng: random.Random, n: int, p: float = 0.3) -> AttackDAG:
    keys = [NodeKey(f"v{i:02d}", rng.choice(LAYERS)) for i in range(n)]
    order = keys[:]
    rng.shuffle(order)
    nodes = {k: StepNode(str(i), k.normalized_label, k.layer, bits(rng)) for i, k in enumerate(keys)}
    edges = {}
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < p:
                edges[(order[i], order[j])] = frozenset({"g"})
    return AttackDAG(nodes, dict(sorted(edges.items())), ("g",))
