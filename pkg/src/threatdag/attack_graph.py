"""Attack CFGs, their merge into a unified attack DAG, and DAG queries/exports."""

from __future__ import annotations

import heapq
import json
import re
from collections import defaultdict
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import networkx as nx

from .errors import (
    CycleIntroduced,
    DuplicateNodeConflict,
    EdgeExists,
    InvalidCFG,
    PathBudgetExceeded,
    UnknownNode,
    WouldCreateCycle,
)
from .feature_model import BitVector

PREDICTED = "predicted"
DEFAULT_EXPANSION_BUDGET = 10**6


class Layer(str, Enum):
    APPLICATION = "application"
    NETWORK = "network"
    SYSTEM = "system"
    AUTHENTICATION = "authentication"
    EDGE_DEVICE = "edge_device"
    CONTROL_PLANE = "control_plane"
    DATA_PLANE = "data_plane"

    def __str__(self) -> str:
        return self.value


_WS = re.compile(r"\s+")


def normalize_label(label: str) -> str:
    """Lowercase and collapse runs of whitespace; rejects empty or multi-line labels."""
    if "\n" in label or "\r" in label:
        raise ValueError(f"label contains a newline: {label!r}")
    norm = _WS.sub(" ", label).strip().lower()
    if not norm:
        raise ValueError("label is empty")
    return norm


@dataclass(frozen=True, order=True)
class NodeKey:
    """Merge identity of a step: two nodes with equal keys are the same DAG node."""

    normalized_label: str
    layer: Layer

    def __str__(self) -> str:
        return f"{self.layer.value}:{self.normalized_label}"

    @classmethod
    def parse(cls, text: str) -> "NodeKey":
        layer, sep, label = text.partition(":")
        if not sep:
            raise ValueError(f"not a node key: {text!r}")
        return cls(normalize_label(label), Layer(layer))

    @classmethod
    def of(cls, label: str, layer: Layer | str) -> "NodeKey":
        return cls(normalize_label(label), Layer(layer))


@dataclass(frozen=True)
class StepNode:
    id: str
    label: str
    layer: Layer
    features: BitVector
    description: str = ""

    def __post_init__(self):
        object.__setattr__(self, "label", normalize_label(self.label))
        object.__setattr__(self, "layer", Layer(self.layer))

    @property
    def key(self) -> NodeKey:
        return NodeKey(self.label, self.layer)


@dataclass(frozen=True)
class AttackCFG:
    """Control-flow graph of a single attack.

    Nodes are kept sorted by id and edges as a sorted tuple of id pairs so two
    CFGs with the same content compare (and serialize) identically.
    """

    attack_id: str
    name: str
    category: str
    nodes: tuple[StepNode, ...]
    edges: tuple[tuple[str, str], ...]
    citation: str = ""

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(sorted(self.nodes, key=lambda n: n.id)))
        object.__setattr__(self, "edges", tuple(sorted(set(map(tuple, self.edges)))))
        self._validate()

    def _validate(self) -> None:
        ids = [n.id for n in self.nodes]
        if not ids:
            raise InvalidCFG(f"attack {self.attack_id!r} has no nodes")
        if len(set(ids)) != len(ids):
            raise InvalidCFG(f"attack {self.attack_id!r} has duplicate node ids")
        known = set(ids)
        for a, b in self.edges:
            for end in (a, b):
                if end not in known:
                    raise InvalidCFG(f"attack {self.attack_id!r}: edge endpoint {end!r} undeclared")
        if _find_cycle(ids, self._succ) is not None:
            raise InvalidCFG(f"attack {self.attack_id!r} is cyclic")

    @cached_property
    def _succ(self) -> dict[str, list[str]]:
        succ: dict[str, list[str]] = {n.id: [] for n in self.nodes}
        for a, b in self.edges:
            succ[a].append(b)
        return succ

    def node(self, node_id: str) -> StepNode:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    @property
    def entry_nodes(self) -> tuple[StepNode, ...]:
        targets = {b for _, b in self.edges}
        return tuple(n for n in self.nodes if n.id not in targets)

    @property
    def impact_nodes(self) -> tuple[StepNode, ...]:
        sources = {a for a, _ in self.edges}
        return tuple(n for n in self.nodes if n.id not in sources)


@dataclass(frozen=True)
class AttackDAG:
    """Deduplicated union of attack CFGs.

    ``edges`` maps each ``(src, dst)`` key pair to the set of attack ids that
    contributed it, or ``{"predicted"}`` for edges added by link prediction.
    The constructor does not check acyclicity; use :func:`merge_cfgs` and
    :func:`apply_predicted_edge`, which do.
    """

    nodes: Mapping[NodeKey, StepNode] = field(default_factory=dict)
    edges: Mapping[tuple[NodeKey, NodeKey], frozenset[str]] = field(default_factory=dict)
    origin: tuple[str, ...] = ()

    @cached_property
    def _succ(self) -> dict[NodeKey, list[NodeKey]]:
        succ: dict[NodeKey, list[NodeKey]] = {k: [] for k in self.nodes}
        for a, b in self.edges:
            succ.setdefault(a, []).append(b)
            succ.setdefault(b, [])
        for v in succ.values():
            v.sort()
        return succ

    def successors(self, key: NodeKey) -> list[NodeKey]:
        return self._succ.get(key, [])

    def has_edge(self, u: NodeKey, v: NodeKey) -> bool:
        return (u, v) in self.edges

    def reaches(self, src: NodeKey, dst: NodeKey) -> bool:
        if src == dst:
            return True
        seen = {src}
        stack = [src]
        while stack:
            for nxt in self.successors(stack.pop()):
                if nxt == dst:
                    return True
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return False

    def sorted_keys(self) -> list[NodeKey]:
        return sorted(self.nodes)

    def node_attacks(self) -> dict[NodeKey, frozenset[str]]:
        """Attack ids each node takes part in, derived from edge provenance."""
        member: dict[NodeKey, set[str]] = {k: set() for k in self.nodes}
        for (a, b), prov in self.edges.items():
            real = prov - {PREDICTED}
            member[a] |= real
            member[b] |= real
        return {k: frozenset(v) for k, v in member.items()}

    def without_edge(self, u: NodeKey, v: NodeKey) -> "AttackDAG":
        if (u, v) not in self.edges:
            raise UnknownNode(f"no edge {u} -> {v}")
        edges = {e: p for e, p in self.edges.items() if e != (u, v)}
        return AttackDAG(dict(self.nodes), edges, self.origin)


def _find_cycle(nodes: Iterable, succ: Mapping) -> list | None:
    """One directed cycle (as a node list) or None; deterministic for sorted inputs."""
    WHITE, GREY, BLACK = 0, 1, 2
    color = {n: WHITE for n in nodes}
    for root in color:
        if color[root] != WHITE:
            continue
        stack = [(root, iter(succ.get(root, ())))]
        path = [root]
        color[root] = GREY
        while stack:
            node, it = stack[-1]
            for nxt in it:
                if color.get(nxt, WHITE) == GREY:
                    return path[path.index(nxt):]
                if color.get(nxt, WHITE) == WHITE:
                    color[nxt] = GREY
                    path.append(nxt)
                    stack.append((nxt, iter(succ.get(nxt, ()))))
                    break
            else:
                color[node] = BLACK
                stack.pop()
                path.pop()
    return None


def merge_cfgs(cfgs: Sequence[AttackCFG]) -> AttackDAG:
    groups: dict[NodeKey, list[tuple[str, StepNode]]] = defaultdict(list)
    provenance: dict[tuple[NodeKey, NodeKey], set[str]] = defaultdict(set)
    for cfg in cfgs:
        by_id = {n.id: n for n in cfg.nodes}
        for n in cfg.nodes:
            groups[n.key].append((cfg.attack_id, n))
        for a, b in cfg.edges:
            provenance[(by_id[a].key, by_id[b].key)].add(cfg.attack_id)

    nodes: dict[NodeKey, StepNode] = {}
    for key in sorted(groups):
        members = sorted(groups[key], key=lambda m: (m[0], m[1].id))
        first = members[0][1]
        for _, other in members[1:]:
            if other.features != first.features:
                raise DuplicateNodeConflict(key, first, other)
        aid, rep = members[0]
        nodes[key] = replace(rep, id=f"{aid}/{rep.id}")

    edges = {e: frozenset(provenance[e]) for e in sorted(provenance)}
    dag = AttackDAG(nodes, edges, tuple(sorted({c.attack_id for c in cfgs})))
    cycle = _find_cycle(dag.sorted_keys(), dag._succ)
    if cycle is not None:
        raise CycleIntroduced(cycle)
    return dag


def validate_acyclic(dag: AttackDAG) -> list[list[NodeKey]]:
    """Every elementary cycle, each rotated to start at its smallest key; [] means acyclic."""
    g = nx.DiGraph()
    g.add_nodes_from(dag.nodes)
    g.add_edges_from(dag.edges)
    cycles = []
    for cyc in nx.simple_cycles(g):
        i = cyc.index(min(cyc))
        cycles.append(cyc[i:] + cyc[:i])
    return sorted(cycles)


def topological_order(dag: AttackDAG) -> list[NodeKey]:
    """Kahn's algorithm, always emitting the smallest ready key first."""
    indeg = {k: 0 for k in dag.nodes}
    for _, b in dag.edges:
        indeg[b] += 1
    ready = [k for k, d in indeg.items() if d == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        k = heapq.heappop(ready)
        order.append(k)
        for nxt in dag.successors(k):
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                heapq.heappush(ready, nxt)
    if len(order) != len(indeg):
        raise CycleIntroduced(_find_cycle(dag.sorted_keys(), dag._succ) or [])
    return order


def enumerate_attack_paths(
    dag: AttackDAG,
    src: NodeKey,
    dst: NodeKey,
    max_len: int,
    budget: int = DEFAULT_EXPANSION_BUDGET,
) -> list[tuple[NodeKey, ...]]:
    """All simple paths src -> dst with at most ``max_len`` edges, sorted by key sequence.

    Raises PathBudgetExceeded after ``budget`` node expansions.
    """
    for k in (src, dst):
        if k not in dag.nodes:
            raise UnknownNode(str(k))
    if max_len < 1:
        raise ValueError("max_len must be positive")
    if src == dst:
        return [(src,)]
    paths = []
    path = [src]
    on_path = {src}
    expansions = 0

    def walk(node):
        nonlocal expansions
        if len(path) - 1 >= max_len:
            return
        for nxt in dag.successors(node):
            if nxt in on_path:
                continue
            expansions += 1
            if expansions > budget:
                raise PathBudgetExceeded(f"more than {budget} expansions")
            if nxt == dst:
                paths.append(tuple(path) + (nxt,))
                continue
            path.append(nxt)
            on_path.add(nxt)
            walk(nxt)
            on_path.discard(path.pop())

    walk(src)
    return sorted(paths)


def apply_predicted_edge(dag: AttackDAG, u: NodeKey, v: NodeKey) -> AttackDAG:
    for k in (u, v):
        if k not in dag.nodes:
            raise UnknownNode(str(k))
    if (u, v) in dag.edges:
        raise EdgeExists(f"{u} -> {v}")
    if dag.reaches(v, u):
        raise WouldCreateCycle(f"{u} -> {v} closes a cycle")
    edges = dict(dag.edges)
    edges[(u, v)] = frozenset({PREDICTED})
    return AttackDAG(dict(dag.nodes), dict(sorted(edges.items())), dag.origin)


# -- export -------------------------------------------------------------------


def _dot_quote(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'


def export_dot(dag: AttackDAG) -> str:
    lines = ["digraph attacks {", "  rankdir=LR;", "  node [shape=box];"]
    for key in dag.sorted_keys():
        lines.append(
            f"  {_dot_quote(str(key))} [label={_dot_quote(key.normalized_label)}, "
            f"layer={_dot_quote(key.layer.value)}];"
        )
    for (a, b) in sorted(dag.edges):
        prov = dag.edges[(a, b)]
        attrs = f"provenance={_dot_quote(','.join(sorted(prov)))}"
        if PREDICTED in prov:
            attrs = "style=dashed, " + attrs
        lines.append(f"  {_dot_quote(str(a))} -> {_dot_quote(str(b))} [{attrs}];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def dag_to_dict(dag: AttackDAG) -> dict:
    return {
        "origin": list(dag.origin),
        "nodes": [
            {
                "key": str(k),
                "id": n.id,
                "label": n.label,
                "layer": n.layer.value,
                "description": n.description,
                "features": str(n.features),
            }
            for k, n in sorted(dag.nodes.items())
        ],
        "edges": [
            {"src": str(a), "dst": str(b), "provenance": sorted(dag.edges[(a, b)])}
            for a, b in sorted(dag.edges)
        ],
    }


def export_json(dag: AttackDAG) -> str:
    return json.dumps(dag_to_dict(dag), indent=2, sort_keys=True) + "\n"


def dag_from_dict(data: dict) -> AttackDAG:
    nodes = {}
    for o in data["nodes"]:
        n = StepNode(o["id"], o["label"], Layer(o["layer"]), BitVector.from_string(o["features"]),
                     o.get("description", ""))
        nodes[n.key] = n
    edges = {}
    for o in data["edges"]:
        a, b = NodeKey.parse(o["src"]), NodeKey.parse(o["dst"])
        if a not in nodes or b not in nodes:
            raise UnknownNode(f"edge {o['src']} -> {o['dst']} references an unknown node")
        edges[(a, b)] = frozenset(o["provenance"])
    dag = AttackDAG(dict(sorted(nodes.items())), dict(sorted(edges.items())), tuple(data.get("origin", ())))
    cycle = _find_cycle(dag.sorted_keys(), dag._succ)
    if cycle is not None:
        raise CycleIntroduced(cycle)
    return dag


def load_json(text: str) -> AttackDAG:
    return dag_from_dict(json.loads(text))
