"""Exception hierarchy shared by all threatdag modules."""

from __future__ import annotations


class ThreatDagError(Exception):
    """Base class for every domain error raised by this package."""


# -- features -----------------------------------------------------------------


class LengthMismatch(ThreatDagError):
    pass


# -- graph ----------------------------------------------------------------------


class GraphError(ThreatDagError):
    pass


class CycleIntroduced(GraphError):
    def __init__(self, cycle):
        self.cycle = list(cycle)
        super().__init__("merge introduces a cycle: " + " -> ".join(map(str, self.cycle)))


class DuplicateNodeConflict(GraphError):
    def __init__(self, key, first, second):
        self.key = key
        super().__init__(
            f"node {key} declared with conflicting features: {first.features} vs {second.features}"
        )


class UnknownNode(GraphError):
    pass


class WouldCreateCycle(GraphError):
    pass


class EdgeExists(GraphError):
    pass


class InvalidCFG(GraphError):
    pass


class PathBudgetExceeded(GraphError):
    pass


# -- corpus ---------------------------------------------------------------------


class CorpusError(ThreatDagError):
    """A corpus diagnostic; ``line``/``column`` are 1-based, 0 when unknown."""

    kind = "CorpusError"

    def __init__(self, message: str, line: int = 0, column: int = 0):
        self.message = message
        self.line = line
        self.column = column
        super().__init__(f"{line}:{column}: {self.kind}: {message}")


class CorpusSyntaxError(CorpusError):
    kind = "SyntaxError"


class DanglingEdge(CorpusError):
    kind = "DanglingEdge"

    def __init__(self, attack_id: str, node_id: str, line: int = 0, column: int = 0):
        self.attack_id = attack_id
        self.node_id = node_id
        super().__init__(f"attack {attack_id!r}: edge references undeclared node {node_id!r}", line, column)


class DuplicateNodeId(CorpusError):
    kind = "DuplicateNodeId"


class DuplicateAttackId(CorpusError):
    kind = "DuplicateAttackId"


class DuplicateTaxon(CorpusError):
    kind = "DuplicateTaxon"


class FeatureLengthMismatch(CorpusError):
    kind = "FeatureLengthMismatch"


class UnknownLayer(CorpusError):
    kind = "UnknownLayer"


class CyclicCFG(CorpusError):
    kind = "CyclicCFG"

    def __init__(self, attack_id: str, line: int = 0, column: int = 0):
        self.attack_id = attack_id
        super().__init__(f"attack {attack_id!r} contains a directed cycle", line, column)


class InvalidAttack(CorpusError):
    kind = "InvalidAttack"


# -- link prediction -------------------------------------------------------------


class LearningError(ThreatDagError):
    pass


class EmptyGraph(LearningError):
    pass


class EmptyDataset(LearningError):
    pass


class InvalidHyperparams(LearningError):
    pass


class SchemaMismatch(LearningError):
    pass


class TooFewSamples(LearningError):
    pass


class TooFewEdges(LearningError):
    pass


# -- simulator ------------------------------------------------------------------


class SimError(ThreatDagError):
    pass


class InvalidConfig(SimError):
    pass


class InvalidScenario(SimError):
    pass


class ScenarioMismatch(SimError):
    pass
