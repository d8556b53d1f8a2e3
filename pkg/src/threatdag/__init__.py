"""Attack-DAG workbench for 5G/SDN threat modeling.

Attacks are encoded as control-flow graphs in a line-oriented corpus format,
merged into a single attack DAG, and mined for new branches with classical
classifiers. The SDN part of the catalog can be replayed against a
deterministic discrete-event control-plane simulator.
"""

__version__ = "0.1.0"
