"""Acceptance criteria 1-6, one test each.

Run with ``pytest tests/test_acceptance.py`` (a PASS/FAIL line per criterion is
printed in the summary) or directly as ``python tests/test_acceptance.py``.
"""

import sys
import time
from contextlib import contextmanager

import pytest
from click.testing import CliRunner

import test_attack_graph as ag
import test_cli as tc
import test_corpus as co
import test_link_prediction as ml
import test_sdn_sim as sim
from threatdag.attack_graph import merge_cfgs
from threatdag.cli import cli
from threatdag.corpus import load_bundled
from threatdag.feature_model import default_schema
from threatdag.link_prediction import ModelKind, leave_one_edge_out


@contextmanager
def within(seconds):
    t0 = time.perf_counter()
    yield
    spent = time.perf_counter() - t0
    assert spent < seconds, f"took {spent:.2f}s, limit {seconds}s"


@pytest.mark.criterion(1, "corpus fidelity")
def test_criterion_1_corpus_fidelity():
    load_bundled.cache_clear()
    with within(1):
        co.check_bundled_counts()


@pytest.mark.criterion(2, "graph invariant suite")
def test_criterion_2_graph_invariants():
    with within(30):
        ag.check_merge_laws(200)
        ag.check_paths_against_oracle(100)
        ag.check_dot_parses(30)


@pytest.mark.criterion(3, "ml oracle equivalence")
def test_criterion_3_ml_oracles():
    with within(60):
        ml.check_tree_oracle(100)
        ml.check_knn_k1(50)
        ml.check_perceptron_margin(50)


@pytest.mark.criterion(4, "prediction validity")
def test_criterion_4_prediction_validity():
    with within(60):
        dag = merge_cfgs(load_bundled("sdn").attacks)
        ml.check_sdn_candidates_apply(dag)
        first = leave_one_edge_out(dag, default_schema(), ModelKind.DECISION_TREE, seed=42)
        again = leave_one_edge_out(dag, default_schema(), ModelKind.DECISION_TREE, seed=42)
        assert first.rate == ml.LOO_TREE_SEED42
        assert again == first


@pytest.mark.criterion(5, "simulator scenario suite")
def test_criterion_5_simulator_suite():
    sim._cache.clear()
    with within(120):
        sim.check_baseline()
        sim.check_all_scenarios()
        sim.check_ladders()
        sim.check_encryption_defeats_channel_attacks()


@pytest.mark.criterion(6, "determinism")
def test_criterion_6_determinism(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    runner = CliRunner()

    def invoke(*args):
        return runner.invoke(cli, list(args), catch_exceptions=False)

    chain = [
        ["dag", "build", "bundled:sdn", "--out", "json", "-o", "sdn.json"],
        ["ml", "predict", "sdn.json", "--model", "tree,knn,linear", "--seed", "42", "-o", "chain.json"],
    ]
    for args in tc.PIPELINES + chain:
        a, b, c = tc.pipeline_digests(invoke, args, runs=3)
        assert a == b == c, args


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
