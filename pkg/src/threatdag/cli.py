"""``threatdag`` command line.

Exit codes: 0 ok, 1 domain failure (invalid corpus, merge error, failed
postcondition, learning error), 2 usage or I/O problem.
"""

from __future__ import annotations

import functools
import hashlib
import json
import sys
import time
from collections import Counter
from pathlib import Path

import click

from . import __version__
from . import corpus as corpus_mod
from . import link_prediction as lp
from .attack_graph import AttackDAG, export_dot, export_json, load_json, merge_cfgs
from .errors import InvalidConfig, InvalidScenario, ThreatDagError
from .feature_model import schema_for
from .sdn_sim import (
    FORMAT_VERSION as SIM_FORMAT,
    Scenario,
    ScenarioKind,
    SimConfig,
    default_intensity,
    export_trace,
    load_run_document,
    run,
    scenario_postcondition,
)

MANIFEST_VERSION = "1"


class _Run:
    """Tracks files read and written by one invocation, for the run manifest."""

    def __init__(self, manifest: str | None):
        self.manifest = manifest
        self.inputs: dict[str, str] = {}
        self.outputs: dict[str, str] = {}
        self.seeds: dict[str, int] = {}
        self.started = time.perf_counter()
        self.leaf: click.Context | None = None

    def read(self, path: str) -> bytes:
        try:
            data = Path(path).read_bytes()
        except OSError as exc:
            raise _IOFailure(f"cannot read {path}: {exc.strerror or exc}") from None
        self.inputs[path] = hashlib.sha256(data).hexdigest()
        return data

    def write(self, path: str, text: str) -> None:
        data = text.encode("utf-8")
        try:
            Path(path).write_bytes(data)
        except OSError as exc:
            raise _IOFailure(f"cannot write {path}: {exc.strerror or exc}") from None
        self.outputs[path] = hashlib.sha256(data).hexdigest()

    def finish(self) -> None:
        if not self.manifest:
            return
        leaf = self.leaf
        doc = {
            "format_version": MANIFEST_VERSION,
            "tool": "threatdag",
            "version": __version__,
            "command": leaf.command_path if leaf else None,
            "params": {k: v for k, v in sorted((leaf.params if leaf else {}).items())},
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": dict(sorted(self.outputs.items())),
            "seeds": dict(sorted(self.seeds.items())),
            "wall_time_s": round(time.perf_counter() - self.started, 6),
        }
        Path(self.manifest).write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")


class _IOFailure(Exception):
    pass


def _state() -> _Run:
    ctx = click.get_current_context()
    st = ctx.find_object(_Run)
    st.leaf = ctx
    return st


def _fail(msg: str, code: int) -> None:
    click.echo(f"error: {msg}", err=True)
    sys.exit(code)


def _guard(fn):
    """Map library errors onto the exit-code convention."""

    @functools.wraps(fn)
    def wrapper(*a, **kw):
        try:
            return fn(*a, **kw)
        except _IOFailure as exc:
            _fail(str(exc), 2)
        except (InvalidConfig, InvalidScenario) as exc:
            _fail(str(exc), 2)
        except ThreatDagError as exc:
            _fail(f"{type(exc).__name__}: {exc}", 1)
        except KeyError as exc:
            _fail(str(exc.args[0]) if exc.args else "unknown key", 2)
        except ValueError as exc:  # includes malformed JSON and bad UTF-8
            _fail(str(exc), 2)

    return wrapper


@click.group()
@click.version_option(
    __version__, prog_name="threatdag",
    message=f"%(prog)s %(version)s (corpus format {corpus_mod.FORMAT_VERSION}, model format "
            f"{lp.MODEL_FORMAT_VERSION}, sim format {SIM_FORMAT}, feature schema v1)",
)
@click.option("--manifest", type=click.Path(dir_okay=False), help="Write a run manifest (JSON) here.")
@click.pass_context
def cli(ctx: click.Context, manifest: str | None) -> None:
    """Attack-DAG workbench."""
    st = _Run(manifest)
    ctx.obj = st
    ctx.call_on_close(st.finish)


# -- corpus ----------------------------------------------------------------------


@cli.group("corpus")
def corpus_group() -> None:
    """Validate and inspect corpus files."""


@corpus_group.command("validate")
@click.argument("path")
@_guard
def corpus_validate(path: str) -> None:
    """Check a corpus file; print one diagnostic per error."""
    st = _state()
    data = st.read(path)
    errors = corpus_mod.diagnose(data)
    for e in errors:
        click.echo(f"{path}:{e.line}:{e.column}: {e.kind}: {e.message}")
    if errors:
        sys.exit(1)
    c = corpus_mod.parse(data)
    click.echo(f"{path}: ok ({len(c.attacks)} attacks, {c.node_count} nodes, {len(c.taxonomy)} taxonomy rows)")


@corpus_group.command("show")
@click.argument("name", type=click.Choice(corpus_mod.BUNDLED))
@click.option("--format", "fmt", type=click.Choice(["text", "json"]), default="text", show_default=True)
def corpus_show(name: str, fmt: str) -> None:
    """Print a bundled corpus."""
    if fmt == "text":
        click.echo(corpus_mod.bundled_text(name), nl=False)
    else:
        click.echo(corpus_mod.to_json(corpus_mod.load_bundled(name)), nl=False)


@corpus_group.command("list")
def corpus_list() -> None:
    """List bundled corpora."""
    for name in corpus_mod.BUNDLED:
        c = corpus_mod.load_bundled(name)
        click.echo(f"{name}\t{len(c.attacks)} attacks\t{c.node_count} nodes\t{len(c.taxonomy)} taxonomy rows")


# -- dag loading helpers ---------------------------------------------------------


def _load_corpus(st: _Run, spec: str) -> corpus_mod.CorpusFile:
    if spec.startswith("bundled:"):
        name = spec.split(":", 1)[1]
        text = corpus_mod.bundled_text(name)
        st.inputs[spec] = hashlib.sha256(text.encode()).hexdigest()
        return corpus_mod.load_bundled(name)
    data = st.read(spec)
    if spec.endswith(".json"):
        return corpus_mod.from_json(data.decode("utf-8"))
    return corpus_mod.parse(data)


def _load_dag(st: _Run, inputs: tuple[str, ...]) -> tuple[AttackDAG, str]:
    """Merge corpus inputs, or load a single pre-built DAG JSON; returns (dag, schema version)."""
    if not inputs:
        raise _IOFailure("no inputs given")
    if len(inputs) == 1 and inputs[0].endswith(".json"):
        data = st.read(inputs[0])
        doc = json.loads(data)
        if "edges" in doc and "nodes" in doc:
            dag = load_json(data.decode("utf-8"))
            return dag, doc.get("schema_version", "v1")
    corpora = [_load_corpus(st, s) for s in inputs]
    versions = {c.schema_version for c in corpora}
    if len(versions) != 1:
        raise lp.SchemaMismatch(f"inputs use different feature schemas: {sorted(versions)}")
    return merge_cfgs(corpus_mod.all_attacks(corpora)), versions.pop()


def _summary(dag: AttackDAG) -> list[str]:
    lines = [f"nodes: {len(dag.nodes)}", f"edges: {len(dag.edges)}", f"attacks: {len(dag.origin)}"]
    layers = Counter(k.layer.value for k in dag.nodes)
    lines += [f"layer {name}: {n}" for name, n in sorted(layers.items())]
    members = dag.node_attacks()
    shared = sum(1 for v in members.values() if len(v) > 1)
    lines.append(f"shared nodes: {shared}")
    return lines


# -- dag -----------------------------------------------------------------------------


@cli.group("dag")
def dag_group() -> None:
    """Merge attack CFGs into one DAG."""


@dag_group.command("build")
@click.argument("inputs", nargs=-1, required=True)
@click.option("--out", "fmt", type=click.Choice(["dot", "json"]), default="json", show_default=True)
@click.option("-o", "--output", required=True, type=click.Path(dir_okay=False), help="Output file.")
@_guard
def dag_build(inputs: tuple[str, ...], fmt: str, output: str) -> None:
    """Merge INPUTS (corpus paths or bundled:NAME) and write the DAG."""
    st = _state()
    dag, _ = _load_dag(st, inputs)
    st.write(output, export_dot(dag) if fmt == "dot" else export_json(dag))
    for line in _summary(dag):
        click.echo(line)


# -- ml -------------------------------------------------------------------------------


def _ml_options(fn):
    opts = [
        click.argument("inputs", nargs=-1, required=True),
        click.option("--model", "models", default="decision_tree", show_default=True,
                     help="Comma-separated: tree, knn, linear."),
        click.option("--k", default=3, show_default=True, type=int),
        click.option("--max-depth", default=6, show_default=True, type=int),
        click.option("--min-leaf", default=1, show_default=True, type=int),
        click.option("--epochs", default=100, show_default=True, type=int),
        click.option("--neg-ratio", default="1", show_default=True),
        click.option("--seed", default=0, show_default=True, type=int),
        click.option("-o", "--output", type=click.Path(dir_okay=False), help="Write the JSON report here."),
    ]
    for o in reversed(opts):
        fn = o(fn)
    return fn


def _kinds(spec: str) -> list[lp.ModelKind]:
    try:
        return [lp.ModelKind.parse(s) for s in spec.split(",") if s.strip()]
    except ValueError:
        raise lp.InvalidHyperparams(f"unknown model in {spec!r}; use tree, knn, linear") from None


def _ratio(text: str):
    from fractions import Fraction

    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise lp.InvalidHyperparams(f"bad --neg-ratio {text!r}") from None


def _emit(st: _Run, output: str | None, doc: dict) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if output:
        st.write(output, text)
    else:
        click.echo(text, nl=False)


def _prepare(inputs, k, max_depth, min_leaf, epochs, neg_ratio, seed):
    st = _state()
    st.seeds["seed"] = seed
    dag, version = _load_dag(st, inputs)
    schema = schema_for(version)
    hp = lp.Hyperparams(max_depth=max_depth, min_leaf=min_leaf, k=k, epochs=epochs, seed=seed)
    ds = lp.build_dataset(dag, schema, _ratio(neg_ratio), seed)
    return st, dag, schema, hp, ds


def _common(hp: lp.Hyperparams, ds: lp.Dataset) -> dict:
    return {
        "seed": hp.seed,
        "hyperparams": {"k": hp.k, "max_depth": hp.max_depth, "min_leaf": hp.min_leaf, "epochs": hp.epochs},
        "dataset": {"samples": len(ds.samples), "positives": ds.positives, "negatives": ds.negatives,
                    "neg_ratio": str(ds.neg_ratio), "warning": ds.warning},
    }


@cli.group("ml")
def ml_group() -> None:
    """Train, evaluate, and apply link predictors."""


@ml_group.command("train")
@_ml_options
@_guard
def ml_train(inputs, models, k, max_depth, min_leaf, epochs, neg_ratio, seed, output):
    """Train models on the DAG built from INPUTS."""
    st, _, _, hp, ds = _prepare(inputs, k, max_depth, min_leaf, epochs, neg_ratio, seed)
    trained = [lp.train(ds, kind, hp) for kind in _kinds(models)]
    doc = json.loads(lp.models_to_json(trained))
    doc.update(_common(hp, ds))
    _emit(st, output, doc)


@ml_group.command("predict")
@_ml_options
@click.option("--threshold", default="1/2", show_default=True)
@click.option("--models-file", type=click.Path(dir_okay=False), help="Use models saved by `ml train`.")
@_guard
def ml_predict(inputs, models, k, max_depth, min_leaf, epochs, neg_ratio, seed, output, threshold, models_file):
    """Rank candidate new edges for the DAG built from INPUTS."""
    st, dag, schema, hp, ds = _prepare(inputs, k, max_depth, min_leaf, epochs, neg_ratio, seed)
    if models_file:
        trained = lp.models_from_json(st.read(models_file).decode("utf-8"))
    else:
        trained = [lp.train(ds, kind, hp) for kind in _kinds(models)]
    report = lp.predict_edges(trained, dag, schema, _ratio(threshold))
    doc = report.to_dict()
    doc.update(_common(hp, ds))
    _emit(st, output, doc)
    if output:
        click.echo(f"{len(report.candidates)} candidates at threshold {report.threshold}")


@ml_group.command("crossval")
@_ml_options
@click.option("--folds", default=5, show_default=True, type=int)
@_guard
def ml_crossval(inputs, models, k, max_depth, min_leaf, epochs, neg_ratio, seed, output, folds):
    """Stratified k-fold metrics per model."""
    st, _, _, hp, ds = _prepare(inputs, k, max_depth, min_leaf, epochs, neg_ratio, seed)
    doc = _common(hp, ds)
    doc["metrics"] = [lp.cross_validate(ds, kind, hp, folds, seed).to_dict() for kind in _kinds(models)]
    _emit(st, output, doc)


@ml_group.command("loo")
@_ml_options
@_guard
def ml_loo(inputs, models, k, max_depth, min_leaf, epochs, neg_ratio, seed, output):
    """Leave-one-edge-out recovery rate per model."""
    st, dag, schema, hp, ds = _prepare(inputs, k, max_depth, min_leaf, epochs, neg_ratio, seed)
    doc = _common(hp, ds)
    results = [lp.leave_one_edge_out(dag, schema, kind, hp, seed, _ratio(neg_ratio)) for kind in _kinds(models)]
    doc["results"] = [r.to_dict() for r in results]
    _emit(st, output, doc)
    if output:
        for r in results:
            click.echo(f"{r.kind.value}: recovered {len(r.recovered)}/{r.total} ({float(r.rate):.4f})")


# -- sim --------------------------------------------------------------------------------


@cli.group("sim")
def sim_group() -> None:
    """Run the SDN attack simulator."""


@sim_group.command("list")
def sim_list() -> None:
    """List scenario kinds with their default intensity."""
    cfg = SimConfig()
    for kind in ScenarioKind:
        click.echo(f"{kind.value}\tintensity={default_intensity(kind, cfg)}")


@sim_group.command("run")
@click.option("--config", "config_path", type=click.Path(dir_okay=False), help="JSON config document.")
@click.option("--scenario", "specs", multiple=True, help="kind[:intensity[:start_tick]]; repeatable.")
@click.option("--ticks", type=int, help="Override config ticks.")
@click.option("--seed", type=int, help="Override config seed.")
@click.option("--encrypted/--plaintext", default=None, help="Override channel encryption.")
@click.option("--report", "report_path", type=click.Path(dir_okay=False), help="Write the JSON report here.")
@click.option("--trace", "trace_path", type=click.Path(dir_okay=False), help="Write the event trace here.")
@click.option("--check", is_flag=True, help="Exit 1 unless every postcondition passes.")
@click.option("--hardened", is_flag=True, help="Check the encryption-defeats-attack variant.")
@_guard
def sim_run(config_path, specs, ticks, seed, encrypted, report_path, trace_path, check, hardened):
    """Simulate a run; with --check, exit 0 only if the scenarios succeed."""
    st = _state()
    if config_path:
        cfg, scenarios = load_run_document(st.read(config_path).decode("utf-8"))
    else:
        cfg, scenarios = SimConfig(), []
    overrides = {k: v for k, v in (("ticks", ticks), ("seed", seed), ("channel_encrypted", encrypted))
                 if v is not None}
    if overrides:
        cfg = SimConfig.from_dict({**cfg.to_dict(), **overrides})
    scenarios = scenarios + [Scenario.parse(s, cfg) for s in specs]
    st.seeds["sim_seed"] = cfg.seed
    report = run(cfg, scenarios)
    if report_path:
        st.write(report_path, report.to_json())
    if trace_path:
        st.write(trace_path, export_trace(report))
    click.echo(f"delivery_rate: {report.delivery_rate} ({float(report.delivery_rate):.4f})")
    click.echo(f"injected: {report.injected} delivered: {report.delivered} "
               f"dropped: {report.dropped_total} in_flight: {report.in_flight}")
    click.echo(f"packetin_total: {report.packetin_total} disconnections: {len(report.disconnections)} "
               f"crash_tick: {report.controller_crash_tick}")
    ok = True
    if not report.scenarios:
        ok = report.delivery_rate == 1
        click.echo(f"baseline: {'pass' if ok else 'fail'}")
    for s in report.scenarios:
        v = scenario_postcondition(s.kind, report, cfg, hardened=hardened)
        ok = ok and v.passed
        click.echo(f"{s.kind.value}: {'pass' if v.passed else 'fail (' + v.reason + ')'}")
    if check and not ok:
        sys.exit(1)


def main(argv=None) -> None:
    cli.main(args=argv, prog_name="threatdag")


if __name__ == "__main__":  # pragma: no cover
    main()
