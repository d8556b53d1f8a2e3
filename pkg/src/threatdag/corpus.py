"""Line-oriented attack-corpus format: parser, diagnostics, serializer, bundled catalogs.

Grammar (ABNF; ``SP`` is one or more spaces/tabs, ``#`` starts a comment
outside strings, blank lines are ignored)::

    corpus      = header *( attack-block / taxon-line )
    header      = "corpus" SP format-version SP "schema" SP schema-version
    attack-block= attack-line [cite-line] *( node-line / edge-line )
    attack-line = "attack" SP ident SP qstring SP "category" SP ident
    cite-line   = "cite" SP qstring
    node-line   = "node" SP ident SP "layer" SP layer SP "bits" SP 1*("0"/"1")
                  SP qstring [SP qstring]          ; label [description]
    edge-line   = "edge" SP ident SP "->" SP ident
    taxon-line  = "taxon" SP system SP category SP qstring SP qstring
    ident       = 1*( ALPHA / DIGIT / "_" / "-" / "." )
    qstring     = DQUOTE *( %x20-21 / %x23-5B / %x5D-10FFFF / "\\" DQUOTE / "\\\\" ) DQUOTE
    layer       = "application" / "network" / "system" / "authentication"
                  / "edge_device" / "control_plane" / "data_plane"
    system      = "EPC" / "IMS"
    category    = "Availability" / "Confidentiality" / "Integrity" / "Control"
                  / "MaliciousInsider" / "TheftOfService"

Node and edge lines belong to the most recent attack line. Edges may refer to
nodes declared later in the same attack.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from importlib import resources
from typing import Iterable

from .attack_graph import AttackCFG, Layer, StepNode, _find_cycle, normalize_label
from .errors import (
    CorpusError,
    CorpusSyntaxError,
    CyclicCFG,
    DanglingEdge,
    DuplicateAttackId,
    DuplicateNodeId,
    DuplicateTaxon,
    FeatureLengthMismatch,
    InvalidAttack,
    UnknownLayer,
)
from .feature_model import BitVector, schema_for

FORMAT_VERSION = "1"
BUNDLED = ("sdn", "whatsapp", "epc_taxonomy", "ims_taxonomy")


class System(str, Enum):
    EPC = "EPC"
    IMS = "IMS"


class ThreatCategory(str, Enum):
    AVAILABILITY = "Availability"
    CONFIDENTIALITY = "Confidentiality"
    INTEGRITY = "Integrity"
    CONTROL = "Control"
    MALICIOUS_INSIDER = "MaliciousInsider"
    THEFT_OF_SERVICE = "TheftOfService"


@dataclass(frozen=True)
class TaxonomyRow:
    system: System
    category: ThreatCategory
    threat: str
    description: str


@dataclass(frozen=True)
class CorpusFile:
    format_version: str
    schema_version: str
    attacks: tuple[AttackCFG, ...] = ()
    taxonomy: tuple[TaxonomyRow, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "attacks", tuple(sorted(self.attacks, key=lambda a: a.attack_id)))
        object.__setattr__(self, "taxonomy", tuple(self.taxonomy))

    def attack(self, attack_id: str) -> AttackCFG:
        for a in self.attacks:
            if a.attack_id == attack_id:
                return a
        raise KeyError(attack_id)

    @property
    def node_count(self) -> int:
        """Distinct merge identities (NodeKeys) across all attacks."""
        return len({n.key for a in self.attacks for n in a.nodes})


# -- tokenizer ------------------------------------------------------------------

_IDENT = re.compile(r"[A-Za-z0-9_.\-]+\Z")


@dataclass
class _Tok:
    text: str
    col: int
    quoted: bool = False


def _tokenize(line: str, lineno: int) -> list[_Tok]:
    toks: list[_Tok] = []
    i, n = 0, len(line)
    while i < n:
        c = line[i]
        if c in " \t":
            i += 1
        elif c == "#":
            break
        elif c == '"':
            start = i
            i += 1
            buf = []
            while True:
                if i >= n:
                    raise CorpusSyntaxError("unterminated string", lineno, start + 1)
                c = line[i]
                if c == "\\":
                    if i + 1 < n and line[i + 1] in '"\\':
                        buf.append(line[i + 1])
                        i += 2
                        continue
                    raise CorpusSyntaxError("invalid escape sequence", lineno, i + 1)
                if c == '"':
                    i += 1
                    break
                buf.append(c)
                i += 1
            if i < n and line[i] not in " \t#":
                raise CorpusSyntaxError("expected whitespace after string", lineno, i + 1)
            toks.append(_Tok("".join(buf), start + 1, True))
        else:
            start = i
            while i < n and line[i] not in ' \t"#':
                i += 1
            toks.append(_Tok(line[start:i], start + 1))
    return toks


# -- parser ---------------------------------------------------------------------


@dataclass
class _OpenAttack:
    attack_id: str
    name: str
    category: str
    line: int
    column: int
    citation: str = ""
    cite_seen: bool = False
    nodes: dict[str, StepNode] = field(default_factory=dict)
    edges: list[tuple[str, str, int, int, int]] = field(default_factory=list)
    broken: bool = False


class _Parser:
    def __init__(self):
        self.errors: list[CorpusError] = []
        self.format_version: str | None = None
        self.schema = None
        self.attacks: list[AttackCFG] = []
        self.attack_ids: set[str] = set()
        self.taxonomy: list[TaxonomyRow] = []
        self.taxa: set[tuple[System, str]] = set()
        self.current: _OpenAttack | None = None

    # helpers
    def _expect(self, toks, lineno, shape: str):
        """Check token count and literal keywords; ``shape`` uses ``_`` for free slots."""
        words = shape.split()
        if len(toks) != len(words):
            col = toks[-1].col if toks else 1
            raise CorpusSyntaxError(f"expected {len(words)} fields ({shape}), got {len(toks)}", lineno, col)
        for tok, w in zip(toks, words):
            if w == "_" or w == "S":
                if w == "S" and not tok.quoted:
                    raise CorpusSyntaxError("expected a quoted string", lineno, tok.col)
                if w == "_" and tok.quoted:
                    raise CorpusSyntaxError("unexpected quoted string", lineno, tok.col)
            elif tok.quoted or tok.text != w:
                raise CorpusSyntaxError(f"expected {w!r}, got {tok.text!r}", lineno, tok.col)

    @staticmethod
    def _ident(tok: _Tok, lineno: int) -> str:
        if tok.quoted or not _IDENT.match(tok.text):
            raise CorpusSyntaxError(f"invalid identifier {tok.text!r}", lineno, tok.col)
        return tok.text

    def run(self, text: str) -> None:
        lines = text.split("\n")
        header_seen = False
        for idx, raw in enumerate(lines):
            lineno = idx + 1
            line = raw[:-1] if raw.endswith("\r") else raw
            try:
                toks = _tokenize(line, lineno)
                if not toks:
                    continue
                if not header_seen:
                    self._header(toks, lineno)
                    header_seen = True
                    continue
                self._statement(toks, lineno)
            except CorpusError as e:
                self.errors.append(e)
                if not header_seen:
                    return
                if self.current is not None:
                    self.current.broken = True
        if not header_seen:
            self.errors.append(CorpusSyntaxError("missing 'corpus <version> schema <version>' header", 1, 1))
            return
        self._close_attack()

    def _header(self, toks, lineno):
        self._expect(toks, lineno, "corpus _ schema _")
        if toks[1].text != FORMAT_VERSION:
            raise CorpusSyntaxError(f"unsupported format version {toks[1].text!r}", lineno, toks[1].col)
        try:
            self.schema = schema_for(toks[3].text)
        except KeyError:
            raise CorpusSyntaxError(f"unknown feature schema {toks[3].text!r}", lineno, toks[3].col) from None
        self.format_version = toks[1].text

    def _statement(self, toks, lineno):
        head = toks[0]
        kw = None if head.quoted else head.text
        if kw == "attack":
            self._close_attack()
            # lines of a rejected attack are absorbed instead of cascading errors
            self.current = _OpenAttack("", "", "", lineno, 1, broken=True)
            self._expect(toks, lineno, "attack _ S category _")
            aid = self._ident(toks[1], lineno)
            cat = self._ident(toks[4], lineno)
            if not toks[2].text.strip() or "\r" in toks[2].text:
                raise CorpusSyntaxError("attack name must be non-empty", lineno, toks[2].col)
            if aid in self.attack_ids:
                raise DuplicateAttackId(f"attack id {aid!r} declared twice", lineno, toks[1].col)
            self.attack_ids.add(aid)
            self.current = _OpenAttack(aid, toks[2].text, cat, lineno, toks[1].col)
        elif kw in ("node", "edge", "cite"):
            if self.current is None:
                raise CorpusSyntaxError(f"'{kw}' line outside of an attack", lineno, head.col)
            getattr(self, "_" + kw)(toks, lineno)
        elif kw == "taxon":
            self._close_attack()
            self._taxon(toks, lineno)
        else:
            raise CorpusSyntaxError(f"unknown statement {head.text!r}", lineno, head.col)

    def _cite(self, toks, lineno):
        self._expect(toks, lineno, "cite S")
        cur = self.current
        if cur.cite_seen:
            raise CorpusSyntaxError("attack already has a citation", lineno, toks[0].col)
        if "\r" in toks[1].text:
            raise CorpusSyntaxError("carriage return in citation", lineno, toks[1].col)
        cur.cite_seen = True
        cur.citation = toks[1].text

    def _node(self, toks, lineno):
        if len(toks) <= 7:
            self._expect(toks, lineno, "node _ layer _ bits _ S")
            desc = ""
        else:
            self._expect(toks, lineno, "node _ layer _ bits _ S S")
            desc = toks[7].text
        nid = self._ident(toks[1], lineno)
        try:
            layer = Layer(toks[3].text)
        except ValueError:
            raise UnknownLayer(f"unknown layer {toks[3].text!r}", lineno, toks[3].col) from None
        bits_text = toks[5].text
        if not bits_text or any(c not in "01" for c in bits_text):
            raise CorpusSyntaxError(f"bits must be a 0/1 string, got {bits_text!r}", lineno, toks[5].col)
        if len(bits_text) != len(self.schema):
            raise FeatureLengthMismatch(
                f"node {nid!r} has {len(bits_text)} feature bits, schema {self.schema.version} needs "
                f"{len(self.schema)}",
                lineno,
                toks[5].col,
            )
        try:
            label = normalize_label(toks[6].text)
        except ValueError as e:
            raise CorpusSyntaxError(f"bad label: {e}", lineno, toks[6].col) from None
        if "\r" in desc:
            raise CorpusSyntaxError("carriage return in description", lineno, toks[7].col)
        cur = self.current
        if nid in cur.nodes:
            raise DuplicateNodeId(f"node id {nid!r} declared twice in attack {cur.attack_id!r}",
                                  lineno, toks[1].col)
        cur.nodes[nid] = StepNode(nid, label, layer, BitVector.from_string(bits_text), desc)

    def _edge(self, toks, lineno):
        self._expect(toks, lineno, "edge _ -> _")
        src = self._ident(toks[1], lineno)
        dst = self._ident(toks[3], lineno)
        self.current.edges.append((src, dst, lineno, toks[1].col, toks[3].col))

    def _taxon(self, toks, lineno):
        self._expect(toks, lineno, "taxon _ _ S S")
        try:
            system = System(toks[1].text)
        except ValueError:
            raise CorpusSyntaxError(f"unknown system {toks[1].text!r}", lineno, toks[1].col) from None
        try:
            category = ThreatCategory(toks[2].text)
        except ValueError:
            raise CorpusSyntaxError(f"unknown category {toks[2].text!r}", lineno, toks[2].col) from None
        threat, desc = toks[3].text, toks[4].text
        if not threat.strip() or "\r" in threat or "\r" in desc:
            raise CorpusSyntaxError("threat must be non-empty single-line text", lineno, toks[3].col)
        if (system, threat) in self.taxa:
            raise DuplicateTaxon(f"{system.value} threat {threat!r} listed twice", lineno, toks[3].col)
        self.taxa.add((system, threat))
        self.taxonomy.append(TaxonomyRow(system, category, threat, desc))

    def _close_attack(self):
        cur, self.current = self.current, None
        if cur is None or cur.broken:
            return
        ok = True
        for src, dst, lineno, c1, c2 in cur.edges:
            for end, col in ((src, c1), (dst, c2)):
                if end not in cur.nodes:
                    self.errors.append(DanglingEdge(cur.attack_id, end, lineno, col))
                    ok = False
        if not ok:
            return
        if not cur.nodes:
            self.errors.append(InvalidAttack(f"attack {cur.attack_id!r} has no nodes", cur.line, cur.column))
            return
        succ: dict[str, list[str]] = {n: [] for n in sorted(cur.nodes)}
        for src, dst, *_ in cur.edges:
            succ[src].append(dst)
        if _find_cycle(list(succ), succ) is not None:
            self.errors.append(CyclicCFG(cur.attack_id, cur.line, cur.column))
            return
        self.attacks.append(
            AttackCFG(cur.attack_id, cur.name, cur.category, tuple(cur.nodes.values()),
                      tuple((s, d) for s, d, *_ in cur.edges), cur.citation)
        )


def _decode(data: str | bytes) -> str:
    if isinstance(data, str):
        text = data
    else:
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError as e:
            before = data[: e.start]
            line = before.count(b"\n") + 1
            col = len(before) - (before.rfind(b"\n") + 1) + 1
            raise CorpusSyntaxError("invalid UTF-8", line, col) from None
    return text[1:] if text.startswith("\ufeff") else text


def diagnose(data: str | bytes) -> list[CorpusError]:
    """Every diagnostic found in ``data`` (empty list means the corpus is valid)."""
    try:
        text = _decode(data)
    except CorpusError as e:
        return [e]
    p = _Parser()
    p.run(text)
    return sorted(p.errors, key=lambda e: (e.line, e.column))


def parse(data: str | bytes) -> CorpusFile:
    """Parse and validate a corpus; raises the first diagnostic on failure."""
    text = _decode(data)
    p = _Parser()
    p.run(text)
    if p.errors:
        raise sorted(p.errors, key=lambda e: (e.line, e.column))[0]
    return CorpusFile(p.format_version, p.schema.version, tuple(p.attacks), tuple(p.taxonomy))


# -- serializer -----------------------------------------------------------------


def _q(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'


def serialize(corpus: CorpusFile) -> str:
    out = [f"corpus {corpus.format_version} schema {corpus.schema_version}"]
    for a in sorted(corpus.attacks, key=lambda a: a.attack_id):
        out.append("")
        out.append(f"attack {a.attack_id} {_q(a.name)} category {a.category}")
        if a.citation:
            out.append(f"  cite {_q(a.citation)}")
        for n in a.nodes:
            line = f"  node {n.id} layer {n.layer.value} bits {n.features} {_q(n.label)}"
            if n.description:
                line += " " + _q(n.description)
            out.append(line)
        for s, d in a.edges:
            out.append(f"  edge {s} -> {d}")
    if corpus.taxonomy:
        out.append("")
    for t in corpus.taxonomy:
        out.append(f"taxon {t.system.value} {t.category.value} {_q(t.threat)} {_q(t.description)}")
    return "\n".join(out) + "\n"


# -- JSON interchange -----------------------------------------------------------


def corpus_to_dict(corpus: CorpusFile) -> dict:
    return {
        "format_version": corpus.format_version,
        "schema_version": corpus.schema_version,
        "attacks": [
            {
                "id": a.attack_id,
                "name": a.name,
                "category": a.category,
                "citation": a.citation,
                "nodes": [
                    {"id": n.id, "layer": n.layer.value, "bits": str(n.features), "label": n.label,
                     "description": n.description}
                    for n in a.nodes
                ],
                "edges": [[s, d] for s, d in a.edges],
            }
            for a in corpus.attacks
        ],
        "taxonomy": [
            {"system": t.system.value, "category": t.category.value, "threat": t.threat,
             "description": t.description}
            for t in corpus.taxonomy
        ],
    }


def corpus_from_dict(data: dict) -> CorpusFile:
    """Rebuild a corpus from its JSON form by re-parsing its canonical text, so both
    routes share one validator."""
    attacks = []
    for a in data.get("attacks", []):
        nodes = tuple(
            StepNode(n["id"], n["label"], Layer(n["layer"]), BitVector.from_string(n["bits"]),
                     n.get("description", ""))
            for n in a["nodes"]
        )
        attacks.append(AttackCFG(a["id"], a["name"], a["category"], nodes,
                                 tuple(tuple(e) for e in a["edges"]), a.get("citation", "")))
    taxonomy = tuple(
        TaxonomyRow(System(t["system"]), ThreatCategory(t["category"]), t["threat"], t["description"])
        for t in data.get("taxonomy", [])
    )
    draft = CorpusFile(data["format_version"], data["schema_version"], tuple(attacks), taxonomy)
    return parse(serialize(draft))


def to_json(corpus: CorpusFile) -> str:
    return json.dumps(corpus_to_dict(corpus), indent=2, sort_keys=True) + "\n"


def from_json(text: str) -> CorpusFile:
    return corpus_from_dict(json.loads(text))


# -- bundled data -----------------------------------------------------------------


def bundled_text(name: str) -> str:
    if name not in BUNDLED:
        raise KeyError(f"unknown bundled corpus {name!r}; choose from {', '.join(BUNDLED)}")
    return resources.files("threatdag").joinpath("data").joinpath(f"{name}.corpus").read_text("utf-8")


@lru_cache(maxsize=None)
def load_bundled(name: str) -> CorpusFile:
    return parse(bundled_text(name))


def all_attacks(corpora: Iterable[CorpusFile]) -> list[AttackCFG]:
    return [a for c in corpora for a in c.attacks]
