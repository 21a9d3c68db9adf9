"""Synthetic financial KGs and causal instruction datasets.

Each planned instruction gets its own planted structure: a directed chain from
a risk source to a target, plus off-chain entities wired so that they never
open a new source-target route, and occasionally a bypass node that makes part
of the chain redundant.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import random
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

from .errors import DuplicateLabel, InfeasibleConfig, MalformedRecord, TemplateMissing
from .graph import Edge, FactualGraph, KnowledgeGraph, Node, NodeId, dfs_extract
from .intervention import (
    CausalPartition,
    InterventionSet,
    build_intervention_set,
    causal_chain,
    classify_nodes,
)

SEP = "<SEP>"

FINDKG_TOPICS = {"Stock": 0.35, "Bond": 0.25, "Money": 0.20, "Real estate": 0.10, "Commodity": 0.10}
SUPPLYCHAIN_TOPICS = {"Raw materials": 0.20, "Manufacturing": 0.30, "Wholesale": 0.20, "Retail": 0.30}

ENTITY_TYPES = {
    "findkg_like": [
        "company", "bank", "fund", "regulator", "central bank", "country", "stock index",
        "currency", "commodity trader", "bond issuer", "insurer", "broker", "property developer",
        "government agency", "rating agency",
    ],
    "supplychain_like": [
        "raw material supplier", "manufacturer", "wholesaler", "retailer", "logistics provider",
        "warehouse operator", "port operator", "distributor", "assembler", "packaging supplier",
    ],
}

_RELATION_VERBS = [
    "supplies", "ships to", "lends to", "invests in", "owns", "insures", "guarantees",
    "trades with", "partners with", "borrows from", "sells to", "buys from", "underwrites",
    "regulates", "rates", "competes with", "licenses to", "leases to", "outsources to",
    "distributes for", "manufactures for", "stores goods for", "finances", "hedges with",
    "clears for", "custodies for", "audits", "advises", "subcontracts to", "refines for",
    "assembles for", "packages for", "transports for", "imports from", "exports to",
    "co-invests with", "acquires stake in", "sources from", "settles with", "retails for",
]

_STEMS = [
    "Aster", "Birch", "Cobalt", "Delta", "Ember", "Falcon", "Granite", "Harbor", "Iris", "Juniper",
    "Keystone", "Lumen", "Maple", "Nimbus", "Onyx", "Pioneer", "Quartz", "Raven", "Summit", "Tidal",
    "Umber", "Vertex", "Willow", "Xenon", "Yarrow", "Zephyr", "Atlas", "Beacon", "Cedar", "Dune",
    "Everest", "Fjord", "Glacier", "Horizon", "Indigo", "Jade", "Kestrel", "Lotus", "Meridian", "Nova",
]

_SUFFIXES = {
    "Stock": ["Holdings", "Securities", "Group", "Capital"],
    "Bond": ["Finance", "Credit", "Bancorp", "Trust"],
    "Money": ["Bank", "Payments", "Treasury", "Funding"],
    "Real estate": ["Properties", "Realty", "Estates", "Developments"],
    "Commodity": ["Metals", "Energy", "Grain", "Resources"],
    "Raw materials": ["Mining", "Silk", "Timber", "Chemicals"],
    "Manufacturing": ["Fabrics", "Works", "Industries", "Motors"],
    "Wholesale": ["Traders", "Supply", "Distribution", "Wholesale"],
    "Retail": ["Stores", "Outlets", "Boutique", "Mart"],
}

# (incident at the source, symptom at the target, noun for the shock)
_TEMPLATES = {
    "Stock": ("suffered a sharp share price collapse", "reported heavy trading losses", "equity sell-off"),
    "Bond": ("missed a coupon payment on its bonds", "faced a credit rating downgrade", "credit event"),
    "Money": ("ran into a severe liquidity squeeze", "could not roll over its short-term funding", "funding shock"),
    "Real estate": ("halted several property projects", "saw its mortgage book deteriorate", "property slump"),
    "Commodity": ("lost a major cargo in a storm", "was unable to meet its delivery contracts", "supply shock"),
    "Raw materials": ("had its inventory damaged by a flood", "was unable to provide products", "flood damage"),
    "Manufacturing": ("shut down a factory after a fire", "could not fill its orders", "production halt"),
    "Wholesale": ("lost its main warehouse in a blackout", "ran out of stock", "distribution failure"),
    "Retail": ("faced a sudden collapse in demand", "closed several outlets", "demand collapse"),
}

_MONTHS = ["Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"]

TOKEN_RE = re.compile(r"\w+|[^\w\s]")


class Token(NamedTuple):
    text: str
    start: int
    end: int


def tokenize(text: str) -> list[Token]:
    """Whitespace-plus-punctuation tokenizer that keeps character offsets."""
    return [Token(m.group(), m.start(), m.end()) for m in TOKEN_RE.finditer(text)]


class AlignmentEntry(NamedTuple):
    start: int  # token index, inclusive
    end: int  # token index, exclusive
    node: NodeId


def span_text(text: str, tokens: list[Token], start: int, end: int) -> str:
    return text[tokens[start].start : tokens[end - 1].end]


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class DatasetConfig:
    profile: str = "custom"
    n_instructions: int = 100
    factual_fraction: float = 0.15
    topics: dict = field(default_factory=lambda: dict(FINDKG_TOPICS))
    entity_type_count: int = 15
    relation_type_count: int = 15
    graph_size_range: tuple = (4, 8)
    seed: int = 0
    max_depth: int = 6
    attach_hops: int = 1
    bypass_prob: float = 0.2

    @classmethod
    def for_profile(cls, profile: str, **overrides) -> "DatasetConfig":
        if profile == "findkg_like":
            base = dict(factual_fraction=0.15, topics=dict(FINDKG_TOPICS), entity_type_count=15, relation_type_count=15)
        elif profile == "supplychain_like":
            base = dict(factual_fraction=0.17, topics=dict(SUPPLYCHAIN_TOPICS), entity_type_count=10, relation_type_count=40)
        elif profile == "custom":
            base = {}
        else:
            raise InfeasibleConfig(f"unknown profile {profile!r}")
        base.update(overrides)
        cfg = cls(profile=profile, **base)
        cfg.validate()
        return cfg

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InfeasibleConfig(f"unknown dataset config keys: {sorted(unknown)}")
        d = dict(d)
        if "graph_size_range" in d:
            d["graph_size_range"] = tuple(d["graph_size_range"])
        cfg = cls(**d)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        lo, hi = self.graph_size_range
        if lo < 3 or hi < lo:
            raise InfeasibleConfig(f"graph_size_range {self.graph_size_range} must satisfy 3 <= min <= max")
        if self.n_instructions < 1:
            raise InfeasibleConfig("n_instructions must be positive")
        if not 0.0 <= self.factual_fraction <= 1.0:
            raise InfeasibleConfig("factual_fraction must lie in [0, 1]")
        if not self.topics or abs(sum(self.topics.values()) - 1.0) > 1e-9:
            raise InfeasibleConfig("topic fractions must sum to 1")
        for t in self.topics:
            if t not in _TEMPLATES:
                raise TemplateMissing(f"no templates for topic {t!r}")
        if self.entity_type_count < 1 or self.relation_type_count < 1:
            raise InfeasibleConfig("type counts must be positive")
        if self.max_depth < 2:
            raise InfeasibleConfig("max_depth must allow a three-node chain")

    def entity_types(self) -> list[str]:
        pool = ENTITY_TYPES.get(self.profile, ENTITY_TYPES["findkg_like"])
        return [pool[i] if i < len(pool) else f"entity type {i + 1}" for i in range(self.entity_type_count)]

    def relation_types(self) -> list[str]:
        return [
            _RELATION_VERBS[i] if i < len(_RELATION_VERBS) else f"relation {i + 1}"
            for i in range(self.relation_type_count)
        ]


def apportion(n: int, fractions: dict) -> dict:
    """Largest-remainder rounding of ``n * fraction``; every count is within 1 of its quota."""
    quotas = {k: n * f for k, f in fractions.items()}
    counts = {k: math.floor(q) for k, q in quotas.items()}
    rest = n - sum(counts.values())
    for k in sorted(quotas, key=lambda k: (counts[k] - quotas[k], list(fractions).index(k)))[:rest]:
        counts[k] += 1
    return counts


# ---------------------------------------------------------------------------
# synthetic KG
# ---------------------------------------------------------------------------

class PlantedQuery(NamedTuple):
    source: NodeId
    target: NodeId
    topic: str


@dataclass
class SyntheticKG:
    graph: KnowledgeGraph
    queries: list


def plant_structures(cfg: DatasetConfig) -> SyntheticKG:
    cfg.validate()
    rng = random.Random(cfg.seed)
    lo, hi = cfg.graph_size_range
    topic_counts = apportion(cfg.n_instructions, cfg.topics)
    topics = [t for t in cfg.topics for _ in range(topic_counts[t])]
    rng.shuffle(topics)

    sizes = [rng.randint(lo, hi) for _ in topics]
    etypes = cfg.entity_types()
    type_pool = [etypes[i % len(etypes)] for i in range(sum(sizes))]
    rng.shuffle(type_pool)
    rtypes = cfg.relation_types()

    nodes: dict[NodeId, Node] = {}
    edges: list[Edge] = []
    queries = []
    counter = 0
    for topic, n in zip(topics, sizes):
        max_chain = cfg.max_depth + 1
        n_att = 0 if n == 3 else rng.randint(1, min(3, n - 3))
        n_att = max(n_att, n - max_chain)
        chain_len = n - n_att
        ids = [f"e{counter + i:06d}" for i in range(n)]
        counter += n
        rng.shuffle(ids)
        chain, attached = ids[:chain_len], ids[chain_len:]

        used = set()
        for v in ids:
            suffix = rng.choice(_SUFFIXES[topic])
            label = f"{rng.choice(_STEMS)} {suffix}"
            k = 0
            while label in used:
                k += 1
                label = f"{rng.choice(_STEMS)} {suffix}" + (f" {k}" if k > 5 else "")
            used.add(label)
            nodes[v] = Node(label, type_pool.pop())

        def link(a, b):
            edges.append(Edge(a, b, rng.choice(rtypes)))

        for a, b in zip(chain, chain[1:]):
            link(a, b)
        rest = list(attached)
        if rest and chain_len >= 3 and rng.random() < cfg.bypass_prob:
            z = rest.pop(0)
            i = rng.randint(0, chain_len - 3)
            j = rng.randint(i + 2, chain_len - 1)
            link(chain[i], z)
            link(z, chain[j])
        for z in rest:
            k = rng.randrange(chain_len)
            inbound = rng.random() < 0.5
            link(z, chain[k]) if inbound else link(chain[k], z)
            if chain_len > 1 and rng.random() < 0.3:
                k2 = rng.choice([x for x in range(chain_len) if x != k])
                # same direction as the first edge, so z never bridges the chain
                link(z, chain[k2]) if inbound else link(chain[k2], z)
        queries.append(PlantedQuery(chain[0], chain[-1], topic))
    return SyntheticKG(KnowledgeGraph(nodes, tuple(edges)), queries)


def generate_synthetic_kg(cfg: DatasetConfig) -> KnowledgeGraph:
    return plant_structures(cfg).graph


QUERY_FIELDS = ("source", "target", "topic")


def write_queries(queries: Iterable[PlantedQuery], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(QUERY_FIELDS)
        w.writerows(queries)


def read_queries(path) -> list[PlantedQuery]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != QUERY_FIELDS:
        raise MalformedRecord(f"query file header must be {','.join(QUERY_FIELDS)}")
    bad = [i for i, r in enumerate(rows[1:], 2) if len(r) != 3 or not all(r)]
    if bad:
        raise MalformedRecord(f"malformed query rows at lines {bad[:5]}")
    return [PlantedQuery(*r) for r in rows[1:]]


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

def _seeded(seed, *parts) -> random.Random:
    h = hashlib.sha256(repr((seed,) + parts).encode()).digest()
    return random.Random(int.from_bytes(h[:8], "big"))


class _Builder:
    """Accumulates text while remembering where each entity label was written."""

    def __init__(self, graph: KnowledgeGraph):
        self.graph = graph
        self.parts: list[str] = []
        self.size = 0
        self.marks: list[tuple[int, int, NodeId]] = []

    def text(self, s: str) -> "_Builder":
        self.parts.append(s)
        self.size += len(s)
        return self

    def node(self, v: NodeId) -> "_Builder":
        label = self.graph.nodes[v].label
        self.marks.append((self.size, self.size + len(label), v))
        return self.text(label)

    def build(self) -> tuple[str, list[AlignmentEntry]]:
        text = "".join(self.parts)
        tokens = tokenize(text)
        starts = {t.start: i for i, t in enumerate(tokens)}
        ends = {t.end: i for i, t in enumerate(tokens)}
        out = []
        for a, b, v in self.marks:
            if a not in starts or b not in ends:
                raise DuplicateLabel(f"label of {v!r} does not fall on token boundaries")
            out.append(AlignmentEntry(starts[a], ends[b] + 1, v))
        return text, out


def _check_labels(g: KnowledgeGraph) -> None:
    seen = {}
    for v, n in g.nodes.items():
        if n.label in seen:
            raise DuplicateLabel(f"nodes {seen[n.label]!r} and {v!r} share label {n.label!r}")
        seen[n.label] = v


def render_query(f: FactualGraph, topic: str, seed, intervened: NodeId | None = None) -> tuple[str, list[AlignmentEntry]]:
    if topic not in _TEMPLATES:
        raise TemplateMissing(f"no query template for topic {topic!r}")
    g = f.graph
    _check_labels(g)
    incident, symptom, _ = _TEMPLATES[topic]
    rng = _seeded(seed, "query", f.source, f.target)
    m1 = rng.randrange(11)
    m2 = rng.randrange(m1 + 1, 12)
    year = rng.choice([2021, 2022, 2023, 2024])

    b = _Builder(g)
    for v, n in g.nodes.items():
        article = "an" if n.entity_type[:1].lower() in "aeiou" else "a"
        b.node(v).text(f" is {article} {n.entity_type} in the {topic.lower()} sector. ")
    b.text(f"In {_MONTHS[m1]} {year}, ").node(f.source).text(f" {incident}. ")
    b.text(f"By {_MONTHS[m2]}, ").node(f.target).text(f" {symptom}. ")
    if intervened is not None:
        b.text("Suppose ").node(intervened).text(" is removed from the network. ")
    b.text("Please infer the risk contagion pathways from ").node(f.source).text(" to ").node(f.target).text(".")
    return b.build()


def render_explanation(p: CausalPartition, s: InterventionSet, topic: str | None = None) -> str:
    g = s.factual.graph
    lab = lambda v: g.nodes[v].label
    src, tgt = lab(s.source), lab(s.target)
    lines = ["Let me perform formal causal reasoning step by step:"]
    for i, v in enumerate(sorted(p.effects), 1):
        rel = ">" if p.effects[v] > 0 else "="
        lines.append(
            f"({i}) P({src} → {tgt} | do({lab(v)}=1)) − P({src} → {tgt} | do({lab(v)}=0)) {rel} 0,"
        )
    chain = causal_chain(s, p)
    lines.append("(final) The causal chain of risk propagation is " + " → ".join(lab(v) for v in chain) + ".")
    shock = _TEMPLATES[topic][2] if topic in _TEMPLATES else "shock"
    middle = [lab(v) for v in chain[1:-1]]
    if middle:
        lines.append(f"The {shock} at {src} spread through {', then '.join(middle)} and finally reached {tgt}.")
    else:
        lines.append(f"The {shock} at {src} reached {tgt} without any single indispensable intermediary.")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# dataset
# ---------------------------------------------------------------------------

@dataclass
class Instruction:
    id: str
    query: str
    explanation: str
    group: str  # "factual" | "intervention"
    topic: str
    graph_set: InterventionSet
    alignment: tuple
    label: float
    intervened_node: NodeId | None = None

    def sequence(self) -> list[str]:
        """Token strings of the query/explanation concatenation with a delimiter."""
        return [t.text for t in tokenize(self.query)] + [SEP] + [t.text for t in tokenize(self.explanation)]

    @property
    def graph(self) -> KnowledgeGraph:
        return self.graph_set.graph_for(self.intervened_node)

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "query": self.query,
            "explanation": self.explanation,
            "group": self.group,
            "topic": self.topic,
            "label": self.label,
            "intervened_node": self.intervened_node,
            "alignment": [{"span": [a.start, a.end], "node": a.node} for a in self.alignment],
            "graph_set": self.graph_set.to_records(),
        }

    @classmethod
    def from_record(cls, r: dict) -> "Instruction":
        return cls(
            id=r["id"],
            query=r["query"],
            explanation=r["explanation"],
            group=r["group"],
            topic=r["topic"],
            graph_set=InterventionSet.from_records(r["graph_set"]),
            alignment=tuple(AlignmentEntry(a["span"][0], a["span"][1], a["node"]) for a in r["alignment"]),
            label=float(r["label"]),
            intervened_node=r.get("intervened_node"),
        )


def make_instruction(iid: str, iset: InterventionSet, topic: str, intervened: NodeId | None, seed) -> Instruction:
    part = classify_nodes(iset)
    query, alignment = render_query(iset.factual, topic, seed, intervened)
    return Instruction(
        id=iid,
        query=query,
        explanation=render_explanation(part, iset, topic),
        group="factual" if intervened is None else "intervention",
        topic=topic,
        graph_set=iset,
        alignment=tuple(alignment),
        label=iset.label_for(intervened),
        intervened_node=intervened,
    )


def build_dataset(cfg: DatasetConfig, syn: SyntheticKG | None = None) -> list[Instruction]:
    """One instruction per planted query; ``syn`` defaults to ``plant_structures(cfg)``."""
    syn = plant_structures(cfg) if syn is None else syn
    if len(syn.queries) != cfg.n_instructions:
        raise InfeasibleConfig(f"{len(syn.queries)} planted queries for n_instructions={cfg.n_instructions}")
    n = cfg.n_instructions
    rng = random.Random(f"groups-{cfg.seed}")
    n_fact = math.floor(n * cfg.factual_fraction + 0.5)
    groups = ["factual"] * n_fact + ["intervention"] * (n - n_fact)
    rng.shuffle(groups)
    out = []
    for i, (q, grp) in enumerate(zip(syn.queries, groups)):
        f = dfs_extract(syn.graph, q.source, q.target, cfg.max_depth, cfg.attach_hops)
        iset = build_intervention_set(f)
        nu = None
        if grp == "intervention":
            nu = rng.choice([iv.node for iv in iset.interventions])
        out.append(make_instruction(f"{cfg.profile}-{cfg.seed}-{i:05d}", iset, q.topic, nu, (cfg.seed, i)))
    return out


def write_dataset(instructions: Iterable[Instruction], path, manifest: dict | None = None) -> None:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for inst in instructions:
            fh.write(json.dumps(inst.to_record(), ensure_ascii=False, sort_keys=True) + "\n")
    if manifest is not None:
        path.with_name(path.stem + ".manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )


def read_dataset(path) -> list[Instruction]:
    return [
        Instruction.from_record(json.loads(line))
        for line in Path(path).read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]


def dataset_manifest(cfg: DatasetConfig, instructions: list[Instruction]) -> dict:
    topics = {}
    for inst in instructions:
        topics[inst.topic] = topics.get(inst.topic, 0) + 1
    return {
        "version": 1,
        "config": asdict(cfg),
        "seed": cfg.seed,
        "n_instructions": len(instructions),
        "factual": sum(i.group == "factual" for i in instructions),
        "intervention": sum(i.group == "intervention" for i in instructions),
        "topics": dict(sorted(topics.items())),
    }
