#!/usr/bin/env python3
"""Walk the four-node worked example: DFS extraction, interventions, X/Z split, risk path, Sankey."""

from contagion_kg.fixtures import table1_graph
from contagion_kg.forge import render_explanation
from contagion_kg.graph import dfs_extract
from contagion_kg.intervention import build_intervention_set, classify_nodes, intervention_effect
from contagion_kg.pathway import RiskScores, extract_path
from contagion_kg.sankey import export_sankey

g = table1_graph()
f = dfs_extract(g, "A", "C")
s = build_intervention_set(f)

print("edges:", ", ".join(f"{e.src}-[{e.relation_type}]->{e.dst}" for e in g.edges))
print(f"P(C|A) = {s.factual_label}")
for iv in s.interventions:
    print(f"do({iv.node}=0): P = {iv.label}  delta = {intervention_effect(s, iv.node)}")
p = classify_nodes(s)
print("X =", sorted(p.causal), " Z =", sorted(p.non_causal))

# oracle-style scores: causal nodes high, confounder low
scores = RiskScores({v: (0.9 if v in p.causal or v == "C" else 0.1) for v in g.nodes}, 1.0)
path = extract_path(f, scores)
print("path:", " -> ".join(path.nodes), " intensities:", [round(x, 3) for x in path.intensities])
print("explanation:", render_explanation(p, s))
print(export_sankey(path, f, scores, "", query_id="table1").to_json(), end="")
