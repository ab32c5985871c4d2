"""Call-graph accumulation, type-only baseline, diffing, and emitters."""
from __future__ import annotations

import json
from dataclasses import dataclass

from .analysis import AnalysisResult
from .frontend import Instr, ValidatedModule


@dataclass(frozen=True)
class Edge:
    caller: int
    callee: int
    site: int
    kind: str  # "direct" | "indirect" | "indirect-fallback"

    @property
    def triple(self) -> tuple:
        return (self.caller, self.callee, self.site)


@dataclass(frozen=True)
class Node:
    index: int
    name: str | None
    imported: bool


@dataclass
class CallGraph:
    nodes: dict  # index -> Node
    edges: set  # set[Edge]
    roots: frozenset

    def edge_triples(self) -> set:
        return {e.triple for e in self.edges}

    def edge_pairs(self) -> set:
        return {(e.caller, e.callee) for e in self.edges}


@dataclass
class GraphDelta:
    only_a: list
    only_b: list
    shared: list
    count_a: int
    count_b: int


def _restrict_reachable(vm: ValidatedModule, edges: set, roots) -> CallGraph:
    """Keep only nodes and edges reachable from the roots."""
    m = vm.module
    by_caller: dict = {}
    for e in edges:
        by_caller.setdefault(e.caller, []).append(e)
    seen = set()
    work = [r for r in roots]
    kept = set()
    while work:
        f = work.pop()
        if f in seen:
            continue
        seen.add(f)
        for e in by_caller.get(f, ()):
            kept.add(e)
            if e.callee not in seen:
                work.append(e.callee)
    nodes = {i: Node(i, m.func_name(i), m.is_import(i)) for i in seen}
    return CallGraph(nodes=nodes, edges=kept, roots=frozenset(roots))


def build(vm: ValidatedModule, result: AnalysisResult) -> CallGraph:
    """Call graph from the analysis: one edge per (site, callee)."""
    edges = set()
    for (func, site), cs in result.sites.items():
        for callee in cs.callees:
            edges.add(Edge(func, callee, site, cs.kind))
    return _restrict_reachable(vm, edges, result.roots)


def _syntactic_sites(body: list[Instr], out: list):
    for i in body:
        if i.op == "call":
            out.append((i.site, "call", i.arg))
        elif i.op == "call_indirect":
            out.append((i.site, "call_indirect", i.arg))
        _syntactic_sites(i.body, out)
        _syntactic_sites(i.orelse, out)


def build_type_baseline(vm: ValidatedModule, roots) -> CallGraph:
    """Type-only over-approximation: every call_indirect site may reach any
    table-populated function whose type matches the annotation."""
    m = vm.module
    edges = set()
    populated = sorted({f for f in m.table if f is not None})
    for k, fd in enumerate(m.functions):
        caller = len(m.imports) + k
        sites: list = []
        _syntactic_sites(fd.body, sites)
        for site, kind, arg in sites:
            if kind == "call":
                edges.add(Edge(caller, arg, site, "direct"))
            else:
                want = m.types[arg]
                for f in populated:
                    if m.func_type(f) == want:
                        edges.add(Edge(caller, f, site, "indirect"))
    return _restrict_reachable(vm, edges, roots)


def diff(a: CallGraph, b: CallGraph) -> GraphDelta:
    ta, tb = a.edge_triples(), b.edge_triples()
    return GraphDelta(
        only_a=sorted(ta - tb),
        only_b=sorted(tb - ta),
        shared=sorted(ta & tb),
        count_a=len(ta),
        count_b=len(tb),
    )


def emit_dot(g: CallGraph) -> str:
    lines = ["digraph callgraph {"]
    for idx in sorted(g.nodes):
        n = g.nodes[idx]
        label = f"{idx}:{n.name}" if n.name else str(idx)
        attrs = [f'label="{label}"']
        if n.imported:
            attrs.append("shape=box")
        if idx in g.roots:
            attrs.append("penwidth=2")
        lines.append(f'  n{idx} [{" ".join(attrs)}];')
    for e in sorted(g.edges, key=lambda e: (e.caller, e.callee, e.site)):
        style = ' [style=dashed]' if e.kind == "indirect-fallback" else ""
        lines.append(f"  n{e.caller} -> n{e.callee}{style};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def emit_json(g: CallGraph) -> str:
    doc = {
        "nodes": [
            {"id": idx, "imported": g.nodes[idx].imported, "name": g.nodes[idx].name}
            for idx in sorted(g.nodes)
        ],
        "edges": [
            {"from": e.caller, "kind": e.kind, "site": e.site, "to": e.callee}
            for e in sorted(g.edges, key=lambda e: (e.caller, e.callee, e.site))
        ],
        "roots": sorted(g.roots),
    }
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"
