"""Benchmark corpus harness: differential soundness suite and precision report.

For every corpus case this runs the abstract analysis, builds the type-only
baseline, enumerates concrete inputs per the case's policy, and checks
    oracle edges  <=  abstract edges  <=  baseline edges.
Optionally renders precision figures next to the report files.
"""
from __future__ import annotations

import csv
import itertools
import json
import shutil
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

from . import concrete, graph
from .analysis import AnalysisConfig, analyze, resolve_roots
from .frontend import ValidatedModule, parse_and_validate

REFRUN = Path(__file__).resolve().parents[2] / "tools" / "refrun" / "run.js"


@dataclass
class CorpusCase:
    name: str
    path: Path
    entry: str
    tags: list
    ground_truth: set  # {(caller, callee)} pairs, hand-derived
    inputs: dict
    stub_values: list = field(default_factory=lambda: [[0]])
    diverges: bool = False
    fuel: int = concrete.DEFAULT_FUEL

    def input_vectors(self, vm: ValidatedModule) -> list:
        entry = vm.export_index(self.entry)
        nparams = vm.module.func_type(entry).params
        if "explicit" in self.inputs:
            return [list(v) for v in self.inputs["explicit"]]
        policy = self.inputs.get("enumerate", {"lo": -2, "hi": 3})
        rng = range(policy["lo"], policy["hi"] + 1)
        return [list(v) for v in itertools.product(rng, repeat=nparams)]


def load_corpus(corpus_dir: Path) -> list[CorpusCase]:
    manifest = json.loads((corpus_dir / "manifest.json").read_text())
    cases = []
    for c in manifest["cases"]:
        cases.append(CorpusCase(
            name=c["name"],
            path=corpus_dir / c["file"],
            entry=c["entry"],
            tags=list(c.get("tags", [])),
            ground_truth={tuple(e) for e in c.get("ground_truth", [])},
            inputs=c.get("inputs", {}),
            stub_values=c.get("stub_values", [[0]]),
            diverges=c.get("diverges", False),
            fuel=c.get("fuel", concrete.DEFAULT_FUEL),
        ))
    return sorted(cases, key=lambda c: c.name)


@dataclass
class CaseReport:
    name: str
    tags: list
    sound: bool
    ground_truth_covered: bool
    abstract_edges: int
    baseline_edges: int
    oracle_edges: int
    fallback_sites: int
    violations: list = field(default_factory=list)

    @property
    def precision_ratio(self) -> float:
        if self.baseline_edges == 0:
            return 1.0
        return self.abstract_edges / self.baseline_edges


def oracle_runs(case: CorpusCase, vm: ValidatedModule):
    """Yields one ConcreteTrace per (input vector, stub sequence)."""
    entry = vm.export_index(case.entry)
    for stub in case.stub_values:
        for args in case.input_vectors(vm):
            yield args, stub, concrete.run(vm, entry, args, fuel=case.fuel,
                                           import_stub=stub)


def run_case(case: CorpusCase, cfg: AnalysisConfig | None = None) -> CaseReport:
    cfg = cfg or AnalysisConfig()
    vm = parse_and_validate(case.path.read_text())
    result = analyze(vm, cfg)
    abstract = graph.build(vm, result)
    baseline = graph.build_type_baseline(vm, resolve_roots(vm, cfg))
    abs_triples = abstract.edge_triples()
    base_triples = baseline.edge_triples()
    violations = []
    oracle_triples: set = set()
    for args, stub, trace in oracle_runs(case, vm):
        oracle_triples |= trace.edges
        missing = trace.edges - abs_triples
        if missing:
            violations.append(
                f"args={args} stub={stub}: oracle edges {sorted(missing)} "
                f"not in abstract graph")
    if not abs_triples <= base_triples:
        violations.append(
            f"abstract edges {sorted(abs_triples - base_triples)} not in baseline")
    gt_pairs = {(c, t) for c, t, _ in oracle_triples}
    return CaseReport(
        name=case.name,
        tags=case.tags,
        sound=not violations,
        ground_truth_covered=case.ground_truth <= gt_pairs,
        abstract_edges=len(abs_triples),
        baseline_edges=len(base_triples),
        oracle_edges=len(oracle_triples),
        fallback_sites=sum(1 for cs in result.sites.values() if cs.fallback),
        violations=violations,
    )


def run_corpus(corpus_dir: Path, cfg: AnalysisConfig | None = None) -> list[CaseReport]:
    return [run_case(c, cfg) for c in load_corpus(corpus_dir)]


def report_json(reports: list[CaseReport]) -> str:
    doc = {
        "cases": [
            {
                "abstract_edges": r.abstract_edges,
                "baseline_edges": r.baseline_edges,
                "fallback_sites": r.fallback_sites,
                "ground_truth_covered": r.ground_truth_covered,
                "name": r.name,
                "oracle_edges": r.oracle_edges,
                "precision_ratio": round(r.precision_ratio, 4),
                "sound": r.sound,
                "tags": r.tags,
            }
            for r in reports
        ],
        "totals": {
            "abstract_edges": sum(r.abstract_edges for r in reports),
            "baseline_edges": sum(r.baseline_edges for r in reports),
            "cases": len(reports),
            "fallback_sites": sum(r.fallback_sites for r in reports),
            "sound": all(r.sound for r in reports),
            "unsound_cases": sorted(r.name for r in reports if not r.sound),
        },
    }
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def report_csv(reports: list[CaseReport], path: Path):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["name", "sound", "oracle_edges", "abstract_edges",
                    "baseline_edges", "precision_ratio", "fallback_sites"])
        for r in reports:
            w.writerow([r.name, r.sound, r.oracle_edges, r.abstract_edges,
                        r.baseline_edges, f"{r.precision_ratio:.4f}",
                        r.fallback_sites])


def report_table(reports: list[CaseReport]) -> str:
    lines = []
    header = f"{'case':<20} {'sound':<6} {'oracle':>6} {'abs':>5} {'base':>5} {'ratio':>6} {'fb':>3}"
    lines.append(header)
    lines.append("-" * len(header))
    for r in reports:
        lines.append(
            f"{r.name:<20} {'ok' if r.sound else 'FAIL':<6} "
            f"{r.oracle_edges:>6} {r.abstract_edges:>5} {r.baseline_edges:>5} "
            f"{r.precision_ratio:>6.2f} {r.fallback_sites:>3}")
        for v in r.violations:
            lines.append(f"    ! {v}")
    total_abs = sum(r.abstract_edges for r in reports)
    total_base = sum(r.baseline_edges for r in reports)
    lines.append("-" * len(header))
    lines.append(f"{'total':<20} {'':<6} "
                 f"{sum(r.oracle_edges for r in reports):>6} {total_abs:>5} {total_base:>5} "
                 f"{(total_abs / total_base if total_base else 1.0):>6.2f} "
                 f"{sum(r.fallback_sites for r in reports):>3}")
    return "\n".join(lines)


def render_figures(reports: list[CaseReport], out_dir: Path) -> list[Path]:
    """Edge-count and precision-ratio charts next to the delimited report."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    import numpy as np

    out_dir.mkdir(parents=True, exist_ok=True)
    names = [r.name for r in reports]
    x = np.arange(len(names))

    fig, ax = plt.subplots(figsize=(max(8, 0.6 * len(names)), 4.5))
    width = 0.28
    ax.bar(x - width, [r.oracle_edges for r in reports], width, label="oracle")
    ax.bar(x, [r.abstract_edges for r in reports], width, label="abstract")
    ax.bar(x + width, [r.baseline_edges for r in reports], width, label="type baseline")
    ax.set_xticks(x)
    ax.set_xticklabels(names, rotation=60, ha="right", fontsize=8)
    ax.set_ylabel("call-graph edges")
    ax.legend()
    fig.tight_layout()
    edges_png = out_dir / "edge_counts.png"
    fig.savefig(edges_png, dpi=120)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(max(8, 0.6 * len(names)), 3.5))
    ax.bar(x, [r.precision_ratio for r in reports], color="#336699")
    ax.axhline(1.0, color="gray", linewidth=0.8, linestyle="--")
    ax.set_xticks(x)
    ax.set_xticklabels(names, rotation=60, ha="right", fontsize=8)
    ax.set_ylabel("abstract / baseline")
    ax.set_ylim(0, 1.1)
    fig.tight_layout()
    ratio_png = out_dir / "precision_ratio.png"
    fig.savefig(ratio_png, dpi=120)
    plt.close(fig)
    return [edges_png, ratio_png]


# ---------------------------------------------------------------------------
# Reference-runtime conformance
# ---------------------------------------------------------------------------

def reference_available() -> bool:
    return shutil.which("node") is not None and REFRUN.exists() and \
        (REFRUN.parent / "node_modules" / "wabt").exists()


def reference_run(wat_path: Path, entry: str, args: list[int],
                  stub: list[int] | None = None) -> dict:
    """Execute on the reference engine; returns {"result": [...]} or {"trap": msg}."""
    return reference_run_batch(wat_path, entry, [(args, stub or [0])])[0]


def reference_run_batch(wat_path: Path, entry: str, runs) -> list[dict]:
    """One engine invocation for many (args, stub) runs on the same module."""
    job = json.dumps({"wat": str(wat_path), "entry": entry,
                      "runs": [{"args": a, "stub": s} for a, s in runs]})
    proc = subprocess.run(["node", str(REFRUN), job], capture_output=True,
                          text=True, timeout=120)
    if proc.returncode != 0:
        raise RuntimeError(f"reference runner failed: {proc.stderr}")
    return json.loads(proc.stdout)["results"]


def conformance_mismatches(case: CorpusCase, vm: ValidatedModule) -> list[str]:
    """Compares concrete-interpreter results with the reference engine."""
    if case.diverges:
        return []  # reference execution would not terminate
    traces = list(oracle_runs(case, vm))
    refs = reference_run_batch(case.path, case.entry,
                               [(args, stub) for args, stub, _ in traces])
    out = []
    for (args, stub, trace), ref in zip(traces, refs):
        if trace.trap is not None:
            if "trap" not in ref:
                out.append(f"args={args}: we trap ({trace.trap}), reference returns {ref}")
        elif trace.fuel_exhausted:
            out.append(f"args={args}: unexpected fuel exhaustion")
        else:
            if "trap" in ref:
                out.append(f"args={args}: reference traps ({ref['trap']}), we return {trace.result}")
            elif trace.result != ref["result"]:
                out.append(f"args={args}: result {trace.result} != reference {ref['result']}")
    return out
