"""Abstract interpreter: fixpoint engine and per-site callee resolution.

Interprocedurally this is a worklist over function summaries with
change-driven re-queueing of dependent callers; intraprocedurally the
structured instruction tree is evaluated directly, iterating loop bodies
with delayed widening at the loop head until the entry memory stabilizes.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from collections import deque

from . import domain as D
from .domain import (AbsMemory, AbsValue, BOTTOM_MEM, MUST_FALSE, MUST_TRUE,
                     TOO_WIDE, concretize_indices, filter_mem, join_mem,
                     le_mem, truth, widen_mem)
from .frontend import Instr, ValidatedModule


@dataclass
class AnalysisConfig:
    k: int = D.DEFAULT_K  # finite-set cardinality bound
    widen_delay: int = 2  # joins before widening kicks in
    context_depth: int = 0  # 0 or 1 (keyed by caller site)
    roots: list[int] | None = None
    open_tables: bool = False  # treat all table entries as roots
    max_function_passes: int = 10_000  # safety net; never hit on valid input


@dataclass
class CalleeSet:
    callees: frozenset
    kind: str  # "direct" | "indirect" | "indirect-fallback"

    @property
    def fallback(self) -> bool:
        return self.kind == "indirect-fallback"


@dataclass
class FunctionSummary:
    entry_args: tuple
    entry_globals: tuple
    exit_results: tuple | None = None  # None until first pass completes
    exit_globals: tuple | None = None
    entry_updates: int = 0
    exit_updates: int = 0


@dataclass
class AnalysisResult:
    sites: dict  # (func, site) -> CalleeSet, merged over contexts
    summaries: dict  # func -> FunctionSummary (merged over contexts)
    roots: list
    reachable: set  # function indices with at least one summary, plus imports called

    def edges(self) -> set:
        """{(caller, callee, site)} over all recorded call sites."""
        out = set()
        for (func, site), cs in self.sites.items():
            for callee in cs.callees:
                out.add((func, callee, site))
        return out


class _Analyzer:
    def __init__(self, vm: ValidatedModule, cfg: AnalysisConfig):
        self.vm = vm
        self.m = vm.module
        self.cfg = cfg
        self.table = tuple(self.m.table)
        self.summaries: dict = {}  # key -> FunctionSummary; key = (func, ctx)
        self.deps: dict = {}  # key -> set of caller keys to re-queue
        self.sites: dict = {}  # key -> {site: CalleeSet}
        self.queue: deque = deque()
        self.queued: set = set()
        self.import_edges: set = set()
        self.passes = 0

    # -- worklist ---------------------------------------------------------

    def enqueue(self, key):
        if key not in self.queued:
            self.queued.add(key)
            self.queue.append(key)

    def run(self, roots: list[int], root_args: dict | None = None) -> AnalysisResult:
        init_globals = tuple(AbsValue.const(g.init) for g in self.m.globals)
        for r in roots:
            ft = self.m.func_type(r)
            if self.m.is_import(r):
                continue  # imported roots have no body to analyze
            args = (root_args or {}).get(r)
            if args is None:
                args = tuple(AbsValue.top() for _ in range(ft.params))
            self._ensure_entry((r, None), tuple(args), init_globals)
        while self.queue:
            key = self.queue.popleft()
            self.queued.discard(key)
            self._process(key)
        return self._result(roots)

    def _ensure_entry(self, key, args: tuple, globs: tuple):
        s = self.summaries.get(key)
        if s is None:
            self.summaries[key] = FunctionSummary(args, globs)
            self.enqueue(key)
            return
        if all(a.le(b) for a, b in zip(args, s.entry_args)) and \
                all(a.le(b) for a, b in zip(globs, s.entry_globals)):
            return
        # grow the entry; widen after the configured delay so chains of
        # growing entries terminate
        op = D.join if s.entry_updates < self.cfg.widen_delay else D.widen
        new_args = tuple(op(o, n, self.cfg.k) for o, n in zip(s.entry_args, args))
        new_globs = tuple(op(o, n, self.cfg.k) for o, n in zip(s.entry_globals, globs))
        assert all(o.le(n) for o, n in zip(s.entry_args, new_args)), \
            "summary entries must only grow"
        s.entry_args = new_args
        s.entry_globals = new_globs
        s.entry_updates += 1
        self.enqueue(key)

    def _process(self, key):
        self.passes += 1
        if self.passes > self.cfg.max_function_passes:
            raise RuntimeError("analysis worklist failed to stabilize")
        func, _ctx = key
        s = self.summaries[key]
        fd = self.m.func_def(func)
        ft = self.m.types[fd.type_index]
        mem = AbsMemory(
            globals=s.entry_globals,
            stack=(),
            locals=s.entry_args + tuple(AbsValue.const(0) for _ in range(fd.locals)),
        )
        self.sites[key] = {}
        # the body behaves as one implicit block of the function's result
        # arity; `return` branches to it
        rec = _LabelRec("block", ft.results, 0)
        out = self._eval_seq(fd.body, mem, [rec], key)
        out = join_mem(out, rec.acc, self.cfg.k)
        if out.bottom:
            results, globs = None, None
        else:
            results, globs = out.stack, out.globals
        self._update_exit(key, s, results, globs)

    def _update_exit(self, key, s: FunctionSummary, results, globs):
        if results is None:
            return  # no terminating path found yet; exit stays as-is
        if s.exit_results is not None:
            op = D.join if s.exit_updates < self.cfg.widen_delay else D.widen
            results = tuple(op(o, n, self.cfg.k) for o, n in zip(s.exit_results, results))
            globs = tuple(op(o, n, self.cfg.k) for o, n in zip(s.exit_globals, globs))
            if all(n.le(o) for n, o in zip(results, s.exit_results)) and \
                    all(n.le(o) for n, o in zip(globs, s.exit_globals)):
                return  # exit unchanged
        s.exit_results = results
        s.exit_globals = globs
        s.exit_updates += 1
        for caller in self.deps.get(key, ()):
            self.enqueue(caller)

    # -- intraprocedural evaluation ---------------------------------------

    def _eval_seq(self, body: list[Instr], mem: AbsMemory, labels, key) -> AbsMemory:
        for i in body:
            if mem.bottom:
                return BOTTOM_MEM
            mem = self._eval(i, mem, labels, key)
        return mem

    def _eval(self, i: Instr, mem: AbsMemory, labels, key) -> AbsMemory:
        op = i.op
        k = self.cfg.k
        if op == "const":
            return mem.push(AbsValue.const(i.arg))
        if op == "unop":
            mem, v = mem.pop()
            expr = None
            if i.kind in D.LAZY_UNOPS and v.expr is not None:
                expr = D.SymExpr(i.kind, (v.expr,))
            return mem.push(D.abs_unop(i.kind, v, k).with_expr(expr))
        if op == "binop":
            mem, (a, b) = mem.pop_n(2)
            r = D.abs_binop(i.kind, a, b, k)
            if r is None:
                return BOTTOM_MEM  # definite trap (e.g. division by zero)
            expr = None
            if i.kind in D.LAZY_BINOPS and a.expr is not None and b.expr is not None:
                expr = D.SymExpr(i.kind, (a.expr, b.expr))
            return mem.push(r.with_expr(expr))
        if op == "local.get":
            return mem.push(mem.locals[i.arg].with_expr(D.local_read(i.arg)))
        if op == "local.set":
            mem, v = mem.pop()
            mem = D.kill_var(mem, "local", i.arg)
            if D.expr_mentions(v.expr, "local", i.arg):
                v = v.with_expr(None)
            return mem.set_local(i.arg, v)
        if op == "local.tee":
            v = mem.stack[-1]
            mem = D.kill_var(mem, "local", i.arg)
            if D.expr_mentions(v.expr, "local", i.arg):
                v = v.with_expr(None)
            return mem.set_local(i.arg, v)
        if op == "global.get":
            return mem.push(mem.globals[i.arg].with_expr(D.global_read(i.arg)))
        if op == "global.set":
            mem, v = mem.pop()
            mem = D.kill_var(mem, "global", i.arg)
            if D.expr_mentions(v.expr, "global", i.arg):
                v = v.with_expr(None)
            return mem.set_global(i.arg, v)
        if op == "drop":
            return mem.pop()[0]
        if op == "nop":
            return mem
        if op == "block":
            return self._eval_block(i.body, i.result, mem, labels, key)
        if op == "loop":
            return self._eval_loop(i, mem, labels, key)
        if op == "if":
            return self._eval_if(i, mem, labels, key)
        if op == "br":
            self._propagate_branch(i.arg, mem, labels)
            return BOTTOM_MEM  # fall-through of an unconditional br is dead
        if op == "br_if":
            return self._eval_br_if(i, mem, labels, key)
        if op == "return":
            self._propagate_branch(len(labels) - 1, mem, labels)
            return BOTTOM_MEM
        if op == "call":
            mem, cs = self._do_call_site(i.arg, mem, key, i.site, "direct")
            self._record_site(key, i.site, cs)
            return mem
        if op == "call_indirect":
            return self._eval_call_indirect(i, mem, key)
        raise AssertionError(f"unhandled op {op}")  # pragma: no cover

    # -- control ----------------------------------------------------------

    def _eval_block(self, body, arity, mem: AbsMemory, labels, key) -> AbsMemory:
        rec = _LabelRec("block", arity, len(mem.stack))
        out = self._eval_seq(body, mem, labels + [rec], key)
        return join_mem(out, rec.acc, self.cfg.k)

    def _eval_loop(self, i: Instr, mem: AbsMemory, labels, key) -> AbsMemory:
        height = len(mem.stack)
        state = mem
        visits = 0
        while True:
            rec = _LabelRec("loop", 0, height)
            out = self._eval_seq(i.body, state, labels + [rec], key)
            back = rec.acc
            if back.bottom:
                return out
            visits += 1
            candidate = join_mem(state, back, self.cfg.k)
            if visits > self.cfg.widen_delay:
                candidate = widen_mem(state, candidate, self.cfg.k)
            if le_mem(candidate, state):
                return out  # loop head stabilized
            state = candidate

    def _eval_if(self, i: Instr, mem: AbsMemory, labels, key) -> AbsMemory:
        mem, cond = mem.pop()
        t = truth(cond)
        m_t = BOTTOM_MEM if t == MUST_FALSE else filter_mem(cond.expr, True, mem, self.cfg.k)
        m_f = BOTTOM_MEM if t == MUST_TRUE else filter_mem(cond.expr, False, mem, self.cfg.k)
        out_t = self._eval_block(i.body, i.result, m_t, labels, key)
        out_f = self._eval_block(i.orelse, i.result, m_f, labels, key)
        return join_mem(out_t, out_f, self.cfg.k)

    def _propagate_branch(self, depth: int, mem: AbsMemory, labels):
        if mem.bottom:
            return
        rec = labels[-1 - depth]
        keep = rec.arity if rec.kind == "block" else 0
        rec.accumulate(mem.truncate(rec.height, keep), self.cfg.k)

    def _eval_br_if(self, i: Instr, mem: AbsMemory, labels, key) -> AbsMemory:
        mem, cond = mem.pop()
        t = truth(cond)
        m_t = BOTTOM_MEM if t == MUST_FALSE else filter_mem(cond.expr, True, mem, self.cfg.k)
        m_f = BOTTOM_MEM if t == MUST_TRUE else filter_mem(cond.expr, False, mem, self.cfg.k)
        self._propagate_branch(i.arg, m_t, labels)
        return m_f

    # -- calls ------------------------------------------------------------

    def _record_site(self, key, site: int, cs: CalleeSet):
        self.sites[key][site] = cs

    def _do_call_site(self, callee: int, mem: AbsMemory, key, site: int,
                      kind: str) -> tuple[AbsMemory, CalleeSet]:
        out = self._abs_call(callee, mem, key, site)
        return out, CalleeSet(frozenset([callee]), kind)

    def _abs_call(self, callee: int, mem: AbsMemory, caller_key, site: int) -> AbsMemory:
        ft = self.m.func_type(callee)
        mem, args = mem.pop_n(ft.params)
        if self.m.is_import(callee):
            # unconstrained output of the declared typing; the closed-module
            # assumption means imports cannot touch module state
            self.import_edges.add(callee)
            for _ in range(ft.results):
                mem = mem.push(AbsValue.top())
            return mem
        ctx = site if self.cfg.context_depth == 1 else None
        tk = (callee, ctx)
        # strip caller-frame expressions: callee-side filtering must not
        # confuse caller locals with callee locals
        args = tuple(a.with_expr(None) for a in args)
        self._ensure_entry(tk, args, tuple(g.with_expr(None) for g in mem.globals))
        self.deps.setdefault(tk, set()).add(caller_key)
        s = self.summaries[tk]
        if s.exit_results is None:
            return BOTTOM_MEM  # callee has no known terminating path yet
        if self.m.globals:
            for g in range(len(self.m.globals)):
                mem = D.kill_var(mem, "global", g)
        mem = replace(mem, globals=s.exit_globals)
        for r in s.exit_results:
            mem = mem.push(r)
        return mem

    def _eval_call_indirect(self, i: Instr, mem: AbsMemory, key) -> AbsMemory:
        mem, idx = mem.pop()
        want = self.m.types[i.arg]
        candidates = concretize_indices(idx, self.table)
        if candidates is TOO_WIDE:
            # type-filtered fallback over table-populated functions
            candidates = frozenset(
                f for f in self.table
                if f is not None and self.m.func_type(f) == want)
            kind = "indirect-fallback"
        else:
            candidates = frozenset(
                f for f in candidates if self.m.func_type(f) == want)
            kind = "indirect"
        self._record_site(key, i.site, CalleeSet(candidates, kind))
        if not candidates:
            return BOTTOM_MEM  # the site certainly traps
        out = BOTTOM_MEM
        for c in sorted(candidates):
            out = join_mem(out, self._abs_call(c, mem, key, i.site), self.cfg.k)
        return out

    # -- results ----------------------------------------------------------

    def _result(self, roots) -> AnalysisResult:
        merged_sites: dict = {}
        for (func, _ctx), sites in self.sites.items():
            for site, cs in sites.items():
                prev = merged_sites.get((func, site))
                if prev is None:
                    merged_sites[(func, site)] = cs
                else:
                    kind = cs.kind
                    if prev.kind != cs.kind:
                        kind = "indirect-fallback" if "indirect-fallback" in (
                            prev.kind, cs.kind) else prev.kind
                    merged_sites[(func, site)] = CalleeSet(
                        prev.callees | cs.callees, kind)
        merged_summaries: dict = {}
        for (func, _ctx), s in self.summaries.items():
            prev = merged_summaries.get(func)
            if prev is None or prev.exit_results is None:
                merged_summaries[func] = s
            elif s.exit_results is not None:
                merged_summaries[func] = FunctionSummary(
                    entry_args=tuple(D.join(a, b, self.cfg.k)
                                     for a, b in zip(prev.entry_args, s.entry_args)),
                    entry_globals=tuple(D.join(a, b, self.cfg.k)
                                        for a, b in zip(prev.entry_globals, s.entry_globals)),
                    exit_results=tuple(D.join(a, b, self.cfg.k)
                                       for a, b in zip(prev.exit_results, s.exit_results)),
                    exit_globals=tuple(D.join(a, b, self.cfg.k)
                                       for a, b in zip(prev.exit_globals, s.exit_globals)),
                )
        reachable = set(merged_summaries) | set(self.import_edges)
        return AnalysisResult(
            sites=merged_sites,
            summaries=merged_summaries,
            roots=list(roots),
            reachable=reachable,
        )


class _LabelRec:
    """Per-label accumulator for branch propagation within one pass."""

    __slots__ = ("kind", "arity", "height", "acc")

    def __init__(self, kind: str, arity: int, height: int):
        self.kind = kind
        self.arity = arity
        self.height = height
        self.acc = BOTTOM_MEM

    def accumulate(self, mem: AbsMemory, k: int):
        self.acc = join_mem(self.acc, mem, k)


def resolve_roots(vm: ValidatedModule, cfg: AnalysisConfig) -> list[int]:
    if cfg.roots is not None:
        roots = list(cfg.roots)
    else:
        roots = vm.default_roots()
    if cfg.open_tables:
        for entry in vm.module.table:
            if entry is not None and entry not in roots:
                roots.append(entry)
    if not roots:
        raise ValueError("no analysis roots: module has no exports or start "
                         "(pass explicit roots)")
    return roots


def analyze(vm: ValidatedModule, cfg: AnalysisConfig | None = None,
            root_args: dict | None = None) -> AnalysisResult:
    """Run the abstract interpretation to a post-fixpoint.

    root_args optionally pins abstract argument values for specific roots
    (default: Top of the declared arity).
    """
    cfg = cfg or AnalysisConfig()
    roots = resolve_roots(vm, cfg)
    return _Analyzer(vm, cfg).run(roots, root_args)
