"""Value and memory lattices for the analysis.

Values are layered: a finite set of i32s (bounded cardinality K), an
interval with possibly infinite bounds, or Top; each value may carry a
symbolic expression recording how it was computed from locals/globals.
The expression layer is what branch filtering consumes to regain
relational precision at call_indirect index sites.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

from .concrete import BINOP_FNS, UNOP_FNS, Trap, wrap32
from .frontend import I32_MAX, I32_MIN, RELOPS

DEFAULT_K = 16

FINITE = "finite"
INTERVAL = "interval"
TOP_KIND = "top"


# ---------------------------------------------------------------------------
# Symbolic expressions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SymExpr:
    """Lazy expression over local/global reads and literals."""
    op: str  # "local" | "global" | "lit" | unop/binop mnemonic
    args: tuple = ()

    def __repr__(self):
        if self.op in ("local", "global"):
            return f"{self.op}{self.args[0]}"
        if self.op == "lit":
            return str(self.args[0])
        return f"({self.op} {' '.join(map(repr, self.args))})"


def local_read(i: int) -> SymExpr:
    return SymExpr("local", (i,))


def global_read(i: int) -> SymExpr:
    return SymExpr("global", (i,))


def literal(v: int) -> SymExpr:
    return SymExpr("lit", (v,))


# operators for which a lazy expression is built; bitwise/shift/division
# results are forced eagerly
LAZY_BINOPS = {"add", "sub", "mul"} | RELOPS
LAZY_UNOPS = {"eqz"}


# ---------------------------------------------------------------------------
# Abstract values
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AbsValue:
    kind: str
    values: frozenset = frozenset()  # FINITE only
    lo: int | None = None  # INTERVAL; None = -inf
    hi: int | None = None  # INTERVAL; None = +inf
    expr: SymExpr | None = field(default=None, compare=False)

    # -- constructors -----------------------------------------------------

    @staticmethod
    def finite(values, expr: SymExpr | None = None) -> "AbsValue":
        vs = frozenset(values)
        assert vs, "finite sets are nonempty"
        return AbsValue(FINITE, values=vs, expr=expr)

    @staticmethod
    def const(v: int, expr: SymExpr | None = None) -> "AbsValue":
        if expr is None:
            expr = literal(v)
        return AbsValue(FINITE, values=frozenset([v]), expr=expr)

    @staticmethod
    def interval(lo: int | None, hi: int | None, expr: SymExpr | None = None) -> "AbsValue":
        if lo is not None and hi is not None:
            assert lo <= hi
        return AbsValue(INTERVAL, lo=lo, hi=hi, expr=expr)

    @staticmethod
    def top(expr: SymExpr | None = None) -> "AbsValue":
        return AbsValue(TOP_KIND, expr=expr)

    def with_expr(self, expr: SymExpr | None) -> "AbsValue":
        return replace(self, expr=expr)

    # -- queries ----------------------------------------------------------

    @property
    def is_top(self) -> bool:
        return self.kind == TOP_KIND

    def bounds(self) -> tuple[int | None, int | None]:
        """Concretization bounds over i32 (finite unless infinite interval)."""
        if self.kind == FINITE:
            return min(self.values), max(self.values)
        if self.kind == INTERVAL:
            return self.lo, self.hi
        return None, None

    def concrete_bounds(self) -> tuple[int, int]:
        lo, hi = self.bounds()
        return I32_MIN if lo is None else lo, I32_MAX if hi is None else hi

    def contains(self, v: int) -> bool:
        if self.kind == FINITE:
            return v in self.values
        lo, hi = self.concrete_bounds()
        return lo <= v <= hi

    def is_singleton(self) -> bool:
        return self.kind == FINITE and len(self.values) == 1

    def gamma(self):
        """Enumerate the concretization; only legal for finite-size values."""
        if self.kind == FINITE:
            return sorted(self.values)
        lo, hi = self.concrete_bounds()
        return range(lo, hi + 1)

    def gamma_size(self) -> int:
        if self.kind == FINITE:
            return len(self.values)
        lo, hi = self.concrete_bounds()
        return hi - lo + 1

    def must_be_zero(self) -> bool:
        return self.kind == FINITE and self.values == frozenset([0])

    def cannot_be_zero(self) -> bool:
        return not self.contains(0)

    # -- order ------------------------------------------------------------

    def le(self, other: "AbsValue") -> bool:
        if other.is_top:
            return True
        if self.is_top:
            return False
        if other.kind == FINITE:
            if self.kind != FINITE:
                return False
            return self.values <= other.values
        olo, ohi = other.concrete_bounds()
        slo, shi = self.concrete_bounds()
        return olo <= slo and shi <= ohi


TOP = AbsValue.top()


def _norm(vs: frozenset, k: int, expr: SymExpr | None = None) -> AbsValue:
    """Finite set if within the cardinality bound, else its interval hull."""
    if len(vs) <= k:
        return AbsValue(FINITE, values=vs, expr=expr)
    return AbsValue.interval(min(vs), max(vs), expr=expr)


def join(a: AbsValue, b: AbsValue, k: int = DEFAULT_K) -> AbsValue:
    """Least upper bound in the layered lattice."""
    expr = a.expr if a.expr == b.expr else None
    if a.is_top or b.is_top:
        return AbsValue.top(expr)
    if a.kind == FINITE and b.kind == FINITE:
        return _norm(a.values | b.values, k, expr)
    alo, ahi = a.bounds()
    blo, bhi = b.bounds()
    lo = None if alo is None or blo is None else min(alo, blo)
    hi = None if ahi is None or bhi is None else max(ahi, bhi)
    return AbsValue.interval(lo, hi, expr)


def widen(old: AbsValue, new: AbsValue, k: int = DEFAULT_K) -> AbsValue:
    """Widening: an upper bound of join(old, new) that stabilizes chains.

    Finite sets widen as join while the union stays within K; past that the
    value is promoted to an interval and any unstable bound goes to infinity.
    """
    j = join(old, new, k)
    if j.kind == FINITE:
        return j
    if j.is_top or old.is_top:
        return AbsValue.top(j.expr)
    olo, ohi = old.bounds()
    jlo, jhi = j.bounds()
    lo = olo if (olo is not None and jlo is not None and jlo >= olo) else None
    hi = ohi if (ohi is not None and jhi is not None and jhi <= ohi) else None
    return AbsValue.interval(lo, hi, j.expr)


# ---------------------------------------------------------------------------
# Abstract arithmetic
# ---------------------------------------------------------------------------

_POINTWISE_BUDGET = 1024  # max |a| * |b| enumerated exactly


def _interval_or_top(lo: int, hi: int, expr=None) -> AbsValue:
    # a finite bound escaping i32 range means wraparound is possible
    if lo < I32_MIN or hi > I32_MAX:
        return AbsValue.top(expr)
    return AbsValue.interval(lo, hi, expr)


def abs_binop(kind: str, a: AbsValue, b: AbsValue, k: int = DEFAULT_K) -> AbsValue | None:
    """Abstract transfer of a binary operator. None means no successor
    state (every concrete pair traps, e.g. division by a definite zero)."""
    if a.kind == FINITE and b.kind == FINITE and \
            len(a.values) * len(b.values) <= _POINTWISE_BUDGET:
        fn = BINOP_FNS[kind]
        out = set()
        for x in a.values:
            for y in b.values:
                try:
                    out.add(fn(x, y))
                except Trap:
                    continue  # trap path has no successor
        if not out:
            return None
        return _norm(frozenset(out), k)
    if kind in RELOPS:
        return _abs_relop(kind, a, b)
    # bound arithmetic is done on the clamped i32 bounds: an "infinite"
    # bound concretizes to the i32 extreme, and crossing an extreme wraps
    # to the other side, so any escape must go to Top
    if kind in ("add", "sub"):
        alo, ahi = a.concrete_bounds()
        blo, bhi = b.concrete_bounds()
        if kind == "sub":
            blo, bhi = -bhi, -blo
        return _interval_or_top(alo + blo, ahi + bhi)
    if kind == "mul":
        alo, ahi = a.concrete_bounds()
        blo, bhi = b.concrete_bounds()
        prods = [alo * blo, alo * bhi, ahi * blo, ahi * bhi]
        return _interval_or_top(min(prods), max(prods))
    if kind in ("div_s", "div_u", "rem_s", "rem_u") and b.must_be_zero():
        return None
    return TOP


def _abs_relop(kind: str, a: AbsValue, b: AbsValue) -> AbsValue:
    """Comparisons decided from disjoint signed ranges where possible."""
    bool_both = AbsValue.finite({0, 1})
    if kind in ("lt_u", "gt_u", "le_u", "ge_u"):
        return bool_both
    alo, ahi = a.concrete_bounds()
    blo, bhi = b.concrete_bounds()
    def yes():
        return AbsValue.const(1)
    def no():
        return AbsValue.const(0)
    if kind == "eq":
        if ahi < blo or bhi < alo:
            return no()
    elif kind == "ne":
        if ahi < blo or bhi < alo:
            return yes()
    elif kind == "lt_s":
        if ahi < blo:
            return yes()
        if alo >= bhi:
            return no()
    elif kind == "le_s":
        if ahi <= blo:
            return yes()
        if alo > bhi:
            return no()
    elif kind == "gt_s":
        if alo > bhi:
            return yes()
        if ahi <= blo:
            return no()
    elif kind == "ge_s":
        if alo >= bhi:
            return yes()
        if ahi < blo:
            return no()
    return bool_both


def abs_unop(kind: str, a: AbsValue, k: int = DEFAULT_K) -> AbsValue:
    if a.kind == FINITE:
        fn = UNOP_FNS[kind]
        return _norm(frozenset(fn(x) for x in a.values), k)
    if kind == "eqz":
        if a.cannot_be_zero():
            return AbsValue.const(0)
        return AbsValue.finite({0, 1})
    return AbsValue.interval(0, 32)


# ---------------------------------------------------------------------------
# Abstract memory
# ---------------------------------------------------------------------------

class ShapeMismatch(Exception):
    """Joined memories disagree on stack shape: an analyzer bug."""


@dataclass(frozen=True)
class AbsMemory:
    globals: tuple = ()
    stack: tuple = ()
    locals: tuple = ()
    bottom: bool = False

    # -- stack ops --------------------------------------------------------

    def push(self, v: AbsValue) -> "AbsMemory":
        return replace(self, stack=self.stack + (v,))

    def pop(self) -> tuple["AbsMemory", AbsValue]:
        return replace(self, stack=self.stack[:-1]), self.stack[-1]

    def pop_n(self, n: int) -> tuple["AbsMemory", tuple]:
        if n == 0:
            return self, ()
        return replace(self, stack=self.stack[:-n]), self.stack[-n:]

    def truncate(self, height: int, keep: int = 0) -> "AbsMemory":
        """The branch transformation: unwind to `height` keeping the top
        `keep` values."""
        kept = self.stack[len(self.stack) - keep:] if keep else ()
        return replace(self, stack=self.stack[:height] + kept)

    # -- variables --------------------------------------------------------

    def set_local(self, i: int, v: AbsValue) -> "AbsMemory":
        loc = list(self.locals)
        loc[i] = v
        return replace(self, locals=tuple(loc))

    def set_global(self, i: int, v: AbsValue) -> "AbsMemory":
        g = list(self.globals)
        g[i] = v
        return replace(self, globals=tuple(g))


BOTTOM_MEM = AbsMemory(bottom=True)


def _pointwise(f, a: AbsMemory, b: AbsMemory, k: int) -> AbsMemory:
    if a.bottom:
        return b
    if b.bottom:
        return a
    if len(a.stack) != len(b.stack) or len(a.locals) != len(b.locals) \
            or len(a.globals) != len(b.globals):
        raise ShapeMismatch(
            f"stack {len(a.stack)}/{len(b.stack)} locals {len(a.locals)}/{len(b.locals)}")
    return AbsMemory(
        globals=tuple(f(x, y, k) for x, y in zip(a.globals, b.globals)),
        stack=tuple(f(x, y, k) for x, y in zip(a.stack, b.stack)),
        locals=tuple(f(x, y, k) for x, y in zip(a.locals, b.locals)),
    )


def join_mem(a: AbsMemory, b: AbsMemory, k: int = DEFAULT_K) -> AbsMemory:
    return _pointwise(join, a, b, k)


def widen_mem(old: AbsMemory, new: AbsMemory, k: int = DEFAULT_K) -> AbsMemory:
    return _pointwise(widen, old, new, k)


def le_mem(a: AbsMemory, b: AbsMemory) -> bool:
    if a.bottom:
        return True
    if b.bottom:
        return False
    return all(x.le(y) for x, y in zip(a.globals + a.stack + a.locals,
                                       b.globals + b.stack + b.locals))


# ---------------------------------------------------------------------------
# Branch-condition filtering
# ---------------------------------------------------------------------------

_NEGATE = {"eq": "ne", "ne": "eq", "lt_s": "ge_s", "ge_s": "lt_s",
           "gt_s": "le_s", "le_s": "gt_s"}


def _constrain(v: AbsValue, op: str, c: int, k: int) -> AbsValue | None:
    """Refine v under `v <op> c`; None means no concrete value survives."""
    if v.kind == FINITE:
        fn = BINOP_FNS[op]
        vs = frozenset(x for x in v.values if fn(x, c))
        return AbsValue.finite(vs, v.expr) if vs else None
    lo, hi = v.concrete_bounds()
    if op == "eq":
        return AbsValue.const(c, v.expr) if lo <= c <= hi else None
    if op == "ne":
        if lo == hi == c:
            return None
        if lo == c:
            lo += 1
        if hi == c:
            hi -= 1
        # interior holes are not representable; keep the hull
    elif op == "lt_s":
        hi = min(hi, c - 1)
    elif op == "le_s":
        hi = min(hi, c)
    elif op == "gt_s":
        lo = max(lo, c + 1)
    elif op == "ge_s":
        lo = max(lo, c)
    else:
        return v  # unsigned comparisons: identity (sound)
    if lo > hi:
        return None
    if v.is_top and (lo, hi) == (I32_MIN, I32_MAX):
        return v
    return AbsValue.interval(lo, hi, v.expr)


def _var_of(e: SymExpr):
    if e.op in ("local", "global"):
        return (e.op, e.args[0])
    return None


def _read_var(m: AbsMemory, var) -> AbsValue:
    kind, i = var
    return m.locals[i] if kind == "local" else m.globals[i]


def _write_var(m: AbsMemory, var, v: AbsValue) -> AbsMemory:
    kind, i = var
    return m.set_local(i, v) if kind == "local" else m.set_global(i, v)


def filter_mem(expr: SymExpr | None, positive: bool, m: AbsMemory,
               k: int = DEFAULT_K) -> AbsMemory:
    """Refine m under the truth (or falsity) of a branch condition.

    Supported patterns: a bare local/global read, eqz of a supported
    pattern, and signed comparisons / (in)equality between a local/global
    read and a constant. Anything else returns m unchanged, which is the
    sound identity fallback.
    """
    if m.bottom or expr is None:
        return m
    # bare variable: nonzero / zero
    var = _var_of(expr)
    if var is not None:
        op = "ne" if positive else "eq"
        refined = _constrain(_read_var(m, var), op, 0, k)
        return _write_var(m, var, refined) if refined is not None else BOTTOM_MEM
    if expr.op == "eqz":
        return filter_mem(expr.args[0], not positive, m, k)
    if expr.op == "lit":
        truth = expr.args[0] != 0
        return m if truth == positive else BOTTOM_MEM
    if expr.op in RELOPS and len(expr.args) == 2:
        lhs, rhs = expr.args
        op = expr.op
        var = _var_of(lhs)
        const = rhs.op == "lit"
        if var is None and _var_of(rhs) is not None and lhs.op == "lit":
            # constant on the left: flip the comparison
            var = _var_of(rhs)
            lhs, rhs = rhs, lhs
            op = {"lt_s": "gt_s", "gt_s": "lt_s", "le_s": "ge_s",
                  "ge_s": "le_s"}.get(op, op)
            const = True
        if var is None or not const:
            return m
        if not positive:
            if op not in _NEGATE:
                return m
            op = _NEGATE[op]
        if op not in _NEGATE:  # unsigned relop: unsupported
            return m
        refined = _constrain(_read_var(m, var), op, rhs.args[0], k)
        return _write_var(m, var, refined) if refined is not None else BOTTOM_MEM
    return m


def expr_mentions(e: SymExpr | None, kind: str, idx: int) -> bool:
    if e is None:
        return False
    if e.op == kind and e.args == (idx,):
        return True
    if e.op in ("local", "global", "lit"):
        return False
    return any(expr_mentions(a, kind, idx) for a in e.args)


def kill_var(m: AbsMemory, kind: str, idx: int) -> AbsMemory:
    """Strip expressions that mention a just-overwritten variable; their
    recorded relation to it no longer holds."""
    def scrub(vals):
        return tuple(v.with_expr(None) if expr_mentions(v.expr, kind, idx) else v
                     for v in vals)
    return replace(m, globals=scrub(m.globals), stack=scrub(m.stack),
                   locals=scrub(m.locals))


# ---------------------------------------------------------------------------
# Indirect-call index concretization
# ---------------------------------------------------------------------------

class TooWide:
    """Distinguished signal: the index value cannot be enumerated."""
    def __repr__(self):
        return "TooWide"


TOO_WIDE = TooWide()


def concretize_indices(v: AbsValue, table) -> frozenset | TooWide:
    """Resolve an abstract table index to the set of referenced functions.

    Out-of-range and empty slots are dropped (those paths trap). Top cannot
    be enumerated and yields TooWide.
    """
    if v.is_top:
        return TOO_WIDE
    if v.kind == FINITE:
        slots = [x for x in v.values if 0 <= x < len(table)]
    else:
        lo, hi = v.concrete_bounds()
        lo = max(lo, 0)
        hi = min(hi, len(table) - 1)
        slots = range(lo, hi + 1) if lo <= hi else []
    out = set()
    for s in slots:
        entry = table[s]
        if entry is not None:
            out.add(entry)
    return frozenset(out)


# ---------------------------------------------------------------------------
# Three-valued condition truth
# ---------------------------------------------------------------------------

MUST_TRUE = "must-true"
MUST_FALSE = "must-false"
UNKNOWN = "unknown"


def truth(v: AbsValue) -> str:
    if v.cannot_be_zero():
        return MUST_TRUE
    if v.must_be_zero():
        return MUST_FALSE
    return UNKNOWN
