"""Concrete interpreter: the executable reference semantics and soundness oracle.

Runs a validated module as an explicit state machine (worklist of control
items rather than host-language recursion) so that fuel accounting and
call-edge capture are uniform. Records every executed call/call_indirect
edge with its site id.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .frontend import Instr, ValidatedModule

I32_MASK = 0xFFFFFFFF
DEFAULT_FUEL = 1_000_000


class Trap(Exception):
    def __init__(self, kind: str, message: str = ""):
        self.kind = kind
        super().__init__(f"trap: {kind}" + (f" ({message})" if message else ""))


def wrap32(v: int) -> int:
    v &= I32_MASK
    return v - (1 << 32) if v >= (1 << 31) else v


def _to_u32(v: int) -> int:
    return v & I32_MASK


def _div_s(a: int, b: int) -> int:
    if b == 0:
        raise Trap("div-by-zero")
    if a == -(1 << 31) and b == -1:
        raise Trap("int-overflow")
    q = abs(a) // abs(b)
    return -q if (a < 0) != (b < 0) else q


def _rem_s(a: int, b: int) -> int:
    if b == 0:
        raise Trap("div-by-zero")
    r = abs(a) % abs(b)
    return -r if a < 0 else r


def _div_u(a: int, b: int) -> int:
    if b == 0:
        raise Trap("div-by-zero")
    return wrap32(_to_u32(a) // _to_u32(b))


def _rem_u(a: int, b: int) -> int:
    if b == 0:
        raise Trap("div-by-zero")
    return wrap32(_to_u32(a) % _to_u32(b))


UNOP_FNS = {
    "eqz": lambda v: 1 if v == 0 else 0,
    "clz": lambda v: 32 if v == 0 else 32 - _to_u32(v).bit_length(),
    "ctz": lambda v: 32 if v == 0 else (_to_u32(v) & -_to_u32(v)).bit_length() - 1,
    "popcnt": lambda v: bin(_to_u32(v)).count("1"),
}

BINOP_FNS = {
    "add": lambda a, b: wrap32(a + b),
    "sub": lambda a, b: wrap32(a - b),
    "mul": lambda a, b: wrap32(a * b),
    "div_s": _div_s,
    "div_u": _div_u,
    "rem_s": _rem_s,
    "rem_u": _rem_u,
    "and": lambda a, b: wrap32(_to_u32(a) & _to_u32(b)),
    "or": lambda a, b: wrap32(_to_u32(a) | _to_u32(b)),
    "xor": lambda a, b: wrap32(_to_u32(a) ^ _to_u32(b)),
    "shl": lambda a, b: wrap32(_to_u32(a) << (b & 31)),
    "shr_s": lambda a, b: a >> (b & 31),
    "shr_u": lambda a, b: wrap32(_to_u32(a) >> (b & 31)),
    "eq": lambda a, b: 1 if a == b else 0,
    "ne": lambda a, b: 1 if a != b else 0,
    "lt_s": lambda a, b: 1 if a < b else 0,
    "lt_u": lambda a, b: 1 if _to_u32(a) < _to_u32(b) else 0,
    "gt_s": lambda a, b: 1 if a > b else 0,
    "gt_u": lambda a, b: 1 if _to_u32(a) > _to_u32(b) else 0,
    "le_s": lambda a, b: 1 if a <= b else 0,
    "le_u": lambda a, b: 1 if _to_u32(a) <= _to_u32(b) else 0,
    "ge_s": lambda a, b: 1 if a >= b else 0,
    "ge_u": lambda a, b: 1 if _to_u32(a) >= _to_u32(b) else 0,
}


@dataclass
class ConcreteTrace:
    edges: set = field(default_factory=set)  # {(caller, callee, site)}
    log: list = field(default_factory=list)  # ordered [(caller, callee, site)]
    steps: int = 0
    result: list | None = None  # final stack values on normal termination
    trap: str | None = None
    fuel_exhausted: bool = False

    @property
    def edge_pairs(self) -> set:
        return {(c, t) for c, t, _ in self.edges}


class FuelExhausted(Exception):
    pass


@dataclass
class _Label:
    kind: str  # "block" | "loop"
    arity: int
    height: int  # value-stack height at entry
    ctl: int  # control-stack height including the endlabel marker
    body: list | None = None  # loop body for re-entry


@dataclass
class _Frame:
    func: int
    locals: list
    results: int
    height: int  # value-stack height below the frame (args popped)
    label_base: int
    ctl: int  # control-stack height including the endframe marker


class Machine:
    """One concrete run; owns all of its state."""

    def __init__(self, vm: ValidatedModule, fuel: int = DEFAULT_FUEL,
                 import_stub: list[int] | None = None):
        self.vm = vm
        self.m = vm.module
        self.fuel = fuel
        self.globals = [g.init for g in self.m.globals]
        self.table = list(self.m.table)
        self.stack: list[int] = []
        self.labels: list[_Label] = []
        self.frames: list[_Frame] = []
        self.control: list = []  # items: ("i", Instr) | ("endlabel",) | ("endframe",)
        self.trace = ConcreteTrace()
        self.import_stub = list(import_stub) if import_stub else [0]
        self._import_calls = 0

    # -- driving ----------------------------------------------------------

    def run(self, entry: int, args: list[int]) -> ConcreteTrace:
        ft = self.m.func_type(entry)
        if len(args) != ft.params:
            raise ValueError(f"entry expects {ft.params} argument(s), got {len(args)}")
        self.stack.extend(wrap32(a) for a in args)
        try:
            self._call(entry, caller=None, site=-1)
            while self.control:
                item = self.control.pop()
                tag = item[0]
                if tag == "i":
                    self._step(item[1])
                elif tag == "endlabel":
                    self.labels.pop()
                else:  # endframe
                    self._pop_frame()
            self.trace.result = list(self.stack)
        except Trap as t:
            self.trace.trap = t.kind
        except FuelExhausted:
            self.trace.fuel_exhausted = True
        return self.trace

    # -- helpers ----------------------------------------------------------

    def _push_seq(self, body: list[Instr]):
        for i in reversed(body):
            self.control.append(("i", i))

    def _pop_frame(self):
        fr = self.frames.pop()
        vals = self.stack[len(self.stack) - fr.results:] if fr.results else []
        del self.stack[fr.height:]
        self.stack.extend(vals)
        del self.labels[fr.label_base:]

    def _call(self, callee: int, caller: int | None, site: int):
        if caller is not None:
            edge = (caller, callee, site)
            self.trace.edges.add(edge)
            self.trace.log.append(edge)
        ft = self.m.func_type(callee)
        args = self.stack[len(self.stack) - ft.params:] if ft.params else []
        if ft.params:
            del self.stack[len(self.stack) - ft.params:]
        if self.m.is_import(callee):
            # stub: imports return the configured constant sequence, cycling
            for _ in range(ft.results):
                v = self.import_stub[self._import_calls % len(self.import_stub)]
                self.stack.append(wrap32(v))
            self._import_calls += 1
            return
        fd = self.m.func_def(callee)
        self.control.append(("endframe",))
        self.frames.append(_Frame(
            func=callee,
            locals=args + [0] * fd.locals,
            results=ft.results,
            height=len(self.stack),
            label_base=len(self.labels),
            ctl=len(self.control),
        ))
        self._push_seq(fd.body)

    def _enter_label(self, kind: str, arity: int, body: list[Instr], loop: bool):
        self.control.append(("endlabel",))
        self.labels.append(_Label(
            kind=kind, arity=arity, height=len(self.stack),
            ctl=len(self.control), body=body if loop else None))
        self._push_seq(body)

    def _branch(self, depth: int):
        idx = len(self.labels) - 1 - depth
        lab = self.labels[idx]
        if lab.kind == "loop":
            del self.stack[lab.height:]
            del self.labels[idx + 1:]
            del self.control[lab.ctl:]  # keep the loop's endlabel marker
            self._push_seq(lab.body)
        else:
            vals = self.stack[len(self.stack) - lab.arity:] if lab.arity else []
            del self.stack[lab.height:]
            self.stack.extend(vals)
            del self.labels[idx:]
            del self.control[lab.ctl - 1:]  # drop the endlabel marker too

    # -- dispatch ---------------------------------------------------------

    def _step(self, i: Instr):
        if self.fuel <= 0:
            raise FuelExhausted()
        self.fuel -= 1
        self.trace.steps += 1
        op = i.op
        st = self.stack
        if op == "const":
            st.append(i.arg)
        elif op == "unop":
            st[-1] = UNOP_FNS[i.kind](st[-1])
        elif op == "binop":
            right = st.pop()
            left = st.pop()
            st.append(BINOP_FNS[i.kind](left, right))
        elif op == "local.get":
            st.append(self.frames[-1].locals[i.arg])
        elif op == "local.set":
            self.frames[-1].locals[i.arg] = st.pop()
        elif op == "local.tee":
            self.frames[-1].locals[i.arg] = st[-1]
        elif op == "global.get":
            st.append(self.globals[i.arg])
        elif op == "global.set":
            self.globals[i.arg] = st.pop()
        elif op == "block":
            self._enter_label("block", i.result, i.body, loop=False)
        elif op == "loop":
            self._enter_label("loop", i.result, i.body, loop=True)
        elif op == "if":
            cond = st.pop()
            body = i.body if cond != 0 else i.orelse
            self._enter_label("block", i.result, body, loop=False)
        elif op == "br":
            self._branch(i.arg)
        elif op == "br_if":
            if st.pop() != 0:
                self._branch(i.arg)
        elif op == "call":
            self._call(i.arg, caller=self.frames[-1].func, site=i.site)
        elif op == "call_indirect":
            idx = _to_u32(st.pop())
            if idx >= len(self.table):
                raise Trap("table-out-of-bounds", f"index {idx}")
            target = self.table[idx]
            if target is None:
                raise Trap("undefined-table-entry", f"slot {idx}")
            if self.m.func_type(target) != self.m.types[i.arg]:
                raise Trap("type-mismatch", f"slot {idx}")
            self._call(target, caller=self.frames[-1].func, site=i.site)
        elif op == "return":
            fr = self.frames[-1]
            del self.control[fr.ctl - 1:]  # drop up to and incl. endframe marker
            self._pop_frame()
        elif op == "drop":
            st.pop()
        elif op == "nop":
            pass
        else:  # pragma: no cover
            raise AssertionError(f"unhandled op {op}")


def run(vm: ValidatedModule, entry: int, args: list[int],
        fuel: int = DEFAULT_FUEL, import_stub: list[int] | None = None) -> ConcreteTrace:
    """Execute `entry` on a fresh instance; returns the trace."""
    return Machine(vm, fuel=fuel, import_stub=import_stub).run(entry, args)
